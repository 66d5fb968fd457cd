"""
Probe-and-adapt client control loop.

Three controller kinds share the per-step skeleton:
- panda-cq: probe + EWMA bandwidth estimate, quality-aware window planning
- panda-baseline: probe + EWMA, highest bitrate under the estimate
- rate-based: last measured throughput, highest bitrate under it
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

from pydantic import BaseModel, ConfigDict, Field

from cqstream.config import DEFAULT_BINS, MBPS, read_key_values
from cqstream.errors import ManifestParseError
from cqstream.online import OnlineConfig, OnlineDecision, horizon_for, online_step
from cqstream.utility import Objective

logger = logging.getLogger(__name__)

CONTROLLER_KINDS = ("panda-cq", "panda-baseline", "rate-based")

# Measured throughput carries float error from subtracting wall-clock times;
# a level whose bitrate equals the budget still fits.
RATE_TOLERANCE = 1e-9

# Key-value file names -> ControllerConfig fields
TABLE_NAMES = {
    "kappa": "kappa",
    "w": "w",
    "a": "a",
    "beta": "beta",
    "tau": "tau",
    "B0": "b_ref",
    "BL": "b_low",
    "BH": "b_high",
    "H": "max_horizon",
    "epsilon": "epsilon",
    "K": "bins",
}


class ControllerConfig(BaseModel):
    """Client parameters. Rates are bits/second; ``w`` defaults to 0.3 Mbps."""

    model_config = ConfigDict(frozen=True)

    kappa: float = Field(0.28, gt=0)
    w: float = Field(0.3 * MBPS, gt=0)
    a: float = Field(0.2, gt=0)
    beta: float = Field(0.2, gt=0)
    tau: float = Field(2.0, gt=0)
    b_ref: float = Field(30.0, ge=0)
    b_low: float = Field(10.0, ge=0)
    b_high: float = Field(50.0, ge=0)
    max_horizon: int = Field(30, ge=1)
    epsilon: float = Field(0.0, ge=0, lt=1)
    bins: int = Field(DEFAULT_BINS, ge=1)

    @classmethod
    def panda_baseline(cls, **overrides):
        return cls(**{"b_ref": 20.0, "epsilon": 0.0, **overrides})

    def with_overrides(self, **updates):
        return type(self)(**{**self.model_dump(), **updates})

    def online(self):
        return OnlineConfig(b_low=self.b_low, b_high=self.b_high, b_ref=self.b_ref,
                            tau=self.tau, bins=self.bins)


def table_overrides(pairs):
    """Translate key-value names (w in Mbps) into ControllerConfig field updates."""
    updates = {}
    for name, value in pairs:
        if name not in TABLE_NAMES:
            raise KeyError(name)
        value = float(value)
        if name == "w":
            value *= MBPS
        if name in ("H", "K"):
            if value != int(value):
                raise ValueError(f"{name} must be an integer, got {value}")
            value = int(value)
        updates[TABLE_NAMES[name]] = value
    return updates


def load_controller_config(path, base=None):
    """Read a key-value config file on top of ``base`` (defaults otherwise)."""
    base = base or ControllerConfig()
    pairs = []
    for line_no, key, value in read_key_values(path):
        if key not in TABLE_NAMES:
            raise ManifestParseError(f"unknown parameter {key!r}", path=path, line=line_no)
        try:
            float(value)
        except ValueError:
            raise ManifestParseError(f"{key} is not a number: {value!r}", path=path, line=line_no)
        pairs.append((key, value))
    return base.with_overrides(**table_overrides(pairs))


@dataclass
class ProbeState:
    x_hat: Optional[float] = None
    y_hat: Optional[float] = None
    t_prev: Optional[float] = None
    x_tilde_prev: Optional[float] = None

    @property
    def seeded(self):
        return self.x_hat is not None


@dataclass
class StepDecision:
    bitrate: float
    level: int
    target_interval: float
    x_hat: float = math.nan
    y_hat: float = math.nan
    b_offset: float = 0.0
    horizon: int = 1
    fallback: bool = False
    online: Optional[OnlineDecision] = field(default=None, repr=False)


def probe_update(state, config):
    """Additive-increase / proportional-decrease bandwidth share estimate."""
    gain = min(1.0, state.t_prev * config.kappa)
    overshoot = max(0.0, state.x_hat - state.x_tilde_prev + config.w)
    return state.x_hat + gain * (config.w - overshoot)


def ewma_update(state, x_hat_new, config):
    gain = min(1.0, state.t_prev * config.a)
    return state.y_hat + gain * (x_hat_new - state.y_hat)


def select_cq(state, b_prev, window, objective, config, prev_level=None):
    return online_step(config.online(), state.y_hat, b_prev, len(window), window,
                       objective, prev_level=prev_level)


def target_interval(bitrate, y_hat, b_prev, b_offset, horizon, config):
    t_hat = (bitrate * config.tau / y_hat
             + config.beta * (b_prev - config.b_ref)
             + max(b_offset, 0.0) / horizon)
    return max(0.0, t_hat)


def select_rate_based(y_hat, step_levels, config, b_prev=None):
    """Highest level whose bitrate fits under (1 - epsilon) * y_hat, else the lowest."""
    budget = (1.0 - config.epsilon) * y_hat * (1.0 + RATE_TOLERANCE)
    level = 0
    for l, lv in enumerate(step_levels):
        if lv.bitrate <= budget:
            level = l
    bitrate = step_levels[level].bitrate
    b_prev = config.b_ref if b_prev is None else b_prev
    return StepDecision(
        bitrate=bitrate,
        level=level,
        target_interval=target_interval(bitrate, y_hat, b_prev, 0.0, 1, config),
        y_hat=y_hat,
    )


class SessionController:
    """Per-session controller state and the per-step decision loop.

    ``decide`` is called when a request is issued; ``on_download`` when the
    segment arrives; ``on_step_end`` once the next request time is known.
    """

    def __init__(self, kind, ladder, config, objective=None):
        if kind not in CONTROLLER_KINDS:
            raise ValueError(f"unknown controller {kind!r}, expected one of {CONTROLLER_KINDS}")
        self.kind = kind
        if kind == "panda-cq":
            # BL <= B0 <= BH is checked here
            config.online()
        self.ladder = ladder
        self.config = config
        self.objective = objective or Objective()
        self.state = ProbeState()
        self.prev_level = None

    def decide(self, segment, b_prev):
        levels = self.ladder.levels_at(segment)
        if not self.state.seeded:
            # Cold start: lowest level, fetch immediately
            decision = StepDecision(bitrate=levels[0].bitrate, level=0, target_interval=0.0)
        elif self.kind == "rate-based":
            y_hat = self.state.x_tilde_prev
            decision = select_rate_based(y_hat, levels, self.config, b_prev)
            decision.x_hat = y_hat
        else:
            x_hat = probe_update(self.state, self.config)
            y_hat = ewma_update(self.state, x_hat, self.config)
            self.state.x_hat, self.state.y_hat = x_hat, y_hat
            if self.kind == "panda-baseline":
                decision = select_rate_based(y_hat, levels, self.config, b_prev)
                decision.x_hat = x_hat
            else:
                decision = self._select_cq(segment, b_prev, x_hat, y_hat)
        self.prev_level = decision.level
        logger.debug("%s segment %d: level %d, y_hat=%.0f, T_hat=%.2f",
                     self.kind, segment, decision.level, decision.y_hat, decision.target_interval)
        return decision

    def _select_cq(self, segment, b_prev, x_hat, y_hat):
        horizon = horizon_for(segment + 1, self.ladder.num_segments, self.config.max_horizon)
        window = self.ladder.window(segment, horizon)
        online = select_cq(self.state, b_prev, window, self.objective, self.config,
                           prev_level=self.prev_level)
        return StepDecision(
            bitrate=online.bitrate,
            level=online.level,
            target_interval=target_interval(online.bitrate, y_hat, b_prev, online.b_offset,
                                            horizon, self.config),
            x_hat=x_hat,
            y_hat=y_hat,
            b_offset=online.b_offset,
            horizon=horizon,
            fallback=online.fallback,
            online=online,
        )

    def on_download(self, bitrate, download_time):
        """Record measured throughput x~ = R * tau / T~."""
        x_tilde = bitrate * self.config.tau / download_time
        self.state.x_tilde_prev = x_tilde
        if not self.state.seeded:
            self.state.x_hat = x_tilde
            self.state.y_hat = x_tilde
        return x_tilde

    def on_step_end(self, step_duration):
        self.state.t_prev = step_duration
