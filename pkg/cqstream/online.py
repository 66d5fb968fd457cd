"""Sliding-window adapter: plan over the visible horizon, apply only step one."""

import logging
import math
from dataclasses import dataclass
from typing import Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator

from cqstream.config import DEFAULT_BINS
from cqstream.dp_optimizer import BufferGrid, PlanRequest, PlanResult, plan
from cqstream.errors import PlanInfeasibleError, PlanRequestError
from cqstream.utility import Objective

logger = logging.getLogger(__name__)


class OnlineConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    b_low: float = Field(10.0, ge=0)
    b_high: float = Field(50.0, ge=0)
    b_ref: float = Field(30.0, ge=0)
    tau: float = Field(2.0, gt=0)
    bins: int = Field(DEFAULT_BINS, ge=1)

    @model_validator(mode="after")
    def _check_order(self):
        if not (self.b_low <= self.b_ref <= self.b_high):
            raise ValueError(
                f"need b_low <= b_ref <= b_high, got {self.b_low}, {self.b_ref}, {self.b_high}")
        return self

    @property
    def delta_b(self):
        return (self.b_high - self.b_low) / self.bins


@dataclass
class OnlineDecision:
    bitrate: float
    level: int
    b_offset: float
    planned_window: Optional[PlanResult]
    # True when the planner found no feasible path and the lowest level was taken
    fallback: bool = False


def widened_grid(config, b_prev):
    """Nominal bounds stretched to include b_prev, keeping the bin width."""
    b_low = min(config.b_low, b_prev)
    b_high = max(config.b_high, b_prev)
    delta_b = config.delta_b
    if delta_b == 0 or (b_low, b_high) == (config.b_low, config.b_high):
        bins = config.bins
    else:
        bins = max(1, math.ceil((b_high - b_low) / delta_b))
    return BufferGrid(b_low=b_low, b_high=b_high, bins=bins)


def online_step(config, bandwidth_w, b_prev, horizon, window, objective, prev_level=None):
    """One adaptation step.

    Targets B_final = b_ref over the widened bounds and returns the first
    planned level. If no path fits even the widened bounds, the lowest
    bitrate is returned with ``fallback`` set.
    """
    window = tuple(window)
    if horizon != len(window):
        raise PlanRequestError(f"horizon {horizon} does not match window length {len(window)}")
    b_prev = max(0.0, float(b_prev))
    grid = widened_grid(config, b_prev)
    request = PlanRequest(
        b_init=b_prev,
        b_final=config.b_ref,
        grid=grid,
        tau=config.tau,
        bandwidth_w=bandwidth_w,
        window=window,
        objective=objective or Objective(),
        prev_level=prev_level,
    )
    try:
        result = plan(request)
    except PlanInfeasibleError as e:
        first = window[0]
        logger.warning("planner infeasible (%s); falling back to lowest level", e)
        return OnlineDecision(bitrate=first[0].bitrate, level=0, b_offset=0.0,
                              planned_window=None, fallback=True)

    return OnlineDecision(
        bitrate=result.bitrates[0],
        level=result.levels[0],
        b_offset=result.b_offset,
        planned_window=result,
    )


def horizon_for(step_index, total_segments, max_horizon):
    """Visible horizon at 1-based ``step_index``: clamped at the end of the video."""
    remaining = total_segments - step_index + 1
    return max(1, min(max_horizon, remaining)) if remaining >= 1 else 0
