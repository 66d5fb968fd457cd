"""
Fluid-flow playout simulator.

A single bottleneck link with piecewise-constant capacity is split equally
among the sessions that currently have a download in flight. The loop jumps
from event to event (trace breakpoint, download completion, request timer,
buffer running dry) so every quantity is integrated exactly between events.
"""

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Tuple

import pandas as pd
from pydantic import BaseModel, ConfigDict, Field

from cqstream.controller import CONTROLLER_KINDS, ControllerConfig, SessionController
from cqstream.errors import ManifestParseError, SimulationConfigError
from cqstream.metrics import compute_metrics
from cqstream.utility import Objective, check_objective

logger = logging.getLogger(__name__)

# Remaining bits / seconds below this count as zero
EPS = 1e-9
MAX_EVENTS = 10_000_000


# ---------------------------------------------------------
# BANDWIDTH TRACES
# ---------------------------------------------------------

@dataclass(frozen=True)
class BandwidthTrace:
    """Piecewise-constant capacity; each breakpoint holds until the next one.

    ``end_time`` closes the last plateau; None means it lasts forever.
    """

    breakpoints: Tuple[Tuple[float, float], ...] = ()
    end_time: Optional[float] = None

    def __post_init__(self):
        points = tuple((float(t), float(c)) for t, c in self.breakpoints)
        object.__setattr__(self, "breakpoints", points)
        if points:
            if points[0][0] != 0:
                raise SimulationConfigError(f"trace must start at t=0, starts at {points[0][0]}")
            for (t0, _), (t1, _) in zip(points, points[1:]):
                if t1 <= t0:
                    raise SimulationConfigError(f"trace times not increasing at t={t1}")
            for t, c in points:
                if not c > 0:
                    raise SimulationConfigError(f"capacity must be > 0, got {c} at t={t}")
            if self.end_time is not None and self.end_time <= points[-1][0]:
                raise SimulationConfigError(
                    f"end_time {self.end_time} not after last breakpoint {points[-1][0]}")

    @classmethod
    def constant(cls, capacity, end_time=None):
        return cls(breakpoints=((0.0, capacity),), end_time=end_time)

    @classmethod
    def steps(cls, capacities, change_times, end_time=None):
        """``capacities[i]`` holds from ``change_times[i - 1]`` (0 for the first)."""
        if len(change_times) != len(capacities) - 1:
            raise SimulationConfigError(
                f"{len(capacities)} capacities need {len(capacities) - 1} change times")
        starts = [0.0, *change_times]
        return cls(breakpoints=tuple(zip(starts, capacities)), end_time=end_time)

    @property
    def is_empty(self):
        return not self.breakpoints or self.end_time == 0

    def capacity_at(self, t):
        if self.is_empty or (self.end_time is not None and t >= self.end_time):
            return 0.0
        capacity = self.breakpoints[0][1]
        for start, c in self.breakpoints:
            if start <= t:
                capacity = c
            else:
                break
        return capacity

    def next_change(self, t):
        for start, _ in self.breakpoints:
            if start > t:
                return start
        if self.end_time is not None and self.end_time > t:
            return self.end_time
        return math.inf


def load_trace(path):
    """Read ``time_s,capacity_bps`` rows; a final row with capacity 0 marks the end."""
    df = pd.read_csv(path, header=None, comment="#", skip_blank_lines=True, dtype=str)
    if df.shape[1] != 2:
        raise ManifestParseError(f"expected 2 columns, found {df.shape[1]}", path=path)
    if df.iloc[0, 0].strip() == "time_s":
        df = df.iloc[1:]
    values = df.apply(lambda col: pd.to_numeric(col.str.strip(), errors="coerce"))
    bad = values.isna().any(axis=1)
    if bad.any():
        raise ManifestParseError(f"malformed trace row {list(df.loc[bad.idxmax()])}",
                                 path=path, line=int(bad.idxmax()) + 1)

    rows = list(values.itertuples(index=False, name=None))
    end_time = None
    if rows and rows[-1][1] == 0:
        end_time = float(rows[-1][0])
        rows = rows[:-1]
    return BandwidthTrace(breakpoints=tuple(rows), end_time=end_time)


# ---------------------------------------------------------
# SESSIONS AND REPORTS
# ---------------------------------------------------------

class SessionState(str, Enum):
    WAITING = "waiting"
    DOWNLOADING = "downloading"
    OFF_INTERVAL = "off-interval"
    STALLED = "stalled"
    DONE = "done"


class SimOptions(BaseModel):
    model_config = ConfigDict(frozen=True)

    # Playout begins once the buffer first reaches this level; None -> B0 / 2
    startup_buffer: Optional[float] = Field(None, ge=0)


@dataclass
class StepRecord:
    wall_time: float
    segment_index: int
    level: int
    bitrate: float
    quality: float
    buffer_before: float
    buffer_after: float = math.nan
    x_hat: float = math.nan
    y_hat: float = math.nan
    x_tilde: float = math.nan
    t_hat: float = math.nan
    t_download: float = math.nan
    t_actual: float = math.nan
    b_offset: float = 0.0
    horizon: int = 1
    playing: bool = False
    fallback: bool = False


@dataclass
class Stall:
    start_time: float
    duration: float = 0.0


@dataclass
class LinkSample:
    time: float
    duration: float
    capacity: float
    active: int
    allotted: float


@dataclass
class ClientSession:
    """One streaming client; runtime fields are reset at the start of every run."""

    controller: str
    ladder: object
    start_segment: int = 0
    start_time: float = 0.0
    config: Optional[ControllerConfig] = None
    session_id: int = 0

    buffer: float = field(default=0.0, init=False)
    playout_position: float = field(default=0.0, init=False)
    phase: SessionState = field(default=SessionState.WAITING, init=False)
    stalled: bool = field(default=False, init=False)
    started: bool = field(default=False, init=False)

    def __post_init__(self):
        if self.controller not in CONTROLLER_KINDS:
            raise SimulationConfigError(
                f"unknown controller {self.controller!r}, expected one of {CONTROLLER_KINDS}")

    @property
    def state(self):
        if self.stalled and self.phase is not SessionState.DONE:
            return SessionState.STALLED
        return self.phase

    @property
    def playing(self):
        return self.started and not self.stalled and self.phase is not SessionState.DONE

    def reset(self):
        self.buffer = 0.0
        self.playout_position = 0.0
        self.phase = SessionState.WAITING
        self.stalled = False
        self.started = False


@dataclass
class SimReport:
    session_id: int
    controller: str
    tau: float
    convention: str
    steps: List[StepRecord] = field(default_factory=list)
    stalls: List[Stall] = field(default_factory=list)
    summary: Optional[object] = None
    link: List[LinkSample] = field(default_factory=list, repr=False)
    seed: Optional[int] = None
    playout_start: Optional[float] = None
    end_time: float = 0.0
    downloaded: float = 0.0
    played: float = 0.0
    prestart_time: float = 0.0
    stall_time: float = 0.0

    @property
    def empty(self):
        return not self.steps


# ---------------------------------------------------------
# EVENT LOOP
# ---------------------------------------------------------

class _Run:
    """Mutable per-session bookkeeping inside one simulation."""

    def __init__(self, session, config, objective, options, seed):
        self.session = session
        self.config = config
        self.ladder = session.ladder
        self.controller = SessionController(session.controller, session.ladder, config, objective)
        self.startup = (options.startup_buffer if options.startup_buffer is not None
                        else config.b_ref / 2.0)
        self.next_segment = session.start_segment
        self.remaining_bits = 0.0
        self.record = None
        self.request_time = None
        self.next_request = session.start_time
        self.report = SimReport(
            session_id=session.session_id,
            controller=session.controller,
            tau=self.ladder.tau,
            convention=self.ladder.convention.value,
            seed=seed,
        )

    @property
    def active(self):
        return self.session.phase is not SessionState.DONE

    def issue_request(self, now):
        session = self.session
        if self.record is not None:
            step = now - self.request_time
            self.record.t_actual = step
            self.controller.on_step_end(step)

        n = self.next_segment
        decision = self.controller.decide(n, session.buffer)
        level = self.ladder.levels_at(n)[decision.level]
        self.record = StepRecord(
            wall_time=now,
            segment_index=n,
            level=decision.level,
            bitrate=level.bitrate,
            quality=level.quality,
            buffer_before=session.buffer,
            x_hat=decision.x_hat,
            y_hat=decision.y_hat,
            t_hat=decision.target_interval,
            b_offset=decision.b_offset,
            horizon=decision.horizon,
            fallback=decision.fallback,
        )
        self.report.steps.append(self.record)
        self.request_time = now
        self.remaining_bits = level.bitrate * self.ladder.tau
        session.phase = SessionState.DOWNLOADING

    def complete_download(self, now):
        session = self.session
        record = self.record
        tau = self.ladder.tau
        t_download = now - self.request_time
        session.buffer += tau
        self.report.downloaded += tau
        record.t_download = t_download
        record.x_tilde = self.controller.on_download(record.bitrate, t_download)
        record.buffer_after = session.buffer
        self.remaining_bits = 0.0

        if session.stalled:
            self.report.stalls[-1].duration = now - self.report.stalls[-1].start_time
            session.stalled = False
            logger.info("session %d: stall over at t=%.2f", session.session_id, now)

        self.next_segment += 1
        last = self.next_segment >= self.ladder.num_segments
        if not session.started and (session.buffer >= self.startup - EPS or last):
            session.started = True
            self.report.playout_start = now
        record.playing = session.started

        if last:
            record.t_actual = max(record.t_hat, t_download)
            session.phase = SessionState.DONE
            self.report.end_time = now
            return

        self.next_request = max(self.request_time + record.t_hat, now)
        if self.next_request <= now + EPS:
            self.issue_request(now)
        else:
            session.phase = SessionState.OFF_INTERVAL

    def buffer_ran_dry(self, now):
        session = self.session
        session.buffer = 0.0
        session.stalled = True
        self.report.stalls.append(Stall(start_time=now))
        logger.info("session %d: stall at t=%.2f", session.session_id, now)
        if session.phase is SessionState.OFF_INTERVAL:
            self.issue_request(now)

    def advance(self, dt, rate):
        session = self.session
        report = self.report
        if session.phase is SessionState.DOWNLOADING:
            self.remaining_bits -= rate * dt
        if session.phase in (SessionState.WAITING, SessionState.DONE):
            return
        if session.playing:
            session.buffer -= dt
            session.playout_position += dt
            report.played += dt
        elif session.stalled:
            report.stall_time += dt
        else:
            report.prestart_time += dt


def _check_inputs(sessions, objective, config):
    if not sessions:
        raise SimulationConfigError("at least one session is required")
    for s in sessions:
        cfg = s.config or config
        if abs(s.ladder.tau - cfg.tau) > 1e-12:
            raise SimulationConfigError(
                f"session {s.session_id}: ladder tau {s.ladder.tau} != controller tau {cfg.tau}")
        if not (0 <= s.start_segment < s.ladder.num_segments):
            raise SimulationConfigError(
                f"session {s.session_id}: start_segment {s.start_segment} outside ladder")
        if s.start_time < 0:
            raise SimulationConfigError(f"session {s.session_id}: negative start_time")
        check_objective(objective, s.ladder.convention)


def run_shared(sessions, trace, objective=None, config=None, rng_seed=0, options=None):
    """Simulate all sessions on one shared link; one SimReport per session."""
    objective = objective or Objective()
    config = config or ControllerConfig()
    options = options or SimOptions()
    _check_inputs(sessions, objective, config)

    for s in sessions:
        s.reset()
    runs = [_Run(s, s.config or config, objective, options, rng_seed) for s in sessions]
    link = []
    for run in runs:
        run.report.link = link

    if trace.is_empty:
        return [run.report for run in runs]

    now = 0.0
    for _ in range(MAX_EVENTS):
        # Timers due now: first requests and off-interval expiries
        for run in runs:
            phase = run.session.phase
            if phase in (SessionState.WAITING, SessionState.OFF_INTERVAL) and run.next_request <= now + EPS:
                run.issue_request(now)

        if not any(run.active for run in runs):
            break
        if trace.end_time is not None and now >= trace.end_time - EPS:
            break

        capacity = trace.capacity_at(now)
        downloading = [r for r in runs if r.session.phase is SessionState.DOWNLOADING]
        rate = capacity / len(downloading) if downloading else 0.0

        dt = trace.next_change(now) - now
        for run in runs:
            phase = run.session.phase
            if phase is SessionState.DOWNLOADING and rate > 0:
                dt = min(dt, run.remaining_bits / rate)
            if phase in (SessionState.WAITING, SessionState.OFF_INTERVAL):
                dt = min(dt, run.next_request - now)
            if run.session.playing:
                dt = min(dt, run.session.buffer)
        dt = max(dt, 0.0)
        if math.isinf(dt):
            raise SimulationConfigError("simulation cannot make progress (no pending event)")

        allotted = rate * len(downloading)
        assert allotted <= capacity * (1 + 1e-12), "allotted rates exceed link capacity"
        if dt > 0:
            link.append(LinkSample(time=now, duration=dt, capacity=capacity,
                                   active=len(downloading), allotted=allotted))
        for run in runs:
            run.advance(dt, rate)
        now += dt

        for run in runs:
            session = run.session
            if session.phase is SessionState.DOWNLOADING and run.remaining_bits <= EPS * max(1.0, run.record.bitrate):
                run.complete_download(now)
        for run in runs:
            session = run.session
            if session.playing and session.buffer <= EPS:
                run.buffer_ran_dry(now)
    else:
        raise SimulationConfigError("event limit reached")

    for run in runs:
        report = run.report
        if run.active:
            report.end_time = now
            if run.session.phase is SessionState.DOWNLOADING:
                # Cut off by the end of the trace
                report.steps.pop()
            if run.session.stalled and report.stalls:
                report.stalls[-1].duration = now - report.stalls[-1].start_time
            if report.steps and math.isnan(report.steps[-1].t_actual):
                last = report.steps[-1]
                last.t_actual = max(last.t_hat, last.t_download)
        if report.steps:
            report.summary = compute_metrics(report, run.ladder.convention)
    return [run.report for run in runs]


def run_single(session, trace, objective=None, config=None, rng_seed=0, options=None):
    return run_shared([session], trace, objective, config, rng_seed, options)[0]
