"""
Fixed-bandwidth replays of a whole ladder.

These skip the network simulator: every step lasts tau * R / W and the
buffer follows buffer_step exactly. Used for the objective comparison,
buffer-bound and horizon studies.
"""

import logging
import math

import pandas as pd
from joblib import Parallel, delayed

from cqstream.controller import ControllerConfig, select_rate_based
from cqstream.dp_optimizer import BufferGrid, PlanRequest, buffer_step, plan
from cqstream.errors import PlanInfeasibleError
from cqstream.metrics import compute_metrics
from cqstream.online import horizon_for, online_step
from cqstream.sim import SimReport, Stall, StepRecord
from cqstream.utility import Objective, check_objective

logger = logging.getLogger(__name__)


def _finish(report, convention):
    if report.steps:
        report.summary = compute_metrics(report, convention)
        report.end_time = report.steps[-1].wall_time + report.steps[-1].t_download
        report.downloaded = report.tau * len(report.steps)
    return report


def plan_report(request, result, controller="plan"):
    """SimReport view of a PlanResult, one record per planned step."""
    report = SimReport(session_id=0, controller=controller, tau=request.tau,
                       convention="abstract-positive")
    wall = 0.0
    for m, level in enumerate(result.levels):
        bitrate = result.bitrates[m]
        t_download = request.tau * bitrate / request.bandwidth_w
        report.steps.append(StepRecord(
            wall_time=wall,
            segment_index=m,
            level=level,
            bitrate=bitrate,
            quality=result.qualities[m],
            buffer_before=result.trajectory[m],
            buffer_after=result.trajectory[m + 1],
            y_hat=request.bandwidth_w,
            t_download=t_download,
            t_actual=t_download,
            b_offset=result.b_offset if m == len(result.levels) - 1 else 0.0,
            horizon=len(result.levels) - m,
            playing=True,
        ))
        wall += t_download
    return report


def replay_plan(ladder, bandwidth, b_init, b_final, b_low, b_high, bins, objective=None):
    """One DP over every segment of the ladder at constant bandwidth."""
    objective = objective or Objective()
    check_objective(objective, ladder.convention)
    request = PlanRequest(
        b_init=b_init,
        b_final=b_final,
        grid=BufferGrid(b_low=b_low, b_high=b_high, bins=bins),
        tau=ladder.tau,
        bandwidth_w=bandwidth,
        window=ladder.segments,
        objective=objective,
    )
    result = plan(request)
    report = plan_report(request, result, controller=f"plan-{objective.label}")
    report.convention = ladder.convention.value
    return _finish(report, ladder.convention)


def replay_online(ladder, bandwidth, online_config, max_horizon, objective=None, b_init=None):
    """Closed loop of online_step with buffer_step updates."""
    objective = objective or Objective()
    check_objective(objective, ladder.convention)
    report = SimReport(session_id=0, controller=f"online-H{max_horizon}", tau=ladder.tau,
                       convention=ladder.convention.value)
    b = online_config.b_ref if b_init is None else b_init
    wall = 0.0
    prev_level = None
    for n in range(ladder.num_segments):
        horizon = horizon_for(n + 1, ladder.num_segments, max_horizon)
        decision = online_step(online_config, bandwidth, b, horizon,
                               ladder.window(n, horizon), objective, prev_level=prev_level)
        wall = _append_step(report, ladder, n, decision.level, b, bandwidth, wall,
                            b_offset=decision.b_offset, horizon=horizon,
                            fallback=decision.fallback)
        b = report.steps[-1].buffer_after
        prev_level = decision.level
    return _finish(report, ladder.convention)


def replay_unaware(ladder, bandwidth, b_init, epsilon=0.0):
    """Quality-unaware selection: highest bitrate under (1 - epsilon) * W."""
    config = ControllerConfig(tau=ladder.tau, epsilon=epsilon)
    report = SimReport(session_id=0, controller="unaware", tau=ladder.tau,
                       convention=ladder.convention.value)
    b = b_init
    wall = 0.0
    for n in range(ladder.num_segments):
        decision = select_rate_based(bandwidth, ladder.levels_at(n), config)
        wall = _append_step(report, ladder, n, decision.level, b, bandwidth, wall)
        b = report.steps[-1].buffer_after
    return _finish(report, ladder.convention)


def _append_step(report, ladder, n, level, b, bandwidth, wall, b_offset=0.0, horizon=1,
                 fallback=False):
    lv = ladder.levels_at(n)[level]
    t_download = ladder.tau * lv.bitrate / bandwidth
    b_next = buffer_step(b, lv.bitrate, bandwidth, ladder.tau)
    if b_next < 0:
        # Buffer ran dry mid-download; playback waits -b_next seconds
        report.stalls.append(Stall(start_time=wall + t_download + b_next, duration=-b_next))
        b_next = 0.0
    report.steps.append(StepRecord(
        wall_time=wall,
        segment_index=n,
        level=level,
        bitrate=lv.bitrate,
        quality=lv.quality,
        buffer_before=b,
        buffer_after=b_next,
        y_hat=bandwidth,
        t_download=t_download,
        t_actual=t_download,
        b_offset=b_offset,
        horizon=horizon,
        playing=True,
        fallback=fallback,
    ))
    return wall + t_download


# ---------------------------------------------------------
# SWEEPS
# ---------------------------------------------------------

def _sweep_row(report):
    s = report.summary
    return {
        "mean_quality": s.mean_quality,
        "min_quality": s.min_quality,
        "quality_stddev": s.quality_stddev,
        "psnr_mean": s.psnr_mean,
        "psnr_p5": s.psnr_p5,
        "min_buffer": s.min_buffer,
        "max_buffer": s.max_buffer,
    }


def _bound_point(ladder, bandwidth, center, delta, step, delta_b, objective):
    b_low = max(0.0, center - step * delta)
    b_high = center + step * delta
    bins = max(1, int(round((b_high - b_low) / delta_b)))
    row = {"delta": delta, "b_low": b_low, "b_high": b_high, "bins": bins}
    try:
        report = replay_plan(ladder, bandwidth, center, center, b_low, b_high, bins, objective)
    except PlanInfeasibleError as e:
        logger.warning("bounds [%g, %g] infeasible: %s", b_low, b_high, e)
        return {**row, "mean_quality": math.nan, "min_quality": math.nan}
    return {**row, **_sweep_row(report)}


def buffer_bound_sweep(ladder, bandwidth, center, deltas, step=2.0, delta_b=0.5,
                       objective=None, n_jobs=1):
    """Widen [center - step*d, center + step*d] for each d; bin width stays ``delta_b``."""
    objective = objective or Objective()
    rows = Parallel(n_jobs=n_jobs)(
        delayed(_bound_point)(ladder, bandwidth, center, d, step, delta_b, objective)
        for d in deltas
    )
    return pd.DataFrame(rows)


def _horizon_point(ladder, bandwidth, online_config, horizon, objective):
    report = replay_online(ladder, bandwidth, online_config, horizon, objective)
    return {"horizon": horizon, **_sweep_row(report),
            "fallbacks": sum(s.fallback for s in report.steps)}


def horizon_sweep(ladder, bandwidth, online_config, horizons, objective=None, n_jobs=1):
    objective = objective or Objective()
    rows = Parallel(n_jobs=n_jobs)(
        delayed(_horizon_point)(ladder, bandwidth, online_config, h, objective)
        for h in horizons
    )
    return pd.DataFrame(rows)
