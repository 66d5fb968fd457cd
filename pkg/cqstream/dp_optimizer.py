"""
Finite-horizon segment planner.

Dynamic programming over a quantized buffer grid: each cell (step m, bin k)
keeps one survivor path, the one with the best accumulated utility. The
brute-force oracle enumerates every level sequence and applies the same
survivor rule, so both return identical answers on small instances.
"""

import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from cqstream import config
from cqstream.errors import InstanceTooLargeError, PlanInfeasibleError, PlanRequestError
from cqstream.ladder import Level
from cqstream.utility import Objective, accumulator_for, step_utility

logger = logging.getLogger(__name__)


def buffer_step(b_prev, bitrate, bandwidth, tau):
    """Buffer after fetching one segment: gains tau, drains tau * R / W."""
    return b_prev + tau - tau * bitrate / bandwidth


@dataclass(frozen=True)
class BufferGrid:
    b_low: float
    b_high: float
    bins: int = config.DEFAULT_BINS

    def __post_init__(self):
        if not (0 <= self.b_low <= self.b_high):
            raise PlanRequestError(f"need 0 <= b_low <= b_high, got [{self.b_low}, {self.b_high}]")
        if self.bins < 1:
            raise PlanRequestError(f"bins must be >= 1, got {self.bins}")

    @property
    def delta_b(self):
        return (self.b_high - self.b_low) / self.bins

    def contains(self, b):
        return (self.b_low <= b) & (b <= self.b_high)

    def bin_of(self, b):
        """0-based bin index; intervals are half-open except the top one."""
        b = np.asarray(b, dtype=float)
        if self.delta_b == 0:
            k = np.zeros(b.shape, dtype=np.int64)
        else:
            k = np.floor((b - self.b_low) / self.delta_b).astype(np.int64)
            k = np.clip(k, 0, self.bins - 1)
        return int(k) if k.ndim == 0 else k


@dataclass(frozen=True)
class PlanRequest:
    b_init: float
    b_final: float
    grid: BufferGrid
    tau: float
    bandwidth_w: float
    window: Tuple[Tuple[Level, ...], ...]
    objective: Objective = field(default_factory=Objective)
    # Level fetched just before the window, for the switching discount
    prev_level: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "window", tuple(tuple(levels) for levels in self.window))
        if len(self.window) < 1:
            raise PlanRequestError("window must hold at least one step")
        if any(len(levels) == 0 for levels in self.window):
            raise PlanRequestError("every window step needs at least one level")
        if not self.bandwidth_w > 0:
            raise PlanRequestError(f"bandwidth must be > 0, got {self.bandwidth_w}")
        if not self.tau > 0:
            raise PlanRequestError(f"tau must be > 0, got {self.tau}")
        for name in ("b_init", "b_final"):
            value = getattr(self, name)
            if not self.grid.contains(value):
                raise PlanRequestError(
                    f"{name}={value} outside [{self.grid.b_low}, {self.grid.b_high}]")

    @property
    def horizon_h(self):
        return len(self.window)


@dataclass
class PlanResult:
    levels: List[int]
    bitrates: List[float]
    qualities: List[float]
    achieved_utility: float
    trajectory: List[float]
    b_offset: float
    final_bin: int
    target_bin: int
    transitions: int = 0


@dataclass
class DPTable:
    u_star: np.ndarray
    b_star: np.ndarray
    back_bin: np.ndarray
    back_level: np.ndarray
    occupied: np.ndarray
    transitions: int = 0

    @classmethod
    def empty(cls, horizon, bins):
        shape = (horizon + 1, bins)
        return cls(
            u_star=np.full(shape, np.nan),
            b_star=np.full(shape, np.nan),
            back_bin=np.full(shape, -1, dtype=np.int64),
            back_level=np.full(shape, -1, dtype=np.int64),
            occupied=np.zeros(shape, dtype=bool),
        )


def _step_arrays(request):
    """Per-step bitrates and utilities (same level kept / level switched)."""
    rates, u_same, u_diff = [], [], []
    for levels in request.window:
        rates.append(np.array([lv.bitrate for lv in levels], dtype=float))
        # l + 1 stands for "any other level"; only equality matters
        u_same.append(np.array([step_utility(lv.quality, l, l, request.objective)
                                for l, lv in enumerate(levels)]))
        u_diff.append(np.array([step_utility(lv.quality, l + 1, l, request.objective)
                                for l, lv in enumerate(levels)]))
    return rates, u_same, u_diff


def build_table(request):
    """Forward pass: fill one survivor per (step, bin)."""
    grid = request.grid
    horizon = request.horizon_h
    acc = accumulator_for(request.objective)
    table = DPTable.empty(horizon, grid.bins)
    rates, u_same, u_diff = _step_arrays(request)

    k0 = grid.bin_of(request.b_init)
    table.u_star[0, k0] = acc.identity
    table.b_star[0, k0] = request.b_init
    table.occupied[0, k0] = True
    prev_level_row0 = -1 if request.prev_level is None else request.prev_level

    for m in range(1, horizon + 1):
        parents = np.flatnonzero(table.occupied[m - 1])
        if parents.size == 0:
            break
        num_levels = rates[m - 1].size
        table.transitions += parents.size * num_levels

        b_prev = table.b_star[m - 1, parents]
        u_prev = table.u_star[m - 1, parents]
        lvl_prev = (np.full(parents.size, prev_level_row0, dtype=np.int64) if m == 1
                    else table.back_level[m - 1, parents])

        b_new = buffer_step(b_prev[:, None], rates[m - 1][None, :], request.bandwidth_w, request.tau)
        level_idx = np.broadcast_to(np.arange(num_levels), b_new.shape)
        same = (lvl_prev[:, None] < 0) | (lvl_prev[:, None] == level_idx)
        u_step = np.where(same, u_same[m - 1][None, :], u_diff[m - 1][None, :])
        if acc.name == "min":
            u_new = np.minimum(u_prev[:, None], u_step)
        else:
            u_new = u_prev[:, None] + u_step

        parent_bin = np.broadcast_to(parents[:, None], b_new.shape)
        keep = grid.contains(b_new)
        if not keep.any():
            continue
        b_new, u_new = b_new[keep], u_new[keep]
        level_idx, parent_bin = level_idx[keep], parent_bin[keep]
        target = grid.bin_of(b_new)

        # Survivor per bin: best utility, then more buffer, lower level, lower parent bin
        order = np.lexsort((parent_bin, level_idx, -b_new, -u_new, target))
        target_sorted = target[order]
        first = np.flatnonzero(np.r_[True, target_sorted[1:] != target_sorted[:-1]])
        win = order[first]
        bins = target[win]

        table.u_star[m, bins] = u_new[win]
        table.b_star[m, bins] = b_new[win]
        table.back_bin[m, bins] = parent_bin[win]
        table.back_level[m, bins] = level_idx[win]
        table.occupied[m, bins] = True

    return table


def nearest_occupied(occupied_bins, target):
    """Closest occupied bin to ``target``; ties go to the higher bin."""
    occupied_bins = np.asarray(occupied_bins)
    dist = np.abs(occupied_bins - target)
    best = dist.min()
    return int(occupied_bins[dist == best].max())


def plan(request):
    table = build_table(request)
    horizon = request.horizon_h
    grid = request.grid

    final_row = np.flatnonzero(table.occupied[horizon])
    if final_row.size == 0:
        raise PlanInfeasibleError(
            f"no level sequence keeps the buffer in [{grid.b_low}, {grid.b_high}] "
            f"over {horizon} steps (b_init={request.b_init:.3f}, W={request.bandwidth_w:.0f})")

    target_bin = grid.bin_of(request.b_final)
    if table.occupied[horizon, target_bin]:
        final_bin = target_bin
        b_offset = 0.0
    else:
        final_bin = nearest_occupied(final_row, target_bin)
        b_offset = float(table.b_star[horizon, final_bin] - request.b_final)
        logger.debug("final bin %d empty, backtracking from bin %d (b_offset=%.3f)",
                     target_bin, final_bin, b_offset)

    levels = [0] * horizon
    trajectory = [0.0] * (horizon + 1)
    k = final_bin
    for m in range(horizon, 0, -1):
        levels[m - 1] = int(table.back_level[m, k])
        trajectory[m] = float(table.b_star[m, k])
        k = int(table.back_bin[m, k])
    trajectory[0] = float(table.b_star[0, k])

    return PlanResult(
        levels=levels,
        bitrates=[request.window[m][l].bitrate for m, l in enumerate(levels)],
        qualities=[request.window[m][l].quality for m, l in enumerate(levels)],
        achieved_utility=float(table.u_star[horizon, final_bin]),
        trajectory=trajectory,
        b_offset=b_offset,
        final_bin=final_bin,
        target_bin=target_bin,
        transitions=table.transitions,
    )


def brute_force_plan(request):
    """Enumerate every level sequence, then keep only per-bin survivors step by step."""
    counts = [len(levels) for levels in request.window]
    num_paths = math.prod(counts)
    if num_paths > config.BRUTE_FORCE_MAX_PATHS:
        raise InstanceTooLargeError(
            f"{num_paths} level sequences exceed the limit of {config.BRUTE_FORCE_MAX_PATHS}")

    grid = request.grid
    acc = accumulator_for(request.objective)
    horizon = request.horizon_h

    # Exact per-step (utility, buffer) of every sequence up to its first bound violation
    walks = {}
    for seq in itertools.product(*(range(n) for n in counts)):
        b = request.b_init
        util = acc.identity
        prev = request.prev_level
        steps = []
        for m, l in enumerate(seq):
            level = request.window[m][l]
            b = buffer_step(b, level.bitrate, request.bandwidth_w, request.tau)
            if not grid.contains(b):
                break
            util = acc.combine(util, step_utility(level.quality, prev, l, request.objective))
            prev = l
            steps.append((float(util), float(b)))
        walks[seq] = steps

    survivors = {(): grid.bin_of(request.b_init)}
    for m in range(1, horizon + 1):
        best = {}
        for seq, steps in walks.items():
            if len(steps) < m:
                continue
            prefix = seq[:m]
            parent = prefix[:-1]
            if parent not in survivors:
                continue
            util, b = steps[m - 1]
            k = grid.bin_of(b)
            key = (-util, -b, prefix[-1], survivors[parent])
            if k not in best or key < best[k][0]:
                best[k] = (key, prefix)
        survivors = {prefix: k for k, (key, prefix) in best.items()}

    if not survivors:
        raise PlanInfeasibleError("no level sequence keeps the buffer within bounds")

    by_bin = {k: prefix for prefix, k in survivors.items()}
    target_bin = grid.bin_of(request.b_final)
    if target_bin in by_bin:
        final_bin = target_bin
    else:
        final_bin = min(by_bin, key=lambda k: (abs(k - target_bin), -k))

    seq = by_bin[final_bin]
    steps = walks[seq]
    trajectory = [float(request.b_init)] + [b for _, b in steps]
    b_offset = 0.0 if final_bin == target_bin else trajectory[-1] - request.b_final
    return PlanResult(
        levels=list(seq),
        bitrates=[request.window[m][l].bitrate for m, l in enumerate(seq)],
        qualities=[request.window[m][l].quality for m, l in enumerate(seq)],
        achieved_utility=steps[-1][0],
        trajectory=trajectory,
        b_offset=b_offset,
        final_bin=final_bin,
        target_bin=target_bin,
        transitions=num_paths * horizon,
    )
