import statistics
import time

import numpy as np
import pytest

from cqstream.dp_optimizer import (
    BufferGrid,
    PlanRequest,
    brute_force_plan,
    build_table,
    buffer_step,
    nearest_occupied,
    plan,
)
from cqstream.errors import InstanceTooLargeError, PlanInfeasibleError, PlanRequestError
from cqstream.ladder import Level
from cqstream.utility import Objective, path_utility


def _random_request(seed):
    """Small random window, grid and objective for the oracle comparison."""
    rng = np.random.default_rng(seed)
    horizon = int(rng.integers(1, 8))
    num_levels = int(rng.integers(1, 4))
    bins = int(rng.choice([50, 400]))
    bandwidth = 1.0e6
    window = []
    for _ in range(horizon):
        rates = np.sort(rng.uniform(0.3e6, 2.0e6, size=num_levels))
        while num_levels > 1 and np.any(np.diff(rates) <= 0):
            rates = np.sort(rng.uniform(0.3e6, 2.0e6, size=num_levels))
        quality = np.sort(rng.uniform(1.0, 10.0, size=num_levels))
        window.append(tuple(Level(float(r), float(q)) for r, q in zip(rates, quality)))

    kind = rng.integers(0, 3)
    if kind == 0:
        objective = Objective.max_min()
    elif kind == 1:
        objective = Objective.alpha_fair(0.0)
    else:
        objective = Objective.alpha_fair(float(rng.choice([0.5, 1.0, 2.0])),
                                         delta_diff=float(rng.uniform(0.5, 1.0)))
    return PlanRequest(
        b_init=float(rng.uniform(8.0, 22.0)),
        b_final=float(rng.uniform(8.0, 22.0)),
        grid=BufferGrid(b_low=5.0, b_high=25.0, bins=bins),
        tau=2.0,
        bandwidth_w=bandwidth,
        window=window,
        objective=objective,
    )


class TestBufferGrid:
    def test_bins_are_half_open(self):
        grid = BufferGrid(b_low=0.0, b_high=2.0, bins=2)
        assert grid.bin_of(0.0) == 0
        assert grid.bin_of(0.999) == 0
        assert grid.bin_of(1.0) == 1
        assert grid.bin_of(2.0) == 1

    def test_vectorised(self):
        grid = BufferGrid(b_low=10.0, b_high=50.0, bins=50)
        assert grid.bin_of(np.array([10.0, 30.4, 50.0])).tolist() == [0, 25, 49]

    def test_zero_width_grid(self):
        grid = BufferGrid(b_low=30.0, b_high=30.0, bins=50)
        assert grid.delta_b == 0
        assert grid.bin_of(30.0) == 0

    def test_bad_bounds(self):
        with pytest.raises(PlanRequestError):
            BufferGrid(b_low=5.0, b_high=4.0)
        with pytest.raises(PlanRequestError):
            BufferGrid(b_low=0.0, b_high=4.0, bins=0)


class TestPlanRequest:
    def test_b_init_outside_bounds(self, two_step_ladder):
        with pytest.raises(PlanRequestError):
            PlanRequest(b_init=3.0, b_final=1.0, grid=BufferGrid(0.0, 2.0, 2), tau=1.0,
                        bandwidth_w=1.0, window=two_step_ladder.segments)

    def test_zero_bandwidth(self, two_step_ladder):
        with pytest.raises(PlanRequestError):
            PlanRequest(b_init=1.0, b_final=1.0, grid=BufferGrid(0.0, 2.0, 2), tau=1.0,
                        bandwidth_w=0.0, window=two_step_ladder.segments)

    def test_empty_window(self):
        with pytest.raises(PlanRequestError):
            PlanRequest(b_init=1.0, b_final=1.0, grid=BufferGrid(0.0, 2.0, 2), tau=1.0,
                        bandwidth_w=1.0, window=())


class TestTwoStepExample:
    def test_max_min_picks_high_then_low(self, two_step_request):
        start = time.perf_counter()
        result = plan(two_step_request(Objective.max_min()))
        assert time.perf_counter() - start < 1.0
        assert result.levels == [1, 0]
        assert result.achieved_utility == 2.0
        assert result.trajectory == pytest.approx([1.0, 0.5, 0.9])
        assert result.b_offset == 0.0

    def test_total_quality_picks_low_then_high(self, two_step_request):
        result = plan(two_step_request(Objective.alpha_fair(0.0)))
        assert result.levels == [0, 1]
        assert result.achieved_utility == 5.0
        assert result.qualities == [1.0, 4.0]

    def test_high_high_is_infeasible(self, two_step_request):
        request = two_step_request(Objective.max_min())
        b = buffer_step(request.b_init, 1.5, 1.0, 1.0)
        assert buffer_step(b, 1.7, 1.0, 1.0) == pytest.approx(-0.2)
        table = build_table(request)
        # no surviving path reaches step 2 through level 1 twice
        for k in np.flatnonzero(table.occupied[2]):
            parent = table.back_bin[2, k]
            assert not (table.back_level[2, k] == 1 and table.back_level[1, parent] == 1)

    def test_oracle_agrees(self, two_step_request):
        for objective in (Objective.max_min(), Objective.alpha_fair(0.0)):
            request = two_step_request(objective)
            assert brute_force_plan(request).levels == plan(request).levels


class TestPlan:
    def test_single_level_ladder(self):
        window = [(Level(1.0e6, 3.0),)] * 5
        request = PlanRequest(b_init=20.0, b_final=20.0, grid=BufferGrid(10.0, 30.0, 20),
                              tau=2.0, bandwidth_w=1.0e6, window=window)
        result = plan(request)
        assert result.levels == [0] * 5
        assert result.achieved_utility == 15.0
        assert result.trajectory == [20.0] * 6

    def test_infeasible(self):
        window = [(Level(4.0e6, 3.0),)] * 5
        request = PlanRequest(b_init=12.0, b_final=20.0, grid=BufferGrid(10.0, 30.0, 20),
                              tau=2.0, bandwidth_w=1.0e6, window=window)
        with pytest.raises(PlanInfeasibleError):
            plan(request)

    def test_empty_final_bin_reports_offset(self):
        # Buffer only grows, so the target bin at 10 s cannot be reached
        window = [(Level(0.5e6, 3.0), Level(0.8e6, 4.0))] * 3
        request = PlanRequest(b_init=20.0, b_final=10.0, grid=BufferGrid(10.0, 30.0, 20),
                              tau=2.0, bandwidth_w=1.0e6, window=window)
        result = plan(request)
        assert result.final_bin != result.target_bin
        assert result.b_offset == pytest.approx(result.trajectory[-1] - 10.0)
        assert result.b_offset > 0

    def test_nearest_occupied_prefers_higher_bin_on_tie(self):
        assert nearest_occupied([3, 7], 5) == 7
        assert nearest_occupied([3, 8], 5) == 3

    def test_transition_count_is_bounded(self):
        window = [tuple(Level(r, q) for r, q in zip((0.5e6, 1.0e6, 1.5e6), (1.0, 2.0, 3.0)))] * 10
        request = PlanRequest(b_init=30.0, b_final=30.0, grid=BufferGrid(10.0, 50.0, 50),
                              tau=2.0, bandwidth_w=1.0e6, window=window)
        result = plan(request)
        assert 0 < result.transitions <= 10 * 50 * 3

    def test_switching_discount_is_charged(self):
        window = [(Level(0.9e6, 4.0), Level(1.1e6, 4.2))] * 8
        objective = Objective.alpha_fair(0.0, delta_diff=0.5)
        request = PlanRequest(b_init=20.0, b_final=20.0, grid=BufferGrid(10.0, 30.0, 40),
                              tau=2.0, bandwidth_w=1.0e6, window=window, objective=objective,
                              prev_level=0)
        result = plan(request)
        assert result.achieved_utility == pytest.approx(
            path_utility(result.qualities, result.levels, objective, prev_level=0))

    def test_achieved_utility_matches_path(self, synthetic_ladder):
        request = PlanRequest(b_init=30.0, b_final=30.0, grid=BufferGrid(10.0, 50.0, 50),
                              tau=2.0, bandwidth_w=1.5e6, window=synthetic_ladder.window(0, 20),
                              objective=Objective.alpha_fair(0.0))
        result = plan(request)
        assert result.achieved_utility == pytest.approx(
            path_utility(result.qualities, result.levels, request.objective))

    def test_deterministic(self, synthetic_ladder):
        request = PlanRequest(b_init=30.0, b_final=30.0, grid=BufferGrid(10.0, 50.0, 50),
                              tau=2.0, bandwidth_w=1.5e6, window=synthetic_ladder.window(10, 30),
                              objective=Objective.max_min())
        assert plan(request) == plan(request)


class TestOracle:
    @pytest.mark.parametrize("seed", range(200))
    def test_plan_matches_brute_force(self, seed):
        request = _random_request(seed)
        try:
            expected = brute_force_plan(request)
        except PlanInfeasibleError:
            with pytest.raises(PlanInfeasibleError):
                plan(request)
            return
        result = plan(request)
        assert result.achieved_utility == expected.achieved_utility
        assert result.levels == expected.levels
        assert result.final_bin == expected.final_bin

    @pytest.mark.parametrize("seed", range(200))
    def test_trajectory_stays_in_bounds(self, seed):
        request = _random_request(seed)
        try:
            result = plan(request)
        except PlanInfeasibleError:
            return
        grid = request.grid
        assert all(grid.b_low <= b <= grid.b_high for b in result.trajectory)

    def test_too_large(self, synthetic_ladder):
        request = PlanRequest(b_init=30.0, b_final=30.0, grid=BufferGrid(10.0, 50.0, 50),
                              tau=2.0, bandwidth_w=1.5e6, window=synthetic_ladder.window(0, 10))
        with pytest.raises(InstanceTooLargeError):
            brute_force_plan(request)


class TestPerformance:
    def test_thirty_step_window(self):
        rng = np.random.default_rng(0)
        rates = np.linspace(0.4e6, 4.0e6, 10)
        window = [tuple(Level(float(r), float(q)) for r, q in
                        zip(rates, np.sort(rng.uniform(1.0, 50.0, 10)))) for _ in range(30)]
        request = PlanRequest(b_init=30.0, b_final=30.0, grid=BufferGrid(10.0, 50.0, 50),
                              tau=2.0, bandwidth_w=2.0e6, window=window)
        timings = []
        for _ in range(100):
            start = time.perf_counter()
            plan(request)
            timings.append(time.perf_counter() - start)
        assert statistics.median(timings) < 0.05
