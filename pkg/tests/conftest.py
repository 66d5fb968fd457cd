import os
import sys

import pytest

sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), "..")))

from cqstream.dp_optimizer import BufferGrid, PlanRequest  # noqa: E402
from cqstream.ladder import (  # noqa: E402
    SEVEN_LEVEL_KBPS,
    QualityConvention,
    SegmentLadder,
    gen_synthetic_ladder,
    kbps_to_bps,
)
from cqstream.utility import Objective  # noqa: E402

SCENARIOS_DIR = os.path.abspath(os.path.join(os.path.dirname(__file__), "..", "scenarios"))


@pytest.fixture
def two_step_ladder():
    """Two segments, two levels; W = 1 bit/s and tau = 1 s make bitrates read as seconds."""
    return SegmentLadder.from_arrays(
        1.0,
        [[0.5, 1.5], [0.6, 1.7]],
        [[1.0, 2.0], [2.0, 4.0]],
        QualityConvention.ABSTRACT_POSITIVE,
    )


@pytest.fixture
def two_step_request(two_step_ladder):
    def make(objective):
        return PlanRequest(
            b_init=1.0,
            b_final=0.85,
            grid=BufferGrid(b_low=0.0, b_high=2.0, bins=2),
            tau=1.0,
            bandwidth_w=1.0,
            window=two_step_ladder.segments,
            objective=objective,
        )
    return make


@pytest.fixture
def max_min():
    return Objective.max_min()


@pytest.fixture
def synthetic_ladder():
    rates = kbps_to_bps(SEVEN_LEVEL_KBPS)
    return gen_synthetic_ladder(7, 60, len(rates), 2.0, rates)


@pytest.fixture
def two_step_manifest():
    return os.path.join(SCENARIOS_DIR, "two_step.csv")
