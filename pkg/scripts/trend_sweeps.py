"""
Fixed-bandwidth trend studies on synthetic ladders.

- Objective comparison: quality-unaware vs total-quality vs max-min plans
- Buffer-bound sweep: widen [B0 - 2d, B0 + 2d] at a fixed bin width
- Horizon sweep: online planning with H = 1 .. 30

Run from the project root:
    python scripts/trend_sweeps.py [--seed 7] [--bandwidth-mbps 1.5] [--jobs -1]
"""

import argparse
import os
import sys

import pandas as pd

PROJECT_ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
sys.path.insert(0, PROJECT_ROOT)

from cqstream import config  # noqa: E402
from cqstream.ladder import SEVEN_LEVEL_KBPS, gen_synthetic_ladder, kbps_to_bps  # noqa: E402
from cqstream.log import setup_logging  # noqa: E402
from cqstream.online import OnlineConfig  # noqa: E402
from cqstream.replay import (  # noqa: E402
    buffer_bound_sweep,
    horizon_sweep,
    replay_plan,
    replay_unaware,
)
from cqstream.utility import Objective  # noqa: E402


def banner(title):
    print(f"\n{'=' * 60}")
    print(title)
    print("=" * 60)


def objective_table(ladder, bandwidth, b_ref):
    rows = []
    unaware = replay_unaware(ladder, bandwidth, b_ref)
    rows.append({"scheme": "unaware", **unaware.summary.model_dump()})
    for objective in (Objective.alpha_fair(0.0), Objective.max_min()):
        report = replay_plan(ladder, bandwidth, b_ref, b_ref, 10.0, 50.0, 80, objective)
        rows.append({"scheme": objective.label, **report.summary.model_dump()})
    return pd.DataFrame(rows)


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[1])
    parser.add_argument("--seed", type=int, default=7)
    parser.add_argument("--segments", type=int, default=150)
    parser.add_argument("--bandwidth-mbps", type=float, default=1.5)
    parser.add_argument("--jobs", type=int, default=1)
    parser.add_argument("--output-dir", default=None)
    args = parser.parse_args(argv)
    setup_logging(0)

    rates = kbps_to_bps(SEVEN_LEVEL_KBPS)
    ladder = gen_synthetic_ladder(args.seed, args.segments, len(rates), 2.0, rates)
    bandwidth = args.bandwidth_mbps * config.MBPS
    output_dir = args.output_dir or config.default_output_dir()
    os.makedirs(output_dir, exist_ok=True)

    banner("TREND SWEEPS")
    print(f"  Ladder: seed {args.seed}, {ladder.num_segments} segments x {ladder.num_levels} levels")
    print(f"  Bandwidth: {args.bandwidth_mbps:g} Mbps")

    banner("📊 OBJECTIVES (single plan over the whole video)")
    objectives = objective_table(ladder, bandwidth, 30.0)
    print(objectives[["scheme", "mean_quality", "min_quality", "quality_stddev",
                      "psnr_p5", "avg_bitrate"]].to_string(index=False))

    banner("📦 BUFFER BOUNDS (B0 = 30 s, 0.5 s bins)")
    bounds = buffer_bound_sweep(ladder, bandwidth, 30.0, list(range(1, 9)), n_jobs=args.jobs)
    print(bounds[["delta", "b_low", "b_high", "mean_quality", "min_quality"]].to_string(index=False))

    banner("🔭 HORIZON (online, B = [10, 50] s)")
    horizons = horizon_sweep(ladder, bandwidth, OnlineConfig(), [1, 2, 4, 8, 12, 20, 30],
                             n_jobs=args.jobs)
    print(horizons[["horizon", "mean_quality", "min_quality", "fallbacks"]].to_string(index=False))

    for name, frame in (("objectives", objectives), ("buffer_bounds", bounds),
                        ("horizons", horizons)):
        frame.to_csv(os.path.join(output_dir, f"trend_{name}.csv"), index=False)
    print(f"\n✅ Tables written to {output_dir}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
