"""
Command-line entry point.

    python -m cqstream validate scenarios/two_step.csv
    python -m cqstream plan scenarios/two_step.csv --w-bps 1 --b-init 1 --b-final 0.85 \
        --bl 0 --bh 2 --k 2 --objective max-min
    python -m cqstream simulate scenarios/single_client_step.spec
    python -m cqstream gen-ladder --seed 7 --segments 60 --output ladder.csv

Exit codes: 0 success, 1 validation / infeasibility, 2 I/O.
"""

import argparse
import logging
import os
import sys

import pandas as pd
from pydantic import ValidationError

from cqstream import config
from cqstream.dp_optimizer import BufferGrid, PlanRequest, plan
from cqstream.errors import CQStreamError
from cqstream.experiment import BITRATE_PRESETS, parse_spec, run_experiment
from cqstream.ladder import (
    ComplexityProfile,
    gen_synthetic_ladder,
    kbps_to_bps,
    load_manifest,
    write_manifest,
)
from cqstream.log import setup_logging
from cqstream.utility import Objective, check_objective

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_IO = 2


def _fail(message, code):
    print(f"error: {message}", file=sys.stderr)
    return code


def _guarded(fn):
    """Map library errors to exit codes."""
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except OSError as e:
            return _fail(f"{e.strerror or e}: {e.filename}" if e.filename else str(e), EXIT_IO)
        except (CQStreamError, ValidationError, ValueError) as e:
            return _fail(str(e), EXIT_INVALID)
    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


@_guarded
def cmd_validate(manifest_path):
    ladder = load_manifest(manifest_path)
    print(f"OK: {ladder.num_segments} segments, {ladder.num_levels} levels, "
          f"tau={ladder.tau:g}s, quality={ladder.convention.value}")
    return EXIT_OK


@_guarded
def cmd_plan(manifest_path, w_bps, b_init=30.0, b_final=30.0, bl=10.0, bh=50.0, k=config.DEFAULT_BINS,
             horizon=None, objective="alpha-fair:0", start=0, delta_diff=None, out=None):
    """Solve one window and print the plan as CSV."""
    out = out or sys.stdout
    ladder = load_manifest(manifest_path)
    objective = Objective.parse(objective, delta_diff=delta_diff)
    check_objective(objective, ladder.convention)
    horizon = horizon or ladder.num_segments - start
    if horizon > ladder.num_segments - start:
        raise ValueError(f"horizon {horizon} exceeds the {ladder.num_segments - start} "
                         f"segments available from segment {start}")

    request = PlanRequest(
        b_init=b_init,
        b_final=b_final,
        grid=BufferGrid(b_low=bl, b_high=bh, bins=k),
        tau=ladder.tau,
        bandwidth_w=w_bps,
        window=ladder.window(start, horizon),
        objective=objective,
    )
    result = plan(request)

    rows = pd.DataFrame({
        "step": range(1, len(result.levels) + 1),
        "level": result.levels,
        "bitrate": result.bitrates,
        "quality": result.qualities,
        "buffer_after": result.trajectory[1:],
    })
    rows.to_csv(out, index=False, lineterminator="\n")
    out.write(f"# achieved_utility={result.achieved_utility!r} b_offset={result.b_offset!r}\n")
    return EXIT_OK


@_guarded
def cmd_simulate(spec_path, output_dir=None, parallel=None):
    spec = parse_spec(spec_path)
    output_dir = output_dir or spec.output_dir or config.default_output_dir()
    logger.info("writing outputs to %s", output_dir)
    outcome = run_experiment(spec, output_dir, parallel=parallel)

    print("=" * 60)
    print(f"SCENARIO: {spec.scenario}")
    print("=" * 60)
    if outcome.sweep is not None:
        print(outcome.sweep.to_string(index=False))
    elif outcome.comparison is not None:
        table = outcome.comparison.pivot(index="metric", columns="controller", values="value")
        print(table.to_string())
    print(f"\nWrote {len(outcome.files)} files to {output_dir}")
    return EXIT_OK


@_guarded
def cmd_gen_ladder(seed, segments, tau, bitrates_kbps, output, profile=None):
    rates = kbps_to_bps(bitrates_kbps)
    ladder = gen_synthetic_ladder(seed, segments, len(rates), tau, rates, profile)
    directory = os.path.dirname(output)
    if directory:
        os.makedirs(directory, exist_ok=True)
    write_manifest(ladder, output)
    print(f"Wrote {ladder.num_segments} x {ladder.num_levels} ladder to {output}")
    return EXIT_OK


def _bitrate_list(text):
    if text in BITRATE_PRESETS:
        return list(BITRATE_PRESETS[text])
    return [float(v) for v in text.split(",") if v.strip()]


def build_parser():
    parser = argparse.ArgumentParser(prog="cqstream",
                                     description="Consistent-quality rate adaptation toolkit")
    parser.add_argument("-v", "--verbose", action="count", default=0,
                        help="-v for progress, -vv for debug output")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check a ladder manifest")
    p.add_argument("manifest")

    p = sub.add_parser("plan", help="solve one planning window")
    p.add_argument("manifest")
    p.add_argument("--w-bps", type=float, required=True, help="bandwidth in bits/second")
    p.add_argument("--b-init", type=float, default=30.0)
    p.add_argument("--b-final", type=float, default=30.0)
    p.add_argument("--bl", type=float, default=10.0)
    p.add_argument("--bh", type=float, default=50.0)
    p.add_argument("--k", type=int, default=config.DEFAULT_BINS, help="buffer bins")
    p.add_argument("--horizon", type=int, default=None, help="steps (default: whole ladder)")
    p.add_argument("--start", type=int, default=0, help="first segment of the window")
    p.add_argument("--objective", default="alpha-fair:0", help="max-min or alpha-fair:<alpha>")
    p.add_argument("--delta-diff", type=float, default=None, help="switching discount")

    p = sub.add_parser("simulate", help="run an experiment spec")
    p.add_argument("spec")
    p.add_argument("--output-dir", default=None)
    p.add_argument("--parallel", action="store_true", default=None)

    p = sub.add_parser("gen-ladder", help="write a synthetic ladder manifest")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--segments", type=int, default=60)
    p.add_argument("--tau", type=float, default=2.0)
    p.add_argument("--bitrates-kbps", type=_bitrate_list, default=list(BITRATE_PRESETS["seven"]),
                   help="comma list, or 'seven' / 'eleven'")
    p.add_argument("--theta", type=float, default=1.0e6)
    p.add_argument("--gamma", type=float, default=1.0)
    p.add_argument("--sigma2-min", type=float, default=2.0)
    p.add_argument("--sigma2-max", type=float, default=40.0)
    p.add_argument("--scene-mean", type=float, default=5.0)
    p.add_argument("--output", default=None)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    setup_logging(args.verbose)

    if args.command == "validate":
        return cmd_validate(args.manifest)
    if args.command == "plan":
        return cmd_plan(args.manifest, args.w_bps, b_init=args.b_init, b_final=args.b_final,
                        bl=args.bl, bh=args.bh, k=args.k, horizon=args.horizon,
                        objective=args.objective, start=args.start, delta_diff=args.delta_diff)
    if args.command == "simulate":
        return cmd_simulate(args.spec, output_dir=args.output_dir, parallel=args.parallel)
    if args.command == "gen-ladder":
        try:
            profile = ComplexityProfile(theta=args.theta, gamma=args.gamma,
                                        sigma2_min=args.sigma2_min, sigma2_max=args.sigma2_max,
                                        scene_mean=args.scene_mean)
        except ValidationError as e:
            return _fail(str(e), EXIT_INVALID)
        output = args.output or os.path.join(config.default_output_dir(), "synthetic_ladder.csv")
        return cmd_gen_ladder(args.seed, args.segments, args.tau, args.bitrates_kbps, output,
                              profile)
    return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
