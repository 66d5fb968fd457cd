"""
Experiment specs: flat ``key = value`` files describing a scenario.

Example::

    scenario = single-client-step
    ladder.synthetic.seed = 7
    ladder.synthetic.segments = 250
    ladder.synthetic.bitrates_kbps = eleven
    trace.breakpoints = 0:5e6, 200:2e6, 300:5e6
    trace.end = 500
    controllers = panda-cq, panda-baseline
    objective = alpha-fair:0
    client.start_segment = 0

Each ``client.start_segment`` line opens a new client block.
"""

import logging
import os
from dataclasses import dataclass, field
from typing import Dict, List, Literal, Optional, Tuple

import pandas as pd
from joblib import Parallel, delayed
from pydantic import BaseModel, ConfigDict, Field, model_validator

from cqstream.config import read_key_values
from cqstream.controller import CONTROLLER_KINDS, TABLE_NAMES, ControllerConfig, table_overrides
from cqstream.errors import SpecError
from cqstream.ladder import (
    ELEVEN_LEVEL_KBPS,
    SEVEN_LEVEL_KBPS,
    ComplexityProfile,
    gen_synthetic_ladder,
    kbps_to_bps,
    load_manifest,
)
from cqstream.metrics import compute_pooled_metrics, comparison_table, write_report_csv, write_summary
from cqstream.sim import BandwidthTrace, ClientSession, SimOptions, load_trace, run_shared
from cqstream.utility import Objective

logger = logging.getLogger(__name__)

BITRATE_PRESETS = {"seven": SEVEN_LEVEL_KBPS, "eleven": ELEVEN_LEVEL_KBPS}
SWEEP_PARAMS = ("BL", "BH", "B0", "H", "capacity")


class SyntheticLadderSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    seed: int = 0
    segments: int = Field(60, ge=1)
    tau: float = Field(2.0, gt=0)
    bitrates_kbps: Tuple[float, ...] = SEVEN_LEVEL_KBPS
    profile: ComplexityProfile = ComplexityProfile()

    def build(self):
        return gen_synthetic_ladder(self.seed, self.segments, len(self.bitrates_kbps), self.tau,
                                    kbps_to_bps(self.bitrates_kbps), self.profile)


class ClientSpec(BaseModel):
    start_segment: int = Field(0, ge=0)
    stagger: float = Field(0.0, ge=0)


class ExperimentSpec(BaseModel):
    scenario: str = "scenario"
    ladder_manifest: Optional[str] = None
    ladder_synthetic: Optional[SyntheticLadderSpec] = None
    trace_file: Optional[str] = None
    trace_breakpoints: Tuple[Tuple[float, float], ...] = ()
    trace_end: Optional[float] = None
    controllers: Tuple[str, ...]
    objective: Objective = Objective()
    overrides: Dict[str, str] = {}
    controller_overrides: Dict[str, Dict[str, str]] = {}
    clients: List[ClientSpec] = [ClientSpec()]
    startup_buffer: Optional[float] = None
    sweep_param: Optional[Literal["BL", "BH", "B0", "H", "capacity"]] = None
    sweep_values: Tuple[float, ...] = ()
    output_dir: Optional[str] = None
    parallel: bool = False

    @model_validator(mode="after")
    def _check(self):
        if not self.controllers:
            raise SpecError("at least one controller is required")
        for c in self.controllers:
            if c not in CONTROLLER_KINDS:
                raise SpecError(f"unknown controller {c!r}, expected one of {CONTROLLER_KINDS}")
        if (self.ladder_manifest is None) == (self.ladder_synthetic is None):
            raise SpecError("give exactly one of ladder.manifest or ladder.synthetic.*")
        if (self.trace_file is None) == (not self.trace_breakpoints):
            raise SpecError("give exactly one of trace.file or trace.breakpoints")
        if self.sweep_param is not None and not self.sweep_values:
            raise SpecError("sweep.param needs sweep.values")
        return self


# ---------------------------------------------------------
# PARSING
# ---------------------------------------------------------

def _floats(text):
    return tuple(float(v) for v in text.replace(";", ",").split(",") if v.strip())


def _breakpoints(text):
    points = []
    for item in text.split(","):
        item = item.strip()
        if not item:
            continue
        t, _, c = item.partition(":")
        points.append((float(t), float(c)))
    return tuple(points)


def _bool(text):
    value = text.strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def parse_spec(path):
    """Read an experiment spec; relative file references resolve against the spec's folder."""
    base_dir = os.path.dirname(os.path.abspath(path))
    fields = {"overrides": {}, "controller_overrides": {}, "clients": []}
    synthetic = {}
    profile = {}
    delta_diff = None
    objective_text = None

    for line_no, key, value in read_key_values(path):
        try:
            if key == "scenario":
                fields["scenario"] = value
            elif key == "ladder.manifest":
                fields["ladder_manifest"] = os.path.join(base_dir, value)
            elif key.startswith("ladder.synthetic."):
                name = key[len("ladder.synthetic."):]
                if name == "bitrates_kbps":
                    synthetic[name] = BITRATE_PRESETS.get(value.strip()) or _floats(value)
                elif name in ("seed", "segments"):
                    synthetic[name] = int(value)
                elif name == "tau":
                    synthetic[name] = float(value)
                elif name in ComplexityProfile.model_fields:
                    profile[name] = float(value)
                else:
                    raise SpecError(f"unknown synthetic ladder parameter {name!r}")
            elif key == "trace.file":
                fields["trace_file"] = os.path.join(base_dir, value)
            elif key == "trace.breakpoints":
                fields["trace_breakpoints"] = _breakpoints(value)
            elif key == "trace.end":
                fields["trace_end"] = float(value)
            elif key == "controllers":
                fields["controllers"] = tuple(c.strip() for c in value.split(",") if c.strip())
            elif key == "objective":
                objective_text = value
            elif key == "objective.delta_diff":
                delta_diff = float(value)
            elif key.startswith("config."):
                _parse_override(fields, key[len("config."):], value)
            elif key == "client.start_segment":
                fields["clients"].append({"start_segment": int(value)})
            elif key == "client.stagger":
                if not fields["clients"]:
                    raise SpecError("client.stagger before any client.start_segment")
                fields["clients"][-1]["stagger"] = float(value)
            elif key == "sim.startup_buffer":
                fields["startup_buffer"] = float(value)
            elif key == "sweep.param":
                if value not in SWEEP_PARAMS:
                    raise SpecError(f"sweep.param must be one of {SWEEP_PARAMS}")
                fields["sweep_param"] = value
            elif key == "sweep.values":
                fields["sweep_values"] = _floats(value)
            elif key == "output_dir":
                fields["output_dir"] = os.path.join(base_dir, value)
            elif key == "parallel":
                fields["parallel"] = _bool(value)
            else:
                raise SpecError(f"unknown key {key!r}")
        except SpecError as e:
            raise SpecError(f"{path}:{line_no}: {e}")
        except ValueError as e:
            raise SpecError(f"{path}:{line_no}: bad value for {key}: {e}")

    if "controllers" not in fields:
        raise SpecError(f"{path}: missing 'controllers'")
    if synthetic or profile:
        fields["ladder_synthetic"] = SyntheticLadderSpec(
            **synthetic, profile=ComplexityProfile(**profile))
    if objective_text is not None or delta_diff is not None:
        fields["objective"] = Objective.parse(objective_text or "alpha-fair:0", delta_diff=delta_diff)
    if not fields["clients"]:
        fields["clients"] = [{}]
    fields["clients"] = [ClientSpec(**c) for c in fields["clients"]]
    return ExperimentSpec(**fields)


def _parse_override(fields, name, value):
    """``config.BL = 8`` or ``config.panda-baseline.B0 = 20``."""
    for kind in CONTROLLER_KINDS:
        if name.startswith(kind + "."):
            param = name[len(kind) + 1:]
            _check_param(param)
            fields["controller_overrides"].setdefault(kind, {})[param] = value
            return
    _check_param(name)
    fields["overrides"][name] = value


def _check_param(name):
    if name not in TABLE_NAMES:
        raise SpecError(f"unknown controller parameter {name!r}, expected one of {list(TABLE_NAMES)}")


# ---------------------------------------------------------
# RUNNING
# ---------------------------------------------------------

@dataclass
class ExperimentOutcome:
    files: List[str] = field(default_factory=list)
    comparison: Optional[pd.DataFrame] = None
    sweep: Optional[pd.DataFrame] = None
    reports: Dict[str, list] = field(default_factory=dict)


def build_ladder(spec):
    if spec.ladder_manifest is not None:
        return load_manifest(spec.ladder_manifest)
    return spec.ladder_synthetic.build()


def build_trace(spec):
    if spec.trace_file is not None:
        return load_trace(spec.trace_file)
    return BandwidthTrace(breakpoints=spec.trace_breakpoints, end_time=spec.trace_end)


def controller_config(spec, kind, ladder, extra=None):
    """Defaults for ``kind``, then global overrides, then per-controller ones."""
    base = ControllerConfig() if kind == "panda-cq" else ControllerConfig.panda_baseline()
    pairs = {"tau": repr(ladder.tau), **spec.overrides,
             **spec.controller_overrides.get(kind, {}), **(extra or {})}
    return base.with_overrides(**table_overrides(pairs.items()))


def _run_controller(spec, kind, ladder, trace, extra=None):
    config = controller_config(spec, kind, ladder, extra)
    sessions = [
        ClientSession(controller=kind, ladder=ladder, start_segment=c.start_segment,
                      start_time=c.stagger, config=config, session_id=i)
        for i, c in enumerate(spec.clients)
    ]
    seed = spec.ladder_synthetic.seed if spec.ladder_synthetic is not None else 0
    options = SimOptions(startup_buffer=spec.startup_buffer)
    return run_shared(sessions, trace, spec.objective, config, rng_seed=seed, options=options)


def _sweep_point(spec, kind, ladder, trace, param, value):
    extra = None
    if param == "capacity":
        trace = BandwidthTrace.constant(value, end_time=trace.end_time)
    else:
        extra = {param: repr(value)}
    reports = _run_controller(spec, kind, ladder, trace, extra)
    row = {"param": param, "value": value, "controller": kind}
    if any(r.steps for r in reports):
        row.update(compute_pooled_metrics(reports, ladder.convention).model_dump())
    return row


def run_experiment(spec, output_dir, parallel=None):
    """Run every controller of ``spec`` and write its outputs under ``output_dir``.

    Files written before a failure are removed again, and so is the output
    directory if this call created it.
    """
    parallel = spec.parallel if parallel is None else parallel
    n_jobs = -1 if parallel else 1
    outcome = ExperimentOutcome()
    ladder = build_ladder(spec)
    trace = build_trace(spec)
    created_dir = not os.path.isdir(output_dir)
    os.makedirs(output_dir, exist_ok=True)
    logger.info("scenario %s: %d segments, %d clients, controllers %s",
                spec.scenario, ladder.num_segments, len(spec.clients), ", ".join(spec.controllers))

    try:
        if spec.sweep_param is not None:
            rows = Parallel(n_jobs=n_jobs)(
                delayed(_sweep_point)(spec, kind, ladder, trace, spec.sweep_param, v)
                for v in spec.sweep_values
                for kind in spec.controllers
            )
            outcome.sweep = pd.DataFrame(rows)
            path = os.path.join(output_dir, "sweep.csv")
            outcome.sweep.to_csv(path, index=False, lineterminator="\n")
            outcome.files.append(path)
            return outcome

        results = Parallel(n_jobs=n_jobs)(
            delayed(_run_controller)(spec, kind, ladder, trace) for kind in spec.controllers
        )
        outcome.reports = dict(zip(spec.controllers, results))
        for kind, reports in outcome.reports.items():
            for report in reports:
                stem = os.path.join(output_dir, f"{kind}_client{report.session_id}")
                outcome.files.append(write_report_csv(report, stem + ".csv"))
                if report.summary is not None:
                    outcome.files.append(write_summary(
                        report.summary, stem + "_summary.csv",
                        scenario=spec.scenario, controller=kind, client=report.session_id))

        with_steps = {k: [r for r in v if r.steps] for k, v in outcome.reports.items()}
        with_steps = {k: v for k, v in with_steps.items() if v}
        if with_steps:
            outcome.comparison = comparison_table(with_steps, ladder.convention)
            path = os.path.join(output_dir, "comparison.csv")
            outcome.comparison.to_csv(path, index=False, lineterminator="\n")
            outcome.files.append(path)
        return outcome
    except BaseException:
        for path in outcome.files:
            if os.path.exists(path):
                os.remove(path)
        if created_dir and not os.listdir(output_dir):
            os.rmdir(output_dir)
        raise
