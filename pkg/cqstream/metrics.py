"""Summary statistics and CSV writers for simulation reports."""

from dataclasses import asdict
from typing import Optional

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict

from cqstream.errors import SimulationConfigError
from cqstream.ladder import QualityConvention, quality_to_psnr

# Column order of the per-step report CSV
REPORT_COLUMNS = [
    "wall_time", "segment_index", "level", "bitrate", "quality",
    "buffer_before", "buffer_after", "x_hat", "y_hat", "x_tilde",
    "t_hat", "t_download", "t_actual", "b_offset", "horizon", "playing", "fallback",
]

PSNR_PERCENTILE = 5.0


class SummaryMetrics(BaseModel):
    model_config = ConfigDict(frozen=True)

    segments: int
    mean_quality: float
    min_quality: float
    quality_stddev: float
    psnr_p5: Optional[float] = None
    psnr_mean: Optional[float] = None
    avg_bitrate: float
    stall_count: int = 0
    stall_total: float = 0.0
    min_buffer: float
    max_buffer: float


def _summarize(steps, stalls, tau, convention):
    if not steps:
        raise SimulationConfigError("cannot summarize an empty report")
    convention = QualityConvention(convention)
    quality = np.array([s.quality for s in steps], dtype=float)
    bitrate = np.array([s.bitrate for s in steps], dtype=float)
    after = np.array([s.buffer_after for s in steps], dtype=float)
    playing = np.array([s.playing for s in steps], dtype=bool)

    psnr = quality_to_psnr(quality, convention)
    psnr_p5 = psnr_mean = None
    if psnr is not None:
        psnr_p5 = float(np.percentile(psnr, PSNR_PERCENTILE, method="inverted_cdf"))
        psnr_mean = float(np.mean(psnr))

    # Lowest point of each step is just before the segment lands
    lows = np.maximum(after - tau, 0.0)
    lows = lows[playing] if playing.any() else lows

    return SummaryMetrics(
        segments=len(steps),
        mean_quality=float(np.mean(quality)),
        min_quality=float(np.min(quality)),
        quality_stddev=float(np.std(quality)),
        psnr_p5=psnr_p5,
        psnr_mean=psnr_mean,
        avg_bitrate=float(np.mean(bitrate)),
        stall_count=len(stalls),
        stall_total=float(sum(s.duration for s in stalls)),
        min_buffer=float(np.min(lows)),
        max_buffer=float(np.max(after)),
    )


def compute_metrics(report, convention=None):
    convention = convention if convention is not None else report.convention
    return _summarize(report.steps, report.stalls, report.tau, convention)


def compute_pooled_metrics(reports, convention=None):
    """One summary over the segments of several clients (e.g. a shared-link run)."""
    reports = [r for r in reports if r.steps]
    if not reports:
        raise SimulationConfigError("cannot summarize empty reports")
    convention = convention if convention is not None else reports[0].convention
    steps = [s for r in reports for s in r.steps]
    stalls = [s for r in reports for s in r.stalls]
    return _summarize(steps, stalls, reports[0].tau, convention)


def report_frame(report):
    rows = [asdict(s) for s in report.steps]
    return pd.DataFrame(rows, columns=REPORT_COLUMNS)


def write_report_csv(report, path):
    report_frame(report).to_csv(path, index=False, lineterminator="\n")
    return path


def write_summary(summary, path, **extra):
    """Flat ``key,value`` block; ``extra`` keys come first."""
    values = {**extra, **summary.model_dump()}
    pd.Series(values, dtype=object).to_csv(path, header=False, lineterminator="\n")
    return path


def comparison_table(results, convention=None):
    """Long table with one row per (controller, metric).

    ``results`` maps controller name -> list of reports for that controller.
    """
    rows = []
    for controller, reports in results.items():
        summary = compute_pooled_metrics(reports, convention)
        for metric, value in summary.model_dump().items():
            rows.append({"controller": controller, "metric": metric, "value": value})
    return pd.DataFrame(rows, columns=["controller", "metric", "value"])
