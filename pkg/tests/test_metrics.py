import pandas as pd
import pytest

from cqstream.dp_optimizer import plan
from cqstream.errors import SimulationConfigError
from cqstream.metrics import (
    REPORT_COLUMNS,
    comparison_table,
    compute_metrics,
    compute_pooled_metrics,
    write_report_csv,
    write_summary,
)
from cqstream.replay import plan_report
from cqstream.sim import SimReport, Stall, StepRecord
from cqstream.utility import Objective


def _report(qualities, convention="psnr", buffers=None, session_id=0):
    report = SimReport(session_id=session_id, controller="panda-cq", tau=2.0,
                       convention=convention)
    buffers = buffers or [12.0] * len(qualities)
    for i, (q, b) in enumerate(zip(qualities, buffers)):
        report.steps.append(StepRecord(wall_time=2.0 * i, segment_index=i, level=0,
                                       bitrate=1.0e6 + i, quality=q, buffer_before=b - 2.0,
                                       buffer_after=b, playing=True))
    return report


class TestComputeMetrics:
    def test_two_step_max_min_run(self, two_step_request):
        request = two_step_request(Objective.max_min())
        summary = compute_metrics(plan_report(request, plan(request)))
        assert summary.min_quality == 2.0
        assert summary.segments == 2
        assert summary.psnr_p5 is None

    def test_psnr_p5_is_nearest_rank(self):
        qualities = [33.0, 21.0, 40.0, 25.0, 38.0, 22.0, 30.0, 27.0, 35.0, 24.0,
                     39.0, 23.0, 31.0, 28.0, 36.0, 26.0, 34.0, 29.0, 37.0, 32.0]
        summary = compute_metrics(_report(qualities))
        # ceil(0.05 * 20) = 1st smallest
        assert summary.psnr_p5 == 21.0
        assert summary.psnr_mean == pytest.approx(30.5)

    def test_negated_mse_reports_psnr(self):
        summary = compute_metrics(_report([-65025.0, -650.25], convention="negated-mse"))
        assert summary.psnr_p5 == pytest.approx(0.0)
        assert summary.min_quality == -65025.0

    def test_psnr_p5_of_twenty_mse_segments(self):
        qualities = [-65025.0] * 19 + [-650.25]
        summary = compute_metrics(_report(qualities, convention="negated-mse"))
        assert summary.psnr_p5 == 0.0
        assert summary.psnr_mean == pytest.approx(1.0)

    def test_buffer_extremes(self):
        summary = compute_metrics(_report([30.0, 31.0, 32.0], buffers=[5.0, 1.0, 20.0]))
        assert summary.min_buffer == 0.0
        assert summary.max_buffer == 20.0

    def test_stalls_are_counted(self):
        report = _report([30.0, 31.0])
        report.stalls = [Stall(start_time=3.0, duration=1.5), Stall(start_time=9.0, duration=0.5)]
        summary = compute_metrics(report)
        assert summary.stall_count == 2
        assert summary.stall_total == pytest.approx(2.0)

    def test_empty_report(self):
        with pytest.raises(SimulationConfigError):
            compute_metrics(_report([]))

    def test_pooled_over_clients(self):
        pooled = compute_pooled_metrics([_report([30.0, 32.0]), _report([20.0], session_id=1)])
        assert pooled.segments == 3
        assert pooled.min_quality == 20.0
        assert pooled.mean_quality == pytest.approx(82.0 / 3)


class TestWriters:
    def test_report_csv_columns(self, tmp_path):
        path = write_report_csv(_report([30.0, 31.0]), str(tmp_path / "report.csv"))
        frame = pd.read_csv(path)
        assert list(frame.columns) == REPORT_COLUMNS
        assert frame["quality"].tolist() == [30.0, 31.0]

    def test_summary_block(self, tmp_path):
        summary = compute_metrics(_report([30.0, 31.0]))
        path = write_summary(summary, str(tmp_path / "summary.csv"), scenario="flat")
        lines = open(path).read().splitlines()
        assert lines[0] == "scenario,flat"
        assert "segments,2" in lines

    def test_comparison_table(self):
        table = comparison_table({"panda-cq": [_report([30.0, 32.0])],
                                  "rate-based": [_report([20.0, 40.0])]})
        assert list(table.columns) == ["controller", "metric", "value"]
        wide = table.pivot(index="metric", columns="controller", values="value")
        assert wide.loc["mean_quality", "panda-cq"] == 31.0
        assert wide.loc["min_quality", "rate-based"] == 20.0
