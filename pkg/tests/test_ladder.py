import numpy as np
import pytest

from cqstream.errors import LadderValidationError, ManifestParseError, QualityDomainError
from cqstream.ladder import (
    ELEVEN_LEVEL_KBPS,
    ComplexityProfile,
    Level,
    QualityConvention,
    SegmentLadder,
    gen_synthetic_ladder,
    kbps_to_bps,
    ladder_from_complexity,
    load_manifest,
    mse_to_psnr,
    quality_to_psnr,
    write_manifest,
)


def _write(tmp_path, text, name="ladder.csv"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


class TestSegmentLadder:
    def test_shape_helpers(self, two_step_ladder):
        assert two_step_ladder.num_segments == 2
        assert two_step_ladder.num_levels == 2
        assert two_step_ladder.duration == pytest.approx(2.0)
        assert two_step_ladder.levels_at(1)[1] == Level(1.7, 4.0)

    def test_window(self, two_step_ladder):
        window = two_step_ladder.window(1, 1)
        assert len(window) == 1
        assert window[0][0].bitrate == 0.6

    def test_window_past_the_end(self, two_step_ladder):
        with pytest.raises(IndexError):
            two_step_ladder.window(1, 2)

    def test_non_increasing_bitrate_names_cell(self):
        with pytest.raises(LadderValidationError) as exc:
            SegmentLadder.from_arrays(2.0, [[2.0e5, 1.0e5]], [[1.0, 2.0]])
        assert exc.value.segment == 0
        assert exc.value.level == 1

    def test_ragged_levels(self):
        segments = ((Level(1.0, 1.0), Level(2.0, 2.0)), (Level(1.0, 1.0),))
        with pytest.raises(LadderValidationError) as exc:
            SegmentLadder(tau=2.0, segments=segments)
        assert exc.value.segment == 1

    @pytest.mark.parametrize("convention, quality", [
        (QualityConvention.NEGATED_MSE, 3.0),
        (QualityConvention.PSNR, 0.0),
        (QualityConvention.ABSTRACT_POSITIVE, -1.0),
    ])
    def test_quality_sign_follows_convention(self, convention, quality):
        with pytest.raises(LadderValidationError):
            SegmentLadder.from_arrays(2.0, [[1.0e5]], [[quality]], convention)

    def test_tau_must_be_positive(self):
        with pytest.raises(LadderValidationError):
            SegmentLadder.from_arrays(0.0, [[1.0e5]], [[1.0]])


class TestManifest:
    def test_load_two_step(self, two_step_manifest, two_step_ladder):
        ladder = load_manifest(two_step_manifest)
        assert ladder.convention is QualityConvention.ABSTRACT_POSITIVE
        assert ladder.tau == 1.0
        assert ladder.segments == two_step_ladder.segments

    def test_quality_line_optional(self, tmp_path):
        path = _write(tmp_path, "tau,2.0\n0,0,100000,5\n0,1,200000,7\n")
        ladder = load_manifest(path)
        assert ladder.convention is QualityConvention.ABSTRACT_POSITIVE
        assert ladder.num_levels == 2

    def test_rows_in_any_order(self, tmp_path):
        path = _write(tmp_path, "tau,2.0\nquality,psnr\n1,0,100000,30\n0,1,200000,35\n"
                                "0,0,100000,31\n1,1,200000,36\n")
        ladder = load_manifest(path)
        assert ladder.quality_matrix().tolist() == [[31.0, 35.0], [30.0, 36.0]]

    def test_write_then_load_is_exact(self, tmp_path, synthetic_ladder):
        path = str(tmp_path / "synthetic.csv")
        write_manifest(synthetic_ladder, path)
        loaded = load_manifest(path)
        assert loaded == synthetic_ladder

    def test_bad_tau_line(self, tmp_path):
        path = _write(tmp_path, "duration,2.0\n0,0,100000,5\n")
        with pytest.raises(ManifestParseError) as exc:
            load_manifest(path)
        assert exc.value.line == 1

    def test_short_row_reports_line(self, tmp_path):
        path = _write(tmp_path, "tau,2.0\nquality,psnr\n0,0,100000,30\n0,1,200000\n")
        with pytest.raises(ManifestParseError) as exc:
            load_manifest(path)
        assert exc.value.line == 4
        assert f"{path}:4" in str(exc.value)

    def test_non_numeric_field(self, tmp_path):
        path = _write(tmp_path, "tau,2.0\n0,0,fast,30\n")
        with pytest.raises(ManifestParseError) as exc:
            load_manifest(path)
        assert exc.value.line == 2

    def test_duplicate_row(self, tmp_path):
        path = _write(tmp_path, "tau,2.0\n0,0,100000,5\n0,0,200000,7\n")
        with pytest.raises(ManifestParseError) as exc:
            load_manifest(path)
        assert exc.value.line == 3

    def test_unknown_convention(self, tmp_path):
        path = _write(tmp_path, "tau,2.0\nquality,ssim\n0,0,100000,5\n")
        with pytest.raises(ManifestParseError):
            load_manifest(path)

    def test_missing_segment(self, tmp_path):
        path = _write(tmp_path, "tau,2.0\n0,0,100000,5\n2,0,100000,5\n")
        with pytest.raises(LadderValidationError) as exc:
            load_manifest(path)
        assert exc.value.segment == 1

    def test_missing_level(self, tmp_path):
        path = _write(tmp_path, "tau,2.0\n0,0,100000,5\n0,1,200000,6\n1,0,100000,5\n")
        with pytest.raises(LadderValidationError) as exc:
            load_manifest(path)
        assert exc.value.segment == 1

    def test_decreasing_bitrate_in_file(self, tmp_path):
        path = _write(tmp_path, "tau,2.0\n0,0,200000,5\n0,1,100000,6\n")
        with pytest.raises(LadderValidationError) as exc:
            load_manifest(path)
        assert (exc.value.segment, exc.value.level) == (0, 1)

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_manifest(str(tmp_path / "nope.csv"))


class TestPsnr:
    def test_full_scale_mse_is_zero_db(self):
        assert mse_to_psnr(65025.0) == 0.0

    def test_lossless_hits_cap(self):
        assert mse_to_psnr(0.0) == 100.0
        assert mse_to_psnr(0.0, cap=60.0) == 60.0

    def test_array_input(self):
        psnr = mse_to_psnr(np.array([65025.0, 650.25]))
        np.testing.assert_allclose(psnr, [0.0, 20.0])

    def test_negative_mse(self):
        with pytest.raises(QualityDomainError):
            mse_to_psnr(-1.0)

    def test_quality_to_psnr(self):
        assert quality_to_psnr(-65025.0, "negated-mse") == 0.0
        assert quality_to_psnr(41.5, QualityConvention.PSNR) == 41.5
        assert quality_to_psnr(3.0, "abstract-positive") is None


class TestSyntheticLadder:
    def test_same_seed_same_ladder(self):
        rates = kbps_to_bps(ELEVEN_LEVEL_KBPS)
        a = gen_synthetic_ladder(3, 40, 11, 2.0, rates)
        b = gen_synthetic_ladder(3, 40, 11, 2.0, rates)
        assert a == b

    def test_seed_changes_content(self):
        rates = kbps_to_bps(ELEVEN_LEVEL_KBPS)
        a = gen_synthetic_ladder(3, 40, 11, 2.0, rates)
        b = gen_synthetic_ladder(4, 40, 11, 2.0, rates)
        assert not np.array_equal(a.quality_matrix(), b.quality_matrix())

    def test_quality_rises_with_bitrate(self, synthetic_ladder):
        q = synthetic_ladder.quality_matrix()
        assert synthetic_ladder.convention is QualityConvention.NEGATED_MSE
        assert (q < 0).all()
        assert (np.diff(q, axis=1) > 0).all()

    def test_complexity_range(self):
        profile = ComplexityProfile(theta=1.0e6, sigma2_min=2.0, sigma2_max=40.0)
        ladder = gen_synthetic_ladder(11, 200, 1, 2.0, [1.0e6], profile)
        mse = -ladder.quality_matrix()[:, 0]
        assert mse.min() >= 2.0 - 1e-9
        assert mse.max() <= 40.0 + 1e-9

    def test_bitrate_set_must_match_levels(self):
        with pytest.raises(LadderValidationError):
            gen_synthetic_ladder(0, 10, 3, 2.0, [1.0e5, 2.0e5])

    def test_bitrate_set_must_increase(self):
        with pytest.raises(LadderValidationError):
            gen_synthetic_ladder(0, 10, 2, 2.0, [2.0e5, 1.0e5])

    def test_doubling_complexity_doubles_mse(self):
        rates = kbps_to_bps(ELEVEN_LEVEL_KBPS)
        sigma2 = np.linspace(2.0, 40.0, 8)
        doubled = sigma2.copy()
        doubled[3] *= 2.0
        base = -ladder_from_complexity(sigma2, 2.0, rates).quality_matrix()
        scaled = -ladder_from_complexity(doubled, 2.0, rates).quality_matrix()
        np.testing.assert_array_equal(scaled[3], 2.0 * base[3])
        np.testing.assert_array_equal(np.delete(scaled, 3, axis=0), np.delete(base, 3, axis=0))
