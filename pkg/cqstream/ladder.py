"""
Segment ladders: per-segment, per-level (bitrate, quality) tables.

Covers:
- SegmentLadder validation (levels, bitrate monotonicity, quality sign)
- CSV manifest load / write
- MSE <-> PSNR conversion
- Synthetic ladders from a seeded scene-complexity signal
"""

import io
import logging
import math
from enum import Enum
from typing import NamedTuple, Sequence, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, model_validator

from cqstream import config
from cqstream.errors import (
    LadderValidationError,
    ManifestParseError,
    QualityDomainError,
)

logger = logging.getLogger(__name__)

MANIFEST_COLUMNS = ["segment_index", "level_index", "bitrate_bps", "quality"]

# Bitrate sets used in the evaluation runs (kbps)
SEVEN_LEVEL_KBPS = (400, 600, 800, 1200, 1600, 2400, 3200)
ELEVEN_LEVEL_KBPS = (400, 600, 800, 1200, 1600, 2400, 3200, 4400, 5600, 7000, 9000)


class QualityConvention(str, Enum):
    NEGATED_MSE = "negated-mse"
    PSNR = "psnr"
    ABSTRACT_POSITIVE = "abstract-positive"

    @property
    def positive(self):
        return self is not QualityConvention.NEGATED_MSE


class Level(NamedTuple):
    bitrate: float
    quality: float


class SegmentLadder(BaseModel):
    """Bitrate/quality options for every segment of one video."""

    model_config = ConfigDict(frozen=True)

    tau: float
    convention: QualityConvention = QualityConvention.ABSTRACT_POSITIVE
    segments: Tuple[Tuple[Level, ...], ...]

    @model_validator(mode="after")
    def _check_invariants(self):
        if not (math.isfinite(self.tau) and self.tau > 0):
            raise LadderValidationError(f"tau must be a positive number of seconds, got {self.tau}")
        if len(self.segments) == 0:
            raise LadderValidationError("ladder has no segments")

        num_levels = max(len(levels) for levels in self.segments)
        if num_levels == 0:
            raise LadderValidationError("ladder has no levels")

        for n, levels in enumerate(self.segments):
            if len(levels) != num_levels:
                raise LadderValidationError(
                    f"ragged levels: has {len(levels)}, expected {num_levels}", segment=n)
            prev_bitrate = None
            for l, (bitrate, quality) in enumerate(levels):
                if not (math.isfinite(bitrate) and bitrate > 0):
                    raise LadderValidationError(
                        f"bitrate must be positive, got {bitrate}", segment=n, level=l)
                if prev_bitrate is not None and bitrate <= prev_bitrate:
                    raise LadderValidationError(
                        f"bitrate {bitrate} not above previous level's {prev_bitrate}",
                        segment=n, level=l)
                prev_bitrate = bitrate
                if not math.isfinite(quality):
                    raise LadderValidationError("quality is not finite", segment=n, level=l)
                if self.convention.positive and quality <= 0:
                    raise LadderValidationError(
                        f"{self.convention.value} quality must be > 0, got {quality}",
                        segment=n, level=l)
                if not self.convention.positive and quality > 0:
                    raise LadderValidationError(
                        f"negated-mse quality must be <= 0, got {quality}",
                        segment=n, level=l)
        return self

    @classmethod
    def from_arrays(cls, tau, bitrates, qualities, convention=QualityConvention.ABSTRACT_POSITIVE):
        """Build from two (segments x levels) arrays."""
        bitrates = np.asarray(bitrates, dtype=float)
        qualities = np.asarray(qualities, dtype=float)
        if bitrates.shape != qualities.shape or bitrates.ndim != 2:
            raise LadderValidationError(
                f"bitrate and quality arrays must share a 2-D shape, got "
                f"{bitrates.shape} and {qualities.shape}")
        segments = tuple(
            tuple(Level(float(r), float(q)) for r, q in zip(row_r, row_q))
            for row_r, row_q in zip(bitrates, qualities)
        )
        return cls(tau=float(tau), convention=convention, segments=segments)

    @property
    def num_segments(self):
        return len(self.segments)

    @property
    def num_levels(self):
        return len(self.segments[0])

    @property
    def duration(self):
        return self.tau * self.num_segments

    def levels_at(self, n):
        return self.segments[n]

    def window(self, start, horizon):
        """Level lists for segments start .. start+horizon-1."""
        if start < 0 or horizon < 1 or start + horizon > self.num_segments:
            raise IndexError(
                f"window [{start}, {start + horizon}) outside 0..{self.num_segments}")
        return list(self.segments[start:start + horizon])

    def quality_matrix(self):
        return np.array([[lv.quality for lv in levels] for levels in self.segments])


# ---------------------------------------------------------
# MANIFEST I/O
# ---------------------------------------------------------

def _split_header(line):
    return [part.strip() for part in line.strip().split(",")]


def _to_float(token):
    # float() is correctly rounded, so repr -> float is exact
    try:
        return float(token)
    except (TypeError, ValueError):
        return np.nan


def load_manifest(path):
    """Parse a manifest CSV into a validated SegmentLadder.

    Layout::

        tau,2.0
        quality,negated-mse                              (optional)
        segment_index,level_index,bitrate_bps,quality    (optional)
        0,0,400000,-35.2
        ...
    """
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()

    cursor = 0
    while cursor < len(lines) and not lines[cursor].strip():
        cursor += 1
    if cursor >= len(lines):
        raise ManifestParseError("empty manifest", path=path, line=1)

    head = _split_header(lines[cursor])
    if len(head) != 2 or head[0] != "tau":
        raise ManifestParseError(f"expected 'tau,<seconds>', got {lines[cursor]!r}",
                                 path=path, line=cursor + 1)
    tau = _to_float(head[1])
    if np.isnan(tau):
        raise ManifestParseError(f"tau is not a number: {head[1]!r}", path=path, line=cursor + 1)
    cursor += 1

    convention = QualityConvention.ABSTRACT_POSITIVE
    if cursor < len(lines) and _split_header(lines[cursor])[0] == "quality":
        head = _split_header(lines[cursor])
        try:
            convention = QualityConvention(head[1] if len(head) == 2 else "")
        except ValueError:
            raise ManifestParseError(
                f"unknown quality convention in {lines[cursor]!r}", path=path, line=cursor + 1)
        cursor += 1

    if cursor < len(lines) and _split_header(lines[cursor])[0] == MANIFEST_COLUMNS[0]:
        cursor += 1

    # 1-based line number of the first data row
    first_row_line = cursor + 1
    body = "\n".join(lines[cursor:])
    if not body.strip():
        raise ManifestParseError("manifest has no segment rows", path=path, line=first_row_line)

    for offset, line in enumerate(lines[cursor:]):
        if line.strip() and len(line.split(",")) != len(MANIFEST_COLUMNS):
            raise ManifestParseError(
                f"expected {len(MANIFEST_COLUMNS)} fields, got {line!r}",
                path=path, line=first_row_line + offset)

    try:
        raw = pd.read_csv(
            io.StringIO(body),
            header=None,
            names=MANIFEST_COLUMNS,
            dtype=str,
            skip_blank_lines=False,
        )
    except pd.errors.ParserError as e:
        raise ManifestParseError(f"malformed row ({e})", path=path)

    raw = raw.dropna(how="all")
    df = raw.apply(lambda col: col.str.strip().map(_to_float))
    bad = df.isna().any(axis=1)
    if bad.any():
        idx = bad.idxmax()
        row = ",".join("" if pd.isna(v) else str(v) for v in raw.loc[idx])
        raise ManifestParseError(f"malformed row {row!r}", path=path, line=first_row_line + idx)

    for col in ("segment_index", "level_index"):
        wrong = (df[col] != df[col].round()) | (df[col] < 0)
        if wrong.any():
            idx = wrong.idxmax()
            raise ManifestParseError(f"{col} must be a non-negative integer",
                                     path=path, line=first_row_line + idx)
    df[["segment_index", "level_index"]] = df[["segment_index", "level_index"]].astype(int)

    dupes = df.duplicated(subset=["segment_index", "level_index"])
    if dupes.any():
        idx = dupes.idxmax()
        raise ManifestParseError(
            f"duplicate row for segment {df.at[idx, 'segment_index']} "
            f"level {df.at[idx, 'level_index']}",
            path=path, line=first_row_line + idx)

    df = df.sort_values(["segment_index", "level_index"], kind="stable")
    seg_ids = sorted(df["segment_index"].unique())
    if seg_ids != list(range(len(seg_ids))):
        missing = sorted(set(range(max(seg_ids) + 1)) - set(seg_ids))
        raise LadderValidationError("segment missing from manifest", segment=missing[0])

    num_levels = int(df.groupby("segment_index")["level_index"].count().max())
    segments = []
    for n, group in df.groupby("segment_index", sort=True):
        levels = list(group["level_index"])
        if levels != list(range(num_levels)):
            missing = sorted(set(range(num_levels)) - set(levels))
            detail = f"missing level {missing[0]}" if missing else f"level indices {levels}"
            raise LadderValidationError(
                f"ragged levels: {detail} (expected {num_levels} levels)", segment=int(n))
        segments.append(tuple(
            Level(float(r), float(q)) for r, q in zip(group["bitrate_bps"], group["quality"])
        ))

    ladder = SegmentLadder(tau=tau, convention=convention, segments=tuple(segments))
    logger.info("Loaded %s: %d segments x %d levels, tau=%gs (%s)",
                path, ladder.num_segments, ladder.num_levels, ladder.tau, convention.value)
    return ladder


def write_manifest(ladder, path):
    """Write ``ladder`` so that ``load_manifest`` returns it bit-exactly."""
    rows = [
        (n, l, repr(float(level.bitrate)), repr(float(level.quality)))
        for n, levels in enumerate(ladder.segments)
        for l, level in enumerate(levels)
    ]
    df = pd.DataFrame(rows, columns=MANIFEST_COLUMNS)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(f"tau,{float(ladder.tau)!r}\n")
        fh.write(f"quality,{ladder.convention.value}\n")
        df.to_csv(fh, index=False, lineterminator="\n")
    return path


# ---------------------------------------------------------
# QUALITY METRICS
# ---------------------------------------------------------

def mse_to_psnr(mse, cap=None):
    """10*log10(255^2 / mse) in dB; mse == 0 maps to ``cap``.

    Accepts a scalar or an array. Negative input raises QualityDomainError.
    """
    cap = config.PSNR_CAP_DB if cap is None else cap
    arr = np.asarray(mse, dtype=float)
    if np.any(np.isnan(arr)) or np.any(arr < 0):
        raise QualityDomainError(f"mse must be >= 0, got {mse}")
    with np.errstate(divide="ignore"):
        psnr = np.where(arr == 0, cap, 10.0 * np.log10(255.0 ** 2 / np.where(arr == 0, 1.0, arr)))
    if psnr.ndim == 0:
        return float(psnr)
    return psnr


def quality_to_psnr(quality, convention, cap=None):
    """PSNR for a quality value, or None when the convention has no PSNR reading."""
    convention = QualityConvention(convention)
    if convention is QualityConvention.NEGATED_MSE:
        return mse_to_psnr(-np.asarray(quality, dtype=float), cap=cap)
    if convention is QualityConvention.PSNR:
        arr = np.asarray(quality, dtype=float)
        return float(arr) if arr.ndim == 0 else arr
    return None


# ---------------------------------------------------------
# SYNTHETIC LADDERS
# ---------------------------------------------------------

class ComplexityProfile(BaseModel):
    """Power-law rate-distortion model: mse = sigma2 * (R / theta) ** -gamma."""

    model_config = ConfigDict(frozen=True)

    theta: float = Field(1.0e6, gt=0)
    gamma: float = Field(1.0, gt=0)
    sigma2_min: float = Field(2.0, gt=0)
    sigma2_max: float = Field(40.0, gt=0)
    scene_mean: float = Field(5.0, ge=1.0)

    @model_validator(mode="after")
    def _check_range(self):
        if self.sigma2_max < self.sigma2_min:
            raise ValueError("sigma2_max must be >= sigma2_min")
        return self


def scene_complexity(rng, segments, profile):
    """Piecewise-constant sigma^2 per segment: geometric scene lengths, log-uniform levels."""
    sigma2 = np.empty(segments)
    pos = 0
    lo, hi = np.log(profile.sigma2_min), np.log(profile.sigma2_max)
    while pos < segments:
        length = int(rng.geometric(1.0 / profile.scene_mean))
        value = float(np.exp(rng.uniform(lo, hi))) if hi > lo else profile.sigma2_min
        sigma2[pos:pos + length] = value
        pos += length
    return sigma2


def ladder_from_complexity(sigma2, tau, bitrate_set, profile=None):
    """Negated-MSE ladder for a given per-segment complexity signal."""
    profile = profile or ComplexityProfile()
    sigma2 = np.asarray(sigma2, dtype=float)
    rates = np.asarray(bitrate_set, dtype=float)
    mse = sigma2[:, None] * (rates[None, :] / profile.theta) ** (-profile.gamma)
    bitrates = np.broadcast_to(rates, mse.shape)
    return SegmentLadder.from_arrays(tau, bitrates, -mse, QualityConvention.NEGATED_MSE)


def gen_synthetic_ladder(seed, segments, levels, tau, bitrate_set, complexity_profile=None):
    """Deterministic CBR ladder with content-dependent quality.

    Every segment offers the same ``bitrate_set``; the quality at each level
    follows the scene complexity of that segment.
    """
    bitrate_set = [float(r) for r in bitrate_set]
    if len(bitrate_set) != levels:
        raise LadderValidationError(
            f"bitrate_set has {len(bitrate_set)} entries, expected {levels}")
    if any(b <= a for a, b in zip(bitrate_set, bitrate_set[1:])):
        raise LadderValidationError("bitrate_set must be strictly increasing")
    if segments < 1:
        raise LadderValidationError("segments must be >= 1")

    profile = complexity_profile or ComplexityProfile()
    rng = np.random.default_rng(seed)
    sigma2 = scene_complexity(rng, segments, profile)
    return ladder_from_complexity(sigma2, tau, bitrate_set, profile)


def kbps_to_bps(values: Sequence[float]):
    return [float(v) * config.KBPS for v in values]

