"""Movement features from per-minute activity counts and LOESS group curves."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from typing import Mapping

import numpy as np

from . import kernels
from .errors import DataError
from .ingest import SEGMENT_SLOTS, SLOTS_PER_DAY, EpochSeries, PatientDay, segment_slice

M10_WIDTH = 600
L5_WIDTH = 300
DEFAULT_MIN_COVERAGE = 0.5
WINDOW_TIE_RTOL = 1e-9

FEATURE_NAMES = (
    "mean24", "sd24", "mean_day", "sd_day", "mean_night", "sd_night",
    "m10", "m10_start", "l5", "l5_start", "relative_amplitude",
    "rmssd", "rmssd_over_sd", "immobile_day", "immobile_night",
)


class InsufficientCoverage(DataError):
    """Too few observed minutes to compute a feature."""


@dataclass(frozen=True)
class MovementFeatures:
    """The fifteen per-site movement features of one patient-day.

    Window starts are minutes since the anchor; undefined features are NaN and
    listed in ``undefined`` with the reason.
    """

    mean24: float = math.nan
    sd24: float = math.nan
    mean_day: float = math.nan
    sd_day: float = math.nan
    mean_night: float = math.nan
    sd_night: float = math.nan
    m10: float = math.nan
    m10_start: float = math.nan
    l5: float = math.nan
    l5_start: float = math.nan
    relative_amplitude: float = math.nan
    rmssd: float = math.nan
    rmssd_over_sd: float = math.nan
    immobile_day: float = math.nan
    immobile_night: float = math.nan
    undefined: Mapping[str, str] = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self) if f.name != "undefined"}

    @property
    def m10_start_hours(self) -> float:
        return self.m10_start / 60.0

    @property
    def l5_start_hours(self) -> float:
        return self.l5_start / 60.0


@dataclass(frozen=True, eq=False)
class SmoothedCurve:
    offsets: np.ndarray
    values: np.ndarray
    n_obs: np.ndarray
    fallback: np.ndarray

    @property
    def any_fallback(self) -> bool:
        return bool(self.fallback.any())


def _counts(series) -> np.ndarray:
    if isinstance(series, EpochSeries):
        return series.counts
    arr = np.asarray(series, dtype=float)
    if arr.ndim != 1:
        raise ValueError("activity series must be one-dimensional")
    return arr


def _segment(series, segment):
    counts = _counts(series)
    if segment == "all":
        return counts
    if counts.shape[0] != SLOTS_PER_DAY:
        raise ValueError("day/night segments need a full 1440-slot series")
    return counts[segment_slice(segment)]


def mean_sd(series, segment: str = "all", ddof: int = 0) -> tuple[float, float]:
    """Mean and SD over observed minutes of a segment (population SD by default)."""
    values = _segment(series, segment)
    values = values[~np.isnan(values)]
    if values.size == 0:
        raise InsufficientCoverage(f"no observed minutes in segment {segment!r}")
    if values.size <= ddof:
        raise InsufficientCoverage(f"need more than {ddof} observed minutes for SD")
    return float(np.mean(values)), float(np.std(values, ddof=ddof))


def extreme_window(series, width_minutes: int, mode: str = "max",
                   min_coverage: float = DEFAULT_MIN_COVERAGE) -> tuple[float, int]:
    """Sum and start offset of the most (``max``) or least (``min``) active window.

    Windows slide one minute at a time and never wrap past the end of the
    series. A window needs ``min_coverage`` of its minutes observed; its sum is
    the observed sum scaled up to the full width. Ties go to the earliest start.
    """
    if mode not in ("max", "min"):
        raise ValueError("mode must be 'max' or 'min'")
    counts = _counts(series)
    if not 1 <= width_minutes <= counts.shape[0]:
        raise ValueError(f"window width must be in [1, {counts.shape[0]}]")
    min_count = int(math.ceil(min_coverage * width_minutes))
    total, start = kernels.window_extreme(
        np.ascontiguousarray(counts, dtype=np.float64), int(width_minutes),
        mode == "max", min_count, WINDOW_TIE_RTOL,
    )
    if start < 0:
        raise InsufficientCoverage(
            f"no {width_minutes}-minute window has {min_coverage:.0%} of its minutes observed"
        )
    return float(total), int(start)


def relative_amplitude(m10: float, l5: float) -> float:
    """(M10 - L5) / (M10 + L5), with both given as per-hour means."""
    if m10 < 0 or l5 < 0:
        raise ValueError("M10 and L5 must be non-negative")
    if m10 + l5 == 0:
        raise ValueError("relative amplitude undefined when M10 + L5 = 0")
    if m10 < l5:
        # equal up to rounding (flat series) means no rhythm, not an error
        if l5 - m10 <= WINDOW_TIE_RTOL * l5:
            return 0.0
        raise ValueError("M10 per-hour mean below L5 per-hour mean")
    return (m10 - l5) / (m10 + l5)


def rmssd(series) -> float:
    """Root mean square of successive differences over adjacent observed pairs."""
    counts = _counts(series)
    diffs = np.diff(counts)
    diffs = diffs[~np.isnan(diffs)]
    if diffs.size == 0:
        raise InsufficientCoverage("no pair of adjacent observed minutes")
    return float(np.sqrt(np.mean(diffs * diffs)))


def rmssd_ratio(series, ddof: int = 0) -> float:
    _, sd = mean_sd(series, "all", ddof)
    if sd == 0:
        raise ValueError("RMSSD/SD undefined when SD = 0")
    return rmssd(series) / sd


def immobile_minutes(series, segment: str) -> int:
    """Observed minutes with a count of exactly zero; missing minutes never count."""
    if segment not in ("day", "night"):
        raise ValueError("segment must be 'day' or 'night'")
    return int(np.count_nonzero(_segment(series, segment) == 0.0))


def feature_vector(source, site: str | None = None, *, min_coverage: float = DEFAULT_MIN_COVERAGE,
                   ddof: int = 0) -> MovementFeatures:
    """All fifteen features for one site of a patient-day (or one EpochSeries).

    A segment-level feature needs ``min_coverage`` of that segment observed;
    otherwise it is NaN and its reason is recorded.
    """
    if isinstance(source, PatientDay):
        if site not in source.epochs:
            raise DataError(f"no {site} activity for patient {source.patient_id} on {source.day}")
        series = source.epochs[site]
    else:
        series = source
    counts = _counts(series)
    if counts.shape[0] != SLOTS_PER_DAY:
        raise ValueError("feature_vector needs a full 1440-slot series")

    out: dict[str, float] = {}
    why: dict[str, str] = {}

    def attempt(names, fn):
        try:
            values = fn()
        except (DataError, ValueError) as exc:
            for n in names:
                why[n] = str(exc)
            return
        if len(names) == 1:
            values = (values,)
        out.update(zip(names, (float(v) for v in values)))

    def covered(segment):
        n_slots = SLOTS_PER_DAY if segment == "all" else SEGMENT_SLOTS
        observed = int(np.count_nonzero(~np.isnan(_segment(counts, segment))))
        if observed < min_coverage * n_slots:
            raise InsufficientCoverage(
                f"{segment} coverage {observed}/{n_slots} below {min_coverage:.0%}"
            )

    def seg_stats(segment):
        covered(segment)
        return mean_sd(counts, segment, ddof)

    attempt(("mean24", "sd24"), lambda: seg_stats("all"))
    attempt(("mean_day", "sd_day"), lambda: seg_stats("day"))
    attempt(("mean_night", "sd_night"), lambda: seg_stats("night"))
    attempt(("m10", "m10_start"), lambda: extreme_window(counts, M10_WIDTH, "max", min_coverage))
    attempt(("l5", "l5_start"), lambda: extreme_window(counts, L5_WIDTH, "min", min_coverage))
    if "m10" in out and "l5" in out:
        attempt(("relative_amplitude",),
                lambda: relative_amplitude(out["m10"] / (M10_WIDTH / 60), out["l5"] / (L5_WIDTH / 60)))
    else:
        why["relative_amplitude"] = "M10 or L5 undefined"

    def _rmssd():
        covered("all")
        return rmssd(counts)

    attempt(("rmssd",), _rmssd)
    if "rmssd" in out and "sd24" in out:
        attempt(("rmssd_over_sd",), lambda: rmssd_ratio(counts, ddof))
    else:
        why["rmssd_over_sd"] = "RMSSD or SD undefined"

    def _immobile(segment):
        covered(segment)
        return immobile_minutes(counts, segment)

    attempt(("immobile_day",), lambda: _immobile("day"))
    attempt(("immobile_night",), lambda: _immobile("night"))
    return MovementFeatures(**out, undefined=why)


def loess_smooth(x, y, span: float = 0.3, degree: int = 1, grid=None) -> SmoothedCurve:
    """Tricube-weighted local polynomial regression.

    The neighbourhood of each grid point holds the ``ceil(span * n)`` nearest
    samples. Where the local fit is singular the local weighted mean is used
    and flagged in ``fallback``. By default the grid is the distinct ``x``
    values, so the curve exists only where something was observed.
    """
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if x.shape != y.shape:
        raise ValueError("x and y must have the same length")
    keep = ~(np.isnan(x) | np.isnan(y))
    x, y = x[keep], y[keep]
    if degree not in (0, 1, 2):
        raise ValueError("degree must be 0, 1 or 2")
    if not 0 < span <= 1:
        raise ValueError("span must be in (0, 1]")
    n = x.size
    if n < degree + 1:
        raise DataError(f"LOESS of degree {degree} needs at least {degree + 1} points, got {n}")
    order = np.argsort(x, kind="stable")
    x, y = x[order], y[order]
    uniq, counts = np.unique(x, return_counts=True)
    if grid is None:
        grid = uniq
        n_obs = counts
    else:
        grid = np.asarray(grid, dtype=float)
        lookup = dict(zip(uniq.tolist(), counts.tolist()))
        n_obs = np.array([lookup.get(g, 0) for g in grid.tolist()], dtype=np.int64)
    q = min(n, max(1, int(math.ceil(span * n))))
    values, fallback = kernels.loess_fit(x, y, np.ascontiguousarray(grid), q, degree)
    return SmoothedCurve(grid, values, np.asarray(n_obs, dtype=np.int64), fallback)


def group_curve(series_list, span: float = 0.3, degree: int = 1) -> SmoothedCurve:
    """LOESS of all observed (minute offset, count) points pooled over a group."""
    xs, ys = [], []
    for s in series_list:
        counts = _counts(s)
        obs = ~np.isnan(counts)
        xs.append(np.flatnonzero(obs).astype(float))
        ys.append(counts[obs])
    if not xs:
        raise DataError("group curve needs at least one series")
    return loess_smooth(np.concatenate(xs), np.concatenate(ys), span, degree)
