"""Sound pressure level, light exposure and visitation disruption per patient-day."""

from __future__ import annotations

import math
from dataclasses import dataclass
from datetime import timedelta
from typing import Iterable, Sequence

import numpy as np

from .errors import DataError
from .ingest import EnvSample, OccupancyFrame, PatientDay, anchor_for, minute_offset, segment_of

REFERENCE_PRESSURE = 2e-5  # Pa, threshold of hearing
WHO_NIGHT_MEAN_DB = 35.0
WHO_NIGHT_MAX_DB = 40.0


def spl_from_pressure(p, p0: float = REFERENCE_PRESSURE):
    """Sound pressure level in dB: 20 log10(p / p0)."""
    if p0 <= 0:
        raise ValueError("reference pressure must be > 0")
    arr = np.asarray(p, dtype=float)
    if np.any(~(arr > 0)):
        raise ValueError("sound pressure must be > 0")
    out = 20.0 * np.log10(arr / p0)
    return float(out) if out.ndim == 0 else out


def pressure_from_spl(db, p0: float = REFERENCE_PRESSURE):
    out = p0 * 10.0 ** (np.asarray(db, dtype=float) / 20.0)
    return float(out) if out.ndim == 0 else out


def mean_spl(levels_db, mode: str = "energy") -> float:
    """Average of dB levels: energy mean 10 log10(mean 10^(L/10)) or plain arithmetic."""
    x = np.asarray(levels_db, dtype=float).ravel()
    if x.size == 0:
        raise DataError("mean SPL of no samples")
    if mode == "arithmetic":
        return float(np.mean(x))
    if mode != "energy":
        raise ValueError("mode must be 'energy' or 'arithmetic'")
    # factor out the max so large levels do not overflow
    top = float(np.max(x))
    return top + 10.0 * math.log10(float(np.mean(10.0 ** ((x - top) / 10.0))))


def sample_db(sample: EnvSample, p0: float = REFERENCE_PRESSURE) -> float:
    return spl_from_pressure(sample.sound, p0) if sample.sound_kind == "pa" else float(sample.sound)


@dataclass(frozen=True)
class SplSummary:
    hourly_db: tuple
    hourly_lux: tuple
    day_mean_db: float
    night_mean_db: float
    night_max_db: float
    night_minutes_above_35: int
    night_light_mean: float
    night_mean_noncompliant: bool
    night_max_noncompliant: bool

    @property
    def who_compliant(self) -> bool:
        return not (self.night_mean_noncompliant or self.night_max_noncompliant)


def env_summary(patient_day: PatientDay | None = None, samples: Iterable[EnvSample] | None = None,
                mode: str = "energy", anchor=None, p0: float = REFERENCE_PRESSURE) -> SplSummary:
    """Hourly SPL and light on the 24 anchored hours plus night WHO flags.

    Hours without samples are NaN. Minutes above 35 dB count night minutes whose
    own mean level exceeds 35 dB.
    """
    if patient_day is not None:
        anchor = patient_day.anchor
        if samples is None:
            samples = patient_day.env
    if anchor is None:
        raise ValueError("need a patient-day or an anchor")
    samples = [s for s in (samples or ()) if anchor <= s.ts < anchor + timedelta(days=1)]
    hours: list[list[float]] = [[] for _ in range(24)]
    lux: list[list[float]] = [[] for _ in range(24)]
    minutes: dict[int, list[float]] = {}
    day, night, night_lux = [], [], []
    for s in samples:
        off = minute_offset(s.ts, anchor)
        level = sample_db(s, p0)
        hours[int(off // 60)].append(level)
        if s.lux is not None:
            lux[int(off // 60)].append(s.lux)
        if segment_of(off) == "day":
            day.append(level)
        else:
            night.append(level)
            minutes.setdefault(int(off), []).append(level)
            if s.lux is not None:
                night_lux.append(s.lux)
    hourly = tuple(mean_spl(h, mode) if h else math.nan for h in hours)
    hourly_lux = tuple(float(np.mean(h)) if h else math.nan for h in lux)
    day_mean = mean_spl(day, mode) if day else math.nan
    night_mean = mean_spl(night, mode) if night else math.nan
    night_max = float(max(night)) if night else math.nan
    above = sum(1 for v in minutes.values() if mean_spl(v, mode) > WHO_NIGHT_MEAN_DB)
    return SplSummary(
        hourly, hourly_lux, day_mean, night_mean, night_max, above,
        float(np.mean(night_lux)) if night_lux else math.nan,
        bool(night and night_mean > WHO_NIGHT_MEAN_DB),
        bool(night and night_max > WHO_NIGHT_MAX_DB),
    )


# --------------------------------------------------------------------- visitation

@dataclass(frozen=True)
class DisruptionSummary:
    segment: str
    disrupted_frames: int
    total_frames: int

    @property
    def rate(self) -> float:
        return self.disrupted_frames / self.total_frames


def visitor_count(frame: OccupancyFrame, assume_patient_present: bool = True) -> int:
    """People in the room other than the patient.

    With ``assume_patient_present`` the patient is counted among the persons even
    when the face was not recognized (occlusion).
    """
    patient = 1 if (frame.patient_recognized or (assume_patient_present and frame.count > 0)) else 0
    return max(frame.count - patient, 0)


def disruption_rate(frames: Sequence[OccupancyFrame], segment: str, anchor_hour: int = 7,
                    assume_patient_present: bool = True) -> DisruptionSummary:
    """Share of frames in the segment with at least one visitor present."""
    if segment not in ("day", "night", "all"):
        raise ValueError("segment must be 'day', 'night' or 'all'")
    total = disrupted = 0
    for f in frames:
        if segment != "all":
            off = minute_offset(f.ts, anchor_for(f.ts, anchor_hour))
            if segment_of(off) != segment:
                continue
        total += 1
        if visitor_count(f, assume_patient_present) >= 1:
            disrupted += 1
    if total == 0:
        raise DataError(f"no occupancy frames in {segment} segment")
    return DisruptionSummary(segment, disrupted, total)
