"""Core stream types, file parsers/serializers and patient-day assembly.

All timestamps are naive local datetimes. A patient-day runs from the anchor
hour (07:00 by default) to the same hour next day; its first 720 minutes are
the day segment and the last 720 the night segment.
"""

from __future__ import annotations

import csv
import functools
import json
import logging
import math
import re
from contextlib import nullcontext
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from pathlib import Path
from types import MappingProxyType
from typing import IO, Iterable, Iterator, Mapping

import numpy as np

from .errors import DataError, ParseError

log = logging.getLogger(__name__)

SLOTS_PER_DAY = 1440
SEGMENT_SLOTS = 720
DEFAULT_ANCHOR_HOUR = 7
SITES = ("wrist", "arm", "ankle")
SEGMENTS = ("all", "day", "night")

# Table of the 15 AUs available from the face toolbox and how each is coded.
INTENSITY_AUS = (
    "AU01", "AU02", "AU04", "AU05", "AU06", "AU09", "AU12",
    "AU14", "AU15", "AU17", "AU20", "AU25",
)
PRESENCE_AUS = ("AU04", "AU12", "AU15", "AU23", "AU28", "AU45")
KNOWN_AUS = tuple(sorted(set(INTENSITY_AUS) | set(PRESENCE_AUS)))

JOINTS = (
    "nose", "neck",
    "r_shoulder", "r_elbow", "r_wrist",
    "l_shoulder", "l_elbow", "l_wrist",
    "r_hip", "r_knee", "r_ankle",
    "l_hip", "l_knee", "l_ankle",
    "r_eye", "l_eye", "r_ear", "l_ear",
)
DEFAULT_FRAME_SIZE = (368, 654)

EPOCH_HEADER = ["timestamp", "count"]
OCCUPANCY_HEADER = ["timestamp", "count", "patient_recognized"]

_AU_NAME = re.compile(r"^AU(\d{1,2})$")


# --------------------------------------------------------------------------- time

def parse_timestamp(text: str) -> datetime:
    ts = datetime.fromisoformat(text.strip())
    if ts.tzinfo is not None:
        raise ValueError("timezone-aware timestamps are not supported")
    return ts


def format_epoch_ts(ts: datetime) -> str:
    return ts.strftime("%Y-%m-%dT%H:%M:%S")


def format_frame_ts(ts: datetime) -> str:
    return ts.isoformat(timespec="milliseconds")


def anchor_for(ts: datetime, anchor_hour: int = DEFAULT_ANCHOR_HOUR) -> datetime:
    """Start of the patient-day containing ``ts``."""
    base = ts.replace(hour=anchor_hour, minute=0, second=0, microsecond=0)
    return base if ts >= base else base - timedelta(days=1)


def minute_offset(ts: datetime, anchor: datetime) -> float:
    return (ts - anchor).total_seconds() / 60.0


def segment_of(offset_minutes: float) -> str:
    return "day" if offset_minutes < SEGMENT_SLOTS else "night"


def segment_slice(segment: str) -> slice:
    if segment == "all":
        return slice(0, SLOTS_PER_DAY)
    if segment == "day":
        return slice(0, SEGMENT_SLOTS)
    if segment == "night":
        return slice(SEGMENT_SLOTS, SLOTS_PER_DAY)
    raise ValueError(f"unknown segment {segment!r}; expected one of {SEGMENTS}")


def format_number(value: float) -> str:
    """Shortest text that parses back to ``value``; integral values lose the '.0'."""
    value = float(value)
    if value.is_integer() and abs(value) < 1e15:
        return str(int(value))
    return repr(value)


# -------------------------------------------------------------------------- types

@dataclass(frozen=True, eq=False)
class EpochSeries:
    """Per-minute activity counts for one sensor site over one patient-day.

    ``counts`` always has 1440 slots; NaN marks a missing minute, which is
    distinct from a zero (immobile) minute.
    """

    patient_id: str
    site: str
    anchor: datetime
    counts: np.ndarray

    def __post_init__(self):
        counts = np.array(self.counts, dtype=float)
        if counts.shape != (SLOTS_PER_DAY,):
            raise DataError(f"epoch series must have {SLOTS_PER_DAY} slots, got {counts.shape}")
        if np.any(counts[~np.isnan(counts)] < 0):
            raise DataError("activity counts must be non-negative")
        counts.setflags(write=False)
        object.__setattr__(self, "counts", counts)

    @classmethod
    def from_pairs(cls, patient_id, site, anchor, pairs):
        counts = np.full(SLOTS_PER_DAY, np.nan)
        last = -1
        for slot, value in pairs:
            if slot <= last:
                raise DataError("slot indices must be strictly increasing")
            counts[slot] = value
            last = slot
        return cls(patient_id, site, anchor, counts)

    @property
    def observed(self) -> np.ndarray:
        return ~np.isnan(self.counts)

    @property
    def slots(self) -> np.ndarray:
        return np.flatnonzero(self.observed)

    @property
    def n_observed(self) -> int:
        return int(self.observed.sum())

    @property
    def n_missing(self) -> int:
        return SLOTS_PER_DAY - self.n_observed

    def pairs(self):
        return [(int(i), float(self.counts[i])) for i in self.slots]

    def segment(self, segment: str) -> np.ndarray:
        return self.counts[segment_slice(segment)]

    def observed_in(self, segment: str) -> int:
        return int((~np.isnan(self.segment(segment))).sum())

    def timestamp(self, slot: int) -> datetime:
        return self.anchor + timedelta(minutes=int(slot))


@dataclass(frozen=True, eq=False)
class AUFrame:
    ts: datetime
    success: bool
    intensities: Mapping[str, float] = field(default_factory=dict)
    presences: Mapping[str, int] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "intensities", MappingProxyType(dict(self.intensities)))
        object.__setattr__(self, "presences", MappingProxyType(dict(self.presences)))


@dataclass(frozen=True, eq=False)
class KeypointFrame:
    ts: datetime
    width: int
    height: int
    joints: Mapping[str, tuple]

    def __post_init__(self):
        object.__setattr__(self, "joints", MappingProxyType(dict(self.joints)))

    @property
    def missing(self) -> frozenset:
        return frozenset(j for j in JOINTS if j not in self.joints)


@dataclass(frozen=True)
class EnvSample:
    """One environment reading; ``sound_kind`` is ``"pa"`` or ``"db"``."""

    ts: datetime
    sound: float
    sound_kind: str
    lux: float | None = None

    def __post_init__(self):
        if self.sound_kind not in ("pa", "db"):
            raise DataError(f"sound_kind must be 'pa' or 'db', got {self.sound_kind!r}")
        if self.sound_kind == "pa" and not self.sound > 0:
            raise DataError("sound pressure must be > 0 Pa")
        if self.lux is not None and self.lux < 0:
            raise DataError("lux must be >= 0")


@dataclass(frozen=True)
class OccupancyFrame:
    ts: datetime
    count: int
    patient_recognized: bool

    def __post_init__(self):
        if self.count < 0:
            raise DataError("person count must be >= 0")
        if self.patient_recognized and self.count < 1:
            raise DataError("patient recognized in a frame with zero persons")


# ------------------------------------------------------------------------ helpers

def _open_text(path_or_file, mode="r"):
    if hasattr(path_or_file, "read") or hasattr(path_or_file, "write"):
        return nullcontext(path_or_file)
    return open(path_or_file, mode, newline="", encoding="utf-8")


def _finite(text: str, what: str) -> float:
    value = float(text)
    if not math.isfinite(value):
        raise ValueError(f"{what} must be finite")
    return value


def _check_order(prev, ts, strict_increase, path, line):
    if prev is None:
        return
    if ts < prev:
        raise ParseError(f"non-monotone timestamp {ts.isoformat()} after {prev.isoformat()}", path, line)
    if strict_increase and ts == prev:
        raise ParseError(f"duplicate timestamp {ts.isoformat()}", path, line)


@functools.lru_cache(maxsize=256)
def canonical_au(name: str) -> str | None:
    """``AU4`` and ``AU04`` both map to ``AU04``; anything else to None."""
    m = _AU_NAME.match(name)
    return None if m is None else f"AU{int(m.group(1)):02d}"


# ----------------------------------------------------------------------- activity

def parse_epoch_csv(path, site: str, patient_id: str = "", anchor_hour: int = DEFAULT_ANCHOR_HOUR):
    """Parse ``timestamp,count`` rows into one EpochSeries per patient-day."""
    if site not in SITES:
        raise DataError(f"unknown site {site!r}; expected one of {SITES}")
    buckets: dict[datetime, list] = {}
    prev = None
    with _open_text(path) as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != EPOCH_HEADER:
            raise ParseError(f"expected header {','.join(EPOCH_HEADER)}", path, 1)
        for line, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != 2:
                raise ParseError(f"expected 2 fields, got {len(row)}", path, line)
            try:
                ts = parse_timestamp(row[0])
                count = _finite(row[1], "count")
            except ValueError as exc:
                raise ParseError(str(exc), path, line) from None
            if ts.second or ts.microsecond:
                raise ParseError("timestamp is not minute-aligned", path, line)
            if count < 0:
                raise ParseError(f"negative count {count}", path, line)
            _check_order(prev, ts, True, path, line)
            prev = ts
            anchor = anchor_for(ts, anchor_hour)
            slot = int(round(minute_offset(ts, anchor)))
            buckets.setdefault(anchor, []).append((slot, count))
    return [
        EpochSeries.from_pairs(patient_id, site, anchor, pairs)
        for anchor, pairs in sorted(buckets.items())
    ]


def write_epoch_csv(series: Iterable[EpochSeries], path_or_file) -> None:
    with _open_text(path_or_file, "w") as fh:
        fh.write(",".join(EPOCH_HEADER) + "\n")
        for s in sorted(series, key=lambda s: s.anchor):
            for slot, value in s.pairs():
                fh.write(f"{format_epoch_ts(s.timestamp(slot))},{format_number(value)}\n")


# ---------------------------------------------------------------------- AU frames

def _au_map(raw, allowed, kind, strict, path, line):
    if raw is None:
        return {}
    if not isinstance(raw, dict):
        raise ParseError(f"{kind} must be an object", path, line)
    out = {}
    for key, value in raw.items():
        name = canonical_au(key)
        if name is None or name not in allowed:
            if strict:
                raise ParseError(f"unknown {kind} AU {key!r}", path, line)
            log.warning("%s:%s: dropping unknown %s AU %r", path, line, kind, key)
            continue
        if type(value) not in (int, float):
            raise ParseError(f"{kind} value for {key} must be numeric", path, line)
        if kind == "intensity":
            value = float(value)
            if not (0.0 <= value <= 5.0):
                raise ParseError(f"intensity {value} for {key} outside [0, 5]", path, line)
        else:
            if value not in (0, 1):
                raise ParseError(f"presence {value} for {key} outside {{0, 1}}", path, line)
            value = int(value)
        out[name] = value
    return out


def parse_au_jsonl(path, strict: bool = True) -> Iterator[AUFrame]:
    """Stream AU frames one line at a time; the file is never held in memory."""
    prev = None
    with _open_text(path) as fh:
        for line, text in enumerate(fh, start=1):
            if not text.strip():
                continue
            try:
                rec = json.loads(text)
                ts = parse_timestamp(rec["ts"])
            except (ValueError, KeyError, TypeError) as exc:
                raise ParseError(f"bad record: {exc}", path, line) from None
            success = rec.get("success")
            if not isinstance(success, bool):
                raise ParseError("success must be a boolean", path, line)
            intensity = _au_map(rec.get("intensity"), INTENSITY_AUS, "intensity", strict, path, line)
            presence = _au_map(rec.get("presence"), PRESENCE_AUS, "presence", strict, path, line)
            _check_order(prev, ts, False, path, line)
            prev = ts
            yield AUFrame(ts, success, intensity, presence)


def au_record(frame: AUFrame) -> str:
    rec = {
        "ts": format_frame_ts(frame.ts),
        "success": bool(frame.success),
        "intensity": {k: float(v) for k, v in frame.intensities.items()},
        "presence": {k: int(v) for k, v in frame.presences.items()},
    }
    return json.dumps(rec, separators=(",", ":"))


def write_au_jsonl(frames: Iterable[AUFrame], path_or_file) -> None:
    with _open_text(path_or_file, "w") as fh:
        for frame in frames:
            fh.write(au_record(frame) + "\n")


# ---------------------------------------------------------------------- keypoints

def parse_keypoints_jsonl(path, strict: bool = True) -> Iterator[KeypointFrame]:
    prev = None
    with _open_text(path) as fh:
        for line, text in enumerate(fh, start=1):
            if not text.strip():
                continue
            try:
                rec = json.loads(text)
                ts = parse_timestamp(rec["ts"])
                width = int(rec.get("w", DEFAULT_FRAME_SIZE[0]))
                height = int(rec.get("h", DEFAULT_FRAME_SIZE[1]))
                raw = rec.get("joints") or {}
            except (ValueError, KeyError, TypeError) as exc:
                raise ParseError(f"bad record: {exc}", path, line) from None
            if width <= 0 or height <= 0:
                raise ParseError("frame size must be positive", path, line)
            joints = {}
            for name, value in raw.items():
                if name not in JOINTS:
                    if strict:
                        raise ParseError(f"unknown joint {name!r}", path, line)
                    log.warning("%s:%s: dropping unknown joint %r", path, line, name)
                    continue
                if value is None:
                    continue
                if not isinstance(value, list) or len(value) != 3:
                    raise ParseError(f"joint {name} must be [x, y, c]", path, line)
                x, y, c = (float(v) for v in value)
                if not (0.0 <= x <= width and 0.0 <= y <= height):
                    raise ParseError(f"joint {name} at ({x}, {y}) outside frame", path, line)
                if not (0.0 <= c <= 1.0):
                    raise ParseError(f"joint {name} confidence {c} outside [0, 1]", path, line)
                joints[name] = (x, y, c)
            _check_order(prev, ts, False, path, line)
            prev = ts
            yield KeypointFrame(ts, width, height, joints)


def keypoint_record(frame: KeypointFrame) -> str:
    joints = {
        name: [float(v) for v in frame.joints[name]]
        for name in JOINTS if name in frame.joints
    }
    rec = {"ts": format_frame_ts(frame.ts), "w": int(frame.width), "h": int(frame.height), "joints": joints}
    return json.dumps(rec, separators=(",", ":"))


def write_keypoints_jsonl(frames: Iterable[KeypointFrame], path_or_file) -> None:
    with _open_text(path_or_file, "w") as fh:
        for frame in frames:
            fh.write(keypoint_record(frame) + "\n")


# ---------------------------------------------------------------------------- env

def parse_env_csv(path) -> Iterator[EnvSample]:
    prev = None
    with _open_text(path) as fh:
        reader = csv.reader(fh)
        header = [h.strip() for h in (next(reader, None) or [])]
        sound_cols = [h for h in header if h in ("sound_pa", "sound_db")]
        valid = (
            header[:1] == ["timestamp"]
            and len(sound_cols) == 1
            and header[1:2] == sound_cols
            and header[2:] in ([], ["lux"])
        )
        if not valid:
            raise ParseError("expected header timestamp,sound_pa|sound_db[,lux]", path, 1)
        kind = "pa" if sound_cols[0] == "sound_pa" else "db"
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ParseError(f"expected {len(header)} fields, got {len(row)}", path, line)
            try:
                ts = parse_timestamp(row[0])
                sound = _finite(row[1], "sound")
                lux = _finite(row[2], "lux") if len(row) > 2 and row[2].strip() else None
                sample = EnvSample(ts, sound, kind, lux)
            except ValueError as exc:
                raise ParseError(str(exc), path, line) from None
            _check_order(prev, ts, False, path, line)
            prev = ts
            yield sample


def write_env_csv(samples: Iterable[EnvSample], path_or_file) -> None:
    samples = list(samples)
    kinds = {s.sound_kind for s in samples}
    if len(kinds) > 1:
        raise DataError("an env file carries exactly one sound representation")
    kind = kinds.pop() if kinds else "db"
    with _open_text(path_or_file, "w") as fh:
        fh.write(f"timestamp,sound_{kind},lux\n")
        for s in samples:
            lux = "" if s.lux is None else format_number(s.lux)
            fh.write(f"{format_frame_ts(s.ts)},{format_number(s.sound)},{lux}\n")


# ---------------------------------------------------------------------- occupancy

_BOOL = {"1": True, "0": False, "true": True, "false": False}


def parse_occupancy_csv(path) -> Iterator[OccupancyFrame]:
    prev = None
    with _open_text(path) as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != OCCUPANCY_HEADER:
            raise ParseError(f"expected header {','.join(OCCUPANCY_HEADER)}", path, 1)
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise ParseError(f"expected 3 fields, got {len(row)}", path, line)
            try:
                ts = parse_timestamp(row[0])
                count = int(row[1])
                flag = _BOOL[row[2].strip().lower()]
                frame = OccupancyFrame(ts, count, flag)
            except KeyError:
                raise ParseError(f"patient_recognized must be 0/1, got {row[2]!r}", path, line) from None
            except ValueError as exc:
                raise ParseError(str(exc), path, line) from None
            _check_order(prev, ts, False, path, line)
            prev = ts
            yield frame


def write_occupancy_csv(frames: Iterable[OccupancyFrame], path_or_file) -> None:
    with _open_text(path_or_file, "w") as fh:
        fh.write(",".join(OCCUPANCY_HEADER) + "\n")
        for f in frames:
            fh.write(f"{format_frame_ts(f.ts)},{int(f.count)},{int(bool(f.patient_recognized))}\n")


# -------------------------------------------------------------------- patient-day

@dataclass(frozen=True, eq=False)
class PatientDay:
    """All streams of one patient clipped to ``[anchor, anchor + 24h)``."""

    patient_id: str
    anchor: datetime
    epochs: Mapping[str, EpochSeries] = field(default_factory=dict)
    au_frames: tuple = ()
    keypoints: tuple = ()
    env: tuple = ()
    occupancy: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "epochs", MappingProxyType(dict(self.epochs)))

    @property
    def end(self) -> datetime:
        return self.anchor + timedelta(days=1)

    @property
    def day(self) -> str:
        return self.anchor.date().isoformat()

    def bounds(self, segment: str = "all") -> tuple[datetime, datetime]:
        sl = segment_slice(segment)
        return self.anchor + timedelta(minutes=sl.start), self.anchor + timedelta(minutes=sl.stop)

    def select(self, frames, segment: str = "all") -> list:
        lo, hi = self.bounds(segment)
        return [f for f in frames if lo <= f.ts < hi]

    def observed_slots(self, site: str, segment: str = "all") -> int:
        series = self.epochs.get(site)
        return 0 if series is None else series.observed_in(segment)

    def is_empty(self) -> bool:
        return not (
            any(s.n_observed for s in self.epochs.values())
            or self.au_frames or self.keypoints or self.env or self.occupancy
        )


def _clip(frames, lo, hi):
    return tuple(f for f in frames if lo <= f.ts < hi)


def assemble_patient_day(patient_id, anchor, *, epochs=(), au_frames=(), keypoints=(), env=(), occupancy=()):
    """Build the PatientDay starting at ``anchor`` from any mix of streams."""
    end = anchor + timedelta(days=1)
    chosen = {}
    for series in epochs:
        if series.patient_id and patient_id and series.patient_id != patient_id:
            raise DataError(f"epoch series for {series.patient_id!r} passed with patient {patient_id!r}")
        if series.anchor == anchor:
            if series.site in chosen:
                raise DataError(f"two {series.site} series for the same patient-day")
            chosen[series.site] = series
    day = PatientDay(
        patient_id, anchor, chosen,
        _clip(au_frames, anchor, end), _clip(keypoints, anchor, end),
        _clip(env, anchor, end), _clip(occupancy, anchor, end),
    )
    if day.is_empty():
        raise DataError(f"no data for patient {patient_id!r} in window starting {anchor.isoformat()}")
    return day


def assemble_patient_days(patient_id, *, epochs=(), au_frames=(), keypoints=(), env=(), occupancy=(),
                          anchor_hour: int = DEFAULT_ANCHOR_HOUR) -> list[PatientDay]:
    """Bucket every stream by patient-day; each input row lands in exactly one day."""
    epochs = list(epochs)
    streams = {
        "au_frames": list(au_frames),
        "keypoints": list(keypoints),
        "env": list(env),
        "occupancy": list(occupancy),
    }
    anchors = {s.anchor for s in epochs if s.n_observed}
    grouped: dict[str, dict[datetime, list]] = {}
    for name, frames in streams.items():
        by_anchor: dict[datetime, list] = {}
        for f in frames:
            by_anchor.setdefault(anchor_for(f.ts, anchor_hour), []).append(f)
        grouped[name] = by_anchor
        anchors.update(by_anchor)
    days = []
    for anchor in sorted(anchors):
        days.append(assemble_patient_day(
            patient_id, anchor,
            epochs=[s for s in epochs if s.anchor == anchor],
            **{name: grouped[name].get(anchor, ()) for name in streams},
        ))
    return days


# ------------------------------------------------------------- directory layout

ACTIVITY_FILE = "activity_{site}.csv"
AU_FILE = "au.jsonl"
KEYPOINT_FILE = "keypoints.jsonl"
ENV_FILE = "env.csv"
OCCUPANCY_FILE = "occupancy.csv"
COHORT_FILE = "cohort.csv"


def patient_files(patient_dir) -> list[Path]:
    patient_dir = Path(patient_dir)
    names = [ACTIVITY_FILE.format(site=s) for s in SITES] + [AU_FILE, KEYPOINT_FILE, ENV_FILE, OCCUPANCY_FILE]
    return [patient_dir / n for n in names if (patient_dir / n).exists()]


STREAMS = ("epochs", "au", "keypoints", "env", "occupancy")


def load_patient_dir(patient_dir, strict: bool = True, anchor_hour: int = DEFAULT_ANCHOR_HOUR,
                     streams: Iterable[str] = STREAMS) -> list[PatientDay]:
    """Parse the known stream files in a patient directory and assemble its days.

    ``streams`` limits which files are read (a subset of ``STREAMS``).
    """
    streams = set(streams)
    if streams - set(STREAMS):
        raise ValueError(f"unknown streams {sorted(streams - set(STREAMS))}")
    patient_dir = Path(patient_dir)
    pid = patient_dir.name
    epochs = []
    if "epochs" in streams:
        for site in SITES:
            p = patient_dir / ACTIVITY_FILE.format(site=site)
            if p.exists():
                epochs.extend(parse_epoch_csv(p, site, pid, anchor_hour))

    def maybe(key, name, parser, **kw):
        p = patient_dir / name
        return list(parser(p, **kw)) if key in streams and p.exists() else []

    return assemble_patient_days(
        pid,
        epochs=epochs,
        au_frames=maybe("au", AU_FILE, parse_au_jsonl, strict=strict),
        keypoints=maybe("keypoints", KEYPOINT_FILE, parse_keypoints_jsonl, strict=strict),
        env=maybe("env", ENV_FILE, parse_env_csv),
        occupancy=maybe("occupancy", OCCUPANCY_FILE, parse_occupancy_csv),
        anchor_hour=anchor_hour,
    )


def read_cohort(data_dir) -> dict[str, str]:
    """``patient_id -> group`` from ``cohort.csv``; patients without a row are omitted."""
    path = Path(data_dir) / COHORT_FILE
    if not path.exists():
        return {}
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    if rows and set(rows[0]) != {"patient_id", "group"}:
        raise ParseError("expected header patient_id,group", path, 1)
    return {r["patient_id"]: r["group"] for r in rows}


def write_cohort(mapping: Mapping[str, str], fh: IO[str]) -> None:
    fh.write("patient_id,group\n")
    for pid in sorted(mapping):
        fh.write(f"{pid},{mapping[pid]}\n")


def patient_dirs(data_dir) -> list[Path]:
    data_dir = Path(data_dir)
    return sorted(p for p in data_dir.iterdir() if p.is_dir() and patient_files(p))
