"""Seeded synthetic cohorts in every ingest format, with ground-truth sidecars.

Activity minutes come from a zero-inflated gamma around an hourly mean curve.
Postures follow exponential dwell times, visits a Poisson schedule, and sound
a baseline with Poisson noise events. Each patient gets its own random stream
derived from (seed, profile name, patient index), so output is byte-identical
for a fixed seed.
"""

from __future__ import annotations

import configparser
import math
import zlib
from dataclasses import asdict, dataclass, field, fields, replace
from datetime import datetime, timedelta
from pathlib import Path
from typing import Mapping

import numpy as np

from ._atomic import atomic_path, atomic_write_text
from .errors import ConfigError
from .facs import default_rules
from .ingest import (
    ACTIVITY_FILE, AU_FILE, COHORT_FILE, DEFAULT_FRAME_SIZE, ENV_FILE, INTENSITY_AUS, JOINTS,
    KEYPOINT_FILE, OCCUPANCY_FILE, PRESENCE_AUS, SITES, SLOTS_PER_DAY, AUFrame, EnvSample,
    EpochSeries, KeypointFrame, OccupancyFrame, format_frame_ts, read_cohort, write_au_jsonl, write_cohort,
    write_env_csv, write_epoch_csv, write_keypoints_jsonl, write_occupancy_csv,
)
from .posture import POSTURES

DEFAULT_START = datetime(2020, 1, 6, 7, 0)
EXPRESSIONS = tuple(r.name for r in default_rules())


def _day_night(day: float, night: float) -> tuple:
    return tuple([day] * 12 + [night] * 12)


@dataclass(frozen=True)
class CohortProfile:
    """Generation parameters for one group. Hourly tuples index anchored hours
    (0 = 07:00 ... 23 = 06:00)."""

    name: str
    activity_mean: tuple = _day_night(70.0, 45.0)
    activity_zero_prob: tuple = _day_night(0.78, 0.84)
    activity_shape: float = 0.6
    site_scale: Mapping[str, float] = field(default_factory=lambda: {"wrist": 1.0, "arm": 0.5, "ankle": 0.3})
    patient_sigma: float = 0.25
    gap_prob: float = 0.3
    expression_rates: Mapping[str, float] = field(default_factory=lambda: {e: 0.03 for e in EXPRESSIONS})
    au_success_rate: float = 0.7
    posture_dwell: Mapping[str, float] = field(
        default_factory=lambda: {"lying": 0.55, "sitting_on_bed": 0.2, "sitting_on_chair": 0.15, "standing": 0.1})
    dwell_mean_minutes: float = 40.0
    visit_rate_day: float = 0.8
    visit_rate_night: float = 0.2
    visit_mean_minutes: float = 12.0
    recognition_rate: float = 0.9
    spl_day_db: float = 55.0
    spl_night_db: float = 47.0
    spl_sd: float = 3.0
    spl_event_rate: float = 1.0
    spl_event_db: float = 15.0
    light_lux: tuple = tuple([300.0] * 12 + [80.0, 40.0] + [5.0] * 10)
    frame_interval_s: int = 60
    seed: int = 0

    def validate(self) -> "CohortProfile":
        problems = []
        for name in ("activity_mean", "activity_zero_prob", "light_lux"):
            v = getattr(self, name)
            if len(v) != 24:
                problems.append(f"{name} needs 24 hourly values, got {len(v)}")
            if any(x < 0 for x in v):
                problems.append(f"{name} values must be >= 0")
        if any(not 0 <= p <= 1 for p in self.activity_zero_prob):
            problems.append("activity_zero_prob values must be in [0, 1]")
        rates = [
            "activity_shape", "patient_sigma", "dwell_mean_minutes", "visit_rate_day", "visit_rate_night",
            "visit_mean_minutes", "spl_sd", "spl_event_rate", "spl_event_db",
        ]
        for name in rates:
            if getattr(self, name) < 0:
                problems.append(f"{name} must be >= 0")
        for name in ("gap_prob", "au_success_rate", "recognition_rate"):
            if not 0 <= getattr(self, name) <= 1:
                problems.append(f"{name} must be in [0, 1]")
        if self.activity_shape <= 0:
            problems.append("activity_shape must be > 0")
        if set(self.site_scale) != set(SITES) or any(v < 0 for v in self.site_scale.values()):
            problems.append(f"site_scale needs non-negative values for {SITES}")
        unknown = set(self.expression_rates) - set(EXPRESSIONS)
        if unknown:
            problems.append(f"unknown expressions {sorted(unknown)}")
        if any(not 0 <= v <= 1 for v in self.expression_rates.values()):
            problems.append("expression rates must be in [0, 1]")
        if set(self.posture_dwell) - set(POSTURES) or any(v < 0 for v in self.posture_dwell.values()):
            problems.append(f"posture_dwell keys must be among {POSTURES} with values >= 0")
        elif abs(sum(self.posture_dwell.values()) - 1.0) > 1e-9:
            problems.append("posture_dwell must sum to 1")
        if self.frame_interval_s < 1 or 86400 % self.frame_interval_s:
            problems.append("frame_interval_s must divide one day")
        if problems:
            raise ConfigError(problems)
        return self


def preset(name: str, seed: int = 0) -> CohortProfile:
    """Built-in group profiles; directions follow the reported delirious contrasts."""
    if name == "non_delirious":
        return CohortProfile(name="non_delirious", seed=seed).validate()
    if name == "delirious":
        return CohortProfile(
            name="delirious",
            activity_mean=_day_night(330.0, 320.0),
            activity_zero_prob=_day_night(0.5, 0.5),
            site_scale={"wrist": 1.0, "arm": 0.3, "ankle": 0.4},
            expression_rates={e: (0.03 if e == "Anger" else 0.012) for e in EXPRESSIONS},
            posture_dwell={"lying": 0.7, "sitting_on_bed": 0.05, "sitting_on_chair": 0.2, "standing": 0.05},
            visit_rate_day=0.4,
            visit_rate_night=0.9,
            spl_night_db=55.0,
            light_lux=tuple([300.0] * 12 + [250.0, 220.0, 180.0, 120.0] + [10.0] * 8),
            seed=seed,
        ).validate()
    raise ConfigError(f"unknown preset {name!r}; expected 'delirious' or 'non_delirious'")


def zero_profile(name: str = "zero", seed: int = 0) -> CohortProfile:
    """No activity, no expressions, no visits."""
    return CohortProfile(
        name=name,
        activity_mean=tuple([0.0] * 24),
        expression_rates={e: 0.0 for e in EXPRESSIONS},
        visit_rate_day=0.0,
        visit_rate_night=0.0,
        gap_prob=0.0,
        seed=seed,
    ).validate()


# ------------------------------------------------------------------ profile files

_TUPLE_FIELDS = {"activity_mean", "activity_zero_prob", "light_lux"}
_MAP_FIELDS = {"site_scale", "expression_rates", "posture_dwell"}


def dump_profile(profile: CohortProfile) -> str:
    lines = ["[profile]"]
    for f in fields(profile):
        v = getattr(profile, f.name)
        if f.name in _TUPLE_FIELDS:
            v = ", ".join(repr(float(x)) for x in v)
        elif f.name in _MAP_FIELDS:
            v = ", ".join(f"{k}:{float(x)!r}" for k, x in v.items())
        lines.append(f"{f.name} = {v}")
    return "\n".join(lines) + "\n"


def load_profile(path) -> CohortProfile:
    """Read a ``[profile]`` INI file; unspecified keys fall back to a preset
    named by ``base`` (default ``non_delirious``)."""
    cp = configparser.ConfigParser()
    if not cp.read(path, encoding="utf-8") or not cp.has_section("profile"):
        raise ConfigError(f"{path}: missing [profile] section")
    sec = dict(cp["profile"])
    base = preset(sec.pop("base", "non_delirious"))
    known = {f.name: f for f in fields(CohortProfile)}
    updates, problems = {}, []
    for key, raw in sec.items():
        if key not in known:
            problems.append(f"unknown profile key {key!r}")
            continue
        try:
            if key in _TUPLE_FIELDS:
                updates[key] = tuple(float(x) for x in raw.split(","))
            elif key in _MAP_FIELDS:
                updates[key] = {k.strip(): float(v) for k, v in (item.split(":") for item in raw.split(","))}
            elif key == "name":
                updates[key] = raw.strip()
            elif key in ("seed", "frame_interval_s"):
                updates[key] = int(raw)
            else:
                updates[key] = float(raw)
        except ValueError:
            problems.append(f"bad value for {key!r}: {raw!r}")
    if problems:
        raise ConfigError(problems)
    return replace(base, **updates).validate()


# ----------------------------------------------------------------------- geometry

_UPPER = {
    "neck": (0.0, -1.0), "nose": (0.0, -1.3),
    "r_eye": (-0.08, -1.38), "l_eye": (0.08, -1.38), "r_ear": (-0.16, -1.33), "l_ear": (0.16, -1.33),
    "r_shoulder": (-0.35, -0.95), "l_shoulder": (0.35, -0.95),
    "r_elbow": (-0.45, -0.5), "l_elbow": (0.45, -0.5),
    "r_wrist": (-0.5, -0.05), "l_wrist": (0.5, -0.05),
    "r_hip": (-0.2, 0.0), "l_hip": (0.2, 0.0),
}
_LEGS = {
    "standing": {"r_knee": (-0.2, 0.9), "l_knee": (0.2, 0.9), "r_ankle": (-0.2, 1.8), "l_ankle": (0.2, 1.8)},
    "sitting_on_chair": {"r_knee": (0.7, 0.05), "l_knee": (0.9, 0.0), "r_ankle": (0.7, 0.95), "l_ankle": (0.9, 0.9)},
    "sitting_on_bed": {"r_knee": (0.7, 0.05), "l_knee": (0.9, 0.0), "r_ankle": (1.6, 0.05), "l_ankle": (1.8, 0.0)},
}


def template(posture: str) -> dict[str, np.ndarray]:
    """Noise-free joint layout with unit torso, mid-hip at the origin, y down."""
    if posture == "lying":
        base = template("standing")
        rot = np.array([[0.0, -1.0], [1.0, 0.0]])  # quarter turn
        return {k: rot @ v for k, v in base.items()}
    pts = {k: np.array(v) for k, v in _UPPER.items()}
    pts.update({k: np.array(v) for k, v in _LEGS[posture].items()})
    if posture == "sitting_on_bed":
        # reclined against the raised head of the bed
        a = math.radians(-15.0)
        rot = np.array([[math.cos(a), -math.sin(a)], [math.sin(a), math.cos(a)]])
        for k in _UPPER:
            pts[k] = rot @ pts[k]
    return pts


def _template_array(posture: str) -> np.ndarray:
    t = template(posture)
    return np.array([t[j] for j in JOINTS])


_ANCHOR_JOINTS = np.array([j in ("neck", "l_hip", "r_hip") for j in JOINTS])


def synth_keypoint_batch(postures, rng: np.random.Generator, timestamps, size=DEFAULT_FRAME_SIZE,
                         drop_prob: float = 0.03, jitter: float = 0.03,
                         max_tilt_deg: float = 8.0) -> list[KeypointFrame]:
    """Noisy keypoint frames, one per posture label, each placed inside the image.

    Each figure gets a small random tilt, per-joint jitter (in torso units), a
    random scale that still fits the frame, and random joint dropout (the neck
    and hips drop three times less often). Joints landing outside the image
    are dropped.
    """
    n = len(postures)
    if n == 0:
        return []
    cache = {p: _template_array(p) for p in set(postures)}
    pts = np.stack([cache[p] for p in postures])  # (n, joints, 2)
    tilt = np.radians(rng.uniform(-max_tilt_deg, max_tilt_deg, n))
    c, s = np.cos(tilt)[:, None], np.sin(tilt)[:, None]
    x = c * pts[..., 0] - s * pts[..., 1]
    y = s * pts[..., 0] + c * pts[..., 1]
    pts = np.stack([x, y], axis=-1) + rng.normal(0.0, jitter, pts.shape)
    lo, hi = pts.min(axis=1), pts.max(axis=1)
    span = np.maximum(hi - lo, 1e-6)
    w, h = size
    s_max = np.minimum(np.minimum(0.9 * w / span[:, 0], 0.9 * h / span[:, 1]), 140.0)
    scale = rng.uniform(0.6, 1.0, n) * s_max
    room = np.array([w, h]) - scale[:, None] * span
    offset = rng.random((n, 2)) * room - scale[:, None] * lo
    xy = np.round(scale[:, None, None] * pts + offset[:, None, :], 2)
    drop_p = np.where(_ANCHOR_JOINTS, drop_prob / 3, drop_prob)
    keep = rng.random((n, len(JOINTS))) >= drop_p
    keep &= (xy[..., 0] >= 0) & (xy[..., 0] <= w) & (xy[..., 1] >= 0) & (xy[..., 1] <= h)
    conf = np.round(rng.uniform(0.5, 1.0, (n, len(JOINTS))), 3)
    xs, ys, cs, ks = xy[..., 0].tolist(), xy[..., 1].tolist(), conf.tolist(), keep.tolist()
    out = []
    for i, ts in enumerate(timestamps):
        joints = {name: (xs[i][j], ys[i][j], cs[i][j]) for j, name in enumerate(JOINTS) if ks[i][j]}
        out.append(KeypointFrame(ts, w, h, joints))
    return out


def synth_keypoints(posture: str, rng: np.random.Generator, ts: datetime, **kw) -> KeypointFrame:
    """Single-frame form of :func:`synth_keypoint_batch`."""
    return synth_keypoint_batch([posture], rng, [ts], **kw)[0]


def simulate_keypoint_dataset(n: int, seed: int = 0, drop_prob: float = 0.03):
    """Balanced labelled frames, ``n // 4`` per posture (remainder spread in order)."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x9051]))
    labels = [POSTURES[i % len(POSTURES)] for i in range(n)]
    rng.shuffle(labels)
    t0 = DEFAULT_START
    frames = synth_keypoint_batch(labels, rng, [t0 + timedelta(seconds=i) for i in range(n)],
                                  drop_prob=drop_prob)
    return frames, labels


# ----------------------------------------------------------------------- patients

def _patient_rng(profile: CohortProfile, index: int) -> np.random.Generator:
    tag = zlib.crc32(profile.name.encode("utf-8"))
    return np.random.default_rng(np.random.SeedSequence([profile.seed, tag, index]))


def _activity(profile, rng, anchor, patient_factor, site):
    hours = np.repeat(np.arange(24), 60)
    mean = np.asarray(profile.activity_mean)[hours] * patient_factor * profile.site_scale[site]
    zero_p = np.asarray(profile.activity_zero_prob)[hours]
    active = rng.random(SLOTS_PER_DAY) >= zero_p
    nz_mean = np.where(zero_p < 1, mean / np.maximum(1 - zero_p, 1e-12), 0.0)
    draws = rng.gamma(profile.activity_shape, 1.0, SLOTS_PER_DAY) * nz_mean / profile.activity_shape
    counts = np.where(active, np.rint(draws), 0.0)
    if rng.random() < profile.gap_prob:
        length = int(rng.integers(10, 61))
        start = int(rng.integers(0, SLOTS_PER_DAY - length))
        counts[start:start + length] = np.nan
    return counts


def _posture_track(profile, rng, n_frames, step_min):
    labels = list(profile.posture_dwell)
    probs = np.array([profile.posture_dwell[l] for l in labels])
    out = []
    while len(out) < n_frames:
        lab = labels[int(rng.choice(len(labels), p=probs))]
        dwell = max(1, int(round(rng.exponential(profile.dwell_mean_minutes) / step_min)))
        out.extend([lab] * dwell)
    return out[:n_frames]


def _visitor_track(profile, rng, n_frames, step_min):
    visitors = np.zeros(n_frames, dtype=np.int64)
    for i in range(n_frames):
        minute = i * step_min
        rate = profile.visit_rate_day if minute < 720 else profile.visit_rate_night
        if rng.random() < 1.0 - math.exp(-rate * step_min / 60.0):
            length = max(1, int(round(rng.exponential(profile.visit_mean_minutes) / step_min)))
            visitors[i:i + length] += int(rng.integers(1, 3))
    return visitors


def _au_frame(profile, rng, ts, rules_by_name):
    if rng.random() >= profile.au_success_rate:
        return AUFrame(ts, False), ()
    intensity = {au: round(float(rng.uniform(0.0, 0.45)), 2) for au in INTENSITY_AUS}
    presence = {au: 0 for au in PRESENCE_AUS}
    shown = tuple(e for e in EXPRESSIONS if rng.random() < profile.expression_rates.get(e, 0.0))
    for e in shown:
        for term in rules_by_name[e].terms:
            for atom in term.atoms:
                name = atom.name
                if name in intensity or name in presence:
                    if name in intensity:
                        intensity[name] = round(float(rng.uniform(1.5, 4.0)), 2)
                    if name in presence:
                        presence[name] = 1
                    break
    return AUFrame(ts, True, intensity, presence), shown


def simulate_patient(profile: CohortProfile, patient_id: str, n_days: int, index: int = 0,
                     start: datetime = DEFAULT_START) -> dict:
    """All streams and truth tables for one patient, in memory."""
    rng = _patient_rng(profile, index)
    step_s = profile.frame_interval_s
    step_min = step_s / 60.0
    per_day = 86400 // step_s
    factor = float(rng.lognormal(0.0, profile.patient_sigma))
    rules_by_name = {r.name: r for r in default_rules()}
    epochs = {s: [] for s in SITES}
    au, kp, env, occ = [], [], [], []
    truth_post, truth_expr, truth_vis = [], [], []
    for d in range(n_days):
        anchor = start + timedelta(days=d)
        day_factor = factor * float(rng.lognormal(0.0, 0.1))
        for site in SITES:
            epochs[site].append(EpochSeries(patient_id, site, anchor,
                                            _activity(profile, rng, anchor, day_factor, site)))
        postures = _posture_track(profile, rng, per_day, step_min)
        visitors = _visitor_track(profile, rng, per_day, step_min)
        stamps = [anchor + timedelta(seconds=i * step_s) for i in range(per_day)]
        minutes = np.arange(per_day) * step_min
        for ts in stamps:
            frame, shown = _au_frame(profile, rng, ts, rules_by_name)
            au.append(frame)
            truth_expr.extend((ts, e) for e in shown)
        kp.extend(synth_keypoint_batch(postures, rng, stamps))
        truth_post.extend(zip(stamps, postures))
        base = np.where(minutes < 720, profile.spl_day_db, profile.spl_night_db)
        level = base + rng.normal(0.0, profile.spl_sd, per_day)
        level += np.where(rng.random(per_day) < profile.spl_event_rate * step_min / 60.0,
                          profile.spl_event_db, 0.0)
        lux = np.asarray(profile.light_lux)[(minutes // 60).astype(int)] * rng.lognormal(0.0, 0.1, per_day)
        pressure = (2e-5 * 10.0 ** (level / 20.0)).tolist()
        lux = np.round(lux, 1).tolist()
        recognized = (rng.random(per_day) < profile.recognition_rate).tolist()
        vis = visitors.tolist()
        for i, ts in enumerate(stamps):
            env.append(EnvSample(ts, pressure[i], "pa", lux[i]))
            occ.append(OccupancyFrame(ts, 1 + vis[i], recognized[i]))
        truth_vis.extend(zip(stamps, vis))
    return {
        "epochs": epochs, "au": au, "keypoints": kp, "env": env, "occupancy": occ,
        "truth_postures": truth_post, "truth_expressions": truth_expr, "truth_visitors": truth_vis,
    }


def write_patient(streams: dict, patient_dir) -> list[Path]:
    patient_dir = Path(patient_dir)
    (patient_dir / "truth").mkdir(parents=True, exist_ok=True)
    written = []
    for site, series in streams["epochs"].items():
        p = patient_dir / ACTIVITY_FILE.format(site=site)
        with atomic_path(p) as tmp:
            write_epoch_csv(series, tmp)
        written.append(p)
    for name, writer, key in (
        (AU_FILE, write_au_jsonl, "au"), (KEYPOINT_FILE, write_keypoints_jsonl, "keypoints"),
        (ENV_FILE, write_env_csv, "env"), (OCCUPANCY_FILE, write_occupancy_csv, "occupancy"),
    ):
        with atomic_path(patient_dir / name) as tmp:
            writer(streams[key], tmp)
        written.append(patient_dir / name)
    tables = (
        ("postures.csv", "timestamp,label", streams["truth_postures"]),
        ("expressions.csv", "timestamp,expression", streams["truth_expressions"]),
        ("visitors.csv", "timestamp,visitors", streams["truth_visitors"]),
    )
    for fname, header, rows in tables:
        p = patient_dir / "truth" / fname
        body = "".join(f"{format_frame_ts(ts)},{v}\n" for ts, v in rows)
        atomic_write_text(p, header + "\n" + body)
        written.append(p)
    return written


def simulate_cohort(profile: CohortProfile, n_patients: int, n_days: int, out_dir,
                    start: datetime = DEFAULT_START, jobs: int = 1) -> list[str]:
    """Write ``n_patients`` patients of one profile under ``out_dir`` and record
    their group in ``cohort.csv`` (merged with any existing rows)."""
    profile.validate()
    if n_patients < 1 or n_days < 1:
        raise ConfigError("n_patients and n_days must be >= 1")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ids = [f"{profile.name}_{i:03d}" for i in range(n_patients)]
    tasks = [(profile, pid, n_days, i, start, out_dir / pid) for i, pid in enumerate(ids)]
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            list(ex.map(_simulate_one, tasks))
    else:
        for t in tasks:
            _simulate_one(t)
    cohort = read_cohort(out_dir)
    cohort.update({pid: profile.name for pid in ids})
    with atomic_path(out_dir / COHORT_FILE) as tmp, open(tmp, "w", encoding="utf-8", newline="") as fh:
        write_cohort(cohort, fh)
    return ids


def _simulate_one(task):
    profile, pid, n_days, index, start, pdir = task
    write_patient(simulate_patient(profile, pid, n_days, index, start), pdir)
    return pid


def profile_dict(profile: CohortProfile) -> dict:
    d = asdict(profile)
    return {k: (list(v) if isinstance(v, tuple) else v) for k, v in d.items()}
