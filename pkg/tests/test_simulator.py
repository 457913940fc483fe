import csv
import hashlib
import math
from datetime import timedelta

import numpy as np
import pytest

from wardsense import simulator as sim
from wardsense.errors import ConfigError
from wardsense.facs import detect_expressions
from wardsense.ingest import SITES, format_frame_ts, load_patient_dir, patient_dirs, read_cohort
from wardsense.posture import POSTURES


def tree_digest(root):
    h = {}
    for p in sorted(root.rglob("*")):
        if p.is_file():
            h[str(p.relative_to(root))] = hashlib.sha256(p.read_bytes()).hexdigest()
    return h


def test_presets_validate_and_directions():
    d, n = sim.preset("delirious"), sim.preset("non_delirious")
    night = slice(12, 24)
    day = slice(0, 12)
    assert np.mean(d.activity_mean[night]) > np.mean(n.activity_mean[night])
    assert np.mean(n.activity_mean[day]) > np.mean(n.activity_mean[night])
    assert np.mean(d.activity_zero_prob[night]) < np.mean(n.activity_zero_prob[night])
    assert d.visit_rate_night > n.visit_rate_night and d.visit_rate_day < n.visit_rate_day
    assert d.spl_night_db > n.spl_night_db
    assert np.mean(d.light_lux[12:16]) > np.mean(n.light_lux[12:16])
    assert len(d.activity_mean) == len(n.activity_mean) == 24


def test_unknown_preset():
    with pytest.raises(ConfigError):
        sim.preset("sleepy")


def test_validate_collects_all_problems():
    bad = sim.CohortProfile(name="x", activity_mean=(1.0,), gap_prob=2.0,
                            posture_dwell={"lying": 0.5, "standing": 0.2})
    with pytest.raises(ConfigError) as exc:
        bad.validate()
    msg = str(exc.value)
    assert "activity_mean" in msg and "gap_prob" in msg and "sum to 1" in msg


def test_profile_file_round_trip(tmp_path):
    prof = sim.preset("delirious", seed=5)
    path = tmp_path / "p.ini"
    path.write_text(sim.dump_profile(prof))
    assert sim.load_profile(path) == prof


def test_profile_file_partial_and_errors(tmp_path):
    path = tmp_path / "p.ini"
    path.write_text("[profile]\nbase = delirious\nname = mine\nvisit_rate_night = 2.5\n")
    prof = sim.load_profile(path)
    assert prof.name == "mine" and prof.visit_rate_night == 2.5
    assert prof.activity_mean == sim.preset("delirious").activity_mean
    path.write_text("[profile]\nbogus = 1\nseed = x\n")
    with pytest.raises(ConfigError) as exc:
        sim.load_profile(path)
    assert "bogus" in str(exc.value) and "seed" in str(exc.value)
    path.write_text("[other]\n")
    with pytest.raises(ConfigError):
        sim.load_profile(path)


def test_zero_profile_streams():
    s = sim.simulate_patient(sim.zero_profile(), "z", 1)
    for site in SITES:
        (series,) = s["epochs"][site]
        assert np.all(series.counts == 0)
    assert all(f.count == 1 for f in s["occupancy"])
    assert all(v == 0 for _, v in s["truth_visitors"])
    assert s["truth_expressions"] == []


def test_keypoint_dataset_balanced_and_separable():
    frames, labels = sim.simulate_keypoint_dataset(101, seed=0)
    assert len(frames) == 101
    counts = [labels.count(p) for p in POSTURES]
    assert max(counts) - min(counts) <= 1
    for f in frames:
        for x, y, *_ in f.joints.values():
            assert 0 <= x < f.width and 0 <= y < f.height


def test_template_geometry():
    st = sim.template("standing")
    ly = sim.template("lying")
    v = st["neck"] - (st["l_hip"] + st["r_hip"]) / 2
    assert math.isclose(np.hypot(*v), 1.0)
    w = ly["neck"] - (ly["l_hip"] + ly["r_hip"]) / 2
    assert abs(float(np.dot(v, w))) < 1e-12


@pytest.fixture(scope="module")
def small_cohort(tmp_path_factory):
    out = tmp_path_factory.mktemp("cohort")
    ids = sim.simulate_cohort(sim.preset("delirious", seed=3), 2, 2, out)
    ids += sim.simulate_cohort(sim.preset("non_delirious", seed=3), 1, 2, out)
    return out, ids


def test_cohort_layout(small_cohort):
    out, ids = small_cohort
    assert ids == ["delirious_000", "delirious_001", "non_delirious_000"]
    assert read_cohort(out) == {"delirious_000": "delirious", "delirious_001": "delirious",
                                "non_delirious_000": "non_delirious"}
    assert [p.name for p in patient_dirs(out)] == ids
    for pid in ids:
        assert {"postures.csv", "expressions.csv", "visitors.csv"} <= {
            p.name for p in (out / pid / "truth").iterdir()}


def test_seeded_runs_identical_and_seeds_differ(tmp_path, small_cohort):
    out, _ = small_cohort
    again = tmp_path / "again"
    sim.simulate_cohort(sim.preset("delirious", seed=3), 2, 2, again)
    sim.simulate_cohort(sim.preset("non_delirious", seed=3), 1, 2, again)
    assert tree_digest(again) == tree_digest(out)
    other = tmp_path / "other"
    sim.simulate_cohort(sim.preset("delirious", seed=4), 2, 2, other)
    a, b = tree_digest(other), tree_digest(out)
    assert a["delirious_000/activity_wrist.csv"] != b["delirious_000/activity_wrist.csv"]


def test_parallel_generation_matches_serial(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    sim.simulate_cohort(sim.preset("non_delirious"), 2, 1, a, jobs=1)
    sim.simulate_cohort(sim.preset("non_delirious"), 2, 1, b, jobs=2)
    assert tree_digest(a) == tree_digest(b)


def read_truth(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_truth_consistent_with_streams(small_cohort):
    out, ids = small_cohort
    pdir = out / ids[0]
    days = load_patient_dir(pdir)
    assert len(days) == 2
    occ = {format_frame_ts(f.ts): f for d in days for f in d.occupancy}
    visitors = read_truth(pdir / "truth" / "visitors.csv")
    assert len(visitors) == len(occ)
    for row in visitors:
        v = int(row["visitors"])
        f = occ[row["timestamp"]]
        assert f.count == 1 + v
        if v:
            assert f.count >= 2 or (not f.patient_recognized and f.count >= 1)
    frames = {format_frame_ts(f.ts): f for d in days for f in d.au_frames}
    shown = {}
    for row in read_truth(pdir / "truth" / "expressions.csv"):
        shown.setdefault(row["timestamp"], set()).add(row["expression"])
    assert shown
    for ts, names in shown.items():
        assert frames[ts].success
        assert names <= detect_expressions(frames[ts])
    labels = read_truth(pdir / "truth" / "postures.csv")
    assert {r["label"] for r in labels} <= set(POSTURES)
    assert len(labels) == sum(len(d.keypoints) for d in days)


def test_night_activity_direction_in_streams():
    d = sim.simulate_patient(sim.preset("delirious"), "d", 2)
    n = sim.simulate_patient(sim.preset("non_delirious"), "n", 2)

    def night_mean(s):
        return np.nanmean(np.concatenate([e.counts[720:] for e in s["epochs"]["wrist"]]))

    def day_mean(s):
        return np.nanmean(np.concatenate([e.counts[:720] for e in s["epochs"]["wrist"]]))

    assert night_mean(d) > night_mean(n)
    assert day_mean(n) > night_mean(n)


def test_frame_interval_controls_density():
    prof = sim.CohortProfile(name="coarse", frame_interval_s=300).validate()
    s = sim.simulate_patient(prof, "c", 1)
    assert len(s["au"]) == 288 and len(s["occupancy"]) == 288
    assert s["au"][1].ts - s["au"][0].ts == timedelta(minutes=5)
