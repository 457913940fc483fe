import math
from datetime import timedelta

import numpy as np
import pytest
from hypothesis import given, strategies as st

from wardsense import environs as E
from wardsense.errors import DataError
from wardsense.ingest import EnvSample, OccupancyFrame, PatientDay

from conftest import ANCHOR

# Reference sound pressures and their levels.
SPL_TABLE = [
    (20.0, 120.0), (2.0, 100.0), (0.2, 80.0), (0.02, 60.0),
    (0.002, 40.0), (0.0002, 20.0), (0.00002, 0.0),
]


@pytest.mark.parametrize("p,db", SPL_TABLE)
def test_spl_table(p, db):
    assert E.spl_from_pressure(p) == pytest.approx(db, rel=1e-9, abs=1e-12)


def test_spl_vectorized_and_inverse():
    p = np.array([r[0] for r in SPL_TABLE])
    np.testing.assert_allclose(E.spl_from_pressure(p), [r[1] for r in SPL_TABLE], atol=1e-9)
    np.testing.assert_allclose(E.pressure_from_spl(E.spl_from_pressure(p)), p, rtol=1e-12)


def test_spl_errors():
    for bad in (0.0, -1.0, math.nan):
        with pytest.raises(ValueError):
            E.spl_from_pressure(bad)
    with pytest.raises(ValueError):
        E.spl_from_pressure(1.0, p0=0.0)


@given(st.floats(1e-8, 1e6), st.floats(1.0001, 100))
def test_spl_monotone_and_decade(p, factor):
    assert E.spl_from_pressure(p * factor) > E.spl_from_pressure(p)
    assert E.spl_from_pressure(10 * p) == pytest.approx(E.spl_from_pressure(p) + 20.0, abs=1e-9)


def test_mean_spl_examples():
    assert E.mean_spl([60.0] * 5) == pytest.approx(60.0)
    assert E.mean_spl([0.0, 0.0]) == 0.0
    assert E.mean_spl([40.0, 60.0]) == pytest.approx(10 * math.log10((1e4 + 1e6) / 2))
    assert E.mean_spl([40.0, 60.0], mode="arithmetic") == 50.0
    with pytest.raises(DataError):
        E.mean_spl([])
    with pytest.raises(ValueError):
        E.mean_spl([1.0], mode="median")


def test_mean_spl_no_overflow():
    assert E.mean_spl([4000.0, 4000.0]) == pytest.approx(4000.0)


@given(st.lists(st.floats(0, 140), min_size=1, max_size=50))
def test_energy_mean_at_least_arithmetic(levels):
    assert E.mean_spl(levels) >= E.mean_spl(levels, "arithmetic") - 1e-9
    assert min(levels) - 1e-9 <= E.mean_spl(levels) <= max(levels) + 1e-9


# ------------------------------------------------------------------ summaries

def night_samples(db, minutes=720, lux=None):
    return [EnvSample(ANCHOR + timedelta(minutes=720 + m), db, "db", lux) for m in range(minutes)]


def test_all_night_45_noncompliant():
    s = E.env_summary(anchor=ANCHOR, samples=night_samples(45.0))
    assert s.night_mean_noncompliant and s.night_max_noncompliant and not s.who_compliant
    assert s.night_minutes_above_35 == 720
    assert math.isnan(s.day_mean_db)
    assert all(math.isnan(v) for v in s.hourly_db[:12])


def test_all_night_30_compliant():
    s = E.env_summary(anchor=ANCHOR, samples=night_samples(30.0))
    assert s.who_compliant and s.night_minutes_above_35 == 0


def test_single_loud_night_event_breaks_max_only():
    samples = night_samples(30.0)
    samples[100] = EnvSample(samples[100].ts, 60.0, "db")
    s = E.env_summary(anchor=ANCHOR, samples=samples)
    assert not s.night_mean_noncompliant
    assert s.night_max_noncompliant
    assert s.night_max_db >= s.night_mean_db


def test_mixed_fixture_matches_recompute(rng):
    samples = []
    for m in range(0, 1440, 3):
        ts = ANCHOR + timedelta(minutes=m, seconds=int(rng.integers(0, 60)))
        if rng.random() < 0.5:
            samples.append(EnvSample(ts, float(rng.uniform(1e-3, 0.2)), "pa", float(rng.uniform(0, 300))))
        else:
            samples.append(EnvSample(ts, float(rng.uniform(25, 70)), "db"))
    # out-of-day samples are ignored
    samples.append(EnvSample(ANCHOR - timedelta(minutes=1), 120.0, "db"))
    s = E.env_summary(PatientDay("p", ANCHOR, env=tuple(samples)))

    def level(x):
        return 20 * math.log10(x.sound / 2e-5) if x.sound_kind == "pa" else x.sound

    inside = [x for x in samples if x.ts >= ANCHOR]
    for h in range(24):
        lv = [level(x) for x in inside if (x.ts - ANCHOR) // timedelta(hours=1) == h]
        ref = 10 * math.log10(sum(10 ** (v / 10) for v in lv) / len(lv))
        assert s.hourly_db[h] == pytest.approx(ref, rel=1e-9)
        lux = [x.lux for x in inside if (x.ts - ANCHOR) // timedelta(hours=1) == h and x.lux is not None]
        if lux:
            assert s.hourly_lux[h] == pytest.approx(sum(lux) / len(lux))
    night = [level(x) for x in inside if x.ts - ANCHOR >= timedelta(hours=12)]
    assert s.night_max_db == pytest.approx(max(night))
    assert s.night_mean_db == pytest.approx(10 * math.log10(sum(10 ** (v / 10) for v in night) / len(night)))
    assert s.night_max_db >= s.night_mean_db
    arith = E.env_summary(anchor=ANCHOR, samples=samples, mode="arithmetic")
    assert arith.night_mean_db == pytest.approx(sum(night) / len(night))


def test_env_summary_needs_anchor():
    with pytest.raises(ValueError):
        E.env_summary(samples=[])


# ------------------------------------------------------------------ visitation

def occ(minute, count, recognized):
    return OccupancyFrame(ANCHOR + timedelta(minutes=minute), count, recognized)


def test_visitor_count_rules():
    assert E.visitor_count(OccupancyFrame(ANCHOR, 1, True)) == 0
    assert E.visitor_count(OccupancyFrame(ANCHOR, 2, True)) == 1
    assert E.visitor_count(OccupancyFrame(ANCHOR, 2, False)) == 1
    assert E.visitor_count(OccupancyFrame(ANCHOR, 2, False), assume_patient_present=False) == 2
    assert E.visitor_count(OccupancyFrame(ANCHOR, 0, False)) == 0


def test_alone_and_nurse_always():
    alone = [occ(m, 1, True) for m in range(0, 720, 5)]
    assert E.disruption_rate(alone, "day").rate == 0.0
    nurse = [occ(m, 2, True) for m in range(0, 720, 5)]
    assert E.disruption_rate(nurse, "day").rate == 1.0
    with pytest.raises(DataError):
        E.disruption_rate(nurse, "night")
    with pytest.raises(ValueError):
        E.disruption_rate(nurse, "dusk")


def test_disruption_matches_tally_and_order_invariant(rng):
    counts = rng.integers(0, 4, 1440)
    frames = [occ(m, int(c), bool(c > 0 and rng.random() < 0.8)) for m, c in enumerate(counts)]
    for seg, lo, hi in (("day", 0, 720), ("night", 720, 1440)):
        sub = frames[lo:hi]
        ref = sum(1 for f in sub if f.count - (1 if f.count > 0 else 0) >= 1)
        got = E.disruption_rate(frames, seg)
        assert (got.disrupted_frames, got.total_frames) == (ref, 720)
        shuffled = list(frames)
        rng.shuffle(shuffled)
        assert E.disruption_rate(shuffled, seg) == got
        assert 0.0 <= got.rate <= 1.0
    assert E.disruption_rate(frames, "all").total_frames == 1440
