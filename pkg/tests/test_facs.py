import logging
from datetime import datetime, timedelta

import numpy as np
import pytest
from hypothesis import given, strategies as st

from wardsense import facs as F
from wardsense.errors import DataError
from wardsense.ingest import INTENSITY_AUS, PRESENCE_AUS, AUFrame

DAY = datetime(2020, 1, 6, 9, 0)


def frame(intensities=None, presences=None, success=True, ts=DAY):
    return AUFrame(ts, success, intensities or {}, presences or {})


def full_frame(on=(), ts=DAY):
    """A frame coding every stream AU, with ``on`` active and everything else off."""
    inten = {a: (2.0 if a in on else 0.0) for a in INTENSITY_AUS}
    pres = {a: (1 if a in on else 0) for a in PRESENCE_AUS}
    return frame(inten, pres, ts=ts)


# ------------------------------------------------------------------ grammar

def test_default_rules_has_eight_expressions():
    names = [r.name for r in F.default_rules()]
    assert names == ["Happiness", "Sadness", "Surprise", "Fear", "Anger", "Disgust", "Contempt", "Pain"]


def test_surprise_is_four_term_conjunction():
    (rule,) = F.compile_rules("Surprise: 1+2+5+26")
    assert [t.render() for t in rule.terms] == ["1", "2", "5", "26"]


def test_contempt_lateral_trace():
    (rule,) = F.compile_rules("Contempt: R12A+R14A")
    assert len(rule.terms) == 2
    for term, au in zip(rule.terms, (12, 14)):
        (atom,) = term.atoms
        assert atom == F.Atom(au, lateral=True, trace=True)
    assert rule.approximations == ("R12A evaluated bilaterally", "R14A evaluated bilaterally")


def test_pain_disjunction_groups():
    rule = {r.name: r for r in F.default_rules()}["Pain"]
    assert [[a.au for a in t.atoms] for t in rule.terms] == [[4], [6, 7], [9, 10], [43]]


@pytest.mark.parametrize("text,pos", [("X: 4+", 5), ("X 4", 0), ("X: 4|6", 4), ("X: ", 2), ("X: 4 5", 5)])
def test_parse_errors_report_position(text, pos):
    with pytest.raises(F.RuleSyntaxError) as exc:
        F.compile_rules(text)
    assert exc.value.position == pos
    assert exc.value.line == 1


def test_duplicate_rule_rejected():
    with pytest.raises(F.RuleSyntaxError):
        F.compile_rules("A: 1\nA: 2\n")


def test_comments_and_blank_lines_ignored():
    rules = F.compile_rules("# header\n\nA: 1+2  # trailing\n")
    assert F.render_rules(rules) == "A: 1+2\n"


def test_render_round_trip_default():
    assert F.render_rules(F.default_rules()) == F.DEFAULT_RULES_TEXT


@given(st.lists(
    st.lists(st.tuples(st.booleans(), st.integers(1, 99), st.booleans()), min_size=1, max_size=3),
    min_size=1, max_size=5,
))
def test_render_compile_round_trip(terms):
    text = "Rule: " + "+".join(
        "||".join(f"{'R' if r else ''}{n}{'A' if t else ''}" for r, n, t in term) for term in terms
    )
    rules = F.compile_rules(text)
    assert F.render_rules(rules) == text + "\n"
    assert F.compile_rules(F.render_rules(rules)) == rules


def test_merge_rules_overrides_and_appends():
    merged = F.merge_rules(F.default_rules(), F.compile_rules("Pain: 4+43\nYawn: 26+27"))
    by_name = {r.name: r.render() for r in merged}
    assert by_name["Pain"] == "Pain: 4+43"
    assert by_name["Yawn"] == "Yawn: 26+27"
    assert len(merged) == 9


# ------------------------------------------------------------------ au_active

def test_au_active_basic():
    assert F.au_active(frame(presences={"AU04": 1}), "AU04") is True
    assert F.au_active(frame(intensities={"AU01": 0.5}), "AU01") is False
    assert F.au_active(frame(intensities={"AU01": 1.0}), "AU1") is True


def test_presence_wins_over_intensity():
    f = frame({"AU12": 3.0}, {"AU12": 0})
    assert F.au_active(f, "AU12") is False
    assert F.au_active(f, "AU12", min_intensity=0.5) is True


def test_missing_au_lenient_vs_strict():
    f = frame({"AU01": 2.0})
    assert F.au_active(f, "AU26") is None
    with pytest.raises(F.AUUnavailable):
        F.au_active(f, "AU26", policy=F.EvalPolicy(strict=True))


def test_alias_maps_rule_au_to_stream_au():
    f = frame(presences={"AU45": 1})
    assert F.au_active(f, "AU43", policy=F.EvalPolicy(aliases={"AU43": "AU45"})) is True


# ------------------------------------------------------------------ detection

def test_pain_and_happiness_hand_built():
    pain = frame({"AU04": 2.0, "AU06": 2.0, "AU09": 2.0, "AU43": 2.0})
    assert "Pain" in F.detect_expressions(pain)
    happy = frame({"AU06": 2.0, "AU12": 2.0})
    assert "Happiness" in F.detect_expressions(happy)
    assert F.detect_expressions(full_frame()) == set()


def test_pain_alternatives():
    for on in ({"AU04", "AU07", "AU10"}, {"AU04", "AU06", "AU10"}):
        f = frame({a: 2.0 for a in on | {"AU43"}})
        assert "Pain" in F.detect_expressions(f)
    f = frame({"AU04": 2.0, "AU06": 2.0, "AU43": 2.0, "AU09": 0.0, "AU10": 0.0})
    assert "Pain" not in F.detect_expressions(f)


def test_lenient_skips_uncoded_term_and_logs(caplog):
    (rule,) = F.compile_rules("Probe: 1+26")
    f = frame({"AU01": 2.0})
    assert F.rule_detected(f, rule)
    with caplog.at_level(logging.INFO, logger="wardsense.facs"):
        F.expression_frequencies([f], [rule])
    assert "term 26 skipped" in caplog.text
    with pytest.raises(F.AUUnavailable):
        F.rule_detected(f, rule, F.EvalPolicy(strict=True))


def test_rule_with_no_coded_au_never_fires():
    (rule,) = F.compile_rules("Ghost: 26+27")
    assert not F.rule_detected(full_frame(INTENSITY_AUS), rule)


def test_unsuccessful_frame_detects_nothing():
    f = AUFrame(DAY, False, {"AU06": 3.0, "AU12": 3.0}, {})
    assert F.detect_expressions(f) == set()


def test_contempt_uses_trace_threshold():
    f = frame({"AU12": 0.6, "AU14": 0.6})
    assert "Contempt" in F.detect_expressions(f)
    f = frame({"AU12": 0.4, "AU14": 0.6})
    assert "Contempt" not in F.detect_expressions(f)


@given(st.sets(st.sampled_from(INTENSITY_AUS + PRESENCE_AUS)), st.sampled_from(INTENSITY_AUS + PRESENCE_AUS))
def test_monotone_in_active_aus(on, extra):
    before = F.detect_expressions(full_frame(on))
    after = F.detect_expressions(full_frame(on | {extra}))
    assert before <= after


def test_unavailable_aus_lists_missing_codes():
    missing = F.unavailable_aus(F.default_rules())
    assert missing["Pain"] == ["AU07", "AU10", "AU43"]
    assert missing["Happiness"] == []
    aliased = F.unavailable_aus(F.default_rules(), F.EvalPolicy(aliases={"AU43": "AU45"}))
    assert "AU43" not in aliased["Pain"]


# ------------------------------------------------------------------ frequencies

def test_ten_frames_three_pain():
    pain = {"AU04": 2.0, "AU06": 2.0, "AU09": 2.0, "AU43": 2.0}
    # AU43 coded off in the other frames; otherwise lenient skipping would let AU4 alone fire
    frames = [frame(pain if i < 3 else {"AU04": 2.0, "AU06": 2.0, "AU09": 2.0, "AU43": 0.0}) for i in range(10)]
    freqs = {e.name: e for e in F.expression_frequencies(frames)}
    assert freqs["Pain"].n_i == 3 and freqs["Pain"].n == 10
    assert freqs["Pain"].f == 0.3


def test_failed_and_night_frames_excluded():
    frames = [
        full_frame({"AU06", "AU12"}),
        AUFrame(DAY, False, {}, {}),
        full_frame({"AU06", "AU12"}, ts=DAY.replace(hour=20)),
        full_frame({"AU06", "AU12"}, ts=DAY.replace(hour=6, minute=59)),
    ]
    freqs = {e.name: e for e in F.expression_frequencies(frames)}
    assert (freqs["Happiness"].n_i, freqs["Happiness"].n) == (1, 1)
    allday = {e.name: e for e in F.expression_frequencies(frames, daytime_only=False)}
    assert (allday["Happiness"].n_i, allday["Happiness"].n) == (3, 3)


def test_no_frames_is_error():
    with pytest.raises(DataError):
        F.expression_frequencies([AUFrame(DAY, False, {}, {})])
    with pytest.raises(DataError):
        F.relative_frequency(0, 0)
    with pytest.raises(ValueError):
        F.relative_frequency(3, 2)


def random_frames(rng, n):
    frames = []
    for i in range(n):
        ts = DAY + timedelta(minutes=int(rng.integers(0, 1440)))
        inten = {a: float(rng.uniform(0, 3)) for a in INTENSITY_AUS if rng.random() < 0.9}
        pres = {a: int(rng.random() < 0.4) for a in PRESENCE_AUS if rng.random() < 0.7}
        frames.append(AUFrame(ts, bool(rng.random() < 0.8), inten, pres))
    return frames


def naive_recount(frames, rules, threshold=1.0):
    """Independent per-frame recount straight from the rule text."""
    def on(f, atom):
        name = f"AU{atom.au:02d}"
        if atom.trace and name in f.intensities:
            return f.intensities[name] >= 0.5
        if name in f.presences:
            return f.presences[name] == 1
        if name in f.intensities:
            return f.intensities[name] >= threshold
        return None

    counts = {r.name: 0 for r in rules}
    n = 0
    for f in frames:
        if not f.success or not 7 <= f.ts.hour < 19:
            continue
        n += 1
        for r in rules:
            results = []
            for t in r.terms:
                states = [on(f, a) for a in t.atoms]
                if all(s is None for s in states):
                    continue
                results.append(any(s for s in states if s is not None))
            if results and all(results):
                counts[r.name] += 1
    return counts, n


def test_frequencies_match_naive_recount(rng):
    frames = random_frames(rng, 400)
    rules = F.default_rules()
    counts, n = naive_recount(frames, rules)
    for e in F.expression_frequencies(frames, rules):
        assert e.n == n
        assert e.n_i == counts[e.name]


def test_partition_additivity(rng):
    frames = random_frames(rng, 300)
    whole = F.expression_frequencies(frames)
    parts = [F.expression_frequencies(frames[:100]), F.expression_frequencies(frames[100:])]
    for i, e in enumerate(whole):
        assert e.n_i == sum(p[i].n_i for p in parts)
        assert e.n == sum(p[i].n for p in parts)


# ------------------------------------------------------------------ columnar path

def test_columns_match_per_frame(rng):
    frames = random_frames(rng, 500)
    cols = F.AUColumns.from_frames(frames)
    rules = F.default_rules() + F.compile_rules("Probe: 1A||26+45")
    for policy in (F.EvalPolicy(), F.EvalPolicy(threshold=2.0, aliases={"AU43": "AU45"})):
        mat = F.detect_matrix(cols, rules, policy)
        for i, f in enumerate(frames):
            got = {r.name for r, hit in zip(rules, mat[i]) if hit}
            assert got == F.detect_expressions(f, rules, policy)
        a = F.column_frequencies(cols, rules, policy)
        b = F.expression_frequencies(frames, rules, policy)
        assert [(e.name, e.n_i, e.n) for e in a] == [(e.name, e.n_i, e.n) for e in b]


def test_columns_strict_raises():
    cols = F.AUColumns.from_frames([frame({"AU01": 2.0})])
    with pytest.raises(F.AUUnavailable):
        F.detect_matrix(cols, F.compile_rules("X: 1+2"), F.EvalPolicy(strict=True))


def test_daytime_mask_boundaries():
    ts = [DAY.replace(hour=h, minute=m) for h, m in ((6, 59), (7, 0), (18, 59), (19, 0), (0, 0))]
    cols = F.AUColumns.from_frames([frame(ts=t) for t in ts])
    assert cols.daytime_mask().tolist() == [False, True, True, False, False]


def test_success_rate_counts():
    cols = F.AUColumns.empty(10)
    cols.success[:7] = True
    sr = F.success_rate(cols)
    assert (sr.n_i, sr.n, sr.f) == (7, 10, 0.7)


def test_read_au_columns_chunks(tmp_path, rng):
    from wardsense.ingest import write_au_jsonl

    path = tmp_path / "au.jsonl"
    frames = sorted(random_frames(rng, 50), key=lambda f: f.ts)
    write_au_jsonl(frames, path)
    cols = F.read_au_columns(path, chunk=7)
    assert len(cols) == 50
    ref = F.AUColumns.from_frames(frames)
    np.testing.assert_array_equal(cols.presence, ref.presence)
    np.testing.assert_array_equal(cols.intensity, ref.intensity)
    np.testing.assert_array_equal(cols.success, ref.success)
