"""FACS rule engine: compile expression rules, evaluate them on AU frames, and
count relative expression frequencies.

Rule grammar, one rule per line::

    NAME: term(+term)*        term  = atom(||atom)*
                              atom  = [R]<AU number>[A]

``R`` marks a right-lateral AU and ``A`` a trace-level intensity. The AU stream
carries no lateral channels, so lateral atoms are evaluated bilaterally.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from datetime import datetime
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import DataError
from .ingest import (
    DEFAULT_ANCHOR_HOUR, INTENSITY_AUS, KNOWN_AUS, PRESENCE_AUS, SEGMENT_SLOTS,
    AUFrame, anchor_for, canonical_au, minute_offset, parse_au_jsonl,
)

log = logging.getLogger(__name__)

DEFAULT_RULES_TEXT = """\
Happiness: 6+12
Sadness: 1+4+15
Surprise: 1+2+5+26
Fear: 1+2+4+5+7+20+26
Anger: 4+5+7+23
Disgust: 9+15+16
Contempt: R12A+R14A
Pain: 4+6||7+9||10+43
"""


class RuleSyntaxError(DataError):
    def __init__(self, message, text, position, line=None):
        self.text = text
        self.position = position
        self.line = line
        where = f"line {line}, " if line is not None else ""
        super().__init__(f"{where}column {position + 1}: {message}: {text!r}")


class AUUnavailable(DataError):
    """An AU needed for a decision is not coded in the frame."""


@dataclass(frozen=True)
class Atom:
    au: int
    lateral: bool = False
    trace: bool = False

    @property
    def name(self) -> str:
        return f"AU{self.au:02d}"

    def render(self) -> str:
        return f"{'R' if self.lateral else ''}{self.au}{'A' if self.trace else ''}"


@dataclass(frozen=True)
class Term:
    """Disjunction of atoms; a single-atom term is a plain AU requirement."""

    atoms: tuple[Atom, ...]

    def render(self) -> str:
        return "||".join(a.render() for a in self.atoms)


@dataclass(frozen=True)
class ExpressionRule:
    name: str
    terms: tuple[Term, ...]

    def render(self) -> str:
        return f"{self.name}: " + "+".join(t.render() for t in self.terms)

    @property
    def aus(self) -> frozenset:
        return frozenset(a.name for t in self.terms for a in t.atoms)

    @property
    def approximations(self) -> tuple[str, ...]:
        notes = []
        for t in self.terms:
            for a in t.atoms:
                if a.lateral:
                    notes.append(f"{a.render()} evaluated bilaterally")
        return tuple(notes)


@dataclass(frozen=True)
class EvalPolicy:
    """How AU codes become active/inactive decisions.

    ``threshold`` applies to intensity-coded AUs, ``trace_threshold`` to atoms
    with the ``A`` suffix. ``aliases`` maps a rule AU onto a stream AU (for
    example ``{"AU43": "AU45"}``).
    """

    threshold: float = 1.0
    trace_threshold: float = 0.5
    strict: bool = False
    aliases: Mapping[str, str] = field(default_factory=dict)

    def resolve(self, name: str) -> str:
        return self.aliases.get(name, name)


@dataclass(frozen=True)
class ExpressionFrequency:
    name: str
    n_i: int
    n: int

    @property
    def f(self) -> float:
        return relative_frequency(self.n_i, self.n)


# ------------------------------------------------------------------ compilation

_ATOM = re.compile(r"\s*(R?)(\d+)(A?)\s*")
_NAME = re.compile(r"\s*([A-Za-z][\w\- ]*?)\s*:")


def _parse_rule(text: str, line=None) -> ExpressionRule:
    m = _NAME.match(text)
    if m is None:
        raise RuleSyntaxError("expected 'NAME:'", text, 0, line)
    name = m.group(1)
    pos = m.end()
    terms = []
    while True:
        atoms = []
        while True:
            a = _ATOM.match(text, pos)
            if a is None or not a.group(2):
                raise RuleSyntaxError("expected an AU number", text, pos, line)
            atoms.append(Atom(int(a.group(2)), bool(a.group(1)), bool(a.group(3))))
            pos = a.end()
            if text.startswith("||", pos):
                pos += 2
                continue
            break
        terms.append(Term(tuple(atoms)))
        if pos == len(text):
            break
        if text[pos] == "+":
            pos += 1
            continue
        raise RuleSyntaxError("expected '+', '||' or end of rule", text, pos, line)
    return ExpressionRule(name, tuple(terms))


def compile_rules(rule_text: str) -> list[ExpressionRule]:
    """Compile rule text (blank lines and ``#`` comments ignored)."""
    rules = []
    seen = set()
    for line_no, raw in enumerate(rule_text.splitlines(), start=1):
        text = raw.split("#", 1)[0].rstrip()
        if not text.strip():
            continue
        rule = _parse_rule(text, line_no)
        if rule.name in seen:
            raise RuleSyntaxError(f"duplicate rule {rule.name!r}", text, 0, line_no)
        seen.add(rule.name)
        rules.append(rule)
    return rules


def render_rules(rules: Iterable[ExpressionRule]) -> str:
    return "".join(r.render() + "\n" for r in rules)


def default_rules() -> list[ExpressionRule]:
    return compile_rules(DEFAULT_RULES_TEXT)


def merge_rules(base: Sequence[ExpressionRule], override: Sequence[ExpressionRule]) -> list[ExpressionRule]:
    """User rules replace built-ins of the same name and append new ones."""
    by_name = {r.name: r for r in base}
    for r in override:
        by_name[r.name] = r
    return list(by_name.values())


# ---------------------------------------------------------------- per-frame path

def _au_state(frame, name, min_intensity, policy):
    if min_intensity is not None and name in frame.intensities:
        return frame.intensities[name] >= min_intensity
    if name in frame.presences:
        return frame.presences[name] == 1
    if name in frame.intensities:
        return frame.intensities[name] >= policy.threshold
    return None


def au_active(frame: AUFrame, au: str, min_intensity: float | None = None,
              policy: EvalPolicy = EvalPolicy()) -> bool | None:
    """Whether ``au`` is on in ``frame``.

    Presence coding wins when available, except that an explicit
    ``min_intensity`` prefers the intensity channel. Returns None for an AU the
    frame does not code (lenient policy) or raises AUUnavailable (strict).
    """
    name = policy.resolve(canonical_au(au) or au)
    state = _au_state(frame, name, min_intensity, policy)
    if state is None and policy.strict:
        raise AUUnavailable(f"{name} not coded in frame at {frame.ts}")
    return state


def rule_detected(frame: AUFrame, rule: ExpressionRule, policy: EvalPolicy = EvalPolicy(),
                  skipped: set | None = None) -> bool:
    """All terms hold; terms with no coded AU are skipped (lenient) or raise (strict)."""
    holds = True
    evaluated = 0
    for term in rule.terms:
        states = [
            _au_state(frame, policy.resolve(a.name), policy.trace_threshold if a.trace else None, policy)
            for a in term.atoms
        ]
        known = [s for s in states if s is not None]
        if not known:
            if policy.strict:
                raise AUUnavailable(f"{rule.name}: term {term.render()} has no coded AU")
            if skipped is not None:
                skipped.add((rule.name, term.render()))
            continue
        evaluated += 1
        if not any(known):
            holds = False
    return holds and evaluated > 0


def detect_expressions(frame: AUFrame, rules: Sequence[ExpressionRule] | None = None,
                       policy: EvalPolicy = EvalPolicy(), skipped: set | None = None) -> set[str]:
    """Names of every expression whose rule holds in ``frame``; expressions may co-occur."""
    if rules is None:
        rules = default_rules()
    if not frame.success:
        return set()
    return {r.name for r in rules if rule_detected(frame, r, policy, skipped)}


def relative_frequency(n_i: int, n: int) -> float:
    if n <= 0:
        raise DataError("relative frequency needs at least one evaluated frame")
    if not 0 <= n_i <= n:
        raise ValueError(f"need 0 <= N_i <= N, got {n_i}, {n}")
    return n_i / n


def is_daytime(ts: datetime, anchor_hour: int = DEFAULT_ANCHOR_HOUR) -> bool:
    return minute_offset(ts, anchor_for(ts, anchor_hour)) < SEGMENT_SLOTS


def expression_frequencies(frames: Iterable[AUFrame], rules: Sequence[ExpressionRule] | None = None,
                           policy: EvalPolicy = EvalPolicy(), daytime_only: bool = True,
                           anchor_hour: int = DEFAULT_ANCHOR_HOUR) -> list[ExpressionFrequency]:
    """One frequency per rule over successful (and by default daytime) frames."""
    if rules is None:
        rules = default_rules()
    hits = {r.name: 0 for r in rules}
    n = 0
    skipped: set = set()
    for frame in frames:
        if not frame.success or (daytime_only and not is_daytime(frame.ts, anchor_hour)):
            continue
        n += 1
        for name in detect_expressions(frame, rules, policy, skipped):
            hits[name] += 1
    if n == 0:
        raise DataError("no successful frames to evaluate")
    for rule_name, term in sorted(skipped):
        log.info("%s: term %s skipped (AU not coded)", rule_name, term)
    return [ExpressionFrequency(r.name, hits[r.name], n) for r in rules]


# ------------------------------------------------------------------ column path

_I_INDEX = {name: i for i, name in enumerate(INTENSITY_AUS)}
_P_INDEX = {name: i for i, name in enumerate(PRESENCE_AUS)}


@dataclass(frozen=True, eq=False)
class AUColumns:
    """Columnar AU stream: NaN marks an uncoded intensity, -1 an uncoded presence."""

    ts: np.ndarray
    success: np.ndarray
    intensity: np.ndarray
    presence: np.ndarray

    def __len__(self):
        return self.success.shape[0]

    @classmethod
    def empty(cls, n: int) -> "AUColumns":
        return cls(
            np.zeros(n, dtype="datetime64[ms]"),
            np.zeros(n, dtype=bool),
            np.full((n, len(INTENSITY_AUS)), np.nan),
            np.full((n, len(PRESENCE_AUS)), -1, dtype=np.int8),
        )

    @classmethod
    def from_frames(cls, frames: Iterable[AUFrame]) -> "AUColumns":
        frames = list(frames)
        cols = cls.empty(len(frames))
        for i, f in enumerate(frames):
            cols._fill(i, f)
        return cols

    def _fill(self, i, f):
        self.ts[i] = np.datetime64(f.ts, "ms")
        self.success[i] = f.success
        for k, v in f.intensities.items():
            self.intensity[i, _I_INDEX[k]] = v
        for k, v in f.presences.items():
            self.presence[i, _P_INDEX[k]] = v

    def take(self, mask) -> "AUColumns":
        return AUColumns(self.ts[mask], self.success[mask], self.intensity[mask], self.presence[mask])

    def daytime_mask(self, anchor_hour: int = DEFAULT_ANCHOR_HOUR) -> np.ndarray:
        minutes = (self.ts - self.ts.astype("datetime64[D]")).astype("timedelta64[m]").astype(np.int64)
        return ((minutes - anchor_hour * 60) % 1440) < SEGMENT_SLOTS


def read_au_columns(path, strict: bool = True, chunk: int = 65536) -> AUColumns:
    """Stream an AU file into columns, growing the arrays chunk by chunk."""
    parts = []
    buf = []
    for frame in parse_au_jsonl(path, strict):
        buf.append(frame)
        if len(buf) == chunk:
            parts.append(AUColumns.from_frames(buf))
            buf = []
    if buf or not parts:
        parts.append(AUColumns.from_frames(buf))
    return AUColumns(
        np.concatenate([p.ts for p in parts]),
        np.concatenate([p.success for p in parts]),
        np.concatenate([p.intensity for p in parts]),
        np.concatenate([p.presence for p in parts]),
    )


def _atom_columns(cols: AUColumns, atom: Atom, policy: EvalPolicy):
    name = policy.resolve(atom.name)
    n = len(cols)
    active = np.zeros(n, dtype=bool)
    known = np.zeros(n, dtype=bool)
    ii = _I_INDEX.get(name)
    pi = _P_INDEX.get(name)
    if atom.trace and ii is not None:
        col = cols.intensity[:, ii]
        has = ~np.isnan(col)
        active |= has & (col >= policy.trace_threshold)
        known |= has
    if pi is not None:
        col = cols.presence[:, pi]
        has = (col >= 0) & ~known
        active |= has & (col == 1)
        known |= has
    if ii is not None:
        col = cols.intensity[:, ii]
        has = ~np.isnan(col) & ~known
        active |= has & (col >= policy.threshold)
        known |= has
    return active, known


def detect_matrix(cols: AUColumns, rules: Sequence[ExpressionRule] | None = None,
                  policy: EvalPolicy = EvalPolicy()) -> np.ndarray:
    """Boolean ``(frames, rules)`` matrix; unsuccessful frames are all False."""
    if rules is None:
        rules = default_rules()
    out = np.zeros((len(cols), len(rules)), dtype=bool)
    for r_i, rule in enumerate(rules):
        ok = cols.success.copy()
        evaluated = np.zeros(len(cols), dtype=bool)
        for term in rule.terms:
            t_active = np.zeros(len(cols), dtype=bool)
            t_known = np.zeros(len(cols), dtype=bool)
            for atom in term.atoms:
                a, k = _atom_columns(cols, atom, policy)
                t_active |= a & k
                t_known |= k
            if policy.strict and np.any(cols.success & ~t_known):
                raise AUUnavailable(f"{rule.name}: term {term.render()} has no coded AU in some frames")
            ok &= t_active | ~t_known
            evaluated |= t_known
        out[:, r_i] = ok & evaluated
    return out


def column_frequencies(cols: AUColumns, rules: Sequence[ExpressionRule] | None = None,
                       policy: EvalPolicy = EvalPolicy(), daytime_only: bool = True,
                       anchor_hour: int = DEFAULT_ANCHOR_HOUR) -> list[ExpressionFrequency]:
    if rules is None:
        rules = default_rules()
    mask = cols.success.copy()
    if daytime_only:
        mask &= cols.daytime_mask(anchor_hour)
    n = int(mask.sum())
    if n == 0:
        raise DataError("no successful frames to evaluate")
    hits = detect_matrix(cols.take(mask), rules, policy).sum(axis=0)
    return [ExpressionFrequency(r.name, int(h), n) for r, h in zip(rules, hits)]


def success_rate(cols: AUColumns) -> ExpressionFrequency:
    """Share of frames where the face and its AUs were detected."""
    return ExpressionFrequency("detection_success", int(cols.success.sum()), len(cols))


def unavailable_aus(rules: Sequence[ExpressionRule], policy: EvalPolicy = EvalPolicy()) -> dict[str, list[str]]:
    """Per rule, the referenced AUs that no stream column can supply."""
    return {
        r.name: sorted(a for a in r.aus if policy.resolve(a) not in KNOWN_AUS)
        for r in rules
    }
