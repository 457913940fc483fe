"""Posture recognition from 2D keypoints.

Each frame becomes a 21-value poselet vector: 12 limb lengths divided by the
torso length (neck to mid-hip) and 9 unsigned joint angles in radians. Missing
values are filled by inverse-distance KNN imputation, and a Minkowski KNN
classifier assigns one of four postures.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import kernels
from .errors import DataError, ParseError
from .ingest import KeypointFrame, format_number

POSTURES = ("lying", "sitting_on_bed", "sitting_on_chair", "standing")

LIMBS = (
    ("neck_nose", "neck", "nose"),
    ("neck_l_shoulder", "neck", "l_shoulder"),
    ("neck_r_shoulder", "neck", "r_shoulder"),
    ("l_upper_arm", "l_shoulder", "l_elbow"),
    ("r_upper_arm", "r_shoulder", "r_elbow"),
    ("l_forearm", "l_elbow", "l_wrist"),
    ("r_forearm", "r_elbow", "r_wrist"),
    ("torso", "neck", "mid_hip"),
    ("l_thigh", "l_hip", "l_knee"),
    ("r_thigh", "r_hip", "r_knee"),
    ("l_shank", "l_knee", "l_ankle"),
    ("r_shank", "r_knee", "r_ankle"),
)
# (name, end A, vertex, end B): the angle at the vertex between the two segments.
ANGLES = (
    ("l_elbow_angle", "l_shoulder", "l_elbow", "l_wrist"),
    ("r_elbow_angle", "r_shoulder", "r_elbow", "r_wrist"),
    ("l_knee_angle", "l_hip", "l_knee", "l_ankle"),
    ("r_knee_angle", "r_hip", "r_knee", "r_ankle"),
    ("l_hip_angle", "l_shoulder", "l_hip", "l_knee"),
    ("r_hip_angle", "r_shoulder", "r_hip", "r_knee"),
    ("l_shoulder_angle", "l_hip", "l_shoulder", "l_elbow"),
    ("r_shoulder_angle", "r_hip", "r_shoulder", "r_elbow"),
)
FEATURE_NAMES = tuple(n for n, *_ in LIMBS) + tuple(n for n, *_ in ANGLES) + ("torso_vertical_angle",)
N_FEATURES = len(FEATURE_NAMES)


@dataclass(frozen=True, eq=False)
class PoseletFeatures:
    values: np.ndarray

    @property
    def missing(self) -> np.ndarray:
        return np.isnan(self.values)

    def as_dict(self) -> dict:
        return dict(zip(FEATURE_NAMES, self.values.tolist()))


def _angle(u, v) -> float:
    # atan2 stays accurate near 0 and pi where arccos does not.
    cross = u[0] * v[1] - u[1] * v[0]
    dot = u[0] * v[0] + u[1] * v[1]
    return math.atan2(abs(cross), dot)


def extract_poselet(frame: KeypointFrame) -> PoseletFeatures:
    """Limb-length and joint-angle features; all-missing without neck and a hip."""
    pts = {name: np.array(v[:2], dtype=float) for name, v in frame.joints.items()}
    values = np.full(N_FEATURES, np.nan)
    hips = [pts[h] for h in ("l_hip", "r_hip") if h in pts]
    if "neck" not in pts or not hips:
        return PoseletFeatures(values)
    pts["mid_hip"] = np.mean(hips, axis=0)
    torso = float(np.hypot(*(pts["neck"] - pts["mid_hip"])))
    if torso <= 0:
        return PoseletFeatures(values)
    for i, (_, a, b) in enumerate(LIMBS):
        if a in pts and b in pts:
            values[i] = float(np.hypot(*(pts[b] - pts[a]))) / torso
    base = len(LIMBS)
    for j, (_, a, v, b) in enumerate(ANGLES):
        if a in pts and v in pts and b in pts:
            u1, u2 = pts[a] - pts[v], pts[b] - pts[v]
            if np.any(u1) and np.any(u2):
                values[base + j] = _angle(u1, u2)
    # image y grows downward, so "up" is (0, -1)
    values[-1] = _angle(pts["neck"] - pts["mid_hip"], np.array([0.0, -1.0]))
    return PoseletFeatures(values)


def feature_matrix(frames: Iterable[KeypointFrame]) -> np.ndarray:
    rows = [extract_poselet(f).values for f in frames]
    return np.vstack(rows) if rows else np.empty((0, N_FEATURES))


# --------------------------------------------------------------------- imputation

def impute_knn(rows, k: int = 3, donors=None) -> np.ndarray:
    """Fill NaNs with the inverse-distance weighted mean of the k nearest donors.

    Distances use only coordinates observed in both rows (scaled up by the share
    observed). Donors for a feature are rows where it is observed; ``donors``
    defaults to ``rows`` itself. A zero-distance donor is copied outright.
    """
    rows = np.array(rows, dtype=float)
    if rows.ndim != 2:
        raise ValueError("rows must be a 2-D array")
    pool = rows if donors is None else np.asarray(donors, dtype=float)
    if k < 1:
        raise ValueError("k must be >= 1")
    missing = np.isnan(rows)
    if not missing.any():
        return rows
    need = np.flatnonzero(missing.any(axis=0))
    observed_counts = (~np.isnan(pool)).sum(axis=0)
    short = [FEATURE_NAMES[j] if rows.shape[1] == N_FEATURES else str(j)
             for j in need if observed_counts[j] < k]
    if short:
        raise DataError(f"features observed in fewer than {k} donor rows: {', '.join(short)}")
    receivers = np.flatnonzero(missing.any(axis=1))
    dist = kernels.nan_euclidean(np.ascontiguousarray(rows[receivers]), np.ascontiguousarray(pool))
    out = rows.copy()
    for r_pos, r in enumerate(receivers):
        d_row = dist[r_pos]
        for j in np.flatnonzero(missing[r]):
            cand = np.flatnonzero(~np.isnan(pool[:, j]) & ~np.isnan(d_row))
            if cand.size == 0:
                raise DataError(f"row {r} shares no observed feature with any donor of feature {j}")
            order = cand[np.argsort(d_row[cand], kind="stable")][:k]
            d = d_row[order]
            vals = pool[order, j]
            zero = d == 0
            if zero.any():
                out[r, j] = float(np.mean(vals[zero]))
            else:
                w = 1.0 / d
                out[r, j] = float(np.sum(w * vals) / np.sum(w))
    return out


# --------------------------------------------------------------------- classifier

@dataclass(frozen=True, eq=False)
class KnnModel:
    features: np.ndarray
    labels: tuple
    k: int = 1
    p: float = 2.0
    feature_names: tuple = FEATURE_NAMES


def knn_train(features, labels: Sequence[str], k: int = 1, minkowski_p: float = 2.0) -> KnnModel:
    X = np.array(features, dtype=float)
    if X.ndim != 2 or X.shape[0] == 0:
        raise DataError("training set is empty")
    if X.shape[0] != len(labels):
        raise ValueError("features and labels differ in length")
    if np.isnan(X).any():
        raise DataError("training rows must be complete; impute first")
    if k < 1 or minkowski_p < 1:
        raise ValueError("need k >= 1 and Minkowski order p >= 1")
    if k > X.shape[0]:
        raise ValueError("k exceeds the number of training rows")
    X.setflags(write=False)
    names = FEATURE_NAMES if X.shape[1] == N_FEATURES else tuple(f"f{i}" for i in range(X.shape[1]))
    return KnnModel(X, tuple(labels), int(k), float(minkowski_p), names)


def knn_neighbors(model: KnnModel, queries) -> tuple[np.ndarray, np.ndarray]:
    Q = np.atleast_2d(np.asarray(queries, dtype=float))
    if np.isnan(Q).any():
        raise DataError("queries must be complete; impute first")
    return kernels.knn_query(model.features, np.ascontiguousarray(Q), model.k, model.p)


def knn_classify(model: KnnModel, queries) -> list[str]:
    """Majority label of the k nearest rows; ties go to the label seen nearest."""
    if len(model.labels) == 0:
        raise DataError("model is empty")
    idx, _ = knn_neighbors(model, queries)
    out = []
    for row in idx:
        votes = Counter(model.labels[i] for i in row)
        top = max(votes.values())
        out.append(next(model.labels[i] for i in row if votes[model.labels[i]] == top))
    return out


def predict_frames(model: KnnModel, frames: Sequence[KeypointFrame], k_impute: int = 3) -> list[str]:
    """Extract, impute against the training rows, then classify."""
    X = feature_matrix(frames)
    if X.shape[0] == 0:
        return []
    usable = ~np.all(np.isnan(X), axis=1)
    labels = [None] * X.shape[0]
    if usable.any():
        filled = impute_knn(X[usable], k_impute, donors=model.features)
        for pos, lab in zip(np.flatnonzero(usable), knn_classify(model, filled)):
            labels[pos] = lab
    return labels


def save_model(model: KnnModel, path) -> None:
    lines = [
        "# wardsense-knn v1",
        f"k={model.k}",
        f"p={format_number(model.p)}",
        "features=" + ",".join(model.feature_names),
    ]
    for label, row in zip(model.labels, model.features):
        lines.append(label + "," + ",".join(repr(float(v)) for v in row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_model(path) -> KnnModel:
    text = Path(path).read_text(encoding="utf-8").splitlines()
    if not text or text[0] != "# wardsense-knn v1":
        raise ParseError("not a wardsense KNN model (bad version header)", path, 1)
    try:
        k = int(text[1].split("=", 1)[1])
        p = float(text[2].split("=", 1)[1])
        names = tuple(text[3].split("=", 1)[1].split(","))
    except (IndexError, ValueError):
        raise ParseError("malformed model header", path, 2) from None
    labels, rows = [], []
    for line_no, line in enumerate(text[4:], start=5):
        parts = line.split(",")
        if len(parts) != len(names) + 1:
            raise ParseError(f"expected {len(names) + 1} fields", path, line_no)
        labels.append(parts[0])
        rows.append([float(v) for v in parts[1:]])
    model = knn_train(np.array(rows).reshape(len(rows), len(names)), labels, k, p)
    return KnnModel(model.features, model.labels, k, p, names)


# --------------------------------------------------------------------- evaluation

@dataclass(frozen=True, eq=False)
class ConfusionReport:
    labels: tuple
    counts: np.ndarray
    percent: np.ndarray
    per_class_accuracy: dict
    macro_f1: float

    def format_table(self) -> str:
        """Row-normalized percentages laid out as true label x predicted label."""
        width = max(len(l) for l in self.labels) + 2
        cell = max(width, 9)
        head = " " * (len("True label") + 1) + " " * width
        lines = [head + "Predicted label"]
        lines.append(" " * (len("True label") + 1) + " " * width
                     + "".join(f"{l:>{cell}}" for l in self.labels))
        for i, l in enumerate(self.labels):
            prefix = "True label " if i == 0 else " " * (len("True label") + 1)
            row = "".join(
                f"{'N/A':>{cell}}" if np.isnan(v) else f"{v:>{cell}.2f}" for v in self.percent[i]
            )
            lines.append(f"{prefix}{l:<{width}}{row}")
        lines.append(f"macro F1 = {self.macro_f1:.4f}")
        return "\n".join(lines) + "\n"


def confusion(y_true: Sequence[str], y_pred: Sequence[str], labels: Sequence[str] = POSTURES) -> ConfusionReport:
    if len(y_true) != len(y_pred):
        raise ValueError("y_true and y_pred differ in length")
    index = {l: i for i, l in enumerate(labels)}
    stray = sorted({str(v) for v in (*y_true, *y_pred) if v not in index})
    if stray:
        raise DataError(f"labels outside {tuple(labels)}: {', '.join(stray)}")
    n = len(labels)
    counts = np.zeros((n, n), dtype=np.int64)
    for t, p in zip(y_true, y_pred):
        counts[index[t], index[p]] += 1
    row_tot = counts.sum(axis=1)
    percent = np.full((n, n), np.nan)
    present = row_tot > 0
    percent[present] = 100.0 * counts[present] / row_tot[present, None]
    acc = {l: (float(percent[i, i]) if present[i] else None) for i, l in enumerate(labels)}
    f1s = []
    for i in np.flatnonzero(present):
        tp = counts[i, i]
        pred_tot = counts[:, i].sum()
        prec = tp / pred_tot if pred_tot else 0.0
        rec = tp / row_tot[i]
        f1s.append(0.0 if prec + rec == 0 else 2 * prec * rec / (prec + rec))
    macro = float(np.mean(f1s)) if f1s else math.nan
    return ConfusionReport(tuple(labels), counts, percent, acc, macro)


def evaluate(model: KnnModel, test_rows, test_labels: Sequence[str], labels: Sequence[str] = POSTURES) -> ConfusionReport:
    return confusion(list(test_labels), knn_classify(model, test_rows), labels)


def posture_fractions(labels: Iterable[str | None]) -> dict[str, float]:
    """Share of labelled frames in each posture (unlabelled frames ignored)."""
    counts = Counter(l for l in labels if l is not None)
    total = sum(counts.values())
    if total == 0:
        raise DataError("no labelled frames in segment")
    unknown = set(counts) - set(POSTURES)
    if unknown:
        raise DataError(f"unknown posture labels: {sorted(unknown)}")
    return {p: counts.get(p, 0) / total for p in POSTURES}


def stratified_split(labels: Sequence[str], test_fraction: float = 0.2, seed: int = 0):
    """Train/test index arrays with each label split in the same proportion."""
    rng = np.random.default_rng(seed)
    labels = np.asarray(labels)
    train, test = [], []
    for lab in sorted(set(labels.tolist())):
        idx = np.flatnonzero(labels == lab)
        rng.shuffle(idx)
        n_test = int(round(test_fraction * idx.size))
        test.extend(idx[:n_test].tolist())
        train.extend(idx[n_test:].tolist())
    return np.array(sorted(train), dtype=np.int64), np.array(sorted(test), dtype=np.int64)


def cross_validate(X, y, k_values=(1, 3, 5), p_values=(1.0, 2.0), folds: int = 5, seed: int = 0) -> dict:
    """Mean fold accuracy for each (k, p); folds are stratified."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y)
    rng = np.random.default_rng(seed)
    fold_of = np.empty(len(y), dtype=np.int64)
    for lab in sorted(set(y.tolist())):
        idx = np.flatnonzero(y == lab)
        rng.shuffle(idx)
        fold_of[idx] = np.arange(idx.size) % folds
    scores = {}
    for k in k_values:
        for p in p_values:
            accs = []
            for f in range(folds):
                tr, te = fold_of != f, fold_of == f
                if not te.any() or tr.sum() < k:
                    continue
                model = knn_train(X[tr], y[tr].tolist(), k, p)
                pred = knn_classify(model, X[te])
                accs.append(float(np.mean(np.asarray(pred) == y[te])))
            scores[(k, p)] = float(np.mean(accs)) if accs else math.nan
    return scores
