"""Detection-quality toolkit: IoU, box regression loss, greedy NMS, AP/mAP and
embedding-based patient matching.

Boxes are ``(x, y, w, h)`` with ``(x, y)`` the top-left corner in pixels.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from . import kernels
from .errors import DataError, ParseError

# Candidate-window IoU thresholds of the three cascade stages.
NMS_PRESETS = {"pnet": 0.6, "rnet": 0.7, "onet": 0.9}
EMBEDDING_DIM = 128


@dataclass(frozen=True)
class BBox:
    x: float
    y: float
    w: float
    h: float
    score: float | None = None

    def __post_init__(self):
        if not (self.w > 0 and self.h > 0):
            raise DataError(f"box width and height must be positive, got {self.w}x{self.h}")
        if self.score is not None and not 0.0 <= self.score <= 1.0:
            raise DataError(f"box score {self.score} outside [0, 1]")

    @property
    def area(self) -> float:
        return self.w * self.h


def iou(a: BBox, b: BBox) -> float:
    """Intersection area over union area; 0 for disjoint boxes."""
    iw = max(0.0, min(a.x + a.w, b.x + b.w) - max(a.x, b.x))
    ih = max(0.0, min(a.y + a.h, b.y + b.h) - max(a.y, b.y))
    inter = iw * ih
    union = a.w * a.h + b.w * b.h - inter
    return inter / union


def bbox_loss(pred: BBox, truth: BBox) -> float:
    """Squared Euclidean distance between the (x, y, w, h) coordinate vectors."""
    return ((pred.x - truth.x) ** 2 + (pred.y - truth.y) ** 2
            + (pred.w - truth.w) ** 2 + (pred.h - truth.h) ** 2)


def _score_order(boxes: Sequence[BBox]) -> np.ndarray:
    scores = []
    for i, b in enumerate(boxes):
        if b.score is None:
            raise DataError(f"box {i} has no score")
        scores.append(b.score)
    # stable sort on the negated score keeps input order among ties
    return np.argsort(-np.asarray(scores, dtype=float), kind="stable")


def nms_greedy(boxes: Sequence[BBox], iou_threshold: float | str) -> list[BBox]:
    """Keep the best-scoring box, drop boxes overlapping it by more than the
    threshold, repeat. Output is in descending score order."""
    if isinstance(iou_threshold, str):
        iou_threshold = NMS_PRESETS[iou_threshold]
    if not 0.0 <= iou_threshold <= 1.0:
        raise ValueError("IoU threshold must be in [0, 1]")
    if not boxes:
        return []
    order = _score_order(boxes)
    arr = np.array([(b.x, b.y, b.w, b.h) for b in boxes], dtype=float)
    keep = kernels.nms(arr[:, 0].copy(), arr[:, 1].copy(), arr[:, 2].copy(), arr[:, 3].copy(),
                       order.astype(np.int64), float(iou_threshold))
    return [boxes[i] for i in keep]


# ---------------------------------------------------------------------- precision

def match_detections(detections, truths, iou_threshold: float = 0.5) -> np.ndarray:
    """True-positive flags for detections in descending-score order.

    ``detections`` and ``truths`` are ``(frame_id, BBox)`` pairs. Each detection
    takes the unmatched truth of its frame with the highest IoU, provided it
    reaches the threshold; every truth is matched at most once.
    """
    detections = list(detections)
    order = _score_order([d for _, d in detections]) if detections else np.array([], dtype=int)
    by_frame: dict = {}
    for fid, t in truths:
        by_frame.setdefault(fid, []).append(t)
    used = {fid: [False] * len(ts) for fid, ts in by_frame.items()}
    tp = np.zeros(len(detections), dtype=bool)
    for rank, i in enumerate(order):
        fid, det = detections[i]
        best, best_j = -1.0, -1
        for j, t in enumerate(by_frame.get(fid, ())):
            if used[fid][j]:
                continue
            v = iou(det, t)
            if v > best:
                best, best_j = v, j
        if best_j >= 0 and best >= iou_threshold:
            used[fid][best_j] = True
            tp[rank] = True
    return tp


def precision_recall(detections, truths, iou_threshold: float = 0.5):
    truths = list(truths)
    if not truths:
        raise DataError("average precision needs at least one ground-truth box")
    tp = match_detections(detections, truths, iou_threshold)
    ctp = np.cumsum(tp)
    ranks = np.arange(1, tp.size + 1)
    return ctp / ranks, ctp / len(truths)


def average_precision(detections, truths, iou_threshold: float = 0.5) -> float:
    """Area under the all-points interpolated precision-recall curve."""
    precision, recall = precision_recall(detections, truths, iou_threshold)
    if precision.size == 0:
        return 0.0
    mrec = np.concatenate(([0.0], recall, [recall[-1]]))
    mpre = np.concatenate(([0.0], precision, [0.0]))
    for i in range(mpre.size - 2, -1, -1):
        mpre[i] = max(mpre[i], mpre[i + 1])
    steps = np.flatnonzero(mrec[1:] != mrec[:-1])
    return float(np.sum((mrec[steps + 1] - mrec[steps]) * mpre[steps + 1]))


def mean_ap(aps: Iterable[float]) -> float:
    aps = list(aps)
    if not aps:
        raise DataError("mAP of an empty set")
    return float(np.mean(aps))


# --------------------------------------------------------------------- embeddings

def normalize(e) -> np.ndarray:
    v = np.asarray(e, dtype=float)
    norm = float(np.linalg.norm(v))
    if norm == 0.0 or not math.isfinite(norm):
        raise DataError("cannot normalize a zero (or non-finite) embedding")
    return v / norm


def match_patient(gallery, probe, threshold: float = 0.9) -> tuple[bool, float]:
    """Score = 1 - (min squared L2 distance to the gallery) / 4 on unit vectors."""
    gallery = [normalize(g) for g in gallery]
    if not gallery:
        raise DataError("gallery is empty")
    p = normalize(probe)
    G = np.vstack(gallery)
    d2 = np.sum((G - p) ** 2, axis=1)
    score = 1.0 - float(np.min(d2)) / 4.0
    score = min(1.0, max(0.0, score))
    return score >= threshold, score


# ----------------------------------------------------------------------- file I/O

def read_boxes_csv(path, require_score: bool = False) -> list[tuple[str, BBox]]:
    """``frame_id,x,y,w,h[,score]`` rows."""
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = [h.strip() for h in next(reader, [])]
        base = ["frame_id", "x", "y", "w", "h"]
        if header not in (base, base + ["score"]):
            raise ParseError("expected header frame_id,x,y,w,h[,score]", path, 1)
        scored = len(header) == 6
        if require_score and not scored:
            raise ParseError("detections need a score column", path, 1)
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ParseError(f"expected {len(header)} fields", path, line)
            try:
                box = BBox(*(float(v) for v in row[1:5]), score=float(row[5]) if scored else None)
            except ValueError as exc:
                raise ParseError(str(exc), path, line) from None
            out.append((row[0], box))
    return out


def read_embeddings_csv(path) -> dict[str, list[np.ndarray]]:
    """``id,e0..e127`` rows grouped by id (one id may carry several embeddings)."""
    out: dict[str, list[np.ndarray]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, [])
        expected = ["id"] + [f"e{i}" for i in range(EMBEDDING_DIM)]
        if [h.strip() for h in header] != expected:
            raise ParseError("expected header id,e0..e127", path, 1)
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != EMBEDDING_DIM + 1:
                raise ParseError(f"expected {EMBEDDING_DIM + 1} fields", path, line)
            try:
                out.setdefault(row[0], []).append(np.array([float(v) for v in row[1:]]))
            except ValueError as exc:
                raise ParseError(str(exc), path, line) from None
    return out


def per_frame_ap(detections, truths, iou_threshold: float = 0.5) -> dict[str, float]:
    """AP per frame id that has ground truth; input to mAP across frames or subjects."""
    dets: dict = {}
    for fid, d in detections:
        dets.setdefault(fid, []).append((fid, d))
    tru: dict = {}
    for fid, t in truths:
        tru.setdefault(fid, []).append((fid, t))
    return {fid: average_precision(dets.get(fid, []), tru[fid], iou_threshold) for fid in sorted(tru)}
