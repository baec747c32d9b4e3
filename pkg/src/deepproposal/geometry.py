"""
Box arithmetic, overlap, recall matching and non-maximum suppression.

Boxes use the half-open convention ``[x0, x1) x [y0, y1)`` in image pixels,
so width and height are plain coordinate differences. Bulk routines work on
``(n, 4)`` float arrays in ``(x0, y0, x1, y1)`` order; the dataclasses below
are the scalar-facing API.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numba
import numpy as np

from .errors import DegenerateInputError

@dataclass(frozen=True)
class BoundingBox:
    x0: float
    y0: float
    x1: float
    y1: float

    def __post_init__(self):
        coords = (self.x0, self.y0, self.x1, self.y1)
        if not all(math.isfinite(c) for c in coords):
            raise DegenerateInputError(f"non-finite box coordinates {coords}")
        if not (self.x1 > self.x0 and self.y1 > self.y0):
            raise DegenerateInputError(f"box {coords} has non-positive area")

    @property
    def width(self) -> float:
        return self.x1 - self.x0

    @property
    def height(self) -> float:
        return self.y1 - self.y0

    @property
    def area(self) -> float:
        return self.width * self.height

    def translate(self, dx: float, dy: float) -> "BoundingBox":
        return BoundingBox(self.x0 + dx, self.y0 + dy, self.x1 + dx, self.y1 + dy)

    def as_array(self) -> np.ndarray:
        return np.array([self.x0, self.y0, self.x1, self.y1], dtype=np.float64)

    @classmethod
    def from_array(cls, row) -> "BoundingBox":
        return cls(*(float(v) for v in row[:4]))


@dataclass(frozen=True)
class ScoredBox:
    box: BoundingBox
    score: float

    def __post_init__(self):
        if not math.isfinite(self.score):
            raise DegenerateInputError(f"non-finite score {self.score}")


@dataclass
class GroundTruth:
    """Annotated objects of one image.

    ``image_size`` is ``(height, width)`` of the original image; ``boxes`` is
    an ``(n, 4)`` array in original-image pixels.
    """

    image_id: str
    image_size: tuple[int, int]
    boxes: np.ndarray
    labels: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.boxes = as_box_array(self.boxes)
        if self.labels and len(self.labels) != len(self.boxes):
            raise DegenerateInputError("labels and boxes differ in length")

    def __len__(self):
        return len(self.boxes)

    def filter_label(self, label: str) -> "GroundTruth":
        keep = [i for i, lab in enumerate(self.labels) if lab == label]
        return GroundTruth(self.image_id, self.image_size, self.boxes[keep],
                           [self.labels[i] for i in keep])


def as_box_array(boxes) -> np.ndarray:
    """Coerce boxes (array-like, BoundingBox or ScoredBox sequence) to ``(n, 4)``."""
    if isinstance(boxes, np.ndarray):
        arr = boxes.astype(np.float64, copy=False)
    else:
        rows = []
        for b in boxes:
            if isinstance(b, ScoredBox):
                b = b.box
            rows.append(b.as_array() if isinstance(b, BoundingBox) else b)
        arr = np.asarray(rows, dtype=np.float64)
    if arr.size == 0:
        return np.zeros((0, 4), dtype=np.float64)
    return arr.reshape(-1, 4)


def box_areas(boxes: np.ndarray) -> np.ndarray:
    return (boxes[:, 2] - boxes[:, 0]) * (boxes[:, 3] - boxes[:, 1])


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection over union of two boxes."""
    iw = min(a.x1, b.x1) - max(a.x0, b.x0)
    ih = min(a.y1, b.y1) - max(a.y0, b.y0)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


def iou_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """
    Pairwise IoU between two box sets.

    Args:
        a: (N, 4) boxes
        b: (M, 4) boxes

    Returns:
        (N, M) IoU matrix
    """
    a = as_box_array(a)
    b = as_box_array(b)
    iw = np.minimum(a[:, None, 2], b[None, :, 2]) - np.maximum(a[:, None, 0], b[None, :, 0])
    ih = np.minimum(a[:, None, 3], b[None, :, 3]) - np.maximum(a[:, None, 1], b[None, :, 1])
    inter = np.clip(iw, 0.0, None) * np.clip(ih, 0.0, None)
    union = box_areas(a)[:, None] + box_areas(b)[None, :] - inter
    return inter / union


def nms_order(boxes: np.ndarray, scores: np.ndarray) -> np.ndarray:
    """Deterministic processing order: score desc, then x0, y0, area ascending."""
    boxes = as_box_array(boxes)
    return np.lexsort((box_areas(boxes), boxes[:, 1], boxes[:, 0], -np.asarray(scores)))


@numba.njit(cache=True)
def _greedy_suppress(boxes, threshold, limit):
    # boxes arrive in processing order; returns positions of retained boxes
    n = boxes.shape[0]
    kept = np.empty(min(n, limit), dtype=np.int64)
    n_kept = 0
    for i in range(n):
        x0, y0, x1, y1 = boxes[i, 0], boxes[i, 1], boxes[i, 2], boxes[i, 3]
        area = (x1 - x0) * (y1 - y0)
        alive = True
        for j in range(n_kept - 1, -1, -1):
            k = kept[j]
            iw = min(x1, boxes[k, 2]) - max(x0, boxes[k, 0])
            if iw <= 0.0:
                continue
            ih = min(y1, boxes[k, 3]) - max(y0, boxes[k, 1])
            if ih <= 0.0:
                continue
            inter = iw * ih
            k_area = (boxes[k, 2] - boxes[k, 0]) * (boxes[k, 3] - boxes[k, 1])
            if inter / (k_area + area - inter) > threshold:
                alive = False
                break
        if alive:
            kept[n_kept] = i
            n_kept += 1
            if n_kept >= limit:
                break
    return kept[:n_kept]


def nms_indices(boxes: np.ndarray, scores: np.ndarray, threshold: float,
                keep: int | None = None) -> np.ndarray:
    """Greedy NMS on arrays; returns indices of retained boxes in rank order.

    A box is dropped when its IoU with an already retained box is strictly
    greater than ``threshold``.
    """
    if not 0.0 < threshold <= 1.0:
        raise ValueError(f"NMS threshold must be in (0, 1], got {threshold}")
    boxes = as_box_array(boxes)
    n = len(boxes)
    limit = n if keep is None else min(int(keep), n)
    if n == 0 or limit <= 0:
        return np.zeros(0, dtype=np.int64)
    order = nms_order(boxes, scores)
    sorted_boxes = np.ascontiguousarray(boxes[order])
    return order[_greedy_suppress(sorted_boxes, float(threshold), limit)]


def nms(candidates: Sequence[ScoredBox], threshold: float,
        keep: int | None = None) -> list[ScoredBox]:
    """Non-maximum suppression over scored boxes.

    Output is sorted by descending score (ties: lower x0, lower y0, smaller
    area first) and holds at most ``keep`` boxes.
    """
    if not candidates:
        if not 0.0 < threshold <= 1.0:
            raise ValueError(f"NMS threshold must be in (0, 1], got {threshold}")
        return []
    boxes = as_box_array(candidates)
    scores = np.array([c.score for c in candidates], dtype=np.float64)
    return [candidates[i] for i in nms_indices(boxes, scores, threshold, keep)]


def best_overlaps(proposals: np.ndarray, groundtruth: np.ndarray):
    """Best IoU (and the proposal achieving it) for every ground-truth box."""
    proposals = as_box_array(proposals)
    groundtruth = as_box_array(groundtruth)
    if len(groundtruth) == 0:
        return np.zeros(0), np.zeros(0, dtype=np.int64)
    if len(proposals) == 0:
        return np.zeros(len(groundtruth)), np.full(len(groundtruth), -1, dtype=np.int64)
    m = iou_matrix(groundtruth, proposals)
    idx = m.argmax(axis=1)
    return m[np.arange(len(groundtruth)), idx], idx


def greedy_match_recall(proposals, groundtruth, beta: float):
    """Fraction of ground-truth boxes covered by some proposal with IoU >= beta.

    Each object is matched independently, so one proposal may recall several
    objects. Returns ``(recall, matches)`` where ``matches[g]`` is the index of
    the best proposal for object ``g`` or ``None`` when it is not recalled.
    An empty ground-truth set yields recall 1.0 and no matches.
    """
    if not 0.0 < beta <= 1.0:
        raise ValueError(f"beta must be in (0, 1], got {beta}")
    gt = as_box_array(groundtruth)
    if len(gt) == 0:
        return 1.0, []
    best, idx = best_overlaps(proposals, gt)
    hit = best >= beta
    matches = [int(i) if h else None for i, h in zip(idx, hit)]
    return float(hit.mean()), matches


def clip_boxes(boxes: np.ndarray, image_size: tuple[int, int]) -> np.ndarray:
    h, w = image_size
    out = boxes.copy()
    out[:, [0, 2]] = np.clip(out[:, [0, 2]], 0.0, w)
    out[:, [1, 3]] = np.clip(out[:, [1, 3]], 0.0, h)
    return out


def scored_boxes(boxes: np.ndarray, scores: Iterable[float]) -> list[ScoredBox]:
    return [ScoredBox(BoundingBox.from_array(b), float(s)) for b, s in zip(boxes, scores)]
