"""
Window-shape dictionary for sliding-window proposal generation.

Shapes are measured in cells of the coarsest layer. A shape covers an object
at a given scale if some integer grid placement overlaps it well; because the
intersection of two axis-aligned boxes factorises into a horizontal and a
vertical overlap, the best placement can be found per axis in O(1).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigurationError
from .featmap import grid_dims, scale_factor
from .geometry import BoundingBox, GroundTruth, ScoredBox, clip_boxes, scored_boxes

DEFAULT_ALPHAS = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))
DEFAULT_SCALES = (227, 300, 400, 600)
COARSE_STRIDE = 16.0


@dataclass(frozen=True, order=True)
class WindowShape:
    w: int
    h: int

    def __post_init__(self):
        if self.w < 1 or self.h < 1:
            raise ConfigurationError(f"window shape must be at least 1x1, got {(self.w, self.h)}")


@dataclass
class WindowCatalog:
    shapes: list[WindowShape]
    z_max: int = 20
    alphas: tuple[float, ...] = DEFAULT_ALPHAS
    gains: list[float] = field(default_factory=list)

    def __post_init__(self):
        if len(set(self.shapes)) != len(self.shapes):
            raise ConfigurationError("window catalog contains duplicate shapes")

    @property
    def k(self) -> int:
        return len(self.shapes)

    def __len__(self):
        return len(self.shapes)

    def __iter__(self):
        return iter(self.shapes)

    def to_dict(self) -> dict:
        return {"z_max": self.z_max, "k": self.k, "alphas": list(self.alphas),
                "shapes": [[s.w, s.h] for s in self.shapes]}

    @classmethod
    def from_dict(cls, d: dict) -> "WindowCatalog":
        shapes = [WindowShape(int(w), int(h)) for w, h in d["shapes"]]
        if "k" in d and int(d["k"]) != len(shapes):
            raise ConfigurationError(f"catalog declares k={d['k']} but lists {len(shapes)} shapes")
        return cls(shapes, int(d.get("z_max", 20)), tuple(d.get("alphas", DEFAULT_ALPHAS)))


def candidate_pool(z_max: int = 20) -> list[WindowShape]:
    """All ``z_max**2`` shapes in lexicographic ``(w, h)`` order."""
    if z_max < 1:
        raise ConfigurationError(f"z_max must be >= 1, got {z_max}")
    return [WindowShape(w, h) for w in range(1, z_max + 1) for h in range(1, z_max + 1)]


def _best_axis_overlap(g0, g1, length, step):
    """Largest overlap of ``[g0, g1)`` with ``[k*step, k*step+length)``, k integer.

    The overlap as a function of a continuous offset is a trapezoid, so the
    integer optimum sits at the floor/ceil of one of the plateau ends.
    """
    a = np.minimum(g0, g1 - length) / step
    b = np.maximum(g0, g1 - length) / step
    best = np.zeros(np.broadcast(g0, length).shape)
    for k in (np.floor(a), np.ceil(a), np.floor(b), np.ceil(b)):
        lo = k * step
        ov = np.minimum(g1, lo + length) - np.maximum(g0, lo)
        best = np.maximum(best, ov)
    return best


def achievable_iou_array(gt: np.ndarray, w, h, stride: float, factor) -> np.ndarray:
    """Best grid-placement IoU for gt boxes ``(n, 4)`` in original pixels.

    ``w``/``h``/``factor`` broadcast against the gt rows. Placements are not
    limited to the image extent.
    """
    gt = np.asarray(gt, dtype=np.float64).reshape(-1, 4)
    factor = np.asarray(factor, dtype=np.float64)
    g = gt * (factor[..., None] if factor.ndim else factor)
    pw = np.asarray(w, dtype=np.float64) * stride
    ph = np.asarray(h, dtype=np.float64) * stride
    ix = _best_axis_overlap(g[..., 0], g[..., 2], pw, stride)
    iy = _best_axis_overlap(g[..., 1], g[..., 3], ph, stride)
    inter = ix * iy
    area = (g[..., 2] - g[..., 0]) * (g[..., 3] - g[..., 1])
    return inter / (area + pw * ph - inter)


def achievable_iou(gt: BoundingBox, shape: WindowShape, stride: float = COARSE_STRIDE,
                   scale_factor: float = 1.0) -> float:
    """Best IoU any integer placement of ``shape`` can reach on ``gt``.

    ``gt`` is in original-image pixels; it is multiplied by ``scale_factor``
    to land on the grid of the resized image whose cells are ``stride`` wide.
    """
    return float(achievable_iou_array(gt.as_array(), shape.w, shape.h, stride, scale_factor)[0])


def _gt_arrays(gt_set: Sequence[GroundTruth], scales: Sequence[float]):
    boxes = [g.boxes for g in gt_set if len(g)]
    if not boxes:
        raise ConfigurationError("ground-truth set is empty; cannot select windows")
    factors = np.array([[scale_factor(g.image_size, s) for s in scales]
                        for g in gt_set for _ in range(len(g))])
    return np.concatenate(boxes), factors


def coverage_matrix(candidates: Sequence[WindowShape], gt_set: Sequence[GroundTruth],
                    scales: Sequence[float] = DEFAULT_SCALES,
                    stride: float = COARSE_STRIDE) -> np.ndarray:
    """``(n_candidates, n_gt)`` best achievable IoU over all scales."""
    gt, factors = _gt_arrays(gt_set, scales)
    out = np.zeros((len(candidates), len(gt)))
    for j in range(factors.shape[1]):
        f = factors[:, j]
        for i, c in enumerate(candidates):
            np.maximum(out[i], achievable_iou_array(gt, c.w, c.h, stride, f), out=out[i])
    return out


def greedy_select(candidates: Sequence[WindowShape], gt_set: Sequence[GroundTruth],
                  scales: Sequence[float] = DEFAULT_SCALES, k: int = 50,
                  alphas: Iterable[float] = DEFAULT_ALPHAS,
                  stride: float = COARSE_STRIDE, z_max: int | None = None) -> WindowCatalog:
    """Pick ``k`` shapes one at a time, maximising the summed multi-threshold recall.

    Recall at threshold alpha counts objects whose best achievable IoU over
    the selected shapes and all scales is strictly above alpha. Ties go to
    the smaller ``w*h``, then to the lexicographically smaller ``(w, h)``.
    """
    candidates = list(candidates)
    alphas = tuple(alphas)
    if not alphas:
        raise ConfigurationError("alpha set must be non-empty")
    if k > len(candidates):
        raise ConfigurationError(f"cannot select {k} shapes from {len(candidates)} candidates")
    cover = coverage_matrix(candidates, gt_set, scales, stride)
    thresholds = np.asarray(alphas)[:, None, None]
    tiebreak = sorted(range(len(candidates)),
                      key=lambda i: (candidates[i].w * candidates[i].h,
                                     candidates[i].w, candidates[i].h))
    rank = np.empty(len(candidates), dtype=np.int64)
    rank[tiebreak] = np.arange(len(candidates))
    current = np.zeros(cover.shape[1])
    available = np.ones(len(candidates), dtype=bool)
    chosen, gains = [], []
    base = 0
    for _ in range(k):
        # integer hit counts keep tie detection exact
        counts = (np.maximum(cover, current) > thresholds).sum(axis=(0, 2))
        counts = np.where(available, counts, -1)
        best = counts.max()
        pick = np.flatnonzero(counts == best)
        pick = pick[np.argmin(rank[pick])]
        chosen.append(candidates[pick])
        gains.append((best - base) / cover.shape[1])
        base = best
        available[pick] = False
        current = np.maximum(current, cover[pick])
    zm = z_max if z_max is not None else max(max(c.w, c.h) for c in candidates)
    return WindowCatalog(chosen, zm, alphas, gains)


def max_recall(catalog: WindowCatalog | Sequence[WindowShape], gt_set: Sequence[GroundTruth],
               scales: Sequence[float] = DEFAULT_SCALES, beta: float = 0.5,
               stride: float = COARSE_STRIDE) -> float:
    """Fraction of objects some (shape, scale) reaches with IoU >= beta."""
    shapes = list(catalog)
    if not shapes:
        raise ConfigurationError("catalog is empty")
    best = coverage_matrix(shapes, gt_set, scales, stride).max(axis=0)
    return float((best >= beta).mean())


def enumerate_windows(map_dims: tuple[int, int], catalog: WindowCatalog | Iterable[WindowShape]):
    """Every unit-stride placement, shape-major then row-major; ``(n, 4)`` cells."""
    H, W = map_dims
    out = []
    for s in catalog:
        if s.w > W or s.h > H:
            continue
        ys, xs = np.mgrid[0:H - s.h + 1, 0:W - s.w + 1]
        xs, ys = xs.ravel(), ys.ravel()
        out.append(np.stack([xs, ys, xs + s.w, ys + s.h], axis=1))
    if not out:
        return np.zeros((0, 4), dtype=np.int64)
    return np.concatenate(out).astype(np.int64)


def window_count(map_dims: tuple[int, int], catalog: Iterable[WindowShape]) -> int:
    H, W = map_dims
    return sum(max(0, H - s.h + 1) * max(0, W - s.w + 1) for s in catalog)


def random_placements(image_size: tuple[int, int], catalog: Iterable[WindowShape],
                      scales: Sequence[float], n: int, rng,
                      stride: float = COARSE_STRIDE) -> list[ScoredBox]:
    """``n`` placements drawn uniformly from all (shape, scale, position) windows.

    Boxes are in original-image pixels and carry descending dummy scores so the
    list can be evaluated like ranked proposals.
    """
    rng = np.random.default_rng(rng)
    boxes = []
    for target in scales:
        f = scale_factor(image_size, target)
        cells = enumerate_windows(grid_dims(image_size, f, stride), catalog)
        boxes.append(cells * stride / f)
    boxes = np.concatenate(boxes) if boxes else np.zeros((0, 4))
    pick = rng.choice(len(boxes), size=min(n, len(boxes)), replace=False)
    picked = clip_boxes(boxes[pick], image_size)
    return scored_boxes(picked, np.arange(len(pick), 0, -1, dtype=np.float64))
