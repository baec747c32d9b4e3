"""
Contour map from low-level features and greedy box alignment to it.

The edge map is the per-cell gradient energy of a layer-2 feature map. Boxes
are scored by the edge mass in a border band minus the mass in the central
region, divided by ``perimeter ** kappa``; a box tightly enclosing a contour
maximises it. Mass is measured above the map's mean magnitude, so uniform
clutter contributes nothing whatever the band width. Box coordinates are in pixels of the resized image the edge map
belongs to and may be fractional: the summed-area table is interpolated
bilinearly, which is exact for a piecewise-constant density.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInputError
from .featmap import FeatureMap, build_integral
from .geometry import BoundingBox


@dataclass(frozen=True)
class EdgeMap:
    magnitudes: np.ndarray
    stride: float = 1.0

    @property
    def integral(self) -> np.ndarray:
        table = self.__dict__.get("_integral")
        if table is None:
            table = build_integral(self.magnitudes[None]).table[0]
            object.__setattr__(self, "_integral", table)
        return table

    @property
    def background(self) -> float:
        return float(self.magnitudes.mean())

    @property
    def dims(self) -> tuple[int, int]:
        return self.magnitudes.shape

    @property
    def extent(self) -> tuple[float, float]:
        """(height, width) covered by the map, in pixels."""
        h, w = self.magnitudes.shape
        return h * self.stride, w * self.stride


@dataclass(frozen=True)
class RefineConfig:
    kappa: float = 1.5
    inner_margin: float = 0.1
    max_iters: int = 8
    initial_step: float = 0.1
    min_step_px: float = 2.0

    def __post_init__(self):
        if not self.kappa > 0:
            raise ValueError(f"kappa must be positive, got {self.kappa}")
        if not 0 < self.inner_margin < 0.5:
            raise ValueError(f"inner_margin must be in (0, 0.5), got {self.inner_margin}")


def gradient_energy(data: np.ndarray) -> np.ndarray:
    """sqrt(sum_c dx^2 + dy^2) with central differences inside, one-sided at borders."""
    data = np.asarray(data, dtype=np.float64)
    energy = np.zeros(data.shape[1:])
    for axis in (1, 2):
        if data.shape[axis] > 1:
            energy += (np.gradient(data, axis=axis) ** 2).sum(axis=0)
    return np.sqrt(energy)


def edge_map_from_features(fm: FeatureMap) -> EdgeMap:
    mag = gradient_energy(fm.data)
    peak = mag.max()
    if peak > 0:
        mag = mag / peak
    return EdgeMap(mag, fm.stride)


def _mass(table: np.ndarray, x0, y0, x1, y1) -> np.ndarray:
    """Edge mass inside fractional cell rectangles (clipped to the map)."""
    h, w = table.shape[0] - 1, table.shape[1] - 1

    def at(y, x):
        x = np.clip(x, 0.0, w)
        y = np.clip(y, 0.0, h)
        xi = np.minimum(np.floor(x).astype(np.int64), w - 1)
        yi = np.minimum(np.floor(y).astype(np.int64), h - 1)
        fx, fy = x - xi, y - yi
        return ((1 - fy) * ((1 - fx) * table[yi, xi] + fx * table[yi, xi + 1])
                + fy * ((1 - fx) * table[yi + 1, xi] + fx * table[yi + 1, xi + 1]))

    return at(y1, x1) - at(y0, x1) - at(y1, x0) + at(y0, x0)


def edgebox_scores(em: EdgeMap, boxes: np.ndarray, cfg: RefineConfig = RefineConfig()) -> np.ndarray:
    """Vectorised :func:`edgebox_score` for ``(n, 4)`` pixel boxes.

    Boxes whose shrunken centre is thinner than one cell score ``-inf``.
    """
    b = np.asarray(boxes, dtype=np.float64).reshape(-1, 4) / em.stride
    x0, y0, x1, y1 = b.T
    w, h = x1 - x0, y1 - y0
    mx, my = cfg.inner_margin * w, cfg.inner_margin * h
    table, rho = em.integral, em.background
    full = _mass(table, x0, y0, x1, y1) - rho * w * h
    inner = _mass(table, x0 + mx, y0 + my, x1 - mx, y1 - my) - rho * (w - 2 * mx) * (h - 2 * my)
    out = (full - 2.0 * inner) / (2.0 * (w + h)) ** cfg.kappa
    bad = (w - 2 * mx < 1.0) | (h - 2 * my < 1.0)
    out[bad] = -np.inf
    return out


def edgebox_score(em: EdgeMap, box: BoundingBox, cfg: RefineConfig = RefineConfig()) -> float:
    """Border-band edge mass minus central edge mass, perimeter-normalised."""
    hh, ww = em.extent
    if box.x1 <= 0 or box.y1 <= 0 or box.x0 >= ww or box.y0 >= hh:
        raise DegenerateInputError(f"box {box} does not intersect the edge map")
    s = edgebox_scores(em, box.as_array()[None], cfg)[0]
    if not np.isfinite(s):
        raise DegenerateInputError(f"box {box} is thinner than one cell after shrinking")
    return float(s)


# shifts move both sides; size changes are anchored at either side so that
# every edge can move on its own
_MOVES = [(dx0, dy0, dx1, dy1, sign)
          for dx0, dy0, dx1, dy1 in [(1, 0, 1, 0), (0, 1, 0, 1),   # x, y
                                     (0, 0, 1, 0), (-1, 0, 0, 0),  # w at right / left
                                     (0, 0, 0, 1), (0, -1, 0, 0)]  # h at bottom / top
          for sign in (1, -1)]


def _apply(boxes, move, sx, sy):
    dx0, dy0, dx1, dy1, sign = move
    out = boxes.copy()
    out[:, 0] += sign * dx0 * sx
    out[:, 1] += sign * dy0 * sy
    out[:, 2] += sign * dx1 * sx
    out[:, 3] += sign * dy1 * sy
    return out


def refine_boxes(em: EdgeMap, boxes: np.ndarray, cfg: RefineConfig = RefineConfig()):
    """Run :func:`greedy_refine` on many boxes in lock-step.

    Returns ``(refined, initial_scores, final_scores)``.
    """
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4).copy()
    n = len(boxes)
    hh, ww = em.extent
    cur = edgebox_scores(em, boxes, cfg)
    initial = cur.copy()
    sx = cfg.initial_step * (boxes[:, 2] - boxes[:, 0])
    sy = cfg.initial_step * (boxes[:, 3] - boxes[:, 1])
    active = np.maximum(sx, sy) >= cfg.min_step_px
    for _ in range(cfg.max_iters):
        if not active.any():
            break
        improved = np.zeros(n, dtype=bool)
        for move in _MOVES:
            cand = _apply(boxes, move, sx, sy)
            inside = ((cand[:, 0] >= 0) & (cand[:, 1] >= 0) & (cand[:, 2] <= ww)
                      & (cand[:, 3] <= hh) & (cand[:, 2] > cand[:, 0]) & (cand[:, 3] > cand[:, 1]))
            s = np.full(n, -np.inf)
            ok = active & inside
            if ok.any():
                s[ok] = edgebox_scores(em, cand[ok], cfg)
            accept = ok & (s > cur)
            boxes[accept] = cand[accept]
            cur[accept] = s[accept]
            improved |= accept
        halve = active & ~improved
        sx[halve] *= 0.5
        sy[halve] *= 0.5
        active &= np.maximum(sx, sy) >= cfg.min_step_px
    return boxes, initial, cur


def greedy_refine(box: BoundingBox, em: EdgeMap, cfg: RefineConfig = RefineConfig()):
    """Coordinate-descent alignment of ``box`` to the edge map.

    Tries +-step moves of x, y, width and height in turn (size changes from
    either side), keeping any strict improvement; a sweep without improvement halves the steps. Stops once the
    step drops below ``min_step_px`` or after ``max_iters`` sweeps. Returns
    ``(box, score)``; the score is never below that of the input box.
    """
    refined, initial, final = refine_boxes(em, box.as_array()[None], cfg)
    if not final[0] > initial[0]:
        return box, float(initial[0])
    return BoundingBox.from_array(refined[0]), float(final[0])
