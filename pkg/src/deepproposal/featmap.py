"""
Feature maps, summed-area tables and constant-time window pooling.

A window on the feature grid is given by its top-left cell ``a`` (inclusive)
and bottom-right cell ``b`` (exclusive). With the integral table ``F`` padded
by a zero first row and column, the average over the window is

    (F[by, bx] - F[ay, bx] - F[by, ax] + F[ay, ax]) / ((bx - ax) * (by - ay))

per channel, i.e. four lookups regardless of the window size.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import BoundsError, DataIntegrityError, DegenerateInputError
from .geometry import BoundingBox

_EPS = 1e-9


@dataclass(frozen=True)
class FeatureMap:
    """One CNN layer at one image scale, stored ``(C, H, W)``."""

    layer_id: int
    scale_id: int
    stride: float
    data: np.ndarray

    def __post_init__(self):
        if self.data.ndim != 3 or min(self.data.shape) < 1:
            raise DataIntegrityError(f"feature map must be C x H x W, got {self.data.shape}")
        if not self.stride > 0:
            raise DataIntegrityError(f"stride must be positive, got {self.stride}")
        if not np.isfinite(self.data).all():
            raise DataIntegrityError("feature map contains non-finite values")

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    @property
    def dims(self) -> tuple[int, int]:
        return self.data.shape[1], self.data.shape[2]


@dataclass(frozen=True)
class IntegralImage:
    """Per-channel summed-area table of shape ``(C, H+1, W+1)`` in float64."""

    table: np.ndarray

    @property
    def channels(self) -> int:
        return self.table.shape[0]

    @property
    def height(self) -> int:
        return self.table.shape[1] - 1

    @property
    def width(self) -> int:
        return self.table.shape[2] - 1


@dataclass(frozen=True)
class CellBox:
    ax: int
    ay: int
    bx: int
    by: int

    def __post_init__(self):
        if not (0 <= self.ax < self.bx and 0 <= self.ay < self.by):
            raise DegenerateInputError(f"invalid cell box {self.as_tuple()}")

    @property
    def width(self) -> int:
        return self.bx - self.ax

    @property
    def height(self) -> int:
        return self.by - self.ay

    def as_tuple(self) -> tuple[int, int, int, int]:
        return (self.ax, self.ay, self.bx, self.by)


@dataclass(frozen=True)
class Descriptor:
    values: np.ndarray
    pyramid_levels: tuple[int, ...]
    includes_size_bias: bool = False


def build_integral(fm: FeatureMap | np.ndarray) -> IntegralImage:
    data = fm.data if isinstance(fm, FeatureMap) else np.asarray(fm)
    if data.ndim == 2:
        data = data[None]
    if not np.isfinite(data).all():
        raise DataIntegrityError("cannot integrate a map with non-finite values")
    c, h, w = data.shape
    table = np.zeros((c, h + 1, w + 1), dtype=np.float64)
    np.cumsum(data, axis=1, dtype=np.float64, out=table[:, 1:, 1:])
    np.cumsum(table[:, 1:, 1:], axis=2, out=table[:, 1:, 1:])
    return IntegralImage(table)


def _check_bounds(ii: IntegralImage, r: CellBox):
    if r.bx > ii.width or r.by > ii.height:
        corner = "b" if r.ax < ii.width and r.ay < ii.height else "a"
        raise BoundsError(
            f"cell box {r.as_tuple()} exceeds {ii.height}x{ii.width} map at corner {corner}")


def box_sum(ii: IntegralImage, r: CellBox) -> np.ndarray:
    _check_bounds(ii, r)
    t = ii.table
    return t[:, r.by, r.bx] - t[:, r.ay, r.bx] - t[:, r.by, r.ax] + t[:, r.ay, r.ax]


def avg_pool(ii: IntegralImage, r: CellBox) -> np.ndarray:
    """Channel-wise mean of the map over ``r``."""
    return box_sum(ii, r) / (r.width * r.height)


def pool_boxes(ii: IntegralImage, boxes: np.ndarray) -> np.ndarray:
    """Vectorised :func:`avg_pool` for an ``(n, 4)`` int array; returns ``(n, C)``."""
    boxes = np.asarray(boxes, dtype=np.int64).reshape(-1, 4)
    ax, ay, bx, by = boxes.T
    if len(boxes) and (ax.min() < 0 or ay.min() < 0 or bx.max() > ii.width
                       or by.max() > ii.height or (bx <= ax).any() or (by <= ay).any()):
        raise BoundsError(f"cell boxes outside {ii.height}x{ii.width} map")
    t = ii.table
    s = t[:, by, bx] - t[:, ay, bx] - t[:, by, ax] + t[:, ay, ax]
    return (s / ((bx - ax) * (by - ay))).T


def dense_pool(ii: IntegralImage, w: int, h: int) -> np.ndarray:
    """Average over every ``w x h`` placement; returns ``(C, H-h+1, W-w+1)``."""
    t = ii.table
    ny, nx = ii.height - h + 1, ii.width - w + 1
    s = (t[:, h:h + ny, w:w + nx] - t[:, :ny, w:w + nx]
         - t[:, h:h + ny, :nx] + t[:, :ny, :nx])
    s /= w * h
    return s


def split_points(lo: int, hi: int, parts: int) -> list[int]:
    """Integer cut points; the remainder goes to the last part."""
    base = (hi - lo) // parts
    return [lo + i * base for i in range(parts)] + [hi]


def pyramid_cells(r: CellBox | Sequence[int], levels: Iterable[int]) -> list[tuple[int, int, int, int]]:
    ax, ay, bx, by = r.as_tuple() if isinstance(r, CellBox) else r
    cells = []
    for level in sorted(set(levels)):
        k = 2 ** level
        if bx - ax < k or by - ay < k:
            raise DegenerateInputError(
                f"cell box {(ax, ay, bx, by)} too small for pyramid level {level}")
        xs, ys = split_points(ax, bx, k), split_points(ay, by, k)
        for j in range(k):
            for i in range(k):
                cells.append((xs[i], ys[j], xs[i + 1], ys[j + 1]))
    return cells


def pyramid_descriptor(ii: IntegralImage, r: CellBox, levels: Iterable[int] = (0,)) -> Descriptor:
    """Level-major concatenation of sub-window averages (1x1, 2x2, 4x4)."""
    levels = tuple(sorted(set(levels)))
    _check_bounds(ii, r)
    pooled = pool_boxes(ii, np.array(pyramid_cells(r, levels)))
    return Descriptor(pooled.reshape(-1), levels, False)


def pyramid_pool(ii: IntegralImage, boxes: np.ndarray, levels: Iterable[int]) -> np.ndarray:
    """Pyramid descriptors for many cell boxes at once; returns ``(n, cells*C)``."""
    boxes = np.asarray(boxes, dtype=np.int64).reshape(-1, 4)
    levels = tuple(sorted(set(levels)))
    n = len(boxes)
    ax, ay, bx, by = boxes.T
    blocks = []
    for level in levels:
        k = 2 ** level
        if n and ((bx - ax).min() < k or (by - ay).min() < k):
            raise DegenerateInputError(f"cell boxes too small for pyramid level {level}")
        bw, bh = (bx - ax) // k, (by - ay) // k
        for j in range(k):
            y0 = ay + j * bh
            y1 = by if j == k - 1 else y0 + bh
            for i in range(k):
                x0 = ax + i * bw
                x1 = bx if i == k - 1 else x0 + bw
                blocks.append(pool_boxes(ii, np.stack([x0, y0, x1, y1], axis=1)))
    if not blocks or n == 0:
        return np.zeros((n, 0))
    return np.concatenate(blocks, axis=1)


def l2_normalize_rows(x: np.ndarray) -> np.ndarray:
    norms = np.sqrt(np.einsum("ij,ij->i", x, x))
    out = np.zeros_like(x, dtype=np.float64)
    nz = norms > 0
    out[nz] = x[nz] / norms[nz, None]
    return out


def size_features(w, h) -> np.ndarray:
    """Unit-norm ``(w, h, w*h)`` rows for window sizes in image pixels."""
    w = np.atleast_1d(np.asarray(w, dtype=np.float64))
    h = np.atleast_1d(np.asarray(h, dtype=np.float64))
    return l2_normalize_rows(np.stack([w, h, w * h], axis=1))


def assemble_features(pooled: Descriptor | np.ndarray, w: float, h: float) -> Descriptor:
    """Append the size bias; each block is l2-normalised on its own."""
    if not (w > 0 and h > 0):
        raise DegenerateInputError(f"window size must be positive, got {(w, h)}")
    if isinstance(pooled, Descriptor):
        values, levels = pooled.values, pooled.pyramid_levels
    else:
        values, levels = np.asarray(pooled, dtype=np.float64), (0,)
    block = l2_normalize_rows(values[None].astype(np.float64))[0]
    return Descriptor(np.concatenate([block, size_features(w, h)[0]]), levels, True)


def assemble_many(pooled: np.ndarray, w: np.ndarray, h: np.ndarray) -> np.ndarray:
    return np.concatenate([l2_normalize_rows(pooled), size_features(w, h)], axis=1)


def grid_to_image(r: CellBox, stride: float) -> BoundingBox:
    return BoundingBox(r.ax * stride, r.ay * stride, r.bx * stride, r.by * stride)


def image_to_grid(b: BoundingBox, stride: float, dims: tuple[int, int]) -> CellBox:
    """Cell box covering ``b``: floor the top-left, ceil the bottom-right, clamp."""
    if not stride > 0:
        raise DegenerateInputError(f"stride must be positive, got {stride}")
    cells = boxes_to_grid(b.as_array()[None], stride, dims)
    if len(cells) == 0:
        raise DegenerateInputError(f"box {b} lies outside the {dims} grid")
    return CellBox(*(int(v) for v in cells[0]))


def boxes_to_grid(boxes: np.ndarray, stride: float, dims: tuple[int, int],
                  return_mask: bool = False):
    """Vectorised :func:`image_to_grid`; drops boxes that end up empty."""
    h, w = dims
    b = np.asarray(boxes, dtype=np.float64).reshape(-1, 4) / stride
    cells = np.empty(b.shape, dtype=np.int64)
    cells[:, 0] = np.clip(np.floor(b[:, 0] + _EPS), 0, w)
    cells[:, 1] = np.clip(np.floor(b[:, 1] + _EPS), 0, h)
    cells[:, 2] = np.clip(np.ceil(b[:, 2] - _EPS), 0, w)
    cells[:, 3] = np.clip(np.ceil(b[:, 3] - _EPS), 0, h)
    ok = (cells[:, 2] > cells[:, 0]) & (cells[:, 3] > cells[:, 1])
    if return_mask:
        return cells, ok
    return cells[ok]


def scale_factor(image_size: tuple[int, int], target_min_side: float) -> float:
    """Resize factor that brings ``min(h, w)`` to ``target_min_side``."""
    return float(target_min_side) / min(image_size)


def scaled_size(image_size: tuple[int, int], factor: float) -> tuple[int, int]:
    return (int(round(image_size[0] * factor)), int(round(image_size[1] * factor)))


def grid_dims(image_size: tuple[int, int], factor: float, stride: float) -> tuple[int, int]:
    """Feature-map size produced by a layer of the given stride."""
    h, w = scaled_size(image_size, factor)
    return (max(1, math.ceil(h / stride - _EPS)), max(1, math.ceil(w / stride - _EPS)))
