"""
Three-stage coarse-to-fine proposal cascade.

Stage 1 densely scores every catalog placement on the layer-5 map of each
scale, stage 2 re-scores the survivors with a 1x1 + 2x2 pyramid on layer 3
and multiplies the two normalised scores, stage 3 aligns the remaining boxes
to contours computed from layer 2. Budgets are totals across scales.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, asdict

import numpy as np

from .errors import ConfigurationError
from .featmap import (FeatureMap, IntegralImage, assemble_many, boxes_to_grid, build_integral,
                      dense_pool, l2_normalize_rows, pyramid_pool, size_features)
from .geometry import ScoredBox, box_areas, clip_boxes, nms_indices, scored_boxes
from .refine import RefineConfig, edge_map_from_features, refine_boxes
from .scorer import LinearModel, ModelSet, normalize_scores
from .window_catalog import WindowCatalog

LAYER_COARSE, LAYER_MID, LAYER_FINE = 5, 3, 2


@dataclass
class CascadeConfig:
    beta: float = 0.7
    scales: tuple[int, ...] = (227, 300, 400, 600)
    n1: int = 4000
    n2: int = 3000
    n_desired: int = 1000
    nms_alpha: float | None = None
    cross_scale_alpha: float | None = None
    refine_enabled: bool = True
    refine: RefineConfig = field(default_factory=RefineConfig)

    def __post_init__(self):
        if self.nms_alpha is None:
            self.nms_alpha = round(self.beta + 0.05, 10)
        if self.cross_scale_alpha is None:
            self.cross_scale_alpha = self.beta
        if isinstance(self.refine, dict):
            self.refine = RefineConfig(**self.refine)
        self.scales = tuple(self.scales)
        if not self.n_desired <= self.n2 <= self.n1:
            raise ConfigurationError("budgets must satisfy n_desired <= n2 <= n1")
        if not 0 < self.beta < self.nms_alpha <= 1:
            raise ConfigurationError("need 0 < beta < nms_alpha <= 1")

    @classmethod
    def preset(cls, beta: float, **kw) -> "CascadeConfig":
        """Cascade tuned for recall at IoU ``beta`` (0.5 or 0.7)."""
        return cls(beta=beta, **kw)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["scales"] = list(self.scales)
        return d


@dataclass
class ScaleFeatures:
    scale_id: int
    factor: float
    maps: dict[int, FeatureMap]

    def layer(self, layer_id: int) -> FeatureMap:
        try:
            return self.maps[layer_id]
        except KeyError:
            raise ConfigurationError(
                f"scale {self.scale_id} has no layer-{layer_id} feature map") from None


@dataclass
class FeatureBundle:
    """All feature maps of one image; ``image_size`` is the original ``(h, w)``."""

    image_id: str
    image_size: tuple[int, int]
    scales: list[ScaleFeatures]

    def __post_init__(self):
        for sf in self.scales:
            for layer_id, fm in sf.maps.items():
                if fm.layer_id != layer_id:
                    raise ConfigurationError(
                        f"map stored under layer {layer_id} declares layer {fm.layer_id}")
                h, w = self.image_size
                ext_h, ext_w = fm.height * fm.stride, fm.width * fm.stride
                if (abs(ext_h - h * sf.factor) > 2 * fm.stride
                        or abs(ext_w - w * sf.factor) > 2 * fm.stride):
                    raise ConfigurationError(
                        f"layer {layer_id} at scale {sf.scale_id}: {fm.dims} cells of stride "
                        f"{fm.stride} do not match a {h}x{w} image resized by {sf.factor:.4f}")


@dataclass
class StageResult:
    """Proposals after one stage, in original-image pixels, best first."""

    stage_id: int
    boxes: np.ndarray
    scores: np.ndarray
    scale_ids: np.ndarray
    extras: dict[str, np.ndarray] = field(default_factory=dict)
    counts: dict[str, int] = field(default_factory=dict)

    def __len__(self):
        return len(self.boxes)

    @property
    def proposals(self) -> list[ScoredBox]:
        return scored_boxes(self.boxes, self.scores)

    def take(self, idx: np.ndarray) -> "StageResult":
        return StageResult(self.stage_id, self.boxes[idx], self.scores[idx], self.scale_ids[idx],
                           {k: v[idx] for k, v in self.extras.items()}, dict(self.counts))


def _rank(boxes: np.ndarray, scores: np.ndarray) -> np.ndarray:
    return np.lexsort((box_areas(boxes), boxes[:, 1], boxes[:, 0], -scores))


def _size_term(model: LinearModel, w_px, h_px) -> np.ndarray:
    return size_features(w_px, h_px) @ model.weights[-3:]


def dense_scores(ii: IntegralImage, catalog: WindowCatalog, model: LinearModel, stride: float):
    """Raw stage-1 scores of every placement; returns ``(cell_boxes, scores)``.

    Equivalent to scoring ``assemble_features(avg_pool(...), w*stride, h*stride)``
    window by window, but pools each shape with four shifted slices of the
    summed-area table.
    """
    C = ii.channels
    if model.dim != C + 3:
        raise ConfigurationError(f"stage-1 model dim {model.dim} does not fit {C} channels")
    wp = model.weights[:C]
    boxes, scores = [], []
    for s in catalog:
        if s.w > ii.width or s.h > ii.height:
            continue
        pooled = dense_pool(ii, s.w, s.h)
        norms = np.sqrt(np.einsum("cij,cij->ij", pooled, pooled))
        dots = np.einsum("c,cij->ij", wp, pooled)
        sc = np.divide(dots, norms, out=np.zeros_like(dots), where=norms > 0)
        sc += _size_term(model, s.w * stride, s.h * stride)[0] + model.bias
        ny, nx = sc.shape
        ys, xs = np.mgrid[0:ny, 0:nx]
        xs, ys = xs.ravel(), ys.ravel()
        boxes.append(np.stack([xs, ys, xs + s.w, ys + s.h], axis=1))
        scores.append(sc.ravel())
    if not boxes:
        return np.zeros((0, 4), dtype=np.int64), np.zeros(0)
    return np.concatenate(boxes), np.concatenate(scores)


def stage1_dense(bundle: FeatureBundle, catalog: WindowCatalog, models: ModelSet,
                 cfg: CascadeConfig) -> StageResult:
    all_boxes, all_scores, all_scales = [], [], []
    counts = {}
    for sf in bundle.scales:
        model = models.get(1, sf.scale_id)
        fm = sf.layer(LAYER_COARSE)
        cells, raw = dense_scores(build_integral(fm), catalog, model, fm.stride)
        counts[f"windows_scale{sf.scale_id}"] = len(cells)
        if not len(cells):
            continue
        boxes = clip_boxes(cells * fm.stride / sf.factor, bundle.image_size)
        norm = normalize_scores(raw)
        keep = nms_indices(boxes, norm, cfg.nms_alpha, cfg.n1)
        counts[f"kept_scale{sf.scale_id}"] = len(keep)
        all_boxes.append(boxes[keep])
        all_scores.append(norm[keep])
        all_scales.append(np.full(len(keep), sf.scale_id))
    if not all_boxes:
        return StageResult(1, np.zeros((0, 4)), np.zeros(0), np.zeros(0, dtype=np.int64),
                           {"s1": np.zeros(0)}, counts)
    boxes = np.concatenate(all_boxes)
    scores = np.concatenate(all_scores)
    scales = np.concatenate(all_scales)
    order = _rank(boxes, scores)[:cfg.n1]
    counts["windows"] = sum(v for k, v in counts.items() if k.startswith("windows_"))
    counts["output"] = len(order)
    return StageResult(1, boxes[order], scores[order], scales[order],
                       {"s1": scores[order]}, counts)


def stage2_rescore(stage1: StageResult, bundle: FeatureBundle, models: ModelSet,
                   cfg: CascadeConfig) -> StageResult:
    by_scale = {sf.scale_id: sf for sf in bundle.scales}
    parts = []
    counts = {"input": len(stage1), "dropped_degenerate": 0}
    for scale_id in np.unique(stage1.scale_ids):
        sf = by_scale[int(scale_id)]
        idx = np.flatnonzero(stage1.scale_ids == scale_id)
        fm = sf.layer(LAYER_MID)
        model = models.get(2, sf.scale_id)
        cells, ok = boxes_to_grid(stage1.boxes[idx] * sf.factor, fm.stride, fm.dims,
                                  return_mask=True)
        ok &= ((cells[:, 2] - cells[:, 0]) >= 2) & ((cells[:, 3] - cells[:, 1]) >= 2)
        counts["dropped_degenerate"] += int((~ok).sum())
        idx, cells = idx[ok], cells[ok]
        if not len(idx):
            continue
        pooled = pyramid_pool(build_integral(fm), cells, model.pyramid_levels)
        wh = (stage1.boxes[idx, 2:] - stage1.boxes[idx, :2]) * sf.factor
        X = assemble_many(pooled, wh[:, 0], wh[:, 1])
        if X.shape[1] != model.dim:
            raise ConfigurationError(
                f"stage-2 model dim {model.dim} does not fit descriptor dim {X.shape[1]}")
        s2 = normalize_scores(X @ model.weights + model.bias)
        s1 = stage1.extras["s1"][idx]
        final = s1 * s2
        keep = nms_indices(stage1.boxes[idx], final, cfg.nms_alpha, cfg.n2)
        parts.append((idx[keep], s2[keep], final[keep]))
    if not parts:
        empty = stage1.take(np.zeros(0, dtype=np.int64))
        empty.stage_id = 2
        empty.extras["s2"] = np.zeros(0)
        empty.counts = counts
        return empty
    idx = np.concatenate([p[0] for p in parts])
    s2 = np.concatenate([p[1] for p in parts])
    final = np.concatenate([p[2] for p in parts])
    boxes = stage1.boxes[idx]
    order = _rank(boxes, final)[:cfg.n2]
    counts["after_scale_nms"] = len(order)
    idx, s2, final, boxes = idx[order], s2[order], final[order], boxes[order]
    keep = nms_indices(boxes, final, cfg.cross_scale_alpha, cfg.n_desired)
    counts["output"] = len(keep)
    return StageResult(2, boxes[keep], final[keep], stage1.scale_ids[idx[keep]],
                       {"s1": stage1.extras["s1"][idx[keep]], "s2": s2[keep]}, counts)


def stage3_refine(stage2: StageResult, bundle: FeatureBundle, refine_cfg: RefineConfig,
                  enabled: bool = True) -> StageResult:
    """Align every box to its scale's contour map; no selection, no NMS.

    The refined list is re-ranked by edge score. ``extras`` keeps the boxes
    in resized-image pixels together with their scores before and after.
    """
    if not enabled or not len(stage2):
        out = stage2.take(np.arange(len(stage2)))
        out.stage_id = 3
        out.counts = {"input": len(stage2), "output": len(stage2)}
        return out
    by_scale = {sf.scale_id: sf for sf in bundle.scales}
    n = len(stage2)
    local_in = np.zeros((n, 4))
    local_out = np.zeros((n, 4))
    before = np.zeros(n)
    after = np.zeros(n)
    boxes = stage2.boxes.copy()
    for scale_id in np.unique(stage2.scale_ids):
        sf = by_scale[int(scale_id)]
        idx = np.flatnonzero(stage2.scale_ids == scale_id)
        em = edge_map_from_features(sf.layer(LAYER_FINE))
        local = stage2.boxes[idx] * sf.factor
        refined, s_before, s_after = refine_boxes(em, local, refine_cfg)
        local_in[idx], local_out[idx] = local, refined
        before[idx], after[idx] = s_before, s_after
        boxes[idx] = clip_boxes(refined / sf.factor, bundle.image_size)
    failed = ~np.isfinite(after)
    boxes[failed] = stage2.boxes[failed]
    rank_score = np.where(failed, -np.inf, after)
    order = np.lexsort((np.arange(n), -rank_score))
    extras = {k: v[order] for k, v in stage2.extras.items()}
    extras.update(local_in=local_in[order], local_out=local_out[order],
                  edge_before=before[order], edge_after=after[order],
                  refine_failed=failed[order], stage2_score=stage2.scores[order])
    scores = np.where(failed, np.nan, after)[order]
    # failed boxes keep their place at the bottom with the lowest finite score
    if failed.any():
        floor = np.nanmin(scores) if np.isfinite(scores).any() else 0.0
        scores = np.where(np.isnan(scores), floor, scores)
    counts = {"input": n, "output": n, "refine_failed": int(failed.sum())}
    return StageResult(3, boxes[order], scores, stage2.scale_ids[order], extras, counts)


@dataclass
class CascadeRun:
    stages: list[StageResult]
    timings: dict[str, float]

    @property
    def final(self) -> StageResult:
        return self.stages[-1]


def run_cascade(bundle: FeatureBundle, models: ModelSet, catalog: WindowCatalog,
                cfg: CascadeConfig) -> CascadeRun:
    if bundle is None or not bundle.scales:
        raise ConfigurationError("feature bundle is empty")
    timings = {}
    t = time.perf_counter()
    s1 = stage1_dense(bundle, catalog, models, cfg)
    timings["stage1"] = time.perf_counter() - t
    t = time.perf_counter()
    s2 = stage2_rescore(s1, bundle, models, cfg)
    timings["stage2"] = time.perf_counter() - t
    t = time.perf_counter()
    s3 = stage3_refine(s2, bundle, cfg.refine, cfg.refine_enabled)
    timings["stage3"] = time.perf_counter() - t
    return CascadeRun([s1, s2, s3], timings)


def propose(bundle: FeatureBundle, models: ModelSet, catalog: WindowCatalog,
            cfg: CascadeConfig) -> list[ScoredBox]:
    """Ranked proposals (at most ``cfg.n_desired``) in original-image pixels."""
    return run_cascade(bundle, models, catalog, cfg).final.proposals
