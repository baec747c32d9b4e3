"""
Per-scale model training for the two scoring stages.
"""

from __future__ import annotations

import logging
from typing import Callable, Iterable

import numpy as np

from .cascade import LAYER_COARSE, LAYER_MID, FeatureBundle
from .errors import TrainingError
from .featmap import assemble_many, boxes_to_grid, build_integral, pool_boxes, pyramid_pool
from .geometry import GroundTruth, clip_boxes
from .scorer import STAGE_LEVELS, ModelSet, TrainConfig, mine_samples, train_linear_svm
from .window_catalog import WindowCatalog, enumerate_windows

log = logging.getLogger(__name__)


def stage1_features(bundle: FeatureBundle, scale_index: int, cells: np.ndarray) -> np.ndarray:
    sf = bundle.scales[scale_index]
    fm = sf.layer(LAYER_COARSE)
    pooled = pool_boxes(build_integral(fm), cells)
    wh = (cells[:, 2:] - cells[:, :2]) * fm.stride
    return assemble_many(pooled, wh[:, 0], wh[:, 1])


def stage2_features(bundle: FeatureBundle, scale_index: int, boxes: np.ndarray):
    """Stage-2 descriptors for original-pixel boxes; returns ``(X, valid_mask)``."""
    sf = bundle.scales[scale_index]
    fm = sf.layer(LAYER_MID)
    cells, ok = boxes_to_grid(boxes * sf.factor, fm.stride, fm.dims, return_mask=True)
    ok &= ((cells[:, 2] - cells[:, 0]) >= 2) & ((cells[:, 3] - cells[:, 1]) >= 2)
    pooled = pyramid_pool(build_integral(fm), cells[ok], STAGE_LEVELS[2])
    wh = (boxes[ok, 2:] - boxes[ok, :2]) * sf.factor
    return assemble_many(pooled, wh[:, 0], wh[:, 1]), ok


def collect_samples(images: Iterable[tuple[FeatureBundle, GroundTruth]], catalog: WindowCatalog,
                    cfg: TrainConfig, rng: np.random.Generator):
    """Mine both stages' training sets; returns ``{(stage, scale_id): (X, y)}``."""
    acc: dict[tuple[int, int], tuple[list, list]] = {}
    for bundle, gt in images:
        for k, sf in enumerate(bundle.scales):
            fm = sf.layer(LAYER_COARSE)
            cells = enumerate_windows(fm.dims, catalog)
            if not len(cells):
                continue
            boxes = clip_boxes(cells * fm.stride / sf.factor, bundle.image_size)
            pos, neg = mine_samples(boxes, gt.boxes, cfg, rng)
            idx = np.concatenate([pos, neg])
            if len(idx):
                X = stage1_features(bundle, k, cells[idx])
                y = np.r_[np.ones(len(pos)), -np.ones(len(neg))]
                xs, ys = acc.setdefault((1, sf.scale_id), ([], []))
                xs.append(X)
                ys.append(y)
            pos, neg = mine_samples(boxes, gt.boxes, cfg, rng)
            idx = np.concatenate([pos, neg])
            if len(idx):
                X, ok = stage2_features(bundle, k, boxes[idx])
                y = np.r_[np.ones(len(pos)), -np.ones(len(neg))][ok]
                xs, ys = acc.setdefault((2, sf.scale_id), ([], []))
                xs.append(X)
                ys.append(y)
    return {key: (np.concatenate(xs), np.concatenate(ys)) for key, (xs, ys) in acc.items()}


def train_models(images: Iterable[tuple[FeatureBundle, GroundTruth]], catalog: WindowCatalog,
                 cfg: TrainConfig | None = None,
                 progress: Callable[[str], None] | None = None) -> ModelSet:
    """Train one linear model per (stage, scale) from mined windows."""
    cfg = cfg or TrainConfig()
    rng = np.random.default_rng(cfg.seed)
    samples = collect_samples(images, catalog, cfg, rng)
    models = ModelSet()
    for (stage, scale_id), (X, y) in sorted(samples.items()):
        n_pos, n_neg = int((y > 0).sum()), int((y < 0).sum())
        if not n_pos or not n_neg:
            raise TrainingError(
                f"stage {stage} scale {scale_id}: {n_pos} positives, {n_neg} negatives")
        if progress:
            progress(f"training stage {stage} scale {scale_id} on {n_pos}+/{n_neg}-")
        models.add(train_linear_svm(X, y, cfg, scale_id=scale_id, stage_id=stage,
                                    pyramid_levels=STAGE_LEVELS[stage]))
    return models
