"""
Linear objectness models: scoring, sample mining and a seeded hinge-loss trainer.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, TrainingError
from .featmap import Descriptor
from .geometry import as_box_array, iou_matrix

log = logging.getLogger(__name__)

STAGE_LEVELS = {1: (0,), 2: (0, 1)}


def descriptor_dim(stage_id: int, channels: int) -> int:
    cells = sum(4 ** lv for lv in STAGE_LEVELS[stage_id])
    return cells * channels + 3


@dataclass
class LinearModel:
    weights: np.ndarray
    bias: float
    scale_id: int = 0
    stage_id: int = 1
    pyramid_levels: tuple[int, ...] = (0,)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64).ravel()
        self.bias = float(self.bias)
        self.pyramid_levels = tuple(self.pyramid_levels)
        if not (np.isfinite(self.weights).all() and np.isfinite(self.bias)):
            raise ConfigurationError("model parameters must be finite")

    @property
    def dim(self) -> int:
        return len(self.weights)

    def to_dict(self) -> dict:
        return {"stage_id": self.stage_id, "scale_id": self.scale_id,
                "pyramid_levels": list(self.pyramid_levels), "dim": self.dim,
                "bias": self.bias, "weights": self.weights.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "LinearModel":
        model = cls(np.array(d["weights"], dtype=np.float64), d["bias"], int(d["scale_id"]),
                    int(d["stage_id"]), tuple(d["pyramid_levels"]))
        if model.dim != int(d["dim"]):
            raise ConfigurationError(f"model declares dim {d['dim']} but has {model.dim} weights")
        return model


@dataclass
class TrainConfig:
    pos_overlap: float = 0.7
    neg_overlap: float = 0.3
    pos_per_image: int = 10
    neg_per_image: int = 50
    C: float = 1.0
    epochs: int = 20
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.neg_overlap < self.pos_overlap <= 1.0:
            raise ConfigurationError(
                f"need 0 <= neg_overlap < pos_overlap <= 1, got {self.neg_overlap}, {self.pos_overlap}")


def score(model: LinearModel, d: Descriptor | np.ndarray) -> float:
    values = d.values if isinstance(d, Descriptor) else np.asarray(d)
    if values.shape[-1] != model.dim:
        raise ConfigurationError(
            f"descriptor has dim {values.shape[-1]} but model expects {model.dim}")
    return float(values @ model.weights + model.bias)


def score_many(model: LinearModel, X: np.ndarray) -> np.ndarray:
    if X.shape[-1] != model.dim:
        raise ConfigurationError(f"descriptor has dim {X.shape[-1]} but model expects {model.dim}")
    return X @ model.weights + model.bias


def normalize_scores(scores) -> np.ndarray:
    """Min-max map to [0, 1]; a constant input maps to all ones."""
    s = np.asarray(scores, dtype=np.float64)
    if s.size == 0 or not np.isfinite(s).all():
        raise ValueError("scores must be non-empty and finite")
    lo, hi = s.min(), s.max()
    if hi == lo:
        return np.ones_like(s)
    return (s - lo) / (hi - lo)


def mine_samples(window_boxes, gt_boxes, cfg: TrainConfig, rng) -> tuple[np.ndarray, np.ndarray]:
    """Indices of positive and negative training windows for one image.

    A window's overlap is its best IoU against any ground-truth box. Windows
    strictly above ``pos_overlap`` are positive candidates, strictly below
    ``neg_overlap`` negative ones; anything in between is never drawn.
    """
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    windows = as_box_array(window_boxes)
    gt = as_box_array(gt_boxes)
    if len(gt):
        overlap = iou_matrix(windows, gt).max(axis=1)
    else:
        overlap = np.zeros(len(windows))
    pos = np.flatnonzero(overlap > cfg.pos_overlap)
    neg = np.flatnonzero(overlap < cfg.neg_overlap)
    if len(pos) > cfg.pos_per_image:
        pos = np.sort(rng.choice(pos, cfg.pos_per_image, replace=False))
    if len(neg) > cfg.neg_per_image:
        neg = np.sort(rng.choice(neg, cfg.neg_per_image, replace=False))
    if len(gt) and not len(pos):
        log.debug("image contributes no positives (best overlap %.3f)",
                  overlap.max() if len(overlap) else 0.0)
    return pos, neg


def hinge_objective(w: np.ndarray, X: np.ndarray, y: np.ndarray, lam: float) -> float:
    margins = 1.0 - y * (X @ w)
    return 0.5 * lam * float(w @ w) + float(np.clip(margins, 0, None).mean())


def train_linear_svm(X, y, cfg: TrainConfig | None = None, *, scale_id: int = 0,
                     stage_id: int = 1, pyramid_levels=None) -> LinearModel:
    """L2-regularised hinge loss by seeded stochastic subgradient descent.

    Uses ``lambda = 1 / (C n)`` and step ``1 / (lambda t)``. The bias is
    learned as the weight of a constant feature. The iterate with the lowest
    full objective at the end of an epoch is returned, so the result never
    does worse than after the first epoch.
    """
    cfg = cfg or TrainConfig()
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).ravel()
    if X.ndim != 2 or len(X) != len(y):
        raise TrainingError("feature matrix and labels do not line up")
    if not ((y > 0).any() and (y < 0).any()):
        raise TrainingError("training needs at least one positive and one negative sample")
    n = len(X)
    Xa = np.hstack([X, np.ones((n, 1))])
    lam = 1.0 / (cfg.C * n)
    rng = np.random.default_rng(cfg.seed)
    w = np.zeros(Xa.shape[1])
    best_w, best_obj = w.copy(), np.inf
    t = 0
    for _ in range(cfg.epochs):
        for i in rng.permutation(n):
            t += 1
            eta = 1.0 / (lam * t)
            xi, yi = Xa[i], y[i]
            violated = yi * (w @ xi) < 1.0
            w *= 1.0 - 1.0 / t
            if violated:
                w += (eta * yi) * xi
        obj = hinge_objective(w, Xa, y, lam)
        if obj < best_obj:
            best_obj, best_w = obj, w.copy()
    levels = pyramid_levels if pyramid_levels is not None else STAGE_LEVELS.get(stage_id, (0,))
    return LinearModel(best_w[:-1], best_w[-1], scale_id, stage_id, levels)


@dataclass
class ModelSet:
    """Per-(stage, scale) linear models."""

    models: dict[tuple[int, int], LinearModel] = field(default_factory=dict)

    def add(self, model: LinearModel):
        self.models[(model.stage_id, model.scale_id)] = model

    def get(self, stage_id: int, scale_id: int) -> LinearModel:
        try:
            return self.models[(stage_id, scale_id)]
        except KeyError:
            raise ConfigurationError(
                f"no stage-{stage_id} model for scale {scale_id}") from None

    def __len__(self):
        return len(self.models)
