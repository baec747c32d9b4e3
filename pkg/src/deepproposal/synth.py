"""
Deterministic synthetic feature maps with planted objects.

Every pseudo-layer paints each object's footprint with channel signatures
(area-weighted per cell) on top of a background signature plus Gaussian
noise. On the part-structured layers an object is split into top, bottom,
left and right border bands and an interior, each with its own signature, so
that a window pooled tightly around the object has a characteristic mixture.
Finer layers keep a single object signature and mostly contribute contours.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from .cascade import FeatureBundle, ScaleFeatures
from .errors import GenerationError
from .featmap import FeatureMap, grid_dims, scale_factor
from .geometry import GroundTruth

_MAX_OBJECT_TRIES = 200
_MAX_IMAGE_TRIES = 50


@dataclass
class SynthConfig:
    seed: int = 0
    n_train: int = 200
    n_test: int = 100
    canvas: tuple[int, int] = (192, 256)
    objects: tuple[int, int] = (1, 3)
    size_range: tuple[int, int] = (12, 96)
    signature_strength: float = 1.0
    noise: float = 0.25
    strides: dict[int, float] = field(default_factory=lambda: {5: 16.0, 3: 4.0, 2: 2.0})
    channels: dict[int, int] = field(default_factory=lambda: {5: 32, 3: 16, 2: 8})
    part_layers: tuple[int, ...] = (5, 3)
    scales: tuple[int, ...] = (227, 300, 400)
    band: float = 0.2
    n_classes: int = 4
    class_tint: float = 0.3

    def __post_init__(self):
        self.canvas = tuple(self.canvas)
        self.objects = tuple(self.objects)
        self.size_range = tuple(self.size_range)
        self.scales = tuple(self.scales)
        self.part_layers = tuple(self.part_layers)
        self.strides = {int(k): float(v) for k, v in self.strides.items()}
        self.channels = {int(k): int(v) for k, v in self.channels.items()}
        lo, hi = self.size_range
        if not (0 < lo <= hi <= min(self.canvas)):
            raise GenerationError(f"size range {self.size_range} does not fit canvas {self.canvas}")
        if self.noise < 0:
            raise GenerationError("noise level must be non-negative")
        if not 1 <= self.objects[0] <= self.objects[1]:
            raise GenerationError(f"invalid object count range {self.objects}")

    @property
    def n_images(self) -> int:
        return self.n_train + self.n_test

    def to_dict(self) -> dict:
        d = asdict(self)
        d["strides"] = {str(k): v for k, v in self.strides.items()}
        d["channels"] = {str(k): v for k, v in self.channels.items()}
        return d


def _unit(rng, *shape):
    v = rng.standard_normal(shape)
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


@dataclass
class _Signatures:
    background: np.ndarray
    parts: np.ndarray  # (5, C): top, bottom, left, right, interior
    tints: np.ndarray  # (n_classes, C)


def _object_parts(box: np.ndarray, band: float) -> list[np.ndarray]:
    x0, y0, x1, y1 = box
    bx, by = band * (x1 - x0), band * (y1 - y0)
    return [np.array([x0, y0, x1, y0 + by]), np.array([x0, y1 - by, x1, y1]),
            np.array([x0, y0 + by, x0 + bx, y1 - by]), np.array([x1 - bx, y0 + by, x1, y1 - by]),
            np.array([x0 + bx, y0 + by, x1 - bx, y1 - by])]


def _axis_coverage(lo, hi, n, cell):
    edges = np.arange(n + 1) * cell
    return np.clip(np.minimum(hi, edges[1:]) - np.maximum(lo, edges[:-1]), 0, None) / cell


class SyntheticDataset:
    """Lazily rendered synthetic images; rendering is a pure function of the seed."""

    def __init__(self, cfg: SynthConfig):
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        self.signatures = {}
        for layer in sorted(cfg.strides):
            c = cfg.channels[layer]
            self.signatures[layer] = _Signatures(_unit(rng, c), _unit(rng, 5, c),
                                                 _unit(rng, cfg.n_classes, c))
        self.groundtruth: list[GroundTruth] = []
        self.noise_seeds = []
        for i in range(cfg.n_images):
            boxes, labels = self._place_objects(rng)
            split = "train" if i < cfg.n_train else "test"
            gt = GroundTruth(f"{split}_{i:05d}", tuple(cfg.canvas), boxes,
                             [f"class{k}" for k in labels])
            self.groundtruth.append(gt)
            self.noise_seeds.append(int(rng.integers(2 ** 63)))

    def _place_objects(self, rng):
        cfg = self.cfg
        H, W = cfg.canvas
        lo, hi = cfg.size_range
        for _ in range(_MAX_IMAGE_TRIES):
            n = int(rng.integers(cfg.objects[0], cfg.objects[1] + 1))
            boxes = []
            for _ in range(_MAX_OBJECT_TRIES):
                w, h = rng.uniform(lo, hi, size=2)
                x0 = rng.uniform(0, W - w)
                y0 = rng.uniform(0, H - h)
                cand = np.array([x0, y0, x0 + w, y0 + h])
                if all(cand[2] <= b[0] or b[2] <= cand[0] or cand[3] <= b[1] or b[3] <= cand[1]
                       for b in boxes):
                    boxes.append(cand)
                    if len(boxes) == n:
                        labels = rng.integers(cfg.n_classes, size=n)
                        return np.array(boxes), labels.tolist()
        raise GenerationError(f"could not place {cfg.objects} disjoint objects on {cfg.canvas}")

    def __len__(self):
        return self.cfg.n_images

    def split(self, name: str) -> list[int]:
        if name == "train":
            return list(range(self.cfg.n_train))
        if name == "test":
            return list(range(self.cfg.n_train, self.cfg.n_images))
        raise KeyError(name)

    def render(self, i: int, layer: int, scale_id: int, rng=None) -> FeatureMap:
        cfg = self.cfg
        gt = self.groundtruth[i]
        f = scale_factor(gt.image_size, cfg.scales[scale_id])
        stride = cfg.strides[layer]
        gh, gw = grid_dims(gt.image_size, f, stride)
        cell = stride / f
        sig = self.signatures[layer]
        parts_sig = sig.parts if layer in cfg.part_layers else np.repeat(sig.parts[4:], 5, axis=0)
        data = np.zeros((len(sig.background), gh, gw))
        covered = np.zeros((gh, gw))
        for box, label in zip(gt.boxes, gt.labels):
            tint = cfg.class_tint * sig.tints[int(label.removeprefix("class"))]
            for part, s in zip(_object_parts(box, cfg.band), parts_sig):
                cov = np.outer(_axis_coverage(part[1], part[3], gh, cell),
                               _axis_coverage(part[0], part[2], gw, cell))
                data += (cfg.signature_strength * (s + tint))[:, None, None] * cov
                covered += cov
        data += (cfg.signature_strength * sig.background)[:, None, None] * (1.0 - covered)
        if rng is None:
            rng = np.random.default_rng([self.noise_seeds[i], layer, scale_id])
        if cfg.noise > 0:
            data += rng.standard_normal(data.shape) * (cfg.noise / np.sqrt(data.shape[0]))
        return FeatureMap(layer, scale_id, stride, data.astype(np.float32))

    def bundle(self, i: int, layers=(5, 3, 2)) -> FeatureBundle:
        gt = self.groundtruth[i]
        scales = []
        for sid, s in enumerate(self.cfg.scales):
            maps = {layer: self.render(i, layer, sid) for layer in layers}
            scales.append(ScaleFeatures(sid, scale_factor(gt.image_size, s), maps))
        return FeatureBundle(gt.image_id, gt.image_size, scales)


def generate_synthetic(cfg: SynthConfig) -> SyntheticDataset:
    return SyntheticDataset(cfg)
