"""
On-disk formats: FMAP feature maps, JSON-lines boxes, model and catalog JSON,
and the dataset manifest that ties per-image files together.

FMAP layout (little-endian throughout)::

    b"FMAP" | u32 version=1 | u32 layer | u32 scale | f32 stride | u32 C | u32 H | u32 W
    C*H*W f32 values, channel-major then row-major
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .cascade import FeatureBundle, ScaleFeatures
from .errors import (BadMagicError, ConfigurationError, DataIntegrityError,
                     DimensionOverflowError, FormatError, TruncatedFileError,
                     UnsupportedVersionError)
from .featmap import FeatureMap, scale_factor
from .geometry import BoundingBox, GroundTruth, ScoredBox
from .scorer import LinearModel, ModelSet
from .window_catalog import WindowCatalog

FMAP_MAGIC = b"FMAP"
FMAP_VERSION = 1
_HEADER = struct.Struct("<4sIIIfIII")
MAX_ELEMENTS = 2 ** 31 - 1


@dataclass(frozen=True)
class FmapHeader:
    version: int
    layer_id: int
    scale_id: int
    stride: float
    channels: int
    height: int
    width: int

    @property
    def n_values(self) -> int:
        return self.channels * self.height * self.width


def _parse_header(raw: bytes, name) -> FmapHeader:
    if len(raw) < 4 or raw[:4] != FMAP_MAGIC:
        raise BadMagicError(f"{name}: not an FMAP file (magic {raw[:4]!r})")
    if len(raw) < _HEADER.size:
        raise TruncatedFileError(f"{name}: header is {len(raw)} bytes, expected {_HEADER.size}")
    _, version, layer, scale, stride, c, h, w = _HEADER.unpack_from(raw)
    if version != FMAP_VERSION:
        raise UnsupportedVersionError(f"{name}: FMAP version {version}, only {FMAP_VERSION} is supported")
    hdr = FmapHeader(version, layer, scale, stride, c, h, w)
    if min(c, h, w) == 0 or hdr.n_values > MAX_ELEMENTS:
        raise DimensionOverflowError(f"{name}: unusable dimensions {c}x{h}x{w}")
    return hdr


def read_fmap_header(path) -> FmapHeader:
    with open(path, "rb") as fh:
        return _parse_header(fh.read(_HEADER.size), path)


def read_fmap(path) -> FeatureMap:
    raw = Path(path).read_bytes()
    hdr = _parse_header(raw, path)
    expected = _HEADER.size + 4 * hdr.n_values
    if len(raw) < expected:
        raise TruncatedFileError(
            f"{path}: payload has {len(raw) - _HEADER.size} bytes, header declares {4 * hdr.n_values}")
    if len(raw) > expected:
        raise FormatError(f"{path}: {len(raw) - expected} trailing bytes after payload")
    data = np.frombuffer(raw, dtype="<f4", count=hdr.n_values, offset=_HEADER.size)
    data = data.astype(np.float32).reshape(hdr.channels, hdr.height, hdr.width)
    return FeatureMap(hdr.layer_id, hdr.scale_id, float(hdr.stride), data)


def write_fmap(fm: FeatureMap, path):
    c, h, w = fm.data.shape
    header = _HEADER.pack(FMAP_MAGIC, FMAP_VERSION, fm.layer_id, fm.scale_id, fm.stride, c, h, w)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(fm.data, dtype="<f4").tobytes())


# boxes ---------------------------------------------------------------------

def box_record(image_id: str, box, score: float | None = None, **extra) -> dict:
    if isinstance(box, ScoredBox):
        box, score = box.box, box.score if score is None else score
    if not isinstance(box, BoundingBox):
        box = BoundingBox.from_array(box)
    rec = {"image_id": image_id, "x0": box.x0, "y0": box.y0, "x1": box.x1, "y1": box.y1}
    if score is not None:
        rec["score"] = float(score)
    rec.update(extra)
    return rec


def write_boxes(path, per_image: Mapping[str, Sequence], sort_ids: bool = True):
    """Write ``{image_id: boxes}`` as JSON lines; ScoredBox entries keep their score."""
    ids = sorted(per_image) if sort_ids else list(per_image)
    with open(path, "w") as fh:
        for image_id in ids:
            for b in per_image[image_id]:
                fh.write(json.dumps(box_record(image_id, b)) + "\n")


def _parse_box_line(line: str, where: str) -> dict:
    try:
        rec = json.loads(line)
        coords = [float(rec[k]) for k in ("x0", "y0", "x1", "y1")]
        image_id = str(rec["image_id"])
    except (ValueError, KeyError, TypeError) as exc:
        raise FormatError(f"{where}: bad box record ({exc})") from None
    rec.update(zip(("x0", "y0", "x1", "y1"), coords), image_id=image_id)
    return rec


def read_box_records(path) -> list[dict]:
    out = []
    with open(path) as fh:
        for n, line in enumerate(fh, 1):
            if line.strip():
                out.append(_parse_box_line(line, f"{path}:{n}"))
    return out


def read_boxes(path) -> dict[str, list]:
    """Group a JSON-lines box file by image, keeping file order.

    Records with a score become ScoredBox, the others BoundingBox.
    """
    out: dict[str, list] = {}
    for rec in read_box_records(path):
        box = BoundingBox(rec["x0"], rec["y0"], rec["x1"], rec["y1"])
        if "score" in rec and rec["score"] is not None:
            box = ScoredBox(box, float(rec["score"]))
        out.setdefault(rec["image_id"], []).append(box)
    return out


def write_groundtruth(path, gt: GroundTruth):
    with open(path, "w") as fh:
        for i, b in enumerate(gt.boxes):
            extra = {"label": gt.labels[i]} if gt.labels else {}
            fh.write(json.dumps(box_record(gt.image_id, b, **extra)) + "\n")


def read_groundtruth(path, image_id: str, image_size) -> GroundTruth:
    recs = read_box_records(path)
    for rec in recs:
        if rec["image_id"] != image_id:
            raise FormatError(f"{path}: record for {rec['image_id']!r} in the file of {image_id!r}")
    boxes = np.array([[r["x0"], r["y0"], r["x1"], r["y1"]] for r in recs]).reshape(-1, 4)
    labels = [str(r.get("label", "")) for r in recs] if recs and all("label" in r for r in recs) else []
    return GroundTruth(image_id, tuple(image_size), boxes, labels)


# models and catalogs ---------------------------------------------------------

def _dump_json(obj, path):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _load_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON ({exc})") from None


def save_catalog(catalog: WindowCatalog, path):
    _dump_json(catalog.to_dict(), path)


def load_catalog(path) -> WindowCatalog:
    d = _load_json(path)
    try:
        return WindowCatalog.from_dict(d)
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{path}: bad catalog ({exc})") from None


def save_model(model: LinearModel, path):
    _dump_json(model.to_dict(), path)


def load_model(path) -> LinearModel:
    try:
        return LinearModel.from_dict(_load_json(path))
    except (KeyError, TypeError) as exc:
        raise FormatError(f"{path}: bad model ({exc})") from None


def save_model_bundle(models: ModelSet, catalog: WindowCatalog, out_dir, meta: dict | None = None):
    """Directory with ``models.json`` (every stage/scale model) and ``catalog.json``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    doc = {"models": [models.models[k].to_dict() for k in sorted(models.models)],
           "meta": meta or {}}
    _dump_json(doc, out / "models.json")
    save_catalog(catalog, out / "catalog.json")


def load_model_bundle(path) -> tuple[ModelSet, WindowCatalog]:
    root = Path(path)
    doc = _load_json(root / "models.json")
    models = ModelSet()
    try:
        for d in doc["models"]:
            models.add(LinearModel.from_dict(d))
    except (KeyError, TypeError) as exc:
        raise FormatError(f"{root / 'models.json'}: bad model entry ({exc})") from None
    return models, load_catalog(root / "catalog.json")


# dataset manifest ------------------------------------------------------------

def _fmap_key(layer: int, scale: int) -> str:
    return f"{layer}/{scale}"


@dataclass
class ImageRecord:
    image_id: str
    image_size: tuple[int, int]
    fmaps: dict[str, str]
    gt: str
    split: str = "train"

    def to_dict(self) -> dict:
        return {"image_id": self.image_id, "image_size": list(self.image_size),
                "fmaps": dict(sorted(self.fmaps.items())), "gt": self.gt, "split": self.split}

    @classmethod
    def from_dict(cls, d: dict) -> "ImageRecord":
        return cls(str(d["image_id"]), tuple(int(v) for v in d["image_size"]),
                   {str(k): str(v) for k, v in d["fmaps"].items()}, str(d["gt"]),
                   str(d.get("split", "train")))


@dataclass
class DatasetManifest:
    """Per-image file index of a dataset. Paths are relative to ``root``.

    ``scales`` holds the target shorter side of every scale id.
    """

    root: Path
    scales: tuple[int, ...]
    records: list[ImageRecord]
    seed: int | None = None
    meta: dict = field(default_factory=dict)

    FILENAME = "manifest.json"

    def __post_init__(self):
        self.root = Path(self.root)
        self.scales = tuple(int(s) for s in self.scales)

    def split(self, name: str | None) -> list[ImageRecord]:
        if name in (None, "all"):
            return list(self.records)
        return [r for r in self.records if r.split == name]

    def to_dict(self) -> dict:
        return {"version": 1, "scales": list(self.scales), "seed": self.seed, "meta": self.meta,
                "records": [r.to_dict() for r in self.records]}

    def save(self, path=None) -> Path:
        path = Path(path) if path else self.root / self.FILENAME
        _dump_json(self.to_dict(), path)
        return path

    @classmethod
    def load(cls, path, validate: bool = True) -> "DatasetManifest":
        path = Path(path)
        if path.is_dir():
            path = path / cls.FILENAME
        d = _load_json(path)
        try:
            records = [ImageRecord.from_dict(r) for r in d["records"]]
            m = cls(path.parent, tuple(d["scales"]), records, d.get("seed"), d.get("meta", {}))
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"{path}: bad manifest ({exc})") from None
        if validate:
            m.validate()
        return m

    def path(self, rel: str) -> Path:
        return self.root / rel

    def validate(self):
        """Check that every file exists and every map fits its image and scale."""
        seen = set()
        for rec in self.records:
            if rec.image_id in seen:
                raise DataIntegrityError(f"duplicate image id {rec.image_id!r}")
            seen.add(rec.image_id)
            if not self.path(rec.gt).is_file():
                raise DataIntegrityError(f"{rec.image_id}: missing ground truth {rec.gt}")
            strides: dict[int, float] = {}
            for key, rel in rec.fmaps.items():
                layer, scale = (int(v) for v in key.split("/"))
                p = self.path(rel)
                if not p.is_file():
                    raise DataIntegrityError(f"{rec.image_id}: missing feature map {rel}")
                hdr = read_fmap_header(p)
                if (hdr.layer_id, hdr.scale_id) != (layer, scale):
                    raise DataIntegrityError(
                        f"{rel}: header says layer {hdr.layer_id} scale {hdr.scale_id}, "
                        f"manifest says {key}")
                if scale >= len(self.scales):
                    raise DataIntegrityError(f"{rel}: scale id {scale} not in {self.scales}")
                if strides.setdefault(layer, hdr.stride) != hdr.stride:
                    raise DataIntegrityError(
                        f"{rec.image_id}: layer {layer} stride differs between scales")
                f = scale_factor(rec.image_size, self.scales[scale])
                h, w = rec.image_size
                if (abs(hdr.height * hdr.stride - h * f) > 2 * hdr.stride
                        or abs(hdr.width * hdr.stride - w * f) > 2 * hdr.stride):
                    raise DataIntegrityError(
                        f"{rel}: {hdr.height}x{hdr.width} cells at stride {hdr.stride:g} do not "
                        f"cover a {h}x{w} image at scale {self.scales[scale]}")

    def groundtruth(self, rec: ImageRecord) -> GroundTruth:
        return read_groundtruth(self.path(rec.gt), rec.image_id, rec.image_size)

    def bundle(self, rec: ImageRecord, layers: Iterable[int] = (5, 3, 2)) -> FeatureBundle:
        layers = tuple(layers)
        scales = []
        for sid, target in enumerate(self.scales):
            maps = {}
            for layer in layers:
                rel = rec.fmaps.get(_fmap_key(layer, sid))
                if rel is None:
                    raise ConfigurationError(
                        f"{rec.image_id}: no layer-{layer} map for scale {sid}")
                maps[layer] = read_fmap(self.path(rel))
            scales.append(ScaleFeatures(sid, scale_factor(rec.image_size, target), maps))
        return FeatureBundle(rec.image_id, rec.image_size, scales)


def write_synthetic(cfg, root) -> DatasetManifest:
    """Render a synthetic dataset to FMAP + JSON-lines files under ``root``."""
    from .synth import generate_synthetic

    root = Path(root)
    (root / "fmaps").mkdir(parents=True, exist_ok=True)
    (root / "gt").mkdir(parents=True, exist_ok=True)
    ds = generate_synthetic(cfg)
    test = set(ds.split("test"))
    records = []
    for i, gt in enumerate(ds.groundtruth):
        fmaps = {}
        for sid in range(len(cfg.scales)):
            for layer in sorted(cfg.strides, reverse=True):
                rel = f"fmaps/{gt.image_id}_l{layer}_s{sid}.fmap"
                write_fmap(ds.render(i, layer, sid), root / rel)
                fmaps[_fmap_key(layer, sid)] = rel
        rel_gt = f"gt/{gt.image_id}.jsonl"
        write_groundtruth(root / rel_gt, gt)
        records.append(ImageRecord(gt.image_id, tuple(gt.image_size), fmaps, rel_gt,
                                   "test" if i in test else "train"))
    manifest = DatasetManifest(root, cfg.scales, records, cfg.seed,
                               {"generator": "synthetic", "config": cfg.to_dict()})
    manifest.save()
    return manifest
