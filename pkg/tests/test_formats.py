import json
import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from deepproposal.errors import (BadMagicError, DataIntegrityError, DimensionOverflowError,
                                 FormatError, TruncatedFileError, UnsupportedVersionError)
from deepproposal.featmap import FeatureMap
from deepproposal.formats import (DatasetManifest, load_catalog, load_model_bundle, read_boxes,
                                  read_fmap, read_fmap_header, read_groundtruth, save_catalog,
                                  save_model_bundle, write_boxes, write_fmap, write_groundtruth,
                                  write_synthetic)
from deepproposal.geometry import BoundingBox, GroundTruth, ScoredBox
from deepproposal.scorer import LinearModel, ModelSet
from deepproposal.synth import SynthConfig
from deepproposal.window_catalog import WindowCatalog, WindowShape


def test_fmap_roundtrip_bitwise(tmp_path):
    rng = np.random.default_rng(0)
    data = (rng.standard_normal((7, 5, 9)) * 1e3).astype(np.float32)
    fm = FeatureMap(3, 2, 4.0, data)
    write_fmap(fm, tmp_path / "a.fmap")
    back = read_fmap(tmp_path / "a.fmap")
    assert back.data.tobytes() == data.tobytes()
    assert (back.layer_id, back.scale_id, back.stride) == (3, 2, 4.0)


def test_fmap_byte_layout(tmp_path):
    data = np.arange(6, dtype=np.float32).reshape(1, 2, 3)
    write_fmap(FeatureMap(5, 1, 16.0, data), tmp_path / "b.fmap")
    raw = (tmp_path / "b.fmap").read_bytes()
    assert raw[:4] == b"FMAP"
    assert struct.unpack("<IIIfIII", raw[4:32]) == (1, 5, 1, 16.0, 1, 2, 3)
    assert np.frombuffer(raw[32:], "<f4").tolist() == [0, 1, 2, 3, 4, 5]


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 4), st.integers(1, 6), st.integers(1, 6), st.integers(0, 2 ** 31))
def test_fmap_roundtrip_property(tmp_path_factory, c, h, w, seed):
    data = np.random.default_rng(seed).standard_normal((c, h, w)).astype(np.float32)
    path = tmp_path_factory.mktemp("p") / "x.fmap"
    write_fmap(FeatureMap(2, 0, 2.0, data), path)
    assert read_fmap(path).data.tobytes() == data.tobytes()


def test_fmap_errors(tmp_path):
    fm = FeatureMap(5, 0, 16.0, np.ones((2, 3, 3), dtype=np.float32))
    good = tmp_path / "g.fmap"
    write_fmap(fm, good)
    raw = good.read_bytes()
    cases = {
        "magic": (b"FMAQ" + raw[4:], BadMagicError),
        "version": (raw[:4] + struct.pack("<I", 2) + raw[8:], UnsupportedVersionError),
        "payload": (raw[:-5], TruncatedFileError),
        "header": (raw[:20], TruncatedFileError),
        "overflow": (raw[:24] + struct.pack("<III", 65536, 65536, 65536), DimensionOverflowError),
        "zero": (raw[:24] + struct.pack("<III", 0, 3, 3), DimensionOverflowError),
        "trailing": (raw + b"\0\0\0\0", FormatError),
    }
    for name, (blob, exc) in cases.items():
        p = tmp_path / f"{name}.fmap"
        p.write_bytes(blob)
        with pytest.raises(exc):
            read_fmap(p)


def test_reference_layer_geometry(tmp_path):
    # a 256 x 36 x 52 layer-5 map at stride 16 spans roughly a 600 x 860 image
    fm = FeatureMap(5, 0, 16.0, np.zeros((256, 36, 52), dtype=np.float32))
    write_fmap(fm, tmp_path / "l5.fmap")
    hdr = read_fmap_header(tmp_path / "l5.fmap")
    assert (hdr.channels, hdr.height, hdr.width, hdr.stride) == (256, 36, 52, 16.0)
    assert abs(hdr.height * hdr.stride - 600) <= 2 * hdr.stride
    assert abs(hdr.width * hdr.stride - 860) <= 2 * hdr.stride


def test_box_roundtrip(tmp_path):
    rng = np.random.default_rng(1)
    per_image = {}
    for k in ("b", "a"):
        xy = rng.uniform(0, 100, (5, 2))
        per_image[k] = [ScoredBox(BoundingBox(*xy[i], *(xy[i] + rng.uniform(1, 30, 2))),
                                  float(rng.standard_normal())) for i in range(5)]
    write_boxes(tmp_path / "p.jsonl", per_image)
    back = read_boxes(tmp_path / "p.jsonl")
    assert list(back) == ["a", "b"]
    assert back == per_image
    lines = (tmp_path / "p.jsonl").read_text().splitlines()
    assert set(json.loads(lines[0])) == {"image_id", "x0", "y0", "x1", "y1", "score"}


def test_box_file_errors(tmp_path):
    p = tmp_path / "bad.jsonl"
    p.write_text('{"image_id": "a", "x0": 1}\n')
    with pytest.raises(FormatError):
        read_boxes(p)
    p.write_text("not json\n")
    with pytest.raises(FormatError):
        read_boxes(p)
    p.write_text("")
    assert read_boxes(p) == {}


def test_groundtruth_roundtrip(tmp_path):
    gt = GroundTruth("im", (40, 60), np.array([[1.5, 2, 10, 20], [30, 5, 59, 39.0]]), ["c0", "c1"])
    write_groundtruth(tmp_path / "g.jsonl", gt)
    back = read_groundtruth(tmp_path / "g.jsonl", "im", (40, 60))
    assert back.boxes.tobytes() == gt.boxes.tobytes() and back.labels == gt.labels


def test_model_bundle_roundtrip(tmp_path):
    rng = np.random.default_rng(2)
    ms = ModelSet()
    ms.add(LinearModel(rng.standard_normal(7), 0.3, 0, 1))
    ms.add(LinearModel(rng.standard_normal(23), -0.1, 0, 2, (0, 1)))
    cat = WindowCatalog([WindowShape(2, 3), WindowShape(5, 1)], 20)
    save_model_bundle(ms, cat, tmp_path / "m")
    ms2, cat2 = load_model_bundle(tmp_path / "m")
    assert cat2.shapes == cat.shapes
    for key, m in ms.models.items():
        assert ms2.get(*key).weights.tobytes() == m.weights.tobytes()
        assert ms2.get(*key).pyramid_levels == m.pyramid_levels
    save_catalog(cat, tmp_path / "c.json")
    assert load_catalog(tmp_path / "c.json").shapes == cat.shapes
    (tmp_path / "c.json").write_text("{")
    with pytest.raises(FormatError):
        load_catalog(tmp_path / "c.json")


@pytest.fixture(scope="module")
def tiny_dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("ds")
    write_synthetic(SynthConfig(seed=2, n_train=3, n_test=2), root)
    return root


def test_manifest_loads_and_validates(tiny_dataset):
    m = DatasetManifest.load(tiny_dataset)
    assert len(m.records) == 5 and len(m.split("test")) == 2
    rec = m.split("test")[0]
    bundle = m.bundle(rec)
    assert [sf.scale_id for sf in bundle.scales] == [0, 1, 2]
    assert len(m.groundtruth(rec)) >= 1


def test_manifest_rejects_inconsistent_geometry(tiny_dataset, tmp_path):
    m = DatasetManifest.load(tiny_dataset)
    rec = m.records[0]
    bad = read_fmap(m.path(rec.fmaps["5/0"]))
    write_fmap(FeatureMap(5, 0, 16.0, bad.data[:, :-3]), tmp_path / "short.fmap")
    rec.fmaps["5/0"] = str(tmp_path / "short.fmap")
    with pytest.raises(DataIntegrityError, match="do not"):
        m.validate()
    rec.fmaps["5/0"] = "missing.fmap"
    with pytest.raises(DataIntegrityError, match="missing"):
        m.validate()


def test_manifest_rejects_mislabelled_map(tiny_dataset):
    m = DatasetManifest.load(tiny_dataset)
    rec = m.records[1]
    rec.fmaps["5/0"], rec.fmaps["3/0"] = rec.fmaps["3/0"], rec.fmaps["5/0"]
    with pytest.raises(DataIntegrityError, match="header"):
        m.validate()


def test_write_synthetic_is_byte_identical(tmp_path):
    cfg = SynthConfig(seed=4, n_train=2, n_test=1)
    write_synthetic(cfg, tmp_path / "a")
    write_synthetic(cfg, tmp_path / "b")
    files_a = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    files_b = sorted(p.relative_to(tmp_path / "b") for p in (tmp_path / "b").rglob("*") if p.is_file())
    assert files_a == files_b
    for rel in files_a:
        assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()
