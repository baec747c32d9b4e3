import numpy as np
import pytest

from deepproposal.errors import DegenerateInputError
from deepproposal.featmap import FeatureMap
from deepproposal.geometry import BoundingBox, iou
from deepproposal.refine import (EdgeMap, RefineConfig, edge_map_from_features, edgebox_score,
                                 edgebox_scores, gradient_energy, greedy_refine, refine_boxes)

from oracles import edgebox_reference, finite_difference_energy

CFG = RefineConfig()


def contour_map(h=40, w=50, box=(10, 8, 30, 24), noise=0.0, seed=0):
    """Edge map with a one-cell-wide rectangular outline around ``box`` (cells)."""
    rng = np.random.default_rng(seed)
    m = rng.uniform(0, noise, size=(h, w)) if noise else np.zeros((h, w))
    x0, y0, x1, y1 = box
    m[y0, x0:x1] = 1
    m[y1 - 1, x0:x1] = 1
    m[y0:y1, x0] = 1
    m[y0:y1, x1 - 1] = 1
    return EdgeMap(m, 1.0)


def test_constant_map_has_no_edges():
    assert np.all(gradient_energy(np.full((3, 6, 7), 4.2)) == 0)


def test_step_edge_peaks_on_step():
    data = np.zeros((1, 5, 10))
    data[:, :, 5:] = 1.0
    g = gradient_energy(data)
    assert set(np.argmax(g, axis=1)) <= {4, 5}
    assert np.all(g[:, 4] == g.max()) and np.all(g[:, 5] == g.max())
    assert np.all(g[:, :3] == 0) and np.all(g[:, 7:] == 0)


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(1)
    data = rng.standard_normal((3, 9, 11))
    np.testing.assert_allclose(gradient_energy(data), finite_difference_energy(data),
                               rtol=0, atol=1e-6)


def test_edge_map_is_max_normalised():
    rng = np.random.default_rng(2)
    em = edge_map_from_features(FeatureMap(2, 0, 2.0, rng.standard_normal((4, 10, 12))))
    assert em.magnitudes.max() == pytest.approx(1.0)
    assert em.stride == 2.0 and em.extent == (20.0, 24.0)


def test_zero_edge_map_scores_zero():
    em = EdgeMap(np.zeros((20, 20)), 1.0)
    assert edgebox_score(em, BoundingBox(2, 3, 15, 17)) == 0.0


def test_scores_match_direct_summation():
    rng = np.random.default_rng(3)
    mag = rng.uniform(size=(25, 30))
    em = EdgeMap(mag, 1.0)
    boxes = []
    for _ in range(60):
        x0, y0 = rng.uniform(0, 12, 2)
        boxes.append([x0, y0, x0 + rng.uniform(6, 17), y0 + rng.uniform(6, 12)])
    boxes = np.array(boxes)
    got = edgebox_scores(em, boxes, CFG)
    ref = [edgebox_reference(mag, b, CFG.kappa, CFG.inner_margin) for b in boxes]
    np.testing.assert_allclose(got, ref, rtol=1e-9, atol=1e-12)


def test_stride_scales_coordinates():
    rng = np.random.default_rng(4)
    mag = rng.uniform(size=(20, 20))
    a = edgebox_score(EdgeMap(mag, 1.0), BoundingBox(2, 3, 12, 15))
    b = edgebox_score(EdgeMap(mag, 4.0), BoundingBox(8, 12, 48, 60))
    assert a == pytest.approx(b, rel=1e-12)


def test_contour_box_beats_dilated_box():
    em = contour_map()
    tight = edgebox_score(em, BoundingBox(10, 8, 30, 24))
    dilated = edgebox_score(em, BoundingBox(6, 4, 34, 28))
    assert tight > dilated


def test_translation_invariance():
    a = contour_map(box=(10, 8, 30, 24))
    b = contour_map(box=(13, 10, 33, 26))
    assert edgebox_score(a, BoundingBox(9, 7, 31, 25)) == pytest.approx(
        edgebox_score(b, BoundingBox(12, 9, 34, 27)), rel=1e-12)


def test_degenerate_boxes():
    em = contour_map()
    with pytest.raises(DegenerateInputError):
        edgebox_score(em, BoundingBox(100, 100, 120, 120))
    with pytest.raises(DegenerateInputError):
        edgebox_score(em, BoundingBox(5, 5, 5.5, 20))


def test_local_maximum_is_fixed_point():
    em = contour_map()
    box = BoundingBox(10, 8, 30, 24)
    cfg = RefineConfig(initial_step=0.1, min_step_px=0.5)
    out, s = greedy_refine(box, em, cfg)
    # verify the fixed point by a local scan of every single-step move
    base = edgebox_score(em, box, cfg)
    for d in [(1, 0, 1, 0), (0, 1, 0, 1), (0, 0, 1, 0), (1, 0, 0, 0), (0, 0, 0, 1), (0, 1, 0, 0)]:
        for sign in (1, -1):
            moved = np.array([10, 8, 30, 24.0]) + sign * np.array(d) * 2.0
            assert edgebox_scores(em, moved[None], cfg)[0] <= base
    assert out == box and s == base


def test_offset_box_moves_towards_contour():
    em = contour_map(60, 80, (15, 12, 55, 44), noise=0.2)
    target = BoundingBox(15, 12, 55, 44)
    # the contour box is the best translate within +-6 cells
    best = max(((dx, dy) for dx in range(-6, 7) for dy in range(-6, 7)),
               key=lambda d: edgebox_score(em, target.translate(*d)))
    assert best == (0, 0)
    start = target.translate(3, 3)
    out, s = greedy_refine(start, em, CFG)
    assert iou(out, target) > iou(start, target)
    assert s > edgebox_score(em, start)


def test_refine_never_decreases_score():
    rng = np.random.default_rng(5)
    mag = rng.uniform(size=(40, 40)) ** 4
    em = EdgeMap(mag, 2.0)
    xy = rng.uniform(0, 40, (200, 2))
    boxes = np.hstack([xy, xy + rng.uniform(10, 35, (200, 2))])
    refined, before, after = refine_boxes(em, boxes, CFG)
    assert np.all(after >= before)
    np.testing.assert_array_equal(edgebox_scores(em, refined, CFG), after)
    inside = np.isfinite(before)
    assert np.all(refined[inside, 2] <= 80) and np.all(refined[inside, :2] >= 0)


def test_config_validation():
    with pytest.raises(ValueError):
        RefineConfig(kappa=0)
    with pytest.raises(ValueError):
        RefineConfig(inner_margin=0.6)
