import numpy as np
import pytest

from deepproposal.errors import BoundsError, DataIntegrityError, DegenerateInputError
from deepproposal.featmap import (CellBox, FeatureMap, assemble_features, assemble_many,
                                  avg_pool, box_sum, build_integral, dense_pool, grid_dims,
                                  grid_to_image, image_to_grid, pool_boxes, pyramid_descriptor,
                                  pyramid_pool, scale_factor)
from deepproposal.geometry import BoundingBox

from oracles import brute_mean


def random_cellboxes(rng, n, h, w):
    ax = rng.integers(0, w, n)
    ay = rng.integers(0, h, n)
    bx = ax + 1 + (rng.integers(0, w, n) % (w - ax))
    by = ay + 1 + (rng.integers(0, h, n) % (h - ay))
    return np.stack([ax, ay, bx, by], axis=1)


def test_feature_map_validation():
    with pytest.raises(DataIntegrityError):
        FeatureMap(5, 0, 16.0, np.zeros((4, 4)))
    with pytest.raises(DataIntegrityError):
        FeatureMap(5, 0, 16.0, np.full((1, 2, 2), np.nan))
    with pytest.raises(DataIntegrityError):
        FeatureMap(5, 0, 0.0, np.zeros((1, 2, 2)))


def test_constant_field():
    c = 2.5
    ii = build_integral(np.full((3, 5, 7), c))
    ys, xs = np.mgrid[0:6, 0:8]
    np.testing.assert_allclose(ii.table[1], c * ys * xs)
    for box in [(0, 0, 7, 5), (2, 1, 3, 2), (1, 1, 6, 4)]:
        np.testing.assert_allclose(avg_pool(ii, CellBox(*box)), c)


def test_small_map_mean():
    ii = build_integral(np.array([[[1.0, 2.0], [3.0, 4.0]]]))
    assert avg_pool(ii, CellBox(0, 0, 2, 2))[0] == 2.5


def test_unit_box_is_cell_value():
    rng = np.random.default_rng(0)
    data = rng.standard_normal((4, 6, 9))
    ii = build_integral(data)
    for y in range(6):
        for x in range(9):
            np.testing.assert_allclose(avg_pool(ii, CellBox(x, y, x + 1, y + 1)), data[:, y, x],
                                       rtol=1e-12, atol=1e-12)


def test_random_boxes_match_brute_force():
    rng = np.random.default_rng(3)
    data = rng.standard_normal((8, 64, 64)).astype(np.float32)
    ii = build_integral(FeatureMap(5, 0, 16.0, data))
    boxes = random_cellboxes(rng, 1000, 64, 64)
    pooled = pool_boxes(ii, boxes)
    ref = np.array([brute_mean(data.astype(np.float64), b) for b in boxes])
    scale = np.maximum(np.abs(ref), 1e-3)
    assert (np.abs(pooled - ref) / scale).max() < 1e-5


def test_nested_boxes_monotone_on_non_negative_map():
    rng = np.random.default_rng(4)
    ii = build_integral(rng.uniform(size=(2, 20, 20)))
    assert (box_sum(ii, CellBox(2, 2, 18, 18)) >= box_sum(ii, CellBox(5, 4, 12, 15))).all()


def test_out_of_bounds_names_corner():
    ii = build_integral(np.zeros((1, 4, 4)))
    with pytest.raises(BoundsError, match="corner b"):
        avg_pool(ii, CellBox(1, 1, 5, 3))
    with pytest.raises(BoundsError):
        pool_boxes(ii, np.array([[0, 0, 5, 5]]))
    with pytest.raises(DegenerateInputError):
        CellBox(2, 2, 2, 3)


def test_dense_pool_matches_pool_boxes():
    rng = np.random.default_rng(5)
    ii = build_integral(rng.standard_normal((3, 9, 11)))
    dense = dense_pool(ii, 4, 3)
    for y in range(dense.shape[1]):
        for x in range(dense.shape[2]):
            np.testing.assert_allclose(dense[:, y, x], avg_pool(ii, CellBox(x, y, x + 4, y + 3)))


def test_pyramid_level0_equals_avg_pool():
    rng = np.random.default_rng(6)
    ii = build_integral(rng.standard_normal((5, 10, 10)))
    r = CellBox(1, 2, 8, 9)
    np.testing.assert_allclose(pyramid_descriptor(ii, r, (0,)).values, avg_pool(ii, r))


def test_pyramid_constant_map():
    d = pyramid_descriptor(build_integral(np.full((3, 8, 8), 1.5)), CellBox(0, 0, 8, 8), (0, 1))
    assert d.values.shape == (15,)
    np.testing.assert_allclose(d.values, 1.5)


def test_pyramid_quadrants_match_brute_force():
    rng = np.random.default_rng(7)
    data = rng.standard_normal((2, 6, 6))
    d = pyramid_descriptor(build_integral(data), CellBox(1, 1, 5, 5), (0, 1)).values
    quads = [(1, 1, 3, 3), (3, 1, 5, 3), (1, 3, 3, 5), (3, 3, 5, 5)]
    expected = np.concatenate([brute_mean(data, (1, 1, 5, 5))] + [brute_mean(data, q) for q in quads])
    np.testing.assert_allclose(d, expected, rtol=1e-12)


def test_pyramid_remainder_goes_to_last_part():
    data = np.arange(5.0)[None, None, :].repeat(2, axis=1)
    d = pyramid_descriptor(build_integral(data), CellBox(0, 0, 5, 2), (0, 1)).values
    # columns split 0-2 | 2-5
    np.testing.assert_allclose(d, [2.0, 0.5, 3.0, 0.5, 3.0])


def test_pyramid_pool_matches_single():
    rng = np.random.default_rng(8)
    ii = build_integral(rng.standard_normal((3, 12, 12)))
    boxes = np.array([[0, 0, 5, 7], [2, 3, 12, 12], [4, 4, 6, 6]])
    batch = pyramid_pool(ii, boxes, (0, 1))
    for row, b in zip(batch, boxes):
        np.testing.assert_allclose(row, pyramid_descriptor(ii, CellBox(*b), (0, 1)).values)


def test_pyramid_too_small():
    with pytest.raises(DegenerateInputError):
        pyramid_descriptor(build_integral(np.zeros((1, 4, 4))), CellBox(0, 0, 1, 3), (0, 1))


def test_assemble_example():
    d = assemble_features(np.array([3.0, 4.0]), 1, 2)
    np.testing.assert_allclose(d.values, [0.6, 0.8, 1 / 3, 2 / 3, 2 / 3], rtol=1e-12)
    assert d.includes_size_bias


def test_assemble_zero_block():
    d = assemble_features(np.zeros(4), 3, 5).values
    assert np.all(d[:4] == 0)
    assert np.linalg.norm(d[4:]) == pytest.approx(1.0, abs=1e-12)


def test_assemble_norms_random():
    rng = np.random.default_rng(9)
    X = assemble_many(rng.standard_normal((50, 7)), rng.uniform(1, 500, 50), rng.uniform(1, 500, 50))
    np.testing.assert_allclose(np.linalg.norm(X[:, :7], axis=1), 1.0, atol=1e-6)
    np.testing.assert_allclose(np.linalg.norm(X[:, 7:], axis=1), 1.0, atol=1e-6)


def test_grid_mapping():
    assert grid_to_image(CellBox(0, 0, 2, 2), 16) == BoundingBox(0, 0, 32, 32)
    assert image_to_grid(BoundingBox(5, 5, 20, 20), 16, (10, 10)) == CellBox(0, 0, 2, 2)
    for r in [CellBox(0, 0, 1, 1), CellBox(3, 2, 7, 9)]:
        assert image_to_grid(grid_to_image(r, 16), 16, (10, 10)) == r
    with pytest.raises(DegenerateInputError):
        image_to_grid(BoundingBox(500, 500, 600, 600), 16, (10, 10))


def test_grid_dims_of_reference_geometry():
    f = scale_factor((600, 860), 600)
    assert f == 1.0
    h, w = grid_dims((600, 860), f, 16)
    assert (h, w) == (38, 54)
