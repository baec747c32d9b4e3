import math

import numpy as np
import pytest

from deepproposal.errors import ConfigurationError, TrainingError
from deepproposal.featmap import assemble_features
from deepproposal.scorer import (LinearModel, ModelSet, TrainConfig, descriptor_dim,
                                 mine_samples, normalize_scores, score, score_many,
                                 train_linear_svm)

from oracles import iou_py


def test_descriptor_dims():
    assert descriptor_dim(1, 256) == 259
    assert descriptor_dim(2, 256) == 5 * 256 + 3


def test_zero_weight_model_scores_bias():
    m = LinearModel(np.zeros(5), 0.3)
    rng = np.random.default_rng(0)
    for _ in range(5):
        assert score(m, rng.standard_normal(5)) == 0.3


def test_self_scoring_unit_descriptor():
    d = assemble_features(np.array([1.0, -2.0, 0.5]), 4, 4).values
    d = np.concatenate([d[:3], np.zeros(3)])
    m = LinearModel(d, 0.0)
    assert score(m, d) == pytest.approx(1.0, abs=1e-12)


def test_score_matches_naive_sum():
    rng = np.random.default_rng(1)
    w, x = rng.standard_normal(40), rng.standard_normal(40)
    m = LinearModel(w, 0.7)
    assert score(m, x) == pytest.approx(math.fsum(a * b for a, b in zip(w, x)) + 0.7, abs=1e-9)
    X = rng.standard_normal((10, 40))
    np.testing.assert_allclose(score_many(m, X), [score(m, r) for r in X], atol=1e-12)


def test_dimension_mismatch():
    with pytest.raises(ConfigurationError):
        score(LinearModel(np.zeros(4), 0), np.zeros(5))


def test_model_dict_roundtrip():
    m = LinearModel(np.arange(7.0), -0.5, 2, 2, (0, 1))
    again = LinearModel.from_dict(m.to_dict())
    assert again.weights.tolist() == m.weights.tolist() and again.bias == -0.5
    assert (again.scale_id, again.stage_id, again.pyramid_levels) == (2, 2, (0, 1))
    bad = m.to_dict()
    bad["dim"] = 3
    with pytest.raises(ConfigurationError):
        LinearModel.from_dict(bad)


def test_model_set_lookup():
    ms = ModelSet()
    ms.add(LinearModel(np.zeros(3), 0, 1, 2))
    assert ms.get(2, 1).scale_id == 1
    with pytest.raises(ConfigurationError):
        ms.get(1, 1)


def test_normalize_examples():
    np.testing.assert_allclose(normalize_scores([2, 4, 6]), [0, 0.5, 1])
    np.testing.assert_array_equal(normalize_scores([3, 3, 3]), [1, 1, 1])
    with pytest.raises(ValueError):
        normalize_scores([])


def test_normalize_preserves_order():
    rng = np.random.default_rng(2)
    for _ in range(20):
        s = rng.standard_normal(50) * 10
        n = normalize_scores(s)
        assert (np.argsort(n, kind="stable") == np.argsort(s, kind="stable")).all()
        assert n.min() == 0 and n.max() == 1


def test_mining_without_groundtruth():
    rng = np.random.default_rng(3)
    xy = rng.uniform(0, 100, (200, 2))
    windows = np.hstack([xy, xy + 20])
    pos, neg = mine_samples(windows, np.zeros((0, 4)), TrainConfig(), 0)
    assert len(pos) == 0 and len(neg) == 50


def test_mining_identical_windows():
    gt = np.array([[10.0, 10, 50, 60]])
    windows = np.repeat(gt, 30, axis=0)
    pos, neg = mine_samples(windows, gt, TrainConfig(), 0)
    assert len(pos) == 10 and len(neg) == 0
    assert all(iou_py(windows[i], gt[0]) == 1.0 for i in pos)


def test_mining_is_seeded():
    rng = np.random.default_rng(4)
    xy = rng.uniform(0, 100, (500, 2))
    windows = np.hstack([xy, xy + rng.uniform(5, 60, (500, 2))])
    gt = np.array([[20.0, 20, 60, 70]])
    a = mine_samples(windows, gt, TrainConfig(), 11)
    b = mine_samples(windows, gt, TrainConfig(), 11)
    assert all(x.tobytes() == y.tobytes() for x, y in zip(a, b))
    pos, neg = a
    assert all(iou_py(windows[i], gt[0]) > 0.7 for i in pos)
    assert all(iou_py(windows[i], gt[0]) < 0.3 for i in neg)


def toy_separable(rng, n=200):
    X = rng.standard_normal((n, 2))
    y = np.where(X[:, 0] + 0.5 * X[:, 1] > 0.3, 1.0, -1.0)
    X += 0.4 * y[:, None] * np.array([1.0, 0.5]) / np.linalg.norm([1.0, 0.5])
    return X, y


def test_svm_separable():
    X, y = toy_separable(np.random.default_rng(5))
    m = train_linear_svm(X, y, TrainConfig(C=100.0, epochs=50))
    assert ((X @ m.weights + m.bias > 0) == (y > 0)).mean() == 1.0


def test_svm_duplicated_dataset_same_direction():
    X, y = toy_separable(np.random.default_rng(6))
    cfg = TrainConfig(C=10.0, epochs=200)
    a = train_linear_svm(X, y, cfg)
    b = train_linear_svm(np.vstack([X, X]), np.concatenate([y, y]), TrainConfig(C=5.0, epochs=100))
    wa, wb = np.r_[a.weights, a.bias], np.r_[b.weights, b.bias]
    cos = wa @ wb / (np.linalg.norm(wa) * np.linalg.norm(wb))
    assert 1 - cos < 1e-3


def test_svm_label_flip_negates():
    X, y = toy_separable(np.random.default_rng(7))
    cfg = TrainConfig(C=10.0, epochs=30)
    a = train_linear_svm(X, y, cfg)
    b = train_linear_svm(X, -y, cfg)
    wa, wb = np.r_[a.weights, a.bias], np.r_[b.weights, b.bias]
    assert np.linalg.norm(wa + wb) <= 1e-3 * np.linalg.norm(wa)


def test_svm_needs_both_classes():
    with pytest.raises(TrainingError):
        train_linear_svm(np.zeros((5, 2)), np.ones(5))
