import numpy as np
import pytest
from sklearn.metrics import silhouette_score

from sasssl.errors import InputError
from sasssl.tsne import TsneConfig, conditional_affinities, joint_affinities, kl_gradient, squared_distances, tsne_embed


def test_squared_distances_match_direct():
    x = np.random.default_rng(0).normal(size=(12, 5))
    direct = ((x[:, None, :] - x[None, :, :]) ** 2).sum(-1)
    np.testing.assert_allclose(squared_distances(x), direct, atol=1e-12)


def test_equal_distances_give_uniform_rows():
    d = np.ones((7, 7)) - np.eye(7)
    p, h = conditional_affinities(d, perplexity=3.0)
    off = p[~np.eye(7, dtype=bool)]
    np.testing.assert_allclose(off, 1 / 6)
    np.testing.assert_allclose(h, np.log2(6))


def test_calibration_hits_target_entropy():
    x = np.random.default_rng(1).normal(size=(90, 10))
    p, h = joint_affinities(x, perplexity=30.0)
    assert np.max(np.abs(h - np.log2(30.0))) < 1e-5
    assert p.sum() == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_allclose(p, p.T)
    assert np.all(np.diag(p) == 0)


def test_calibration_tricky_scales():
    rng = np.random.default_rng(2)
    x = np.concatenate([rng.normal(size=(20, 3)) * 1e-3, rng.normal(size=(20, 3)) * 1e3 + 50])
    _, h = joint_affinities(x, perplexity=8.0)
    assert np.max(np.abs(h - 3.0)) < 1e-5


def test_infeasible_perplexity():
    with pytest.raises(InputError):
        joint_affinities(np.zeros((20, 2)), perplexity=30.0)


def test_kl_gradient_matches_finite_differences():
    rng = np.random.default_rng(3)
    p, _ = joint_affinities(rng.normal(size=(15, 4)), perplexity=4.0)
    y = rng.normal(size=(15, 2))
    _, grad = kl_gradient(p, y)
    eps = 1e-6
    for i, j in [(0, 0), (3, 1), (7, 0), (14, 1)]:
        yp, ym = y.copy(), y.copy()
        yp[i, j] += eps
        ym[i, j] -= eps
        numeric = (kl_gradient(p, yp)[0] - kl_gradient(p, ym)[0]) / (2 * eps)
        assert grad[i, j] == pytest.approx(numeric, rel=1e-5)


def test_two_clusters_separate():
    rng = np.random.default_rng(4)
    x = np.concatenate([rng.normal(size=(40, 10)), rng.normal(size=(40, 10)) + 8])
    labels = np.repeat([0, 1], 40)
    emb = tsne_embed(x, labels, TsneConfig(perplexity=15.0, iterations=400), seed=0)
    assert emb.coords.shape == (80, 2) and np.all(np.isfinite(emb.coords))
    assert silhouette_score(emb.coords, labels) > 0.5
    assert np.max(np.abs(emb.row_entropy - np.log2(15.0))) < 1e-5


def test_embedding_deterministic():
    x = np.random.default_rng(5).normal(size=(40, 6))
    cfg = TsneConfig(perplexity=10.0, iterations=100)
    np.testing.assert_array_equal(tsne_embed(x, config=cfg, seed=3).coords, tsne_embed(x, config=cfg, seed=3).coords)
