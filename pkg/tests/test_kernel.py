import math

import numpy as np
import pytest

from instances import separated_instance
from palace.cover import LandmarkConfiguration, rho_nu
from palace.embed import embed
from palace.kernel import (
    GramMatrix,
    bandwidth_quantile,
    gram,
    lk_value,
    nondegeneracy_floor,
    rkhs_distance,
)


def test_lk_examples():
    u = np.array([0.3, 1.0, 2.0])
    assert lk_value(u, u, 0.5) == 3.0
    assert lk_value([1.0], [1.4], 0.2) == pytest.approx(math.exp(-0.16 / 0.08))
    assert lk_value([0.0, 0.0], [1e6, 1e6], 1.0) == 0.0


def test_rkhs_examples():
    assert rkhs_distance([1, 2], [1, 2], 0.3) == 0.0
    assert rkhs_distance([0.0], [0.5], 1.0) == pytest.approx(math.sqrt(2 * (1 - math.exp(-0.125))))
    assert rkhs_distance(np.zeros(7), np.full(7, 1e6), 1.0) == pytest.approx(math.sqrt(14))


def test_rkhs_matches_direct_expansion(rng):
    for _ in range(200):
        K = int(rng.integers(1, 20))
        u, v = rng.uniform(0, 2, K), rng.uniform(0, 2, K)
        s = rng.uniform(0.05, 3)
        direct = lk_value(u, u, s) + lk_value(v, v, s) - 2 * lk_value(u, v, s)
        assert rkhs_distance(u, v, s) ** 2 == pytest.approx(direct, abs=1e-12)


def test_rkhs_triangle(rng):
    for _ in range(300):
        K = int(rng.integers(1, 10))
        a, b, c = (rng.uniform(0, 2, K) for _ in range(3))
        s = rng.uniform(0.05, 2)
        assert rkhs_distance(a, c, s) <= rkhs_distance(a, b, s) + rkhs_distance(b, c, s) + 1e-12


def test_gram_invariants(rng):
    for _ in range(100):
        m, K = int(rng.integers(2, 30)), int(rng.integers(1, 40))
        X = rng.uniform(0, rng.uniform(0.1, 5), (m, K))
        G = gram(X, rng.uniform(0.01, 3), block=int(rng.integers(1, 9)))
        E = G.entries
        assert (np.diag(E) == K).all()
        assert np.abs(E - E.T).max() <= 1e-12
        assert G.min_eigenvalue() >= -1e-8 * K
        assert E[0, 1] == pytest.approx(lk_value(X[0], X[1], G.sigma))


def test_gram_is_read_only(rng):
    G = gram(rng.uniform(size=(3, 2)), 1.0)
    with pytest.raises(ValueError):
        G.entries[0, 0] = 0


def test_gram_rejects_bad_sigma():
    with pytest.raises(ValueError):
        gram(np.zeros((2, 2)), 0.0)


def test_bandwidth_quantile():
    X = np.array([[0.0], [1.0], [3.0], [3.0]])
    # nonzero distances 1, 2, 2, 3, 3 (the duplicate pair is dropped)
    assert bandwidth_quantile(X, 0.5) == pytest.approx(2.0)
    assert bandwidth_quantile(X, 0.1) == pytest.approx(1.4)
    with pytest.raises(ValueError, match="degenerate embedding"):
        bandwidth_quantile(np.ones((3, 2)), 0.25)
    with pytest.raises(ValueError):
        bandwidth_quantile(X, 1.0)


def test_nondegeneracy_floor():
    tau, K, n_max = 0.8, 9, 30
    cfg = LandmarkConfiguration.equal_weights([(0, k + 2.0) for k in range(K)], tau / 2, tau)
    sigma = math.sqrt(2) * n_max * tau
    res = nondegeneracy_floor(cfg, sigma, n_max)
    assert res.regime_ok
    assert res.floor == pytest.approx(tau / (4 * math.sqrt(K)) / (sigma * math.sqrt(2)))
    assert not nondegeneracy_floor(cfg, 1e-3, n_max).regime_ok


def test_kernel_distance_floor_on_separated_pairs(rng):
    for _ in range(100):
        A, B, cfg = separated_instance(rng)
        n_max = max(len(A), len(B))
        sigma = math.sqrt(2) * n_max * cfg.tau
        u, v = embed(A, cfg), embed(B, cfg)
        assert rkhs_distance(u, v, sigma) >= nondegeneracy_floor(cfg, sigma, n_max).floor
        assert rho_nu(cfg) > 0


def test_save_load(tmp_path, rng):
    G = gram(rng.uniform(size=(5, 4)), 0.7)
    G.save(tmp_path / "g.csv")
    back = GramMatrix.load(tmp_path / "g.csv")
    assert np.array_equal(back.entries, G.entries) and back.sigma == 0.7 and back.K == 4
