import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from dfql import gram

import oracles


def _random_spd(rng, d):
    B = rng.standard_normal((d, d))
    return B @ B.T + 0.5 * np.eye(d)


class TestAccumulate:
    def test_empty_is_ridge_identity(self):
        g = gram.accumulate(np.zeros((0, 3)), ridge=0.7)
        np.testing.assert_array_equal(g.matrix, 0.7 * np.eye(3))

    def test_rank_one(self):
        K, lam = 5, 0.1
        g = gram.accumulate(np.tile([1.0, 0.0, 0.0], (K, 1)), ridge=lam)
        np.testing.assert_allclose(g.matrix, np.diag([K + lam, lam, lam]))

    def test_matches_naive_loops(self):
        rng = np.random.default_rng(0)
        G = rng.standard_normal((30, 4))
        w = rng.random(30) + 0.1
        M = gram.accumulate(G, w, ridge=0.3).matrix
        np.testing.assert_allclose(M, oracles.naive_gram(G, w, 0.3), atol=1e-12)

    def test_unit_weights_equal_unweighted(self):
        rng = np.random.default_rng(1)
        G = rng.standard_normal((20, 3))
        a = gram.accumulate(G, ridge=1.0).matrix
        b = gram.accumulate(G, np.ones(20), ridge=1.0).matrix
        np.testing.assert_array_equal(a, b)

    def test_non_finite_row_named(self):
        G = np.ones((4, 2))
        G[2, 1] = np.nan
        with pytest.raises(ValueError, match="2"):
            gram.accumulate(G, ridge=1.0)

    def test_cholesky_reproduces_matrix(self):
        rng = np.random.default_rng(2)
        g = gram.accumulate(rng.standard_normal((10, 5)), ridge=0.01)
        assert np.linalg.norm(g.chol @ g.chol.T - g.matrix) <= 1e-10
        np.testing.assert_allclose(g.matrix, g.matrix.T, atol=1e-12)


class TestBonus:
    def test_zero_gradient(self):
        g = gram.accumulate(np.ones((3, 2)), ridge=1.0)
        assert gram.bonus(g, np.zeros(2), 5.0) == 0.0

    def test_identity(self):
        g = gram.empty(3, 1.0)
        assert gram.bonus(g, np.array([1.0, 0, 0]), 1.0) == pytest.approx(1.0)

    def test_matches_explicit_inverse(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            M = _random_spd(rng, 4)
            v = rng.standard_normal(4)
            got = gram.bonus(gram.from_matrix(M, 0.5), v, 2.0)
            assert got == pytest.approx(oracles.explicit_inverse_bonus(M, v, 2.0), abs=1e-10)

    def test_linear_in_beta(self):
        rng = np.random.default_rng(4)
        g = gram.accumulate(rng.standard_normal((8, 3)), ridge=1.0)
        v = rng.standard_normal(3)
        assert gram.bonus(g, v, 3.0) == pytest.approx(3.0 * gram.bonus(g, v, 1.0))

    def test_rejects_negative_beta(self):
        with pytest.raises(ValueError):
            gram.bonus(gram.empty(2, 1.0), np.ones(2), -1.0)


class TestBonusProperties:
    @settings(max_examples=60, deadline=None)
    @given(seed=st.integers(0, 2**31), K=st.integers(0, 20), d=st.integers(1, 6),
           lam=st.floats(1e-3, 10.0))
    def test_ridge_floor(self, seed, K, d, lam):
        rng = np.random.default_rng(seed)
        g = gram.accumulate(rng.standard_normal((K, d)), ridge=lam)
        assert gram.min_eigenvalue(g.matrix) >= lam - 1e-10

    @settings(max_examples=60, deadline=None)
    @given(seed=st.integers(0, 2**31), K=st.integers(1, 20), d=st.integers(1, 6))
    def test_duplicating_data_never_raises_bonus(self, seed, K, d):
        rng = np.random.default_rng(seed)
        G = rng.standard_normal((K, d))
        once = gram.accumulate(G, ridge=1.0)
        twice = gram.accumulate(np.vstack([G, G]), ridge=1.0)
        probes = rng.standard_normal((10, d))
        assert np.all(gram.bonus(twice, probes, 1.0) <= gram.bonus(once, probes, 1.0) + 1e-12)

    @settings(max_examples=60, deadline=None)
    @given(seed=st.integers(0, 2**31), c=st.floats(1e-3, 1e3))
    def test_scale_covariance(self, seed, c):
        rng = np.random.default_rng(seed)
        g = gram.accumulate(rng.standard_normal((6, 3)), ridge=0.5)
        v = rng.standard_normal(3)
        assert gram.bonus(g.scaled(c), v, 1.0) == pytest.approx(
            gram.bonus(g, v, 1.0) / np.sqrt(c), rel=1e-10, abs=1e-10)


class TestSolve:
    def test_ridge_only(self):
        b = np.array([1.0, -2.0, 4.0])
        np.testing.assert_allclose(gram.solve(gram.empty(3, 2.0), b), b / 2.0)

    def test_zero_rhs(self):
        g = gram.accumulate(np.eye(3), ridge=1.0)
        np.testing.assert_array_equal(gram.solve(g, np.zeros(3)), np.zeros(3))

    @settings(max_examples=40, deadline=None)
    @given(b=arrays(float, 5, elements=st.floats(-1e3, 1e3)), seed=st.integers(0, 2**31))
    def test_residual(self, b, seed):
        rng = np.random.default_rng(seed)
        g = gram.from_matrix(_random_spd(rng, 5), 0.5)
        x = gram.solve(g, b)
        assert np.linalg.norm(g.matrix @ x - b) <= 1e-9 * (np.linalg.norm(b) + 1)


class TestMinEigenvalue:
    def test_identity(self):
        assert gram.min_eigenvalue(np.eye(4)) == pytest.approx(1.0)

    def test_diagonal(self):
        assert gram.min_eigenvalue(np.diag([3.0, 1.0, 2.0])) == pytest.approx(1.0)

    def test_rejects_asymmetric(self):
        with pytest.raises(ValueError, match="symmetric"):
            gram.min_eigenvalue(np.array([[1.0, 0.5], [0.0, 1.0]]))

    def test_certified_by_cholesky(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            A = rng.standard_normal((5, 5))
            M = A + A.T
            lam = gram.min_eigenvalue(M)
            assert oracles.is_positive_definite(M - (lam - 1e-6) * np.eye(5))
            assert not oracles.is_positive_definite(M - (lam + 1e-6) * np.eye(5))


class TestFromMatrix:
    def test_jitter_rescues_rounding_level_indefiniteness(self, caplog):
        M = np.ones((3, 3)) - 1e-14 * np.eye(3)
        with caplog.at_level("WARNING", logger="dfql.gram"):
            g = gram.from_matrix(M, ridge=1e-6)
        assert np.all(np.isfinite(g.chol))
        assert "jitter" in caplog.text

    def test_rejects_non_square(self):
        with pytest.raises(ValueError):
            gram.from_matrix(np.ones((2, 3)), 1.0)
