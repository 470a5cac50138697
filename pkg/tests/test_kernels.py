import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from dyncomm.kernels import (
    SpectralConditionError,
    apply_M,
    apply_MT,
    fractional_resolvent_power,
    katz_resolvent,
    katz_walk_sum,
    log1p_series,
    matrix_exp,
    neg_log_series,
    series_order,
    series_tail_bound,
)

PAIR = np.array([[0.0, 1.0], [1.0, 0.0]])


def random_sparse(n, density, rng):
    A = sp.random(n, n, density=density, random_state=rng, data_rvs=rng.random).tolil()
    A.setdiag(0)
    return A.tocsr()


def random_matching(n, rng):
    perm = rng.permutation(n)
    A = np.zeros((n, n))
    for i, j in zip(perm[0::2], perm[1::2]):
        if rng.random() < 0.7:
            A[i, j] = A[j, i] = 1.0
    return A


class TestNegLogSeries:
    def test_zero(self):
        assert not neg_log_series(np.zeros((3, 3)), 0.3, 5).any()

    def test_first_order(self):
        A = random_matching(6, np.random.default_rng(0))
        assert np.array_equal(neg_log_series(A, 0.2, 1), 0.2 * A)

    def test_pair_second_order(self):
        M = neg_log_series(PAIR, 0.1, 2)
        np.testing.assert_allclose(M, 0.1 * PAIR + 0.005 * np.eye(2), rtol=1e-15, atol=0)

    def test_bad_order(self):
        with pytest.raises(ValueError):
            neg_log_series(PAIR, 0.1, 0)

    def test_accepts_sparse(self):
        np.testing.assert_array_equal(neg_log_series(sp.csr_matrix(PAIR), 0.1, 3), neg_log_series(PAIR, 0.1, 3))

    def test_p_sensitivity_small_a(self):
        A = random_matching(40, np.random.default_rng(3))
        M5 = neg_log_series(A, 1e-4, 5)
        M7 = neg_log_series(A, 1e-4, 7)
        assert np.linalg.norm(M5 - M7) / np.linalg.norm(M5) <= 1e-14

    def test_converges_to_log(self):
        # Independent route: -log(I - aA) through the eigendecomposition.
        A = random_matching(8, np.random.default_rng(1)) + 0.0
        a = 0.3
        w, V = np.linalg.eigh(A)
        ref = V @ np.diag(-np.log1p(-a * w)) @ V.T
        assert np.abs(neg_log_series(A, a, 40) - ref).max() < 1e-15 + series_tail_bound(a, 1.0, 40)


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 50), st.floats(0.01, 0.2), st.integers(1, 7), st.integers(0, 2**32 - 1))
def test_neg_log_nonnegative_and_apply_matches_dense(n, a, p, seed):
    rng = np.random.default_rng(seed)
    A = random_sparse(n, 0.15, rng)
    M = neg_log_series(A, a, p)
    assert M.min() >= 0
    X = rng.standard_normal((n, n))
    ref = X @ M
    scale = np.abs(X).sum(axis=1, keepdims=True) @ np.abs(M).sum(axis=0, keepdims=True) / n + 1e-300
    assert np.all(np.abs(apply_M(X, A, a, p) - ref) <= 1e-12 * np.maximum(np.abs(ref), scale))
    v = rng.standard_normal(n)
    np.testing.assert_allclose(apply_MT(v, A, a, p), M.T @ v, rtol=1e-12, atol=1e-12 * np.abs(M).sum() * np.abs(v).max())


class TestKatzResolvent:
    def test_zero(self):
        assert np.array_equal(katz_resolvent(np.zeros((4, 4)), 0.5), np.eye(4))

    def test_pair(self):
        np.testing.assert_allclose(katz_resolvent(PAIR, 0.5), [[4 / 3, 2 / 3], [2 / 3, 4 / 3]], rtol=1e-15)

    def test_block_structure(self):
        A = np.zeros((3, 3))
        A[1, 2] = A[2, 1] = 1.0
        R = katz_resolvent(A, 0.5)
        np.testing.assert_allclose(R[1:, 1:], [[4 / 3, 2 / 3], [2 / 3, 4 / 3]], rtol=1e-15)
        assert R[0, 0] == 1.0
        assert not R[0, 1:].any() and not R[1:, 0].any()

    def test_singular_names_condition(self):
        with pytest.raises(SpectralConditionError, match="1 - a\\*lambda > 0"):
            katz_resolvent(PAIR, 1.0)

    def test_walk_sum(self):
        A = random_matching(10, np.random.default_rng(2))
        np.testing.assert_allclose(katz_walk_sum(A, 0.4), katz_resolvent(A, 0.4) - np.eye(10), atol=1e-15)


class TestMatrixExp:
    def test_zero(self):
        assert np.array_equal(matrix_exp(np.zeros((3, 3))), np.eye(3))

    def test_diagonal(self):
        np.testing.assert_allclose(matrix_exp(np.diag([1.0, 2.0])), np.diag([np.e, np.e**2]), rtol=1e-14)

    def test_nilpotent(self):
        C = np.array([[0.0, 1.0], [0.0, 0.0]])
        np.testing.assert_allclose(matrix_exp(C), np.eye(2) + C, atol=1e-15)

    def test_non_finite(self):
        with pytest.raises(ValueError):
            matrix_exp(np.array([[np.nan]]))

    def test_overflow(self):
        with pytest.raises(OverflowError):
            matrix_exp(np.array([[1000.0]]))

    def test_symmetric_against_eigh(self):
        rng = np.random.default_rng(5)
        B = rng.standard_normal((12, 12))
        C = (B + B.T) / 4
        w, V = np.linalg.eigh(C)
        ref = V @ np.diag(np.exp(w)) @ V.T
        assert np.linalg.norm(matrix_exp(C) - ref) / np.linalg.norm(ref) < 1e-12


class TestFractionalPower:
    def test_alpha_zero(self):
        assert np.array_equal(fractional_resolvent_power(PAIR, 0.1, 0.0, 5), np.eye(2))

    def test_alpha_out_of_range(self):
        with pytest.raises(ValueError):
            fractional_resolvent_power(PAIR, 0.1, 1.5, 5)

    def test_alpha_one_matches_resolvent(self):
        R = katz_resolvent(PAIR, 0.1)
        F = fractional_resolvent_power(PAIR, 0.1, 1.0, 30)
        assert np.linalg.norm(F - R) / np.linalg.norm(R) <= 1e-8

    def test_half_step(self):
        delta = 0.3
        half = fractional_resolvent_power(PAIR, 0.1, delta / 2, 30)
        full = fractional_resolvent_power(PAIR, 0.1, delta, 30)
        assert np.linalg.norm(half @ half - full) / np.linalg.norm(full) <= 1e-10

    def test_negative_one_inverts(self):
        A = random_matching(6, np.random.default_rng(4))
        F = fractional_resolvent_power(A, 0.2, -1.0, 40)
        np.testing.assert_allclose(F, np.eye(6) - 0.2 * A, atol=1e-14)


@settings(max_examples=40, deadline=None)
@given(
    st.integers(2, 20),
    st.floats(-1, 1),
    st.floats(-1, 1),
    st.floats(0.01, 0.3),
    st.integers(0, 2**32 - 1),
)
def test_fractional_power_semigroup(n, alpha, beta, a, seed):
    if abs(alpha + beta) > 1:
        beta = np.sign(beta) * (1 - abs(alpha))
    rng = np.random.default_rng(seed)
    A = random_matching(n, rng)
    p = 8
    lhs = fractional_resolvent_power(A, a, alpha, p) @ fractional_resolvent_power(A, a, beta, p)
    rhs = fractional_resolvent_power(A, a, alpha + beta, p)
    assert np.linalg.norm(lhs - rhs) / np.linalg.norm(rhs) <= 1e-9


class TestSeriesHelpers:
    def test_log1p_matches_numpy_scalar(self):
        X = np.array([[0.4]])
        assert log1p_series(X)[0, 0] == pytest.approx(np.log1p(0.4), rel=1e-15)

    def test_log1p_diverges(self):
        with pytest.raises(SpectralConditionError):
            log1p_series(np.array([[1.2]]))

    def test_log1p_inverts_exp(self):
        X = 0.3 * random_matching(6, np.random.default_rng(8))
        np.testing.assert_allclose(matrix_exp(log1p_series(X)), np.eye(6) + X, atol=1e-14)

    def test_series_order_meets_tail(self):
        for x in (1e-4, 0.1, 0.5, 0.9):
            p = series_order(x, 1.0)
            assert series_tail_bound(x, 1.0, p) <= 1e-16
            if p > 1:
                assert series_tail_bound(x, 1.0, p - 1) > 1e-16

    def test_series_order_rejects_divergent(self):
        with pytest.raises(SpectralConditionError):
            series_order(1.0, 1.0)
