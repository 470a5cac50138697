"""Matrix functions used by the continuous-time engine and the discrete oracle.

Everything here works on dense ``numpy`` arrays; adjacency snapshots may be
passed as ``scipy.sparse`` matrices wherever only products with them are
needed.
"""
from __future__ import annotations

import math
import warnings

import numpy as np
import scipy.linalg
import scipy.sparse as sp


class SpectralConditionError(ArithmeticError):
    """``I - aA`` is singular or ``log(I - aA)`` leaves its valid region."""


def _dense(A) -> np.ndarray:
    if sp.issparse(A):
        return A.toarray()
    return np.asarray(A, dtype=float)


def _check_order(p):
    if int(p) != p or p < 1:
        raise ValueError(f"series order p must be an integer >= 1, got {p}")


def neg_log_series(A, a: float, p: int) -> np.ndarray:
    """Truncated series for ``-log(I - aA)``.

    Returns ``M = sum_{k=1}^{p} (aA)^k / k`` as a dense array. For ``A >= 0``
    and ``a > 0`` every term is entrywise nonnegative.
    """
    _check_order(p)
    aA = a * _dense(A)
    term = aA.copy()
    M = aA.copy()
    for k in range(2, p + 1):
        term = term @ aA
        M += term / k
    return M


def apply_M(X: np.ndarray, A, a: float, p: int) -> np.ndarray:
    """``X @ M`` for ``M = neg_log_series(A, a, p)`` without forming ``M``.

    Uses ``p`` successive right-multiplications by the (sparse) ``A``.
    """
    _check_order(p)
    Y = np.asarray(X, dtype=float)
    out = np.zeros_like(Y)
    coef = 1.0
    for k in range(1, p + 1):
        Y = Y @ A
        if sp.issparse(Y):
            Y = Y.toarray()
        Y = np.asarray(Y)
        coef *= a
        out += (coef / k) * Y
    return out


def apply_MT(v: np.ndarray, A, a: float, p: int) -> np.ndarray:
    """``M.T @ v`` for ``M = neg_log_series(A, a, p)`` without forming ``M``."""
    _check_order(p)
    At = A.T
    y = np.asarray(v, dtype=float)
    out = np.zeros_like(y)
    coef = 1.0
    for k in range(1, p + 1):
        y = np.asarray(At @ y)
        coef *= a
        out += (coef / k) * y
    return out


def _lu_resolvent(A, a: float):
    aA = a * _dense(A)
    n = aA.shape[0]
    B = -aA
    B[np.diag_indices(n)] += 1.0
    with warnings.catch_warnings():
        # Singularity is reported below with the spectral condition instead.
        warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
        lu, piv = scipy.linalg.lu_factor(B, check_finite=True)
    pivots = np.abs(np.diag(lu))
    if pivots.min() <= 1e-14 * max(1.0, pivots.max()):
        raise SpectralConditionError(
            f"I - aA is numerically singular for a={a}: need 1 - a*lambda > 0 "
            "for every real eigenvalue lambda of A"
        )
    return (lu, piv), aA


def katz_resolvent(A, a: float) -> np.ndarray:
    """``(I - aA)^{-1}`` by LU factorization with partial pivoting."""
    n = A.shape[0]
    if n == 0:
        return np.eye(0)
    factors, _ = _lu_resolvent(A, a)
    return scipy.linalg.lu_solve(factors, np.eye(n))


def katz_walk_sum(A, a: float) -> np.ndarray:
    """``(I - aA)^{-1} - I``, computed as ``(I - aA)^{-1} aA`` to avoid cancellation."""
    if A.shape[0] == 0:
        return np.eye(0)
    factors, aA = _lu_resolvent(A, a)
    return scipy.linalg.lu_solve(factors, aA)


def matrix_exp(C) -> np.ndarray:
    """Matrix exponential (Pade scaling and squaring via ``scipy.linalg.expm``)."""
    C = _dense(C)
    if not np.all(np.isfinite(C)):
        raise ValueError("matrix_exp needs finite entries")
    E = scipy.linalg.expm(C)
    if not np.all(np.isfinite(E)):
        raise OverflowError("matrix exponential overflowed")
    return E


def fractional_resolvent_power(A, a: float, alpha: float, p: int) -> np.ndarray:
    """``(I - aA)^{-alpha}`` as ``exp(alpha * neg_log_series(A, a, p))``.

    ``alpha`` is restricted to ``[-1, 1]``, the range in which
    ``log(H^alpha) = alpha log H`` holds for the principal branch.
    """
    if abs(alpha) > 1:
        raise ValueError(f"alpha must lie in [-1, 1], got {alpha}")
    _check_order(p)
    if alpha == 0:
        return np.eye(A.shape[0])
    return matrix_exp(alpha * neg_log_series(A, a, p))


def log1p_series(X, tol: float = 1e-17, max_terms: int = 10_000) -> np.ndarray:
    """``log(I + X)`` from its Mercator series; needs spectral radius of X below one."""
    X = _dense(X)
    n = X.shape[0]
    if n == 0 or not X.any():
        return np.zeros_like(X)
    rho = np.abs(np.linalg.eigvals(X)).max()
    if rho >= 1:
        raise SpectralConditionError(f"log(I + X) series diverges: spectral radius {rho:.6g} >= 1")
    out = np.zeros_like(X)
    term = np.eye(n)
    for k in range(1, max_terms + 1):
        term = term @ X
        out += ((-1) ** (k + 1) / k) * term
        if np.abs(term).max() / k <= tol * max(1.0, np.abs(out).max()):
            return out
    raise SpectralConditionError("log(I + X) series failed to converge")


def series_order(a: float, radius: float, tol: float = 1e-16, p_max: int = 2000) -> int:
    """Smallest ``p`` whose neglected tail ``sum_{k>p} (a r)^k / k`` is below ``tol``.

    ``radius`` is any upper bound on the spectral radius of ``A`` (for example
    its largest row sum).
    """
    x = a * radius
    if x == 0:
        return 1
    if x >= 1:
        raise SpectralConditionError(f"a * radius = {x:.6g} >= 1: log series diverges")
    for p in range(1, p_max + 1):
        tail = x ** (p + 1) / ((p + 1) * (1 - x))
        if tail <= tol:
            return p
    return p_max


def series_tail_bound(a: float, radius: float, p: int) -> float:
    """Upper bound on ``||M_exact - M_p||`` given an upper bound ``radius`` on ``||A||``."""
    x = a * radius
    if x >= 1:
        return math.inf
    return x ** (p + 1) / ((p + 1) * (1 - x))
