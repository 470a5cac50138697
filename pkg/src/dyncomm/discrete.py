"""Discrete-time communicability iterations.

The update over a step ``dt``

    S(t + dt) = (I + exp(-b dt) S(t)) (I - a A(t + dt))^{-dt} - I

and its ``b = 0``, ``dt = 1`` special case, a left-to-right product of Katz
resolvents, serve as independent checks on the continuous engine. A
generalized form replaces the resolvent by any walk-generating matrix
function ``H(A)``; the truncated power series ``I + aA + ... + (aA)^p``
counts only walks that use at most ``p`` edges per step.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp

from .kernels import (
    SpectralConditionError,
    fractional_resolvent_power,
    katz_walk_sum,
    log1p_series,
    matrix_exp,
    series_order,
)
from .ode import IntegratorConfig, integrate_matrix, propagate_exact
from .temporal_graph import Mode, Params, TemporalAdjacency, UnsupportedModeError


def _dense(A) -> np.ndarray:
    return A.toarray() if sp.issparse(A) else np.asarray(A, dtype=float)


@dataclass(frozen=True)
class SnapshotSequence:
    snapshots: tuple
    dt: float = 1.0

    def __post_init__(self):
        shapes = {np.shape(s) for s in self.snapshots}
        if len(shapes) > 1:
            raise ValueError(f"snapshots differ in shape: {shapes}")


@dataclass(frozen=True)
class WalkGenerator:
    """``kind="resolvent"`` for ``(I - aA)^{-1}``; ``kind="truncated"`` for
    ``I + aA + ... + (aA)^p_walk``."""

    kind: str = "resolvent"
    p_walk: int = 1

    def __post_init__(self):
        if self.kind not in ("resolvent", "truncated"):
            raise ValueError(f"unknown walk generator {self.kind!r}")
        if self.kind == "truncated" and self.p_walk < 1:
            raise ValueError("p_walk must be >= 1")


def _check_dt(dt):
    if not 0 < dt <= 1:
        raise ValueError(f"dt must lie in (0, 1] for the fractional power identity, got {dt}")


def _radius_bound(A: np.ndarray) -> float:
    if A.size == 0:
        return 0.0
    bound = min(np.abs(A).sum(axis=1).max(), np.abs(A).sum(axis=0).max())
    return float(bound)


def _resolvent_power_minus_identity(A: np.ndarray, a: float, dt: float, p: Optional[int]) -> np.ndarray:
    n = A.shape[0]
    if p is None and dt == 1:
        return katz_walk_sum(A, a)
    if p is None:
        radius = _radius_bound(A)
        if a * radius >= 1:
            radius = float(np.abs(np.linalg.eigvals(A)).max())
        p = series_order(a, radius)
    return fractional_resolvent_power(A, a, dt, p) - np.eye(n)


def discrete_update(S, A_next, a: float, b: float, dt: float, p: Optional[int] = None) -> np.ndarray:
    """One step of the discrete communicability update.

    Parameters
    ----------
    S : array, shape (n, n)
        Current communicability ``S(t)``.
    A_next : array or sparse matrix
        Adjacency at the end of the step, ``A(t + dt)``.
    a, b : float
        Edge attenuation and temporal decay.
    dt : float
        Step length in ``(0, 1]``.
    p : int, optional
        Series order for ``-log(I - aA)``. ``None`` means exact: an LU solve
        when ``dt == 1`` and a series long enough to reach double precision
        otherwise.
    """
    _check_dt(dt)
    A = _dense(A_next)
    X = _resolvent_power_minus_identity(A, a, dt, p)
    S = np.asarray(S, dtype=float)
    decay = math.exp(-b * dt)
    return X + decay * (S + S @ X)


def discrete_product(seq: SnapshotSequence | Sequence, a: float) -> np.ndarray:
    """``prod_k (I - a A_k)^{-1} - I`` multiplied left to right in time order."""
    snaps = seq.snapshots if isinstance(seq, SnapshotSequence) else tuple(seq)
    if not snaps:
        raise ValueError("empty snapshot sequence")
    n = np.shape(snaps[0])[0]
    S = np.zeros((n, n))
    for A in snaps:
        S = discrete_update(S, A, a, 0.0, 1.0)
    return S


def truncated_walk_generator(A, a: float, p_walk: int) -> np.ndarray:
    """``aA + (aA)^2 + ... + (aA)^p_walk``, i.e. ``H - I``."""
    aA = a * _dense(A)
    term = aA.copy()
    out = aA.copy()
    for _ in range(p_walk - 1):
        term = term @ aA
        out += term
    return out


def generalized_update(
    S, A_next, walkgen: WalkGenerator, a: float, b: float, dt: float, p: Optional[int] = None
) -> np.ndarray:
    """``(I + exp(-b dt) S) H(A)^dt - I`` for the chosen walk generator.

    For the truncated power series ``H^dt = exp(dt log H)`` with ``log H``
    summed from the Mercator series of ``H - I``.
    """
    if walkgen.kind == "resolvent":
        return discrete_update(S, A_next, a, b, dt, p)
    _check_dt(dt)
    X = truncated_walk_generator(A_next, a, walkgen.p_walk)
    if dt != 1:
        try:
            X = matrix_exp(dt * log1p_series(X)) - np.eye(X.shape[0])
        except SpectralConditionError as exc:
            raise SpectralConditionError(f"H(A) - I has spectral radius >= 1: {exc}") from None
    S = np.asarray(S, dtype=float)
    decay = math.exp(-b * dt)
    return X + decay * (S + S @ X)


def refine_and_compare(
    g: TemporalAdjacency,
    a: float,
    b: float,
    T: float,
    dt_list: Sequence[float],
    p: int = 5,
    config: Optional[IntegratorConfig] = None,
    engine: str = "rk",
) -> list:
    """Distance between the discrete iteration on a uniform grid and the ODE at ``T``.

    The discrete run samples A at the right end of every step, taking the
    left limit ``A((t + dt)-)`` so that a grid aligned with the call pieces
    sees each piece's own adjacency. Both sides use the same series order
    ``p``.

    Returns
    -------
    list of (dt, frobenius_rel_err)
    """
    if g.mode is not Mode.CALL:
        raise UnsupportedModeError("refine_and_compare needs call data")
    params = Params(a=a, b=b, p=p)
    if engine == "exact":
        ref = propagate_exact(g, params, T, store_samples=False).state.U
    else:
        ref = integrate_matrix(g, params, T, config, store_samples=False).state.U
    ref_norm = np.linalg.norm(ref)
    rows = []
    for dt in dt_list:
        steps = int(round(T / dt))
        if steps < 1 or abs(steps * dt - T) > 1e-9 * T:
            raise ValueError(f"dt={dt} does not divide T={T}")
        S = np.zeros((g.n, g.n))
        for k in range(1, steps + 1):
            t_right = T if k == steps else k * dt
            S = discrete_update(S, g.adjacency_left(t_right), a, b, dt, p)
        U = S + np.eye(g.n)
        rows.append((float(dt), float(np.linalg.norm(U - ref) / ref_norm)))
    return rows
