"""Integration of the dynamic communicability ODE.

The state ``U(t) = I + S(t)`` obeys

    U'(t) = -b (U - I) - U log(I - a A(t)),     U(0) = I,

and the receive vector ``r = U^T 1`` obeys its own equation

    r'(t) = -b (r - 1) - log(I - a A(t))^T r,   r(0) = 1.

``-log(I - aA)`` is replaced by the truncated series ``M`` of
:func:`dyncomm.kernels.neg_log_series`. Two engines are provided:

* :func:`integrate_matrix` / :func:`integrate_receive`: adaptive
  Bogacki-Shampine 3(2) stepping. Steps never cross a jump of A(t) or a
  requested sample time.
* :func:`propagate_exact`: call data only. On each interval where A is
  constant the linear ODE is solved in closed form with an augmented
  matrix exponential.

Both only touch the columns of ``U`` belonging to nodes that are active on
the current interval: ``M`` vanishes outside that block, and every other
column relaxes towards the identity at rate ``b``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .kernels import apply_M, apply_MT, matrix_exp, neg_log_series
from .temporal_graph import MESSAGE_CLIP, Mode, Params, TemporalAdjacency, UnsupportedModeError

# Bogacki-Shampine 3(2) tableau.
_C = (0.0, 0.5, 0.75, 1.0)
_A21 = 0.5
_A32 = 0.75
_B = (2 / 9, 1 / 3, 4 / 9)
# Third-order minus embedded second-order weights (7/24, 1/4, 1/3, 1/8).
_E = (2 / 9 - 7 / 24, 1 / 3 - 1 / 4, 4 / 9 - 1 / 3, -1 / 8)

MIN_FACTOR = 0.2
MAX_FACTOR = 5.0


class IntegrationError(RuntimeError):
    def __init__(self, message: str, t: float):
        super().__init__(f"{message} (reached t={t:.17g})")
        self.t = t


class MaxStepsError(IntegrationError):
    pass


class StiffnessError(IntegrationError):
    pass


@dataclass(frozen=True)
class IntegratorConfig:
    abs_tol: float = 1e-4
    rel_tol: float = 1e-4
    h_init: Optional[float] = None
    h_max: float = math.inf
    safety: float = 0.9
    max_steps: int = 10_000_000
    record_steps: bool = False

    def __post_init__(self):
        if not (self.abs_tol > 0 and self.rel_tol > 0):
            raise ValueError("tolerances must be positive")
        if not 0 < self.safety < 1:
            raise ValueError("safety factor must lie in (0, 1)")
        if self.h_init is not None and not self.h_init > 0:
            raise ValueError("h_init must be positive")
        if not self.h_max > 0:
            raise ValueError("h_max must be positive")


@dataclass
class CommunicabilityState:
    t: float
    U: np.ndarray

    @property
    def S(self) -> np.ndarray:
        return self.U - np.eye(self.U.shape[0])


@dataclass
class IntegrationStats:
    n_steps: int = 0
    n_rejected: int = 0
    n_rhs: int = 0
    n_pieces: int = 0
    #: Smallest entry of ``U - I`` (or ``r - 1``) seen at any accepted step.
    min_excess: float = 0.0
    #: Accepted step intervals, kept only when ``record_steps`` is set.
    steps: list = field(default_factory=list)


@dataclass
class IntegrationResult:
    state: CommunicabilityState
    samples: list
    stats: IntegrationStats


def rhs_matrix(U: np.ndarray, A, params: Params) -> np.ndarray:
    """Right-hand side ``-b (U - I) + U M`` of the matrix ODE."""
    out = apply_M(U, A, params.a, params.p)
    if params.b:
        out -= params.b * (U - np.eye(U.shape[0]))
    return out


def rhs_receive(r: np.ndarray, A, params: Params) -> np.ndarray:
    """Right-hand side ``-b (r - 1) + M^T r`` of the receive ODE."""
    out = apply_MT(r, A, params.a, params.p)
    if params.b:
        out -= params.b * (r - 1.0)
    return out


# ---------------------------------------------------------------------------
# Windows: intervals between jumps of A(t), with the active node block.


class _Window:
    """A(t) restricted to the active block ``nodes`` on ``[t0, t1]``."""

    def __init__(self, t0, t1, nodes, params, const_A=None, msg=None):
        self.t0 = t0
        self.t1 = t1
        self.nodes = nodes
        self._params = params
        self._const_A = const_A
        self._M = None
        self._msg = msg  # (local src, local dst, send times, c)

    @property
    def empty(self) -> bool:
        return self.nodes.size == 0

    @property
    def constant(self) -> bool:
        return self._msg is None

    def block_A(self, t: float) -> np.ndarray:
        if self._msg is None:
            return self._const_A
        i, j, te, c = self._msg
        k = self.nodes.size
        A = np.zeros((k, k))
        np.add.at(A, (i, j), np.exp(-c * (t - te)))
        np.minimum(A, 1.0 - MESSAGE_CLIP, out=A)
        return A

    def block_M(self, t: float) -> np.ndarray:
        if self._msg is None:
            if self._M is None:
                self._M = neg_log_series(self._const_A, self._params.a, self._params.p)
            return self._M
        return neg_log_series(self.block_A(t), self._params.a, self._params.p)


def _windows(g: TemporalAdjacency, params: Params, T: float):
    if g.mode is Mode.CALL:
        for piece in g.pieces(T):
            nodes = piece.nodes if piece.edges else np.empty(0, dtype=np.int64)
            A = None
            if nodes.size:
                local = {v: k for k, v in enumerate(nodes.tolist())}
                A = np.zeros((nodes.size, nodes.size))
                for i, j in piece.edges:
                    A[local[i], local[j]] = A[local[j], local[i]] = 1.0
            yield _Window(piece.t0, piece.t1, nodes, params, const_A=A)
        return
    cols = g._cols
    jumps = [float(t) for t in g.jump_times() if 0 < t < T]
    bounds = [0.0] + jumps + [T]
    for t0, t1 in zip(bounds[:-1], bounds[1:]):
        sel = cols[cols[:, 2] <= t0]
        if sel.size == 0:
            yield _Window(t0, t1, np.empty(0, dtype=np.int64), params)
            continue
        src = sel[:, 0].astype(np.int64)
        dst = sel[:, 1].astype(np.int64)
        nodes = np.unique(np.concatenate([src, dst]))
        yield _Window(
            t0, t1, nodes, params,
            msg=(np.searchsorted(nodes, src), np.searchsorted(nodes, dst), sel[:, 2], g.decay_rate),
        )


# ---------------------------------------------------------------------------
# Adaptive Bogacki-Shampine driver.


def _normalize_schedule(schedule, T: float) -> np.ndarray:
    if schedule is None:
        return np.array([T])
    s = np.asarray(sorted(set(float(x) for x in schedule)), dtype=float)
    if s.size and (s[0] < 0 or s[-1] > T):
        raise ValueError(f"sample times must lie in [0, {T}]")
    return s


class _Problem:
    """State layout hooks shared by the matrix and vector integrations."""

    def __init__(self, n: int, b: float):
        self.n = n
        self.b = b

    def initial(self) -> np.ndarray:
        raise NotImplementedError

    def rhs(self, w: _Window, t: float, y: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def decay(self, y: np.ndarray, h: float) -> np.ndarray:
        """Exact solution over an interval with A = 0."""
        raise NotImplementedError

    def min_excess(self, y: np.ndarray) -> float:
        raise NotImplementedError


class _MatrixProblem(_Problem):
    def initial(self):
        return np.eye(self.n)

    def rhs(self, w, t, U):
        out = U * -self.b
        out[np.diag_indices(self.n)] += self.b
        K = w.nodes
        if K.size:
            out[:, K] += U[:, K] @ w.block_M(t)
        return out

    def decay(self, U, h):
        if not self.b:
            return U
        d = math.exp(-self.b * h)
        out = U * d
        out[np.diag_indices(self.n)] += 1.0 - d
        return out

    def min_excess(self, U):
        if U.size == 0:
            return 0.0
        return float(min(U.min(), (U.diagonal() - 1.0).min()))


class _ReceiveProblem(_Problem):
    def initial(self):
        return np.ones(self.n)

    def rhs(self, w, t, r):
        out = (1.0 - r) * self.b
        K = w.nodes
        if K.size:
            out[K] += w.block_M(t).T @ r[K]
        return out

    def decay(self, r, h):
        if not self.b:
            return r
        d = math.exp(-self.b * h)
        return 1.0 + (r - 1.0) * d

    def min_excess(self, r):
        return float((r - 1.0).min()) if r.size else 0.0


def _err_norm(err, y, cfg):
    scale = cfg.abs_tol + cfg.rel_tol * np.abs(y)
    return float(np.max(np.abs(err) / scale)) if err.size else 0.0


def _initial_step(problem, w, t, y, f0, span, cfg):
    # Hairer-Norsett-Wanner starting step estimate for a third-order method.
    scale = cfg.abs_tol + cfg.rel_tol * np.abs(y)
    d0 = float(np.max(np.abs(y) / scale))
    d1 = float(np.max(np.abs(f0) / scale))
    if d1 == 0:
        return span
    h0 = 0.01 * d0 / d1 if d0 > 1e-5 and d1 > 1e-5 else 1e-6 * span
    h0 = min(h0, span)
    f1 = problem.rhs(w, t + h0, y + h0 * f0)
    d2 = float(np.max(np.abs(f1 - f0) / scale)) / h0
    if max(d1, d2) <= 1e-15:
        h1 = max(1e-6 * span, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** (1 / 3)
    return min(100 * h0, h1, span)


def _integrate(problem: _Problem, g, params, T, cfg, schedule, observer, store_samples):
    if not T > 0:
        raise ValueError(f"final time T must be positive, got {T}")
    cfg = cfg or IntegratorConfig()
    samples_t = _normalize_schedule(schedule, T)
    stats = IntegrationStats()
    samples = []
    y = problem.initial()
    t = 0.0
    si = 0

    def emit(t_now, y_now):
        nonlocal si
        while si < samples_t.size and samples_t[si] == t_now:
            if observer is not None:
                observer(t_now, y_now)
            if store_samples:
                samples.append(CommunicabilityState(t_now, y_now.copy()))
            si += 1

    emit(0.0, y)
    h = cfg.h_init
    h_floor = 1e-12 * T
    for w in _windows(g, params, T):
        stats.n_pieces += 1
        stops = [s for s in samples_t[si:] if w.t0 < s < w.t1] + [w.t1]
        if w.empty:
            # Pure relaxation towards the identity: solved exactly.
            for stop in stops:
                y = problem.decay(y, stop - t)
                t = stop
                stats.n_steps += 1
                if cfg.record_steps:
                    stats.steps.append((w.t0, t))
                emit(t, y)
            continue
        k1 = problem.rhs(w, t, y)
        stats.n_rhs += 1
        if h is None:
            h = _initial_step(problem, w, t, y, k1, T, cfg)
            stats.n_rhs += 1
        for stop in stops:
            while t < stop:
                if stats.n_steps >= cfg.max_steps:
                    raise MaxStepsError(f"exceeded max_steps={cfg.max_steps}", t)
                h_try = min(h, cfg.h_max)
                clipped = h_try >= stop - t
                if clipped:
                    h_try = stop - t
                k2 = problem.rhs(w, t + _C[1] * h_try, y + (_A21 * h_try) * k1)
                k3 = problem.rhs(w, t + _C[2] * h_try, y + (_A32 * h_try) * k2)
                y_new = y + h_try * (_B[0] * k1 + _B[1] * k2 + _B[2] * k3)
                t_new = stop if clipped else t + h_try
                k4 = problem.rhs(w, t_new, y_new)
                stats.n_rhs += 3
                err = h_try * (_E[0] * k1 + _E[1] * k2 + _E[2] * k3 + _E[3] * k4)
                norm = _err_norm(err, y, cfg)
                factor = MAX_FACTOR if norm == 0 else min(MAX_FACTOR, max(MIN_FACTOR, cfg.safety * norm ** (-1 / 3)))
                if norm <= 1:
                    if cfg.record_steps:
                        stats.steps.append((t, t_new))
                    t, y, k1 = t_new, y_new, k4
                    stats.n_steps += 1
                    stats.min_excess = min(stats.min_excess, problem.min_excess(y))
                    h_new = h_try * factor
                    h = max(h, h_new) if clipped and h_try < h else h_new
                else:
                    stats.n_rejected += 1
                    h = h_try * factor
                    if h < h_floor:
                        raise StiffnessError(f"step size {h:.3g} underflowed", t)
            emit(t, y)
    return t, y, samples, stats


def integrate_matrix(
    g: TemporalAdjacency,
    params: Params,
    T: float,
    config: Optional[IntegratorConfig] = None,
    schedule: Optional[Sequence[float]] = None,
    observer: Optional[Callable[[float, np.ndarray], None]] = None,
    store_samples: bool = True,
) -> IntegrationResult:
    """Integrate the matrix ODE for ``U(t)`` on ``[0, T]`` with adaptive RK 3(2).

    Parameters
    ----------
    g : TemporalAdjacency
    params : Params
    T : float
        Final time.
    config : IntegratorConfig, optional
    schedule : sequence of float, optional
        Sample times in ``[0, T]``; each becomes a step endpoint. Defaults to
        ``[T]``.
    observer : callable, optional
        Called as ``observer(t, U)`` at every sample time. ``U`` must not be
        modified.
    store_samples : bool
        Keep a copy of ``U`` at every sample time in ``result.samples``.

    Raises
    ------
    MaxStepsError, StiffnessError
    """
    problem = _MatrixProblem(g.n, params.b)
    t, U, samples, stats = _integrate(problem, g, params, T, config, schedule, observer, store_samples)
    return IntegrationResult(CommunicabilityState(t, U), samples, stats)


def integrate_receive(
    g: TemporalAdjacency,
    params: Params,
    T: float,
    config: Optional[IntegratorConfig] = None,
    schedule: Optional[Sequence[float]] = None,
    observer: Optional[Callable[[float, np.ndarray], None]] = None,
    store_samples: bool = True,
) -> IntegrationResult:
    """Integrate the receive vector ODE; same contract as :func:`integrate_matrix`.

    ``result.state.U`` and the samples hold the vector ``r(t)`` instead of a
    matrix.
    """
    problem = _ReceiveProblem(g.n, params.b)
    t, r, samples, stats = _integrate(problem, g, params, T, config, schedule, observer, store_samples)
    return IntegrationResult(CommunicabilityState(t, r), samples, stats)


# ---------------------------------------------------------------------------
# Exact propagation on constant pieces.


def _augmented_exp(M: np.ndarray, b: float, h: float):
    k = M.shape[0]
    Z = np.zeros((2 * k, 2 * k))
    Z[:k, :k] = M
    Z[np.arange(k), np.arange(k)] -= b
    Z[np.arange(k, 2 * k), np.arange(k)] = b
    E = matrix_exp(h * Z)
    return E[:k, :k], E[k:, :k]


def exact_piece_propagate(U: np.ndarray, M: np.ndarray, b: float, h: float) -> np.ndarray:
    """Advance ``U' = U (M - bI) + bI`` by ``h`` with ``M`` held constant.

    Row vectors ``[U, I]`` satisfy ``[U, I]' = [U, I] Z`` with
    ``Z = [[M - bI, 0], [bI, 0]]``, so ``U(t+h) = U E11 + E21`` where
    ``E = exp(hZ)``.
    """
    if not h > 0:
        raise ValueError("step h must be positive")
    E11, E21 = _augmented_exp(np.asarray(M, dtype=float), b, h)
    return U @ E11 + E21


def propagate_exact(
    g: TemporalAdjacency,
    params: Params,
    T: float,
    schedule: Optional[Sequence[float]] = None,
    observer: Optional[Callable[[float, np.ndarray], None]] = None,
    store_samples: bool = True,
) -> IntegrationResult:
    """Closed-form propagation of the matrix ODE across the constant pieces of call data."""
    if g.mode is not Mode.CALL:
        raise UnsupportedModeError("the exact propagator needs piecewise-constant call data")
    if not T > 0:
        raise ValueError(f"final time T must be positive, got {T}")
    samples_t = _normalize_schedule(schedule, T)
    stats = IntegrationStats()
    samples = []
    n = g.n
    U = np.eye(n)
    t = 0.0
    si = 0
    problem = _MatrixProblem(n, params.b)

    def emit(t_now):
        nonlocal si
        while si < samples_t.size and samples_t[si] == t_now:
            if observer is not None:
                observer(t_now, U)
            if store_samples:
                samples.append(CommunicabilityState(t_now, U.copy()))
            si += 1

    emit(0.0)
    for w in _windows(g, params, T):
        stats.n_pieces += 1
        stops = [s for s in samples_t[si:] if w.t0 < s < w.t1] + [w.t1]
        K = w.nodes
        M = w.block_M(w.t0) if K.size else None
        cache = {}
        for stop in stops:
            h = stop - t
            if K.size == 0:
                U = problem.decay(U, h)
            else:
                if h not in cache:
                    cache[h] = _augmented_exp(M, params.b, h)
                E11, E21 = cache[h]
                rest = np.ones(n, dtype=bool)
                rest[K] = False
                if params.b and rest.any():
                    d = math.exp(-params.b * h)
                    idx = np.flatnonzero(rest)
                    U[:, idx] *= d
                    U[idx, idx] += 1.0 - d
                U[:, K] = U[:, K] @ E11
                U[np.ix_(K, K)] += E21
            t = stop
            stats.n_steps += 1
            stats.min_excess = min(stats.min_excess, problem.min_excess(U))
            emit(t)
    return IntegrationResult(CommunicabilityState(t, U.copy()), samples, stats)
