"""Broadcast/receive centrality, rankings and group communicability traces."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .ode import CommunicabilityState, IntegratorConfig, integrate_receive
from .temporal_graph import Mode, Params, TemporalAdjacency, bandwidth


@dataclass
class CentralitySeries:
    """Per-sample centrality vectors, shape ``(len(times), n)``.

    ``broadcast`` is ``None`` for receive-only runs; ``bandwidth`` is ``None``
    for message data.
    """

    times: np.ndarray
    broadcast: Optional[np.ndarray]
    receive: np.ndarray
    bandwidth: Optional[np.ndarray] = None


@dataclass
class GroupTrace:
    group: tuple
    times: np.ndarray
    values: np.ndarray
    #: True where every pair in the network had zero communicability.
    zero_denominator: np.ndarray


def broadcast_receive(state: CommunicabilityState | np.ndarray):
    """Row sums ``b = U 1`` and column sums ``r = U^T 1``."""
    U = state.U if isinstance(state, CommunicabilityState) else np.asarray(state)
    return U.sum(axis=1), U.sum(axis=0)


def rank(v, k: Optional[int] = None) -> list:
    """Top ``k`` ``(node, value)`` pairs, largest first, ties by node index."""
    v = np.asarray(v, dtype=float)
    if k is None:
        k = v.size
    if k > v.size:
        raise ValueError(f"k={k} exceeds the number of nodes {v.size}")
    order = np.lexsort((np.arange(v.size), -v))[:k]
    return [(int(i), float(v[i])) for i in order]


def rank_positions(v) -> np.ndarray:
    """1-based rank of every node under :func:`rank` ordering."""
    v = np.asarray(v, dtype=float)
    order = np.lexsort((np.arange(v.size), -v))
    pos = np.empty(v.size, dtype=np.int64)
    pos[order] = np.arange(1, v.size + 1)
    return pos


def _offdiag_sum(S: np.ndarray) -> float:
    return float(S.sum() - np.trace(S))


def group_value(U: np.ndarray, group: Sequence[int]):
    """Mean pairwise ``S_ij + S_ji`` over the group divided by the same mean over all pairs.

    Returns ``(value, zero_denominator)``. Pairs are unordered and exclude
    ``i == j``; the identity part of ``U`` drops out.
    """
    G = np.asarray(group, dtype=np.int64)
    n = U.shape[0]
    g = G.size
    den = _offdiag_sum(U) / (n * (n - 1) / 2)
    if den <= 0:
        return 0.0, True
    sub = U[np.ix_(G, G)]
    num = _offdiag_sum(sub) / (g * (g - 1) / 2)
    return num / den, False


def _check_group(group, n):
    G = tuple(int(i) for i in group)
    if len(set(G)) < 2:
        raise ValueError("a group needs at least two distinct nodes")
    if any(not 0 <= i < n for i in G):
        raise ValueError(f"group node out of range for n={n}")
    return G


def group_trace(samples: Sequence[CommunicabilityState], group: Sequence[int]) -> GroupTrace:
    if not samples:
        raise ValueError("no samples")
    G = _check_group(group, samples[0].U.shape[0])
    vals, flags = zip(*(group_value(s.U, G) for s in samples))
    return GroupTrace(
        group=G,
        times=np.array([s.t for s in samples]),
        values=np.array(vals),
        zero_denominator=np.array(flags),
    )


def series_from_samples(samples: Sequence[CommunicabilityState], bw=None) -> CentralitySeries:
    br = [broadcast_receive(s) for s in samples]
    return CentralitySeries(
        times=np.array([s.t for s in samples]),
        broadcast=np.array([x[0] for x in br]),
        receive=np.array([x[1] for x in br]),
        bandwidth=bw,
    )


def receive_fast_path(
    g: TemporalAdjacency,
    params: Params,
    T: float,
    config: Optional[IntegratorConfig] = None,
    schedule: Optional[Sequence[float]] = None,
) -> CentralitySeries:
    """Receive centrality from the vector ODE; ``U`` is never formed."""
    res = integrate_receive(g, params, T, config, schedule)
    return CentralitySeries(
        times=np.array([s.t for s in res.samples]),
        broadcast=None,
        receive=np.array([s.U for s in res.samples]),
        bandwidth=bandwidth(g) if g.mode is Mode.CALL else None,
    )
