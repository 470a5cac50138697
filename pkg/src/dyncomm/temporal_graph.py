"""Event ingestion and the continuous-time adjacency function A(t).

Two event models are supported:

* ``"call"``: each record is a call with a start time and a duration. The
  edge between the two parties is on (value 1, both directions) on the
  half-open interval ``[start, start + duration)`` so that A(t) is
  right-continuous. Overlapping calls on the same pair are OR-ed, not summed.
* ``"message"``: each record is an instantaneous directed message. The edge
  spikes to 1 when the message is sent and decays as ``exp(-c (t - t_e))``.
  Contributions of repeated messages add up and the total is clipped just
  below one.
"""
from __future__ import annotations

import csv
import enum
import io
from dataclasses import dataclass, field
from typing import Iterator, Optional

import numpy as np
import scipy.sparse as sp

#: Message-mode entries are clipped to ``1 - MESSAGE_CLIP`` to stay inside
#: the region where ``log(I - aA)`` has a convergent series.
MESSAGE_CLIP = 1e-6

#: Exact real-eigenvalue checks are only attempted up to this many nodes.
EIGEN_CHECK_MAX_N = 2000

CALL_HEADER = ("src", "dst", "start", "duration")
MESSAGE_HEADER = ("src", "dst", "time")


class Mode(str, enum.Enum):
    CALL = "call"
    MESSAGE = "message"


class IngestError(ValueError):
    """Raised when an event file cannot be turned into a temporal graph."""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ParseError(IngestError):
    pass


class RejectedRowError(IngestError):
    pass


class UnsupportedModeError(ValueError):
    pass


@dataclass(frozen=True, order=True)
class CallEvent:
    start: float
    duration: float
    src: int
    dst: int

    def __post_init__(self):
        if self.src == self.dst:
            raise RejectedRowError(f"self-call on node {self.src}")
        if self.src < 0 or self.dst < 0:
            raise RejectedRowError("node indices must be nonnegative")
        if not self.start >= 0:
            raise RejectedRowError(f"negative start time {self.start}")
        if not self.duration > 0:
            raise RejectedRowError(f"nonpositive duration {self.duration}")

    @property
    def end(self) -> float:
        return self.start + self.duration


@dataclass(frozen=True, order=True)
class MessageEvent:
    time: float
    src: int
    dst: int

    def __post_init__(self):
        if self.src == self.dst:
            raise RejectedRowError(f"self-message on node {self.src}")
        if self.src < 0 or self.dst < 0:
            raise RejectedRowError("node indices must be nonnegative")
        if not self.time >= 0:
            raise RejectedRowError(f"negative time {self.time}")


@dataclass(frozen=True)
class Params:
    """Model parameters.

    Attributes
    ----------
    a : float
        Edge attenuation, ``a > 0``.
    b : float
        Temporal decay rate in 1/seconds, ``b >= 0``.
    p : int
        Number of terms kept in the series for ``-log(I - aA)``.
    c : float
        Decay rate of message spikes in 1/seconds (message mode only).
    """

    a: float
    b: float = 0.0
    p: int = 5
    c: float = 0.0

    def __post_init__(self):
        if not self.a > 0:
            raise ValueError(f"attenuation a must be positive, got {self.a}")
        if not self.b >= 0:
            raise ValueError(f"decay b must be nonnegative, got {self.b}")
        if int(self.p) != self.p or self.p < 1:
            raise ValueError(f"series order p must be an integer >= 1, got {self.p}")
        if not self.c >= 0:
            raise ValueError(f"message decay c must be nonnegative, got {self.c}")


@dataclass(frozen=True)
class Piece:
    """A maximal interval ``[t0, t1)`` on which the call-mode A(t) is constant."""

    t0: float
    t1: float
    edges: tuple  # sorted tuple of (i, j) with i < j

    def matrix(self, n: int) -> sp.csr_matrix:
        return _symmetric_csr(self.edges, n)

    @property
    def nodes(self) -> np.ndarray:
        return np.unique(np.array(self.edges, dtype=np.int64).reshape(-1))


def _symmetric_csr(edges, n: int) -> sp.csr_matrix:
    if not edges:
        return sp.csr_matrix((n, n))
    e = np.asarray(edges, dtype=np.int64)
    rows = np.concatenate([e[:, 0], e[:, 1]])
    cols = np.concatenate([e[:, 1], e[:, 0]])
    return sp.csr_matrix((np.ones(rows.size), (rows, cols)), shape=(n, n))


@dataclass(frozen=True, eq=False)
class TemporalAdjacency:
    """The function t -> A(t) backed by a sorted event list.

    Instances are immutable after construction and can be shared between
    threads for read-only evaluation.
    """

    n: int
    mode: Mode
    events: tuple
    decay_rate: float = 0.0
    id_map: Optional[dict] = None
    breakpoints: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        mode = Mode(self.mode)
        object.__setattr__(self, "mode", mode)
        events = tuple(sorted(self.events))
        object.__setattr__(self, "events", events)
        for ev in events:
            if ev.src >= self.n or ev.dst >= self.n:
                raise IngestError(f"node index out of range for n={self.n}: {ev}")
        if mode is Mode.CALL:
            times = {ev.start for ev in events} | {ev.end for ev in events}
            bps = np.array(sorted(times), dtype=float)
        else:
            if events and not self.decay_rate > 0:
                raise ValueError("message mode needs a positive decay rate c")
            bps = np.empty(0)
        bps.setflags(write=False)
        object.__setattr__(self, "breakpoints", bps)
        self._arrays()

    def _arrays(self):
        # Columnar copies of the events for vectorized evaluation.
        if self.mode is Mode.CALL:
            cols = [(e.src, e.dst, e.start, e.end) for e in self.events]
            arr = np.array(cols, dtype=float).reshape(-1, 4)
        else:
            cols = [(e.src, e.dst, e.time) for e in self.events]
            arr = np.array(cols, dtype=float).reshape(-1, 3)
        arr.setflags(write=False)
        object.__setattr__(self, "_cols", arr)

    @property
    def labels(self) -> list:
        """External node label for each dense index."""
        if self.id_map is None:
            return [str(i) for i in range(self.n)]
        out = [str(i) for i in range(self.n)]
        for ext, idx in self.id_map.items():
            out[idx] = str(ext)
        return out

    def index_of(self, label) -> int:
        """Dense index of an external node label."""
        if self.id_map is not None:
            key = str(label)
            if key not in self.id_map:
                raise KeyError(f"unknown node {label!r}")
            return self.id_map[key]
        try:
            idx = int(label)
        except (TypeError, ValueError):
            raise KeyError(f"unknown node {label!r}") from None
        if not 0 <= idx < self.n:
            raise KeyError(f"unknown node {label!r}")
        return idx

    def jump_times(self) -> np.ndarray:
        """Times at which A(t) is discontinuous.

        Call breakpoints in call mode; message send times in message mode.
        """
        if self.mode is Mode.CALL:
            return self.breakpoints
        return np.unique(self._cols[:, 2])

    def last_time(self) -> float:
        if not self.events:
            return 0.0
        if self.mode is Mode.CALL:
            return float(self.breakpoints[-1])
        return float(self._cols[:, 2].max())

    def pieces(self, t_end: Optional[float] = None) -> Iterator[Piece]:
        """Yield the constant pieces of a call-mode A(t) covering ``[0, t_end)``."""
        if self.mode is not Mode.CALL:
            raise UnsupportedModeError("pieces are defined for call mode only")
        if t_end is None:
            t_end = self.last_time()
        starts: dict = {}
        ends: dict = {}
        for ev in self.events:
            key = (min(ev.src, ev.dst), max(ev.src, ev.dst))
            starts.setdefault(ev.start, []).append(key)
            ends.setdefault(ev.end, []).append(key)
        active: dict = {}
        cuts = [t for t in self.breakpoints if 0.0 < t < t_end]
        edges: tuple = ()
        t0 = 0.0
        for t in [0.0] + cuts:
            if t > t0:
                yield Piece(t0, t, edges)
                t0 = t
            for key in ends.get(t, ()):
                active[key] -= 1
                if active[key] == 0:
                    del active[key]
            for key in starts.get(t, ()):
                active[key] = active.get(key, 0) + 1
            edges = tuple(sorted(active))
        if t_end > t0:
            yield Piece(t0, t_end, edges)

    def adjacency_at(self, t: float) -> sp.csr_matrix:
        """A(t) as a sparse n-by-n matrix (right-continuous in call mode)."""
        return self._evaluate(t, left=False)

    def adjacency_left(self, t: float) -> sp.csr_matrix:
        """The left limit A(t-).

        In call mode this is the value on the interval just before ``t``, so
        a call is present iff ``start < t <= start + duration``. In message
        mode spikes sent exactly at ``t`` are excluded.
        """
        return self._evaluate(t, left=True)

    def message_adjacency(self, t: float, sent_by: float) -> sp.csr_matrix:
        """Message-mode A(t) counting only messages sent at or before ``sent_by``."""
        if self.mode is not Mode.MESSAGE:
            raise UnsupportedModeError("message_adjacency needs message mode")
        cols = self._cols
        mask = cols[:, 2] <= sent_by
        return self._message_matrix(cols[mask], t)

    def _evaluate(self, t: float, left: bool) -> sp.csr_matrix:
        n = self.n
        cols = self._cols
        if self.mode is Mode.CALL:
            if left:
                mask = (cols[:, 2] < t) & (t <= cols[:, 3])
            else:
                mask = (cols[:, 2] <= t) & (t < cols[:, 3])
            sel = cols[mask]
            if sel.size == 0:
                return sp.csr_matrix((n, n))
            i = sel[:, 0].astype(np.int64)
            j = sel[:, 1].astype(np.int64)
            rows = np.concatenate([i, j])
            cc = np.concatenate([j, i])
            m = sp.csr_matrix((np.ones(rows.size), (rows, cc)), shape=(n, n))
            m.data[:] = 1.0  # duplicates OR to one
            return m
        mask = cols[:, 2] < t if left else cols[:, 2] <= t
        return self._message_matrix(cols[mask], t)

    def _message_matrix(self, sel: np.ndarray, t: float) -> sp.csr_matrix:
        n = self.n
        if sel.size == 0:
            return sp.csr_matrix((n, n))
        w = np.exp(-self.decay_rate * (t - sel[:, 2]))
        m = sp.csr_matrix(
            (w, (sel[:, 0].astype(np.int64), sel[:, 1].astype(np.int64))), shape=(n, n)
        )
        np.minimum(m.data, 1.0 - MESSAGE_CLIP, out=m.data)
        return m


def _parse_id(token: str):
    token = token.strip()
    try:
        value = int(token)
    except ValueError:
        return token
    return value


def ingest_events(
    text: str,
    mode="call",
    n_hint: Optional[int] = None,
    decay_rate: float = 0.0,
) -> TemporalAdjacency:
    """Parse CSV event records into a :class:`TemporalAdjacency`.

    Parameters
    ----------
    text : str
        CSV content with header ``src,dst,start,duration`` (call mode) or
        ``src,dst,time`` (message mode).
    mode : {"call", "message"}
    n_hint : int, optional
        Minimum node count; the result has ``max(n_hint, max index + 1)``
        nodes.
    decay_rate : float
        Message decay rate ``c``, required for message mode.

    Node identifiers that are all nonnegative integers are used directly as
    dense indices. Otherwise every identifier is remapped to a dense index in
    order of first appearance and the mapping is kept in ``id_map``.

    Raises
    ------
    ParseError
        Bad header, wrong field count or unparseable number.
    RejectedRowError
        Self-loops, negative times or nonpositive durations.
    """
    mode = Mode(mode)
    header = CALL_HEADER if mode is Mode.CALL else MESSAGE_HEADER
    reader = csv.reader(io.StringIO(text))
    rows = []
    seen_header = False
    for lineno, row in enumerate(reader, start=1):
        if not row or all(not c.strip() for c in row):
            continue
        if not seen_header:
            got = tuple(c.strip() for c in row)
            if got != header:
                raise ParseError(f"expected header {','.join(header)}, got {','.join(got)}", lineno)
            seen_header = True
            continue
        if len(row) != len(header):
            raise ParseError(f"expected {len(header)} fields, got {len(row)}", lineno)
        src, dst = _parse_id(row[0]), _parse_id(row[1])
        try:
            nums = [float(c) for c in row[2:]]
        except ValueError as exc:
            raise ParseError(f"bad number: {exc}", lineno) from None
        if not all(np.isfinite(nums)):
            raise ParseError("non-finite time value", lineno)
        rows.append((lineno, src, dst, nums))

    ids = [r[1] for r in rows] + [r[2] for r in rows]
    id_map = None
    if all(isinstance(x, int) and x >= 0 for x in ids):
        index = {x: x for x in ids}
    else:
        index = {}
        for x in ids:
            index.setdefault(x, len(index))
        id_map = {str(k): v for k, v in index.items()}

    events = []
    for lineno, src, dst, nums in rows:
        try:
            if mode is Mode.CALL:
                events.append(CallEvent(nums[0], nums[1], index[src], index[dst]))
            else:
                events.append(MessageEvent(nums[0], index[src], index[dst]))
        except RejectedRowError as exc:
            raise RejectedRowError(str(exc), lineno) from None

    n = max(index.values()) + 1 if index else 0
    if n_hint is not None:
        n = max(n, int(n_hint))
    return TemporalAdjacency(n=n, mode=mode, events=tuple(events), decay_rate=decay_rate, id_map=id_map)


def adjacency_at(g: TemporalAdjacency, t: float) -> sp.csr_matrix:
    return g.adjacency_at(t)


class Status(str, enum.Enum):
    VALID = "valid"
    WARNING = "warning"
    INVALID = "invalid"


@dataclass(frozen=True)
class Validity:
    status: Status
    detail: str = ""

    def __bool__(self):
        return self.status is Status.VALID


def _snapshots(g: TemporalAdjacency):
    if g.mode is Mode.CALL:
        for piece in g.pieces():
            if piece.edges:
                yield piece.t0, piece.matrix(g.n)
    else:
        # Entries only decay between sends, so maxima sit at send times.
        for t in g.jump_times():
            yield float(t), g.adjacency_at(t)


def _is_matching(m: sp.csr_matrix) -> bool:
    return m.nnz == 0 or (np.diff(m.indptr).max() <= 1 and np.asarray((m != 0).sum(axis=0)).max() <= 1)


def validate_attenuation(g: TemporalAdjacency, params: Params | float) -> Validity:
    """Check that ``log(I - a A(t))`` is well defined along the whole run.

    The principal logarithm exists when ``1 - a*lam > 0`` for every real
    eigenvalue ``lam`` of every snapshot. For call data made of disjoint
    pairs this reduces to ``a < 1``. Otherwise a Gershgorin row-sum bound is
    tried first and an explicit eigenvalue check is the fallback.
    """
    a = params.a if isinstance(params, Params) else float(params)
    if not a > 0:
        return Validity(Status.INVALID, f"attenuation a={a} must be positive")
    snaps = list(_snapshots(g))
    if not snaps:
        return Validity(Status.VALID, "no edges")
    if g.mode is Mode.CALL and all(_is_matching(m) for _, m in snaps):
        if a < 1:
            return Validity(Status.VALID, "every snapshot is a matching and a < 1")
        return Validity(Status.INVALID, f"snapshots are matchings, need a < 1 (a={a})")
    worst = max(float(abs(m).sum(axis=1).max()) for _, m in snaps)
    if a * worst < 1:
        return Validity(Status.VALID, f"row-sum bound a*{worst:g} < 1")
    if g.n > EIGEN_CHECK_MAX_N:
        return Validity(Status.WARNING, f"row-sum bound a*{worst:g} >= 1 and n too large for eigen check")
    for t, m in snaps:
        if a * float(abs(m).sum(axis=1).max()) < 1:
            continue
        lam = np.linalg.eigvals(m.toarray())
        real = lam[np.abs(lam.imag) <= 1e-12 * max(1.0, np.abs(lam).max())].real
        if real.size and (1 - a * real.max()) <= 0:
            return Validity(
                Status.INVALID,
                f"at t={t:g}: 1 - a*lambda = {1 - a * real.max():.3g} <= 0 for lambda={real.max():.6g}",
            )
    return Validity(Status.VALID, "real eigenvalues satisfy 1 - a*lambda > 0")


def bandwidth(g: TemporalAdjacency) -> np.ndarray:
    """Seconds of call activity per node, summing every incident call."""
    if g.mode is not Mode.CALL:
        raise UnsupportedModeError("bandwidth is defined for call data only")
    out = np.zeros(g.n)
    cols = g._cols
    if cols.size:
        dur = cols[:, 3] - cols[:, 2]
        np.add.at(out, cols[:, 0].astype(np.int64), dur)
        np.add.at(out, cols[:, 1].astype(np.int64), dur)
    return out


def restrict(g: TemporalAdjacency, t0: float, t1: float, shift: bool = True) -> TemporalAdjacency:
    """Events starting in ``[t0, t1)``, optionally re-timed so that ``t0`` becomes 0.

    Calls are clipped to end by ``t1``.
    """
    events = []
    for ev in g.events:
        if g.mode is Mode.CALL:
            if not t0 <= ev.start < t1:
                continue
            dur = min(ev.end, t1) - ev.start
            start = ev.start - t0 if shift else ev.start
            events.append(CallEvent(start, dur, ev.src, ev.dst))
        else:
            if not t0 <= ev.time < t1:
                continue
            events.append(MessageEvent(ev.time - t0 if shift else ev.time, ev.src, ev.dst))
    return TemporalAdjacency(n=g.n, mode=g.mode, events=tuple(events), decay_rate=g.decay_rate, id_map=g.id_map)
