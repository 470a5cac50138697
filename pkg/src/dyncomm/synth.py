"""Seeded synthetic call scenarios with a planted inner circle.

The scenario mimics a covert group inside ordinary phone traffic:

* Background: every ordinary node places calls as a Poisson process with
  ``background_rate`` calls per day to uniformly chosen ordinary partners;
  durations are exponential with mean ``call_duration_mean``.
* Inner circle, once per day: the leader phones each member briefly
  (``leader_call_mean``), the members then hold ``circle_rounds`` rounds of
  calls among themselves (``circle_call_mean``, jittered by +-25%), optionally report back to
  the leader with another brief call each (``debrief``), and finally each
  member relays to ``relay_fanout`` distinct outsiders (``relay_call_mean``).
* At ``switch_time`` the circle moves to new IDs given by ``id_map``. Old
  IDs join the background; new IDs are silent before the switch.

Because the leader's calls are short its bandwidth stays low, while the
long member-to-member calls that follow make it the origin of many
time-respecting walks.

Random numbers come from numpy's ``Generator`` over the counter-based
``Philox`` bit generator seeded with the user's 64-bit seed, consumed in a
fixed order (background node by node, then the circle day by day). Scenarios
are shared across implementations through the CSV export, not the seed.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .temporal_graph import CallEvent

DAY = 86400.0
MAX_EVENTS = 10_000_000
#: Seed of the reference scenario used by the acceptance run.
DEFAULT_SEED = 0


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class ScenarioConfig:
    n: int = 400
    horizon: float = 10 * DAY
    background_rate: float = 1.0
    call_duration_mean: float = 300.0
    leader: Optional[int] = 200
    members: tuple = (1, 2, 3, 5)
    leader_call_mean: float = 40.0
    circle_rounds: int = 5
    circle_call_mean: float = 3000.0
    debrief: bool = True
    relay_fanout: int = 3
    relay_call_mean: float = 120.0
    session_start: float = 9 * 3600.0
    switch_time: Optional[float] = 6 * DAY
    id_map: dict = field(default_factory=lambda: {200: 300, 1: 306, 2: 309, 3: 360, 5: 392})

    def __post_init__(self):
        object.__setattr__(self, "members", tuple(int(m) for m in self.members))
        object.__setattr__(self, "id_map", {int(k): int(v) for k, v in (self.id_map or {}).items()})
        if self.n < 2:
            raise ScenarioError("need at least two nodes")
        if self.background_rate < 0 or self.horizon <= 0:
            raise ScenarioError("rates must be nonnegative and the horizon positive")
        circle = self.old_circle
        if len(set(circle)) != len(circle):
            raise ScenarioError("inner-circle indices must be distinct")
        every = list(circle) + (list(self.id_map.values()) if circle else [])
        if any(not 0 <= i < self.n for i in every):
            raise ScenarioError(f"inner-circle index out of range for n={self.n}")
        if self.switch_time is not None:
            if not 0 <= self.switch_time < self.horizon:
                raise ScenarioError("switch_time must lie inside the horizon")
            missing = [i for i in circle if i not in self.id_map]
            if missing:
                raise ScenarioError(f"id_map lacks new IDs for {missing}")
            new = [self.id_map[i] for i in circle]
            if len(set(new)) != len(new) or set(new) & set(circle):
                raise ScenarioError("new IDs must be distinct and disjoint from the old circle")
        for name in ("call_duration_mean", "leader_call_mean", "circle_call_mean", "relay_call_mean"):
            if getattr(self, name) <= 0:
                raise ScenarioError(f"{name} must be positive")

    @property
    def old_circle(self) -> tuple:
        if self.leader is None:
            return ()
        return (self.leader,) + self.members

    @property
    def new_circle(self) -> tuple:
        if self.switch_time is None or self.leader is None:
            return ()
        return tuple(self.id_map[i] for i in self.old_circle)

    def to_json(self) -> dict:
        d = asdict(self)
        d["members"] = list(self.members)
        d["id_map"] = {str(k): v for k, v in self.id_map.items()}
        return d

    @classmethod
    def from_json(cls, d: dict) -> "ScenarioConfig":
        d = dict(d)
        if "members" in d:
            d["members"] = tuple(d["members"])
        return cls(**d)


@dataclass
class Scenario:
    config: ScenarioConfig
    seed: int
    events: list
    #: Inner circle before and after the switch, leader first.
    circle_before: tuple = ()
    circle_after: tuple = ()

    def ground_truth(self) -> dict:
        cfg = self.config
        return {
            "seed": self.seed,
            "leader_before": self.circle_before[0] if self.circle_before else None,
            "members_before": list(self.circle_before[1:]),
            "leader_after": self.circle_after[0] if self.circle_after else None,
            "members_after": list(self.circle_after[1:]),
            "switch_time": cfg.switch_time,
            "config": cfg.to_json(),
        }


def _duration(rng, mean: float) -> float:
    return float(max(1.0, round(rng.exponential(mean))))


def _expected_events(cfg: ScenarioConfig) -> float:
    days = cfg.horizon / DAY
    per_day = 0.0
    if cfg.leader is not None:
        k = len(cfg.members)
        per_day = 2 * k + cfg.circle_rounds * (k // 2) + k * cfg.relay_fanout
    return cfg.n * cfg.background_rate * days + per_day * days


def generate(config: ScenarioConfig, seed: int) -> Scenario:
    """Build the scenario for ``(config, seed)``; identical inputs give identical output."""
    cfg = config
    if _expected_events(cfg) > MAX_EVENTS:
        raise ScenarioError(f"configuration would produce more than {MAX_EVENTS} events")
    rng = np.random.Generator(np.random.Philox(int(seed) & 0xFFFFFFFFFFFFFFFF))
    old, new = cfg.old_circle, cfg.new_circle
    switch = cfg.switch_time if cfg.switch_time is not None else np.inf
    everyone = np.arange(cfg.n)

    before = np.setdiff1d(everyone, list(set(old) | set(new)))
    after = np.setdiff1d(everyone, list(new))

    def ordinary(t: float) -> np.ndarray:
        return before if t < switch else after

    events = []
    if cfg.background_rate > 0:
        gap = DAY / cfg.background_rate
        for i in range(cfg.n):
            t = rng.exponential(gap)
            while t < cfg.horizon:
                start = float(round(t))
                pool = ordinary(start)
                pos = int(np.searchsorted(pool, i))
                if pos < pool.size and pool[pos] == i and pool.size > 1:
                    # Uniform partner from the pool minus i itself.
                    idx = int(rng.integers(pool.size - 1))
                    j = int(pool[idx + 1 if idx >= pos else idx])
                    events.append(CallEvent(start, _duration(rng, cfg.call_duration_mean), i, j))
                t += rng.exponential(gap)

    if old:
        days = int(np.ceil(cfg.horizon / DAY))
        for d in range(days):
            day0 = d * DAY
            circle = old if day0 < switch else new
            if not circle:
                continue
            # Relay targets never include old IDs, so they only see background traffic.
            outsiders = np.setdiff1d(ordinary(day0), old)
            limit = min(switch if day0 < switch else np.inf, cfg.horizon)
            events.extend(_circle_day(rng, cfg, day0, circle, outsiders, limit))

    events = [e for e in events if e.start < cfg.horizon]
    events.sort()
    return Scenario(cfg, int(seed), events, tuple(old), tuple(new))


def _circle_day(rng, cfg, day0, circle, outsiders, limit):
    leader, members = circle[0], list(circle[1:])
    out = []

    def add(start, dur, i, j):
        if start < limit:
            out.append(CallEvent(float(start), dur, int(i), int(j)))

    t = day0 + cfg.session_start + float(round(rng.uniform(0, 3600)))
    for m in members:
        dur = _duration(rng, cfg.leader_call_mean)
        add(t, dur, leader, m)
        t += dur + float(round(rng.uniform(30, 300)))
    for _ in range(cfg.circle_rounds):
        order = rng.permutation(len(members))
        longest = 0.0
        for a, b in zip(order[0::2], order[1::2]):
            dur = float(round(cfg.circle_call_mean * rng.uniform(0.75, 1.25)))
            add(t, dur, members[a], members[b])
            longest = max(longest, dur)
        t += longest + float(round(rng.uniform(30, 300)))
    if cfg.debrief:
        for m in members:
            dur = _duration(rng, cfg.leader_call_mean)
            add(t, dur, m, leader)
            t += dur + float(round(rng.uniform(30, 300)))
    if cfg.relay_fanout:
        k = min(cfg.relay_fanout, outsiders.size)
        for m in members:
            s = t
            for x in rng.choice(outsiders, size=k, replace=False):
                dur = _duration(rng, cfg.relay_call_mean)
                add(s, dur, m, x)
                s += dur + float(round(rng.uniform(60, 1800)))
    return out


def export_csv(scenario: Scenario) -> str:
    """Call-mode CSV in the ingest format."""
    lines = ["src,dst,start,duration"]
    for e in scenario.events:
        lines.append(f"{e.src},{e.dst},{e.start:.17g},{e.duration:.17g}")
    return "\n".join(lines) + "\n"


def ground_truth_json(scenario: Scenario) -> str:
    return json.dumps(scenario.ground_truth(), indent=2, sort_keys=True) + "\n"
