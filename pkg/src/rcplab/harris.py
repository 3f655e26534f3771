"""Harris graphical construction on a window of Z.

Death marks of site ``x`` are the points of a renewal stream; arrows on a
directed edge ``(x, y)`` form a Poisson process of rate ``lam``.  Every
stream is derived from ``(seed, replica, kind, coordinates)`` and built on
first use, so untouched sites cost nothing and query order is irrelevant.

Arrow streams are generated in time blocks of fixed expected size at a
reference rate ``lam_ref >= lam``; each point carries a uniform mark and is
kept when ``mark < lam / lam_ref``.  Systems sharing ``seed`` and
``lam_ref`` are therefore coupled so that arrows at a smaller rate are a
subset of arrows at a larger rate.

Paths follow the closed-interval convention: a site holding the infection
on ``[t_i, t_{i+1}]`` must carry no death mark anywhere in that closed
interval, and jump times are strictly increasing.
"""

from __future__ import annotations

import bisect
import csv
import math
from dataclasses import dataclass

import numpy as np

from .distributions import InterarrivalLaw
from .renewal import RenewalStream
from .streams import derive_rng

__all__ = [
    "HarrisSystem",
    "PathCertificate",
    "OracleLimitError",
    "build_system",
    "deaths_in",
    "arrows_in",
    "infected_set_at",
    "reachable",
    "brute_force_reachable",
    "dump_events",
]

DEATH, ARROW = 0, 1
# expected number of reference-rate arrows per generated block
ARROW_BLOCK_EVENTS = 512


class OracleLimitError(ValueError):
    """Instance too large for the exhaustive reachability oracle."""


class ArrowStream:
    """Poisson arrows of one directed edge, generated block by block."""

    def __init__(self, lam: float, lam_ref: float, horizon: float, seed: int, key: tuple):
        self.lam = lam
        self.lam_ref = lam_ref
        self.horizon = horizon
        self._seed = seed
        self._key = key
        self._keep = lam / lam_ref if lam_ref > 0 else 0.0
        self._block_len = ARROW_BLOCK_EVENTS / lam_ref if lam_ref > 0 else math.inf
        self._blocks: dict[int, np.ndarray] = {}

    def _block(self, b: int) -> np.ndarray:
        arr = self._blocks.get(b)
        if arr is None:
            rng = derive_rng(self._seed, *self._key, b)
            n = rng.poisson(ARROW_BLOCK_EVENTS)
            times = np.sort(self._block_len * (b + rng.random(n)))
            marks = rng.random(n)
            arr = times[marks < self._keep]
            self._blocks[b] = arr
        return arr

    def times_in(self, a: float, b: float) -> np.ndarray:
        """Kept arrow times in the closed interval ``[a, b]``."""
        b = min(b, self.horizon)
        if self.lam <= 0 or a > b:
            return np.empty(0)
        first = int(a // self._block_len)
        last = int(b // self._block_len)
        parts = []
        for k in range(first, last + 1):
            arr = self._block(k)
            parts.append(arr[np.searchsorted(arr, a, "left"): np.searchsorted(arr, b, "right")])
        return np.concatenate(parts) if len(parts) > 1 else parts[0]

    def next_after(self, u: float) -> float:
        """First kept arrow strictly after ``u`` within the horizon, or ``inf``."""
        if self.lam <= 0:
            return math.inf
        k = int(u // self._block_len)
        while k * self._block_len <= self.horizon:
            arr = self._block(k)
            i = np.searchsorted(arr, u, "right")
            if i < arr.size:
                t = float(arr[i])
                return t if t <= self.horizon else math.inf
            k += 1
        return math.inf

    @property
    def materialized_blocks(self) -> int:
        return len(self._blocks)


class _FixedTimes:
    """Explicit event list with the stream query interface (tests, debugging)."""

    def __init__(self, times, horizon: float):
        self._t = np.sort(np.asarray(times, dtype=float))
        self.horizon = horizon

    def points_in(self, a, b):
        return self._t[np.searchsorted(self._t, a, "left"): np.searchsorted(self._t, b, "right")]

    times_in = points_in

    def next_at_or_after(self, u):
        i = np.searchsorted(self._t, u, "left")
        return float(self._t[i]) if i < self._t.size and self._t[i] <= self.horizon else math.inf

    def next_after(self, u):
        i = np.searchsorted(self._t, u, "right")
        return float(self._t[i]) if i < self._t.size and self._t[i] <= self.horizon else math.inf


class HarrisSystem:
    """Lazily generated death marks and arrows over ``window x [0, horizon]``."""

    def __init__(self, law: InterarrivalLaw, lam: float, window: tuple, horizon: float,
                 one_sided: bool = False, seed: int = 0, replica: int = 0,
                 lam_ref: float | None = None, origin_first_above: float | None = None,
                 origin: int = 0):
        x_min, x_max = int(window[0]), int(window[1])
        if x_min > x_max:
            raise ValueError(f"empty window {window}")
        if not lam >= 0 or not math.isfinite(lam):
            raise ValueError(f"lam must be >= 0 (got {lam})")
        if not horizon > 0:
            raise ValueError(f"horizon must be > 0 (got {horizon})")
        lam_ref = lam if lam_ref is None else lam_ref
        if lam_ref < lam:
            raise ValueError(f"lam_ref={lam_ref} must be >= lam={lam}")
        self.law = law
        self.lam = float(lam)
        self.lam_ref = float(lam_ref)
        self.window = (x_min, x_max)
        self.horizon = float(horizon)
        self.one_sided = bool(one_sided)
        self.seed = int(seed)
        self.replica = int(replica)
        self.origin = origin
        self.origin_first_above = origin_first_above
        self._deaths: dict = {}
        self._arrows: dict = {}
        self._fixed = False

    @classmethod
    def from_events(cls, window: tuple, horizon: float, deaths: dict | None = None,
                    arrows: dict | None = None, one_sided: bool = False, lam: float = 1.0):
        """A system with explicit events; unspecified sites and edges are empty."""
        from .distributions import Exponential
        system = cls(Exponential(1.0), lam, window, horizon, one_sided)
        system._fixed = True
        for x in range(system.window[0], system.window[1] + 1):
            system._deaths[x] = _FixedTimes((deaths or {}).get(x, ()), system.horizon)
        for x, y in system.edges():
            system._arrows[(x, y)] = _FixedTimes((arrows or {}).get((x, y), ()), system.horizon)
        for x, y in (arrows or {}):
            system._check_edge(x, y)
        return system

    # -- geometry -----------------------------------------------------------

    def in_window(self, x: int) -> bool:
        return self.window[0] <= x <= self.window[1]

    def out_neighbors(self, x: int) -> tuple:
        lo, hi = self.window
        if self.one_sided:
            return (x + 1,) if x + 1 <= hi else ()
        return tuple(y for y in (x - 1, x + 1) if lo <= y <= hi)

    def in_neighbors(self, y: int) -> tuple:
        lo, hi = self.window
        if self.one_sided:
            return (y - 1,) if y - 1 >= lo else ()
        return tuple(x for x in (y - 1, y + 1) if lo <= x <= hi)

    def edges(self):
        for x in range(self.window[0], self.window[1] + 1):
            for y in self.out_neighbors(x):
                yield (x, y)

    def sites(self):
        return range(self.window[0], self.window[1] + 1)

    def _check_site(self, x: int):
        if not self.in_window(x):
            raise ValueError(f"site {x} outside window {self.window}")

    def _check_edge(self, x: int, y: int):
        self._check_site(x)
        self._check_site(y)
        if abs(x - y) != 1:
            raise ValueError(f"({x}, {y}) is not a pair of neighbours")
        if self.one_sided and y != x + 1:
            raise ValueError(f"edge ({x}, {y}) points left in a one-sided system")

    # -- streams --------------------------------------------------------------

    def death_stream(self, x: int):
        s = self._deaths.get(x)
        if s is None:
            self._check_site(x)
            rng = derive_rng(self.seed, "death", self.replica, x)
            first = self.origin_first_above if x == self.origin else None
            s = RenewalStream(self.law, rng, self.horizon, first_above=first)
            self._deaths[x] = s
        return s

    def arrow_stream(self, x: int, y: int):
        s = self._arrows.get((x, y))
        if s is None:
            self._check_edge(x, y)
            s = ArrowStream(self.lam, self.lam_ref, self.horizon, self.seed,
                            ("arrow", self.replica, x, y))
            self._arrows[(x, y)] = s
        return s

    def deaths_in(self, x: int, a: float, b: float) -> np.ndarray:
        """Sorted death times of ``x`` in the closed interval ``[a, b]``."""
        self._check_site(x)
        self._check_interval(a, b)
        return self.death_stream(x).points_in(a, b)

    def arrows_in(self, x: int, y: int, a: float, b: float) -> np.ndarray:
        """Sorted arrow times of the directed edge ``(x, y)`` in ``[a, b]``."""
        self._check_edge(x, y)
        self._check_interval(a, b)
        return self.arrow_stream(x, y).times_in(a, b)

    def _check_interval(self, a: float, b: float):
        if a > b or a < 0 or b > self.horizon:
            raise ValueError(f"interval [{a}, {b}] not inside [0, {self.horizon}]")

    def next_death_at_or_after(self, x: int, u: float) -> float:
        return self.death_stream(x).next_at_or_after(u)

    def next_arrow_after(self, x: int, y: int, u: float) -> float:
        return self.arrow_stream(x, y).next_after(u)

    def has_death_at(self, x: int, u: float) -> bool:
        return self.death_stream(x).next_at_or_after(u) == u

    @property
    def materialized(self) -> tuple:
        """``(death streams, arrow streams)`` built so far."""
        return len(self._deaths), len(self._arrows)

    def events(self, t_max: float | None = None):
        """All events in the window up to ``t_max`` as ``(time, kind, x, y)`` tuples.

        Materialises every site and edge; meant for small windows.  Sorted
        with deaths before arrows at equal times.
        """
        t_max = self.horizon if t_max is None else min(t_max, self.horizon)
        out = []
        for x in self.sites():
            out.extend((float(t), DEATH, x, x) for t in self.deaths_in(x, 0.0, t_max))
        for x, y in self.edges():
            out.extend((float(t), ARROW, x, y) for t in self.arrows_in(x, y, 0.0, t_max))
        out.sort()
        return out


def build_system(law, lam, window, horizon, one_sided=False, seed=0, **kw) -> HarrisSystem:
    return HarrisSystem(law, lam, window, horizon, one_sided, seed, **kw)


def deaths_in(system: HarrisSystem, site: int, a: float, b: float) -> np.ndarray:
    return system.deaths_in(site, a, b)


def arrows_in(system: HarrisSystem, from_site: int, to_site: int, a: float, b: float) -> np.ndarray:
    return system.arrows_in(from_site, to_site, a, b)


def dump_events(system: HarrisSystem, fh, t_max: float | None = None):
    """Write the events of a small system as CSV rows ``kind, site, target, time``."""
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(("kind", "site", "target", "time"))
    for t, kind, x, y in system.events(t_max):
        w.writerow(("death" if kind == DEATH else "arrow", x, "" if kind == DEATH else y, repr(t)))


# -- paths --------------------------------------------------------------------

@dataclass(frozen=True)
class PathCertificate:
    """Witness path: ``steps[i] = (site, entry time)``; the last site holds until ``terminal``."""

    steps: tuple
    terminal: float

    @property
    def source(self) -> tuple:
        return self.steps[0]

    @property
    def target(self) -> tuple:
        return (self.steps[-1][0], self.terminal)


def _window_events(system: HarrisSystem, s: float, t: float):
    """Deaths in ``[s, t]`` and arrows in ``(s, t)`` for every site/edge, sorted."""
    out = []
    for x in system.sites():
        out.extend((float(u), DEATH, x, x) for u in system.deaths_in(x, s, t))
    for x, y in system.edges():
        out.extend((float(u), ARROW, x, y) for u in system.arrows_in(x, y, s, t) if s < u < t)
    out.sort()
    return out


def _sweep(system: HarrisSystem, initial, s: float, t: float):
    """Forward sweep from ``initial`` sites at time ``s`` to time ``t``.

    Returns ``{site: record}`` for the sites infected at ``t``, where a record
    is ``(site, entry time, parent record)``.
    """
    alive = {}
    for x in initial:
        system._check_site(x)
        if not system.has_death_at(x, s):
            alive[x] = (x, s, None)
    if s == t:
        return alive
    for u, kind, x, y in _window_events(system, s, t):
        if kind == DEATH:
            alive.pop(x, None)
        elif (x in alive and alive[x][1] < u and y not in alive
              and not system.has_death_at(y, u)):
            # a site entered at u cannot pass the infection on at u itself
            alive[y] = (y, u, alive[x])
    return alive


def infected_set_at(system: HarrisSystem, initial, t: float) -> set:
    """The infected set at time ``t`` started from ``initial`` at time 0."""
    if not 0 <= t <= system.horizon:
        raise ValueError(f"t={t} outside [0, {system.horizon}]")
    return set(_sweep(system, set(initial), 0.0, t))


def reachable(system: HarrisSystem, source: tuple, target: tuple) -> PathCertificate | None:
    """A path certificate from ``(x, s)`` to ``(y, t)``, or None if no path exists."""
    (x, s), (y, t) = source, target
    if s > t:
        raise ValueError("source time must not exceed target time")
    if t > system.horizon:
        raise ValueError(f"target time {t} exceeds horizon {system.horizon}")
    system._check_site(y)
    rec = _sweep(system, (x,), s, t).get(y)
    if rec is None:
        return None
    steps = []
    while rec is not None:
        steps.append((rec[0], rec[1]))
        rec = rec[2]
    return PathCertificate(tuple(reversed(steps)), t)


def brute_force_reachable(system: HarrisSystem, source: tuple, target: tuple,
                          max_sites: int = 8, max_events: int = 256) -> bool:
    """Exhaustive search over states ``(site, event index)``.

    From each state the search either lets the next event pass or, if the
    event is an arrow out of the current site, follows it.
    """
    (x, s), (y, t) = source, target
    lo, hi = system.window
    if hi - lo + 1 > max_sites:
        raise OracleLimitError(f"window has {hi - lo + 1} sites (limit {max_sites})")
    if s > t:
        raise ValueError("source time must not exceed target time")
    events = _window_events(system, s, t)
    if len(events) > max_events:
        raise OracleLimitError(f"{len(events)} events (limit {max_events})")
    death_marks = {(e[2], e[0]) for e in events if e[1] == DEATH}
    n = len(events)
    times = [e[0] for e in events]
    # after a jump at events[i], the next usable event comes strictly later
    later = [bisect.bisect_right(times, u) for u in times]
    stack = [(x, 0)]
    seen = set()
    while stack:
        state = stack.pop()
        if state in seen:
            continue
        seen.add(state)
        site, i = state
        if i == n:
            if site == y:
                return True
            continue
        u, kind, a, b = events[i]
        if kind == DEATH and a == site:
            continue
        stack.append((site, i + 1))
        if kind == ARROW and a == site and (b, u) not in death_marks:
            stack.append((b, later[i]))
    return False
