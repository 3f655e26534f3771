"""Event-driven simulation of the renewal contact process.

A replica pulls events lazily from its :class:`~rcplab.harris.HarrisSystem`:
only the next death of each infected site and the next arrow on each
edge from an infected site into a healthy one are ever queued.  Stale
queue entries are recognised by a per-site infection epoch and dropped.
"""

from __future__ import annotations

import heapq
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

from .distributions import InterarrivalLaw
from .harris import HarrisSystem
from .stats import Proportion

__all__ = [
    "SimConfig",
    "SimOutcome",
    "BatchSummary",
    "make_system",
    "run_replica",
    "simulate",
    "run_batch",
    "conditioned_origin_batch",
    "SUMMARY_COLUMNS",
    "REPLICA_COLUMNS",
]

_DEATH, _ARROW = 0, 1


@dataclass(frozen=True)
class SimConfig:
    law: InterarrivalLaw
    lam: float
    L: int
    T: float
    initial: tuple = (0,)
    replicas: int = 1
    seed: int = 0
    one_sided: bool = False
    snapshots: tuple = ()
    lam_ref: float | None = None

    def __post_init__(self):
        if self.L < 0:
            raise ValueError(f"L must be >= 0 (got {self.L})")
        if not self.T > 0:
            raise ValueError(f"T must be > 0 (got {self.T})")
        if self.replicas < 1:
            raise ValueError(f"replicas must be >= 1 (got {self.replicas})")
        if self.lam < 0:
            raise ValueError(f"lam must be >= 0 (got {self.lam})")
        lo, hi = self.window
        bad = [x for x in self.initial if not lo <= x <= hi]
        if bad:
            raise ValueError(f"initial sites {bad} outside window {self.window}")
        object.__setattr__(self, "initial", tuple(sorted(set(int(x) for x in self.initial))))
        object.__setattr__(self, "snapshots", tuple(sorted(float(s) for s in self.snapshots)))

    @property
    def window(self) -> tuple:
        return (0, self.L) if self.one_sided else (-self.L, self.L)


@dataclass
class SimOutcome:
    replica: int
    survived: bool
    tau: float                # math.inf when the infection is alive at T
    extent: int               # largest |x| ever infected (-1 if never)
    boundary_hit: bool
    snapshots: list = field(default_factory=list)  # (time, infected count, extent so far)
    events: int = 0           # processed (non-stale) events

    def row(self):
        tau = "inf" if math.isinf(self.tau) else repr(self.tau)
        return (self.replica, int(self.survived), tau, self.extent, int(self.boundary_hit))


REPLICA_COLUMNS = ("replica_id", "survived", "tau", "extent", "boundary_hit")


def make_system(config: SimConfig, replica: int, first_above: float | None = None) -> HarrisSystem:
    return HarrisSystem(config.law, config.lam, config.window, config.T, config.one_sided,
                        config.seed, replica, lam_ref=config.lam_ref,
                        origin_first_above=first_above, origin=0)


def simulate(system: HarrisSystem, initial, T: float, snapshots=(), replica: int = 0) -> SimOutcome:
    """Run the process on ``system`` from ``initial`` up to time ``T``."""
    lo, hi = system.window
    boundary = {hi} if system.one_sided else {lo, hi}
    deaths = system.death_stream
    arrows = system.arrow_stream
    out_nb = system.out_neighbors
    in_nb = system.in_neighbors

    infected: dict = {}      # site -> current epoch
    epochs: dict = {}
    heap: list = []
    push = heapq.heappush
    pop = heapq.heappop
    extent = -1
    hit = False
    processed = 0

    def infect(y, u):
        nonlocal extent, hit
        d = deaths(y).next_at_or_after(u)
        if d == u:
            return
        ep = epochs.get(y, 0) + 1
        epochs[y] = ep
        infected[y] = ep
        if d <= T:
            push(heap, (d, _DEATH, y, y, ep))
        for z in out_nb(y):
            if z not in infected:
                a = arrows(y, z).next_after(u)
                if a < T:
                    push(heap, (a, _ARROW, y, z, ep))
        if abs(y) > extent:
            extent = abs(y)
        if y in boundary:
            hit = True

    for x in initial:
        infect(x, 0.0)

    snaps = list(snapshots)
    records = []
    tau = math.inf
    while heap:
        u, kind, x, y, ep = pop(heap)
        while snaps and snaps[0] < u:
            records.append((snaps.pop(0), len(infected), extent))
        if infected.get(x) != ep:
            continue
        if kind == _DEATH:
            del infected[x]
            processed += 1
            if not infected:
                tau = u
                break
            for w in in_nb(x):
                ew = infected.get(w)
                if ew is not None:
                    a = arrows(w, x).next_after(u)
                    if a < T:
                        push(heap, (a, _ARROW, w, x, ew))
        else:
            if y in infected:
                continue
            processed += 1
            infect(y, u)
    if not initial:
        tau = 0.0
    for s in snaps:
        records.append((s, len(infected) if s < tau else 0, extent))
    return SimOutcome(replica, bool(infected), tau, extent, hit, records, processed)


def run_replica(config: SimConfig, replica_id: int, first_above: float | None = None) -> SimOutcome:
    system = make_system(config, replica_id, first_above)
    return simulate(system, config.initial, config.T, config.snapshots, replica_id)


@dataclass
class BatchSummary:
    config: SimConfig
    survival: Proportion
    mean_tau_finite: float
    n_finite: int
    boundary_frac: float
    outcomes: list | None = None

    @property
    def survival_frac(self) -> float:
        return self.survival.p

    def row(self):
        c = self.config
        return (c.lam, c.law.expr(), c.L, c.T, c.replicas, c.seed, self.survival.p,
                self.survival.ci_low, self.survival.ci_high,
                "" if self.n_finite == 0 else self.mean_tau_finite, self.n_finite,
                self.boundary_frac)


SUMMARY_COLUMNS = ("lambda", "law", "L", "T", "replicas", "seed", "survival_frac", "ci_low",
                   "ci_high", "mean_tau_finite", "n_finite", "boundary_frac")


def _run_chunk(args):
    config, ids, first_above = args
    return [run_replica(config, r, first_above) for r in ids]


def _collect(config: SimConfig, workers: int, first_above: float | None):
    ids = list(range(config.replicas))
    if workers <= 1 or config.replicas < 2:
        return _run_chunk((config, ids, first_above))
    size = max(1, math.ceil(len(ids) / (4 * workers)))
    chunks = [(config, ids[i:i + size], first_above) for i in range(0, len(ids), size)]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        parts = list(pool.map(_run_chunk, chunks))
    return [o for part in parts for o in part]


def summarize(config: SimConfig, outcomes: list, keep: bool = False) -> BatchSummary:
    """Fold outcomes in replica order into a :class:`BatchSummary`."""
    survived = sum(1 for o in outcomes if o.survived)
    finite = [o.tau for o in outcomes if not o.survived]
    mean_tau = math.fsum(finite) / len(finite) if finite else math.nan
    boundary = sum(1 for o in outcomes if o.boundary_hit) / len(outcomes)
    return BatchSummary(config, Proportion(survived, len(outcomes)), mean_tau, len(finite),
                        boundary, outcomes if keep else None)


def run_batch(config: SimConfig, workers: int = 1, keep_outcomes: bool = False,
              first_above: float | None = None) -> BatchSummary:
    """Independent replicas ``0 .. replicas-1``; deterministic for a given config."""
    return summarize(config, _collect(config, workers, first_above), keep_outcomes)


def conditioned_origin_batch(config: SimConfig, c: float, workers: int = 1,
                             keep_outcomes: bool = False) -> BatchSummary:
    """Like :func:`run_batch`, with the origin's first interarrival conditioned on ``(c, inf)``."""
    if c < 0:
        raise ValueError(f"c must be >= 0 (got {c})")
    if c > 0 and float(config.law.tail(c)) <= 0.0:
        raise ValueError(f"law puts no mass above c={c}")
    return run_batch(config, workers, keep_outcomes, first_above=c if c > 0 else None)


def with_changes(config: SimConfig, **changes) -> SimConfig:
    return replace(config, **changes)
