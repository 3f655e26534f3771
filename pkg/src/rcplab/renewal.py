"""Renewal streams, gap and count statistics, and the (V0)-coupling.

Convention: a renewal process is ``R = {S_n : n >= 1}`` with
``S_n = T_1 + ... + T_n``; there is no point at time 0.

The Monte Carlo estimators are vectorised over blocks of replicas.  Each
block of ``BLOCK_SIZE`` replicas draws from its own stream derived from
``(seed, estimator, block index)``, so estimates do not depend on how the
work is scheduled.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .distributions import Empirical, InterarrivalLaw, Exponential
from .stats import Proportion
from .streams import derive_rng, replica_blocks

__all__ = [
    "RenewalStream",
    "CoupledPair",
    "CouplingTruncated",
    "GridEstimate",
    "QuietInterval",
    "CouplingTable",
    "FarGapTable",
    "generate_stream",
    "hits_interval",
    "count_in_interval",
    "estimate_gap_probability",
    "estimate_count_tail",
    "count_cutoff",
    "estimate_hit_probability",
    "find_quiet_subinterval",
    "choose_coupling_interval",
    "build_v0_coupling",
    "coupled_sequences",
    "estimate_coupling_tails",
    "estimate_far_gap",
]

BLOCK_SIZE = 4096
CHUNK = 64


class CouplingTruncated(RuntimeError):
    """The coupling walk did not stop within ``max_steps``."""


class RenewalStream:
    """One site's renewal clock, generated in fixed-size chunks.

    Points are produced ``CHUNK`` interarrivals at a time from ``rng`` so
    that extending the horizon never changes points already produced.
    ``first_above`` conditions the first interarrival on ``(c, inf)`` by
    rescaling its tail uniform.
    """

    def __init__(self, law: InterarrivalLaw, rng: np.random.Generator,
                 horizon: float = 0.0, first_above: float | None = None):
        self.law = law
        self._rng = rng
        self._first_above = first_above if first_above else None
        self._chunks: list[np.ndarray] = []
        self._all = np.empty(0)
        self._last = 0.0
        self.horizon = 0.0
        if horizon > 0:
            self.extend_to(horizon)

    def _draw_chunk(self) -> np.ndarray:
        u = 1.0 - self._rng.random(CHUNK)
        if not self._chunks and self._first_above is not None:
            c = self._first_above
            mass = float(self.law.tail(c))
            if mass <= 0.0:
                raise ValueError(f"law puts no mass above {c}")
            u[0] *= mass
            while float(self.law.inverse_tail(u[0])) <= c:
                u[0] = (1.0 - self._rng.random()) * mass
        gaps = self.law.inverse_tail(u)
        pts = self._last + np.cumsum(gaps)
        self._last = float(pts[-1])
        return pts

    def extend_to(self, horizon: float) -> "RenewalStream":
        if horizon <= self.horizon:
            return self
        grew = False
        while self._last <= horizon:
            self._chunks.append(self._draw_chunk())
            grew = True
        if grew:
            self._all = np.concatenate(self._chunks)
        self.horizon = float(horizon)
        return self

    @property
    def points(self) -> np.ndarray:
        """Renewal points in ``(0, horizon]``."""
        return self._all[: np.searchsorted(self._all, self.horizon, side="right")]

    def _check(self, b: float):
        if b > self.horizon:
            raise ValueError(f"query end {b} exceeds generated horizon {self.horizon}; extend first")

    def points_in(self, a: float, b: float) -> np.ndarray:
        """Points in the closed interval ``[a, b]``."""
        self._check(b)
        pts = self._all
        return pts[np.searchsorted(pts, a, side="left"): np.searchsorted(pts, b, side="right")]

    def count_in(self, a: float, b: float) -> int:
        self._check(b)
        pts = self._all
        return int(np.searchsorted(pts, b, side="right") - np.searchsorted(pts, a, side="left"))

    def hits_open(self, a: float, b: float) -> bool:
        """True iff some point lies in the open interval ``(a, b)``."""
        self._check(b)
        pts = self._all
        return bool(np.searchsorted(pts, b, side="left") > np.searchsorted(pts, a, side="right"))

    def next_at_or_after(self, u: float) -> float:
        """First point ``>= u`` within the horizon, or ``inf``."""
        pts = self._all
        i = np.searchsorted(pts, u, side="left")
        if i < pts.size and pts[i] <= self.horizon:
            return float(pts[i])
        return math.inf

    def last_at_or_before(self, u: float) -> float:
        """Last point ``<= u``, or ``-inf`` if there is none."""
        pts = self._all
        i = np.searchsorted(pts, u, side="right")
        return float(pts[i - 1]) if i > 0 else -math.inf

    def __len__(self) -> int:
        return int(np.searchsorted(self._all, self.horizon, side="right"))


def generate_stream(law: InterarrivalLaw, horizon: float, rng: np.random.Generator) -> RenewalStream:
    if not horizon > 0:
        raise ValueError(f"horizon must be > 0 (got {horizon})")
    return RenewalStream(law, rng, horizon)


def hits_interval(stream: RenewalStream, a: float, b: float) -> bool:
    if not 0 <= a < b:
        raise ValueError(f"need 0 <= a < b (got a={a}, b={b})")
    return stream.hits_open(a, b)


def count_in_interval(stream: RenewalStream, a: float, b: float) -> int:
    if a > b:
        raise ValueError(f"need a <= b (got a={a}, b={b})")
    return stream.count_in(a, b)


# -- vectorised replica kernels ---------------------------------------------

def _first_passage(law, rng, n: int, level: float, strict: bool = True) -> np.ndarray:
    """First renewal point ``> level`` (``>= level`` if not strict) per replica."""
    total = np.zeros(n)
    after = np.empty(n)
    active = np.arange(n)
    while active.size:
        gaps = law.inverse_tail(1.0 - rng.random((active.size, CHUNK)))
        cs = total[active, None] + np.cumsum(gaps, axis=1)
        crossed = cs > level if strict else cs >= level
        hit = crossed.any(axis=1)
        first = crossed.argmax(axis=1)
        after[active[hit]] = cs[hit, first[hit]]
        total[active[~hit]] = cs[~hit, -1]
        active = active[~hit]
    return after


def _count_upto(law, rng, n: int, t: float) -> np.ndarray:
    """Number of renewal points in ``[0, t]`` per replica."""
    total = np.zeros(n)
    counts = np.zeros(n, dtype=np.int64)
    active = np.arange(n)
    while active.size:
        gaps = law.inverse_tail(1.0 - rng.random((active.size, CHUNK)))
        cs = total[active, None] + np.cumsum(gaps, axis=1)
        counts[active] += (cs <= t).sum(axis=1)
        total[active] = cs[:, -1]
        active = active[cs[:, -1] <= t]
    return counts


def _points_between(law, rng, n: int, a: float, b: float):
    """All renewal points in ``[a, b]`` as parallel arrays ``(replica, time)``."""
    total = np.zeros(n)
    active = np.arange(n)
    reps, times = [], []
    while active.size:
        gaps = law.inverse_tail(1.0 - rng.random((active.size, CHUNK)))
        cs = total[active, None] + np.cumsum(gaps, axis=1)
        inside = (cs >= a) & (cs <= b)
        r, c = np.nonzero(inside)
        reps.append(active[r])
        times.append(cs[r, c])
        total[active] = cs[:, -1]
        active = active[cs[:, -1] <= b]
    return np.concatenate(reps), np.concatenate(times)


def _blocked(replicas: int, seed: int, tag: str, kernel) -> int:
    """Sum ``kernel(rng, size)`` over replica blocks."""
    total = 0
    for index, size in replica_blocks(replicas, BLOCK_SIZE):
        total += int(kernel(derive_rng(seed, tag, index), size))
    return total


# -- estimators ---------------------------------------------------------------

@dataclass(frozen=True)
class GridEstimate:
    """One row of an estimator table."""

    value: float
    estimate: Proportion
    seed: int
    oracle: float | None = None
    extra: dict = field(default_factory=dict)

    @property
    def p(self) -> float:
        return self.estimate.p

    def row(self):
        e = self.estimate
        return (self.value, e.p, e.ci_low, e.ci_high, e.n, self.seed,
                "" if self.oracle is None else self.oracle)


ESTIMATE_COLUMNS = ("value", "estimate", "ci_low", "ci_high", "replicas", "seed", "oracle")


def estimate_gap_probability(law: InterarrivalLaw, t: float, K: float, replicas: int,
                             seed: int = 0) -> GridEstimate:
    """Fraction of independent streams with no renewal point in ``(t, K t)``."""
    if t <= 0 or K <= 1:
        raise ValueError(f"need t > 0 and K > 1 (got t={t}, K={K})")
    if replicas < 1000:
        raise ValueError(f"replicas must be >= 1000 (got {replicas})")

    def kernel(rng, size):
        return np.count_nonzero(_first_passage(law, rng, size, t) >= K * t)

    hits = _blocked(replicas, seed, "gap", kernel)
    oracle = None
    if isinstance(law, Exponential):
        oracle = math.exp(-law.rate * (K - 1) * t)
    return GridEstimate(t, Proportion(hits, replicas), seed, oracle, {"K": K})


def count_cutoff(t: float, eps3: float) -> float:
    """``t^(1-eps3) * log(t)^2``."""
    return t ** (1.0 - eps3) * math.log(t) ** 2


def estimate_count_tail(law: InterarrivalLaw, t: float, eps3: float, replicas: int,
                        seed: int = 0) -> GridEstimate:
    """Frequency of ``|R cap [0, t]| > t^(1-eps3) log^2 t``; the target bound is ``1/t``."""
    if t < 10:
        raise ValueError(f"t must be >= 10 (got {t})")
    if not 0 < eps3 < 1:
        raise ValueError(f"eps3 must lie in (0, 1) (got {eps3})")
    cutoff = count_cutoff(t, eps3)

    def kernel(rng, size):
        return np.count_nonzero(_count_upto(law, rng, size, t) > cutoff)

    hits = _blocked(replicas, seed, "count", kernel)
    return GridEstimate(t, Proportion(hits, replicas), seed, None,
                        {"cutoff": cutoff, "bound": 1.0 / t})


def estimate_hit_probability(law: InterarrivalLaw, a: float, b: float, replicas: int,
                             seed: int = 0, tag: str = "hit") -> Proportion:
    """Monte Carlo ``P(R cap [a, b] != empty)``."""
    if not 0 <= a <= b:
        raise ValueError(f"need 0 <= a <= b (got a={a}, b={b})")

    def kernel(rng, size):
        return np.count_nonzero(_first_passage(law, rng, size, a, strict=False) <= b)

    return Proportion(_blocked(replicas, seed, tag, kernel), replicas)


@dataclass(frozen=True)
class QuietInterval:
    J: tuple
    p_hit_search: float
    validation: Proportion
    bound: float
    candidates: int
    seed: int

    def row(self):
        v = self.validation
        return (self.J[0], self.J[1], self.p_hit_search, v.p, v.ci_low, v.ci_high,
                v.n, self.bound, self.seed)


QUIET_COLUMNS = ("j_start", "j_end", "p_hit_search", "estimate", "ci_low", "ci_high",
                 "replicas", "bound", "seed")


def find_quiet_subinterval(law: InterarrivalLaw, start: float, length: float, eps3: float,
                           replicas: int, seed: int = 0,
                           validation_replicas: int | None = None) -> QuietInterval:
    """Search ``I = [start, start + length]`` for a subinterval the renewal process rarely hits.

    Candidates have length ``length**(eps3/2)`` and are placed at
    half-length steps.  Their hit probabilities are estimated from one
    shared set of streams; the minimiser is then re-estimated on fresh
    streams, and that second estimate is the one reported.
    """
    if length < 10:
        raise ValueError(f"interval length must be >= 10 (got {length})")
    ell = length ** (eps3 / 2.0)
    step = ell / 2.0
    end = start + length
    n_cand = int(math.floor((length - ell) / step + 1e-9)) + 1
    starts = start + step * np.arange(n_cand)

    hit_counts = np.zeros(n_cand, dtype=np.int64)
    for index, size in replica_blocks(replicas, BLOCK_SIZE):
        rng = derive_rng(seed, "quiet-search", index)
        reps, times = _points_between(law, rng, size, start, end)
        hits = np.zeros((size, n_cand), dtype=bool)
        # candidate j covers point p iff starts[j] <= p <= starts[j] + ell
        lo = np.ceil((times - ell - start) / step - 1e-12).astype(np.int64)
        hi = np.floor((times - start) / step + 1e-12).astype(np.int64)
        lo = np.clip(lo, 0, n_cand - 1)
        hi = np.clip(hi, 0, n_cand - 1)
        for off in range(int((hi - lo).max(initial=-1)) + 1):
            j = lo + off
            ok = j <= hi
            hits[reps[ok], j[ok]] = True
        hit_counts += hits.sum(axis=0)

    best = int(np.argmin(hit_counts))
    J = (float(starts[best]), float(starts[best] + ell))
    validation = estimate_hit_probability(law, J[0], J[1], validation_replicas or replicas,
                                          seed, tag="quiet-validate")
    return QuietInterval(J, hit_counts[best] / replicas, validation,
                         length ** (-eps3 / 3.0), n_cand, seed)


# -- (V0)-coupling ------------------------------------------------------------

def choose_coupling_interval(law: InterarrivalLaw, min_mass: float = 0.05) -> tuple:
    """First dyadic interval ``[2^j, 2^(j+1))`` with mass ``>= min_mass``.

    The scan visits ``j = 0, 1, -1, 2, -2, ...``.  The conditional law on the
    interval must not be a single atom.
    """
    if law.is_point_mass:
        raise ValueError("a point mass admits no nondegenerate coupling interval")
    for k in range(129):
        j = (k + 1) // 2 if k % 2 else -(k // 2)
        a, b = 2.0 ** j, 2.0 ** (j + 1)
        if law.interval_mass(a, b, "right-open") < min_mass:
            continue
        if isinstance(law, Empirical):
            pts = np.asarray(law.points)
            inside = pts[(pts >= a) & (pts < b)]
            if np.unique(inside).size < 2:
                continue
        return (a, b)
    raise ValueError("no dyadic interval with enough mass and a nondegenerate conditional law")


@dataclass
class CoupledPair:
    """Two interarrival sequences built by the (V0)-coupling.

    ``T`` and ``T_tilde`` hold the first ``N + extra`` interarrivals.
    ``sum_T`` and ``sum_T_tilde`` are the partial sums at ``N``.
    """

    T: np.ndarray
    T_tilde: np.ndarray
    interval: tuple
    V0: float
    N: int
    sum_T: float
    sum_T_tilde: float

    @property
    def difference(self) -> float:
        return self.sum_T - self.sum_T_tilde


def _coupling_step(law, rng, interval, size):
    """One batch of coupled increments: rules a)-c) applied elementwise."""
    a, b = interval
    T = law.sample(rng, size)
    inside = (T >= a) & (T < b)
    T_tilde = T.copy()
    k = int(np.count_nonzero(inside))
    if k:
        T_tilde[inside] = law.sample_in(rng, a, b, k)
    return T, T_tilde


def build_v0_coupling(law: InterarrivalLaw, V0: float, rng: np.random.Generator,
                      max_steps: int = 10 ** 8, interval: tuple | None = None,
                      extra: int = 0) -> CoupledPair:
    """Run the coupling until ``sum(T_i - T~_i) > V0``, then tie the sequences."""
    if V0 < 1:
        raise ValueError(f"V0 must be >= 1 (got {V0})")
    interval = interval or choose_coupling_interval(law)
    Ts, Tts = [], []
    walk = 0.0
    steps = 0
    batch = 256
    N = None
    while N is None:
        if steps >= max_steps:
            raise CouplingTruncated(f"coupling did not reach V0={V0} within {max_steps} steps")
        size = min(batch, max_steps - steps)
        T, Tt = _coupling_step(law, rng, interval, size)
        path = walk + np.cumsum(T - Tt)
        above = np.nonzero(path > V0)[0]
        if above.size:
            cut = int(above[0]) + 1
            T, Tt = T[:cut], Tt[:cut]
            N = steps + cut
        else:
            walk = float(path[-1])
        Ts.append(T)
        Tts.append(Tt)
        steps += T.size
        batch = min(batch * 2, 1 << 20)
    T = np.concatenate(Ts)
    Tt = np.concatenate(Tts)
    sum_T, sum_Tt = float(T.sum()), float(Tt.sum())
    if extra:
        tied = law.sample(rng, extra)
        T = np.concatenate([T, tied])
        Tt = np.concatenate([Tt, tied])
    return CoupledPair(T, Tt, interval, float(V0), N, sum_T, sum_Tt)


def coupled_sequences(law: InterarrivalLaw, V0: float, rng: np.random.Generator, pairs: int,
                      length: int, interval: tuple | None = None):
    """``pairs`` coupled sequences truncated at a fixed ``length``.

    Returns ``(T, T_tilde, N)`` with ``T`` of shape ``(pairs, length)``;
    ``N`` is ``length + 1`` where the walk has not yet crossed ``V0``.
    Entries after ``N`` are tied.  Every row of ``T`` and of ``T_tilde``
    is an i.i.d. sample of the law.
    """
    interval = interval or choose_coupling_interval(law)
    T, Tt = _coupling_step(law, rng, interval, pairs * length)
    T = T.reshape(pairs, length)
    Tt = Tt.reshape(pairs, length)
    path = np.cumsum(T - Tt, axis=1)
    crossed = path > V0
    N = np.where(crossed.any(axis=1), crossed.argmax(axis=1) + 1, length + 1)
    after = np.arange(1, length + 1)[None, :] > N[:, None]
    Tt = np.where(after, T, Tt)
    return T, Tt, N


@dataclass
class CouplingTable:
    V0: float
    interval: tuple
    t_rows: list     # (t, Proportion, ratio)
    K_emp: float
    n_rows: list     # (n, threshold, Proportion)
    seed: int

    def rows(self):
        for t, est, ratio in self.t_rows:
            yield ("N_tail", t, est.p, est.ci_low, est.ci_high, est.n, self.seed, ratio)
        for n, thr, est in self.n_rows:
            yield ("sum_tail", n, est.p, est.ci_low, est.ci_high, est.n, self.seed, thr)


COUPLING_COLUMNS = ("kind", "value", "estimate", "ci_low", "ci_high", "replicas", "seed", "statistic")


def estimate_coupling_tails(law: InterarrivalLaw, V0: float, t_grid, n_grid, replicas: int,
                            seed: int = 0, max_steps: int = 10 ** 8) -> CouplingTable:
    """Tails of the coupling time ``N_V0`` and of the partial sums at ``N_V0``.

    For each ``t`` the ratio ``P(N_V0 > t) sqrt(t) / V0`` is reported;
    ``K_emp`` is the largest ratio plus its interval half-width.  For each
    ``n`` with ``V0 <= 2^n`` the table gives the frequency with which either
    partial sum at ``N_V0`` reaches ``2^(K_emp n)``.
    """
    if V0 < 1:
        raise ValueError(f"V0 must be >= 1 (got {V0})")
    interval = choose_coupling_interval(law)
    t_grid = sorted(int(t) for t in t_grid)
    t_max = t_grid[-1]
    if max_steps < t_max:
        raise ValueError(f"max_steps={max_steps} is below the largest t={t_max}")

    N_all = np.empty(replicas, dtype=np.int64)
    sums_all = np.empty((replicas, 2))
    open_state = []  # (block index, rng, replica offsets, walk, sums)
    offset = 0
    for index, size in replica_blocks(replicas, BLOCK_SIZE):
        rng = derive_rng(seed, "coupling", index)
        walk = np.zeros(size)
        sums = np.zeros((size, 2))
        N = np.full(size, -1, dtype=np.int64)
        active = np.arange(size)
        steps = 0
        while active.size and steps < t_max:
            width = min(256, t_max - steps)
            T, Tt = _coupling_step(law, rng, interval, active.size * width)
            T = T.reshape(active.size, width)
            Tt = Tt.reshape(active.size, width)
            path = walk[active, None] + np.cumsum(T - Tt, axis=1)
            crossed = path > V0
            done = crossed.any(axis=1)
            first = crossed.argmax(axis=1)
            cols = np.arange(width)[None, :]
            keep = np.where(done[:, None], cols <= first[:, None], True)
            sums[active, 0] += np.where(keep, T, 0.0).sum(axis=1)
            sums[active, 1] += np.where(keep, Tt, 0.0).sum(axis=1)
            N[active[done]] = steps + first[done] + 1
            walk[active] = path[:, -1]
            active = active[~done]
            steps += width
        N_all[offset:offset + size] = N
        sums_all[offset:offset + size] = sums
        open_state.append((offset, rng, active, walk, sums))
        offset += size

    t_rows = []
    K_emp = 0.0
    for t in t_grid:
        est = Proportion(int(np.count_nonzero((N_all < 0) | (N_all > t))), replicas)
        ratio = est.p * math.sqrt(t) / V0
        half = (est.ci_high - est.p) * math.sqrt(t) / V0
        t_rows.append((t, est, ratio))
        K_emp = max(K_emp, ratio + half)

    ns = sorted(int(n) for n in n_grid if 2 ** int(n) >= V0)
    n_rows = []
    if ns:
        top = 2.0 ** (K_emp * ns[-1])
        # finish walks that had not crossed V0 by t_max, until the event is decided
        for offset, rng, active, walk, sums in open_state:
            steps = t_max
            active = active[sums[active].max(axis=1) < top]
            while active.size:
                if steps >= max_steps:
                    raise CouplingTruncated(
                        f"{active.size} coupling walks neither stopped nor exceeded "
                        f"2^{K_emp * ns[-1]:.3g} within {max_steps} steps")
                width = int(min(4096, max_steps - steps))
                T, Tt = _coupling_step(law, rng, interval, active.size * width)
                T = T.reshape(active.size, width)
                Tt = Tt.reshape(active.size, width)
                path = walk[active, None] + np.cumsum(T - Tt, axis=1)
                crossed = path > V0
                done = crossed.any(axis=1)
                first = crossed.argmax(axis=1)
                cols = np.arange(width)[None, :]
                keep = np.where(done[:, None], cols <= first[:, None], True)
                sums[active, 0] += np.where(keep, T, 0.0).sum(axis=1)
                sums[active, 1] += np.where(keep, Tt, 0.0).sum(axis=1)
                walk[active] = path[:, -1]
                steps += width
                active = active[~done & (sums[active].max(axis=1) < top)]
            sums_all[offset:offset + sums.shape[0]] = sums
        biggest = sums_all.max(axis=1)
        for n in ns:
            thr = 2.0 ** (K_emp * n)
            n_rows.append((n, thr, Proportion(int(np.count_nonzero(biggest >= thr)), replicas)))
    return CouplingTable(float(V0), interval, t_rows, K_emp, n_rows, seed)


@dataclass
class FarGapTable:
    gap_exponent: float
    rows_: list   # GridEstimate per s
    decay_exponent: float

    def rows(self):
        for r in self.rows_:
            yield r.row() + (r.extra["length"],)


FAR_GAP_COLUMNS = ESTIMATE_COLUMNS + ("length",)


def estimate_far_gap(law: InterarrivalLaw, s_grid, gap_exponent: float, replicas: int,
                     seed: int = 0) -> FarGapTable:
    """Hit probability of ``[s, s + s^gap_exponent]`` for each ``s`` in the grid.

    ``decay_exponent`` is minus the least-squares slope of ``log p`` against
    ``log s`` over grid points with a positive estimate.
    """
    if not 0 < gap_exponent < 1:
        raise ValueError(f"gap_exponent must lie in (0, 1) (got {gap_exponent})")
    rows = []
    for s in s_grid:
        s = float(s)
        if s < 2:
            raise ValueError(f"grid points must be >= 2 (got {s})")
        length = s ** gap_exponent
        est = estimate_hit_probability(law, s, s + length, replicas, seed, tag="far-gap")
        oracle = -math.expm1(-law.rate * length) if isinstance(law, Exponential) else None
        rows.append(GridEstimate(s, est, seed, oracle, {"length": length}))
    pos = [(math.log(r.value), math.log(r.p)) for r in rows if r.p > 0]
    decay = math.nan
    if len(pos) >= 2:
        x, y = np.array(pos).T
        decay = -float(np.polyfit(x, y, 1)[0])
    return FarGapTable(gap_exponent, rows, decay)
