"""Multiscale level scheme, bad events, survival curves and lambda scans.

The level scheme works on the one-sided field over the naturals: level
``L_i`` is the first site beyond ``L_{i-1}`` with no death mark in
``[t0 2^i, t0 2^(i+2)]``.  Infection tunnels from level to level through
short windows just before ``t0 2^i``; the bad events ``B_i`` are the ways
this can fail.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.stats import spearmanr

from .distributions import InterarrivalLaw
from .engine import SimConfig, run_batch, simulate
from .harris import HarrisSystem
from .stats import Proportion

__all__ = [
    "LevelTrace",
    "WindowExhausted",
    "BadEventTable",
    "compute_levels",
    "detect_bad_events",
    "slot_count",
    "slot_bounds",
    "level_system",
    "estimate_bad_event_rates",
    "survival_curve",
    "lambda_scan",
    "LambdaUpper",
    "estimate_lambda_c_upper",
    "survives_through_levels",
]

LOGS = {"e": math.log, "2": math.log2}


class WindowExhausted(RuntimeError):
    """The site window ended before a level was found."""

    def __init__(self, message: str, trace: "LevelTrace"):
        super().__init__(message)
        self.trace = trace


@dataclass
class LevelTrace:
    t0: float
    i_max: int
    levels: list                       # L_0 = 0, L_1, ..., L_{i_max}
    gamma: float | None = None
    flags: list = field(default_factory=list)   # per i: {"I": bool, "II": bool, "III": bool}
    log_base: str = "e"

    def bad(self, i: int) -> bool:
        f = self.flags[i - 1]
        return f["I"] or f["II"] or f["III"]

    @property
    def any_bad(self) -> bool:
        return any(self.bad(i) for i in range(1, len(self.flags) + 1))


def level_system(law: InterarrivalLaw, lam: float, t0: float, i_max: int, seed: int = 0,
                 replica: int = 0, sites: int = 10 ** 6,
                 origin_first_above: float | None = None) -> HarrisSystem:
    """One-sided field on ``[0, sites]`` with horizon ``t0 2^(i_max+2)``."""
    return HarrisSystem(law, lam, (0, sites), t0 * 2.0 ** (i_max + 2), one_sided=True,
                        seed=seed, replica=replica, origin_first_above=origin_first_above)


def compute_levels(system: HarrisSystem, t0: float, i_max: int) -> LevelTrace:
    if t0 <= 0 or i_max < 1:
        raise ValueError(f"need t0 > 0 and i_max >= 1 (got t0={t0}, i_max={i_max})")
    if system.horizon < t0 * 2.0 ** (i_max + 2):
        raise ValueError(f"horizon {system.horizon} < t0 2^(i_max+2) = {t0 * 2.0 ** (i_max + 2)}")
    start = system.window[0]
    last = system.window[1]
    trace = LevelTrace(t0, i_max, [start])
    for i in range(1, i_max + 1):
        a, b = t0 * 2.0 ** i, t0 * 2.0 ** (i + 2)
        k = trace.levels[-1] + 1
        while k <= last and system.deaths_in(k, a, b).size:
            k += 1
        if k > last:
            raise WindowExhausted(f"no level {i} inside window {system.window}", trace)
        trace.levels.append(k)
    return trace


def slot_count(i: int, t0: float, log_base: str = "e") -> int:
    """Number of slots ``ceil(i log t0)`` (also the allowed level spacing)."""
    return max(1, math.ceil(i * LOGS[log_base](t0) - 1e-12))


def slot_bounds(i: int, t0: float, gamma: float, j: int, log_base: str = "e") -> tuple:
    """Open slot ``j`` of the window ``[t0 2^i - (t0 2^i)^gamma, t0 2^i]``."""
    ti = t0 * 2.0 ** i
    ell = ti ** gamma
    w = ell / slot_count(i, t0, log_base)
    return (ti - ell + j * w, ti - ell + (j + 1) * w)


def detect_bad_events(trace: LevelTrace, system: HarrisSystem, gamma: float,
                      log_base: str = "e") -> LevelTrace:
    """Fill the (I), (II), (III) indicators for every level of ``trace``.

    (I)   ``L_i - L_{i-1}`` exceeds the slot count ``m = ceil(i log t0)``.
    (II)  some ``k`` in ``(L_{i-1}, L_i]`` has a death in ``[t0 2^i - (t0 2^i)^gamma, t0 2^i]``.
    (III) some ``k`` in ``[L_{i-1}, L_i)`` has no arrow ``k -> k+1`` in its slot
          ``k - L_{i-1}`` of that window.
    """
    if not 0 < gamma < 1:
        raise ValueError(f"gamma must lie in (0, 1) (got {gamma})")
    if log_base not in LOGS:
        raise ValueError(f"log_base must be one of {sorted(LOGS)}")
    t0 = trace.t0
    flags = []
    for i in range(1, len(trace.levels)):
        prev, cur = trace.levels[i - 1], trace.levels[i]
        ti = t0 * 2.0 ** i
        lo = ti - ti ** gamma
        m = slot_count(i, t0, log_base)
        ev1 = cur - prev > m
        ev2 = any(system.deaths_in(k, max(lo, 0.0), ti).size for k in range(prev + 1, cur + 1))
        ev3 = False
        for k in range(prev, cur):
            a, b = slot_bounds(i, t0, gamma, k - prev, log_base)
            arr = system.arrows_in(k, k + 1, max(a, 0.0), min(b, system.horizon))
            if not np.any((arr > a) & (arr < b)):
                ev3 = True
                break
        flags.append({"I": ev1, "II": ev2, "III": ev3})
    trace.gamma = gamma
    trace.flags = flags
    trace.log_base = log_base
    return trace


@dataclass
class BadEventTable:
    law: str
    lam: float
    t0: float
    gamma: float
    i_max: int
    replicas: int
    seed: int
    bad: list        # Proportion per i
    sub: list        # {"I": count, "II": count, "III": count} per i
    exhausted: int

    @property
    def rates(self) -> list:
        return [p.p for p in self.bad]

    @property
    def total(self) -> float:
        return float(sum(self.rates))

    @property
    def spearman(self) -> float:
        rates = self.rates
        if len(set(rates)) < 2:
            return math.nan
        return float(spearmanr(np.arange(1, len(rates) + 1), rates)[0])

    def rows(self):
        for i, (p, s) in enumerate(zip(self.bad, self.sub), start=1):
            n = p.n
            yield (i, p.p, p.ci_low, p.ci_high, s["I"] / n, s["II"] / n, s["III"] / n, n, self.seed)


BAD_EVENT_COLUMNS = ("i", "p_bad", "ci_low", "ci_high", "p_I", "p_II", "p_III", "replicas", "seed")


def estimate_bad_event_rates(law: InterarrivalLaw, lam: float, t0: float, gamma: float,
                             i_max: int, replicas: int, seed: int = 0, log_base: str = "e",
                             sites: int = 10 ** 6) -> BadEventTable:
    """Monte Carlo frequencies of ``B_i`` for ``i = 1..i_max``."""
    counts = np.zeros(i_max, dtype=np.int64)
    sub = [{"I": 0, "II": 0, "III": 0} for _ in range(i_max)]
    exhausted = 0
    for r in range(replicas):
        system = level_system(law, lam, t0, i_max, seed, r, sites)
        try:
            trace = compute_levels(system, t0, i_max)
        except WindowExhausted:
            exhausted += 1
            counts += 1
            continue
        detect_bad_events(trace, system, gamma, log_base)
        for i, f in enumerate(trace.flags):
            if f["I"] or f["II"] or f["III"]:
                counts[i] += 1
            for key in ("I", "II", "III"):
                sub[i][key] += int(f[key])
    bad = [Proportion(int(c), replicas) for c in counts]
    return BadEventTable(law.expr(), lam, t0, gamma, i_max, replicas, seed, bad, sub, exhausted)


# -- survival experiments ---------------------------------------------------------

@dataclass
class CurveRow:
    value: float
    survival: Proportion
    boundary_frac: float

    def row(self, seed: int):
        s = self.survival
        return (self.value, s.p, s.ci_low, s.ci_high, s.n, seed, self.boundary_frac)


CURVE_COLUMNS = ("value", "survival_frac", "ci_low", "ci_high", "replicas", "seed", "boundary_frac")


@dataclass
class SurvivalCurve:
    config: SimConfig
    rows_: list
    indicators: np.ndarray     # replicas x horizons, alive at each horizon

    def rows(self):
        for r in self.rows_:
            yield r.row(self.config.seed)


def survival_curve(config: SimConfig, horizons, workers: int = 1,
                   first_above: float | None = None) -> SurvivalCurve:
    """Survival fraction at each horizon, read off one run per replica.

    Each replica is simulated once up to ``max(horizons)`` and observed at
    every horizon, so each replica's indicator is nonincreasing in ``T``.
    """
    horizons = [float(h) for h in horizons]
    if any(b <= a for a, b in zip(horizons, horizons[1:])):
        raise ValueError("horizons must be strictly increasing")
    cfg = replace(config, T=horizons[-1], snapshots=tuple(horizons))
    batch = run_batch(cfg, workers, keep_outcomes=True, first_above=first_above)
    alive = np.array([[count > 0 for _, count, _ in o.snapshots] for o in batch.outcomes],
                     dtype=bool).reshape(len(batch.outcomes), len(horizons))
    hit = np.array([[ext >= config.L for _, _, ext in o.snapshots] for o in batch.outcomes],
                   dtype=bool).reshape(len(batch.outcomes), len(horizons))
    rows = [CurveRow(h, Proportion(int(alive[:, j].sum()), cfg.replicas), float(hit[:, j].mean()))
            for j, h in enumerate(horizons)]
    return SurvivalCurve(cfg, rows, alive)


@dataclass
class LambdaScan:
    config: SimConfig
    rows_: list
    indicators: np.ndarray     # replicas x lambdas, survived

    def rows(self):
        for r in self.rows_:
            yield r.row(self.config.seed)


def lambda_scan(config: SimConfig, lambdas, workers: int = 1) -> LambdaScan:
    """Survival fraction per infection rate on thinning-coupled arrow fields."""
    lambdas = [float(x) for x in lambdas]
    if any(x < 0 for x in lambdas) or any(b <= a for a, b in zip(lambdas, lambdas[1:])):
        raise ValueError("lambdas must be nonnegative and strictly increasing")
    lam_ref = max(lambdas[-1], config.lam_ref or 0.0)
    rows, cols = [], []
    for lam in lambdas:
        batch = run_batch(replace(config, lam=lam, lam_ref=lam_ref), workers, keep_outcomes=True)
        rows.append(CurveRow(lam, batch.survival, batch.boundary_frac))
        cols.append([o.survived for o in batch.outcomes])
    return LambdaScan(replace(config, lam_ref=lam_ref), rows, np.array(cols, dtype=bool).T)


@dataclass
class LambdaUpper:
    lam_hat: float
    bracket: tuple
    steps: int
    threshold: float
    config: SimConfig
    evaluations: list     # (lam, survival fraction)

    def row(self):
        c = self.config
        return (self.lam_hat, self.bracket[0], self.bracket[1], self.steps, self.threshold,
                c.T, c.L, c.replicas, c.seed)


LAMBDA_UPPER_COLUMNS = ("lambda_hat", "bracket_low", "bracket_high", "steps", "threshold", "T",
                        "L", "replicas", "seed")


def estimate_lambda_c_upper(config: SimConfig, threshold: float, bracket: tuple, tol: float,
                            workers: int = 1) -> LambdaUpper:
    """Bisection for the smallest rate whose survival fraction reaches ``threshold``.

    The result depends on ``(T, L, threshold, replicas)``; it is a
    finite-size diagnostic, not the critical value itself.
    """
    if not 0 < threshold < 1:
        raise ValueError(f"threshold must lie in (0, 1) (got {threshold})")
    lo, hi = float(bracket[0]), float(bracket[1])
    if not 0 <= lo < hi or tol <= 0:
        raise ValueError("need 0 <= low < high and tol > 0")
    lam_ref = max(hi, config.lam_ref or 0.0)
    evaluations = []

    def frac(lam):
        p = run_batch(replace(config, lam=lam, lam_ref=lam_ref), workers).survival.p
        evaluations.append((lam, p))
        return p

    if frac(lo) >= threshold or frac(hi) < threshold:
        raise ValueError(f"bracket [{lo}, {hi}] does not straddle threshold {threshold}")
    steps = 0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if frac(mid) >= threshold:
            hi = mid
        else:
            lo = mid
        steps += 1
    return LambdaUpper(hi, (lo, hi), steps, threshold, replace(config, lam_ref=lam_ref),
                       evaluations)


def survives_through_levels(law: InterarrivalLaw, lam: float, t0: float, gamma: float,
                            i_max: int, seed: int, replica: int, sites: int = 10 ** 4,
                            log_base: str = "e"):
    """Check the tunnelling mechanism on one conditioned realization.

    Returns ``(good, alive)``: ``good`` is the event that the origin's first
    interarrival exceeds ``4 t0`` and no ``B_i`` occurs; ``alive`` says
    whether the process from ``{0}`` is alive at ``t0 2^i_max`` on the
    same realization.
    """
    system = level_system(law, lam, t0, i_max, seed, replica, sites,
                          origin_first_above=4 * t0)
    trace = detect_bad_events(compute_levels(system, t0, i_max), system, gamma, log_base)
    good = system.death_stream(0).next_at_or_after(0.0) > 4 * t0 and not trace.any_bad
    out = simulate(system, (0,), t0 * 2.0 ** i_max)
    return good, out.survived, trace
