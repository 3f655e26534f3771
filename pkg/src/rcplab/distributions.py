"""Interarrival laws for the recovery clocks and checks of the tail conditions.

A law ``mu`` lives on ``(0, inf)``.  All built-in laws except
:class:`Empirical` are atomless, so open and closed intervals carry the
same mass.  Sampling is by inversion of the tail function: a uniform
``u`` in ``(0, 1]`` is read as a tail mass and mapped to the time ``t``
with ``mu(t, inf) = u``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

__all__ = [
    "InterarrivalLaw",
    "Exponential",
    "ParetoType",
    "OscillatingEps",
    "Empirical",
    "ConditionParams",
    "ConditionPoint",
    "ConditionReport",
    "sample",
    "tail_mass",
    "interval_mass",
    "truncated_first_moment",
    "check_condition_a",
    "check_condition_b",
    "check_condition_c",
    "check_conditions",
    "pareto_condition_params",
]

INTERVAL_KINDS = ("open", "closed", "left-open", "right-open")

# relative slack for the non-strict inequalities of conditions B and C
_LE_RTOL = 1e-12


def _uniform_tail(rng: np.random.Generator, size=None):
    # 1 - U[0,1) lies in (0, 1]
    return 1.0 - rng.random(size)


class InterarrivalLaw:
    """Base class; subclasses provide ``tail`` and ``inverse_tail``."""

    atomless = True

    def tail(self, t):
        """``mu(t, inf)``, vectorised over ``t``."""
        raise NotImplementedError

    def tail_closed(self, t):
        """``mu[t, inf)``; equals :meth:`tail` for atomless laws."""
        return self.tail(t)

    def inverse_tail(self, u):
        """Smallest ``t`` with ``mu(t, inf) <= u``, for ``u`` in ``(0, 1]``."""
        raise NotImplementedError

    def sample(self, rng: np.random.Generator, size=None):
        return self.inverse_tail(_uniform_tail(rng, size))

    def sample_above(self, rng: np.random.Generator, c: float, size=None):
        """Sample from ``mu`` conditioned on ``(c, inf)``."""
        mass = float(self.tail(c))
        if mass <= 0.0:
            raise ValueError(f"law puts no mass above {c}")
        out = self.inverse_tail(_uniform_tail(rng, size) * mass)
        # u * mass == mass maps back to c itself; redraw those (probability ~2**-53)
        bad = np.asarray(out) <= c
        while np.any(bad):
            if np.ndim(out) == 0:
                out = self.inverse_tail(_uniform_tail(rng) * mass)
                bad = np.asarray(out) <= c
            else:
                out[bad] = self.inverse_tail(_uniform_tail(rng, int(bad.sum())) * mass)
                bad = out <= c
        return out

    def sample_in(self, rng: np.random.Generator, a: float, b: float, size: int):
        """Sample ``size`` values from ``mu`` conditioned on ``[a, b)`` by rejection."""
        if self.interval_mass(a, b, "right-open") <= 0.0:
            raise ValueError(f"law puts no mass on [{a}, {b})")
        out = np.empty(size)
        filled = 0
        while filled < size:
            need = size - filled
            draw = self.sample(rng, max(2 * need, 16))
            draw = draw[(draw >= a) & (draw < b)][:need]
            out[filled:filled + draw.size] = draw
            filled += draw.size
        return out

    def interval_mass(self, a: float, b: float, kind: str = "closed") -> float:
        if kind not in INTERVAL_KINDS:
            raise ValueError(f"unknown interval kind {kind!r}")
        if a > b:
            raise ValueError(f"empty interval: a={a} > b={b}")
        if self.atomless:
            return float(self.tail(a) - self.tail(b))
        left = self.tail(a) if kind in ("open", "left-open") else self.tail_closed(a)
        right = self.tail_closed(b) if kind in ("open", "right-open") else self.tail(b)
        return float(max(left - right, 0.0))

    def truncated_first_moment(self, t: float) -> float:
        """``int_{[0, t]} s mu(ds)``."""
        return self.quadrature_first_moment(t)

    def quadrature_first_moment(self, t: float, rtol: float = 1e-6) -> float:
        """The truncated first moment by quadrature on the quantile scale.

        With ``u = exp(-v)`` the integral becomes
        ``int_0^{-log tail(t)} Q(exp(-v)) exp(-v) dv`` where ``Q`` is the
        tail inverse; the integrand is smooth even for infinite-mean laws.
        """
        if t <= 0:
            return 0.0
        mass = float(self.tail(t))
        upper = math.inf if mass <= 0.0 else -math.log(mass)
        if upper == 0.0:
            return 0.0

        def integrand(v):
            u = math.exp(-v)
            if u == 0.0:
                return 0.0
            return float(self.inverse_tail(u)) * u

        value, _ = integrate.quad(integrand, 0.0, upper, epsrel=rtol, epsabs=0.0, limit=500)
        return value

    @property
    def is_point_mass(self) -> bool:
        return False

    def expr(self) -> str:
        """Config-file expression that rebuilds this law."""
        raise NotImplementedError

    def __str__(self) -> str:
        return self.expr()


def _fmt(x: float) -> str:
    return repr(float(x))


@dataclass(frozen=True)
class Exponential(InterarrivalLaw):
    rate: float = 1.0

    def __post_init__(self):
        if not (self.rate > 0 and math.isfinite(self.rate)):
            raise ValueError(f"rate must be a positive finite number (got {self.rate})")

    def tail(self, t):
        t = np.asarray(t, dtype=float)
        return np.exp(-self.rate * np.maximum(t, 0.0))

    def inverse_tail(self, u):
        return -np.log(u) / self.rate

    def truncated_first_moment(self, t: float) -> float:
        if t <= 0:
            return 0.0
        if math.isinf(t):
            return 1.0 / self.rate
        x = self.rate * t
        # 1 - e^{-x}(1 + x), accurate for small x
        return float(-math.expm1(-x) - x * math.exp(-x)) / self.rate

    @property
    def mean(self) -> float:
        return 1.0 / self.rate

    def expr(self) -> str:
        return f"exponential(rate={_fmt(self.rate)})"


@dataclass(frozen=True)
class ParetoType(InterarrivalLaw):
    """Pure power tail ``mu(t, inf) = (t / scale) ** -alpha`` for ``t >= scale``."""

    alpha: float = 0.5
    scale: float = 1.0

    def __post_init__(self):
        if not (self.alpha > 0 and math.isfinite(self.alpha)):
            raise ValueError(f"alpha must be > 0 (got {self.alpha})")
        if not (self.scale > 0 and math.isfinite(self.scale)):
            raise ValueError(f"scale must be > 0 (got {self.scale})")

    def tail(self, t):
        t = np.asarray(t, dtype=float)
        ratio = np.maximum(t, self.scale) / self.scale
        return ratio ** (-self.alpha)

    def inverse_tail(self, u):
        return self.scale * np.asarray(u, dtype=float) ** (-1.0 / self.alpha)

    def truncated_first_moment(self, t: float) -> float:
        if t <= self.scale:
            return 0.0
        a, c = self.alpha, self.scale
        if math.isinf(t):
            return a * c / (a - 1.0) if a > 1 else math.inf
        if a == 1.0:
            return c * math.log(t / c)
        return a * c * ((t / c) ** (1.0 - a) - 1.0) / (1.0 - a)

    def expr(self) -> str:
        return f"pareto(alpha={_fmt(self.alpha)}, scale={_fmt(self.scale)})"


@dataclass(frozen=True)
class OscillatingEps(InterarrivalLaw):
    """Tail ``exp(-int_1^t eps(s)/s ds)`` with ``eps`` alternating ``alpha``, ``beta``.

    ``eps = alpha`` on ``[a_{2n}, a_{2n+1})`` and ``beta`` on
    ``[a_{2n+1}, a_{2n+2})``.  Beyond the last supplied breakpoint the
    sequence continues with the log-ratio of the last two breakpoints.
    On each piece the tail is an exact power, so inversion is closed form.
    """

    alpha: float = 0.3
    beta: float = 0.7
    breakpoints: tuple = (1.0, 10.0, 100.0)
    _bp: np.ndarray = field(init=False, repr=False, compare=False)
    _eps: np.ndarray = field(init=False, repr=False, compare=False)
    _log_tail: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not (0 < self.alpha < self.beta < 1):
            raise ValueError(f"need 0 < alpha < beta < 1 (got alpha={self.alpha}, beta={self.beta})")
        bp = tuple(float(b) for b in self.breakpoints)
        if len(bp) < 2 or bp[0] != 1.0:
            raise ValueError("breakpoints must start at 1 and contain at least two values")
        if any(b1 <= b0 for b0, b1 in zip(bp, bp[1:])):
            raise ValueError("breakpoints must be strictly increasing")
        object.__setattr__(self, "breakpoints", bp)

        log_bp = [math.log(b) for b in bp]
        step = log_bp[-1] - log_bp[-2]
        eps = [self.alpha if k % 2 == 0 else self.beta for k in range(len(bp))]
        log_tail = [0.0]
        for k in range(1, len(bp)):
            log_tail.append(log_tail[-1] - eps[k - 1] * (log_bp[k] - log_bp[k - 1]))
        # extend until the tail underflows or time overflows
        while log_tail[-1] > -800.0 and log_bp[-1] < 690.0:
            k = len(log_bp)
            log_bp.append(log_bp[-1] + step)
            log_tail.append(log_tail[-1] - eps[-1] * step)
            eps.append(self.alpha if k % 2 == 0 else self.beta)
        object.__setattr__(self, "_bp", np.exp(np.array(log_bp)))
        object.__setattr__(self, "_eps", np.array(eps))
        object.__setattr__(self, "_log_tail", np.array(log_tail))

    def eps_at(self, s):
        """The exponent function ``eps(s)`` for ``s >= 1``."""
        k = np.searchsorted(self._bp, np.asarray(s, dtype=float), side="right") - 1
        return self._eps[np.clip(k, 0, None)]

    def tail(self, t):
        t = np.maximum(np.asarray(t, dtype=float), 1.0)
        k = np.searchsorted(self._bp, t, side="right") - 1
        log_tail = self._log_tail[k] - self._eps[k] * (np.log(t) - np.log(self._bp[k]))
        return np.exp(log_tail)

    def inverse_tail(self, u):
        log_u = np.log(np.asarray(u, dtype=float))
        k = np.searchsorted(-self._log_tail, -log_u, side="right") - 1
        return self._bp[k] * np.exp((self._log_tail[k] - log_u) / self._eps[k])

    def truncated_first_moment(self, t: float) -> float:
        if t <= 1.0:
            return 0.0
        total = 0.0
        for k in range(len(self._bp)):
            lo = self._bp[k]
            if lo >= t:
                break
            hi = min(self._bp[k + 1], t) if k + 1 < len(self._bp) else t
            e = self._eps[k]
            # piece density: e * tail(lo) * lo**e * s**(-e-1)
            total += e / (1.0 - e) * math.exp(self._log_tail[k]) * lo * ((hi / lo) ** (1.0 - e) - 1.0)
        return total

    def expr(self) -> str:
        bps = ", ".join(_fmt(b) for b in self.breakpoints)
        return f"oscillating(alpha={_fmt(self.alpha)}, beta={_fmt(self.beta)}, breakpoints=({bps}))"


@dataclass(frozen=True)
class Empirical(InterarrivalLaw):
    """Uniform law on a finite list of positive sample points (atoms allowed)."""

    points: tuple = (1.0,)
    _sorted: np.ndarray = field(init=False, repr=False, compare=False)

    atomless = False

    def __post_init__(self):
        pts = np.sort(np.asarray(self.points, dtype=float))
        if pts.size == 0:
            raise ValueError("empirical law needs at least one point")
        if not np.all(np.isfinite(pts)) or pts[0] <= 0:
            raise ValueError("empirical points must be positive and finite")
        object.__setattr__(self, "points", tuple(float(p) for p in pts))
        object.__setattr__(self, "_sorted", pts)

    def tail(self, t):
        n = self._sorted.size
        return (n - np.searchsorted(self._sorted, np.asarray(t, dtype=float), side="right")) / n

    def tail_closed(self, t):
        n = self._sorted.size
        return (n - np.searchsorted(self._sorted, np.asarray(t, dtype=float), side="left")) / n

    def inverse_tail(self, u):
        n = self._sorted.size
        k = np.ceil(n * (1.0 - np.asarray(u, dtype=float)) - 1e-12).astype(int)
        return self._sorted[np.clip(k, 1, n) - 1]

    def sample(self, rng: np.random.Generator, size=None):
        idx = rng.integers(0, self._sorted.size, size)
        return self._sorted[idx]

    def truncated_first_moment(self, t: float) -> float:
        pts = self._sorted
        return float(pts[pts <= t].sum() / pts.size)

    @property
    def is_point_mass(self) -> bool:
        return bool(self._sorted[0] == self._sorted[-1])

    def expr(self) -> str:
        pts = ", ".join(_fmt(p) for p in self.points)
        return f"empirical(points=({pts},))"


# -- functional interface ---------------------------------------------------

def sample(law: InterarrivalLaw, rng: np.random.Generator, size=None):
    return law.sample(rng, size)


def tail_mass(law: InterarrivalLaw, t: float) -> float:
    if t < 0:
        raise ValueError(f"t must be >= 0 (got {t})")
    return float(law.tail(t))


def interval_mass(law: InterarrivalLaw, a: float, b: float, kind: str = "closed") -> float:
    if a < 0:
        raise ValueError(f"a must be >= 0 (got {a})")
    return law.interval_mass(a, b, kind)


def truncated_first_moment(law: InterarrivalLaw, t: float) -> float:
    if t < 0:
        raise ValueError(f"t must be >= 0 (got {t})")
    return law.truncated_first_moment(t)


# -- tail conditions ----------------------------------------------------------

@dataclass(frozen=True)
class ConditionParams:
    M1: float = 4.0
    eps1: float = 0.1
    t0: float = 1.0
    M2: float = 4.0
    eps2: float = 0.1
    r2: int = 0
    M3: float = 1.0
    eps3: float = 0.25

    def __post_init__(self):
        for name in ("M1", "M2"):
            if not getattr(self, name) > 1:
                raise ValueError(f"{name} must be > 1 (got {getattr(self, name)})")
        for name in ("eps1", "eps2", "eps3"):
            if not 0 < getattr(self, name) < 1:
                raise ValueError(f"{name} must lie in (0, 1) (got {getattr(self, name)})")
        if self.t0 < 0 or self.M3 < 0:
            raise ValueError("thresholds t0 and M3 must be >= 0")


def pareto_condition_params(alpha: float, M: float = 4.0) -> ConditionParams:
    """Parameters under which ``ParetoType(alpha)`` with ``alpha < 1`` satisfies A, B and C."""
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    return ConditionParams(
        M1=M, eps1=(1 - alpha) * (1 - M ** (alpha - 1)) / 2, t0=1.0,
        M2=M, eps2=M ** (-alpha) / 2, r2=0,
        M3=1.0, eps3=min(alpha, 1 - alpha),
    )


@dataclass(frozen=True)
class ConditionPoint:
    point: float
    lhs: float
    rhs: float
    margin: float
    passed: bool
    in_scope: bool
    label: str = ""


@dataclass
class ConditionReport:
    """Literal evaluation of one tail condition on a finite grid.

    ``verdict`` only says the inequality holds at the grid points at or
    beyond the threshold; it is not a proof for all large ``t``.
    """

    condition: str
    params: dict
    threshold: float
    points: list

    @property
    def verdict(self) -> bool:
        scoped = [p for p in self.points if p.in_scope]
        return bool(scoped) and all(p.passed for p in scoped)

    @property
    def min_margin(self) -> float:
        return min((p.margin for p in self.points if p.in_scope), default=math.nan)

    def rows(self):
        for p in self.points:
            tag = f"{self.condition}.{p.label}" if p.label else self.condition
            yield (tag, p.point, p.lhs, p.rhs, p.margin, int(p.passed))

    def summary(self) -> str:
        state = "holds on grid" if self.verdict else "fails on grid"
        return f"condition {self.condition}: {state} (min margin {self.min_margin:.3g})"


def _le(lhs: float, rhs: float) -> bool:
    return lhs <= rhs + _LE_RTOL * max(abs(lhs), abs(rhs))


def check_condition_a(law, M1: float, eps1: float, t0: float, grid) -> ConditionReport:
    """``eps1 * int_{[0,t]} s mu(ds) < t * mu(t, M1 t)`` for grid points ``t > t0``."""
    pts = []
    for t in grid:
        t = float(t)
        lhs = eps1 * law.truncated_first_moment(t)
        rhs = t * law.interval_mass(t, M1 * t, "open")
        pts.append(ConditionPoint(t, lhs, rhs, rhs - lhs, lhs < rhs, t > t0))
    return ConditionReport("A", {"M1": M1, "eps1": eps1, "t0": t0}, t0, pts)


def check_condition_b(law, M2: float, eps2: float, r2: float, ranks) -> ConditionReport:
    """``eps2 * mu[M2^r, M2^(r+1)] <= mu[M2^(r+1), M2^(r+2)]`` for ranks ``r >= r2``."""
    pts = []
    for r in ranks:
        lhs = eps2 * law.interval_mass(M2 ** r, M2 ** (r + 1), "closed")
        rhs = law.interval_mass(M2 ** (r + 1), M2 ** (r + 2), "closed")
        pts.append(ConditionPoint(float(r), lhs, rhs, rhs - lhs, _le(lhs, rhs), r >= r2))
    return ConditionReport("B", {"M2": M2, "eps2": eps2, "r2": r2}, r2, pts)


def check_condition_c(law, M3: float, eps3: float, grid) -> ConditionReport:
    """``t^-(1-eps3) <= mu(t, inf) <= t^-eps3`` for grid points ``t >= M3``."""
    pts = []
    for t in grid:
        t = float(t)
        tail = float(law.tail(t))
        lower = t ** (-(1.0 - eps3))
        upper = t ** (-eps3)
        scoped = t >= M3
        pts.append(ConditionPoint(t, lower, tail, tail - lower, _le(lower, tail), scoped, "lower"))
        pts.append(ConditionPoint(t, tail, upper, upper - tail, _le(tail, upper), scoped, "upper"))
    return ConditionReport("C", {"M3": M3, "eps3": eps3}, M3, pts)


def check_conditions(law, params: ConditionParams, grid, ranks=None) -> dict:
    """Evaluate conditions A, B and C; returns ``{"A": report, "B": ..., "C": ...}``.

    ``grid`` holds times for A and C.  Ranks for B default to the integers
    from ``r2`` up to the largest ``r`` with ``M2**(r+2) <= max(grid)``.
    """
    grid = [float(t) for t in grid]
    if not grid:
        raise ValueError("grid must be nonempty")
    if ranks is None:
        top = int(math.floor(math.log(max(grid)) / math.log(params.M2))) - 2
        ranks = list(range(int(params.r2), max(top, int(params.r2)) + 1))
    return {
        "A": check_condition_a(law, params.M1, params.eps1, params.t0, grid),
        "B": check_condition_b(law, params.M2, params.eps2, params.r2, ranks),
        "C": check_condition_c(law, params.M3, params.eps3, grid),
    }
