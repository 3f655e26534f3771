"""Binomial proportion estimates and confidence intervals."""

import math
from dataclasses import dataclass

from scipy.stats import norm

__all__ = ["Proportion", "wilson_interval", "z_value", "binomial_sigma"]


def z_value(level: float) -> float:
    """Two-sided normal quantile for confidence ``level`` (0.99 -> 2.5758)."""
    return float(norm.ppf(0.5 + level / 2.0))


def wilson_interval(successes: int, n: int, level: float = 0.99) -> tuple[float, float]:
    if n <= 0:
        return 0.0, 1.0
    z = z_value(level)
    p = successes / n
    denom = 1.0 + z * z / n
    centre = (p + z * z / (2 * n)) / denom
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    return max(0.0, centre - half), min(1.0, centre + half)


def binomial_sigma(p: float, n: int) -> float:
    return math.sqrt(max(p * (1 - p), 0.0) / n)


@dataclass(frozen=True)
class Proportion:
    """A Monte Carlo frequency with its Wilson score interval."""

    successes: int
    n: int
    level: float = 0.99

    @property
    def p(self) -> float:
        return self.successes / self.n if self.n else float("nan")

    @property
    def ci(self) -> tuple[float, float]:
        return wilson_interval(self.successes, self.n, self.level)

    @property
    def ci_low(self) -> float:
        return self.ci[0]

    @property
    def ci_high(self) -> float:
        return self.ci[1]

    def sigma(self) -> float:
        return binomial_sigma(self.p, self.n)
