"""Monte Carlo laboratory for the renewal contact process on Z."""

from .distributions import (ConditionParams, ConditionReport, Empirical, Exponential,
                            InterarrivalLaw, OscillatingEps, ParetoType, check_conditions)
from .engine import SimConfig, run_batch, run_replica
from .harris import HarrisSystem, build_system, infected_set_at, reachable
from .stats import Proportion

__version__ = "0.1.0"

__all__ = [
    "ConditionParams", "ConditionReport", "Empirical", "Exponential", "InterarrivalLaw",
    "OscillatingEps", "ParetoType", "check_conditions", "SimConfig", "run_batch",
    "run_replica", "HarrisSystem", "build_system", "infected_set_at", "reachable",
    "Proportion", "__version__",
]
