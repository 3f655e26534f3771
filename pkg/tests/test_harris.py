import io
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import load_events, random_system, validate_certificate
from rcplab.distributions import Exponential, ParetoType
from rcplab.harris import (
    HarrisSystem, OracleLimitError, arrows_in, brute_force_reachable, build_system, deaths_in,
    dump_events, infected_set_at, reachable,
)

PARETO = ParetoType(0.5, 1.0)


def fixed(window, horizon, deaths=None, arrows=None, one_sided=False):
    return HarrisSystem.from_events(window, horizon, deaths, arrows, one_sided)


# -- hand-built systems ---------------------------------------------------------------

def test_single_site_dies_at_first_renewal():
    sys_ = fixed((0, 0), 10.0, deaths={0: [5.0]})
    assert infected_set_at(sys_, {0}, 4.9) == {0}
    assert infected_set_at(sys_, {0}, 5.1) == set()
    assert infected_set_at(sys_, {0}, 5.0) == set()       # closed holding interval


def test_time_zero_returns_initial_set():
    sys_ = build_system(PARETO, 1.0, (-3, 3), 10.0, seed=1)
    assert infected_set_at(sys_, {-1, 2}, 0.0) == {-1, 2}


def test_single_arrow_path():
    sys_ = fixed((0, 1), 5.0, arrows={(0, 1): [2.0]})
    cert = reachable(sys_, (0, 0.0), (1, 3.0))
    assert cert is not None
    assert cert.steps == ((0, 0.0), (1, 2.0))
    assert brute_force_reachable(sys_, (0, 0.0), (1, 3.0))
    assert validate_certificate(sys_, cert, (0, 0.0), (1, 3.0))


def test_trivial_certificate():
    sys_ = fixed((0, 0), 5.0)
    cert = reachable(sys_, (0, 1.0), (0, 4.0))
    assert cert.steps == ((0, 1.0),)


def test_death_between_blocks_path():
    sys_ = fixed((0, 0), 5.0, deaths={0: [2.0]})
    assert reachable(sys_, (0, 1.0), (0, 3.0)) is None
    assert not brute_force_reachable(sys_, (0, 1.0), (0, 3.0))


def test_no_arrows_no_path():
    sys_ = fixed((0, 1), 5.0)
    assert reachable(sys_, (0, 0.0), (1, 5.0)) is None
    assert not brute_force_reachable(sys_, (0, 0.0), (1, 5.0))


def test_death_at_arrival_time_blocks_jump():
    sys_ = fixed((0, 1), 5.0, deaths={1: [2.0]}, arrows={(0, 1): [2.0]})
    assert reachable(sys_, (0, 0.0), (1, 3.0)) is None
    assert not brute_force_reachable(sys_, (0, 0.0), (1, 3.0))


def test_death_at_departure_time_blocks_jump():
    sys_ = fixed((0, 1), 5.0, deaths={0: [2.0]}, arrows={(0, 1): [2.0]})
    assert reachable(sys_, (0, 0.0), (1, 3.0)) is None
    assert not brute_force_reachable(sys_, (0, 0.0), (1, 3.0))


def test_death_at_source_or_target_time_blocks():
    sys_ = fixed((0, 0), 5.0, deaths={0: [1.0, 4.0]})
    assert reachable(sys_, (0, 1.0), (0, 2.0)) is None
    assert reachable(sys_, (0, 2.0), (0, 4.0)) is None
    assert reachable(sys_, (0, 2.0), (0, 3.9)) is not None


def test_jump_times_strictly_increase():
    # arrows 0->1 and 1->2 at the same instant cannot chain
    sys_ = fixed((0, 2), 5.0, arrows={(0, 1): [2.0], (1, 2): [2.0]})
    assert reachable(sys_, (0, 0.0), (2, 4.0)) is None
    assert not brute_force_reachable(sys_, (0, 0.0), (2, 4.0))


def test_arrow_at_source_time_is_not_used():
    sys_ = fixed((0, 1), 5.0, arrows={(0, 1): [1.0]})
    assert reachable(sys_, (0, 1.0), (1, 3.0)) is None
    assert not brute_force_reachable(sys_, (0, 1.0), (1, 3.0))


def test_two_step_path_certificate():
    sys_ = fixed((0, 2), 10.0, deaths={0: [4.0], 1: [7.0]},
                 arrows={(0, 1): [3.0], (1, 2): [6.0]})
    cert = reachable(sys_, (0, 0.0), (2, 9.0))
    assert cert.steps == ((0, 0.0), (1, 3.0), (2, 6.0))
    assert validate_certificate(sys_, cert, (0, 0.0), (2, 9.0))


# -- geometry and queries -------------------------------------------------------------

def test_one_sided_single_site_has_no_edges():
    sys_ = build_system(PARETO, 1.0, (0, 0), 10.0, one_sided=True)
    assert list(sys_.edges()) == []


def test_one_sided_rejects_left_arrows():
    sys_ = build_system(PARETO, 1.0, (0, 3), 10.0, one_sided=True)
    with pytest.raises(ValueError):
        arrows_in(sys_, 2, 1, 0.0, 1.0)
    assert arrows_in(sys_, 1, 2, 0.0, 1.0).ndim == 1


def test_non_neighbours_rejected():
    sys_ = build_system(PARETO, 1.0, (0, 3), 10.0)
    with pytest.raises(ValueError):
        arrows_in(sys_, 0, 2, 0.0, 1.0)
    with pytest.raises(ValueError):
        deaths_in(sys_, 7, 0.0, 1.0)
    with pytest.raises(ValueError):
        deaths_in(sys_, 0, 0.0, 11.0)


def test_invalid_parameters():
    with pytest.raises(ValueError):
        build_system(PARETO, -1.0, (0, 3), 10.0)
    with pytest.raises(ValueError):
        build_system(PARETO, 1.0, (3, 0), 10.0)
    with pytest.raises(ValueError):
        build_system(PARETO, 1.0, (0, 3), 0.0)


def test_lazy_materialisation():
    sys_ = build_system(PARETO, 1.0, (-10 ** 9, 10 ** 9), 100.0)
    assert sys_.materialized == (0, 0)
    deaths_in(sys_, 123456789, 0.0, 50.0)
    arrows_in(sys_, 5, 6, 0.0, 50.0)
    assert sys_.materialized == (1, 1)


def test_query_order_independent():
    a = build_system(PARETO, 1.5, (-5, 5), 100.0, seed=3)
    b = build_system(PARETO, 1.5, (-5, 5), 100.0, seed=3)
    d_a = [deaths_in(a, x, 0.0, 100.0) for x in range(-5, 6)]
    d_b = [deaths_in(b, x, 0.0, 100.0) for x in reversed(range(-5, 6))][::-1]
    assert all(np.array_equal(p, q) for p, q in zip(d_a, d_b))
    assert np.array_equal(arrows_in(a, 0, 1, 0.0, 100.0), arrows_in(b, 0, 1, 0.0, 100.0))
    # late query on a short interval first, then the whole range
    assert np.array_equal(arrows_in(b, 2, 1, 60.0, 70.0),
                          arrows_in(a, 2, 1, 0.0, 100.0)[(arrows_in(a, 2, 1, 0.0, 100.0) >= 60)
                                                        & (arrows_in(a, 2, 1, 0.0, 100.0) <= 70)])


def test_replicas_and_directions_differ():
    a = build_system(Exponential(1.0), 1.0, (0, 1), 50.0, seed=0)
    b = build_system(Exponential(1.0), 1.0, (0, 1), 50.0, seed=0, replica=1)
    assert not np.array_equal(deaths_in(a, 0, 0.0, 50.0), deaths_in(b, 0, 0.0, 50.0))
    assert not np.array_equal(arrows_in(a, 0, 1, 0.0, 50.0), arrows_in(a, 1, 0, 0.0, 50.0))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10 ** 6), st.floats(0.0, 100.0))
def test_interval_queries_partition(seed, cut):
    sys_ = build_system(PARETO, 2.0, (0, 1), 100.0, seed=seed)
    for get in (lambda a, b: deaths_in(sys_, 0, a, b), lambda a, b: arrows_in(sys_, 0, 1, a, b)):
        whole = get(0.0, 100.0)
        left, right = get(0.0, cut), get(cut, 100.0)
        merged = np.union1d(left, right)
        assert np.array_equal(merged, whole)


def test_arrow_rate():
    lam, T = 1.5, 200.0
    counts = [arrows_in(build_system(PARETO, lam, (0, 1), T, replica=r), 0, 1, 0.0, T).size
              for r in range(300)]
    mean = np.mean(counts)
    assert abs(mean - lam * T) < 4 * math.sqrt(lam * T / 300)


def test_thinning_gives_nested_arrows():
    lo = build_system(PARETO, 0.3, (0, 3), 200.0, seed=4, lam_ref=2.0)
    hi = build_system(PARETO, 2.0, (0, 3), 200.0, seed=4, lam_ref=2.0)
    for x, y in lo.edges():
        small = arrows_in(lo, x, y, 0.0, 200.0)
        big = arrows_in(hi, x, y, 0.0, 200.0)
        assert np.isin(small, big).all()
        assert big.size > small.size


def test_dump_events_csv():
    sys_ = fixed((0, 1), 5.0, deaths={0: [1.0]}, arrows={(0, 1): [2.5]})
    buf = io.StringIO()
    dump_events(sys_, buf)
    assert buf.getvalue().splitlines() == ["kind,site,target,time", "death,0,,1.0", "arrow,0,1,2.5"]
    deaths, arrows = load_events(sys_)
    assert deaths == {0: [1.0]} and arrows == {(0, 1): [2.5]}


def test_oracle_limits():
    with pytest.raises(OracleLimitError):
        brute_force_reachable(build_system(PARETO, 1.0, (0, 20), 5.0), (0, 0.0), (1, 1.0))
    with pytest.raises(OracleLimitError):
        brute_force_reachable(build_system(PARETO, 20.0, (0, 5), 10.0), (0, 0.0), (1, 10.0),
                              max_events=16)


# -- random systems ---------------------------------------------------------------------

@pytest.mark.parametrize("case", range(150))
def test_reachable_matches_brute_force(case):
    system, source, target = random_system(case, tag="unit")
    cert = reachable(system, source, target)
    assert (cert is not None) == brute_force_reachable(system, source, target)
    if cert is not None:
        assert validate_certificate(system, cert, source, target)


@pytest.mark.parametrize("case", range(60))
def test_additivity_and_monotonicity_in_initial_set(case):
    system, _, (_, t) = random_system(case, tag="additive")
    lo, hi = system.window
    rng = np.random.default_rng(case)
    A = {int(x) for x in rng.integers(lo, hi + 1, 3)}
    B = A | {int(rng.integers(lo, hi + 1))}
    union = set().union(*(infected_set_at(system, {x}, t) for x in A))
    xi_a = infected_set_at(system, A, t)
    assert xi_a == union
    assert xi_a <= infected_set_at(system, B, t)


@pytest.mark.parametrize("case", range(40))
def test_infected_set_equals_path_definition(case):
    system, _, (_, t) = random_system(case, tag="pathdef")
    sites = range(system.window[0], system.window[1] + 1)
    for x in sites:
        by_paths = {y for y in sites if reachable(system, (x, 0.0), (y, t)) is not None}
        assert infected_set_at(system, {x}, t) == by_paths


def test_one_sided_never_moves_left():
    for r in range(30):
        sys_ = build_system(PARETO, 3.0, (0, 12), 50.0, one_sided=True, replica=r)
        assert min(infected_set_at(sys_, {4, 7}, 50.0), default=4) >= 4


def test_monotone_in_lambda_pathwise():
    for r in range(30):
        sets = [infected_set_at(build_system(PARETO, lam, (-6, 6), 30.0, replica=r, lam_ref=2.0),
                                {0}, 30.0) for lam in (0.25, 0.5, 1.0, 2.0)]
        assert all(a <= b for a, b in zip(sets, sets[1:]))
