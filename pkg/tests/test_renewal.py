import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats as sps

from rcplab.distributions import Empirical, Exponential, ParetoType
from rcplab.renewal import (
    CouplingTruncated, RenewalStream, build_v0_coupling, choose_coupling_interval,
    count_cutoff, count_in_interval, coupled_sequences, estimate_coupling_tails,
    estimate_count_tail, estimate_far_gap, estimate_gap_probability, estimate_hit_probability,
    find_quiet_subinterval, generate_stream, hits_interval,
)
from rcplab.streams import derive_rng

PARETO = ParetoType(0.5, 1.0)


def within(est, oracle, k=4.0):
    sigma = math.sqrt(oracle * (1 - oracle) / est.n)
    return abs(est.p - oracle) <= k * sigma + 1e-12


# -- streams ------------------------------------------------------------------------

def test_deterministic_law_gives_integer_points():
    s = generate_stream(Empirical((1.0,)), 10.0, derive_rng(0))
    assert np.array_equal(s.points, np.arange(1.0, 11.0))
    assert count_in_interval(s, 2.0, 5.0) == 4        # closed interval
    assert not hits_interval(s, 2.0, 3.0)             # open interval
    assert hits_interval(s, 1.5, 2.5)


def test_hits_interval_is_open():
    s = generate_stream(Empirical((3.0,)), 10.0, derive_rng(0))     # points 3, 6, 9
    assert not hits_interval(s, 4.0, 5.9)
    assert hits_interval(s, 5.0, 7.0)
    assert hits_interval(s, 2.9, 3.1)
    assert not hits_interval(s, 3.0, 6.0)


def test_exponential_counts_are_poisson():
    counts = [len(generate_stream(Exponential(1.0), 10.0, derive_rng(r, "poisson")))
              for r in range(3000)]
    assert np.mean(counts) == pytest.approx(10.0, abs=4 * math.sqrt(10.0 / 3000))
    assert np.var(counts) == pytest.approx(10.0, rel=0.1)


def test_short_horizon_gives_empty_stream():
    assert len(generate_stream(ParetoType(0.5, 5.0), 4.0, derive_rng(0))) == 0


def test_no_point_at_zero():
    s = generate_stream(Empirical((1.0,)), 3.0, derive_rng(0))
    assert s.points[0] == 1.0
    assert s.last_at_or_before(0.5) == -math.inf


def test_extension_keeps_earlier_points():
    a = RenewalStream(PARETO, derive_rng(5, "x"), 50.0)
    first = a.points.copy()
    a.extend_to(1e6)
    b = RenewalStream(PARETO, derive_rng(5, "x"), 1e6)
    assert np.array_equal(a.points[: first.size], first)
    assert np.array_equal(a.points, b.points)


def test_query_beyond_horizon_rejected():
    s = RenewalStream(PARETO, derive_rng(0), 10.0)
    with pytest.raises(ValueError):
        s.points_in(0.0, 20.0)
    assert s.next_at_or_after(1e9) == math.inf


def test_hits_interval_requires_ordered_interval():
    s = RenewalStream(PARETO, derive_rng(0), 10.0)
    with pytest.raises(ValueError):
        hits_interval(s, 3.0, 2.0)


def test_first_above_conditioning():
    for r in range(50):
        s = RenewalStream(PARETO, derive_rng(r), 10.0, first_above=100.0)
        assert s.points.size == 0
        s.extend_to(1e9)
        assert s.points.size == 0 or s.points[0] > 100.0


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10 ** 6), st.floats(1.0, 1e4), st.floats(0.0, 100.0))
def test_point_counts_additive(seed, a, w):
    s = RenewalStream(Exponential(1.0), derive_rng(seed), a + 2 * w + 1.0)
    b, c = a + w, a + 2 * w
    on_b = int(s.next_at_or_after(b) == b)
    assert count_in_interval(s, a, c) == count_in_interval(s, a, b) + count_in_interval(s, b, c) - on_b


# -- estimators ----------------------------------------------------------------------

@pytest.mark.parametrize("t", [0.5, 1.0, 2.0, 5.0])
def test_gap_probability_exponential_oracle(t):
    est = estimate_gap_probability(Exponential(1.0), t, 2.0, 20000, seed=1)
    assert est.oracle == pytest.approx(math.exp(-t))
    assert within(est.estimate, est.oracle)


def test_gap_probability_is_reproducible():
    a = estimate_gap_probability(PARETO, 10.0, 10.0, 5000, seed=3)
    b = estimate_gap_probability(PARETO, 10.0, 10.0, 5000, seed=3)
    c = estimate_gap_probability(PARETO, 10.0, 10.0, 5000, seed=4)
    assert a.row() == b.row()
    assert a.estimate.successes != c.estimate.successes or a.row() != c.row()


def test_gap_probability_preconditions():
    with pytest.raises(ValueError):
        estimate_gap_probability(PARETO, 10.0, 1.0, 5000)
    with pytest.raises(ValueError):
        estimate_gap_probability(PARETO, 10.0, 2.0, 10)


def test_gap_probability_pareto_stays_positive():
    rows = [estimate_gap_probability(PARETO, t, 10.0, 5000, seed=0) for t in (1, 100, 10 ** 4)]
    assert min(r.estimate.ci_low for r in rows) > 0.1


def test_hit_probability_poisson_oracle():
    est = estimate_hit_probability(Exponential(1.0), 100.0, 100.7, 20000, seed=2)
    assert within(est, 1.0 - math.exp(-0.7))


def test_hit_probability_deterministic_points():
    assert estimate_hit_probability(Empirical((1.0,)), 3.0, 3.0, 1000).p == 1.0
    assert estimate_hit_probability(Empirical((1.0,)), 3.2, 3.8, 1000).p == 0.0


def test_count_cutoff_value():
    assert count_cutoff(100.0, 0.5) == pytest.approx(10.0 * math.log(100.0) ** 2)


def test_count_tail_exponential_exceeds_bound():
    # Poisson counts are about t, far above t^(1/2) log^2 t only for large t;
    # at t = 100 the cutoff is 212, so the event is rare
    est = estimate_count_tail(Exponential(1.0), 100.0, 0.5, 5000)
    assert est.p == 0.0
    # a rate-10 clock has about 1000 points by t = 100
    est = estimate_count_tail(Exponential(10.0), 100.0, 0.5, 5000)
    assert est.p == 1.0


def test_count_tail_pareto_below_bound():
    est = estimate_count_tail(PARETO, 100.0, 0.5, 20000)
    assert est.p <= est.extra["bound"] + 3 * math.sqrt(0.01 * 0.99 / est.estimate.n)


def test_count_tail_precondition():
    with pytest.raises(ValueError):
        estimate_count_tail(PARETO, 5.0, 0.5, 5000)


def test_quiet_interval_small():
    q = find_quiet_subinterval(PARETO, 1000.0, 1000.0, 0.5, 4000, seed=0)
    ell = 1000.0 ** 0.25
    assert q.J[1] - q.J[0] == pytest.approx(ell)
    assert 1000.0 <= q.J[0] and q.J[1] <= 2000.0 + 1e-9
    assert q.bound == pytest.approx(1000.0 ** (-0.5 / 3))
    assert q.validation.ci_high <= q.bound


def test_far_gap_exponential_oracle():
    table = estimate_far_gap(Exponential(1.0), [2.0 ** 10], 0.1, 20000, seed=0)
    (row,) = table.rows_
    assert row.oracle == pytest.approx(1 - math.exp(-(2.0 ** 10) ** 0.1))
    assert within(row.estimate, row.oracle)


# -- (V0)-coupling ---------------------------------------------------------------------

def test_coupling_interval_choices():
    assert choose_coupling_interval(PARETO) == (1.0, 2.0)
    assert choose_coupling_interval(Exponential(1.0)) == (1.0, 2.0)
    with pytest.raises(ValueError):
        choose_coupling_interval(Empirical((2.0, 2.0)))


def test_coupling_stops_above_v0_and_ties():
    pair = build_v0_coupling(PARETO, 10.0, derive_rng(0), extra=20)
    n = pair.N
    assert pair.difference > 10.0
    assert np.cumsum(pair.T[:n] - pair.T_tilde[:n])[:-1].max(initial=-np.inf) <= 10.0
    assert np.array_equal(pair.T[n:], pair.T_tilde[n:])
    differ = pair.T[:n] != pair.T_tilde[:n]
    a, b = pair.interval
    assert np.all((pair.T[:n][differ] >= a) & (pair.T[:n][differ] < b))
    assert np.all((pair.T_tilde[:n][differ] >= a) & (pair.T_tilde[:n][differ] < b))


def test_coupling_truncation_reported():
    with pytest.raises(CouplingTruncated):
        build_v0_coupling(PARETO, 1000.0, derive_rng(0), max_steps=50)


def test_coupled_marginals_match_law():
    T, Tt, N = coupled_sequences(PARETO, 5.0, derive_rng(9), 400, 50)
    cdf = lambda x: 1.0 - PARETO.tail(x)
    assert sps.kstest(Tt.ravel(), cdf).pvalue > 1e-3
    assert sps.kstest(T.ravel(), cdf).pvalue > 1e-3


def test_coupling_increments_have_mean_zero():
    T, Tt, _ = coupled_sequences(PARETO, 1e9, derive_rng(4), 1, 200000)
    d = (T - Tt).ravel()
    d = d[d != 0]
    assert abs(d.mean()) < 4 * d.std() / math.sqrt(d.size)


def test_coupling_table_shape():
    table = estimate_coupling_tails(PARETO, 10.0, [100, 1000], [5, 6], 2000, seed=0)
    assert [r[0] for r in table.t_rows] == [100, 1000]
    p = [r[1].p for r in table.t_rows]
    assert p[0] >= p[1]
    assert table.K_emp > 0
    assert [r[0] for r in table.n_rows] == [5, 6]


def test_coupling_table_rejects_small_max_steps():
    with pytest.raises(ValueError):
        estimate_coupling_tails(PARETO, 10.0, [100], [], 100, max_steps=10)
