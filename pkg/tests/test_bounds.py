import itertools
import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from graphdna.bounds import (
    OverlapExperiment,
    chernoff_lower,
    chernoff_upper,
    empirical_q,
    empirical_q_shared,
    expected_q,
    gamma_bounds,
    grid_points,
    na_sanity,
    run_grid,
)

mpmath.mp.dps = 50


def mp_gammas(c, k, inter, symdiff):
    c, k = mpmath.mpf(c), mpmath.mpf(k)
    g0 = c * (1 - mpmath.exp(-k * inter / c))
    g1 = c * (1 - mpmath.exp(-(k ** 2) * mpmath.mpf(symdiff) ** 2 / (4 * c ** 2) - k * inter / (c - 1)))
    return float(g0), float(g1)


def mp_expected(c, k, a1, a2, a3):
    # inclusion-exclusion over "bit untouched by X" events
    q = 1 - mpmath.mpf(1) / c
    nx, ny, nall = k * (a1 + a3), k * (a2 + a3), k * (a1 + a2 + a3)
    return float(c * (1 - q ** nx - q ** ny + q ** nall))


def brute_expected(c, k, a1, a2, a3):
    """Exhaustive average over all hash outcomes; tiny cases only."""
    n = a1 + a2 + a3
    x = list(range(a1)) + list(range(a1 + a2, n))
    y = list(range(a1, n))
    total = 0
    count = 0
    for outcome in itertools.product(range(c), repeat=n * k):
        pos = [outcome[e * k:(e + 1) * k] for e in range(n)]
        bx = {p for e in x for p in pos[e]}
        by = {p for e in y for p in pos[e]}
        total += len(bx & by)
        count += 1
    return total / count


class TestGamma:
    def test_zero_intersection(self):
        assert gamma_bounds(100, 3, 0, 17)[0] == 0.0

    def test_zero_symdiff(self):
        c, k, m = 500, 4, 12
        g1 = gamma_bounds(c, k, m, 0)[1]
        assert g1 == pytest.approx(c * (1 - math.exp(-k * m / (c - 1))), rel=1e-14)

    def test_arbitrary_precision_oracle(self):
        g0, g1 = gamma_bounds(1000, 4, 10, 40)
        o0, o1 = mp_gammas(1000, 4, 10, 40)
        assert g0 == pytest.approx(o0, rel=1e-13)
        assert g1 == pytest.approx(o1, rel=1e-13)
        assert g0 == pytest.approx(39.21056084767682, rel=1e-12)

    def test_small_c(self):
        with pytest.raises(ValueError):
            gamma_bounds(1, 1, 0, 0)

    @settings(max_examples=200, deadline=None)
    @given(c=st.integers(2, 10_000), k=st.integers(1, 10), inter=st.integers(0, 500),
           symdiff=st.integers(0, 500))
    def test_ordered(self, c, k, inter, symdiff):
        g0, g1 = gamma_bounds(c, k, inter, symdiff)
        assert 0 <= g0 <= g1 + 1e-9 * max(1.0, g1) <= c + 1e-9 * c


class TestExpected:
    @pytest.mark.parametrize("args", [(3, 1, 1, 1, 1), (4, 2, 1, 0, 1), (2, 2, 1, 1, 1), (3, 1, 0, 2, 2)])
    def test_brute_force(self, args):
        assert expected_q(*args) == pytest.approx(brute_expected(*args), rel=1e-12)

    @settings(max_examples=100, deadline=None)
    @given(c=st.integers(2, 5000), k=st.integers(1, 8), a1=st.integers(0, 200),
           a2=st.integers(0, 200), a3=st.integers(0, 200))
    def test_inclusion_exclusion(self, c, k, a1, a2, a3):
        assert expected_q(c, k, a1, a2, a3) == pytest.approx(mp_expected(c, k, a1, a2, a3),
                                                             rel=1e-9, abs=1e-9)

    @settings(max_examples=100, deadline=None)
    @given(c=st.integers(2, 5000), k=st.integers(1, 8), a1=st.integers(0, 200),
           a2=st.integers(0, 200), a3=st.integers(0, 200))
    def test_inside_envelope(self, c, k, a1, a2, a3):
        g0, g1 = gamma_bounds(c, k, a3, a1 + a2)
        e = expected_q(c, k, a1, a2, a3)
        assert g0 - 1e-9 * c <= e <= g1 + 1e-9 * c


class TestChernoff:
    def test_upper_formula(self):
        d, mu = 0.3, 25.0
        want = float((mpmath.e ** d / (1 + mpmath.mpf(d)) ** (1 + d)) ** mu)
        assert chernoff_upper(d, mu) == pytest.approx(want, rel=1e-12)

    def test_lower_formula(self):
        assert chernoff_lower(0.3, 30.0) == pytest.approx(math.exp(-(0.3 ** 2) * 30.0 / 3.0), rel=1e-12)

    def test_trivial(self):
        assert chernoff_upper(0.0, 10) == pytest.approx(1.0)
        assert chernoff_lower(0.5, 0.0) == 1.0


class TestEmpirical:
    def test_empty_sets(self):
        q = empirical_q(OverlapExperiment(64, 3, 0, 0, 0, trials=100))
        assert q.mean == 0 and np.all(q.samples == 0)

    def test_disjoint_rarely_overlap(self):
        q = empirical_q(OverlapExperiment(4096, 2, 5, 5, 0, trials=2000))
        assert q.mean == pytest.approx(expected_q(4096, 2, 5, 5, 0), abs=4 * q.se + 1e-3)

    @pytest.mark.parametrize("c,k,a1,a2,a3", [(256, 2, 10, 10, 20), (1024, 4, 30, 20, 40), (200, 1, 0, 0, 30)])
    def test_mean_matches_exact(self, c, k, a1, a2, a3):
        q = empirical_q(OverlapExperiment(c, k, a1, a2, a3, trials=5000, seed=1))
        assert abs(q.mean - expected_q(c, k, a1, a2, a3)) < 4 * q.se

    def test_large_c_counts_distinct_positions(self):
        c, k, m = 1 << 20, 3, 40
        q = empirical_q(OverlapExperiment(c, k, 0, 0, m, trials=500))
        assert q.mean == pytest.approx(k * m, rel=0.01)
        g0, g1 = gamma_bounds(c, k, m, 0)
        assert g0 - 4 * q.se <= q.mean <= g1 + 4 * q.se

    def test_lower_tail(self):
        c, k, a3 = 1024, 4, 40
        exp = OverlapExperiment(c, k, 10, 10, a3, trials=10_000, seed=3)
        g0, _ = gamma_bounds(c, k, a3, 20)
        q = empirical_q(exp)
        assert q.tail_le(0.7 * g0) <= chernoff_lower(0.3, g0) * 1.05

    def test_reproducible(self):
        exp = OverlapExperiment(256, 2, 5, 5, 5, trials=300, seed=9)
        assert np.array_equal(empirical_q(exp).samples, empirical_q(exp).samples)

    def test_shared_family_close(self):
        exp = OverlapExperiment(1024, 4, 20, 20, 30, trials=3000, seed=2)
        shared = empirical_q_shared(exp, master_seed=7)
        assert abs(shared.mean - expected_q(1024, 4, 20, 20, 30)) < 6 * shared.se + 0.5

    @pytest.mark.parametrize("kw", [dict(a1=-1), dict(trials=0)])
    def test_bad_experiment(self, kw):
        base = dict(c=16, k=1, a1=1, a2=1, a3=1)
        base.update(kw)
        with pytest.raises(ValueError):
            OverlapExperiment(**base)


class TestNegativeAssociation:
    def test_max_cov_nonpositive(self):
        rep = na_sanity(64, 2, 8, 100_000, seed=0)
        assert rep.max_cov <= 3 * rep.se_at_max

    def test_empty_set(self):
        rep = na_sanity(32, 2, 0, 500)
        assert rep.max_cov == 0.0 and rep.mean_offdiag == 0.0

    def test_single_bit_closed_form(self):
        c = 16
        rep = na_sanity(c, 1, 1, 200_000, seed=1)
        assert rep.expected_offdiag == pytest.approx(-1 / c ** 2, rel=1e-12)
        assert rep.mean_offdiag == pytest.approx(-1 / c ** 2, rel=0.05)
        assert rep.max_cov < 0


class TestGrid:
    def test_points_within_budget(self):
        pts = list(grid_points())
        assert len(pts) == 27
        for c, k, a1, a2, a3 in pts:
            assert k * (a1 + a2 + a3) <= c / 2

    def test_small_grid(self):
        rows = run_grid(cs=(256,), ks=(2,), shares=(0.5,), trials=500)
        assert len(rows) == 1
        r = rows[0]
        assert r["gamma0"] <= r["expected_q"] <= r["gamma1"]
        assert r["in_envelope"]
        assert "mean_q_shared" in r
