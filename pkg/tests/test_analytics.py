import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hiercache import analytics as an
from hiercache.errors import DegenerateWarning, DomainError, NotTwoRelay
from hiercache.model import NetworkConfig


def cfg(n=4, k1=2, k2=2, m1=2.0, m2=0.0, **kw):
    return NetworkConfig(n, k1, k2, m1, m2, **kw)


def rate_by_sum(m, k):
    # sum over multicast group sizes of the expected XOR length
    return sum(math.comb(k, s) * m ** (s - 1) * (1 - m) ** (k - s + 1) for s in range(1, k + 1))


@pytest.mark.parametrize("m,k,expected", [(1.0, 5, 0.0), (0.0, 4, 4.0), (0.5, 2, 0.75)])
def test_rate_examples(m, k, expected):
    assert an.rate_r(m, k) == pytest.approx(expected, abs=1e-15)


@given(st.floats(0.001, 1.0), st.integers(1, 20))
def test_rate_matches_group_sum(m, k):
    assert an.rate_r(m, k) == pytest.approx(rate_by_sum(m, k), rel=1e-9, abs=1e-12)


def test_rate_monotone_and_bounded():
    ms = np.linspace(0, 1, 100)
    for k in range(1, 21):
        vals = [an.rate_r(m, k) for m in ms]
        assert all(a >= b - 1e-12 for a, b in zip(vals, vals[1:]))
        assert all(v <= k * (1 - m) + 1e-12 for v, m in zip(vals, ms))
    for m in ms:
        vals = [an.rate_r(m, k) for k in range(1, 21)]
        assert all(a <= b + 1e-12 for a, b in zip(vals, vals[1:]))


def test_rate_domain():
    with pytest.raises(DomainError):
        an.rate_r(1.2, 2)
    with pytest.raises(DomainError):
        an.rate_r(0.5, -1)
    assert an.rate_r(0.3, 0) == 0.0


def test_hcc_a_and_b_examples():
    assert an.hcc_a_rates(cfg()) == an.RatePair(1.5, 2.0)
    assert an.hcc_a_rates(cfg(m1=4)).r1 == 0.0
    assert an.hcc_a_rates(cfg(m2=4)).r2 == 0.0
    assert an.hcc_b_rates(cfg()) == an.RatePair(4.0, 2.0)
    assert an.hcc_b_rates(cfg(m2=4)) == an.RatePair(0.0, 0.0)
    big = cfg(3000, 2, 100, 600, 20)
    assert an.hcc_b_rates(big).r1 == an.rate_r(1 / 150, 200)


def test_hcc_c_limits_reduce_to_a_and_b():
    for c in (cfg(), cfg(m1=1, m2=1), cfg(8, 2, 3, 3, 2)):
        assert an.hcc_c_rates(c, 1, 1) == pytest.approx(an.hcc_a_rates(c))
        assert an.hcc_c_rates(c, 0, 0) == pytest.approx(an.hcc_b_rates(c))


def test_hcc_c_term_by_term():
    # alpha = beta = 1/2 on the four-file example: relays hold all of part 1
    r = an.hcc_c_rates(cfg(), 0.5, 0.5)
    assert r.r1 == pytest.approx(0.5 * 2 * an.rate_r(1.0, 2) + 0.5 * an.rate_r(0.0, 4))
    assert r.r2 == pytest.approx(0.5 * an.rate_r(0.0, 2) + 0.5 * an.rate_r(0.0, 2))
    assert r.sequential == pytest.approx(4.0)


def test_user_share_spills_into_other_part():
    # with alpha = 1 the part-2 share of the user cache has nowhere to go
    assert an.split_fractions(4, 4, 4, 1.0, 0.25) == (1.0, 1.0, 1.0)
    assert an.split_fractions(4, 1, 2, 0.5, 1.0) == pytest.approx((0.5, 1.0, 0.0))
    assert an.split_fractions(4, 1, 2, 0.5, 0.5) == pytest.approx((0.5, 0.5, 0.5))


def test_hcc_c_continuity():
    c = cfg(6, 2, 2, 2.5, 1.5)
    for a, lim in ((1e-9, 0.0), (1 - 1e-9, 1.0)):
        for b in (0.0, 0.3, 1.0):
            x, y = an.hcc_c_rates(c, a, b), an.hcc_c_rates(c, lim, b)
            assert abs(x.sequential - y.sequential) < 1e-6


@pytest.mark.parametrize("m1,m2,expected", [(1, 2, (0.25, 0.25)), (1, 1, (1 / 3, 0.0)),
                                            (2, 2, (0.5, 0.25))])
def test_hcc_c_split_by_regime(m1, m2, expected):
    assert an.hcc_c_alpha_beta(cfg(m1=m1, m2=m2)) == pytest.approx(expected)


def test_hcc_c_degenerate_split_warns():
    with pytest.warns(DegenerateWarning):
        assert an.hcc_c_alpha_beta(cfg(m1=0, m2=0)) == (0.0, 0.0)


def test_hcc_c_delay_values():
    assert an.hcc_c_delay(cfg(m1=4, m2=4)) == 0.0
    # M1 + K2*M2 = 2 < 4 is regime II: alpha = 1, beta = 0, which is HCC-A here
    c = cfg()
    assert an.hcc_c_alpha_beta(c) == (1.0, 0.0)
    assert an.hcc_c_delay(c) == pytest.approx(an.hcc_a_rates(c).sequential)
    c = cfg(m1=2, m2=2)
    assert an.hcc_c_delay(c) == pytest.approx(an.hcc_c_rates(c, 0.5, 0.25).sequential)
    big = cfg(3000, 2, 100, 600, 20)
    a, b = an.hcc_c_alpha_beta(big)
    assert (a, b) == pytest.approx((600 / 2600, 0.0))
    assert an.hcc_c_delay(big) == pytest.approx(an.hcc_c_rates(big, a, b).sequential)


def test_propose_components_example():
    p = an.propose_components(cfg(), 1, 1)
    got = (p.rs1, p.rs2, p.rs3, p.re, p.r_prime, p.r_double_prime)
    assert got == pytest.approx((0.5, 1.0, 1.0, 0.5, 2.0, 0.0))


def test_propose_components_limits():
    c = cfg(m1=4, m2=1)
    assert an.propose_components(c, 1, 1).r_prime == pytest.approx(an.rate_r(0.25, 2))
    p = an.propose_components(cfg(m1=1, m2=1), 0, 0)
    assert p.r_prime == 0.0
    assert p.r_double_prime == pytest.approx(an.rate_r(0.25, 4))


@given(st.integers(1, 3), st.integers(1, 3), st.floats(0, 1), st.floats(0, 1),
       st.floats(0, 1), st.floats(0, 1))
def test_propose_components_invariants(k1, k2, f1, f2, a, b):
    c = cfg(6, k1, k2, 6 * f1, 6 * f2)
    p = an.propose_components(c, a, b)
    for v in (p.rs1, p.rs2, p.rs3, p.re, p.r_prime, p.r_double_prime):
        assert v >= 0
    assert p.r_prime == pytest.approx(p.rs1 + p.rs2 + max(p.rs3 - p.re, 0))


@pytest.mark.parametrize("c,expected", [(cfg(), 2.0), (cfg(m1=4, m2=4), 0.0), (cfg(m1=4), 2.0)])
def test_propose_delay_examples(c, expected):
    assert an.propose_delay(c, 1, 1) == pytest.approx(expected, abs=1e-12)


def test_optimize_examples():
    assert an.optimize_propose(cfg(m1=4, m2=0))[2] == pytest.approx(2.0)
    a, b, d = an.optimize_propose(cfg(m1=0, m2=0))
    assert d == pytest.approx(4.0)
    # brute force over a fine grid never beats the optimizer
    c = cfg(6, 2, 2, 1.5, 1)
    d = an.optimize_propose(c, 41)[2]
    grid = np.linspace(0, 1, 81)
    assert d <= min(an.propose_delay(c, x, y) for x in grid for y in grid) + 1e-12


def test_optimize_tie_breaks_to_smallest_split():
    # everything cached: every split gives 0, so the first grid point wins
    assert an.optimize_propose(cfg(m1=4, m2=4), 11) == (0.0, 0.0, 0.0)


def test_two_relay_examples():
    assert an.two_relay_delay(cfg()) == pytest.approx(2.0)
    assert an.two_relay_delay(cfg(m1=1)) == pytest.approx(2.625)
    assert an.two_relay_delay(cfg(m1=4, m2=1)) == pytest.approx(an.rate_r(0.25, 2))
    with pytest.raises(NotTwoRelay):
        an.two_relay_delay(cfg(k1=3, n=6))


def test_two_relay_matches_propose_on_grid():
    for k2 in (1, 2, 3):
        for m1 in np.linspace(0, 6, 50):
            for m2 in np.linspace(0, 6, 50):
                c = cfg(6, 2, k2, float(m1), float(m2))
                assert an.two_relay_delay(c) == pytest.approx(an.propose_delay(c, 1, 1), abs=1e-9)


def test_threshold_examples():
    assert an.m1_threshold(0) == pytest.approx((3 - math.sqrt(5)) / 2, abs=1e-12)
    assert an.m1_threshold(1) == 0.0
    assert an.m1_threshold(0.5) == pytest.approx(3 - math.sqrt(8), abs=1e-12)
    with pytest.raises(NotTwoRelay):
        an.m1_threshold(0.2, k1=3)


@given(st.floats(0, 1), st.integers(1, 6))
def test_threshold_is_root(m2, k2):
    x = an.m1_threshold(m2, 2, k2)
    c = (1 - m2) ** k2
    assert x == pytest.approx(c * (1 - x) ** 2, abs=1e-12)


def test_plateau_beyond_threshold():
    for k2 in (1, 2, 4):
        for m2 in (0.0, 1.0, 2.5):
            n = 10
            t = an.m1_threshold(m2 / n, 2, k2)
            flat = an.rate_r(m2 / n, k2)
            for m1 in np.linspace(t * n, n, 30):
                assert an.propose_delay(cfg(n, 2, k2, float(m1), m2), 1, 1) == pytest.approx(flat, abs=1e-9)


@pytest.mark.parametrize("c,expected", [(cfg(), 2.0), (cfg(m1=4, m2=4), 0.0), (cfg(m1=0), 2.0)])
def test_lower_bound_examples(c, expected):
    assert an.lower_bound(c) == pytest.approx(expected)


def test_regimes_and_gaps():
    g = an.gap_report(cfg(m1=4))
    assert g.regime == "III" and g.guaranteed_gap == 0.0
    g = an.gap_report(cfg(m1=1, m2=1))
    assert g.regime == "II"
    assert g.guaranteed_gap == pytest.approx(2 / 3 * an.rate_r(3 / 8, 2))
    assert g.guaranteed_gap == pytest.approx(0.677, abs=1e-3)
    g = an.gap_report(cfg(8, 2, 2, 1, 4))
    assert g.regime == "I"
    assert g.guaranteed_gap == pytest.approx(0.65625)


def test_gap_holds_on_grid():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegenerateWarning)
        for k1 in (1, 2, 3):
            for k2 in (1, 2, 3):
                for f1 in np.linspace(0, 1, 7):
                    for f2 in np.linspace(0, 1, 7):
                        n = max(k1 * k2, 4)
                        g = an.gap_report(cfg(n, k1, k2, f1 * n, f2 * n))
                        assert g.guaranteed_gap >= 0
                        assert g.achieved_gap >= g.guaranteed_gap - 1e-9


@settings(max_examples=60)
@given(st.integers(1, 3), st.integers(1, 3), st.floats(0, 1), st.floats(0, 1))
def test_lower_bound_below_every_scheme(k1, k2, f1, f2):
    n = max(k1 * k2, 4)
    c = cfg(n, k1, k2, f1 * n, f2 * n)
    lb = an.lower_bound(c)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegenerateWarning)
        best = min(an.optimize_propose(c, 11)[2], an.hcc_c_delay(c), an.pipeline_delay(c))
    assert lb <= best + 1e-9


def test_pipeline_examples():
    assert an.pipeline_delay(cfg(m2=4)) == 0.0
    assert an.pipeline_delay(cfg()) == 4.0
    c = cfg(6, 1, 3, 0, 2)
    assert an.pipeline_delay(c) == pytest.approx(an.rate_r(1 / 3, 3))
    assert an.pipeline_delay(c) < an.hcc_a_rates(c).sequential
