import math
from fractions import Fraction

import pytest
from hypothesis import given, settings, strategies as st

from rcbench.analytics import (
    FULL_S,
    LARGE_S,
    LEVEL_BOUND_LIMIT,
    SMALL_S,
    UNIT_S,
    EntropyReport,
    FitResult,
    bound_report,
    closed_form_fp_ratio,
    closed_form_level_difference,
    corollary_bounds,
    expected_fp_ratio,
    expected_level_difference,
    fit_closest_theoretical,
    fp_ratio_lower_bound,
    l2_distance,
    level_difference_bound,
    regime,
    shannon_entropy,
    theoretical_ldd,
)
from rcbench.core import LevelDifferenceDistribution, ParameterRangeError, TheoryDomainError, ValidationError

F = Fraction
LDD = LevelDifferenceDistribution


def test_frozen_distributions():
    assert theoretical_ldd(16, 5, 3).support() == {0: F(4, 13), 1: F(6, 13), 2: F(3, 13)}
    d = theoretical_ldd(16, 3, 4)
    assert d.mass == {0: F(2, 3), 1: F(1, 3), 2: F(0)} and d.kappa == 2
    for c in (3, 5, 9):
        assert theoretical_ldd(16, c, 1) == LDD.point_mass()
        assert theoretical_ldd(16, c, 16) == LDD.point_mass()


@pytest.mark.parametrize("N,c", [(12, 3), (1, 3), (16, 4), (16, 2), (16, 6)])
def test_theory_domain_errors(N, c):
    with pytest.raises(TheoryDomainError):
        theoretical_ldd(N, c, 2)


def test_s_range_errors():
    with pytest.raises(ParameterRangeError):
        theoretical_ldd(16, 3, 0.5)
    with pytest.raises(ParameterRangeError):
        theoretical_ldd(16, 3, 17)


def test_regimes():
    assert regime(16, 3, 1) == UNIT_S and regime(16, 3, 16) == FULL_S
    # c = 3 has an empty small-s band
    assert {regime(16, 3, s) for s in range(2, 16)} == {LARGE_S}
    assert regime(16, 5, 3) == SMALL_S and regime(16, 5, 4) == LARGE_S
    assert regime(16, 9, F(7, 2)) == SMALL_S


def test_moment_examples():
    d = theoretical_ldd(16, 5, 3)
    assert expected_level_difference(d) == F(12, 13)
    assert expected_fp_ratio(d) == F(28, 13)
    d = theoretical_ldd(16, 3, 4)
    assert expected_level_difference(d) == F(1, 3)
    assert expected_fp_ratio(d) == F(4, 3)
    assert expected_level_difference(LDD.point_mass()) == 0
    assert expected_fp_ratio(LDD.point_mass()) == 1


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 12), st.sampled_from([3, 5, 9, 17, 33]), st.data())
def test_closed_forms_and_bounds_for_rational_s(n, c, data):
    N = 2 ** (n + 1)
    num = data.draw(st.integers(1, 64 * N))
    s = max(F(1), min(F(N), F(num, 64)))
    d = theoretical_ldd(N, c, s)
    assert sum(d.mass.values()) == 1
    assert all(p >= 0 for p in d.mass.values())
    ek, e2k = expected_level_difference(d), expected_fp_ratio(d)
    assert ek == closed_form_level_difference(N, c, s)
    assert e2k == closed_form_fp_ratio(N, c, s)
    assert ek < level_difference_bound(c)
    if s > 1:
        assert e2k >= fp_ratio_lower_bound(N, s)


def test_level_difference_bound():
    assert level_difference_bound(3) == 1
    assert level_difference_bound(5) == F(3, 2)
    assert LEVEL_BOUND_LIMIT == 2 and level_difference_bound(2**20 + 1) < LEVEL_BOUND_LIMIT
    with pytest.raises(ParameterRangeError):
        level_difference_bound(2)


def test_fp_ratio_lower_bound():
    assert fp_ratio_lower_bound(16, 4) == 1
    assert fp_ratio_lower_bound(2**22, 1) == 11
    assert fp_ratio_lower_bound(1000, 1000) == 1


def test_l2_distance():
    a = theoretical_ldd(16, 5, 3)
    assert l2_distance(a, a) == 0
    assert l2_distance(LDD.point_mass(0), LDD.point_mass(1)) == pytest.approx(math.sqrt(2))
    p = LDD.point_mass()
    want = math.sqrt((F(9, 13) ** 2 + F(6, 13) ** 2 + F(3, 13) ** 2))
    assert l2_distance(a, p) == l2_distance(p, a) == pytest.approx(want)


def test_fit_self_match_and_point_mass():
    assert fit_closest_theoretical(theoretical_ldd(16, 5, 3), 16, 5) == FitResult(3, 0.0, 2)
    fit = fit_closest_theoretical(LDD.point_mass(), 16, 5)
    assert (fit.s_star, fit.epsilon) == (1, 0.0)
    with pytest.raises(TheoryDomainError):
        fit_closest_theoretical(LDD.point_mass(), 16, 4)


def test_fit_perturbed():
    base = theoretical_ldd(16, 5, 3)
    shifted = LDD(2, {0: base[0] + F(1, 100), 1: base[1] - F(1, 100), 2: base[2]})
    fit = fit_closest_theoretical(shifted, 16, 5)
    assert fit.s_star == 3 and fit.epsilon <= 0.02
    assert fit.epsilon == pytest.approx(l2_distance(shifted, theoretical_ldd(16, 5, fit.s_star)))


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 9), st.sampled_from([3, 5, 9]), st.data())
def test_fit_recovers_exact_distribution(n, c, data):
    N = 2 ** (n + 1)
    s = data.draw(st.integers(1, N))
    target = theoretical_ldd(N, c, s)
    fit = fit_closest_theoretical(target, N, c)
    assert fit.epsilon == 0
    assert theoretical_ldd(N, c, fit.s_star) == target
    assert fit.s_star <= s


def test_corollary_examples():
    r = corollary_bounds(FitResult(4, 0.0, 2), 3, 16)
    assert r.level_diff_bound == 1 and r.fp_ratio_lower_bound == 0 and r.vacuous_fp_bound
    r = corollary_bounds(FitResult(2**12, 0.0, 10), 5, 2**22)
    assert r.level_diff_bound == 1.5 and r.fp_ratio_lower_bound == 4 and not r.vacuous_fp_bound
    r = corollary_bounds(FitResult(2**12, 0.1, 10), 3, 2**22)
    assert r.level_diff_bound == pytest.approx(2) and r.fp_ratio_lower_bound == pytest.approx(3)
    assert r.regime == LARGE_S and r.level_bound_holds and r.fp_bound_holds
    js = r.to_json()
    assert js["expected_level_diff"]["denominator"] == 1023 and js["vacuous_fp_bound"] is False


def test_bound_report_unrelaxed():
    r = bound_report(16, 5, 3)
    assert r.expected_level_diff == F(12, 13) and r.expected_fp_ratio == F(28, 13)
    assert r.level_diff_bound == 1.5 and r.fp_ratio_lower_bound == 1
    assert r.level_bound_holds and r.fp_bound_holds and r.regime == SMALL_S


def test_entropy():
    assert shannon_entropy({3: 1}) == 0
    assert shannon_entropy({0: 0.5, 1: 0.5}) == 1
    assert shannon_entropy({0: F(2, 3), 1: F(1, 3)}) == pytest.approx(0.9183, abs=1e-4)
    assert shannon_entropy({0: 0.5, 1: 0.5, 2: 0.0}) == 1
    with pytest.raises(ValidationError):
        shannon_entropy({0: 0.5, 1: 0.4})
    with pytest.raises(ValidationError):
        shannon_entropy({0: 1.5, 1: -0.5})


@given(st.lists(st.integers(0, 1000), min_size=1, max_size=30).filter(lambda v: sum(v) > 0))
def test_entropy_range(counts):
    rep = EntropyReport.from_counts("x", dict(enumerate(counts)))
    assert 0 <= rep.entropy <= math.log2(rep.support_size) + 1e-9


def test_entropy_report_json():
    rep = EntropyReport.from_counts("tree", {4: 10, 5: 10})
    assert rep.entropy == 1 and rep.support_size == 2
    assert rep.to_json()["level_probs"] == {"4": 0.5, "5": 0.5}
    with pytest.raises(ValidationError):
        EntropyReport.from_counts("tree", {})
