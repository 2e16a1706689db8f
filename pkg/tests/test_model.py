import math
from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from inls.model import (ModelParams, ParameterError, Regime, admissible, classify_regime,
                        critical_exponents, is_mass_critical)


@pytest.mark.parametrize(
    "N,b,p,expected",
    [
        (3, 1, 5, (2.0, 3.0, 7.0, 0.75, 5.0)),
        (2, 1, 4, (3.0, 4.0, math.inf, 0.0, 2.0)),
    ],
)
def test_critical_exponents_examples(N, b, p, expected):
    ex = critical_exponents(ModelParams(N, b, p))
    assert (ex.p_lower, ex.p_mass_critical, ex.p_energy_critical, ex.s_c, ex.B) == pytest.approx(expected)


def test_mass_critical_pins_sc_and_B():
    ex = critical_exponents(ModelParams(3, 1, 3))
    assert ex.s_c == 0.0 and ex.B == 2.0


@pytest.mark.parametrize(
    "p,regime",
    [(2.5, Regime.MASS_SUBCRITICAL), (3, Regime.MASS_CRITICAL), (1.5, Regime.BELOW_ADMISSIBLE),
     (2, Regime.BELOW_ADMISSIBLE), (4, Regime.INTERCRITICAL), (7, Regime.ENERGY_CRITICAL),
     (8, Regime.ABOVE_ENERGY_CRITICAL)],
)
def test_classify_regime_n3_b1(p, regime):
    assert classify_regime(ModelParams(3, 1, p)) is regime


def test_two_dimensions_has_no_energy_critical_exponent():
    assert classify_regime(ModelParams(2, 1, 100)) is Regime.INTERCRITICAL


def test_ordering_can_fail_when_dimension_is_small():
    ex = critical_exponents(ModelParams(2, 2, 6))
    assert ex.p_lower == ex.p_mass_critical == 5.0
    assert admissible(ModelParams(2, 2, 6))


def test_exact_rational_detection_of_mass_critical():
    # N = 3, b = 1/2: p_c = 1 + 5/3 = 8/3 is not a finite decimal
    assert is_mass_critical(ModelParams(3, Fraction(1, 2), Fraction(8, 3)))
    assert not is_mass_critical(ModelParams(3, Fraction(1, 2), Fraction(8, 3) + Fraction(1, 10**15)))
    # float input falls back to the relative tolerance
    assert is_mass_critical(ModelParams(3, 0.5, 8.0 / 3.0))


@pytest.mark.parametrize("kw", [dict(N=1, b=1, p=3), dict(N=13, b=1, p=3), dict(N=3, b=0, p=3),
                                dict(N=3, b=-1, p=3), dict(N=3, b=1, p=1), dict(N=3, b=1, p=float("nan")),
                                dict(N=2.5, b=1, p=3), dict(N=3, b=1, p=3, omega=float("inf"))])
def test_parameter_domain_errors(kw):
    with pytest.raises(ParameterError):
        ModelParams(**kw)


def test_admissibility_matches_closed_form():
    for N in range(2, 8):
        for b in (0.5, 1.0, 2.0):
            for p in (1.5, 2.0, 2.5, 3.0, 4.0, 6.0, 9.0):
                prm = ModelParams(N, b, p)
                upper = N <= 2 or p < (N + 2 + 2 * b) / (N - 2)
                assert admissible(prm) == (p > 1 + 2 * b / (N - 1) and upper)


params_st = st.builds(
    ModelParams,
    N=st.integers(2, 12),
    b=st.floats(0.05, 4.0),
    p=st.floats(1.001, 30.0),
)


@settings(max_examples=300, deadline=None)
@given(params_st)
def test_ordering_and_sign_equivalences(prm):
    ex = prm.exponents
    if prm.admissible:
        assert ex.p_mass_critical < ex.p_energy_critical
        # p_lower < p_c is equivalent to N > 1 + b/2, not implied by admissibility
        assert (ex.p_lower < ex.p_mass_critical) == (prm.N > 1 + prm.bf / 2) or math.isclose(
            prm.N, 1 + prm.bf / 2, rel_tol=1e-9)
    if not is_mass_critical(prm):
        assert (ex.B > 2) == (ex.s_c > 0) == (prm.pf > ex.p_mass_critical)


@settings(max_examples=300, deadline=None)
@given(params_st)
def test_subcritical_requires_dimension_bound(prm):
    if classify_regime(prm) is Regime.MASS_SUBCRITICAL:
        assert prm.N > 1 + prm.bf / 2


def test_regimes_partition_the_p_axis():
    seen = []
    for k in range(1, 400):
        seen.append(classify_regime(ModelParams(3, 1, 1 + k * 0.025)))
    order = [Regime.BELOW_ADMISSIBLE, Regime.MASS_SUBCRITICAL, Regime.MASS_CRITICAL,
             Regime.INTERCRITICAL, Regime.ENERGY_CRITICAL, Regime.ABOVE_ENERGY_CRITICAL]
    idx = [order.index(r) for r in seen]
    assert idx == sorted(idx)
    assert set(seen) == set(order)


def test_with_omega_and_require_omega():
    prm = ModelParams(3, 1, 2.5)
    with pytest.raises(ParameterError):
        prm.require_omega()
    assert prm.with_omega(2.0).require_omega() == 2.0
    assert prm.with_omega(2.0).as_dict() == {"N": 3, "b": 1.0, "p": 2.5, "omega": 2.0}
