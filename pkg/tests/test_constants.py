import math

import pytest
from hypothesis import given, strategies as st
from scipy import integrate, optimize

from arnoldkam.constants import (build_constants, check_smallness, epsilon_sharp, epsilon_star,
                                 integral_moment, sharp_conditions)
from arnoldkam.series import DomainError


def moment_by_quadrature(d, a):
    """2^d times the integral over the positive orthant, truncated where e^-t is negligible."""
    f1 = lambda t: t ** a * math.exp(-t)
    if d == 1:
        v = integrate.quad(f1, 0, math.inf, epsrel=1e-12, epsabs=0)[0]
    elif d == 2:
        v = integrate.dblquad(lambda y, x: f1(x + y), 0, 80, 0, 80, epsrel=1e-12, epsabs=0)[0]
    else:
        v = integrate.tplquad(lambda z, y, x: f1(x + y + z), 0, 60, 0, 60, 0, 60,
                              epsrel=1e-10, epsabs=0)[0]
    return 2 ** d * v


@pytest.mark.parametrize("d,a,expected", [(1, 1, 2.0), (2, 2, 24.0), (1, 0, 2.0)])
def test_moment_examples(d, a, expected):
    assert integral_moment(d, a) == pytest.approx(expected, rel=1e-15)
    assert moment_by_quadrature(d, a) == pytest.approx(expected, rel=1e-8)


@pytest.mark.parametrize("d,a", [(1, 0.5), (1, 5), (2, 3), (2, 4.5), (3, 2), (3, 5)])
def test_moment_matches_quadrature(d, a):
    assert integral_moment(d, a) == pytest.approx(moment_by_quadrature(d, a), rel=1e-8)


def test_moment_rejects_bad_input():
    with pytest.raises(ValueError):
        integral_moment(0, 1)
    with pytest.raises(ValueError):
        integral_moment(1, -1)


def test_table_d2_tau1():
    t = build_constants(2, 1)
    assert t.nu == 2 and t.a == 20
    assert t[2] == 128
    assert t[1] == 243
    assert t[5] == pytest.approx(38.4, rel=1e-15)
    assert t[15] == 214


@pytest.mark.parametrize("d", [2, 3, 4])
@pytest.mark.parametrize("dtau", [0, 1, 2, 3])
def test_constants_exceed_one(d, dtau):
    t = build_constants(d, max(1, d - 1) + dtau)
    assert all(v > 1 for v in t.C.values())
    assert 1 < t.C_main < t.C_star


def test_build_rejects_small_tau():
    with pytest.raises(ValueError):
        build_constants(3, 1.5)


def test_epsilon_star_examples():
    t = build_constants(2, 1)
    assert epsilon_star(t, 1.0, 1e-300, 1.0) == pytest.approx(1 / t.C_star, rel=1e-12)
    a = epsilon_star(t, 1.0, 0.5, 1.0)
    b = epsilon_star(t, 1.0, 0.75, 1.0)
    assert a / b == pytest.approx(2.0 ** t.a, rel=1e-12)
    assert epsilon_star(t, 1.0, 0.5, 2.0) == pytest.approx(0.5 ** 20 / (16 * t.C_star), rel=1e-14)
    with pytest.raises(DomainError):
        epsilon_star(t, 0.5, 0.5, 1.0)


def test_epsilon_sharp_bisection_contract():
    t = build_constants(2, 1)
    e = epsilon_sharp(t, 1.0, 0.5, 1.0)
    assert max(sharp_conditions(t, e, 1.0, 0.5, 1.0)) <= 1
    assert max(sharp_conditions(t, 1.01 * e, 1.0, 0.5, 1.0)) > 1
    assert epsilon_star(t, 1.0, 0.5, 1.0) < e


def test_epsilon_sharp_against_root_finder():
    t = build_constants(2, 1)
    g = lambda le: math.log(max(sharp_conditions(t, math.exp(le), 1.0, 0.5, 1.0)))
    root = math.exp(optimize.brentq(g, math.log(1e-40), -2 * t.nu, xtol=1e-15, rtol=1e-15))
    e = epsilon_sharp(t, 1.0, 0.5, 1.0)
    assert e == pytest.approx(root, rel=1e-11)
    assert e == pytest.approx(2.3661349176322336e-31, rel=1e-11)  # frozen from the root finder


@given(st.sampled_from([(2, 1.0), (2, 2.0), (3, 2.0), (3, 3.5)]),
       st.floats(0.05, 0.95), st.floats(0.05, 0.95), st.floats(1.0, 50.0))
def test_threshold_monotone(dt, w1, w2, theta):
    t = build_constants(*dt)
    lo, hi = sorted((w1, w2))
    if hi - lo < 1e-6:
        return
    assert epsilon_star(t, 1.0, 1 - lo, theta) < epsilon_star(t, 1.0, 1 - hi, theta)
    assert epsilon_star(t, 1.0, 1 - hi, theta * 1.5) < epsilon_star(t, 1.0, 1 - hi, theta)


def test_check_smallness_examples():
    rep = check_smallness(0.1, 0.5, 1.0, 1e-40, 1e-30)
    assert rep.alpha_ok and rep.alpha_margin == pytest.approx(5.0)
    es = 1e-30
    rep = check_smallness(0.1, 0.5, 1.0, es / 2, es)
    assert rep.ok and rep.eps_margin == pytest.approx(2.0)
    rep = check_smallness(0.1, 0.5, 1.0, 2 * es, es)
    assert not rep.ok and not rep.eps_ok
    assert any("smallness condition eps_tilde <= eps_star" in m for m in rep.messages)
    rep = check_smallness(1.0, 0.5, 1.0, es / 2, es)
    assert not rep.alpha_ok and "alpha <= r/T" in rep.messages[0]
