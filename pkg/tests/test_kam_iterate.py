import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from arnoldkam import series as S
from arnoldkam.kam_iterate import build_schedule, compose_and_extract, iterate, measured_bounds
from arnoldkam.series import FourierTaylor
from arnoldkam.shell import build_problem, catalog


def schedule(eps=1e-36, alpha=0.5, K0=1.0, T0=1.0, P0=2.0, r0=1.0, horizon=6, d=2, tau=1.0):
    return build_schedule(d, tau, alpha, eps, 1.0, 0.5, K0, T0, P0, r0, horizon=horizon)


def rotor_problem(eps, D=3, N=12, extra=None):
    prob, _ = build_problem(catalog("rotors2d", eps=eps, D=D, N=N))
    if extra:
        P = prob.P + FourierTaylor.from_terms(extra, prob.P.base_point, prob.P.taylor_degree,
                                              prob.P.mode_cutoff, prob.r, prob.s)
        prob = dataclasses.replace(prob, P=P)
    return prob


def frequency_at_center(K):
    return np.array([S.evaluate(S.derivative(K, ("y", i)), K.base_point, np.zeros(K.d)).real
                     for i in range(K.d)])


@pytest.fixture(scope="module")
def compliant():
    prob = rotor_problem(1e-36)
    run = iterate(prob, max_steps=3, stop_tol=0)
    return prob, run, compose_and_extract(run)


@pytest.fixture(scope="module")
def shifted():
    # <P> depends on y, so the centers move
    prob = rotor_problem(1e-5, N=10, extra={((0, 0), (1, 0)): 0.3, ((0, 0), (0, 2)): 0.2})
    run = iterate(prob, max_steps=3, stop_tol=0, force=True)
    return prob, run, compose_and_extract(run)


# ---------------------------------------------------------------- schedule


def test_schedule_radii_and_cutoffs():
    sc = schedule()
    assert sc.sigma0 == 0.25
    assert sc.sigma[3] == 0.03125
    assert sc.s_j[1] == 0.75 and sc.s_j[2] == 0.625
    for j in range(sc.horizon):
        assert sc.kappa[j + 1] == pytest.approx(4 * sc.kappa[j], rel=1e-15)
        assert sc.r[j + 1] < sc.r[j] and sc.s_j[j + 1] < sc.s_j[j]
        assert sc.s_j[j + 1] > sc.s_star
        assert sc.K[j] <= math.sqrt(2) * sc.K0 and sc.T[j] <= math.sqrt(2) * sc.T0
    assert sc.kappa[0] == pytest.approx(4 * math.log(1 / sc.eps_tilde) / 0.25)


def test_schedule_theta_recursion():
    sc = schedule()
    assert sc.log_theta[2] == pytest.approx(2 * sc.log_theta[1], rel=1e-14)
    assert sc.theta_recursion_defect() < 1e-12


@given(st.floats(-80, -40), st.floats(-80, -40))
def test_schedule_first_P_independent_of_eps(le1, le2):
    a, b = schedule(eps=math.exp(le1)), schedule(eps=math.exp(le2))
    assert a.log_P[1] == pytest.approx(b.log_P[1], rel=1e-12)


def test_schedule_rejects_bad_input():
    with pytest.raises(ValueError, match="must be < 1"):
        schedule(eps=0.2)
    with pytest.raises(ValueError):
        schedule(eps=0.0)
    with pytest.raises(S.DomainError):
        build_schedule(2, 1.0, 0.5, 1e-30, 0.5, 0.5, 1.0, 1.0, 1.0, 1.0)


def test_first_step_conditions_margin():
    sc = schedule(alpha=0.1, r0=0.5, T0=1.0)
    lhs, rhs, ok = sc.first_step_conditions()["alpha_radius"]
    assert ok and rhs / lhs == pytest.approx(5.0)
    lhs, rhs, ok = schedule(alpha=0.6, r0=0.5, T0=1.0).first_step_conditions()["alpha_radius"]
    assert not ok


def test_schedule_compliance_grows_with_eps():
    assert schedule(eps=1e-40).convergence_condition()[1]
    assert not schedule(eps=1e-6).convergence_condition()[1]


# ---------------------------------------------------------------- runs


def test_zero_perturbation_run():
    prob = rotor_problem(0.0)
    run = iterate(prob)
    assert run.converged and run.n_steps == 0
    assert run.final_residual == 0.0
    tor = compose_and_extract(run)
    assert tor.norms["weighted_max"] == 0.0
    assert np.array_equal(tor.y_star, prob.y0)


def test_unforced_run_stops_on_violation():
    run = iterate(rotor_problem(1e-6, D=2, N=6), max_steps=2)
    assert run.status == "failed" and "theoretical conditions violated" in run.reason
    assert run.n_steps == 0


def test_compliant_run_all_conditions(compliant):
    prob, run, tor = compliant
    assert run.status == "stopped" and run.n_steps == 3 and not run.warnings
    for rec in run.steps:
        assert rec.compliant and rec.output.bounds.compliant
        assert all(ok for _, _, _, ok in rec.output.checks)
    assert run.schedule.theta_recursion_defect() < 1e-12


def test_compliant_run_measured_below_schedule(compliant):
    prob, run, tor = compliant
    for rec in run.steps:
        assert rec.output.info["measured_P"] <= rec.output.info["theoretical_P"] * (1 + 1e-12)


def test_compliant_torus_within_bound(compliant):
    prob, run, tor = compliant
    assert tor.norms["weighted_max"] <= tor.bound
    assert tor.norms["osc_v"] <= 2 * tor.norms["v"] * (1 + 1e-12)


@pytest.mark.parametrize("which", ["compliant", "shifted"])
def test_frequency_pinned(which, request):
    prob, run, tor = request.getfixturevalue(which)
    assert np.max(np.abs(frequency_at_center(run.K_final) - prob.omega)) < 1e-12


def test_quadratic_convergence(shifted):
    prob, run, tor = shifted
    ex = run.residual_exponents()
    assert len(ex) == 2
    assert all(1.9 < e < 2.1 for e in ex), ex
    assert run.map_defect < 1e-15


def test_center_shifts_telescope(shifted):
    prob, run, tor = shifted
    tel = tor.telescoping
    # grad(K + eps <P>) = omega with K = |y|^2/2 and <P> = 0.3 y1 + 0.2 (y2 - y2_0)^2
    assert run.centers[1][0] == pytest.approx(1 - 0.3 * prob.eps, abs=1e-15)
    assert run.centers[1][1] == pytest.approx(run.centers[0][1], abs=1e-15)
    assert tel["step_shifts"][0] <= tel["step_bounds"][0]
    assert tel["shift"] <= tel["sum_of_steps"] * (1 + 1e-12)
    sc, P1 = run.schedule, run.steps[1].output.info["measured_P"]
    assert tel["step_shifts"][1] <= 8 * math.sqrt(2) * sc.T0 * prob.eps ** 2 * P1 / sc.r[1]
    assert np.array_equal(tor.y_star, run.centers[-1])


def test_scale_invariance():
    # H = K + eps P is unchanged by P -> 2P, eps -> eps/2
    prob = rotor_problem(1e-5, D=3, N=8)
    twice = dataclasses.replace(prob, P=2 * prob.P, eps=prob.eps / 2)
    a = iterate(prob, max_steps=2, stop_tol=0, force=True)
    b = iterate(twice, max_steps=2, stop_tol=0, force=True)
    assert a.schedule.eps_tilde == pytest.approx(b.schedule.eps_tilde, rel=1e-15)
    assert np.allclose(a.log_rho, b.log_rho, rtol=1e-12)
    for ca, cb in zip(a.centers, b.centers):
        assert np.max(np.abs(ca - cb)) < 1e-15
    ta, tb = compose_and_extract(a), compose_and_extract(b)
    for fa, fb in zip(ta.u + ta.v, tb.u + tb.v):
        assert (fa - fb).coef_norm() < 1e-16


def test_measured_bounds_rotor():
    prob = rotor_problem(1e-6)
    Kbar, Tbar, Pbar = measured_bounds(prob.K, prob.P, prob.r, prob.s)
    assert Kbar == pytest.approx(1.0) and Tbar == pytest.approx(1.0)
    # cos x1 + cos(x1 + x2): two modes pairs, weights e^s and e^(2s)
    assert Pbar == pytest.approx(math.exp(prob.s) + math.exp(2 * prob.s), rel=1e-14)
