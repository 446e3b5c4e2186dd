import math
import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st

from arnoldkam.diophantine import (Frequency, best_alpha, check_diophantine, min_divisor,
                                   shell_modes, uniform_divisor_radius)

GOLD = (1 + math.sqrt(5)) / 2


def brute_alpha(omega, tau, N):
    """min over the full box |k_i| <= N restricted to 0 < |k|_1 <= N."""
    omega = np.asarray(omega, float)
    d = omega.size
    ax = np.arange(-N, N + 1)
    K = np.stack(np.meshgrid(*([ax] * d), indexing="ij"), axis=-1).reshape(-1, d)
    l1 = np.abs(K).sum(axis=1)
    K, l1 = K[(l1 > 0) & (l1 <= N)], l1[(l1 > 0) & (l1 <= N)]
    return float(np.min(np.abs(K @ omega) * l1.astype(float) ** tau))


def test_resonant_vector():
    res = check_diophantine((1.0, 1.0), 1e-6, 1.0, 2)
    assert not res.ok
    assert res.worst_mode in ((1, -1), (-1, 1))
    assert res.worst_value == 0.0


def test_golden_below_best():
    a = best_alpha((1.0, GOLD), 1.0, 100)
    assert check_diophantine((1.0, GOLD), 0.99 * a, 1.0, 100).ok


@pytest.mark.parametrize("tau", [1.0, 2.0])
def test_one_dimensional(tau):
    assert best_alpha((0.3,), tau, 20) == pytest.approx(0.3)
    assert check_diophantine((0.3,), 0.3, tau, 20).ok
    assert not check_diophantine((0.3,), 0.3001, tau, 20).ok


def test_rational_ratio():
    assert best_alpha((1.0, 0.5), 1.0, 5) == 0.0


def test_golden_matches_brute_force_and_stabilizes():
    a1000 = best_alpha((1.0, GOLD), 1.0, 1000)
    assert a1000 == pytest.approx(brute_alpha((1.0, GOLD), 1.0, 1000), rel=1e-15)
    assert a1000 > 0
    assert best_alpha((1.0, GOLD), 1.0, 500) / a1000 < 1.01


def test_three_dimensional_brute_force():
    om = (1.0, 0.7548776662466927, 0.5698402909980532)
    assert best_alpha(om, 2.0, 12) == pytest.approx(brute_alpha(om, 2.0, 12), rel=1e-15)


@given(st.floats(0.1, 3.0), st.floats(0.1, 3.0), st.integers(1, 30))
def test_alpha_properties(a, b, N):
    om = (a, b)
    val = best_alpha(om, 1.0, N)
    assert check_diophantine(om, val, 1.0, N).ok
    assert best_alpha(om, 1.0, N + 1) <= val
    roundoff = 8 * np.finfo(float).eps * 2.5 * (a + b) * N * N  # |omega.k| |k| is exact only to this
    assert best_alpha((2.5 * a, 2.5 * b), 1.0, N) == pytest.approx(2.5 * val, rel=1e-12, abs=roundoff)


def test_shell_modes_skip_pairs():
    ks = shell_modes(3, 4)
    full = {tuple(k) for k in ks} | {tuple(-k) for k in ks}
    assert len(full) == 2 * len(ks)
    assert all(int(np.abs(k).sum()) == 4 for k in ks)
    # number of lattice points on the 3-d l1 sphere of radius n is 4 n^2 + 2
    assert 2 * len(ks) == 4 * 16 + 2


def test_divisor_radius_formula():
    assert uniform_divisor_radius(0.1, 2, 1.0, 10.0, 1.0) == pytest.approx(2.5e-4)
    a = uniform_divisor_radius(0.1, 2, 1.0, 10.0, 1.0)
    assert uniform_divisor_radius(0.1, 2, 1.0, 20.0, 1.0) == pytest.approx(a / 4)
    with pytest.raises(ValueError):
        uniform_divisor_radius(0.0, 2, 1.0, 10.0, 1.0)


@pytest.mark.parametrize("kappa", [4.0, 8.0])
def test_divisor_radius_certificate(kappa):
    om = np.array([1.0, GOLD - 1])
    tau = 1.0
    alpha = best_alpha(om, tau, int(kappa))
    r = uniform_divisor_radius(alpha, 2, 1.0, kappa, tau)  # K = |y|^2/2: K_yy = Id, norm 1
    assert min_divisor(lambda y: y, om, r, kappa, tau, n_samples=11) >= alpha / 2


def test_frequency_type():
    with pytest.raises(ValueError):
        Frequency((1.0, 2.0, 3.0), 0.1, 1.0)
    with pytest.raises(ValueError):
        Frequency((1.0, 2.0), 0.0, 1.0)
    with warnings.catch_warnings(record=True) as w:
        warnings.simplefilter("always")
        f = Frequency(0.3, 0.3, 1.0)
    assert f.d == 1 and w
