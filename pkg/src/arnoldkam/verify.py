"""Checks of computed tori that do not reuse the construction itself."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import fft as sfft
from scipy import integrate, optimize

from . import series as S
from .series import FourierTaylor, majorant_norm


class SeparatrixError(ValueError):
    pass


# ---------------------------------------------------------------- flow


def hamiltonian_field(K: FourierTaylor, P: FourierTaylor, eps):
    """Vectorized (y, x) -> (-H_x, H_y) for H = K + eps P, points as rows."""
    d = K.d
    Ky = [S.derivative(K, ("y", i)) for i in range(d)]
    Py = [S.derivative(P, ("y", i)) for i in range(d)]
    Px = [S.derivative(P, ("x", i)) for i in range(d)]

    def field(Y, X):
        Xd = np.zeros_like(X)
        ydot = np.column_stack([-eps * S.evaluate_many(Px[i], Y, X).real for i in range(d)])
        xdot = np.column_stack([S.evaluate_many(Ky[i], Y, Xd).real + eps * S.evaluate_many(Py[i], Y, X).real
                                for i in range(d)])
        return ydot, xdot

    return field


def flow(K, P, eps, Y, X, T, rtol=1e-12, atol=1e-12):
    """Time-T map of H = K + eps P at the rows of (Y, X); DOP853."""
    Y = np.atleast_2d(np.asarray(Y, float))
    X = np.atleast_2d(np.asarray(X, float))
    n, d = Y.shape
    field = hamiltonian_field(K, P, eps)

    def rhs(_t, z):
        z = z.reshape(2, n, d)
        a, b = field(z[0], z[1])
        return np.concatenate([a.ravel(), b.ravel()])

    sol = integrate.solve_ivp(rhs, (0.0, T), np.concatenate([Y.ravel(), X.ravel()]),
                              method="DOP853", rtol=rtol, atol=atol)
    if not sol.success:
        raise RuntimeError(f"integrator failed: {sol.message}")
    z = sol.y[:, -1].reshape(2, n, d)
    return z[0], z[1]


def invariance_error(K, P, eps, torus, T=1.0, n_samples=64, seed=0, rtol=1e-12):
    """max |Phi^T(phi(x)) - phi(x + omega T)| over sample angles."""
    d = torus.y0.size
    rng = np.random.default_rng(seed)
    th = rng.uniform(0, 2 * np.pi, (n_samples, d))
    Y, X = torus(th)
    Yt, Xt = flow(K, P, eps, Y, X, T, rtol=rtol, atol=rtol)
    Ye, Xe = torus(th + torus.omega * T)
    return float(max(np.max(np.abs(Yt - Ye)), np.max(np.abs(Xt - Xe))))


def torus_residual(K, P, eps, torus, n_grid=None):
    """sup over a real grid of |D_omega phi - X_H(phi)|, the invariance-equation defect."""
    d = torus.y0.size
    om = torus.omega
    N = torus.u[0].mode_cutoff
    n = n_grid or max(16, 4 * N + 2)
    ax = 2 * np.pi * np.arange(n) / n
    th = np.stack(np.meshgrid(*([ax] * d), indexing="ij"), axis=-1).reshape(-1, d)
    Y, X = torus(th)
    zero = np.zeros((1, d))
    du = np.column_stack([S.evaluate_many(S.frequency_derivative(c, om), zero, th).real for c in torus.u])
    dv = np.column_stack([S.evaluate_many(S.frequency_derivative(c, om), zero, th).real for c in torus.v])
    ydot, xdot = hamiltonian_field(K, P, eps)(Y, X)
    return float(max(np.max(np.abs(dv - ydot)), np.max(np.abs(om + du - xdot))))


# ---------------------------------------------------------------- symplecticity


def _J(d):
    I = np.eye(d)
    Z = np.zeros((d, d))
    return np.block([[Z, I], [-I, Z]])


def symplectic_defect(D):
    """max-entry size of D^T J D - J."""
    d = D.shape[0] // 2
    J = _J(d)
    return float(np.max(np.abs(D.T @ J @ D - J)))


def symplecticity_check(jacobian, center, radius, n_samples=100, seed=0):
    """max over random real points of |Dphi^T J Dphi - J|.

    ``jacobian(y, x)`` returns the 2d x 2d Jacobian in (y, x) order; points
    are drawn from the real polydisc of ``radius`` about ``center``.
    """
    center = np.asarray(center, float).reshape(-1)
    d = center.size
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_samples):
        y = center + radius * rng.uniform(-1, 1, d)
        x = rng.uniform(0, 2 * np.pi, d)
        worst = max(worst, symplectic_defect(np.asarray(jacobian(y, x), float)))
    return worst


# ---------------------------------------------------------------- oscillation


def _grid_values(f: FourierTaylor, M):
    """Real values of an x-only series on the M^d uniform grid."""
    d = f.d
    N = f.mode_cutoff
    vals = S._to_grid(f.coef[:1], N, M)[0]
    return vals.real


def _grid_size(d):
    return {1: 4096, 2: 4096}.get(d, int(round((4096 ** 2) ** (1 / d))))


def oscillation_estimate(v: FourierTaylor, M=None):
    """(sup - inf on a dense grid polished by local optimization, grid-halving change)."""
    d = v.d
    if v.taylor_degree != 0:
        v = v.resize(D=0)
    if not np.any(v.coef[0][S._mode_l1(d, v.mode_cutoff) > 0]):
        return 0.0, 0.0
    M = M or _grid_size(d)
    fine = _grid_values(v, M)
    coarse = _grid_values(v, M // 2)
    raw = float(fine.max() - fine.min())
    raw_coarse = float(coarse.max() - coarse.min())
    zero = np.zeros((1, d))
    ev = lambda x: float(S.evaluate_many(v, zero, np.atleast_2d(x)).real[0])
    ext = []
    for sign, idx in ((1, np.argmax(fine)), (-1, np.argmin(fine))):
        pos = np.array(np.unravel_index(idx, fine.shape), float) * 2 * np.pi / M
        res = optimize.minimize(lambda x: -sign * ev(x), pos, method="Nelder-Mead",
                                options={"xatol": 1e-12, "fatol": 1e-18, "maxiter": 2000})
        ext.append(max(sign * ev(pos), -res.fun))
    polished = ext[0] + ext[1]
    return max(polished, raw), abs(raw - raw_coarse)


def oscillation(v: FourierTaylor) -> float:
    """sup - inf of an x-only series over real angles."""
    return oscillation_estimate(v)[0]


# ---------------------------------------------------------------- pendulum oracle


@dataclass
class PendulumCurve:
    omega: float
    eps: float
    h: float  # energy label: y^2 = 2h + 2 eps (1 - cos x)
    sign: float
    osc: float

    def __call__(self, x):
        x = np.asarray(x, float)
        return self.sign * np.sqrt(2 * self.h + 2 * self.eps * (1 - np.cos(x)))


def pendulum_rotation_frequency(h, eps, tol=1e-13):
    """2 pi / int_0^{2 pi} dx / y(x) for the rotational orbit with label h > 0."""
    if eps == 0:
        return math.sqrt(2 * h)
    f = lambda x: 1.0 / math.sqrt(2 * h + 2 * eps * (1 - math.cos(x)))
    val, _ = integrate.quad(f, 0.0, math.pi, epsabs=0.0, epsrel=tol, limit=200)
    return 2 * math.pi / (2 * val)


def energy_labeled_oscillation(y0, eps):
    """osc of y = sqrt(y0^2 + 2 eps (1 - cos x)): 4 eps / (|y0| + sqrt(y0^2 + 4 eps))."""
    y0 = abs(y0)
    return 4 * eps / (y0 + math.sqrt(y0 * y0 + 4 * eps))


def pendulum_exact_curve(omega, eps, tol=1e-13) -> PendulumCurve:
    """Rotational curve of y^2/2 + eps (cos x - 1) with rotation frequency omega."""
    if eps < 0:
        raise ValueError("eps must be nonnegative")
    if omega == 0 or eps / omega ** 2 >= 0.25:
        raise SeparatrixError(
            f"inside separatrix region: eps/omega^2 = {eps / omega ** 2 if omega else math.inf:.6g} >= 1/4 "
            f"(primary tori need |y0| > 2 sqrt(eps))")
    w = abs(omega)
    sign = math.copysign(1.0, omega)
    if eps == 0:
        return PendulumCurve(omega, 0.0, w * w / 2, sign, 0.0)
    # frequency increases with h on (0, w^2/2], vanishing at the separatrix h = 0
    g = lambda h: pendulum_rotation_frequency(h, eps, tol) - w
    lo, hi = 0.0, w * w / 2
    while hi - lo > 4 * np.finfo(float).eps * hi:
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        if g(mid) < 0:
            lo = mid
        else:
            hi = mid
    h = 0.5 * (lo + hi)
    osc = math.sqrt(2 * h + 4 * eps) - math.sqrt(2 * h)
    return PendulumCurve(omega, eps, h, sign, osc)


def curve_gap(curve: PendulumCurve, torus, n=512):
    """max over theta of |y(theta) - curve(x(theta))| for a d = 1 torus."""
    th = (2 * np.pi * np.arange(n) / n)[:, None]
    Y, X = torus(th)
    return float(np.max(np.abs(Y[:, 0] - curve(X[:, 0]))))


# ---------------------------------------------------------------- Kolmogorov non-degeneracy


@dataclass
class KolmogorovRecord:
    energy_K_y0: float  # E = K(y0)
    energy_on_torus: float  # mean of H over the torus
    average_Qyy: list
    min_singular_value: float
    A_norm: float  # sup ||A||
    A_bound: float  # 2 ||d_x u||
    M_ratio: float  # sup ||K_yy(y0)^-1 M||
    M_bound: float  # (18 d^3 + 70) eps_hat theta
    invertible: bool

    def as_dict(self):
        return asdict(self)


def _sample_angles(d, n, s, tilted=True):
    ax = 2 * np.pi * np.arange(n) / n
    th = np.stack(np.meshgrid(*([ax] * d), indexing="ij"), axis=-1).reshape(-1, d).astype(complex)
    out = [th]
    if tilted and s > 0:
        for sig in S._tilts(d):
            out.append(th - 1j * s * np.asarray(sig, float))
    return out


def kolmogorov_check(K, P, eps, torus, theta=None, C_main=None, a=None, s=None, Kbar=None,
                     Pbar=None, alpha=None, n=None):
    """Normal-form data of H o phi with phi(y, x) = (y0 + v + (1 + A^T) y, x + u)."""
    d = K.d
    N = torus.u[0].mode_cutoff
    n = n or max(16, 4 * N + 2)
    s_star = torus.s_star
    du = [[S.derivative(c, ("x", j)) for j in range(d)] for c in torus.u]
    du_norm = max(sum(majorant_norm(e, s=s_star) for e in row) for row in du)
    if du_norm > 0.5:
        raise ValueError(f"||d_x u|| = {du_norm:.3g} > 1/2: id + u need not be a diffeomorphism")
    Kyy = [[S.derivative(S.derivative(K, ("y", i)), ("y", j)) for j in range(d)] for i in range(d)]
    Pyy = [[S.derivative(S.derivative(P, ("y", i)), ("y", j)) for j in range(d)] for i in range(d)]
    y0 = torus.y0
    H0 = np.array([[S.evaluate(Kyy[i][j], y0, np.zeros(d)) for j in range(d)] for i in range(d)])
    H0inv = np.linalg.inv(H0)
    zero = np.zeros((1, d))
    I = np.eye(d)
    A_sup, M_sup = 0.0, 0.0
    M_real_sum = np.zeros((d, d))
    n_real = 0
    for k, th in enumerate(_sample_angles(d, n, s_star)):
        U = np.array([[S.evaluate_many(e, zero, th) for e in row] for row in du])  # (d, d, n)
        Y, X = torus(th)
        Kp = np.array([[S.evaluate_many(Kyy[i][j], Y, X) for j in range(d)] for i in range(d)])
        Pp = np.array([[S.evaluate_many(Pyy[i][j], Y, X) for j in range(d)] for i in range(d)])
        B = np.linalg.inv(I + np.moveaxis(U, -1, 0))  # I + A, stacked over points
        A = B - I
        Q = np.moveaxis(Kp + eps * Pp, -1, 0)
        M = B @ Q @ np.swapaxes(B, 1, 2) - H0
        A_sup = max(A_sup, float(np.max(np.sum(np.abs(A), axis=2))))
        M_sup = max(M_sup, float(np.max(np.sum(np.abs(H0inv @ M), axis=2))))
        if k == 0:
            M_real_sum += M.real.sum(axis=0)
            n_real += M.shape[0]
    avgQ = H0 + M_real_sum / n_real
    sv = float(np.min(np.linalg.svd(avgQ, compute_uv=False)))
    # energy on the torus
    th = _sample_angles(d, n, 0, tilted=False)[0].real
    Y, X = torus(th)
    Hvals = S.evaluate_many(K, Y, X).real + eps * S.evaluate_many(P, Y, X).real
    E_torus = float(np.mean(Hvals))
    E0 = S.evaluate(K, y0, np.zeros(d))
    if None not in (theta, C_main, a, s, Kbar, Pbar, alpha):
        eps_hat = 2 * math.e * C_main * (s - s_star) ** -a * theta ** 3 * Kbar * eps * Pbar / alpha ** 2
        M_bound = (18 * d ** 3 + 70) * eps_hat * theta
    else:
        M_bound = math.inf
    return KolmogorovRecord(E0, E_torus, avgQ.tolist(), sv, A_sup, 2 * du_norm, M_sup, M_bound,
                            bool(sv > 0))


@dataclass
class VerificationReport:
    invariance_error: float
    invariance_T: float
    torus_residual: float
    symplecticity_defect: float
    oscillation: float
    oscillation_error: float
    torus_bound: float  # C theta^3 (s - s*)^-a eps_tilde
    torus_weighted_norm: float
    kolmogorov: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    def as_dict(self):
        return asdict(self)
