"""One quadratic KAM step with fixed frequency.

Given H = K(y) + eps P(y, x) around a center where K_y = omega, the step
builds the near-identity symplectic map generated by y'.x + eps g(y', x),
moves the center so the frequency stays omega, and returns
H' = K' + eps^2 P' together with measured norms and their a-priori bounds.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import series as S
from .constants import build_constants
from .diophantine import uniform_divisor_radius
from .series import FourierTaylor, DomainError, majorant_norm


class StepFailure(RuntimeError):
    """A step could not be completed; ``details`` names the failed inequality."""

    def __init__(self, reason, **details):
        super().__init__(reason)
        self.reason = reason
        self.details = details


# ---------------------------------------------------------------- inputs


@dataclass
class StepInput:
    K: FourierTaylor  # y-only, centered at the current center
    P: FourierTaylor
    r: float
    s: float
    sigma: float
    eps: float
    omega: np.ndarray
    alpha: float
    tau: float
    Kbar: float
    Tbar: float
    Pbar: float
    kappa: Optional[float] = None  # imposed cutoff (iteration schedule)
    r_out: Optional[float] = None  # imposed output radius
    grid_oversample: int = 4
    newton_tol: float = 1e-12
    newton_max_iter: int = 50
    fp_tol: float = 1e-13
    fp_max_iter: int = 100
    force: bool = False

    def __post_init__(self):
        self.omega = np.asarray(self.omega, float).reshape(-1)
        if not 0 < 2 * self.sigma < self.s <= 1:
            raise DomainError(f"need 0 < 2 sigma < s <= 1, got sigma={self.sigma}, s={self.s}")
        if self.eps < 0:
            raise ValueError("eps must be nonnegative")

    @property
    def d(self):
        return self.omega.size

    @property
    def center(self):
        return self.K.base_point


# ---------------------------------------------------------------- arithmetic


def cutoff_parameters(sigma, alpha, eps, Pbar, Kbar, nu, d):
    """lambda at its lower bound log(sigma^{2nu+d} alpha^2 / (eps Pbar Kbar)); kappa = 4 lambda / sigma."""
    if eps == 0:
        return math.inf, math.inf
    x = eps * Pbar * Kbar / alpha ** 2
    if not x < sigma ** (2 * nu + d):
        raise StepFailure("perturbation too large for cutoff",
                          lhs=x, rhs=sigma ** (2 * nu + d),
                          inequality="eps Pbar Kbar / alpha^2 < sigma^(2 nu + d)")
    lam = math.log(sigma ** (2 * nu + d) / x)
    return lam, 4 * lam / sigma


@dataclass
class StepBounds:
    lam: float
    kappa: float
    r_check: float
    r_bar: float
    L: float
    L_bar: float
    s_bar: float
    s_prime: float
    s_second: float
    w: float  # action weight max(Kbar/alpha, 1/r)
    smallness_lhs: float  # eps L
    smallness_rhs: float  # sigma / 3
    bounds: dict = field(default_factory=dict)

    @property
    def compliant(self):
        return self.smallness_lhs <= self.smallness_rhs


def step_bounds(inp: StepInput, table=None) -> StepBounds:
    """A-priori radii, cutoff and the bound chain for one step (arithmetic only)."""
    d, tau = inp.d, inp.tau
    table = table or build_constants(max(d, 1), max(tau, 1.0))
    nu = tau + 1
    a, r, s, sg, eps = inp.alpha, inp.r, inp.s, inp.sigma, inp.eps
    K_, T_, P_ = inp.Kbar, inp.Tbar, inp.Pbar
    C0, C1, C2, C4 = table[0], table[1], table[2], table[4]
    if eps == 0:
        lam, kappa = math.inf, math.inf
    else:
        x = eps * P_ * K_ / a ** 2
        if x == 0:
            lam = math.inf
        elif math.isinf(x):
            lam = -math.inf
        else:
            lam = math.log(sg ** (2 * nu + d) / x)
        kappa = 4 * lam / sg
        if not kappa > 0:  # only reachable by forced runs: keep every mode
            kappa = float(inp.P.mode_cutoff)
    if inp.kappa is not None:
        kappa = inp.kappa
    r_check = 5 / (24 * d) * r / (T_ * K_)
    r_div = uniform_divisor_radius(a, d, K_, kappa, tau) if math.isfinite(kappa) and kappa > 0 else r_check
    r_bar = min(r_check, r_div)
    mx = max(1.0, a / (r * K_))
    L = P_ * max(40 * d * T_ ** 2 * K_ / r ** 2 * sg ** -(nu + d),
                 C4 / math.sqrt(2) * mx * K_ / a ** 2 * sg ** (-2 * (nu + d)))
    L_bar = 6 * C0 / math.sqrt(2) * mx * P_ * K_ / a ** 2 * sg ** -(2 * nu + d + 1)
    b = {
        "g_x": C1 * P_ / a * sg ** -(nu + d),
        "dy_g": L_bar,
        "eps_P3": C2 * sg ** -d * P_ * math.exp(-lam) if math.isfinite(lam) else 0.0,
        "P1": d ** 2 * C1 ** 2 * K_ * P_ ** 2 / a ** 2 * sg ** (-2 * (nu + d)),
        "P2": 6 * d * C1 * P_ ** 2 / (a * r) * sg ** -(nu + d),
        "P_prime": L * P_,
        "y_shift": 8 * eps * T_ * P_ / r,
        "W_disp": sg ** (d - 1) * L / d ** 2,
        "dx_phi": sg ** (d - 1) * L / d ** 2,
        "T_tilde": T_ * L,
        "d2K_tilde": K_ * L,
    }
    return StepBounds(lam, kappa, r_check, r_bar, L, L_bar, s - 2 * sg / 3, s - sg, s - 5 * sg / 6,
                      max(K_ / a, 1 / r), eps * L, sg / 3, b)


# ---------------------------------------------------------------- homological equation


@dataclass
class HomologicalSolution:
    g: FourierTaylor
    g_x: list
    g_y: list
    residual: float  # coefficient majorant of K_y.g_x + p_kappa P - <P>
    min_divisor: float
    modes: np.ndarray


def _zero_mode(f):
    """Taylor coefficients of the k = 0 part, shape (n_mono,)."""
    return f.coef[(slice(None),) + (f.mode_cutoff,) * f.d]


def _active_modes(d, N, kappa):
    K = S._modes(d, N).reshape(d, -1)
    l1 = np.abs(K).sum(axis=0)
    sel = np.flatnonzero((l1 > 0) & (l1 <= min(kappa, N)))
    return sel, K[:, sel]


def solve_homological(K: FourierTaylor, P: FourierTaylor, omega, kappa, r_bar, s_bar,
                      alpha=None, tau=None, certify=True) -> HomologicalSolution:
    """g = sum_{0<|n|<=kappa} -P_n(y) / (i K_y(y).n) e^{i n.x}, Taylor-expanded in y.

    The divisors are inverted by a geometric series about the center, which
    is exact up to degree D when the truncation radius keeps the ratio q of
    the y-dependent part to the constant part below one.
    """
    d = P.d
    D, N = P.taylor_degree, P.mode_cutoff
    P = P.resize(D, N)
    Kd = K.resize(D=max(D + 1, K.taylor_degree))  # differentiate before truncating
    nm = len(S.monomials(d, D))
    grad = []
    for i in range(d):
        gi = S.derivative(Kd, ("y", i)).resize(D=D)
        grad.append(_zero_mode(gi))
    grad = np.array(grad)  # (d, nm)
    sel, modes = _active_modes(d, N, kappa)
    zero = FourierTaylor.zeros(d, D, N, P.base_point, r_bar, s_bar)
    if sel.size == 0:
        gx = [zero] * d
        return HomologicalSolution(zero, gx, [zero] * d, _residual(Kd, gx, P, kappa, r_bar, s_bar),
                                   math.inf, modes)
    A = grad.T @ modes  # (nm, n_modes): Taylor coefficients of K_y(y).n
    a0 = A[0].copy()
    Bm = A.copy()
    Bm[0] = 0
    rp = r_bar ** S._mono_degree(d, D).astype(float)
    with np.errstate(divide="ignore"):
        q = (np.abs(Bm) * rp[:, None]).sum(axis=0) / np.abs(a0)
    bad = np.flatnonzero(~(q < 1))
    if bad.size:
        i = bad[np.argmax(q[bad])]
        raise StepFailure("small divisor violation", mode=tuple(int(v) for v in modes[:, i]),
                          divisor=float(a0[i].real), ratio=float(q[i]))
    l1 = np.abs(modes).sum(axis=0).astype(float)
    if certify and alpha is not None:
        lower = (1 - q) * np.abs(a0) * l1 ** tau
        viol = np.flatnonzero(lower < alpha / 2 * (1 - 1e-12))
        if viol.size:
            i = viol[np.argmin(lower[viol])]
            raise StepFailure("small divisor violation", mode=tuple(int(v) for v in modes[:, i]),
                              lower_bound=float(lower[i] / l1[i] ** tau),
                              required=float(alpha / (2 * l1[i] ** tau)),
                              inequality="|K_y(y').n| >= alpha / (2 |n|^tau)")
    # Horner for sum_j (-B/a0)^j up to degree D
    t = -Bm / a0[None]
    e0 = np.zeros_like(t, dtype=complex)
    e0[0] = 1
    Sg = e0.copy()
    for _ in range(D):
        Sg = e0 + S._poly_mul_rows(t.astype(complex), Sg, d, D)
    inv = Sg / a0[None]
    inv_maj = (np.abs(inv) * rp[:, None]).sum(axis=0)
    inv_drop = np.maximum(1 / (np.abs(a0) * (1 - q)) - inv_maj, 0.0)
    Pn = P.coef.reshape(nm, -1)[:, sel]
    gn = 1j * S._poly_mul_rows(Pn, inv.astype(complex), d, D)
    # dropped degree > D part of P_n * inv, graded majorant bound
    deg = S._mono_degree(d, D)
    GP = np.array([(np.abs(Pn[deg == j]) * r_bar ** j).sum(axis=0) for j in range(D + 1)])
    GI = np.array([(np.abs(inv[deg == j]) * r_bar ** j).sum(axis=0) for j in range(D + 1)])
    prod_drop = np.zeros(len(sel))
    for i in range(D + 1):
        for j in range(D + 1 - i, D + 1):
            prod_drop += GP[i] * GI[j]
    per_mode = (prod_drop + (np.abs(Pn) * rp[:, None]).sum(axis=0) * inv_drop) * np.exp(s_bar * l1)
    coef = np.zeros((nm, (2 * N + 1) ** d), complex)
    coef[:, sel] = gn
    coef = S._realify(coef.reshape((nm,) + (2 * N + 1,) * d))
    g = FourierTaylor(coef, P.base_point, D, N, float(per_mode.sum()), r_bar, s_bar)
    g_x = [S.derivative(g, ("x", i))._replace(tail=float((per_mode * np.abs(modes[i])).sum()))
           for i in range(d)]
    g_y = [S.derivative(g, ("y", i)).resize(D=D) for i in range(d)]
    res = _residual(Kd, g_x, P, kappa, r_bar, s_bar)
    min_div = float(np.min((1 - q) * np.abs(a0)))
    return HomologicalSolution(g, g_x, g_y, res, min_div, modes)


def _residual(K, g_x, P, kappa, r, s):
    d = P.d
    R = S.project_modes(P, kappa) - S.average(P)
    for i in range(d):
        Ky = S.derivative(K, ("y", i)).resize(D=P.taylor_degree)
        R = R + S.multiply(Ky.with_domain(r, s), g_x[i])
    return R.coef_norm(r, s)


# ---------------------------------------------------------------- perturbation pieces


def split_perturbation(K, P, g_x, eps, kappa):
    """(P1, P2, P3): second-order remainder of K, first-order remainder of P, high modes / eps."""
    P1 = S.taylor_increment(K.resize(D=P.taylor_degree, N=P.mode_cutoff), g_x, eps, order=2)
    P2 = S.taylor_increment(P, g_x, eps, order=1)
    high = P - S.project_modes(P, kappa)
    P3 = high / eps if eps else high * 0.0
    return P1, P2, P3


# ---------------------------------------------------------------- Newton for the center


@dataclass
class NewtonResult:
    delta: np.ndarray
    y_new: np.ndarray
    iterations: int
    residual: float


def _grad_hess(Kp):
    d = Kp.d
    grad = [S.derivative(Kp, ("y", i)) for i in range(d)]
    hess = [[S.derivative(gi, ("y", j)) for j in range(d)] for gi in grad]
    return grad, hess


def _eval_y(f, delta):
    return S.evaluate_many(f, np.atleast_2d(delta), np.zeros((1, f.d)), relative=True)[0].real


def newton_frequency_shift(Kp: FourierTaylor, omega, r_check, tol=1e-12, max_iter=50) -> NewtonResult:
    """Solve K'_y(y') = omega near the center, tracking the offset exactly."""
    omega = np.asarray(omega, float)
    d = omega.size
    grad, hess = _grad_hess(Kp)
    tol_abs = tol * max(1.0, float(np.max(np.abs(omega))))
    delta = np.zeros(d)
    F = np.array([_eval_y(g, delta) for g in grad]) - omega
    it = 0
    while True:
        res = float(np.max(np.abs(F)))
        if res == 0 or (res < tol_abs and it > 0):
            break
        if it >= max_iter:
            raise StepFailure("Newton did not converge", residual=res, iterations=it)
        H = np.array([[_eval_y(h, delta) for h in row] for row in hess])
        try:
            step = np.linalg.solve(H, F)
        except np.linalg.LinAlgError:
            raise StepFailure("singular Hessian in Newton iteration", iterations=it)
        delta = delta - step
        it += 1
        if float(np.max(np.abs(delta))) > r_check:
            raise StepFailure("Newton left the search ball", shift=float(np.max(np.abs(delta))),
                              radius=r_check, inequality="|y' - y| <= r_check")
        F = np.array([_eval_y(g, delta) for g in grad]) - omega
    return NewtonResult(delta, Kp.base_point + delta, it, float(np.max(np.abs(F))))


# ---------------------------------------------------------------- angle inversion


@dataclass
class InversionResult:
    phi_x: list
    iterations: int
    contraction: float
    increment: float


def invert_angle_map(g_y, eps, grid_oversample=4, tol=1e-13, max_iter=100) -> InversionResult:
    """Fixed point u = -g_y(y, x + eps u), so that x = x' + eps u inverts x' = x + eps g_y."""
    d = len(g_y)
    zero = [gi * 0.0 for gi in g_y]
    if eps == 0:
        return InversionResult(zero, 0, 0.0, 0.0)
    dxg = max(sum(majorant_norm(S.derivative(gi, ("x", j))) for j in range(d)) for gi in g_y)
    contraction = abs(eps) * dxg
    if not contraction < 1:
        raise StepFailure("angle map is not a contraction", contraction=contraction,
                          inequality="eps ||d_x g_y|| < 1")
    u = [-gi for gi in g_y]
    inc = math.inf
    it = 0
    for it in range(1, max_iter + 1):
        new = [-v for v in S.compose_angle(g_y, u, eps, grid_oversample, estimate_aliasing=False)]
        diff = max((new[i] - u[i]).coef_norm() for i in range(d))
        scale = max(1.0, max(v.coef_norm() for v in new))
        u = new
        inc = diff
        if diff <= tol * scale:
            break
    else:
        raise StepFailure("angle inversion did not converge", increment=inc, iterations=max_iter)
    # final pass on two grids for the aliasing estimate
    u = [-v for v in S.compose_angle(g_y, u, eps, grid_oversample, estimate_aliasing=True)]
    return InversionResult(u, it + 1, contraction, inc)


# ---------------------------------------------------------------- the step


@dataclass
class StepOutput:
    center: np.ndarray
    y_new: np.ndarray
    delta: np.ndarray
    eps: float
    K_new: FourierTaylor
    P_new: FourierTaylor
    T_new: np.ndarray
    T_tilde: np.ndarray
    g: FourierTaylor
    g_x: list
    g_y: list
    phi_x: list  # angle correction of the inverse map, centered at the old center
    gx_phi: list  # g_x composed with the inverse angle map, old center
    r_out: float
    s_out: float
    bounds: StepBounds
    measured: dict
    checks: list
    info: dict

    def as_dict(self):
        return {
            "center": self.center.tolist(), "y_new": self.y_new.tolist(),
            "delta": self.delta.tolist(), "eps": self.eps, "r_out": self.r_out, "s_out": self.s_out,
            "T_new": self.T_new.tolist(), "T_tilde": self.T_tilde.tolist(),
            "bounds": {"lambda": self.bounds.lam, "kappa": self.bounds.kappa,
                       "r_check": self.bounds.r_check, "r_bar": self.bounds.r_bar,
                       "L": self.bounds.L, "L_bar": self.bounds.L_bar,
                       "s_bar": self.bounds.s_bar, "s_prime": self.bounds.s_prime,
                       "eps_L": self.bounds.smallness_lhs, "sigma_over_3": self.bounds.smallness_rhs,
                       "compliant": self.bounds.compliant, **self.bounds.bounds},
            "measured": self.measured,
            "checks": [dict(name=n, measured=m, bound=b, ok=ok) for n, m, b, ok in self.checks],
            "info": self.info,
        }


def hessian_matrix(K: FourierTaylor, delta=None):
    d = K.d
    delta = np.zeros(d) if delta is None else delta
    return np.array([[_eval_y(S.derivative(S.derivative(K, ("y", i)), ("y", j)), delta)
                      for j in range(d)] for i in range(d)])


def _mat_norm(M):
    return float(np.max(np.sum(np.abs(np.atleast_2d(M)), axis=1)))


def assemble_step(inp: StepInput, table=None) -> StepOutput:
    """Run one step; raise StepFailure when a required inequality fails."""
    d = inp.d
    table = table or build_constants(max(d, 1), max(inp.tau, 1.0))
    b = step_bounds(inp, table)
    if not b.compliant and not inp.force:
        raise StepFailure("step smallness condition violated", lhs=b.smallness_lhs, rhs=b.smallness_rhs,
                          inequality="eps L <= sigma / 3")
    K, P, eps = inp.K, inp.P, inp.eps
    # The tail of P is an absolute error eps*tail in H that no later step can
    # remove; it is reported for the caller to accumulate instead of being
    # divided by eps inside the high-mode part.
    carried = P.truncation_tail
    P = P._replace(tail=0.0)
    D, N = P.taylor_degree, P.mode_cutoff
    center = K.base_point.copy()
    K = K.resize(D=D)
    if inp.kappa is None:
        if eps > 0:
            x = eps * inp.Pbar * inp.Kbar / inp.alpha ** 2
            if not x < inp.sigma ** (2 * (inp.tau + 1) + d) and not inp.force:
                cutoff_parameters(inp.sigma, inp.alpha, eps, inp.Pbar, inp.Kbar, inp.tau + 1, d)
    kappa = b.kappa if math.isfinite(b.kappa) else float(N)
    r_bar, s_bar = b.r_bar, b.s_bar
    r_out = inp.r_out if inp.r_out is not None else r_bar / 2
    T_old = np.linalg.inv(hessian_matrix(K))
    avgP = S.average(P)

    if eps == 0:
        Pn = P.with_domain(r_out, b.s_prime)
        z = [FourierTaylor.zeros(d, D, N, center, r_bar, s_bar)] * d
        measured = {k: 0.0 for k in b.bounds}
        measured["P_prime"] = majorant_norm(P, r=r_out, s=b.s_prime)
        return StepOutput(center, center.copy(), np.zeros(d), 0.0, K, Pn, T_old, np.zeros((d, d)),
                          z[0], z, z, z, z, r_out, b.s_prime, b, measured, [],
                          {"identity": True, "carried_tail": carried})

    # new integrable part and frequency-fixing center
    Kp = K + eps * avgP.resize(D=D)
    newton = newton_frequency_shift(Kp, inp.omega, b.r_check, inp.newton_tol, inp.newton_max_iter)
    delta = newton.delta
    if float(np.max(np.abs(delta))) >= r_bar / 2 and not inp.force:
        raise StepFailure("new center outside the shrunk polydisc", shift=float(np.max(np.abs(delta))),
                          radius=r_bar / 2, inequality="|y' - y| < r_bar / 2")

    # homological equation at the old center
    hom = solve_homological(K, P.with_domain(inp.r, inp.s), inp.omega, kappa, r_bar, s_bar,
                            inp.alpha, inp.tau, certify=(d >= 2 and not inp.force))
    Kr = K.with_domain(inp.r, inp.s)
    P1, P2, P3 = split_perturbation(Kr, P.with_domain(inp.r, inp.s), hom.g_x, eps, kappa)
    Pplus = (P1 + P2 + P3.with_domain(r_bar, s_bar)).with_domain(r_bar, s_bar)

    inv = invert_angle_map(hom.g_y, eps, inp.grid_oversample, inp.fp_tol, inp.fp_max_iter)
    composed = S.compose_angle([Pplus] + list(hom.g_x), inv.phi_x, eps, inp.grid_oversample)
    P_comp, gx_phi = composed[0], composed[1:]

    s_prime = b.s_prime
    if P_comp.s < s_prime - 1e-15 and not inp.force:
        raise StepFailure("angle width lost in composition exceeds sigma/3",
                          width=P_comp.s, required=s_prime)
    y_new = center + delta
    P_new = S.recenter(P_comp, y_new).with_domain(r_out, min(s_prime, P_comp.s))
    K_new = S.recenter(Kp.with_domain(inp.r, inp.s), y_new).with_domain(r_out, min(s_prime, P_comp.s))

    # inverse Hessian update without cancellation: T' = (T^{-1} + eps E)^{-1}
    Hold = hessian_matrix(K)
    dK = hessian_matrix(K, delta) - Hold  # O(|delta|), evaluated from offsets
    E = dK / eps + hessian_matrix(avgP.resize(D=D), delta)
    T_new = np.linalg.inv(Hold + eps * E)
    T_tilde = -T_new @ E @ T_old
    if not np.all(np.isfinite(T_new)):
        raise StepFailure("new Hessian is singular")

    # measurements
    w = b.w
    half = r_bar / 2
    gxphi_c = [S.recenter(v, y_new) for v in gx_phi]
    phix_c = [S.recenter(v, y_new) for v in inv.phi_x]
    dxphi = max(sum(majorant_norm(S.derivative(phix_c[i], ("x", j)), r=half, s=s_prime)
                    for j in range(d)) for i in range(d))
    avg_yy = [[S.derivative(S.derivative(avgP, ("y", i)), ("y", j)) for j in range(d)] for i in range(d)]
    measured = {
        "g_x": max(majorant_norm(v, r=r_bar, s=s_bar) for v in hom.g_x),
        "dy_g": max(majorant_norm(v, r=r_bar, s=s_bar) for v in hom.g_y),
        "eps_P3": eps * majorant_norm(P3, r=r_bar, s=inp.s - inp.sigma / 2),
        "P1": majorant_norm(P1, r=r_bar, s=s_bar),
        "P2": majorant_norm(P2, r=r_bar, s=s_bar),
        "P_prime": majorant_norm(P_new, r=half, s=s_prime),
        "y_shift": float(np.max(np.abs(delta))),
        "W_disp": max(w * max(majorant_norm(v, r=half, s=s_prime) for v in gxphi_c),
                      max(majorant_norm(v, r=half, s=s_prime) for v in phix_c)),
        "dx_phi": dxphi,
        "T_tilde": _mat_norm(T_tilde),
        "d2K_tilde": S.matrix_norm(avg_yy, r=inp.r / 2, s=inp.s),
    }
    checks = [(k, measured[k], b.bounds[k], bool(measured[k] <= b.bounds[k])) for k in b.bounds]
    freq = np.array([_eval_y(S.derivative(K_new, ("y", i)), np.zeros(d)) for i in range(d)])
    info = {
        "homological_residual": hom.residual,
        "homological_residual_rel": hom.residual / max(P.coef_norm(r_bar, s_bar), 1e-300),
        "min_divisor": hom.min_divisor,
        "newton_iterations": newton.iterations,
        "newton_residual": newton.residual,
        "frequency_error": float(np.max(np.abs(freq - inp.omega))),
        "fixed_point_iterations": inv.iterations,
        "contraction": inv.contraction,
        "fixed_point_increment": inv.increment,
        "P_new_tail": P_new.truncation_tail,
        "P_new_coef_norm": P_new.coef_norm(half, s_prime),
        "kappa_used": kappa,
        "carried_tail": carried,
        "tails": {"g_x": max(v.truncation_tail for v in hom.g_x), "P1": P1.truncation_tail,
                  "P2": P2.truncation_tail, "P3": P3.truncation_tail, "P_plus": Pplus.truncation_tail,
                  "phi_x": max(v.truncation_tail for v in inv.phi_x),
                  "P_composed": P_comp.truncation_tail},
        "compliant": b.compliant,
    }
    return StepOutput(center, y_new, delta, eps, K_new, P_new, T_new, T_tilde, hom.g, hom.g_x, hom.g_y,
                      inv.phi_x, gx_phi, r_out, min(s_prime, P_comp.s), b, measured, checks, info)


# ---------------------------------------------------------------- the map itself


def apply_step_map(out: StepOutput, Y, X):
    """phi'(y', x') = (y' + eps g_x(y', X), X) with X = x' + eps phi_x(y', x')."""
    Y = np.atleast_2d(np.asarray(Y, dtype=complex if np.iscomplexobj(X) else float))
    X = np.atleast_2d(np.asarray(X))
    d = out.center.size
    eps = out.eps
    if eps == 0:
        return Y.copy(), X.copy()
    Xn = X + eps * np.column_stack([S.evaluate_many(f, Y, X) for f in out.phi_x])
    Yn = Y + eps * np.column_stack([S.evaluate_many(f, Y, Xn) for f in out.g_x])
    if not (np.iscomplexobj(Y) or np.iscomplexobj(X)):
        Xn, Yn = Xn.real, Yn.real
    return Yn, Xn


def step_jacobian(out: StepOutput):
    """Analytic Jacobian of the step map, as a function of one point; variables ordered (y, x)."""
    d = out.center.size
    eps = out.eps
    I = np.eye(d)
    if eps == 0:
        return lambda y, x: np.eye(2 * d)
    dphi_y = [[S.derivative(f, ("y", j)) for j in range(d)] for f in out.phi_x]
    dphi_x = [[S.derivative(f, ("x", j)) for j in range(d)] for f in out.phi_x]
    dg_y = [[S.derivative(f, ("y", j)) for j in range(d)] for f in out.g_x]
    dg_x = [[S.derivative(f, ("x", j)) for j in range(d)] for f in out.g_x]

    def ev(rows, Y, X):
        return np.array([[S.evaluate_many(f, Y, X)[0].real for f in row] for row in rows])

    def jac(y, x):
        y = np.asarray(y, float).reshape(1, d)
        x = np.asarray(x, float).reshape(1, d)
        Xn = x + eps * np.array([[S.evaluate_many(f, y, x)[0].real for f in out.phi_x]])
        # X = x + eps phi(y, x);  Y = y + eps g_x(y, X)
        dX_dy, dX_dx = eps * ev(dphi_y, y, x), I + eps * ev(dphi_x, y, x)
        gxx = ev(dg_x, y, Xn)
        dY_dy = I + eps * (ev(dg_y, y, Xn) + gxx @ dX_dy)
        dY_dx = eps * gxx @ dX_dx
        return np.block([[dY_dy, dY_dx], [dX_dy, dX_dx]])

    return jac
