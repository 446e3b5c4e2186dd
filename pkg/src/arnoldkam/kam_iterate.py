"""The full iteration: parameter schedule, first step, later steps, limit torus.

Sizes that decay or grow doubly exponentially (eps^(2^j), P_j, theta_j)
are kept as natural logarithms; the float views may under/overflow.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import fft as sfft

from . import series as S
from .constants import ConstantsTable, build_constants
from .kam_step import StepFailure, StepInput, StepOutput, apply_step_map, assemble_step, hessian_matrix
from .series import FourierTaylor, majorant_norm

log = logging.getLogger(__name__)


def _exp(x):
    try:
        return math.exp(x)
    except OverflowError:
        return math.inf


def _log(x):
    return math.log(x) if x > 0 else -math.inf


# ---------------------------------------------------------------- schedule


@dataclass
class Schedule:
    d: int
    tau: float
    nu: float
    alpha: float
    eps: float
    eps_tilde: float  # K0 P0 eps / alpha^2
    theta0: float
    s: float
    s_star: float
    K0: float
    T0: float
    P0: float
    r0: float
    horizon: int
    sigma: list
    s_j: list
    s_bar: list
    kappa: list
    r: list
    K: list
    T: list
    log_P: list  # log P_j
    log_eps: list  # log eps_j (rescaled), j >= 1; entry 0 is eps_tilde
    log_theta: list  # log of the step parameters theta_j
    log_L: list
    lam0: float
    lam_star: float
    theta_star: float
    table: ConstantsTable = field(repr=False)

    @property
    def sigma0(self):
        return self.sigma[0]

    def P(self, j):
        return _exp(self.log_P[j])

    def theta(self, j):
        return _exp(self.log_theta[j])

    def L(self, j):
        return _exp(self.log_L[j])

    def log_eps_power(self, j):
        """log eps^(2^j)."""
        return 2 ** j * _log(self.eps)

    def step_eps(self, j):
        return _exp(self.log_eps_power(j))

    def weight(self, j):
        return max(self.K[j] / self.alpha, 1 / self.r[j])

    def theta_recursion_defect(self):
        """max over j >= 1 of |theta_{j+1} / theta_j^2 - 1|."""
        out = 0.0
        for j in range(1, self.horizon):
            a, b = self.log_theta[j + 1], 2 * self.log_theta[j]
            out = max(out, abs(math.expm1(a - b)))
        return out

    def first_step_conditions(self):
        """(alpha <= r0/T0, theta_0 <= 1) with margins."""
        return {"alpha_radius": (self.alpha, self.r0 / self.T0, self.alpha <= self.r0 / self.T0),
                "theta0": (self.theta(0), 1.0, self.log_theta[0] <= 0)}

    def convergence_condition(self):
        """C8 theta0^(1/8) theta_1 < 1."""
        lhs = math.log(self.table[8]) + math.log(self.theta0) / 8 + self.log_theta[1]
        return _exp(lhs), lhs < 0

    def step_conditions(self, j):
        """kappa_j >= 4 log(sigma^(2nu+d)/eps_j)/sigma and eps^(2^j) L_j <= sigma_j/3."""
        sg = self.sigma[j]
        need = 4 / sg * ((2 * self.nu + self.d) * math.log(sg) - self.log_eps[j])
        lhs = self.log_eps_power(j) + self.log_L[j]
        return {"cutoff": (need, self.kappa[j], self.kappa[j] >= need),
                "smallness": (_exp(lhs), sg / 3, lhs <= math.log(sg / 3))}

    def as_dict(self):
        rows = []
        for j in range(self.horizon + 1):
            rows.append({"j": j, "sigma": self.sigma[j], "s": self.s_j[j], "s_bar": self.s_bar[j],
                         "kappa": self.kappa[j], "r": self.r[j], "K": self.K[j], "T": self.T[j],
                         "log_P": self.log_P[j], "log_eps": self.log_eps[j],
                         "log_theta": self.log_theta[j], "log_L": self.log_L[j]})
        return {"eps_tilde": self.eps_tilde, "theta": self.theta0, "lambda0": self.lam0,
                "log_lambda_star": _log(self.lam_star), "theta_star": self.theta_star, "rows": rows}


def build_schedule(d, tau, alpha, eps, s, s_star, K0, T0, P0, r0, horizon=8, table=None) -> Schedule:
    if not 0 < s_star < s <= 1:
        raise S.DomainError(f"need 0 < s_star < s <= 1, got s={s}, s_star={s_star}")
    if eps <= 0:
        raise ValueError("the schedule needs eps > 0")
    table = table or build_constants(max(d, 1), max(tau, 1.0))
    nu = tau + 1.0
    theta0 = T0 * K0
    eps_t = K0 * P0 * eps / alpha ** 2
    if not eps_t < 1:
        raise ValueError(f"rescaled perturbation {eps_t:.3g} must be < 1")
    sigma0 = (s - s_star) / 2
    lam0 = math.log(1 / eps_t)
    kappa0 = 4 * lam0 / sigma0
    C4, C6, C7, C9 = table[4], table[6], table[7], table[9]
    lam_star = C7 * sigma0 ** -(4 * nu + 2 * d + 1) * lam0 ** (2 * nu) * theta0 ** 2
    theta_star = 2 ** (2 * nu + 2 * d + 1) * C6 ** 2 * theta0 ** 2
    n = horizon + 1
    sigma = [sigma0 / 2 ** j for j in range(n + 1)]
    s_j = [s]
    for j in range(n):
        s_j.append(s_j[-1] - sigma[j])
    s_bar = [s_j[j] - 2 * sigma[j] / 3 for j in range(n + 1)]
    kappa = [4 ** j * kappa0 for j in range(n + 1)]
    r = [r0]
    for j in range(n):
        r.append(0.5 * min(alpha / (2 * d * math.sqrt(2) * K0 * kappa[j] ** nu),
                           5 / (48 * d) * r[j] / theta0))
    K, T = [K0], [T0]
    for j in range(n):
        K.append(K[-1] * (1 + sigma[j] / 3))
        T.append(T[-1] * (1 + sigma[j] / 3))
    log_theta = [math.log(C9) - (2 * (nu + d) + 1) * math.log(sigma0) + math.log(eps_t * theta0)]
    log_P = [math.log(P0), log_theta[0] + math.log(P0) - math.log(eps)]
    log_eps = [math.log(eps_t)]
    lK0a = math.log(K0 / alpha ** 2)
    for j in range(1, n + 1):
        log_eps.append(lK0a + 2 ** j * math.log(eps) + log_P[j])
        log_theta.append(math.log(lam_star) + j * math.log(theta_star) + log_eps[j])
        log_P.append(math.log(lam_star) + (j - 1) * math.log(theta_star) + lK0a + 2 * log_P[j])
    log_P = log_P[: n + 1]
    log_L = []
    for j in range(n + 1):
        a1 = 80 * d * math.sqrt(2) * T0 * theta0 / r[j] ** 2 * sigma[j] ** -(nu + d)
        a2 = C4 * max(1.0, alpha / (r[j] * K[j])) * K0 / alpha ** 2 * sigma[j] ** (-2 * (nu + d))
        log_L.append(log_P[j] + math.log(max(a1, a2)))
    return Schedule(d, tau, nu, alpha, eps, eps_t, theta0, s, s_star, K0, T0, P0, r0, horizon,
                    sigma, s_j, s_bar, kappa, r, K, T, log_P, log_eps, log_theta, log_L,
                    lam0, lam_star, theta_star, table)


# ---------------------------------------------------------------- problem data


@dataclass
class Problem:
    """H = K(y) + eps P(y, x) about the center y0 with K_y(y0) = omega."""
    K: FourierTaylor
    P: FourierTaylor
    omega: np.ndarray
    alpha: float
    tau: float
    eps: float
    r: float
    s: float
    s_star: float
    grid_oversample: int = 4

    def __post_init__(self):
        self.omega = np.asarray(self.omega, float).reshape(-1)

    @property
    def d(self):
        return self.omega.size

    @property
    def y0(self):
        return self.K.base_point


def measured_bounds(K: FourierTaylor, P: FourierTaylor, r, s):
    """(Kbar, Tbar, Pbar): ||K_yy||_r, ||K_yy(y0)^-1||, ||P||_{r,s}, max-row-sum matrix norms."""
    d = K.d
    Kyy = [[S.derivative(S.derivative(K, ("y", i)), ("y", j)) for j in range(d)] for i in range(d)]
    Kbar = S.matrix_norm(Kyy, r=r, s=0.0)
    T = np.linalg.inv(hessian_matrix(K))
    Tbar = float(np.max(np.sum(np.abs(T), axis=1)))
    return Kbar, Tbar, majorant_norm(P, r=r, s=s)


# ---------------------------------------------------------------- the run


@dataclass
class StepRecord:
    j: int
    output: StepOutput
    log_rho: float  # log of eps^(2^(j+1)) ||P_{j+1}||_{r_{j+1}, s_{j+1}}
    conditions: dict
    compliant: bool
    seconds: float

    def as_dict(self):
        out = self.output.as_dict()
        out.update({"j": self.j, "log_rho_next": self.log_rho, "conditions": {
            k: {"lhs": v[0], "rhs": v[1], "ok": bool(v[2])} for k, v in self.conditions.items()},
            "schedule_compliant": self.compliant, "seconds": self.seconds})
        return out


@dataclass
class KamRun:
    problem: Problem
    schedule: Optional[Schedule]
    steps: list
    centers: list
    log_rho: list  # log rho_j, j = 0, 1, ...
    K_final: FourierTaylor
    P_final: FourierTaylor
    status: str  # "converged" | "stopped" | "failed"
    reason: str
    warnings: list
    map_defect: float  # accumulated inverse-map and truncation error of the transformations

    @property
    def n_steps(self):
        return len(self.steps)

    @property
    def converged(self):
        return self.status == "converged"

    def residual_exponents(self):
        """log rho_{j+1} / log rho_j for j >= 1."""
        lr = self.log_rho
        return [lr[j + 1] / lr[j] for j in range(1, len(lr) - 1)
                if math.isfinite(lr[j]) and math.isfinite(lr[j + 1]) and lr[j] != 0]

    @property
    def final_residual(self):
        """Conjugacy residual of the last Hamiltonian plus the transformation defect."""
        return _exp(self.log_rho[-1]) + self.map_defect

    def as_dict(self):
        return {"status": self.status, "reason": self.reason, "warnings": self.warnings,
                "centers": [np.asarray(c).tolist() for c in self.centers],
                "log_rho": self.log_rho, "final_residual": self.final_residual,
                "map_defect": self.map_defect,
                "schedule": self.schedule.as_dict() if self.schedule else None,
                "steps": [s.as_dict() for s in self.steps]}


def _conjugacy_log_residual(eps_log, P, r, s):
    n = majorant_norm(P, r=r, s=s)
    return eps_log + _log(n)


def first_step(problem: Problem, schedule: Schedule, force=False) -> StepRecord:
    """The special step 0: checks alpha <= r0/T0 and theta_0 <= 1 first."""
    conds = schedule.first_step_conditions()
    ok = all(v[2] for v in conds.values())
    if not ok and not force:
        bad = [k for k, v in conds.items() if not v[2]]
        raise StepFailure("first-step conditions alpha <= r0/T0 and theta_0 <= 1 violated",
                          failed=bad, values={k: v[:2] for k, v in conds.items()})
    return _run_step(problem, schedule, 0, problem.K, problem.P, force, conds, ok)


def _run_step(problem, schedule, j, K, P, force, conds, ok):
    eps_j = schedule.step_eps(j)
    Kbar, Tbar, Pbar = measured_bounds(K, P, schedule.r[j], schedule.s_j[j])
    t0 = time.perf_counter()
    inp = StepInput(K=K, P=P, r=schedule.r[j], s=schedule.s_j[j], sigma=schedule.sigma[j], eps=eps_j,
                    omega=problem.omega, alpha=problem.alpha, tau=problem.tau,
                    Kbar=max(Kbar, 1e-300), Tbar=Tbar, Pbar=max(Pbar, 1e-300),
                    kappa=schedule.kappa[j], r_out=schedule.r[j + 1],
                    grid_oversample=problem.grid_oversample, force=force)
    out = assemble_step(inp, schedule.table)
    out.info["theoretical_P"] = schedule.P(j)
    out.info["measured_P"] = Pbar
    lr = _conjugacy_log_residual(schedule.log_eps_power(j + 1), out.P_new, schedule.r[j + 1],
                                 schedule.s_j[j + 1])
    return StepRecord(j, out, lr, conds, ok, time.perf_counter() - t0)


def iterate(problem: Problem, max_steps=6, stop_tol=None, force=False, schedule=None,
            callback=None) -> KamRun:
    """Run steps until eps^(2^j) ||P_j|| < stop_tol or max_steps.

    Theoretical conditions that fail stop the run unless ``force``; with
    ``force`` they are recorded as warnings and the run continues.
    """
    d = problem.d
    K, P = problem.K, problem.P
    y0 = problem.y0.copy()
    Kbar, Tbar, Pbar = measured_bounds(K, P, problem.r, problem.s)
    stop_tol = 1e-14 * Pbar if stop_tol is None else stop_tol
    notes = []
    if d == 1:
        notes.append("d = 1: divisor certificates disabled")
    if problem.eps == 0 or Pbar == 0:
        return KamRun(problem, None, [], [y0], [-math.inf], K, P, "converged",
                      "zero perturbation", notes, 0.0)
    if schedule is None:
        schedule = build_schedule(d, problem.tau, problem.alpha, problem.eps, problem.s,
                                  problem.s_star, Kbar, Tbar, Pbar, problem.r,
                                  horizon=max(max_steps, 1) + 1)
    log_rho = [schedule.log_eps_power(0) + _log(Pbar)]
    steps, centers = [], [y0]
    defect = 0.0
    status, reason = "stopped", f"reached max_steps={max_steps}"
    for j in range(max_steps):
        if log_rho[-1] < _log(stop_tol):
            status, reason = "converged", f"residual below {stop_tol:.3g} after {j} steps"
            break
        if j == 0:
            conds = schedule.first_step_conditions()
            c8 = schedule.convergence_condition()
            conds["convergence"] = (c8[0], 1.0, c8[1])
        else:
            conds = schedule.step_conditions(j)
        ok = all(v[2] for v in conds.values())
        if not ok:
            bad = ", ".join(k for k, v in conds.items() if not v[2])
            msg = f"step {j}: theoretical conditions violated ({bad})"
            if not force:
                status, reason = "failed", msg
                break
            notes.append(msg)
        try:
            rec = _run_step(problem, schedule, j, K, P, force, conds, ok)
        except (StepFailure, S.DomainError) as exc:
            status = "failed"
            det = getattr(exc, "details", {})
            reason = f"step {j}: {exc}" + (f" {det}" if det else "")
            break
        steps.append(rec)
        out = rec.output
        K, P = out.K_new, out.P_new
        centers.append(out.y_new)
        log_rho.append(rec.log_rho)
        defect += schedule.step_eps(j) * (_step_defect(out) + out.info["carried_tail"])
        if callback is not None:
            callback(rec)
        log.info("step %d: log rho = %.3f, %.2fs", j, rec.log_rho, rec.seconds)
    else:
        if log_rho[-1] < _log(stop_tol):
            status, reason = "converged", f"residual below {stop_tol:.3g} after {max_steps} steps"
    return KamRun(problem, schedule, steps, centers, log_rho, K, P, status, reason, notes, defect)


def _step_defect(out: StepOutput):
    """Tails of the map series: errors of phi, not of P'."""
    if out.eps == 0:
        return 0.0
    t = max([v.truncation_tail for v in out.phi_x] + [v.truncation_tail for v in out.gx_phi] + [0.0])
    return t + out.info.get("fixed_point_increment", 0.0)


# ---------------------------------------------------------------- the limit torus


@dataclass
class TorusEmbedding:
    """x -> (y0 + v(x), x + u(x)); u, v are lists of d x-only series."""
    u: list
    v: list
    y_star: np.ndarray
    y0: np.ndarray
    omega: np.ndarray
    s_star: float
    norms: dict
    bound: float  # C theta^3 (s-s*)^-a eps_tilde
    telescoping: dict

    def __call__(self, theta):
        """Points (y, x) of the torus at angles theta, shape (n, d) each."""
        th = np.atleast_2d(np.asarray(theta))
        X = th + np.column_stack([_eval_x(c, th) for c in self.u])
        Y = self.y0 + np.column_stack([_eval_x(c, th) for c in self.v])
        return Y, X

    def as_dict(self):
        return {"y_star": self.y_star.tolist(), "y0": self.y0.tolist(), "s_star": self.s_star,
                "norms": self.norms, "bound": self.bound, "telescoping": self.telescoping}

    def coefficient_table(self):
        """Rows (k, [u_k], [v_k]) for every mode with a nonzero entry."""
        d = self.y0.size
        K = S._modes(d, self.u[0].mode_cutoff).reshape(d, -1).T
        U = np.array([c.coef[0].ravel() for c in self.u])
        V = np.array([c.coef[0].ravel() for c in self.v])
        keep = np.flatnonzero(np.any(U != 0, axis=0) | np.any(V != 0, axis=0))
        return [(tuple(int(v) for v in K[i]), U[:, i].tolist(), V[:, i].tolist()) for i in keep]


def _eval_x(f, th):
    v = S.evaluate_many(f, np.zeros((1, f.d)), th)
    return v if np.iscomplexobj(th) else v.real


def _torus_grid_points(d, M, s_t, sig):
    ax = 2 * np.pi * np.arange(M) / M
    grid = np.stack(np.meshgrid(*([ax] * d), indexing="ij"), axis=-1).reshape(-1, d)
    return grid - 1j * s_t * np.asarray(sig, float)[None]


def compose_maps(run: KamRun, X):
    """phi_0 o ... o phi_{J-1} at (y_J, X); X may be complex."""
    X = np.atleast_2d(X)
    d = X.shape[1]
    Y = np.repeat(np.asarray(run.centers[-1], float)[None], len(X), axis=0).astype(X.dtype)
    for rec in reversed(run.steps):
        Y, X = apply_step_map(rec.output, Y, X)
    return Y, X


def compose_and_extract(run: KamRun, N_out=None, M=None) -> TorusEmbedding:
    """Sample the composed transformation on shifted angle grids and read off u*, v*."""
    prob = run.problem
    d = prob.d
    y0 = prob.y0
    s_star = prob.s_star
    N_out = N_out or prob.P.mode_cutoff
    M = M or sfft.next_fast_len(4 * N_out + 2)
    parts_u, parts_v = {}, {}
    for sig in S._tilts(d):
        pts = _torus_grid_points(d, M, s_star, sig)
        Y, X = compose_maps(run, pts)
        uu = (X - pts).T.reshape((d,) + (M,) * d)
        vv = (Y - y0).T.reshape((d,) + (M,) * d)
        tilt = S._tilt(d, N_out, s_star, sig)
        parts_u[sig] = S._from_grid(uu, N_out, M) / tilt
        parts_v[sig] = S._from_grid(vv, N_out, M) / tilt
    Cu = S._assemble(parts_u, d, N_out)
    Cv = S._assemble(parts_v, d, N_out)
    outside = S._mode_l1(d, N_out) > N_out
    Cu[:, outside] = 0
    Cv[:, outside] = 0
    mk = lambda c: FourierTaylor(S._realify(c[None]), np.zeros(d), 0, N_out, 0.0, 1.0, s_star)
    u = [mk(Cu[i]) for i in range(d)]
    v = [mk(Cv[i]) for i in range(d)]
    nu_ = max(majorant_norm(c, s=s_star) for c in u)
    ndu = max(sum(majorant_norm(S.derivative(c, ("x", j)), s=s_star) for j in range(d)) for c in u)
    nv = max(majorant_norm(c, s=s_star) for c in v)
    sch = run.schedule
    if sch is not None:
        Kbar = sch.K0
        tab = sch.table
        bound = tab.C_main * sch.theta0 ** 3 * (prob.s - s_star) ** -tab.a * sch.eps_tilde
        steps = [float(np.max(np.abs(run.centers[j + 1] - run.centers[j]))) for j in range(run.n_steps)]
        bounds = []
        for j in range(run.n_steps):
            if j == 0:
                bounds.append(8 * prob.eps * sch.T0 * sch.P0 / sch.r0)
            else:
                bounds.append(8 * math.sqrt(2) * sch.T0 * _exp(sch.log_eps_power(j) + sch.log_P[j]) / sch.r[j])
        total = float(np.max(np.abs(run.centers[-1] - y0)))
        tel = {"shift": total, "step_shifts": steps, "step_bounds": bounds,
               "sum_of_steps": float(sum(steps)), "sum_of_bounds": float(sum(bounds)),
               "C11_bound": tab[11] * sch.sigma0 ** -(5 * sch.nu + 3 * d + 1) * sch.theta0 ** 2
               * prob.eps * sch.P0 / prob.alpha}
    else:
        Kbar = measured_bounds(prob.K, prob.P, prob.r, prob.s)[0]
        bound = 0.0
        tel = {"shift": 0.0, "step_shifts": [], "step_bounds": [], "sum_of_steps": 0.0,
               "sum_of_bounds": 0.0, "C11_bound": 0.0}
    from .verify import oscillation
    osc = max(oscillation(c) for c in v)
    norms = {"u": nu_, "dx_u": ndu, "v": nv, "osc_v": osc,
             "weighted_max": max(nu_, ndu / (2 * math.e), Kbar / prob.alpha * nv),
             "tail_u": max(c.truncation_tail for c in u)}
    return TorusEmbedding(u, v, np.asarray(run.centers[-1]),
                          y0.copy(), prob.omega.copy(), s_star, norms, bound, tel)
