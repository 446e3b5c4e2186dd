"""Command line, Hamiltonian catalog, configuration and reports."""
from __future__ import annotations

import argparse
import copy
import csv
import json
import logging
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from typing import Optional, Union

import numpy as np
from sklearn.base import BaseEstimator

from . import series as S
from .constants import (build_constants, check_smallness, epsilon_sharp, epsilon_star)
from .diophantine import best_alpha
from .kam_iterate import Problem, compose_and_extract, iterate, measured_bounds
from .kam_step import hessian_matrix, step_jacobian
from .series import FourierTaylor
from . import verify as V

log = logging.getLogger("arnoldkam")

EXIT_OK, EXIT_THEORY, EXIT_NUMERIC = 0, 2, 3
GOLDEN = (math.sqrt(5) - 1) / 2


class ConfigError(ValueError):
    def __init__(self, path, message):
        super().__init__(f"{path}: {message}")
        self.path = path


# ---------------------------------------------------------------- configuration


REQUIRED = ("d", "tau", "alpha", "epsilon", "y0", "r", "s", "s_star", "K", "P")


@dataclass
class RunConfig:
    d: int
    tau: float
    alpha: Union[float, str]
    epsilon: float
    y0: list
    r: float
    s: float
    s_star: float
    K: list  # term records {"k", "m", "re", "im"}, powers of (y - y0)
    P: list
    D: int = 6
    N: int = 32
    oversample: int = 4
    max_steps: int = 6
    stop_tol: Optional[float] = None
    force: bool = False
    name: str = "custom"
    verify_samples: int = 100
    invariance_time: float = 1.0

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in fields(cls)}
        extra = set(data) - known
        if extra:
            raise ConfigError(sorted(extra)[0], "unknown field")
        missing = [n for n in REQUIRED if n not in data]
        if missing:
            raise ConfigError(missing[0], "missing required field")
        cfg = cls(**copy.deepcopy(data))
        cfg.validate()
        return cfg

    def validate(self):
        if not isinstance(self.d, int) or self.d < 1:
            raise ConfigError("d", f"must be a positive integer, got {self.d!r}")
        if len(self.y0) != self.d:
            raise ConfigError("y0", f"needs {self.d} entries, got {len(self.y0)}")
        if not self.tau >= max(1.0, self.d - 1):
            raise ConfigError("tau", f"must be >= max(1, d-1), got {self.tau}")
        if not (isinstance(self.alpha, str) and self.alpha == "auto") and \
                not (isinstance(self.alpha, (int, float)) and self.alpha > 0):
            raise ConfigError("alpha", f'must be positive or "auto", got {self.alpha!r}')
        if not self.epsilon >= 0:
            raise ConfigError("epsilon", f"must be >= 0, got {self.epsilon}")
        if not self.r > 0:
            raise ConfigError("r", f"must be positive, got {self.r}")
        if not 0 < self.s <= 1:
            raise ConfigError("s", f"must lie in (0, 1], got {self.s}")
        if not 0 < self.s_star < self.s:
            raise ConfigError("s_star", f"must satisfy 0 < s_star < s = {self.s}, got {self.s_star}")
        for name in ("D", "N", "oversample", "max_steps", "verify_samples"):
            v = getattr(self, name)
            if not isinstance(v, int) or v < (0 if name == "max_steps" else 1):
                raise ConfigError(name, f"must be a positive integer, got {v!r}")
        if self.D < 2:
            raise ConfigError("D", "must be >= 2 (the Hessian of K is needed)")
        for name in ("K", "P"):
            self.series(name)

    def series(self, name):
        terms = getattr(self, name)
        for i, t in enumerate(terms):
            for key in ("k", "m", "re"):
                if key not in t:
                    raise ConfigError(f"{name}[{i}].{key}", "missing")
        rec = {"base_point": list(map(float, self.y0)), "D": self.D, "N": self.N,
               "r": self.r, "s": self.s, "terms": terms}
        try:
            return FourierTaylor.from_records(rec, check_reality=True)
        except ValueError as exc:
            raise ConfigError(name, str(exc)) from None


def load_config(path) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(str(path), f"not valid JSON ({exc})") from None
    return resolve_alpha(RunConfig.from_dict(data))


def save_config(cfg: RunConfig, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(cfg.to_dict(), fh, indent=2, default=_json_default)


def _term(k, m, c):
    return {"k": [int(v) for v in k], "m": [int(v) for v in m], "re": float(np.real(c)), "im": float(np.imag(c))}


def _quadratic_K(y0):
    """|y|^2 / 2 expanded about y0."""
    d = len(y0)
    e = np.eye(d, dtype=int)
    z = [0] * d
    out = [_term(z, z, 0.5 * float(np.dot(y0, y0)))]
    out += [_term(z, e[i], y0[i]) for i in range(d) if y0[i] != 0]
    out += [_term(z, 2 * e[i], 0.5) for i in range(d)]
    return out


def _cosines(modes, d, shift=0.0):
    z = [0] * d
    out = [_term(z, z, shift)] if shift else []
    for k in modes:
        out.append(_term(k, z, 0.5))
        out.append(_term([-v for v in k], z, 0.5))
    return out


def catalog(name, omega=None, eps=1e-6, **kw) -> RunConfig:
    """Preset Hamiltonians: pendulum, rotors2d, rotors3d."""
    base = dict(r=1.0, s=1.0, s_star=0.5, D=6, N=32, name=name)
    if name == "pendulum":
        om = 0.3 if omega is None else float(np.atleast_1d(omega)[0])
        cfg = dict(d=1, tau=1.0, alpha=abs(om), epsilon=eps, y0=[om], K=_quadratic_K([om]),
                   P=_cosines([[1]], 1, shift=-1.0), force=True)
    elif name == "rotors2d":
        om = [1.0, GOLDEN] if omega is None else [float(v) for v in omega]
        cfg = dict(d=2, tau=1.0, alpha="auto", epsilon=eps, y0=om, K=_quadratic_K(om),
                   P=_cosines([[1, 0], [1, 1]], 2))
    elif name == "rotors3d":
        # a cubic irrational frequency (real root of t^3 = t + 1, the plastic ratio)
        rho = 1.324717957244746
        om = [1.0, 1 / rho, 1 / rho ** 2] if omega is None else [float(v) for v in omega]
        cfg = dict(d=3, tau=2.0, alpha="auto", epsilon=eps, y0=om, K=_quadratic_K(om),
                   P=_cosines([[1, 0, 0], [1, 1, 0], [0, 1, 1]], 3), N=6, D=3,
                   oversample=2)  # 3-d grids are costly
    else:
        raise ValueError(f"unknown catalog entry {name!r}; choose pendulum, rotors2d or rotors3d")
    base.update(cfg)
    base.update(kw)
    out = RunConfig(**base)
    out.validate()
    return resolve_alpha(out)


# ---------------------------------------------------------------- problem assembly


def _frequency(cfg: RunConfig, K):
    d = cfg.d
    return np.array([S.evaluate(S.derivative(K, ("y", i)), np.asarray(cfg.y0, float), np.zeros(d)).real
                     for i in range(d)])


def _auto_alpha(cfg, omega):
    return abs(float(omega[0])) if cfg.d == 1 else best_alpha(omega, cfg.tau, cfg.N)


def resolve_alpha(cfg: RunConfig) -> RunConfig:
    """Replace alpha = "auto" by the best constant over modes |k|_1 <= N (in place)."""
    if cfg.alpha == "auto":
        cfg.alpha = _auto_alpha(cfg, _frequency(cfg, cfg.series("K")))
        if not cfg.alpha > 0:
            raise ConfigError("alpha", "frequency is resonant up to order N; no Diophantine constant")
    return cfg


def build_problem(cfg: RunConfig):
    """(Problem, resolved alpha)."""
    K = cfg.series("K")
    P = cfg.series("P")
    d = cfg.d
    if np.any(K.coef[:, S._mode_l1(d, cfg.N) > 0]):
        raise ConfigError("K", "the integrable part must not depend on the angles")
    H = hessian_matrix(K)
    if abs(np.linalg.det(H)) < 1e-14 * max(1.0, np.max(np.abs(H))) ** d:
        raise ConfigError("K", "Hessian at y0 is singular")
    omega = _frequency(cfg, K)
    alpha = cfg.alpha
    if alpha == "auto":
        alpha = _auto_alpha(cfg, omega)
    prob = Problem(K.with_domain(cfg.r, cfg.s), P.with_domain(cfg.r, cfg.s), omega, float(alpha),
                   cfg.tau, cfg.epsilon, cfg.r, cfg.s, cfg.s_star, cfg.oversample)
    return prob, float(alpha)


# ---------------------------------------------------------------- reports


@dataclass
class RunReport:
    config: dict
    status: str  # pass | theoretical_failure | numerical_failure
    exit_code: int
    messages: list
    constants: dict = field(default_factory=dict)
    thresholds: dict = field(default_factory=dict)
    smallness: dict = field(default_factory=dict)
    problem: dict = field(default_factory=dict)
    schedule: Optional[dict] = None
    run: dict = field(default_factory=dict)
    torus: dict = field(default_factory=dict)
    verification: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        return cls(**copy.deepcopy(data))

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, default=_json_default)

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_json())

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(fh.read())


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _plain(obj):
    """Normalize to JSON-native types so that reports round-trip exactly."""
    return json.loads(json.dumps(obj, default=_json_default))


@dataclass
class PipelineResult:
    report: RunReport
    problem: Optional[Problem] = None
    run: object = None
    torus: object = None


def final_residual(run, torus_res):
    """max(conjugacy residual of the last Hamiltonian plus accumulated floors, torus defect)."""
    return max(run.final_residual, torus_res)


def run_pipeline(cfg: RunConfig, verify=True, keep_objects=False):
    """constants -> smallness check -> iteration -> torus -> verification."""
    t_start = time.perf_counter()
    timings = {}
    msgs = []
    cfg.validate()
    prob, alpha = build_problem(cfg)
    d = cfg.d
    table = build_constants(d, cfg.tau)
    Kbar, Tbar, Pbar = measured_bounds(prob.K, prob.P, cfg.r, cfg.s)
    theta = max(Tbar * Kbar, 1.0)
    eps_t = Kbar * Pbar * cfg.epsilon / alpha ** 2
    e_star = epsilon_star(table, cfg.s, cfg.s_star, theta)
    e_sharp = epsilon_sharp(table, cfg.s, cfg.s_star, theta)
    small = check_smallness(alpha, cfg.r, Tbar, eps_t, e_star)
    timings["setup"] = time.perf_counter() - t_start
    rep = RunReport(
        config=cfg.to_dict(), status="pass", exit_code=EXIT_OK, messages=msgs,
        constants=table.as_dict(),
        thresholds={"eps_star": e_star, "eps_sharp": e_sharp, "eps_tilde": eps_t, "theta": theta},
        smallness=small.as_dict(),
        problem={"omega": prob.omega.tolist(), "alpha": alpha, "Kbar": Kbar, "Tbar": Tbar,
                 "Pbar": Pbar, "d": d})
    if not small.ok:
        msgs.extend(small.messages)
        if not cfg.force:
            rep.status, rep.exit_code = "theoretical_failure", EXIT_THEORY
            rep.timings = timings
            return _finish(rep, prob, None, None, keep_objects)
        msgs.append("force: theoretical smallness conditions treated as warnings")
    t0 = time.perf_counter()
    run = iterate(prob, max_steps=cfg.max_steps, stop_tol=cfg.stop_tol, force=cfg.force)
    timings["iterate"] = time.perf_counter() - t0
    msgs.extend(run.warnings)
    rep.schedule = run.schedule.as_dict() if run.schedule else None
    rep.run = _plain(run.as_dict())
    if run.status == "failed":
        msgs.append(run.reason)
        theoretical = "theoretical conditions" in run.reason or "smallness" in run.reason \
            or "first-step" in run.reason
        rep.status = "theoretical_failure" if theoretical else "numerical_failure"
        rep.exit_code = EXIT_THEORY if theoretical else EXIT_NUMERIC
        rep.timings = timings
        return _finish(rep, prob, run, None, keep_objects)
    t0 = time.perf_counter()
    torus = compose_and_extract(run)
    timings["extract"] = time.perf_counter() - t0
    rep.torus = _plain(torus.as_dict())
    if verify:
        t0 = time.perf_counter()
        rep.verification = _plain(verify_run(cfg, prob, run, torus, table, Kbar, Pbar, theta, alpha))
        timings["verify"] = time.perf_counter() - t0
        ver = rep.verification
        if not ver["invariance_ok"] or not ver["symplecticity_ok"]:
            rep.status, rep.exit_code = "numerical_failure", EXIT_NUMERIC
            msgs.append("verification tolerance exceeded")
    if run.status != "converged":
        msgs.append(f"not converged: {run.reason}")
        # stop_tol = 0 asks for a fixed number of steps
        if rep.status == "pass" and cfg.stop_tol != 0:
            rep.status, rep.exit_code = "numerical_failure", EXIT_NUMERIC
    rep.timings = timings
    return _finish(rep, prob, run, torus, keep_objects)


def _finish(rep, prob, run, torus, keep):
    rep.messages = list(rep.messages)
    rep.thresholds = _plain(rep.thresholds)
    rep.smallness = _plain(rep.smallness)
    rep.problem = _plain(rep.problem)
    rep.schedule = _plain(rep.schedule)
    return PipelineResult(rep, prob, run, torus) if keep else rep


def verify_run(cfg, prob, run, torus, table, Kbar, Pbar, theta, alpha):
    eps = prob.eps
    inv = V.invariance_error(prob.K, prob.P, eps, torus, T=cfg.invariance_time,
                             n_samples=min(cfg.verify_samples, 64))
    tres = V.torus_residual(prob.K, prob.P, eps, torus)
    final = final_residual(run, tres)
    symp = 0.0
    for rec in run.steps:
        out = rec.output
        symp = max(symp, V.symplecticity_check(step_jacobian(out), out.y_new, out.r_out,
                                               n_samples=cfg.verify_samples, seed=rec.j))
    osc, osc_err = 0.0, 0.0
    for c in torus.v:
        o, e = V.oscillation_estimate(c)
        if o >= osc:
            osc, osc_err = o, e
    kol = {}
    try:
        kol = V.kolmogorov_check(prob.K, prob.P, eps, torus, theta=theta, C_main=table.C_main,
                                 a=table.a, s=cfg.s, Kbar=Kbar, Pbar=Pbar, alpha=alpha).as_dict()
    except ValueError as exc:
        kol = {"skipped": str(exc)}
    checks = []
    for rec in run.steps:
        for name, m, b, ok in rec.output.checks:
            checks.append({"step": rec.j, "name": name, "measured": m, "bound": b, "ok": ok,
                           "compliant": bool(rec.compliant and rec.output.bounds.compliant)})
    return {
        "invariance_error": inv, "invariance_T": cfg.invariance_time,
        "torus_residual": tres, "final_residual": final, "model_residual": run.final_residual,
        "invariance_tolerance": 10 * final + 1e-10,
        "invariance_ok": inv <= 10 * final + 1e-10,
        "symplecticity_defect": symp, "symplecticity_ok": symp <= 1e-9,
        "oscillation": osc, "oscillation_grid_change": osc_err,
        "torus_bound": torus.bound, "torus_weighted_norm": torus.norms["weighted_max"],
        "torus_bound_ok": torus.norms["weighted_max"] <= torus.bound,
        "kolmogorov": kol,
        "step_checks": checks,
        "compliant_checks_ok": all(c["ok"] for c in checks if c["compliant"]),
        "theta_recursion_defect": run.schedule.theta_recursion_defect() if run.schedule else 0.0,
    }


def write_torus_csv(torus, path):
    """One row per mode: k1..kd, then real/imaginary parts of u and v."""
    d = torus.y0.size
    if d == 1:
        cols = ["re_u", "im_u", "re_v", "im_v"]
    else:
        cols = [f"{p}_u{i + 1}" for i in range(d) for p in ("re", "im")] + \
               [f"{p}_v{i + 1}" for i in range(d) for p in ("re", "im")]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow([f"k{i + 1}" for i in range(d)] + cols)
        for k, u, v in torus.coefficient_table():
            row = list(k)
            for z in u + v:
                row += [repr(float(z.real)), repr(float(z.imag))]
            w.writerow(row)


# ---------------------------------------------------------------- benchmarks and sweeps


PENDULUM_EPS = (1e-6, 3e-6, 1e-5, 3e-5, 1e-4)


def pendulum_benchmark(omega=0.3, eps_values=PENDULUM_EPS, D=4, N=16, max_steps=6):
    """Oscillation of computed pendulum tori against the exact curves."""
    rows = []
    for eps in eps_values:
        cfg = catalog("pendulum", omega=omega, eps=eps, D=D, N=N, max_steps=max_steps)
        prob, alpha = build_problem(cfg)
        run = iterate(prob, max_steps=max_steps, force=True)
        torus = compose_and_extract(run)
        curve = V.pendulum_exact_curve(omega, eps)
        tres = V.torus_residual(prob.K, prob.P, eps, torus)
        fin = final_residual(run, tres)
        gap = V.curve_gap(curve, torus)
        osc = torus.norms["osc_v"]
        lower = 4 / (1 + math.sqrt(2)) * eps / alpha
        rows.append({"eps": eps, "osc": osc, "osc_exact": curve.osc, "lower_bound": lower,
                     "osc_ok": osc >= 0.95 * lower, "gap": gap, "final_residual": fin,
                     "model_residual": run.final_residual, "gap_ok": gap <= 10 * fin,
                     "steps": run.n_steps, "status": run.status,
                     "upper_bound_weighted": torus.bound, "weighted_norm": torus.norms["weighted_max"]})
    slope = float(np.polyfit(np.log([r["eps"] for r in rows]), np.log([r["osc"] for r in rows]), 1)[0])
    ok = 0.9 <= slope <= 1.1 and all(r["osc_ok"] and r["gap_ok"] for r in rows)
    return {"omega": omega, "rows": rows, "slope": slope, "slope_ok": 0.9 <= slope <= 1.1, "ok": ok}


def _sweep_one(args):
    cfg_dict, eps, path = args
    cfg = RunConfig.from_dict(dict(cfg_dict, epsilon=eps))
    rep = run_pipeline(cfg)
    rep.save(path)
    return {"epsilon": eps, "status": rep.status, "exit_code": rep.exit_code, "path": path}


def sweep(cfg: RunConfig, eps_from, eps_to, points, out_dir, jobs=None):
    """Log-spaced epsilon sweep; one report file per value, runs in parallel processes."""
    os.makedirs(out_dir, exist_ok=True)
    values = np.geomspace(eps_from, eps_to, points) if points > 1 else np.array([eps_from])
    tasks = [(cfg.to_dict(), float(e), os.path.join(out_dir, f"report_{i:03d}.json"))
             for i, e in enumerate(values)]
    if jobs == 1:
        return [_sweep_one(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(_sweep_one, tasks))


# ---------------------------------------------------------------- estimator


class ArnoldKAM(BaseEstimator):
    """Estimator-style wrapper: ``fit`` computes the torus, ``transform`` maps angles to it.

    Either give ``preset`` (pendulum, rotors2d, rotors3d) or the term lists
    ``K``, ``P`` with ``y0``.
    """

    def __init__(self, preset="rotors2d", omega=None, epsilon=1e-6, tau=1.0, alpha="auto",
                 y0=None, K=None, P=None, r=1.0, s=1.0, s_star=0.5, D=6, N=32, oversample=4,
                 max_steps=6, stop_tol=None, force=True, verify=False):
        self.preset = preset
        self.omega = omega
        self.epsilon = epsilon
        self.tau = tau
        self.alpha = alpha
        self.y0 = y0
        self.K = K
        self.P = P
        self.r = r
        self.s = s
        self.s_star = s_star
        self.D = D
        self.N = N
        self.oversample = oversample
        self.max_steps = max_steps
        self.stop_tol = stop_tol
        self.force = force
        self.verify = verify

    def make_config(self) -> RunConfig:
        common = dict(r=self.r, s=self.s, s_star=self.s_star, D=self.D, N=self.N,
                      oversample=self.oversample, max_steps=self.max_steps,
                      stop_tol=self.stop_tol, force=self.force)
        if self.K is not None:
            d = len(self.y0)
            cfg = RunConfig(d=d, tau=self.tau, alpha=self.alpha, epsilon=self.epsilon,
                            y0=list(self.y0), K=self.K, P=self.P, **common)
            cfg.validate()
            return resolve_alpha(cfg)
        cfg = catalog(self.preset, omega=self.omega, eps=self.epsilon, **common)
        if self.preset != "pendulum":
            cfg.tau, cfg.alpha = max(self.tau, cfg.d - 1.0), self.alpha
        cfg.validate()
        return resolve_alpha(cfg)

    def fit(self, X=None, y=None):
        res = run_pipeline(self.make_config(), verify=self.verify, keep_objects=True)
        self.report_ = res.report
        self.run_ = res.run
        self.torus_ = res.torus
        if res.torus is None:
            raise RuntimeError("no torus: " + "; ".join(res.report.messages))
        self.n_features_in_ = self.torus_.y0.size
        return self

    def _angles(self, X):
        X = np.asarray(X, float)
        return X.reshape(-1, self.torus_.y0.size)

    def transform(self, X):
        """Angles (n, d) -> torus points (n, 2d) ordered (y, x)."""
        Y, Xt = self.torus_(self._angles(X))
        return np.hstack([Y, Xt])

    def predict(self, X):
        """Actions of the torus above the given angles."""
        return self.torus_(self._angles(X))[0]


# ---------------------------------------------------------------- CLI


def _config_from_args(a):
    sizes = {n: getattr(a, n) for n in ("D", "N", "max_steps") if getattr(a, n, None) is not None}
    if getattr(a, "config", None):
        cfg = load_config(a.config)
        for name, v in sizes.items():
            setattr(cfg, name, v)
    else:
        cfg = catalog(a.preset or "rotors2d",
                      omega=[float(v) for v in a.omega.split(",")] if a.omega else None,
                      eps=a.eps if a.eps is not None else 1e-6, **sizes)
    if getattr(a, "eps", None) is not None:
        cfg.epsilon = a.eps
    if getattr(a, "force", False):
        cfg.force = True
    cfg.validate()
    return cfg


def _add_source(p):
    p.add_argument("config", nargs="?", help="JSON run configuration")
    p.add_argument("--preset", choices=["pendulum", "rotors2d", "rotors3d"])
    p.add_argument("--omega", help="comma separated frequency for presets")
    p.add_argument("--eps", type=float)
    p.add_argument("--D", type=int)
    p.add_argument("--N", type=int)
    p.add_argument("--max-steps", dest="max_steps", type=int)
    p.add_argument("--force", action="store_true", help="treat theoretical conditions as warnings")


def _print(obj):
    print(json.dumps(obj, indent=2, default=_json_default))


def cmd_constants(a):
    tab = build_constants(a.d, a.tau)
    out = tab.as_dict()
    if a.s is not None:
        out["eps_star"] = epsilon_star(tab, a.s, a.s_star, a.theta)
        out["eps_sharp"] = epsilon_sharp(tab, a.s, a.s_star, a.theta)
    _print(out)
    return EXIT_OK


def cmd_check(a):
    cfg = _config_from_args(a)
    prob, alpha = build_problem(cfg)
    tab = build_constants(cfg.d, cfg.tau)
    Kbar, Tbar, Pbar = measured_bounds(prob.K, prob.P, cfg.r, cfg.s)
    theta = max(Tbar * Kbar, 1.0)
    eps_t = Kbar * Pbar * cfg.epsilon / alpha ** 2
    rep = check_smallness(alpha, cfg.r, Tbar, eps_t, epsilon_star(tab, cfg.s, cfg.s_star, theta))
    _print(dict(rep.as_dict(), alpha=alpha, theta=theta, ok=rep.ok))
    return EXIT_OK if rep.ok else EXIT_THEORY


def _run_common(a, verify):
    cfg = _config_from_args(a)
    res = run_pipeline(cfg, verify=verify, keep_objects=True)
    rep = res.report
    if a.out:
        rep.save(a.out)
    if a.csv and res.torus is not None:
        write_torus_csv(res.torus, a.csv)
    summary = {"status": rep.status, "exit_code": rep.exit_code, "messages": rep.messages,
               "log_rho": rep.run.get("log_rho"), "torus": rep.torus.get("norms")}
    if verify and rep.verification:
        summary["verification"] = {k: rep.verification[k] for k in (
            "invariance_error", "final_residual", "symplecticity_defect", "oscillation")}
    _print(summary)
    return rep.exit_code


def cmd_run(a):
    return _run_common(a, verify=False)


def cmd_verify(a):
    return _run_common(a, verify=True)


def cmd_sweep(a):
    cfg = _config_from_args(a)
    rows = sweep(cfg, a.eps_from, a.eps_to, a.points, a.out_dir, a.jobs)
    _print(rows)
    return max(r["exit_code"] for r in rows)


def cmd_bench_pendulum(a):
    eps = [float(v) for v in a.eps_list.split(",")] if a.eps_list else PENDULUM_EPS
    out = pendulum_benchmark(a.omega, eps, D=a.D, N=a.N)
    _print(out)
    return EXIT_OK if out["ok"] else EXIT_NUMERIC


def make_parser():
    p = argparse.ArgumentParser(prog="arnoldkam", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="cmd", required=True)
    c = sub.add_parser("constants", help="print the constants table and thresholds")
    c.add_argument("--d", type=int, required=True)
    c.add_argument("--tau", type=float, required=True)
    c.add_argument("--s", type=float)
    c.add_argument("--s-star", dest="s_star", type=float, default=None)
    c.add_argument("--theta", type=float, default=1.0)
    c.set_defaults(func=cmd_constants)
    c = sub.add_parser("check", help="test the smallness conditions")
    _add_source(c)
    c.set_defaults(func=cmd_check)
    for name, fn, hlp in (("run", cmd_run, "compute the torus"),
                          ("verify", cmd_verify, "compute and verify the torus")):
        c = sub.add_parser(name, help=hlp)
        _add_source(c)
        c.add_argument("--out", help="write the JSON report here")
        c.add_argument("--csv", help="write torus coefficients here")
        c.set_defaults(func=fn)
    c = sub.add_parser("sweep", help="epsilon sweep, one report per value")
    _add_source(c)
    c.add_argument("--eps-from", dest="eps_from", type=float, required=True)
    c.add_argument("--eps-to", dest="eps_to", type=float, required=True)
    c.add_argument("--points", type=int, required=True)
    c.add_argument("--out-dir", dest="out_dir", default="sweep")
    c.add_argument("--jobs", type=int, default=None)
    c.set_defaults(func=cmd_sweep)
    c = sub.add_parser("bench-pendulum", help="oscillation benchmark against exact pendulum curves")
    c.add_argument("--omega", type=float, default=0.3)
    c.add_argument("--eps-list", dest="eps_list")
    c.add_argument("--D", type=int, default=4)
    c.add_argument("--N", type=int, default=16)
    c.set_defaults(func=cmd_bench_pendulum)
    return p


def main(argv=None):
    a = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if a.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if a.cmd == "constants" and a.s is not None and a.s_star is None:
        print("constants: --s-star is required with --s", file=sys.stderr)
        return EXIT_NUMERIC
    try:
        return a.func(a)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
