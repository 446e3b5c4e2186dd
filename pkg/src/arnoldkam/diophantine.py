"""Diophantine frequency vectors and small-divisor bookkeeping."""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Frequency:
    omega: tuple
    alpha: float
    tau: float

    def __post_init__(self):
        om = tuple(float(v) for v in np.atleast_1d(self.omega))
        object.__setattr__(self, "omega", om)
        d = len(om)
        if not self.alpha > 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if d == 1:
            warnings.warn("d = 1: the torus construction assumes d >= 2; "
                          "only the one-dimensional benchmarks apply", stacklevel=2)
        elif self.tau < d - 1:
            raise ValueError(f"tau must be >= d-1 = {d - 1}, got {self.tau}")

    @property
    def d(self):
        return len(self.omega)


@dataclass(frozen=True)
class DiophantineCheck:
    ok: bool
    worst_mode: tuple
    worst_value: float  # min of |omega.k| |k|_1^tau


def shell_modes(d: int, n: int) -> np.ndarray:
    """Integer vectors with |k|_1 = n, one representative of each pair +-k.

    The kept representative has its first nonzero entry positive.
    """
    if n == 0:
        return np.zeros((0, d), dtype=np.int64)
    full = _full_shell(d, n)
    nz = full != 0
    first = full[np.arange(len(full)), nz.argmax(axis=1)]
    return full[first > 0]


def _full_shell(d, n):
    if d == 1:
        return np.array([[n], [-n]] if n else [[0]], dtype=np.int64)
    parts = []
    for a in range(-n, n + 1):
        rest = _full_shell(d - 1, n - abs(a))
        parts.append(np.column_stack([np.full(len(rest), a, dtype=np.int64), rest]))
    return np.concatenate(parts)


def _scan(omega, tau, N):
    omega = np.asarray(omega, float).reshape(-1)
    d = omega.size
    best, arg = np.inf, None
    for n in range(1, int(N) + 1):
        ks = shell_modes(d, n)
        vals = np.abs(ks @ omega) * float(n) ** tau
        i = int(np.argmin(vals))
        if vals[i] < best:
            best, arg = float(vals[i]), tuple(int(v) for v in ks[i])
    return best, arg


def best_alpha(omega, tau: float, N: int) -> float:
    """min over 0 < |k|_1 <= N of |omega.k| |k|_1^tau."""
    if N < 1:
        raise ValueError("N must be >= 1")
    return _scan(omega, tau, N)[0]


def check_diophantine(omega, alpha: float, tau: float, N: int) -> DiophantineCheck:
    """Whether |omega.k| |k|_1^tau >= alpha for all 0 < |k|_1 <= N."""
    if N < 1:
        raise ValueError("N must be >= 1")
    val, mode = _scan(omega, tau, N)
    return DiophantineCheck(val >= alpha, mode, val)


def uniform_divisor_radius(alpha: float, d: int, Kbar: float, kappa: float, tau: float) -> float:
    """Action radius on which |K_y(y').n| >= alpha / (2|n|^tau) for 0 < |n|_1 <= kappa.

    Follows from |K_y(y') - omega| <= d Kbar |y' - y| and |n|_1 <= kappa.
    """
    for name, v in (("alpha", alpha), ("d", d), ("Kbar", Kbar), ("kappa", kappa), ("tau", tau)):
        if not v > 0:
            raise ValueError(f"{name} must be positive, got {v}")
    return alpha / (2 * d * Kbar * kappa ** (tau + 1))


def min_divisor(grad, y, radius, kappa, tau, n_samples=9):
    """Brute-force min of |grad(y').n| |n|_1^tau over a real grid in the polydisc.

    ``grad`` maps a point to K_y at that point.  Used to certify the uniform
    divisor radius on concrete integrable parts.
    """
    y = np.asarray(y, float).reshape(-1)
    d = y.size
    ax = np.linspace(-radius, radius, n_samples)
    pts = np.stack(np.meshgrid(*([ax] * d), indexing="ij"), axis=-1).reshape(-1, d) + y
    G = np.array([grad(p) for p in pts])
    best = np.inf
    for n in range(1, int(kappa) + 1):
        ks = shell_modes(d, n)
        best = min(best, float(np.min(np.abs(G @ ks.T))) * n ** tau)
    return best
