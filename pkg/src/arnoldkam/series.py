"""Truncated Fourier-Taylor series on complex polydisc x strip domains.

A series stores coefficients c[m, k] of

    f(y, x) = sum_{m, k} c[m, k] (y - y0)^m exp(i k.x),   |m|_1 <= D, |k|_1 <= N,

together with a nonnegative ``tail``: a weighted-l1 bound for every term the
algebra has dropped so far.  The tail is valid on the reference domain
``(r, s)`` carried by the series and on every smaller domain.

The weighted-l1 ("majorant") norm

    ||f||_{r,s} = sum |c[m, k]| r^|m|_1 exp(s |k|_1) + tail

dominates the sup norm on D_{r,s}(y0) and is submultiplicative.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np
from numba import njit
from scipy import fft as sfft


_CHOP = 4 * np.finfo(float).eps


class DomainError(ValueError):
    """Raised when an operation would leave the domain of validity."""


@dataclass(frozen=True)
class DomainSpec:
    y0: tuple
    r: float
    s: float

    def __post_init__(self):
        object.__setattr__(self, "y0", tuple(float(v) for v in np.atleast_1d(self.y0)))
        if not self.r > 0:
            raise DomainError(f"action radius must be positive, got r={self.r}")
        if not 0 < self.s <= 1:
            raise DomainError(f"angle width must satisfy 0 < s <= 1, got s={self.s}")


# ---------------------------------------------------------------- index tables

def _compositions(n, d):
    if d == 1:
        yield (n,)
        return
    for first in range(n, -1, -1):
        for rest in _compositions(n - first, d - 1):
            yield (first,) + rest


@lru_cache(maxsize=None)
def monomials(d: int, D: int) -> np.ndarray:
    """Multi-indices with |m|_1 <= D in graded order, shape (n, d)."""
    rows = [m for deg in range(D + 1) for m in _compositions(deg, d)]
    out = np.array(rows, dtype=np.int64).reshape(-1, d)
    out.setflags(write=False)
    return out


@lru_cache(maxsize=None)
def _mono_index(d, D):
    return {tuple(int(v) for v in m): i for i, m in enumerate(monomials(d, D))}


@lru_cache(maxsize=None)
def _mono_degree(d, D):
    out = monomials(d, D).sum(axis=1)
    out.setflags(write=False)
    return out


@lru_cache(maxsize=None)
def _sum_index(d, D1, D2):
    """S[i, j] = index of m_i + m_j among monomials(d, D1 + D2)."""
    a, b = monomials(d, D1), monomials(d, D2)
    idx = _mono_index(d, D1 + D2)
    S = np.empty((len(a), len(b)), dtype=np.int64)
    for i, mi in enumerate(a):
        for j, mj in enumerate(b):
            S[i, j] = idx[tuple(int(v) for v in mi + mj)]
    S.setflags(write=False)
    return S


@lru_cache(maxsize=None)
def _modes(d, N):
    """Integer mode vectors on the centred box, shape (d, 2N+1, ..., 2N+1)."""
    ax = np.arange(-N, N + 1)
    K = np.stack(np.meshgrid(*([ax] * d), indexing="ij"))
    K.setflags(write=False)
    return K


@lru_cache(maxsize=None)
def _mode_l1(d, N):
    out = np.abs(_modes(d, N)).sum(axis=0)
    out.setflags(write=False)
    return out


def _weights(d, D, N, r, s):
    rp = float(r) ** _mono_degree(d, D).astype(float)
    es = np.exp(float(s) * _mode_l1(d, N))
    return rp.reshape((-1,) + (1,) * d) * es[None]


def _box(coef, N_from, N_to):
    """Crop or zero-pad the centred mode box of a coefficient array."""
    if N_from == N_to:
        return coef
    d = coef.ndim - 1
    if N_to < N_from:
        sl = (slice(None),) + (slice(N_from - N_to, N_from + N_to + 1),) * d
        return coef[sl]
    out = np.zeros((coef.shape[0],) + (2 * N_to + 1,) * d, dtype=complex)
    sl = (slice(None),) + (slice(N_to - N_from, N_to + N_from + 1),) * d
    out[sl] = coef
    return out


def _to_grid(coef, N, M):
    """Values sum_k c_k exp(i k x_j) on the uniform grid x_j = 2 pi j / M."""
    d = coef.ndim - 1
    buf = np.zeros((coef.shape[0],) + (M,) * d, dtype=complex)
    idx = np.arange(-N, N + 1) % M
    buf[(slice(None),) + np.ix_(*([idx] * d))] = coef
    return sfft.ifftn(buf, axes=tuple(range(1, d + 1)), norm="forward")


def _from_grid(vals, N_out, M):
    d = vals.ndim - 1
    c = sfft.fftn(vals, axes=tuple(range(1, d + 1)), norm="forward")
    idx = np.arange(-N_out, N_out + 1) % M
    return c[(slice(None),) + np.ix_(*([idx] * d))]


def _realify(coef):
    d = coef.ndim - 1
    flipped = coef[(slice(None),) + (slice(None, None, -1),) * d]
    return 0.5 * (coef + np.conj(flipped))


@njit(cache=True)
def _pair_accumulate(A, B, ia, jb, ob, out):
    G = A.shape[1]
    for p in range(ia.size):
        a = A[ia[p]]
        b = B[jb[p]]
        o = out[ob[p]]
        for g in range(G):
            o[g] += a[g] * b[g]


def _poly_mul_rows(A, B, d, D, rows_a=None, rows_b=None):
    """Truncated product of Taylor polynomials whose coefficients are arrays.

    A, B have shape (n_mono(d, D),) + grid; the product keeps |m|_1 <= D.
    """
    deg = _mono_degree(d, D)
    S = _sum_index(d, D, D)
    rows_a = _nonzero_rows(A) if rows_a is None else np.asarray(rows_a)
    rows_b = _nonzero_rows(B) if rows_b is None else np.asarray(rows_b)
    ia, jb = np.meshgrid(rows_a, rows_b, indexing="ij")
    ok = deg[ia] + deg[jb] <= D
    ia, jb = ia[ok].astype(np.int64), jb[ok].astype(np.int64)
    shape = A.shape
    out = np.zeros((shape[0], int(np.prod(shape[1:]))), complex)
    _pair_accumulate(np.ascontiguousarray(A.reshape(shape[0], -1), dtype=complex),
                     np.ascontiguousarray(B.reshape(B.shape[0], -1), dtype=complex),
                     ia, jb, S[ia, jb].astype(np.int64), out)
    return out.reshape(shape)


def _nonzero_rows(A):
    flat = A.reshape(A.shape[0], -1)
    return np.flatnonzero(np.any(flat != 0, axis=1))


# Grids are sampled on the complex-shifted tori Im x = -s*sig.  There the
# coefficient c_k appears multiplied by exp(s sig.k), which equals the norm
# weight exp(s|k|_1) on the orthant of sig, so FFT round-off is relative to
# the weighted norm rather than to the sup on real angles.  Orthants -sig
# follow from reality, hence only half of the sign patterns are sampled.

@lru_cache(maxsize=None)
def _tilts(d):
    return tuple(sg for sg in itertools.product((1, -1), repeat=d) if sg[0] == 1)


def _tilt(d, N, s, sig):
    return np.exp(float(s) * np.tensordot(np.asarray(sig, float), _modes(d, N), axes=1))[None]


def _assemble(parts, d, N):
    """Merge per-orthant coefficient estimates into one array."""
    K = _modes(d, N)
    first = next(iter(parts.values()))
    out = np.zeros_like(first)
    done = np.zeros(K.shape[1:], bool)
    rev = (slice(None),) + (slice(None, None, -1),) * d
    for sig, C in parts.items():
        for sign in (1, -1):
            sg = (sign * np.asarray(sig)).reshape((-1,) + (1,) * d)
            mask = np.all(sg * K >= 0, axis=0) & ~done
            src = C if sign == 1 else np.conj(C[rev])
            out[:, mask] = src[:, mask]
            done |= mask
    return out


def _chop(coef, w, scale):
    """Zero round-off sized entries in place; returns their weighted sum."""
    wc = np.abs(coef) * w
    small = (wc < _CHOP * scale) & (coef != 0)
    if not small.any():
        return 0.0
    coef[small] = 0
    return float(wc[small].sum())


# ---------------------------------------------------------------- the series


class FourierTaylor:
    """Immutable truncated Fourier-Taylor series.

    Parameters
    ----------
    coef : complex array, shape (n_mono(d, D),) + (2N+1,)*d
        Coefficients indexed by monomial (graded order, see ``monomials``)
        and by mode vector k (centred box, index k + N).  Modes with
        |k|_1 > N must be zero.
    base_point : array of length d
    tail : float
        Bound for dropped terms, valid on ``D_{r,s}(base_point)``.
    """

    __array_priority__ = 1000
    __slots__ = ("coef", "base_point", "taylor_degree", "mode_cutoff",
                 "truncation_tail", "r", "s", "_eff")

    def __init__(self, coef, base_point, taylor_degree, mode_cutoff,
                 tail=0.0, r=1.0, s=1.0):
        y0 = np.array(base_point, dtype=float).reshape(-1)
        d = y0.size
        coef = np.asarray(coef, dtype=complex)
        D, N = int(taylor_degree), int(mode_cutoff)
        shape = (len(monomials(d, D)),) + (2 * N + 1,) * d
        if coef.shape != shape:
            raise ValueError(f"coefficient array has shape {coef.shape}, expected {shape}")
        mask = _mode_l1(d, N) > N
        if mask.any() and np.any(coef[:, mask] != 0):
            raise ValueError("coefficients outside |k|_1 <= N")
        if tail < 0:
            raise ValueError("tail must be nonnegative")
        coef = coef.copy()
        coef.setflags(write=False)
        y0.setflags(write=False)
        self.coef = coef
        self.base_point = y0
        self.taylor_degree = D
        self.mode_cutoff = N
        self.truncation_tail = float(tail)
        self.r = float(r)
        self.s = float(s)
        self._eff = None

    # -- constructors
    @classmethod
    def zeros(cls, d, D, N, base_point=None, r=1.0, s=1.0):
        y0 = np.zeros(d) if base_point is None else base_point
        shape = (len(monomials(d, D)),) + (2 * N + 1,) * d
        return cls(np.zeros(shape, complex), y0, D, N, 0.0, r, s)

    @classmethod
    def constant(cls, value, d, D=0, N=0, base_point=None, r=1.0, s=1.0):
        f = cls.zeros(d, D, N, base_point, r, s)
        c = f.coef.copy()
        c[(0,) + (N,) * d] = value
        return f._replace(coef=c)

    @classmethod
    def from_terms(cls, terms, base_point, D, N, r=1.0, s=1.0, tail=0.0):
        """Build from {(k, m): c}.  Missing conjugate partners are not added."""
        y0 = np.array(base_point, dtype=float).reshape(-1)
        d = y0.size
        idx = _mono_index(d, D)
        coef = np.zeros((len(idx),) + (2 * N + 1,) * d, complex)
        for (k, m), c in terms.items():
            k = tuple(int(v) for v in k)
            m = tuple(int(v) for v in m)
            if len(k) != d or len(m) != d:
                raise ValueError(f"term {(k, m)} has wrong dimension for d={d}")
            if sum(abs(v) for v in k) > N or sum(m) > D or min(m) < 0:
                raise ValueError(f"term {(k, m)} outside truncation (D={D}, N={N})")
            coef[(idx[m],) + tuple(v + N for v in k)] += c
        return cls(coef, y0, D, N, tail, r, s)

    @classmethod
    def from_function_samples(cls, func, d, N, M=None, base_point=None, r=1.0, s=1.0):
        """Angle-only series from samples of a real function on a uniform grid."""
        M = M or 4 * (2 * N + 1)
        x = 2 * np.pi * np.arange(M) / M
        X = np.stack(np.meshgrid(*([x] * d), indexing="ij"), axis=-1)
        vals = np.asarray(func(X), dtype=complex).reshape((1,) + (M,) * d)
        c = _from_grid(vals, N, M)
        c[:, _mode_l1(d, N) > N] = 0
        return cls(_realify(c), np.zeros(d) if base_point is None else base_point,
                   0, N, 0.0, r, s)

    def _replace(self, **kw):
        args = dict(coef=self.coef, base_point=self.base_point,
                    taylor_degree=self.taylor_degree, mode_cutoff=self.mode_cutoff,
                    tail=self.truncation_tail, r=self.r, s=self.s)
        args.update(kw)
        return FourierTaylor(**args)

    # -- basic attributes
    @property
    def d(self):
        return self.base_point.size

    @property
    def domain(self):
        return DomainSpec(tuple(self.base_point), self.r, min(self.s, 1.0))

    @property
    def terms(self):
        """Nonzero coefficients as {(k, m): c}."""
        out = {}
        mons = monomials(self.d, self.taylor_degree)
        K = _modes(self.d, self.mode_cutoff)
        for pos in zip(*np.nonzero(self.coef)):
            k = tuple(int(K[(i,) + pos[1:]]) for i in range(self.d))
            out[(k, tuple(int(v) for v in mons[pos[0]]))] = complex(self.coef[pos])
        return out

    def effective_cutoff(self):
        """Largest |k|_1 carrying a nonzero coefficient (-1 for the zero series)."""
        if self._eff is None:
            nz = np.any(self.coef != 0, axis=0)
            self._eff = int(_mode_l1(self.d, self.mode_cutoff)[nz].max()) if nz.any() else -1
        return self._eff

    def with_domain(self, r=None, s=None):
        """Retag the reference domain; shrinking keeps the tail valid."""
        return self._replace(r=self.r if r is None else r, s=self.s if s is None else s)

    def resize(self, D=None, N=None):
        """Pad or truncate to degree D and cutoff N, accounting dropped terms."""
        D = self.taylor_degree if D is None else int(D)
        N = self.mode_cutoff if N is None else int(N)
        d = self.d
        c = self.coef
        dropped = 0.0
        if N < self.mode_cutoff:
            w = _weights(d, self.taylor_degree, self.mode_cutoff, self.r, self.s)
            out = _mode_l1(d, self.mode_cutoff) > N
            dropped += float(np.sum(np.abs(c[:, out]) * w[:, out]))
        c = _box(c, self.mode_cutoff, N).copy() if N != self.mode_cutoff else c.copy()
        if N < self.mode_cutoff:
            c[:, _mode_l1(d, N) > N] = 0
        if D != self.taylor_degree:
            old = monomials(d, self.taylor_degree)
            idx_new = _mono_index(d, D)
            new = np.zeros((len(idx_new),) + c.shape[1:], complex)
            rd = float(self.r) ** _mono_degree(d, self.taylor_degree)
            es = np.exp(self.s * _mode_l1(d, N))
            for i, m in enumerate(old):
                j = idx_new.get(tuple(int(v) for v in m))
                if j is None:
                    dropped += float(np.sum(np.abs(c[i]) * es)) * rd[i]
                else:
                    new[j] = c[i]
            c = new
        return self._replace(coef=c, taylor_degree=D, mode_cutoff=N,
                             tail=self.truncation_tail + dropped)

    # -- norms
    def coef_norm(self, r=None, s=None):
        """Weighted l1 norm of the stored coefficients (tail excluded)."""
        r = self.r if r is None else r
        s = self.s if s is None else s
        w = _weights(self.d, self.taylor_degree, self.mode_cutoff, r, s)
        return float(np.sum(np.abs(self.coef) * w))

    def reality_defect(self):
        d = self.d
        flipped = self.coef[(slice(None),) + (slice(None, None, -1),) * d]
        return float(np.max(np.abs(self.coef - np.conj(flipped)), initial=0.0))

    # -- arithmetic
    def _check_base(self, other):
        if self.d != other.d or not np.allclose(self.base_point, other.base_point,
                                                rtol=0, atol=1e-15):
            raise DomainError("series have different base points")

    def __add__(self, other):
        if isinstance(other, FourierTaylor):
            self._check_base(other)
            D = max(self.taylor_degree, other.taylor_degree)
            N = max(self.mode_cutoff, other.mode_cutoff)
            a, b = self.resize(D, N), other.resize(D, N)
            return a._replace(coef=a.coef + b.coef,
                              tail=a.truncation_tail + b.truncation_tail,
                              r=min(a.r, b.r), s=min(a.s, b.s))
        c = self.coef.copy()
        c[(0,) + (self.mode_cutoff,) * self.d] += other
        return self._replace(coef=c)

    __radd__ = __add__

    def __neg__(self):
        return self._replace(coef=-self.coef)

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, FourierTaylor):
            return multiply(self, other)
        return self._replace(coef=self.coef * other,
                             tail=self.truncation_tail * abs(other))

    __rmul__ = __mul__

    def __truediv__(self, c):
        return self * (1.0 / c)

    def __repr__(self):
        return (f"FourierTaylor(d={self.d}, D={self.taylor_degree}, N={self.mode_cutoff}, "
                f"terms={int(np.count_nonzero(self.coef))}, tail={self.truncation_tail:.3g})")

    # -- calculus shortcuts
    def dx(self, i):
        return derivative(self, ("x", i))

    def dy(self, i):
        return derivative(self, ("y", i))

    def __call__(self, y, x):
        return evaluate(self, y, x)

    # -- serialization
    def to_records(self):
        recs = [{"k": list(k), "m": list(m), "re": c.real, "im": c.imag}
                for (k, m), c in sorted(self.terms.items())]
        return {"base_point": [float(v) for v in self.base_point],
                "D": self.taylor_degree, "N": self.mode_cutoff,
                "tail": self.truncation_tail, "r": self.r, "s": self.s,
                "terms": recs}

    @classmethod
    def from_records(cls, data, check_reality=True):
        terms = {}
        for rec in data["terms"]:
            key = (tuple(rec["k"]), tuple(rec["m"]))
            terms[key] = terms.get(key, 0) + complex(rec["re"], rec.get("im", 0.0))
        f = cls.from_terms(terms, data["base_point"], data["D"], data["N"],
                           data.get("r", 1.0), data.get("s", 1.0), data.get("tail", 0.0))
        if check_reality:
            scale = max(1.0, float(np.max(np.abs(f.coef), initial=0.0)))
            if f.reality_defect() > 1e-12 * scale:
                bad = next((k, m) for (k, m), c in terms.items()
                           if abs(terms.get((tuple(-v for v in k), m), 0) - np.conj(c)) > 1e-12 * scale)
                raise ValueError(f"term list is not real: conjugate partner of k={bad[0]}, "
                                 f"m={bad[1]} missing or inconsistent")
        return f


# ---------------------------------------------------------------- operations


def evaluate(f: FourierTaylor, y, x):
    """Point value; real for real arguments."""
    Y = np.atleast_2d(np.asarray(y))
    X = np.atleast_2d(np.asarray(x))
    v = evaluate_many(f, Y, X)[0]
    if np.isrealobj(y) and np.isrealobj(x):
        return float(v.real)
    return complex(v)


def evaluate_many(f: FourierTaylor, Y, X, chunk=256, relative=False):
    """Values at points (Y[p], X[p]); arrays of shape (n, d).

    With ``relative=True`` the rows of Y are offsets from the base point,
    which avoids cancellation for tiny offsets.
    """
    d = f.d
    Y = np.asarray(Y).reshape(-1, d)
    X = np.asarray(X).reshape(-1, d)
    if len(Y) == 1 and len(X) > 1:
        Y = np.repeat(Y, len(X), axis=0)
    mons = monomials(d, f.taylor_degree)
    flat = f.coef.reshape(len(mons), -1)
    cols = np.flatnonzero(np.any(flat != 0, axis=0))
    rows = np.flatnonzero(np.any(flat != 0, axis=1))
    out = np.zeros(len(X), complex)
    if cols.size == 0:
        return out
    K = _modes(d, f.mode_cutoff).reshape(d, -1)[:, cols]
    C = flat[np.ix_(rows, cols)]
    mrows = mons[rows]
    for a in range(0, len(X), chunk):
        xs = X[a:a + chunk]
        ys = Y[a:a + chunk] if relative else Y[a:a + chunk] - f.base_point
        E = np.exp(1j * (xs @ K))
        ym = np.prod(ys[:, None, :] ** mrows[None, :, :], axis=2)
        out[a:a + chunk] = np.sum((E @ C.T) * ym, axis=1)
    return out


def multiply(f: FourierTaylor, g: FourierTaylor) -> FourierTaylor:
    """Truncated product; dropped terms are added to the tail exactly."""
    f._check_base(g)
    d = f.d
    D = max(f.taylor_degree, g.taylor_degree)
    N = max(f.mode_cutoff, g.mode_cutoff)
    f, g = f.resize(D, N), g.resize(D, N)
    r, s = min(f.r, g.r), min(f.s, g.s)
    nf, ng = f.effective_cutoff(), g.effective_cutoff()
    nf_norm, ng_norm = f.coef_norm(r, s), g.coef_norm(r, s)
    tf, tg = f.truncation_tail, g.truncation_tail
    prop = tf * ng_norm + tg * nf_norm + tf * tg
    zero = FourierTaylor.zeros(d, D, N, f.base_point, r, s)
    if nf < 0 or ng < 0:
        return zero._replace(tail=max(prop, tf, tg))
    n_out = nf + ng
    M = sfft.next_fast_len(2 * n_out + 1)
    ra, rb = _nonzero_rows(f.coef), _nonzero_rows(g.coef)
    S = _sum_index(d, D, D)
    fa, gb = _box(f.coef[ra], N, nf), _box(g.coef[rb], N, ng)
    parts = {}
    for sig in _tilts(d):
        A = _to_grid(fa * _tilt(d, nf, s, sig), nf, M)
        B = _to_grid(gb * _tilt(d, ng, s, sig), ng, M)
        vals = np.zeros((len(monomials(d, 2 * D)),) + (M,) * d, complex)
        for ii, i in enumerate(ra):
            vals[S[i, rb]] += A[ii] * B
        parts[sig] = _from_grid(vals, n_out, M) / _tilt(d, n_out, s, sig)
    C = _assemble(parts, d, n_out)
    C[:, _mode_l1(d, n_out) > n_out] = 0
    # split kept / dropped
    deg_ext = _mono_degree(d, 2 * D)
    w = _weights(d, 2 * D, n_out, r, s)
    drop_mask = np.broadcast_to(_mode_l1(d, n_out)[None] > N, C.shape) | \
        (deg_ext.reshape((-1,) + (1,) * d) > D)
    dropped = float(np.sum(np.abs(C[drop_mask]) * w[drop_mask]))
    keep = C[: len(monomials(d, D))].copy()
    keep[:, _mode_l1(d, n_out) > N] = 0
    keep = _box(keep, n_out, N)
    dropped += _chop(keep, _weights(d, D, N, r, s), nf_norm * ng_norm)
    tail = max(dropped + prop, tf, tg)
    return FourierTaylor(_realify(keep), f.base_point, D, N, tail, r, s)


def average(f: FourierTaylor) -> FourierTaylor:
    """The k = 0 part."""
    return project_modes(f, 0)


def project_modes(f: FourierTaylor, kappa: float) -> FourierTaylor:
    """Keep exactly the terms with |k|_1 <= kappa."""
    if kappa < 0:
        raise ValueError("kappa must be nonnegative")
    c = f.coef.copy()
    c[:, _mode_l1(f.d, f.mode_cutoff) > kappa] = 0
    return f._replace(coef=c)


def derivative(f: FourierTaylor, which) -> FourierTaylor:
    """Termwise derivative; ``which`` is ("x", i) or ("y", i).

    Action derivatives lower the Taylor degree by one.  The tail is carried
    unchanged.
    """
    kind, i = which
    d = f.d
    if kind == "x":
        K = _modes(d, f.mode_cutoff)[i]
        return f._replace(coef=f.coef * (1j * K)[None])
    if kind != "y":
        raise ValueError(f"unknown derivative kind {kind!r}")
    D = f.taylor_degree
    D1 = max(D - 1, 0)
    src = _mono_index(d, D)
    new = np.zeros((len(monomials(d, D1)),) + f.coef.shape[1:], complex)
    if D > 0:
        for j, m in enumerate(monomials(d, D1)):
            mm = list(int(v) for v in m)
            mm[i] += 1
            new[j] = mm[i] * f.coef[src[tuple(mm)]]
    return f._replace(coef=new, taylor_degree=D1)


def gradient_y(f):
    return [derivative(f, ("y", i)) for i in range(f.d)]


def gradient_x(f):
    return [derivative(f, ("x", i)) for i in range(f.d)]


def frequency_derivative(f: FourierTaylor, omega) -> FourierTaylor:
    """D_omega f = omega . f_x."""
    K = _modes(f.d, f.mode_cutoff)
    factor = 1j * np.tensordot(np.asarray(omega, float), K, axes=1)
    return f._replace(coef=f.coef * factor[None])


def majorant_norm(f: FourierTaylor, domain: DomainSpec | None = None, r=None, s=None) -> float:
    """sum |c| r^|m| e^{s|k|} + tail."""
    if domain is not None:
        r, s = domain.r, domain.s
    return f.coef_norm(r, s) + f.truncation_tail


def vector_norm(fs: Sequence[FourierTaylor], r=None, s=None) -> float:
    """Max over components (sup-norm convention for vectors)."""
    return max(majorant_norm(f, r=r, s=s) for f in fs)


def matrix_norm(rows, r=None, s=None) -> float:
    """Operator norm induced by the max norm: max row sum of entry norms."""
    return max(sum(majorant_norm(f, r=r, s=s) for f in row) for row in rows)


def recenter(f: FourierTaylor, new_base, D=None) -> FourierTaylor:
    """Exact Taylor re-expansion about ``new_base``, truncated at degree D."""
    d = f.d
    new_base = np.asarray(new_base, float).reshape(-1)
    delta = new_base - f.base_point
    shift = float(np.max(np.abs(delta), initial=0.0))
    if shift >= f.r:
        raise DomainError(f"recentering shift {shift:.3g} is not inside the radius r={f.r:.3g}")
    D_old = f.taylor_degree
    D = D_old if D is None else int(D)
    old = monomials(d, D_old)
    T = np.zeros((len(old), len(old)))
    for a, j in enumerate(old):
        for b, m in enumerate(old):
            if np.all(j <= m):
                T[a, b] = np.prod([math.comb(int(mi), int(ji)) * delta[i] ** int(mi - ji)
                                   for i, (mi, ji) in enumerate(zip(m, j))])
    c = (T @ f.coef.reshape(len(old), -1)).reshape(f.coef.shape)
    g = FourierTaylor(c, new_base, D_old, f.mode_cutoff, f.truncation_tail,
                      f.r - shift, f.s)
    return g.resize(D=D) if D != D_old else g


def _dy_multi_over_factorial(f, m):
    """partial_y^m f / m!  (same degree as f, top coefficients vanish)."""
    d = f.d
    D = f.taylor_degree
    idx = _mono_index(d, D)
    new = np.zeros_like(f.coef)
    m = np.asarray(m)
    for j, mj in enumerate(monomials(d, D)):
        src = idx.get(tuple(int(v) for v in mj + m))
        if src is not None:
            fac = np.prod([math.comb(int(a + b), int(b)) for a, b in zip(mj, m)])
            new[j] = fac * f.coef[src]
    return f._replace(coef=new)


def taylor_increment(f: FourierTaylor, shift: Sequence[FourierTaylor], eps: float,
                     order: int = 0) -> FourierTaylor:
    """sum_{|m| >= order} eps^{|m|-order} (d^m f / m!) shift^m.

    order=0 gives f(y + eps*shift, x); order=1, 2 give the divided Taylor
    remainders without cancellation.
    """
    d = f.d
    if len(shift) != d:
        raise ValueError("shift must have d components")
    hs = max((majorant_norm(h) for h in shift), default=0.0)
    if abs(eps) * hs >= f.r:
        raise DomainError(f"action shift {abs(eps) * hs:.3g} leaves the polydisc of radius {f.r:.3g}")
    r_out = min(min(h.r for h in shift), f.r - abs(eps) * hs)
    s_out = min(min(h.s for h in shift), f.s)
    D = f.taylor_degree
    N = max([f.mode_cutoff] + [h.mode_cutoff for h in shift])
    one = FourierTaylor.constant(1.0, d, D, N, f.base_point, r_out, s_out)
    powers = {(0,) * d: one}
    total = FourierTaylor.zeros(d, D, N, f.base_point, r_out, s_out)
    for m in monomials(d, D):
        mt = tuple(int(v) for v in m)
        deg = sum(mt)
        dfm = _dy_multi_over_factorial(f, m)
        needed = deg >= order and np.any(dfm.coef != 0)
        if deg > 0:
            i = next(a for a in range(d) if mt[a] > 0)
            parent = list(mt)
            parent[i] -= 1
            parent = tuple(parent)
            if parent in powers:
                powers[mt] = multiply(powers[parent], shift[i])
        if needed:
            total = total + float(eps) ** (deg - order) * multiply(dfm.with_domain(r_out, s_out), powers[mt])
    return total


def compose_action(f: FourierTaylor, shift: Sequence[FourierTaylor], eps: float) -> FourierTaylor:
    """f(y + eps*shift(y, x), x) in the truncated algebra."""
    if eps == 0:
        return f
    return taylor_increment(f, shift, eps, order=0)


# -- angle composition


def _exp_remainder(z, n):
    """Upper bound for sum_{j>n} z^j / j!, z >= 0 elementwise."""
    z = np.asarray(z, float)
    lead = z ** (n + 1) / math.factorial(n + 1)
    q = z / (n + 2)
    with np.errstate(divide="ignore"):
        bound = np.where(q < 1, lead / np.maximum(1 - q, 1e-300), np.exp(z))
    return bound


def _mode_weights(f, r, s):
    return np.sum(np.abs(f.coef) * _weights(f.d, f.taylor_degree, f.mode_cutoff, r, s), axis=0)


def _angle_remainder(f, a, r, s_out, n):
    w = _mode_weights(f, r, s_out)
    z = _mode_l1(f.d, f.mode_cutoff).astype(float) * a
    return float(np.sum(w * _exp_remainder(z, n)))


def _angle_order(fs, a, r, s_out, tol, n_cap=40):
    """Smallest n with angle-Taylor remainder below tol*||f|| for every f."""
    n_best = 0
    for f in fs:
        scale = max(f.coef_norm(r, s_out), 1e-300)
        n = 0
        while n < n_cap and _angle_remainder(f, a, r, s_out, n) > tol * scale:
            n += 1
        n_best = max(n_best, n)
    return n_best


def _graded(f, r, s):
    """Weighted norm of each Taylor degree, length D+1."""
    w = np.abs(f.coef) * _weights(f.d, f.taylor_degree, f.mode_cutoff, r, s)
    deg = _mono_degree(f.d, f.taylor_degree)
    return np.array([w[deg == j].sum() for j in range(f.taylor_degree + 1)])


def _graded_by_mode(f, r, s):
    """W[l, j]: weighted norm of the degree-j terms with |k|_1 = l."""
    d = f.d
    w = np.abs(f.coef) * _weights(d, f.taylor_degree, f.mode_cutoff, r, s)
    deg = _mono_degree(d, f.taylor_degree)
    l1 = _mode_l1(d, f.mode_cutoff).ravel()
    W = np.zeros((f.mode_cutoff + 1, f.taylor_degree + 1))
    for j in range(f.taylor_degree + 1):
        wj = w[deg == j].sum(axis=0).ravel()
        keep = l1 <= f.mode_cutoff
        W[:, j] = np.bincount(l1[keep], weights=wj[keep], minlength=f.mode_cutoff + 1)
    return W


def _degree_drop_bound(f, dhat, n_max, r, s_out):
    """Bound for the degree > D part of sum_{n<=n_max} (delta . d_x)^n f / n!."""
    D = f.taylor_degree
    W = _graded_by_mode(f, r, s_out)
    l1 = np.arange(W.shape[0], dtype=float)
    rows = [(l, row) for l, row in zip(l1, W) if l > 0 and row.any()]
    total = 0.0
    power = np.zeros(D + 1)
    power[0] = 1.0
    full_power = 1.0
    dsum = float(dhat.sum())
    for n in range(1, n_max + 1):
        power = np.convolve(power, dhat)[: D + 1]
        full_power *= dsum
        for l, row in rows:
            kept = np.convolve(row, power)[: D + 1].sum()
            total += l ** n / math.factorial(n) * max(row.sum() * full_power - kept, 0.0)
    return total


def _compose_grid(fs, us, eps, n_max, M, D, s_t, sig):
    """Grid values of f(y, z + eps*u(y, z)) on the shifted torus of tilt sig."""
    d = fs[0].d
    tilted = lambda g: _to_grid(g.coef * _tilt(d, g.mode_cutoff, s_t, sig), g.mode_cutoff, M)
    delta = [eps * tilted(u) for u in us]
    acc = [tilted(f) for f in fs]
    K = [_modes(d, f.mode_cutoff) for f in fs]
    # nonzero Taylor rows are read off the small coefficient arrays, not the grids
    f_rows = [_nonzero_rows(f.coef) for f in fs]
    d_rows = [_nonzero_rows(u.coef) for u in us]
    powers = {(0,) * d: None}
    for n in range(1, n_max + 1):
        new_powers = {}
        for l in _compositions(n, d):
            i = next(a for a in range(d) if l[a] > 0)
            parent = list(l)
            parent[i] -= 1
            parent = tuple(parent)
            if powers[parent] is None:
                pw = (delta[i], d_rows[i])
            else:
                prod = _poly_mul_rows(powers[parent][0], delta[i], d, D, powers[parent][1], d_rows[i])
                pw = (prod, _nonzero_rows(prod))
            new_powers[l] = pw
            lf = math.prod(math.factorial(v) for v in l)
            for a, f in enumerate(fs):
                fac = np.prod([(1j * K[a][b]) ** l[b] for b in range(d)], axis=0) / lf
                vals = _to_grid(f.coef * fac[None] * _tilt(d, f.mode_cutoff, s_t, sig),
                                f.mode_cutoff, M)
                acc[a] = acc[a] + _poly_mul_rows(vals, pw[0], d, D, f_rows[a], pw[1])
        powers = new_powers
    return acc


def _compose_level(fs, us, eps, n_max, M, D, s_t):
    """Coefficients of the compositions resolved on an M-point grid."""
    d = fs[0].d
    Nres = (M - 1) // 2
    per = {}
    for sig in _tilts(d):
        vals = _compose_grid(fs, us, eps, n_max, M, D, s_t, sig)
        per[sig] = [_from_grid(v, Nres, M) / _tilt(d, Nres, s_t, sig) for v in vals]
    out = []
    for idx in range(len(fs)):
        C = _assemble({sig: per[sig][idx] for sig in per}, d, Nres)
        C[:, _mode_l1(d, Nres) > Nres] = 0
        out.append(C)
    return out, Nres


def compose_angle(f, u: Sequence[FourierTaylor], eps: float, grid_oversample: int = 4,
                  estimate_aliasing: bool = True, rel_tol: float = 1e-17):
    """f(y, x + eps*u(y, x)) re-expanded by grid sampling.

    ``f`` may be a single series or a list sharing the same shift.  Values on
    the grid come from the angle Taylor expansion, truncated where its
    remainder bound drops below ``rel_tol``.  Aliasing is estimated by
    repeating the sampling on a finer grid.
    """
    single = isinstance(f, FourierTaylor)
    fs = [f] if single else list(f)
    u = list(u)
    d = fs[0].d
    for g in fs[1:] + u:
        fs[0]._check_base(g)
    if len(u) != d:
        raise ValueError("angle shift must have d components")
    if eps == 0:
        return f if single else fs
    D = max(g.taylor_degree for g in fs + u)
    fs = [g.resize(D=D) for g in fs]
    u = [g.resize(D=D) for g in u]
    r = min(g.r for g in fs + u)
    U = max(majorant_norm(g, r=r, s=g.s) for g in u)
    a = abs(eps) * U
    s_in = min(g.s for g in fs)
    s_out = min(s_in - a, min(g.s for g in u))
    if s_out <= 0:
        raise DomainError(f"angle shift {a:.3g} exceeds the analyticity width {s_in:.3g}")
    n_max = _angle_order(fs, a, r, s_out, rel_tol)
    Nmax = max(g.mode_cutoff for g in fs)
    M1 = sfft.next_fast_len(grid_oversample * (2 * Nmax + 1))
    lev1, N1 = _compose_level(fs, u, eps, n_max, M1, D, s_out)
    if estimate_aliasing:
        M2 = sfft.next_fast_len((grid_oversample + 1) * (2 * Nmax + 1))
        lev2, N2 = _compose_level(fs, u, eps, n_max, M2, D, s_out)
    dhat = np.zeros(D + 1)
    for g in u:
        dhat = np.maximum(dhat, abs(eps) * _graded(g, r, g.s))
    out = []
    for idx, g in enumerate(fs):
        N = g.mode_cutoff
        C, Nres = (lev2[idx], N2) if estimate_aliasing else (lev1[idx], N1)
        w = _weights(d, D, Nres, r, s_out)
        outside = _mode_l1(d, Nres) > N
        dropped = float(np.sum(np.abs(C[:, outside]) * w[:, outside]))
        keep = _box(C, Nres, N).copy()
        keep[:, _mode_l1(d, N) > N] = 0
        alias = 0.0
        if estimate_aliasing:
            c1 = _box(lev1[idx], N1, N).copy()
            c1[:, _mode_l1(d, N) > N] = 0
            alias = float(np.sum(np.abs(keep - c1) * _weights(d, D, N, r, s_out)))
        dropped += _chop(keep, _weights(d, D, N, r, s_out), g.coef_norm(r, g.s))
        rem = _angle_remainder(g, a, r, s_out, n_max)
        ydrop = _degree_drop_bound(g, dhat, n_max, r, s_out)
        dfx = max(majorant_norm(derivative(g, ("x", i)), r=r, s=g.s) for i in range(d))
        from_u = abs(eps) * d * dfx * max(h.truncation_tail for h in u)
        tail = g.truncation_tail + from_u + rem + ydrop + dropped + alias
        out.append(FourierTaylor(_realify(keep), g.base_point, D, N, tail, r, s_out))
    return out[0] if single else out


# -- classical estimates


def cauchy_bound(norm: float, l, k, r: float, r_prime: float, s: float, s_prime: float) -> float:
    """p! norm / ((r - r')^|l| (s - s')^|k|), p = |l| + |k|."""
    if not 0 < r_prime < r:
        raise DomainError(f"need 0 < r' < r, got r'={r_prime}, r={r}")
    if not 0 < s_prime < s:
        raise DomainError(f"need 0 < s' < s, got s'={s_prime}, s={s}")
    nl, nk = int(np.sum(l)), int(np.sum(k))
    return math.factorial(nl + nk) * norm / ((r - r_prime) ** nl * (s - s_prime) ** nk)


def fourier_decay_bound(norm: float, k, s: float) -> float:
    """exp(-|k|_1 s) norm."""
    if s <= 0:
        raise DomainError("s must be positive")
    return math.exp(-float(np.sum(np.abs(k))) * s) * norm


def mode_coefficient(f: FourierTaylor, k) -> FourierTaylor:
    """The y-only series f_k(y)."""
    d = f.d
    pos = tuple(int(v) + f.mode_cutoff for v in k)
    c = np.zeros((f.coef.shape[0],) + (1,) * d, complex)
    if all(0 <= p <= 2 * f.mode_cutoff for p in pos):
        c[(slice(None),) + (0,) * d] = f.coef[(slice(None),) + pos]
    return FourierTaylor(c, f.base_point, f.taylor_degree, 0, 0.0, f.r, f.s)
