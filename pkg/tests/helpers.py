"""Builders shared by the test modules."""
import numpy as np

from arnoldkam.series import FourierTaylor, monomials


def real_series(seed, d=2, D=2, N=3, base=None, scale=1.0, n_terms=6, r=1.0, s=1.0):
    """Random real series: each stored term comes with its conjugate partner."""
    rng = np.random.default_rng(seed)
    mons = monomials(d, D)
    terms = {}
    for _ in range(n_terms):
        k = tuple(int(v) for v in rng.integers(-N, N + 1, d))
        while sum(abs(v) for v in k) > N:
            k = tuple(int(v) for v in rng.integers(-N, N + 1, d))
        m = tuple(int(v) for v in mons[rng.integers(len(mons))])
        c = scale * complex(rng.normal(), rng.normal())
        kc = tuple(-v for v in k)
        if k == kc:
            c = c.real
        terms[(k, m)] = terms.get((k, m), 0) + c
        terms[(kc, m)] = terms.get((kc, m), 0) + np.conj(c)
    y0 = np.zeros(d) if base is None else base
    return FourierTaylor.from_terms(terms, y0, D, N, r, s)


def cos_terms(k, d, amp=1.0):
    """amp * cos(k.x) as a term dict."""
    z = (0,) * d
    return {(tuple(k), z): amp / 2, (tuple(-v for v in k), z): amp / 2}


def series(terms, d, D=0, N=4, base=None, r=1.0, s=1.0):
    return FourierTaylor.from_terms(terms, np.zeros(d) if base is None else base, D, N, r, s)


def dense_homological(P, omega, kappa):
    """Mode-by-mode division, frozen actions: g_k = -P_k / (i omega.k) for 0 < |k|_1 <= kappa."""
    out = {}
    for (k, m), c in P.terms.items():
        if 0 < sum(abs(v) for v in k) <= kappa:
            out[(k, m)] = -c / (1j * float(np.dot(omega, k)))
    return out
