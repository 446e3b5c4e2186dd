"""Explicit constants and smallness thresholds of the torus construction."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

from .series import DomainError


def integral_moment(d: int, a: float) -> float:
    """int_{R^d} |y|_1^a exp(-|y|_1) dy = 2^d Gamma(a+d) / Gamma(d)."""
    if d < 1 or a < 0:
        raise ValueError("need d >= 1 and a >= 0")
    try:
        # gamma is exact on small integers; the log form is only for large arguments
        return 2.0 ** d * (math.gamma(a + d) / math.gamma(d))
    except OverflowError:
        return 2.0 ** d * math.exp(math.lgamma(a + d) - math.lgamma(d))


@dataclass(frozen=True)
class ConstantsTable:
    d: int
    tau: float
    nu: float
    C: dict = field(repr=False)  # index -> value for C0..C15
    C_main: float
    C_star: float
    a: float

    def __getitem__(self, i):
        return self.C[i]

    def as_dict(self):
        out = {"d": self.d, "tau": self.tau, "nu": self.nu, "a": self.a,
               "C": self.C_main, "C_star": self.C_star}
        out.update({f"C{i}": v for i, v in sorted(self.C.items())})
        return out


def build_constants(d: int, tau: float) -> ConstantsTable:
    if d < 1 or tau < max(1, d - 1):
        raise ValueError(f"need d >= 1 and tau >= max(1, d-1); got d={d}, tau={tau}")
    nu = tau + 1.0
    s2 = math.sqrt(2.0)
    C = {}
    C[0] = 4 * s2 * 1.5 ** (2 * nu + d) * (integral_moment(d, nu) + integral_moment(d, 2 * nu))
    C[1] = 2 * 1.5 ** (nu + d) * integral_moment(d, nu)
    C[2] = 2.0 ** (3 * d) * d
    C[3] = (d ** 2 * C[1] ** 2 + 6 * d * C[1] + C[2]) * s2
    C[4] = max(6 * d ** 2 * C[0], C[3])
    C[5] = 3 * 2 ** 5 * d / 5
    C[6] = max(2 ** (2 * nu), C[5])
    C[7] = 3 * d * 2 ** (6 * nu + 2 * d + 3) * s2 * max(640 * d ** 2, C[4])
    C[8] = (2.0 ** -d * C[6]) ** 0.125
    C[9] = 3 * max(80 * d * s2, C[4])
    C[10] = (2.0 ** -(4 * nu + 2 * d + 1) + 2 * C[7]) * C[9] / (3 * d ** 2)
    C[11] = 1 / 2 ** (5 * nu + 3 * d - 2) + C[7] * C[9] / (3 * 5 * 2 ** (nu + 2) * d ** 2 * s2)
    C[12] = 2 ** (2 * nu + 2 * d + 1) * C[6] ** 2 * C[7] * C[8] * C[9]
    C[13] = C[10] + 2 ** -(nu + 1) * C[11]
    C[14] = 2 ** (2 * (3 * nu + 2 * d + 1)) * C[12]
    C[15] = 18 * d ** 3 + 70
    a = 6 * tau + 3 * d + 8
    a = int(a) if float(a).is_integer() else float(a)
    C_main = 2 ** a * C[13]
    C_star = max((4 * nu / math.e) ** (8 * nu / 3) * C[14] ** (2 / 3), 2 * C[15] * C_main)
    return ConstantsTable(d, float(tau), nu, C, C_main, C_star, a)


def _check_widths(s, s_star, theta):
    if not 0 < s_star < s <= 1:
        raise DomainError(f"need 0 < s_star < s <= 1, got s={s}, s_star={s_star}")
    if theta < 1:
        raise ValueError(f"theta must be >= 1, got {theta}")


def epsilon_star(table: ConstantsTable, s, s_star, theta) -> float:
    """(s - s_star)^a / (C_star theta^4)."""
    _check_widths(s, s_star, theta)
    return (s - s_star) ** table.a / (table.C_star * theta ** 4)


def sharp_conditions(table: ConstantsTable, eps, s, s_star, theta):
    """The two left-hand sides whose being <= 1 defines the refined threshold."""
    nu, d = table.nu, table.d
    ds = s - s_star
    first = (table[14] * theta ** (41 / 8) * ds ** (-2 * (3 * nu + 2 * d + 1))
             * eps ** 2 * math.log(1 / eps) ** (2 * nu))
    z = table.C_main * ds ** (-(6 * nu + 3 * d + 2)) * theta ** 3 * eps
    second = 2 * z * math.exp(z) if z < 700 else math.inf
    return first, second


def epsilon_sharp(table: ConstantsTable, s, s_star, theta, rtol=1e-12, max_iter=200) -> float:
    """Largest eps in (0, e^{-2 nu}) meeting both refined conditions (bisection)."""
    _check_widths(s, s_star, theta)
    ok = lambda e: max(sharp_conditions(table, e, s, s_star, theta)) <= 1
    hi = math.exp(-2 * table.nu)
    if ok(hi):
        return hi
    lo = epsilon_star(table, s, s_star, theta)
    while not ok(lo):
        lo /= 2
    for _ in range(max_iter):
        mid = math.sqrt(lo * hi)
        if ok(mid):
            lo = mid
        else:
            hi = mid
        if hi - lo <= rtol * lo:
            break
    return lo


@dataclass
class SmallnessReport:
    alpha_ok: bool
    alpha_margin: float  # (r / Tbar) / alpha
    eps_ok: bool
    eps_margin: float  # eps_star / eps_tilde
    eps_tilde: float
    eps_star: float
    messages: list

    @property
    def ok(self):
        return self.alpha_ok and self.eps_ok

    def as_dict(self):
        return dict(asdict(self), ok=self.ok)


def check_smallness(alpha, r, Tbar, eps_tilde, eps_star_value) -> SmallnessReport:
    """Test alpha <= r/Tbar and the rescaled smallness eps_tilde <= eps_star."""
    a_margin = (r / Tbar) / alpha
    e_margin = eps_star_value / eps_tilde if eps_tilde > 0 else math.inf
    msgs = []
    if a_margin < 1:
        msgs.append(f"radius condition alpha <= r/T violated: alpha={alpha:.6g} > r/T={r / Tbar:.6g}")
    if e_margin < 1:
        msgs.append(f"smallness condition eps_tilde <= eps_star violated: "
                    f"eps_tilde={eps_tilde:.6g} > eps_star={eps_star_value:.6g}")
    return SmallnessReport(a_margin >= 1, a_margin, e_margin >= 1, e_margin,
                           eps_tilde, eps_star_value, msgs)
