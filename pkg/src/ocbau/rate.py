"""Pairwise large-deviations rates under unknown sampling variance.

For a non-best design with parameters (mu_i, var_i) and the best design
(mu_star, var_star), the inner objective is

    g(phi, r) = r * log(1 + (mu_i - phi)^2 / var_i) + log(1 + (mu_star - phi)^2 / var_star)

and ``W(r) = min_phi g(phi, r)``. The pairwise rate at proportions
(alpha_i, alpha_star) is ``alpha_star / 2 * W(alpha_i / alpha_star)``.

g is not convex in phi: its stationary points are the real roots of a cubic
and two of them can be global minimizers at once, which makes the argmin
jump as r crosses such a point. Internally everything is solved in the
coordinate ``y = (phi - mu_i) / (mu_star - mu_i)`` so the relevant roots
live in [0, 1] and W depends only on (r, var_i/d^2, var_star/d^2).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .core import Allocation, ProblemInstance
from .errors import DomainError

DEGENERACY_RTOL = 1e-9
_IMAG_TOL = 1e-8
_TWO_PI_3 = 2.0 * math.pi / 3.0
_SQRT3_2 = math.sqrt(3.0) / 2.0


@dataclass(frozen=True)
class PairParams:
    """A non-best design and the best design, oriented so ``mu_star > mu_i``."""

    mu_i: float
    var_i: float
    mu_star: float
    var_star: float

    def __post_init__(self):
        if not self.mu_star > self.mu_i:
            raise DomainError(f"mu_star ({self.mu_star}) must exceed mu_i ({self.mu_i})")
        if not (self.var_i > 0.0 and self.var_star > 0.0):
            raise DomainError("pair variances must be strictly positive")
        if not all(math.isfinite(x) for x in (self.mu_i, self.var_i, self.mu_star, self.var_star)):
            raise DomainError("pair parameters must be finite")

    @property
    def gap(self) -> float:
        return self.mu_star - self.mu_i

    @property
    def scaled_variances(self) -> tuple[float, float]:
        d2 = self.gap * self.gap
        return self.var_i / d2, self.var_star / d2

    @classmethod
    def from_instance(cls, inst: ProblemInstance, i: int) -> "PairParams":
        b = inst.best
        return cls(inst.means[i], inst.variances[i], inst.means[b], inst.variances[b])


@dataclass(frozen=True)
class MinimizerPair:
    """Smallest and largest global minimizers of g(., r) and the minimum value."""

    phi_min: float
    phi_max: float
    w_value: float
    is_degenerate: bool


def _cbrt(x: float) -> float:
    return math.copysign(abs(x) ** (1.0 / 3.0), x)


def _cubic_roots(b: float, c: float, d: float) -> list[float]:
    """Real roots of the monic cubic y^3 + b y^2 + c y + d.

    Closed form on the depressed cubic, then one Newton step per root.
    A complex pair whose imaginary part is below ``_IMAG_TOL`` is returned
    as its (double) real part.
    """
    shift = b / 3.0
    p = c - b * shift
    q = (2.0 * shift * shift - c) * shift + d
    half_q = 0.5 * q
    disc = half_q * half_q + (p / 3.0) ** 3
    if disc > 0.0:
        w = -half_q - math.copysign(math.sqrt(disc), q)
        u = _cbrt(w)
        v = -p / (3.0 * u) if u != 0.0 else 0.0
        t = u + v
        roots = [t - shift]
        if _SQRT3_2 * abs(u - v) <= _IMAG_TOL:
            roots.append(-0.5 * t - shift)
    elif p == 0.0:
        roots = [-shift]
    else:
        m = 2.0 * math.sqrt(-p / 3.0)
        arg = 3.0 * q / (p * m)
        arg = 1.0 if arg > 1.0 else (-1.0 if arg < -1.0 else arg)
        theta = math.acos(arg) / 3.0
        roots = [m * math.cos(theta - _TWO_PI_3 * j) - shift for j in range(3)]
    polished = []
    for y in roots:
        fp = (3.0 * y + 2.0 * b) * y + c
        if fp != 0.0:
            f = ((y + b) * y + c) * y + d
            y_new = y - f / fp
            if math.isfinite(y_new) and abs(y_new - y) <= 1e-3 * (1.0 + abs(y)):
                y = y_new
        polished.append(y)
    return polished


def _g_scaled(y: float, r: float, a: float, c: float) -> float:
    return r * math.log1p(y * y / a) + math.log1p((1.0 - y) * (1.0 - y) / c)


def solve_scaled(r: float, a: float, c: float, rtol: float = DEGENERACY_RTOL,
                 loc_tol: float = DEGENERACY_RTOL) -> tuple[float, float, float, bool]:
    """Minimize g in the unit coordinate y.

    ``a`` and ``c`` are var_i/d^2 and var_star/d^2. Returns
    ``(y_min, y_max, w, degenerate)``. This is the hot path used by the
    sequential policies, so it takes plain floats and does no validation.
    """
    if r == 0.0:
        return 1.0, 1.0, 0.0, False
    inv = 1.0 / (r + 1.0)
    roots = _cubic_roots(-(2.0 * r + 1.0) * inv, (r * (c + 1.0) + a) * inv, -a * inv)
    best_g = math.inf
    cands = []
    for y in roots:
        if y < -1e-9 or y > 1.0 + 1e-9:
            continue
        y = 0.0 if y < 0.0 else (1.0 if y > 1.0 else y)
        gv = _g_scaled(y, r, a, c)
        cands.append((y, gv))
        if gv < best_g:
            best_g = gv
    if not cands:
        # unreachable for valid inputs: the cubic changes sign on [0, 1]
        raise DomainError(f"no stationary point of g in range for r={r}, a={a}, c={c}")
    thresh = best_g + rtol * max(1.0, abs(best_g))
    opt = [y for y, gv in cands if gv <= thresh]
    y_lo, y_hi = min(opt), max(opt)
    degenerate = (y_hi - y_lo) > loc_tol
    if not degenerate:
        # collapse near-duplicate roots onto the one with the smallest g
        y_lo = y_hi = min(cands, key=lambda t: t[1])[0]
    return y_lo, y_hi, best_g, degenerate


def g_value(phi: float, r: float, p: PairParams) -> float:
    """The inner objective g(phi, r)."""
    if r < 0.0:
        raise DomainError(f"r must be nonnegative, got {r}")
    return r * math.log1p((p.mu_i - phi) ** 2 / p.var_i) + math.log1p((p.mu_star - phi) ** 2 / p.var_star)


def g_derivative(phi: float, r: float, p: PairParams) -> float:
    """Cubic numerator of dg/dphi; same sign as the derivative.

    The full derivative is this value times 2 / ((var_i + (phi-mu_i)^2)(var_star + (phi-mu_star)^2)).
    """
    return (r * (phi - p.mu_i) * (p.var_star + (phi - p.mu_star) ** 2)
            + (phi - p.mu_star) * (p.var_i + (phi - p.mu_i) ** 2))


def phi_minimizers(r: float, p: PairParams, tol: float = DEGENERACY_RTOL,
                   infinite: bool = False) -> MinimizerPair:
    """Smallest/largest global minimizers of g(., r) over phi.

    ``infinite=True`` requests the r -> infinity limit, where both
    minimizers collapse onto mu_i and W approaches its supremum
    log(1 + d^2/var_star). Non-finite ``r`` is otherwise rejected.
    """
    if not tol > 0.0:
        raise DomainError("tol must be positive")
    if infinite:
        return MinimizerPair(p.mu_i, p.mu_i, math.log1p(p.gap ** 2 / p.var_star), False)
    if not math.isfinite(r):
        raise DomainError("r must be finite; pass infinite=True for the r -> infinity limit")
    if r < 0.0:
        raise DomainError(f"r must be nonnegative, got {r}")
    if r == 0.0:
        return MinimizerPair(p.mu_star, p.mu_star, 0.0, False)
    a, c = p.scaled_variances
    y_lo, y_hi, w, degenerate = solve_scaled(r, a, c, rtol=tol, loc_tol=tol)
    d = p.gap
    return MinimizerPair(p.mu_i + d * y_lo, p.mu_i + d * y_hi, w, degenerate)


def w_of_r(r: float, p: PairParams) -> float:
    """W(r) = min over phi of g(phi, r)."""
    return phi_minimizers(r, p).w_value


def w_supremum(p: PairParams) -> float:
    """Limit of W(r) as r -> infinity; W never reaches it."""
    return math.log1p(p.gap ** 2 / p.var_star)


def v_rate(alpha_i: float, alpha_star: float, p: PairParams) -> float:
    """Pairwise rate alpha_star/2 * W(alpha_i/alpha_star)."""
    if alpha_i < 0.0 or alpha_star < 0.0:
        raise DomainError("proportions must be nonnegative")
    if alpha_star == 0.0:
        return 0.0
    return 0.5 * alpha_star * w_of_r(alpha_i / alpha_star, p)


def u_terms(r: float, p: PairParams) -> tuple[float, float, float, float]:
    """(U_min, U*_min, U_max, U*_max): the two log terms of g at phi_min and phi_max."""
    if not math.isfinite(r) or r < 0.0:
        raise DomainError(f"r must be finite and nonnegative, got {r}")
    if r == 0.0:
        return math.log1p(p.gap ** 2 / p.var_i), 0.0, math.log1p(p.gap ** 2 / p.var_i), 0.0
    a, c = p.scaled_variances
    y_lo, y_hi, _, _ = solve_scaled(r, a, c)
    return (math.log1p(y_lo * y_lo / a), math.log1p((1.0 - y_lo) ** 2 / c),
            math.log1p(y_hi * y_hi / a), math.log1p((1.0 - y_hi) ** 2 / c))


def glynn_rate(alloc: Allocation | tuple, inst: ProblemInstance) -> float:
    """Known-variance (frequentist) rate: min over non-best i of gap^2 / (2 (var*/a* + var_i/a_i))."""
    alphas = tuple(alloc)
    b = inst.best
    if alphas[b] <= 0.0:
        return 0.0
    out = math.inf
    for i in range(inst.k):
        if i == b:
            continue
        if alphas[i] <= 0.0:
            return 0.0
        gap = inst.means[b] - inst.means[i]
        out = min(out, gap * gap / (2.0 * (inst.variances[b] / alphas[b] + inst.variances[i] / alphas[i])))
    return out


def pairwise_rates(alloc, inst: ProblemInstance) -> list[float]:
    """Unknown-variance rate for every non-best design, in design order."""
    alphas = tuple(alloc)
    b = inst.best
    return [v_rate(alphas[i], alphas[b], PairParams.from_instance(inst, i))
            for i in range(inst.k) if i != b]


def bayes_rate(alloc, inst: ProblemInstance) -> float:
    """Unknown-variance rate exponent: min over non-best designs of the pairwise rate."""
    return min(pairwise_rates(alloc, inst))
