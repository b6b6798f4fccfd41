"""Optimal allocations computed from known true parameters.

``optimal_allocation`` solves the unknown-variance max-min problem with a
two-level scheme. For a fixed share ``abar`` of the best design, balancing
the pairwise rates is the same as giving every non-best design the same
value ``t`` of W, because V_i = abar/2 * W_i(alpha_i/abar). Each ratio
r_i(t) = W_i^{-1}(t) is found by a bracketed root search on a strictly
increasing function, and ``t`` is then chosen so the ratios fill the
simplex. The outer level bisects on ``abar`` for the largest value whose
U-ratio sum is still at least one; that sum is decreasing in ``abar`` but
may jump where an inner minimizer is not unique, so plain bisection with a
one-sided invariant is used rather than a secant-type method.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from scipy.optimize import brentq

from .core import Allocation, ProblemInstance
from .errors import ConfigurationError, DomainError, SolverError
from .rate import PairParams, bayes_rate, glynn_rate, pairwise_rates, solve_scaled, v_rate

DEFAULT_TOL = 1e-9
BRACKET_TOL = 1e-13
_MAX_BISECT = 200


@dataclass(frozen=True)
class OracleSolution:
    alloc: Allocation
    rate: float
    residuals: dict = field(default_factory=dict)

    @property
    def alphas(self) -> tuple[float, ...]:
        return self.alloc.alphas


class _Pair:
    """Scaled parameters of one (non-best, best) pair with W and its inverse."""

    __slots__ = ("a", "c", "sup")

    def __init__(self, p: PairParams):
        self.a, self.c = p.scaled_variances
        self.sup = math.log1p(1.0 / self.c)

    def w(self, r: float) -> float:
        return solve_scaled(r, self.a, self.c)[2]

    def inverse_w(self, t: float) -> float:
        if t <= 0.0:
            return 0.0
        if t >= self.sup:
            raise DomainError("target exceeds the supremum of W")
        hi = 1.0
        while self.w(hi) < t:
            hi *= 4.0
            if hi > 1e15:
                raise SolverError("could not bracket W^{-1}", {"target": t, "sup": self.sup})
        return brentq(lambda r: self.w(r) - t, 0.0, hi, xtol=1e-300, rtol=1e-15, maxiter=500)


def _others(inst: ProblemInstance) -> list[int]:
    b = inst.best
    return [i for i in range(inst.k) if i != b]


def _check_abar(abar: float) -> None:
    if not 0.0 < abar < 1.0:
        raise DomainError(f"share of the best design must lie in (0, 1), got {abar}")


def _balanced_ratios(pairs: list[_Pair], target_sum: float) -> tuple[list[float], float]:
    """Ratios r_i with equal W_i(r_i) = t and sum(r_i) = target_sum."""
    if len(pairs) == 1:
        r = target_sum
        return [r], pairs[0].w(r)
    t_cap = min(p.sup for p in pairs)

    def excess(t):
        return math.fsum(p.inverse_w(t) for p in pairs) - target_sum

    hi = 0.5 * t_cap
    while excess(hi) <= 0.0:
        hi = 0.5 * (hi + t_cap)
        if t_cap - hi <= 1e-15 * t_cap:
            raise SolverError("could not bracket the common rate target", {"target_sum": target_sum})
    t = brentq(excess, 0.0, hi, xtol=1e-300, rtol=1e-15, maxiter=500)
    return [p.inverse_w(t) for p in pairs], t


def _inner(abar: float, inst: ProblemInstance) -> tuple[tuple[float, ...], list[float], float]:
    others = _others(inst)
    pairs = [_Pair(PairParams.from_instance(inst, i)) for i in others]
    ratios, t = _balanced_ratios(pairs, (1.0 - abar) / abar)
    alphas = [0.0] * inst.k
    alphas[inst.best] = abar
    raw = [abar * r for r in ratios]
    scale = (1.0 - abar) / math.fsum(raw)
    for i, a in zip(others, raw):
        alphas[i] = a * scale
    alphas[inst.best] = 1.0 - math.fsum(alphas[i] for i in others)
    return tuple(alphas), ratios, t


def inner_allocation(alpha_star_bar: float, inst: ProblemInstance, tol: float = DEFAULT_TOL) -> Allocation:
    """Rate-balancing allocation with the best design's share fixed at ``alpha_star_bar``."""
    _check_abar(alpha_star_bar)
    alphas, _, _ = _inner(alpha_star_bar, inst)
    alloc = Allocation(alphas)
    gap = _max_pairwise_gap(alloc, inst)
    rate = bayes_rate(alloc, inst)
    if gap > tol * (1.0 + rate):
        raise SolverError("inner balance did not converge",
                          {"alpha_star_bar": alpha_star_bar, "max_pairwise_gap": gap, "rate": rate})
    return alloc


def _ratio_sums(inst: ProblemInstance, ratios: list[float]) -> tuple[float, float, bool]:
    s_min = s_max = 0.0
    degenerate = False
    for i, r in zip(_others(inst), ratios):
        a, c = PairParams.from_instance(inst, i).scaled_variances
        y_lo, y_hi, _, deg = solve_scaled(r, a, c)
        degenerate = degenerate or deg
        s_min += math.log1p((1.0 - y_lo) ** 2 / c) / math.log1p(y_lo * y_lo / a)
        s_max += math.log1p((1.0 - y_hi) ** 2 / c) / math.log1p(y_hi * y_hi / a)
    return s_min, s_max, degenerate


def balance_sum(alpha_star_bar: float, inst: ProblemInstance) -> tuple[float, float]:
    """Sums over non-best designs of U*/U at the smallest and at the largest inner minimizer."""
    _check_abar(alpha_star_bar)
    _, ratios, _ = _inner(alpha_star_bar, inst)
    s_min, s_max, _ = _ratio_sums(inst, ratios)
    return s_min, s_max


def _max_pairwise_gap(alloc, inst: ProblemInstance) -> float:
    v = pairwise_rates(alloc, inst)
    return max(v) - min(v)


def optimal_allocation(inst: ProblemInstance, tol: float = DEFAULT_TOL,
                       bracket: tuple[float, float] | None = None,
                       xtol: float = BRACKET_TOL) -> OracleSolution:
    """Unique maximizer of the unknown-variance rate exponent.

    The best design's share is the largest ``abar`` whose U-ratio sum at
    the smallest inner minimizers is at least one; bisection keeps
    ``s_min(lo) >= 1 > s_min(hi)`` and returns ``lo``.
    """
    def s_min_at(abar):
        _, ratios, _ = _inner(abar, inst)
        return _ratio_sums(inst, ratios)[0]

    lo, hi = bracket if bracket is not None else (1e-3, 1.0 - 1e-6)
    if not 0.0 < lo < hi < 1.0:
        raise ConfigurationError(f"bracket must satisfy 0 < lo < hi < 1, got {(lo, hi)}")
    n_expand = 0
    while s_min_at(lo) < 1.0:
        lo *= 0.5
        n_expand += 1
        if lo < 1e-15:
            raise SolverError("could not bracket the best design's share from below", {"lo": lo})
    while s_min_at(hi) >= 1.0:
        hi = 1.0 - 0.5 * (1.0 - hi)
        n_expand += 1
        if 1.0 - hi < 1e-15:
            raise SolverError("could not bracket the best design's share from above", {"hi": hi})
    iterations = 0
    while hi - lo > xtol:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if s_min_at(mid) >= 1.0:
            lo = mid
        else:
            hi = mid
        iterations += 1
        if iterations > _MAX_BISECT:
            raise SolverError("bisection on the best design's share did not converge",
                              {"lo": lo, "hi": hi})
    alphas, ratios, t = _inner(lo, inst)
    alloc = Allocation(alphas)
    s_min, s_max, degenerate = _ratio_sums(inst, ratios)
    gap = _max_pairwise_gap(alloc, inst)
    rate = bayes_rate(alloc, inst)
    residuals = {
        "max_pairwise_gap": gap,
        "s_min": s_min,
        "s_max": s_max,
        "degenerate": degenerate,
        "bracket": (lo, hi),
        "iterations": iterations,
        "bracket_expansions": n_expand,
        "w_target": t,
    }
    if gap > tol * (1.0 + rate):
        raise SolverError("pairwise rates are not balanced at the solution", residuals)
    return OracleSolution(alloc, rate, residuals)


def _known_inner(abar: float, inst: ProblemInstance) -> list[float]:
    """Non-best shares balancing the known-variance pairwise rates for a fixed best share."""
    b = inst.best
    others = _others(inst)
    var_b = inst.variances[b]
    gaps2 = [(inst.means[b] - inst.means[i]) ** 2 for i in others]
    vars_ = [inst.variances[i] for i in others]
    v_cap = min(abar * g2 / (2.0 * var_b) for g2 in gaps2)

    def shares(v):
        if v <= 0.0:
            return [0.0] * len(vars_)
        return [s / (g2 / (2.0 * v) - var_b / abar) for s, g2 in zip(vars_, gaps2)]

    def excess(v):
        return math.fsum(shares(v)) - (1.0 - abar)

    hi = 0.5 * v_cap
    while excess(hi) <= 0.0:
        hi = 0.5 * (hi + v_cap)
        if v_cap - hi <= 1e-15 * v_cap:
            raise SolverError("could not bracket the known-variance rate target", {"abar": abar})
    v = brentq(excess, 0.0, hi, xtol=1e-300, rtol=1e-15, maxiter=500)
    out = shares(v)
    scale = (1.0 - abar) / math.fsum(out)
    return [x * scale for x in out]


def known_variance_allocation(inst: ProblemInstance, tol: float = DEFAULT_TOL) -> OracleSolution:
    """Optimal allocation when the variances are known (the frequentist optimum)."""
    b = inst.best
    others = _others(inst)
    var_b = inst.variances[b]

    def total_balance(abar):
        shares = _known_inner(abar, inst)
        return math.fsum((var_b / abar ** 2) / (inst.variances[i] / s ** 2)
                         for i, s in zip(others, shares)) - 1.0

    lo, hi = 1e-6, 1.0 - 1e-9
    if not (total_balance(lo) > 0.0 > total_balance(hi)):
        raise SolverError("known-variance total balance is not bracketed", {"lo": lo, "hi": hi})
    abar = brentq(total_balance, lo, hi, xtol=1e-15, rtol=1e-15, maxiter=500)
    alphas = [0.0] * inst.k
    for i, s in zip(others, _known_inner(abar, inst)):
        alphas[i] = s
    alphas[b] = 1.0 - math.fsum(alphas)
    alloc = Allocation(alphas)
    g = glynn_rate(alloc, inst)
    pair_g = [(inst.means[b] - inst.means[i]) ** 2 / (2.0 * (var_b / alloc[b] + inst.variances[i] / alloc[i]))
              for i in others]
    residuals = {
        "glynn_rate": g,
        "max_pairwise_gap": max(pair_g) - min(pair_g),
        "total_balance": total_balance(alloc[b]) + 1.0,
    }
    if residuals["max_pairwise_gap"] > tol * (1.0 + g) or abs(residuals["total_balance"] - 1.0) > tol:
        raise SolverError("known-variance conditions not met", residuals)
    return OracleSolution(alloc, bayes_rate(alloc, inst), residuals)


def ocba_approx_allocation(inst: ProblemInstance) -> Allocation:
    """Classical OCBA ratios: non-best shares proportional to var_i / gap_i^2,
    best share sqrt(var_best * sum(alpha_i^2 / var_i))."""
    b = inst.best
    w = [0.0] * inst.k
    for i in _others(inst):
        w[i] = inst.variances[i] / (inst.means[b] - inst.means[i]) ** 2
    w[b] = math.sqrt(inst.variances[b] * math.fsum(w[i] ** 2 / inst.variances[i] for i in _others(inst)))
    return Allocation.normalized(w)


def _grid_argmax(f, lo: float, hi: float, points: int, refine: int) -> tuple[float, float, int]:
    """Maximize a unimodal ``f`` on (lo, hi): interior grid, then ``refine`` zooms of 10x."""
    step = (hi - lo) / (points + 1)
    xs = [lo + step * j for j in range(1, points + 1)]
    n_eval = 0
    best_x, best_v = xs[0], -math.inf
    for x in xs:
        v = f(x)
        n_eval += 1
        if v > best_v:
            best_x, best_v = x, v
    for _ in range(refine):
        center = best_x
        step /= 10.0
        for j in range(-10, 11):
            x = center + step * j
            if not lo < x < hi or j == 0:
                continue
            v = f(x)
            n_eval += 1
            if v > best_v:
                best_x, best_v = x, v
    return best_x, best_v, n_eval


def _nested_split(pairs: list[PairParams], budget: float, abar: float, points: int, refine: int,
                  counter: list[int]) -> tuple[float, list[float]]:
    """Max over shares summing to ``budget`` of the smallest pairwise rate, one coordinate per level."""
    if len(pairs) == 1:
        counter[0] += 1
        return v_rate(budget, abar, pairs[0]), [budget]
    head, rest = pairs[0], pairs[1:]

    def value(a):
        counter[0] += 1
        return min(v_rate(a, abar, head), _nested_split(rest, budget - a, abar, points, refine, counter)[0])

    a, val, _ = _grid_argmax(value, 0.0, budget, points, refine)
    _, tail = _nested_split(rest, budget - a, abar, points, refine, counter)
    return val, [a] + tail


def brute_force_allocation(inst: ProblemInstance, grid_points: int = 200, mode: str = "auto",
                           refine: int = 4) -> OracleSolution:
    """Grid search for the max-min allocation.

    ``mode="full"`` (k <= 4) searches the whole simplex one coordinate at a
    time: a grid over the best design's share, and for each value a nested
    grid over the non-best shares, each level zoomed ``refine`` times. The
    nesting keeps every level one-dimensional and unimodal, so the grid
    optimum cannot stall on the ridge where two pairwise rates cross. It
    evaluates pairwise rates directly and shares no code with the
    rate-balancing solver. ``mode="reduced"`` scans the best design's share
    on an equispaced grid and fills in the rest with ``inner_allocation``.
    """
    if grid_points < 2:
        raise ConfigurationError("grid_points must be at least 2")
    if mode == "auto":
        mode = "full" if inst.k <= 3 else "reduced"
    b = inst.best
    others = _others(inst)
    if mode == "full":
        if inst.k > 4:
            raise ConfigurationError("full simplex grid is limited to k <= 4; use mode='reduced'")
        pairs = [PairParams.from_instance(inst, i) for i in others]
        counter = [0]
        abar, _, _ = _grid_argmax(
            lambda x: _nested_split(pairs, 1.0 - x, x, grid_points, refine, counter)[0],
            0.0, 1.0, grid_points, refine)
        _, shares = _nested_split(pairs, 1.0 - abar, abar, grid_points, refine, counter)
        weights = [0.0] * inst.k
        weights[b] = abar
        for i, sh in zip(others, shares):
            weights[i] = sh
        alloc = Allocation.normalized(weights)
        n_eval = counter[0]
    elif mode == "reduced":
        best_val, alloc, n_eval = -1.0, None, 0
        for j in range(1, grid_points + 1):
            cand = inner_allocation(j / (grid_points + 1), inst)
            val = bayes_rate(cand, inst)
            n_eval += 1
            if val > best_val:
                best_val, alloc = val, cand
    else:
        raise ConfigurationError(f"unknown brute-force mode {mode!r}")
    return OracleSolution(alloc, bayes_rate(alloc, inst), {"evaluations": n_eval, "mode": mode})
