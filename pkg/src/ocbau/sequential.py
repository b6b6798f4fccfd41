"""Sequential sampling policies and the single-run driver.

Every policy is a function ``step(state) -> design`` over a shared
:class:`PolicyState`. Posterior estimates come from the conjugate model in
:class:`ocbau.core.PosteriorState`: the posterior mean of each design is its
sample mean and the variance estimate is the unbiased sample variance.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import special

from .core import NormalSource, PosteriorState, ProblemInstance, RngConfig, SufficientStats, select_best
from .errors import ConfigurationError, EstimationError
from .rate import solve_scaled

DEFAULT_N0 = 3


class PolicyKind(enum.Enum):
    OCBA_U = "ocba-u"
    OCBA_K = "ocba-k"
    EI = "ei"
    EQUAL = "equal"

    @property
    def code(self) -> int:
        """Stable small integer used to derive per-policy RNG streams."""
        return _POLICY_CODES[self]

    @classmethod
    def parse(cls, text: str) -> "PolicyKind":
        key = text.strip().lower().replace("_", "-")
        for kind in cls:
            if kind.value == key:
                return kind
        raise ConfigurationError(f"unknown policy {text!r}; expected one of {[k.value for k in cls]}")


_POLICY_CODES = {PolicyKind.OCBA_U: 0, PolicyKind.OCBA_K: 1, PolicyKind.EI: 2, PolicyKind.EQUAL: 3}


class PolicyState:
    """Running statistics plus cached plug-in rate quantities for one run.

    ``fixed_means``/``fixed_variances`` replace the posterior estimates with
    given values while counts still evolve; used to study a policy's
    allocation dynamics in isolation from estimation noise.
    """

    def __init__(self, stats: SufficientStats, fixed_means: Sequence[float] | None = None,
                 fixed_variances: Sequence[float] | None = None):
        self.stats = stats
        self.steps = 0
        self._fixed_means = list(fixed_means) if fixed_means is not None else None
        self._fixed_vars = list(fixed_variances) if fixed_variances is not None else None
        self._cache: dict[int, tuple] = {}

    @classmethod
    def with_fixed_estimates(cls, means, variances, counts) -> "PolicyState":
        k = len(counts)
        stats = SufficientStats(list(counts), [0.0] * k, [0.0] * k)
        return cls(stats, fixed_means=means, fixed_variances=variances)

    @property
    def k(self) -> int:
        return self.stats.k

    @property
    def m(self) -> int:
        """Total number of samples collected so far."""
        return sum(self.stats.counts)

    @property
    def means(self) -> list[float]:
        return self._fixed_means if self._fixed_means is not None else self.stats.means

    def variance(self, i: int) -> float:
        if self._fixed_vars is not None:
            return self._fixed_vars[i]
        n = self.stats.counts[i]
        if n < 2:
            raise EstimationError(f"design {i} has {n} samples; need at least 2 for a variance estimate")
        v = self.stats.ssd[i] / (n - 1)
        if not v > 0.0:
            raise EstimationError(f"design {i} has zero sample variance")
        return v

    @property
    def variances(self) -> list[float]:
        return [self.variance(i) for i in range(self.k)]

    @property
    def alphas(self) -> list[float]:
        m = self.m
        return [n / m for n in self.stats.counts]

    @property
    def best(self) -> int:
        """Design with the largest posterior mean, fewest samples on ties."""
        return select_best(self.means, self.stats.counts)

    def best_is_unique(self) -> bool:
        means = self.means
        top = max(means)
        return sum(1 for x in means if x == top) == 1

    def posterior(self) -> PosteriorState:
        return PosteriorState.from_stats(self.stats)

    def record(self, design: int, observation: float) -> None:
        self.stats.update(design, observation)
        self.steps += 1

    def plug_in(self, i: int, b: int | None = None) -> tuple[float, float, float, float]:
        """(W_hat, phi_hat, U_hat, U*_hat) for design ``i`` against the estimated best.

        Cached on the sample counts of the pair, which determine the
        estimates because data only ever get appended.
        """
        if b is None:
            b = self.best
        if i == b:
            raise ConfigurationError("plug-in rate is defined only for non-best designs")
        counts = self.stats.counts
        key = (b, counts[i], counts[b])
        hit = self._cache.get(i)
        if hit is not None and hit[0] == key:
            return hit[1]
        means = self.means
        d = means[b] - means[i]
        if d <= 0.0:
            out = (0.0, means[b], 0.0, 0.0)
        else:
            d2 = d * d
            a = self.variance(i) / d2
            c = self.variance(b) / d2
            y_lo, _, w, _ = solve_scaled(counts[i] / counts[b], a, c)
            out = (w, means[i] + d * y_lo, math.log1p(y_lo * y_lo / a), math.log1p((1.0 - y_lo) ** 2 / c))
        self._cache[i] = (key, out)
        return out


def plug_in_rate(i: int, state: PolicyState) -> tuple[float, float]:
    """Plug-in pairwise rate and its (smallest) inner minimizer for design ``i``."""
    b = state.best
    w, phi, _, _ = state.plug_in(i, b)
    alpha_b = state.stats.counts[b] / state.m
    return 0.5 * alpha_b * w, phi


def ocba_u_step(state: PolicyState) -> int:
    """One decision of the unknown-variance rate-balancing policy."""
    b = state.best
    if not state.best_is_unique():
        return b
    j, j_w, ratio_sum = -1, math.inf, 0.0
    for i in range(state.k):
        if i == b:
            continue
        w, _, u, u_star = state.plug_in(i, b)
        # argmin of V_hat equals argmin of W_hat: they differ by the common factor alpha_b/2
        if w < j_w:
            j, j_w = i, w
        ratio_sum += u_star / u
    return b if ratio_sum > 1.0 else j


def ocba_k_step(state: PolicyState) -> int:
    """Known-variance analog: balance on plug-in Glynn-Juneja conditions."""
    b = state.best
    if not state.best_is_unique():
        return b
    counts = state.stats.counts
    means = state.means
    var_b = state.variance(b)
    nb = counts[b]
    j, j_rate, ratio_sum = -1, math.inf, 0.0
    for i in range(state.k):
        if i == b:
            continue
        var_i = state.variance(i)
        ni = counts[i]
        ratio_sum += (var_b / (nb * nb)) / (var_i / (ni * ni))
        gap = means[b] - means[i]
        rate = gap * gap / (var_b / nb + var_i / ni)
        if rate < j_rate:
            j, j_rate = i, rate
    return b if ratio_sum > 1.0 else j


def t_expected_excess(z, nu):
    """E[max(T - z, 0)] for T ~ Student-t with ``nu > 1`` degrees of freedom.

    Equals (nu + z^2)/(nu - 1) * f(z) - z * (1 - F(z)).
    """
    z = np.asarray(z, dtype=float)
    nu = np.asarray(nu, dtype=float)
    if np.any(nu <= 1.0):
        raise EstimationError("Student-t expected improvement needs more than one degree of freedom")
    log_norm = special.gammaln(0.5 * (nu + 1.0)) - special.gammaln(0.5 * nu) - 0.5 * np.log(nu * np.pi)
    pdf = np.exp(log_norm - 0.5 * (nu + 1.0) * np.log1p(z * z / nu))
    sf = special.stdtr(nu, -z)
    return (nu + z * z) / (nu - 1.0) * pdf - z * sf


def ei_scores(state: PolicyState) -> np.ndarray:
    counts = np.asarray(state.stats.counts, dtype=float)
    means = np.asarray(state.means, dtype=float)
    var = np.asarray(state.variances, dtype=float)
    b = state.best
    gaps = means[b] - means
    gaps[b] = means[b] - np.max(np.delete(means, b))
    s = np.sqrt(var / counts)
    return s * t_expected_excess(gaps / s, counts - 1.0)


def ei_step(state: PolicyState) -> int:
    """Student-t expected improvement; ties go to the lowest index."""
    return int(np.argmax(ei_scores(state)))


def equal_step(state: PolicyState) -> int:
    counts = state.stats.counts
    return counts.index(min(counts))


STEP_FUNCTIONS: dict[PolicyKind, Callable[[PolicyState], int]] = {
    PolicyKind.OCBA_U: ocba_u_step,
    PolicyKind.OCBA_K: ocba_k_step,
    PolicyKind.EI: ei_step,
    PolicyKind.EQUAL: equal_step,
}


@dataclass(frozen=True)
class Checkpoint:
    budget: int
    posterior: PosteriorState
    selected: int

    def to_dict(self) -> dict:
        return {"budget": self.budget, "selected": self.selected, "posterior": self.posterior.to_dict()}

    @classmethod
    def from_dict(cls, data: dict) -> "Checkpoint":
        return cls(int(data["budget"]), PosteriorState.from_dict(data["posterior"]), int(data["selected"]))


@dataclass
class Trajectory:
    kind: PolicyKind
    n0: int
    decisions: list[int]
    checkpoints: list[Checkpoint] = field(default_factory=list)
    final: PosteriorState | None = None

    @property
    def selected(self) -> int:
        return self.final.selected()

    def to_dict(self) -> dict:
        return {
            "policy": self.kind.value,
            "n0": self.n0,
            "decisions": list(self.decisions),
            "checkpoints": [c.to_dict() for c in self.checkpoints],
            "final": self.final.to_dict() if self.final is not None else None,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Trajectory":
        final = data.get("final")
        return cls(PolicyKind.parse(data["policy"]), int(data["n0"]), [int(d) for d in data["decisions"]],
                   [Checkpoint.from_dict(c) for c in data["checkpoints"]],
                   PosteriorState.from_dict(final) if final is not None else None)


def _validate_run(inst: ProblemInstance, budget: int, n0: int, checkpoints: Sequence[int]) -> list[int]:
    if n0 < 3:
        raise ConfigurationError(f"initial sample size n0 must be at least 3, got {n0}")
    if budget < inst.k * n0:
        raise ConfigurationError(f"budget {budget} is smaller than k*n0 = {inst.k * n0}")
    cps = [int(c) for c in checkpoints]
    if any(b <= a for a, b in zip(cps, cps[1:])):
        raise ConfigurationError("checkpoint budgets must be strictly increasing")
    if cps and (cps[0] < inst.k * n0 or cps[-1] > budget):
        raise ConfigurationError(f"checkpoints must lie in [{inst.k * n0}, {budget}]")
    return cps


def run_policy(kind: PolicyKind, inst: ProblemInstance, budget: int, n0: int = DEFAULT_N0,
               rng: RngConfig = RngConfig(), checkpoints: Sequence[int] = (),
               substream: tuple[int, ...] | None = None) -> Trajectory:
    """Initialize with ``n0`` samples per design, then follow ``kind`` until ``budget`` samples.

    Observations come from the stream ``rng.generator(*substream)``; the
    default substream is the policy's code so different policies see
    independent noise for the same ``rng``.
    """
    if isinstance(kind, str):
        kind = PolicyKind.parse(kind)
    cps = _validate_run(inst, budget, n0, checkpoints)
    step = STEP_FUNCTIONS[kind]
    source = NormalSource(rng.generator(*(substream if substream is not None else (kind.code,))))
    mu, sd = inst.means, inst.std
    state = PolicyState(SufficientStats.empty(inst.k))
    traj = Trajectory(kind, n0, [])
    cp_iter = iter(cps)
    next_cp = next(cp_iter, None)

    def maybe_checkpoint():
        nonlocal next_cp
        while next_cp is not None and state.m == next_cp:
            post = state.posterior()
            traj.checkpoints.append(Checkpoint(next_cp, post, post.selected()))
            next_cp = next(cp_iter, None)

    for i in range(inst.k):
        for _ in range(n0):
            state.stats.update(i, mu[i] + sd[i] * source.next())
    maybe_checkpoint()
    total = state.m
    decisions = traj.decisions
    while total < budget:
        i = step(state)
        state.record(i, mu[i] + sd[i] * source.next())
        decisions.append(i)
        total += 1
        if total == next_cp:
            maybe_checkpoint()
    traj.final = state.posterior()
    return traj
