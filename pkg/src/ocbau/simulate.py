"""Monte Carlo macroreplication harness.

Each macroreplication runs every requested policy once and, at each
checkpoint budget, records the Bayesian probability of false selection
(estimated from posterior draws), whether the selected design is truly
best, and the empirical sampling proportions.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import PosteriorState, ProblemInstance, RngConfig
from .errors import ConfigurationError, EstimationError
from .sequential import DEFAULT_N0, PolicyKind, run_policy
from .tables import csv_text, json_text

DEFAULT_PFS_SAMPLES = 250_000
DEFAULT_REPS = 1000

# substream tags under RngConfig(seed, stream=rep)
_OBS = 0
_PFS = 1
_COMMON = 99
_CHUNK = 65536


def sample_observation(inst: ProblemInstance, design: int, rng: np.random.Generator) -> float:
    """One draw from N(mu_design, sigma_design^2)."""
    if not 0 <= design < inst.k:
        raise ConfigurationError(f"design index {design} out of range for k={inst.k}")
    return inst.means[design] + math.sqrt(inst.variances[design]) * float(rng.standard_normal())


def estimate_bayes_pfs(state: PosteriorState, m_samples: int, rng: np.random.Generator) -> float:
    """Posterior probability that the selected design is not the best.

    Each mean is drawn independently from its Student-t marginal
    (N + 1 degrees of freedom, location xbar, scale sqrt(ssd/(N(N+1)))).
    """
    if m_samples < 1:
        raise ConfigurationError("m_samples must be positive")
    if min(state.counts) < 2:
        raise EstimationError("Bayesian PFS needs at least two samples per design")
    loc = np.asarray(state.sample_means, dtype=float)
    scale = state.t_scale
    dof = state.dof
    sel = state.selected()
    wrong = 0
    left = m_samples
    while left > 0:
        n = min(left, _CHUNK)
        draws = loc + scale * rng.standard_t(dof, size=(n, state.k))
        wrong += int(np.count_nonzero(np.argmax(draws, axis=1) != sel))
        left -= n
    return wrong / m_samples


def frequentist_correct(state: PosteriorState, inst: ProblemInstance) -> bool:
    return state.selected() == inst.best


@dataclass(frozen=True)
class ExperimentConfig:
    instance: ProblemInstance
    policies: tuple[PolicyKind, ...]
    budget: int
    n0: int = DEFAULT_N0
    checkpoints: tuple[int, ...] = ()
    reps: int = DEFAULT_REPS
    pfs_samples: int = DEFAULT_PFS_SAMPLES
    seed: int = 0
    common_streams: bool = False

    def __post_init__(self):
        pols = tuple(PolicyKind.parse(p) if isinstance(p, str) else p for p in self.policies)
        object.__setattr__(self, "policies", pols)
        if not pols:
            raise ConfigurationError("at least one policy is required")
        if len(set(pols)) != len(pols):
            raise ConfigurationError("policies must not repeat")
        if self.reps < 1:
            raise ConfigurationError("reps must be at least 1")
        if self.pfs_samples < 1:
            raise ConfigurationError("pfs_samples must be at least 1")
        if self.budget < self.instance.k * self.n0:
            raise ConfigurationError(f"budget must be at least k*n0 = {self.instance.k * self.n0}")
        cps = sorted(set(int(c) for c in self.checkpoints) | {int(self.budget)})
        if cps[0] < self.instance.k * self.n0:
            raise ConfigurationError(f"checkpoints must lie in [{self.instance.k * self.n0}, {self.budget}]")
        if cps[-1] > self.budget:
            raise ConfigurationError(f"checkpoints must not exceed the budget {self.budget}")
        object.__setattr__(self, "checkpoints", tuple(cps))


@dataclass(frozen=True)
class SummaryRow:
    policy: PolicyKind
    checkpoint: int
    pfs_bayes: float
    pfs_bayes_se: float
    pfs_freq: float
    pfs_freq_se: float
    proportions: tuple[float, ...]
    proportions_se: tuple[float, ...]


@dataclass
class MacroSummary:
    reps: int
    rows: list[SummaryRow] = field(default_factory=list)

    def get(self, policy, checkpoint: int) -> SummaryRow:
        policy = PolicyKind.parse(policy) if isinstance(policy, str) else policy
        for row in self.rows:
            if row.policy is policy and row.checkpoint == checkpoint:
                return row
        raise KeyError((policy, checkpoint))

    def final(self, policy) -> SummaryRow:
        policy = PolicyKind.parse(policy) if isinstance(policy, str) else policy
        rows = [r for r in self.rows if r.policy is policy]
        if not rows:
            raise KeyError(policy)
        return max(rows, key=lambda r: r.checkpoint)

    @property
    def policies(self) -> list[PolicyKind]:
        seen = []
        for r in self.rows:
            if r.policy not in seen:
                seen.append(r.policy)
        return seen

    LONG_HEADER = ("policy", "checkpoint", "metric", "mean", "se")

    def long_rows(self):
        for r in self.rows:
            yield (r.policy.value, r.checkpoint, "pfs_bayes", r.pfs_bayes, r.pfs_bayes_se)
            yield (r.policy.value, r.checkpoint, "pfs_freq", r.pfs_freq, r.pfs_freq_se)
            for i, (p, s) in enumerate(zip(r.proportions, r.proportions_se)):
                yield (r.policy.value, r.checkpoint, f"alpha_{i + 1}", p, s)

    def to_csv(self) -> str:
        return csv_text(self.LONG_HEADER, self.long_rows())

    def to_dict(self) -> dict:
        return {
            "reps": self.reps,
            "rows": [
                {
                    "policy": r.policy.value,
                    "checkpoint": r.checkpoint,
                    "pfs_bayes": r.pfs_bayes,
                    "pfs_bayes_se": r.pfs_bayes_se,
                    "pfs_freq": r.pfs_freq,
                    "pfs_freq_se": r.pfs_freq_se,
                    "proportions": list(r.proportions),
                    "proportions_se": list(r.proportions_se),
                }
                for r in self.rows
            ],
        }

    def to_json(self) -> str:
        return json_text(self.to_dict())

    @classmethod
    def from_dict(cls, data: dict) -> "MacroSummary":
        def num(x):
            return math.nan if x is None else float(x)

        rows = [
            SummaryRow(PolicyKind.parse(d["policy"]), int(d["checkpoint"]), num(d["pfs_bayes"]),
                       num(d["pfs_bayes_se"]), num(d["pfs_freq"]), num(d["pfs_freq_se"]),
                       tuple(num(x) for x in d["proportions"]), tuple(num(x) for x in d["proportions_se"]))
            for d in data["rows"]
        ]
        return cls(int(data["reps"]), rows)


def _one_rep(cfg: ExperimentConfig, rep: int, keep_trajectories: bool = False):
    """All policies for one macroreplication: {policy: [(pfs_b, wrong, proportions), ...]}."""
    rng = RngConfig(cfg.seed, rep)
    out = {}
    trajs = {}
    for kind in cfg.policies:
        obs_stream = (_OBS, _COMMON) if cfg.common_streams else (_OBS, kind.code)
        traj = run_policy(kind, cfg.instance, cfg.budget, cfg.n0, rng, cfg.checkpoints, substream=obs_stream)
        pfs_rng = rng.generator(_PFS, kind.code)
        per_cp = []
        for cp in traj.checkpoints:
            post = cp.posterior
            pfs_b = estimate_bayes_pfs(post, cfg.pfs_samples, pfs_rng)
            wrong = 0.0 if frequentist_correct(post, cfg.instance) else 1.0
            m = sum(post.counts)
            per_cp.append((pfs_b, wrong, tuple(n / m for n in post.counts)))
        out[kind] = per_cp
        if keep_trajectories:
            trajs[kind] = traj.to_dict()
    return out, trajs


def _rep_worker(args):
    cfg, rep, keep = args
    try:
        return _one_rep(cfg, rep, keep)
    except Exception as exc:
        raise type(exc)(f"macroreplication {rep}: {exc}") from exc


def _mean_se(values: np.ndarray) -> tuple[float, float]:
    n = len(values)
    mean = float(np.mean(values))
    se = float(np.std(values, ddof=1) / math.sqrt(n)) if n > 1 else math.nan
    return mean, se


def run_macroreps(cfg: ExperimentConfig, workers: int = 1, trajectory_sink=None) -> MacroSummary:
    """Run ``cfg.reps`` independent macroreplications and aggregate by (policy, checkpoint).

    Results do not depend on ``workers``: every replication draws from its
    own streams and the reduction runs in replication order.
    ``trajectory_sink(policy, rep, trajectory_dict)`` receives raw runs if given.
    """
    keep = trajectory_sink is not None
    jobs = [(cfg, rep, keep) for rep in range(cfg.reps)]
    if workers > 1 and cfg.reps > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_rep_worker, jobs, chunksize=max(1, cfg.reps // (4 * workers))))
    else:
        results = [_rep_worker(j) for j in jobs]
    if keep:
        for rep, (_, trajs) in enumerate(results):
            for kind, t in trajs.items():
                trajectory_sink(kind, rep, t)
    summary = MacroSummary(cfg.reps)
    for kind in cfg.policies:
        for c_idx, cp in enumerate(cfg.checkpoints):
            pfs_b = np.array([res[kind][c_idx][0] for res, _ in results])
            wrong = np.array([res[kind][c_idx][1] for res, _ in results])
            props = np.array([res[kind][c_idx][2] for res, _ in results])
            mb, sb = _mean_se(pfs_b)
            mf, sf = _mean_se(wrong)
            pm = tuple(float(x) for x in props.mean(axis=0))
            ps = (tuple(float(x) for x in props.std(axis=0, ddof=1) / math.sqrt(cfg.reps))
                  if cfg.reps > 1 else (math.nan,) * cfg.instance.k)
            summary.rows.append(SummaryRow(kind, cp, mb, sb, mf, sf, pm, ps))
    return summary
