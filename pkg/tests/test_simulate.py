import io
import math

import numpy as np
import pytest
from scipy import integrate, stats

from ocbau.core import PosteriorState, ProblemInstance, make_synthetic_instance
from ocbau.errors import ConfigurationError, EstimationError
from ocbau.simulate import (
    ExperimentConfig,
    MacroSummary,
    estimate_bayes_pfs,
    frequentist_correct,
    run_macroreps,
    sample_observation,
)
from ocbau.tables import read_csv


def quad_pcs(post: PosteriorState) -> float:
    """P(selected design has the largest posterior mean draw), by 1-D quadrature."""
    sel = post.selected()
    loc = np.asarray(post.sample_means)
    scale = post.t_scale
    dof = post.dof
    others = [j for j in range(post.k) if j != sel]

    def integrand(x):
        val = stats.t.pdf(x, dof[sel], loc[sel], scale[sel])
        for j in others:
            val *= stats.t.cdf(x, dof[j], loc[j], scale[j])
        return val

    lo = loc[sel] - 60 * scale[sel]
    hi = loc[sel] + 60 * scale[sel]
    val, _ = integrate.quad(integrand, lo, hi, points=[loc[sel]], limit=500, epsabs=1e-13)
    return val


POST3 = PosteriorState((8, 10, 6), (1.0, 0.6, 0.2), (9.0, 14.0, 4.0))


class TestSampleObservation:
    def test_clt_band(self):
        inst = ProblemInstance((3.0, -1.0), (4.0, 0.25))
        rng = np.random.default_rng(0)
        n = 200_000
        x = np.array([sample_observation(inst, 0, rng) for _ in range(n)])
        assert abs(x.mean() - 3.0) <= 4 * 2.0 / math.sqrt(n)
        assert x.var(ddof=1) == pytest.approx(4.0, rel=0.02)

    def test_bad_index(self):
        with pytest.raises(ConfigurationError):
            sample_observation(ProblemInstance((1.0, 0.0), (1.0, 1.0)), 2, np.random.default_rng())


class TestBayesPfs:
    def test_identical_posteriors(self):
        post = PosteriorState((10, 10), (0.0, 0.0), (9.0, 9.0))
        p = estimate_bayes_pfs(post, 200_000, np.random.default_rng(1))
        assert p == pytest.approx(0.5, abs=4 * 0.5 / math.sqrt(200_000))

    def test_well_separated(self):
        """Means 20 posterior standard deviations apart."""
        post = PosteriorState((50, 50), (20.0, 0.0), (49.0, 49.0))
        assert estimate_bayes_pfs(post, 100_000, np.random.default_rng(2)) <= 1e-3

    @pytest.mark.parametrize("post", [
        PosteriorState((5, 7), (0.3, 0.0), (4.0, 6.0)),
        POST3,
        PosteriorState((4, 4, 4, 20), (0.0, -0.5, 0.1, -0.1), (3.0, 3.0, 8.0, 19.0)),
    ])
    def test_matches_quadrature(self, post):
        m = 200_000
        p_hat = estimate_bayes_pfs(post, m, np.random.default_rng(3))
        p = 1.0 - quad_pcs(post)
        se = math.sqrt(p * (1 - p) / m)
        assert abs(p_hat - p) <= 3 * se

    def test_unbiased_across_streams(self):
        m = 10_000
        p = 1.0 - quad_pcs(POST3)
        est = [estimate_bayes_pfs(POST3, m, np.random.default_rng(100 + s)) for s in range(50)]
        se = math.sqrt(p * (1 - p) / (m * 50))
        assert abs(np.mean(est) - p) <= 3 * se

    def test_deterministic_given_stream(self):
        a = estimate_bayes_pfs(POST3, 1000, np.random.default_rng(4))
        b = estimate_bayes_pfs(POST3, 1000, np.random.default_rng(4))
        assert a == b

    def test_needs_two_samples(self):
        with pytest.raises(EstimationError):
            estimate_bayes_pfs(PosteriorState((1, 5), (0.0, 0.0), (0.0, 4.0)), 10, np.random.default_rng())

    def test_marginal_from_joint_posterior(self):
        """The t marginal equals the joint likelihood-times-prior integrated over sigma^2."""
        x = np.array([0.3, -1.2, 0.8, 2.1, 0.0, 0.4])
        n = x.size
        post = PosteriorState((n,), (float(x.mean()),), (float(((x - x.mean()) ** 2).sum()),))

        def joint(mu, s2):
            # prior (sigma^2)^(-2) with a flat prior on mu
            return s2 ** (-2.0 - n / 2.0) * math.exp(-((x - mu) ** 2).sum() / (2.0 * s2))

        def marginal(mu):
            return integrate.quad(lambda s2: joint(mu, s2), 0.0, np.inf, limit=200)[0]

        mus = np.linspace(x.mean() - 3.0, x.mean() + 3.0, 13)
        raw = np.array([marginal(m) for m in mus])
        norm = integrate.quad(marginal, -np.inf, np.inf, limit=200)[0]
        expected = stats.t.pdf(mus, post.dof[0], post.sample_means[0], post.t_scale[0])
        np.testing.assert_allclose(raw / norm, expected, rtol=1e-6)


class TestFrequentist:
    def test_correct(self):
        inst = ProblemInstance((1.0, 0.0), (1.0, 1.0))
        assert frequentist_correct(PosteriorState((3, 3), (0.9, 0.1), (1.0, 1.0)), inst)
        assert not frequentist_correct(PosteriorState((3, 3), (0.1, 0.9), (1.0, 1.0)), inst)


class TestExperimentConfig:
    def test_budget_always_checkpoint(self):
        cfg = ExperimentConfig(make_synthetic_instance(1, k=3), ("equal",), 100, checkpoints=(50, 20))
        assert cfg.checkpoints == (20, 50, 100)

    @pytest.mark.parametrize("kw", [
        {"policies": ()},
        {"policies": ("ei", "EI")},
        {"reps": 0},
        {"pfs_samples": 0},
        {"budget": 5},
        {"checkpoints": (4,)},
        {"checkpoints": (500,)},
    ])
    def test_rejects(self, kw):
        base = {"instance": make_synthetic_instance(1, k=3), "policies": ("equal",), "budget": 100}
        base.update(kw)
        with pytest.raises(ConfigurationError):
            ExperimentConfig(**base)


def small_cfg(**kw):
    base = dict(instance=make_synthetic_instance(1, k=3), policies=("equal", "ocba-u"), budget=60,
                checkpoints=(30,), reps=8, pfs_samples=500, seed=11)
    base.update(kw)
    return ExperimentConfig(**base)


class TestMacroreps:
    def test_single_rep_equal_pair(self):
        cfg = ExperimentConfig(ProblemInstance((1.0, 0.0), (1.0, 1.0)), ("equal",), 200, reps=1,
                               pfs_samples=1000)
        row = run_macroreps(cfg).final("equal")
        assert row.proportions == (0.5, 0.5)
        assert math.isnan(row.pfs_bayes_se)

    def test_serial_parallel_identical(self):
        cfg = small_cfg()
        assert run_macroreps(cfg, workers=1).to_dict() == run_macroreps(cfg, workers=2).to_dict()

    def test_seed_changes_results(self):
        assert run_macroreps(small_cfg()).to_dict() != run_macroreps(small_cfg(seed=12)).to_dict()

    def test_se_halves(self):
        small = run_macroreps(small_cfg(policies=("equal",), reps=100, seed=1)).final("equal")
        big = run_macroreps(small_cfg(policies=("equal",), reps=400, seed=2)).final("equal")
        assert small.pfs_bayes_se / big.pfs_bayes_se == pytest.approx(2.0, rel=0.3)

    def test_pfs_decays(self):
        cfg = small_cfg(policies=("equal",), budget=480, checkpoints=(30, 60, 120, 240), reps=100,
                        pfs_samples=2000)
        s = run_macroreps(cfg)
        pfs = [s.get("equal", cp).pfs_bayes for cp in cfg.checkpoints]
        assert all(b < a for a, b in zip(pfs, pfs[1:]))

    def test_common_streams_share_initial_data(self):
        cfg = small_cfg(checkpoints=(9,), reps=1, common_streams=True)
        seen = {}
        run_macroreps(cfg, trajectory_sink=lambda kind, rep, t: seen.setdefault(kind, t))
        eq, ou = seen.values()
        assert eq["checkpoints"][0] == ou["checkpoints"][0]

    def test_independent_streams_by_default(self):
        cfg = small_cfg(checkpoints=(9,), reps=1)
        seen = {}
        run_macroreps(cfg, trajectory_sink=lambda kind, rep, t: seen.setdefault(kind, t))
        eq, ou = seen.values()
        assert eq["checkpoints"][0] != ou["checkpoints"][0]

    def test_trajectory_sink_counts(self):
        calls = []
        cfg = small_cfg(reps=3)
        run_macroreps(cfg, trajectory_sink=lambda kind, rep, t: calls.append((kind.value, rep)))
        assert sorted(calls) == sorted((p, r) for p in ("equal", "ocba-u") for r in range(3))

    def test_proportions_sum_to_one(self):
        s = run_macroreps(small_cfg())
        for row in s.rows:
            assert sum(row.proportions) == pytest.approx(1.0, abs=1e-12)


class TestSummaryIO:
    def test_json_round_trip(self):
        import json
        s = run_macroreps(small_cfg())
        back = MacroSummary.from_dict(json.loads(s.to_json()))
        assert back.to_dict() == s.to_dict()

    def test_json_nan_as_null(self):
        import json
        s = run_macroreps(small_cfg(reps=1))
        data = json.loads(s.to_json())
        assert data["rows"][0]["pfs_bayes_se"] is None
        assert math.isnan(MacroSummary.from_dict(data).rows[0].pfs_bayes_se)

    def test_csv_round_trip(self):
        s = run_macroreps(small_cfg())
        header, rows = read_csv(io.StringIO(s.to_csv()))
        assert tuple(header) == MacroSummary.LONG_HEADER
        assert len(rows) == len(s.rows) * (2 + 3)
        by_key = {(r[0], r[1], r[2]): r[3] for r in rows}
        for row in s.rows:
            assert by_key[(row.policy.value, row.checkpoint, "pfs_bayes")] == row.pfs_bayes
            assert by_key[(row.policy.value, row.checkpoint, "alpha_2")] == row.proportions[1]
