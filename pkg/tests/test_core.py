import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ocbau.core import (
    Allocation,
    NormalSource,
    PosteriorState,
    ProblemInstance,
    RngConfig,
    SufficientStats,
    brain_cousens,
    make_dose_instance,
    make_instance,
    make_synthetic_instance,
    select_best,
    update_stats,
)
from ocbau.errors import ConfigurationError, EstimationError

# Brain-Cousens curve at dose 1 with c = (2, 80, 0.3, 600, 4), evaluated by hand:
# 2 + (78 + 30) / (1 + (100/600)^4) = 2 + 108 / (1 + 1/1296)
DOSE5_MU1 = 109.91673091750194
DOSE6_MU1 = 119.8848780487805


class TestSyntheticInstances:
    """Evenly spaced synthetic instances."""

    def test_instance_1(self):
        inst = make_synthetic_instance(1, k=10)
        assert inst.means[0] == 0.0
        assert inst.means[1] == -1.5
        assert inst.variances == (4.0,) * 10
        assert inst.best == 0

    def test_instance_4(self):
        inst = make_synthetic_instance(4, k=10)
        assert inst.means[9] == -4.5
        assert inst.variances == (25.0,) * 10

    def test_instance_2_k2(self):
        inst = make_synthetic_instance(2, k=2)
        assert inst.means == (0.0, -1.5)
        assert inst.variances == (25.0, 25.0)

    def test_instance_3_spacing(self):
        inst = make_synthetic_instance(3, k=4)
        np.testing.assert_allclose(inst.means, [0.0, -0.5, -1.0, -1.5])
        assert inst.variances == (4.0,) * 4

    @pytest.mark.parametrize("bad", [0, 5, 7, -1])
    def test_invalid_id(self, bad):
        with pytest.raises(ConfigurationError):
            make_synthetic_instance(bad)

    def test_k_too_small(self):
        with pytest.raises(ConfigurationError):
            make_synthetic_instance(1, k=1)

    def test_deterministic(self):
        assert make_synthetic_instance(2, 7) == make_synthetic_instance(2, 7)


class TestDoseInstances:
    def test_best_designs(self):
        assert make_dose_instance(5).best == 3
        assert make_dose_instance(6).best == 1

    def test_first_mean_frozen(self):
        assert make_dose_instance(5).means[0] == pytest.approx(DOSE5_MU1, rel=1e-14)
        assert make_dose_instance(6).means[0] == pytest.approx(DOSE6_MU1, rel=1e-14)

    def test_first_mean_closed_form(self):
        assert DOSE5_MU1 == pytest.approx(2.0 + 108.0 / (1.0 + 1.0 / 1296.0), rel=1e-15)

    def test_std_is_ten_percent(self):
        inst = make_dose_instance(6)
        np.testing.assert_allclose(inst.std, 0.1 * np.asarray(inst.means), rtol=1e-14)

    def test_curve_at_c4(self):
        """At dose*100 = c4 the denominator is exactly 2."""
        c = (2.0, 80.0, 0.3, 600.0, 4.0)
        assert brain_cousens(6, c) == pytest.approx(2.0 + (78.0 + 180.0) / 2.0)

    def test_invalid_id(self):
        with pytest.raises(ConfigurationError):
            make_dose_instance(4)


class TestProblemInstance:
    def test_all_builtins_valid(self):
        for i in range(1, 7):
            inst = make_instance(i)
            assert inst.k == 10
            assert all(v > 0 for v in inst.variances)
            top = max(inst.means)
            assert [m for m in inst.means].count(top) == 1
            assert inst.means[inst.best] == top

    def test_rejects_ties(self):
        with pytest.raises(ConfigurationError):
            ProblemInstance((1.0, 1.0), (1.0, 1.0))

    @pytest.mark.parametrize("var", [0.0, -1.0, math.nan, math.inf])
    def test_rejects_bad_variance(self, var):
        with pytest.raises(ConfigurationError):
            ProblemInstance((1.0, 0.0), (1.0, var))

    def test_rejects_single_design(self):
        with pytest.raises(ConfigurationError):
            ProblemInstance((1.0,), (1.0,))

    def test_rejects_length_mismatch(self):
        with pytest.raises(ConfigurationError):
            ProblemInstance((1.0, 0.0), (1.0,))

    def test_json_round_trip(self):
        inst = make_dose_instance(5)
        back = ProblemInstance.from_json(inst.to_json())
        assert back.means == inst.means
        assert back.variances == inst.variances

    def test_json_missing_field(self):
        with pytest.raises(ConfigurationError, match="variances"):
            ProblemInstance.from_json('{"means": [1, 0]}')

    def test_truncate(self):
        inst = make_synthetic_instance(1).truncate(5)
        assert inst.k == 5
        assert inst.means[-1] == -6.0


class TestAllocation:
    def test_equal(self):
        a = Allocation.equal(4)
        assert math.fsum(a) == pytest.approx(1.0, abs=1e-15)

    def test_rejects_bad_sum(self):
        with pytest.raises(ConfigurationError):
            Allocation((0.5, 0.4))

    def test_rejects_negative(self):
        with pytest.raises(ConfigurationError):
            Allocation((1.1, -0.1))

    @given(st.lists(st.floats(min_value=1e-6, max_value=1e6), min_size=2, max_size=12))
    def test_normalized_on_simplex(self, w):
        a = Allocation.normalized(w)
        assert abs(math.fsum(a) - 1.0) <= 1e-12
        assert all(x >= 0 for x in a)

    def test_sup_distance(self):
        assert Allocation((0.5, 0.5)).sup_distance((0.2, 0.8)) == pytest.approx(0.3)


def _two_pass(x):
    m = math.fsum(x) / len(x)
    return m, math.fsum((xi - m) ** 2 for xi in x)


class TestSufficientStats:
    """Single-pass mean/ssd updates against a two-pass oracle."""

    def test_single_observation(self):
        s = update_stats(SufficientStats.empty(2), 0, 5.0)
        assert s.counts == [1, 0]
        assert s.means[0] == 5.0
        assert s.ssd[0] == 0.0

    def test_hand_sequence(self):
        s = SufficientStats.empty(1)
        for x in (1.0, 2.0, 3.0):
            update_stats(s, 0, x)
        assert s.means[0] == 2.0
        assert s.ssd[0] == 2.0

    def test_bad_design(self):
        with pytest.raises(ConfigurationError):
            update_stats(SufficientStats.empty(2), 2, 1.0)

    def test_large_offset_tiny_noise(self):
        """1e6 draws of 1e8 + N(0, 1e-3^2): ssd within relative 1e-8 of two-pass."""
        x = (1e8 + 1e-3 * np.random.default_rng(3).standard_normal(10**6)).tolist()
        s = SufficientStats.empty(1)
        for v in x:
            s.update(0, v)
        m, ssd = _two_pass(x)
        assert abs(s.ssd[0] - ssd) <= 1e-8 * ssd
        assert abs(s.means[0] - m) <= 1e-10 * abs(m)

    @settings(max_examples=50)
    @given(st.lists(st.floats(min_value=-1e3, max_value=1e3), min_size=2, max_size=60), st.randoms())
    def test_permutation_invariance(self, xs, rnd):
        a = SufficientStats.empty(1)
        for v in xs:
            a.update(0, v)
        ys = list(xs)
        rnd.shuffle(ys)
        b = SufficientStats.empty(1)
        for v in ys:
            b.update(0, v)
        m, ssd = _two_pass(xs)
        scale = max(1.0, max(abs(v) for v in xs))
        assert a.means[0] == pytest.approx(b.means[0], rel=1e-9, abs=1e-12 * scale)
        assert a.ssd[0] == pytest.approx(b.ssd[0], rel=1e-9, abs=1e-9 * scale * scale)
        assert a.means[0] == pytest.approx(m, rel=1e-9, abs=1e-12 * scale)
        assert a.ssd[0] >= 0.0

    def test_copy_is_independent(self):
        s = SufficientStats.empty(1)
        s.update(0, 1.0)
        c = s.copy()
        c.update(0, 3.0)
        assert s.counts == [1]
        assert c.means == [2.0]


class TestPosteriorState:
    def _state(self):
        s = SufficientStats.empty(2)
        for x in (1.0, 2.0, 4.0):
            s.update(0, x)
        for x in (0.0, 0.5):
            s.update(1, x)
        return PosteriorState.from_stats(s)

    def test_estimates(self):
        p = self._state()
        np.testing.assert_allclose(p.means, [7.0 / 3.0, 0.25])
        # ssd = 14/3 and 1/8
        np.testing.assert_allclose(p.variances, [7.0 / 3.0, 0.125])
        np.testing.assert_allclose(p.dof, [4.0, 3.0])
        np.testing.assert_allclose(p.t_scale, np.sqrt([(14.0 / 3.0) / 12.0, 0.125 / 6.0]))

    def test_insufficient(self):
        s = SufficientStats.empty(2)
        s.update(0, 1.0)
        with pytest.raises(EstimationError):
            PosteriorState.from_stats(s).variances

    def test_round_trip(self):
        p = self._state()
        assert PosteriorState.from_dict(p.to_dict()) == p


class TestSelectBest:
    def test_argmax(self):
        assert select_best([0.0, 2.0, 1.0], [5, 5, 5]) == 1

    def test_tie_to_fewest_samples(self):
        assert select_best([2.0, 0.0, 2.0], [5, 1, 3]) == 2

    def test_full_tie_to_lowest_index(self):
        assert select_best([2.0, 2.0], [4, 4]) == 0


class TestRng:
    def test_reproducible(self):
        a = RngConfig(11, 3).generator(1).standard_normal(5)
        b = RngConfig(11, 3).generator(1).standard_normal(5)
        np.testing.assert_array_equal(a, b)

    def test_streams_differ(self):
        a = RngConfig(11, 3).generator().standard_normal(5)
        b = RngConfig(11, 4).generator().standard_normal(5)
        assert not np.array_equal(a, b)

    def test_rejects_out_of_range_seed(self):
        with pytest.raises(ConfigurationError):
            RngConfig(2**64)
        with pytest.raises(ConfigurationError):
            RngConfig(-1)

    def test_normal_source_matches_generator(self):
        """Buffering does not change the sequence."""
        src = NormalSource(RngConfig(5).generator(), block=7)
        got = [src.next() for _ in range(20)]
        ref = RngConfig(5).generator()
        want = np.concatenate([ref.standard_normal(7) for _ in range(3)])[:20]
        np.testing.assert_array_equal(got, want)
