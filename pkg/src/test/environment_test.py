"""Tests for priors, ground-truth sampling and the per-cell streams."""

import numpy as np
import pytest

from vigie.environment import (
    Environment,
    FixedParams,
    GroundTruth,
    Prior,
    TruthMode,
    child_rng,
    sample_truth,
    trial_seed,
)
from vigie.errors import ConfigError, DomainError
from vigie.model import Family, ParamGrid


EXP = Family.from_name("exponential")
GRID = ParamGrid.from_sets([0.5, 1.0], [2.0, 4.0])


class TestPrior:
    def test_uniform(self):
        assert Prior.uniform(4).pi == (0.25,) * 4

    def test_must_sum_to_one(self):
        with pytest.raises(ConfigError) as e:
            Prior((0.5, 0.4))
        assert e.value.field == "prior"

    def test_strictly_inside_unit_interval(self):
        with pytest.raises(ConfigError):
            Prior((1.0, 0.0))

    def test_single_cell(self):
        assert Prior((1.0,)).cells == 1

    def test_degenerate(self):
        prior = Prior.degenerate(3, 5)
        assert prior.pi == (0.0, 0.0, 1.0, 0.0, 0.0)


class TestSampleTruth:
    def test_degenerate_prior_pins_cell(self):
        prior = Prior.degenerate(3, 5)
        for seed in range(20):
            truth = sample_truth(prior, GRID, TruthMode.UNIFORM_DRAW, np.random.default_rng(seed))
            assert truth.m_star == 3
            assert truth.anomalous == (3,)

    def test_singleton_null_set(self):
        grid = ParamGrid.from_sets([1.0], [2.0, 3.0])
        truth = sample_truth(Prior.uniform(4), grid, TruthMode.UNIFORM_DRAW, np.random.default_rng(0))
        assert truth.theta_null == (1.0,) * 4
        assert truth.theta_alt in (2.0, 3.0)

    def test_common_null(self):
        truth = sample_truth(Prior.uniform(6), GRID, TruthMode.UNIFORM_COMMON, np.random.default_rng(1))
        assert len(set(truth.theta_null)) == 1
        assert truth.common_null() == truth.theta_null[0]

    def test_fixed(self):
        fixed = FixedParams(theta_null=1.0, theta_alt=4.0)
        truth = sample_truth(Prior.uniform(3), GRID, TruthMode.FIXED, np.random.default_rng(2),
                             tau_c=7, fixed=fixed)
        assert truth.theta_null == (1.0, 1.0, 1.0)
        assert truth.theta_alt == 4.0
        assert truth.tau_c == 7

    def test_fixed_out_of_set(self):
        fixed = FixedParams(theta_null=1.0, theta_alt=3.0)
        with pytest.raises(ConfigError) as e:
            sample_truth(Prior.uniform(3), GRID, TruthMode.FIXED, np.random.default_rng(2), fixed=fixed)
        assert e.value.field == "theta_alt"

    def test_several_anomalies_are_distinct(self):
        truth = sample_truth(Prior.uniform(5), GRID, TruthMode.UNIFORM_COMMON,
                             np.random.default_rng(3), anomalies=3)
        assert len(set(truth.anomalous)) == 3
        assert truth.m_star == truth.anomalous[0]

    @pytest.mark.slow
    def test_uniform_prior_frequencies(self):
        rng = np.random.default_rng(17)
        prior = Prior.uniform(5)
        counts = np.zeros(5)
        n = 100_000
        for _ in range(n):
            counts[sample_truth(prior, GRID, TruthMode.UNIFORM_COMMON, rng).m_star - 1] += 1
        np.testing.assert_allclose(counts / n, 0.2, atol=0.01)


class TestRegime:
    truth = GroundTruth(m_star=2, theta_null=(0.5, 1.0, 0.5), theta_alt=4.0, tau_c=5)

    def test_normal_cell(self):
        assert self.truth.regime(1, 100) == 0.5
        assert self.truth.regime(3, 1) == 0.5

    def test_at_change_point(self):
        assert self.truth.regime(2, 5) == 4.0

    def test_before_change_point(self):
        assert self.truth.regime(2, 4) == 1.0

    def test_change_at_zero_is_anomalous_from_start(self):
        truth = GroundTruth(m_star=1, theta_null=(1.0, 1.0), theta_alt=2.0, tau_c=0)
        assert truth.regime(1, 1) == 2.0
        assert truth.first_anomalous_time == 1

    def test_bad_cell_or_time(self):
        with pytest.raises(DomainError):
            self.truth.regime(4, 1)
        with pytest.raises(DomainError):
            self.truth.regime(1, 0)

    def test_dict_round_trip(self):
        assert GroundTruth.from_dict(self.truth.to_dict()) == self.truth


class TestStreams:
    def make_env(self, seed=42, trial=3):
        truth = GroundTruth(m_star=2, theta_null=(1.0, 1.0, 1.0), theta_alt=4.0, tau_c=0)
        return Environment(EXP, truth, trial_seed(seed, trial))

    def test_same_seed_same_observations(self):
        a, b = self.make_env(), self.make_env()
        assert [a.observe(1, t) for t in range(1, 6)] == [b.observe(1, t) for t in range(1, 6)]

    def test_probe_order_does_not_perturb_other_cells(self):
        a, b = self.make_env(), self.make_env()
        first = [a.observe(3, t) for t in range(1, 4)]
        for t in range(1, 10):
            b.observe(1, t)
            b.observe(2, t)
        assert [b.observe(3, t) for t in range(1, 4)] == first

    def test_trials_differ(self):
        a, b = self.make_env(trial=0), self.make_env(trial=1)
        assert a.observe(1, 1) != b.observe(1, 1)

    def test_truth_stream_is_separate(self):
        stream = trial_seed(9, 0)
        x = child_rng(stream, 0).random()
        assert child_rng(stream, 0).random() == x
        assert child_rng(stream, 1).random() != x

    def test_observations_follow_regime(self):
        env = self.make_env()
        ys = np.array([env.observe(2, t) for t in range(1, 4001)])
        assert ys.mean() == pytest.approx(0.25, rel=0.1)

    def test_cell_out_of_range(self):
        with pytest.raises(DomainError):
            self.make_env().observe(4, 1)
