"""Tests for the SCPA policy state machine and statistics."""

import math

import numpy as np
import pytest

from vigie.environment import Environment, GroundTruth, trial_seed
from vigie.errors import ConfigError, PolicyStateError
from vigie.model import Family, ParamGrid, Restrict, mle
from vigie.policy import (
    CellTest,
    NullMode,
    Phase,
    PolicyConfig,
    Probe,
    ScpaPolicy,
    Statistic,
    Stop,
    init,
    run_trial,
    statistic_gllr,
    statistic_sallr,
)


EXP = Family.from_name("exponential")
SMALL = ParamGrid.from_sets([1.0], [5.0])
EXAMPLE = ParamGrid.from_sets([1.0], [2.0, 5.0])


def policy(cells=2, c=1e-3, grid=SMALL, **kw):
    return ScpaPolicy(PolicyConfig(c=c, **kw), EXP, grid, cells)


def feed(p, y):
    """Take the next probe and answer every probed cell with y."""
    action = p.next_action()
    assert isinstance(action, Probe)
    p.update(action.cells, [y] * len(action.cells))
    return action.cells


def feed_cells(p, values):
    """Answer the next probe with the observation values[cell] for each probed cell."""
    action = p.next_action()
    p.update(action.cells, [values[c] for c in action.cells])
    return action.cells


class TestInit:
    def test_starts_exploring_cell_one(self):
        state = init(PolicyConfig(c=0.01), 5)
        assert state.phase is Phase.EXPLORE
        assert state.T == 0
        assert state.rr_ptr == 1
        assert policy(cells=5).next_action() == Probe((1,))

    def test_groups_of_k(self):
        assert policy(cells=5, probes=2).next_action() == Probe((1, 2))

    def test_invalid_cost(self):
        with pytest.raises(ConfigError) as e:
            PolicyConfig(c=1.5)
        assert e.value.field == "c"

    def test_known_null_needs_value(self):
        with pytest.raises(ConfigError):
            PolicyConfig(c=0.1, mode=NullMode.KNOWN)

    def test_known_null_must_be_in_null_set(self):
        with pytest.raises(ConfigError):
            policy(mode=NullMode.KNOWN, theta0=5.0)

    def test_threshold(self):
        assert PolicyConfig(c=1e-3).threshold == pytest.approx(math.log(1000))


class TestExplore:
    def test_round_robin(self):
        p = policy(cells=3)
        assert feed(p, 2.0) == (1,)
        assert p.next_action() == Probe((2,))

    def test_single_suspect_enters_exploit(self):
        p = policy(cells=2)
        feed_cells(p, {1: 0.01, 2: 2.0})
        assert p.state.phase is Phase.EXPLORE
        feed_cells(p, {1: 0.01, 2: 2.0})
        assert p.state.phase is Phase.EXPLOIT
        assert p.state.suspect == 1
        assert p.state.T == 2
        assert p.next_action() == Probe((1,))

    def test_two_suspects_keep_exploring(self):
        p = policy(cells=2)
        feed(p, 0.01)
        feed(p, 0.01)
        assert p.state.phase is Phase.EXPLORE

    def test_window_waits_for_n_samples(self):
        p = policy(cells=2, window=2)
        for _ in range(3):
            feed_cells(p, {1: 0.01, 2: 2.0})
        assert p.state.phase is Phase.EXPLORE
        feed_cells(p, {1: 0.01, 2: 2.0})
        assert p.state.phase is Phase.EXPLOIT


class TestExploit:
    def enter(self, c=1e-3, **kw):
        p = policy(cells=2, c=c, **kw)
        feed_cells(p, {1: 0.01, 2: 2.0})
        feed_cells(p, {1: 0.01, 2: 2.0})
        return p

    def test_first_exploit_sample_has_empty_sum(self):
        p = self.enter()
        feed(p, 0.01)
        assert p.state.phase is Phase.EXPLOIT
        assert p.state.S == 0.0
        assert p.next_action() == Probe((1,))

    def test_normal_estimate_returns_to_explore(self):
        p = self.enter()
        feed(p, 3.0)
        assert p.state.phase is Phase.EXPLORE
        assert p.state.suspect is None
        assert p.state.rr_ptr == 2
        assert p.next_action() == Probe((2,))

    def test_cleared_suspect_does_not_starve_other_cells(self):
        # cell 1 looks anomalous once, then behaves normally
        p = policy(cells=3)
        probed = [feed_cells(p, {1: 0.01, 2: 3.0, 3: 3.0})[0] for _ in range(3)]
        assert p.state.phase is Phase.EXPLOIT
        probed += [feed_cells(p, {1: 3.0, 2: 3.0, 3: 3.0})[0] for _ in range(6)]
        assert probed == [1, 2, 3, 1, 2, 3, 1, 2, 3]
        assert p.state.phase is Phase.EXPLORE
        assert list(p.state.buffers[0]) == [3.0]
        assert SMALL.is_null(p.state.explore_estimates[0])

    def test_stops_when_threshold_reached(self):
        p = self.enter(c=0.9)
        feed(p, 0.01)
        feed(p, 0.01)
        assert p.state.S == pytest.approx(math.log(5) - 4 * 0.01)
        assert p.next_action() == Stop((1,))

    def test_below_threshold_keeps_probing(self):
        p = self.enter(c=1e-3)
        feed(p, 0.01)
        feed(p, 0.01)
        assert p.next_action() == Probe((1,))

    def test_actions_after_stop_fail(self):
        p = self.enter(c=0.9)
        feed(p, 0.01)
        feed(p, 0.01)
        assert isinstance(p.next_action(), Stop)
        with pytest.raises(PolicyStateError):
            p.next_action()

    def test_probe_mismatch(self):
        p = policy(cells=3)
        p.next_action()
        with pytest.raises(PolicyStateError):
            p.update((2,), [0.5])

    def test_update_without_probe(self):
        with pytest.raises(PolicyStateError):
            policy(cells=3).update((1,), [0.5])


class TestStatistics:
    def test_sallr_example(self):
        # estimate after y=0.2 is 5.0, so the only term is llr(5, 1, 0.3)
        s = statistic_sallr(EXP, [0.2, 0.3], [5.0, 5.0], 1.0)
        assert s == pytest.approx(math.log(5) - 4 * 0.3)
        assert s == pytest.approx(0.40944, abs=1e-5)

    def test_gllr_example(self):
        s = statistic_gllr(EXP, EXAMPLE, [0.2, 0.3], 1.0)
        assert s == pytest.approx(0.40944, abs=1e-5)

    def test_single_observation_is_zero(self):
        assert statistic_sallr(EXP, [0.2], [5.0], 1.0) == 0.0
        assert statistic_gllr(EXP, EXAMPLE, [0.2], 1.0) == 0.0

    def test_policy_matches_example(self):
        p = ScpaPolicy(PolicyConfig(c=1e-3, mode=NullMode.KNOWN, theta0=1.0), EXP, EXAMPLE, 2)
        feed_cells(p, {1: 0.2, 2: 3.0})
        feed_cells(p, {1: 0.2, 2: 3.0})
        assert p.state.suspect == 1
        feed(p, 0.2)
        feed(p, 0.3)
        assert p.state.S == pytest.approx(0.40944, abs=1e-5)

    def test_incremental_estimates_match_batch(self):
        grid = ParamGrid.from_sets([0.2, 0.5, 1.0], [2.0, 3.0, 6.0])
        rng = np.random.default_rng(8)
        record = CellTest()
        history = []
        for y in rng.exponential(0.4, size=30):
            record.add(EXP, grid, float(y))
            history.append(float(y))
            assert record.estimate == mle(EXP, grid, history)

    @pytest.mark.parametrize("statistic", [Statistic.SALLR, Statistic.GLLR])
    @pytest.mark.parametrize("mode", [NullMode.UNKNOWN, NullMode.KNOWN])
    def test_policy_statistic_matches_oracle(self, statistic, mode):
        grid = ParamGrid.from_sets([0.5, 1.0], [3.0, 6.0])
        theta0 = 1.0 if mode is NullMode.KNOWN else None
        p = ScpaPolicy(PolicyConfig(c=1e-9, mode=mode, theta0=theta0, statistic=statistic), EXP, grid, 2)
        feed_cells(p, {1: 0.05, 2: 2.0})
        feed_cells(p, {1: 0.05, 2: 2.0})
        rng = np.random.default_rng(21)
        history = []
        for y in rng.exponential(1 / 6.0, size=12):
            y = float(min(y, 0.2))
            feed(p, y)
            history.append(y)
        assert p.state.phase is Phase.EXPLOIT

        if mode is NullMode.KNOWN:
            nu = 1.0
        else:
            nu = grid.values[mle(EXP, grid, history, Restrict.NULL_ONLY)]
        if statistic is Statistic.GLLR:
            theta = grid.values[mle(EXP, grid, history)]
            expected = sum(EXP.logpdf(theta, y) - EXP.logpdf(nu, y) for y in history[1:])
        else:
            expected = sum(
                EXP.logpdf(grid.values[mle(EXP, grid, history[:t])], history[t]) - EXP.logpdf(nu, history[t])
                for t in range(1, len(history))
            )
        assert p.state.S == pytest.approx(expected)

    @pytest.mark.slow
    @pytest.mark.parametrize("statistic", [Statistic.SALLR, Statistic.GLLR])
    @pytest.mark.parametrize("mode", [NullMode.UNKNOWN, NullMode.KNOWN])
    def test_statistic_matches_recomputation_on_seeded_trials(self, statistic, mode):
        grid = ParamGrid.from_sets([0.5, 1.0], [2.0, 4.0])
        theta0 = 1.0 if mode is NullMode.KNOWN else None

        def best(window, candidates):
            scores = [sum(EXP.logpdf(theta, y) for y in window) for theta in candidates]
            return candidates[int(np.argmax(scores))]

        def expected(history):
            nu = theta0 if mode is NullMode.KNOWN else best(history, grid.null_values)
            if statistic is Statistic.GLLR:
                theta = best(history, grid.values)
                return sum(EXP.logpdf(theta, y) - EXP.logpdf(nu, y) for y in history[1:])
            return sum(EXP.logpdf(best(history[:t], grid.values), history[t]) - EXP.logpdf(nu, history[t])
                       for t in range(1, len(history)))

        checked = 0
        for seed in range(100):
            truth = GroundTruth(m_star=seed % 3 + 1, theta_null=(1.0,) * 3, theta_alt=4.0, tau_c=seed % 7)
            env = Environment(EXP, truth, trial_seed(seed, 0))
            p = ScpaPolicy(PolicyConfig(c=1e-3, mode=mode, theta0=theta0, statistic=statistic), EXP, grid, 3)
            while p.clock < 2000:
                action = p.next_action()
                if isinstance(action, Stop):
                    break
                p.update(action.cells, [env.observe(c, p.clock + 1) for c in action.cells])
                if p.state.last_phase is Phase.TEST:
                    cell = action.cells[0]
                    history = p.state.tests[cell].history
                    assert p.state.tests[cell].statistic == pytest.approx(expected(history), abs=1e-9)
                    checked += 1
        assert checked > 100

    @pytest.mark.slow
    def test_unknown_null_statistic_drifts_down_under_null(self):
        grid = ParamGrid.from_sets([0.5, 1.0], [2.0])
        rng = np.random.default_rng(99)
        values = []
        for _ in range(1000):
            history = [float(y) for y in rng.exponential(1.0, size=10)]
            estimates = [grid.values[mle(EXP, grid, history[:t + 1])] for t in range(len(history))]
            nu = grid.values[mle(EXP, grid, history, Restrict.NULL_ONLY)]
            values.append(statistic_sallr(EXP, history, estimates, nu))
        values = np.array(values)
        assert values.mean() <= 3 * values.std(ddof=1) / math.sqrt(len(values))


class TestExtensions:
    def test_companions_follow_round_robin_in_explore(self):
        p = policy(cells=3, probes=2)
        assert feed(p, 2.0) == (1, 2)
        assert p.next_action() == Probe((3, 1))

    def test_k_probes_suspect_and_companion(self):
        grid = ParamGrid.from_sets([1.0], [10.0])
        p = ScpaPolicy(PolicyConfig(c=1e-3, probes=2), EXP, grid, 4)
        feed_cells(p, {1: 0.01, 2: 3.0})
        feed_cells(p, {3: 3.0, 4: 3.0})
        assert p.state.phase is Phase.EXPLOIT
        action = p.next_action()
        assert action.cells[0] == 1
        assert len(action.cells) == 2 and action.cells[1] != 1

    def k2_policy(self, c):
        # suspect 3 with companions drawn from cells 1, 2 and 4
        grid = ParamGrid.from_sets([0.5, 1.0], [10.0])
        p = ScpaPolicy(PolicyConfig(c=c, probes=2), EXP, grid, 4)
        feed_cells(p, {1: 3.0, 2: 3.0})
        feed_cells(p, {3: 0.01, 4: 3.0})
        assert p.state.suspect == 3
        return p

    def test_companion_ties_go_to_lowest_cell(self):
        p = self.k2_policy(c=1e-3)
        assert p.next_action() == Probe((3, 1))
        feed_cells(p, {3: 0.01, 1: 0.6})
        # every other cell still scores 0.0
        assert p.next_action() == Probe((3, 1))

    def test_companions_ranked_by_statistic(self):
        p = self.k2_policy(c=1e-3)
        feed_cells(p, {3: 0.01, 1: 0.6})
        feed_cells(p, {3: 0.01, 1: 3.0})
        # llr(1.0 vs 0.5) at y=3.0 is negative, so cell 1 drops behind 2 and 4
        assert p.state.tests[1].statistic == pytest.approx(-3.0 - (math.log(0.5) - 1.5))
        assert p.next_action() == Probe((3, 2))

    def margins(self, p):
        feed_cells(p, {3: 0.01, 1: 0.6})
        feed_cells(p, {3: 0.01, 1: 3.0})
        suspect = p.state.tests[3].statistic
        margin = suspect - p.state.tests[1].statistic
        assert suspect == pytest.approx(math.log(10) - 0.1 + 0.01)
        return suspect, margin

    def test_margin_over_best_companion_stops(self):
        p = self.k2_policy(c=math.exp(-2.5))
        suspect, margin = self.margins(p)
        assert suspect < 2.5 <= margin
        assert p.next_action() == Stop((3,))

    def test_margin_below_threshold_keeps_probing(self):
        p = self.k2_policy(c=math.exp(-3.1))
        _, margin = self.margins(p)
        assert margin < 3.1
        assert isinstance(p.next_action(), Probe)

    def test_k_with_several_anomalies_rejected(self):
        with pytest.raises(ConfigError):
            PolicyConfig(c=0.1, probes=2, anomalies=2)

    def test_several_anomalies_are_all_declared(self):
        grid = ParamGrid.from_sets([0.1], [10.0])
        correct = 0
        for seed in range(20):
            truth = GroundTruth(m_star=1, theta_null=(0.1,) * 4, theta_alt=10.0, tau_c=0, anomalous=(1, 3))
            p = ScpaPolicy(PolicyConfig(c=1e-3, anomalies=2), EXP, grid, 4)
            trace = run_trial(p, Environment(EXP, truth, trial_seed(seed, 0)))
            assert len(trace.declared) == 2
            assert len(trace.declared_at) == 2
            correct += sorted(trace.declared) == [1, 3]
        assert correct >= 19


class TestRunTrial:
    def test_single_cell(self):
        grid = ParamGrid.from_sets([0.5], [2.0])
        truth = GroundTruth(m_star=1, theta_null=(0.5,), theta_alt=2.0, tau_c=0)
        trace = run_trial(ScpaPolicy(PolicyConfig(c=0.01), EXP, grid, 1),
                          Environment(EXP, truth, trial_seed(0, 0)))
        assert trace.declared == (1,)
        assert trace.delta == 1
        assert not trace.truncated
        assert trace.tau == len(trace.steps)

    def test_truncation(self):
        truth = GroundTruth(m_star=1, theta_null=(1.0, 1.0), theta_alt=5.0, tau_c=0)
        trace = run_trial(policy(cells=2, c=1e-6), Environment(EXP, truth, trial_seed(0, 0)), cap=3)
        assert trace.truncated
        assert trace.tau == 3
        assert trace.declared == ()

    def test_records_steps(self):
        truth = GroundTruth(m_star=2, theta_null=(1.0, 1.0, 1.0), theta_alt=5.0, tau_c=0)
        trace = run_trial(policy(cells=3, c=0.01), Environment(EXP, truth, trial_seed(1, 0)))
        assert [s.step for s in trace.steps] == list(range(1, trace.tau + 1))
        assert trace.steps[0].phase == Phase.EXPLORE.value
        assert all(len(s.estimates) == 3 for s in trace.steps)
