"""
Test Engine
===========

Unit tests for the scheduler, random streams, state usage and the
simulation loop.
"""

import numpy as np
import pytest

from config import DEFAULT_MAX_INTERACTIONS, ConfigurationError, RunLimits, resolve_profile
from core.engine import (LOAD_LIMIT, CoinSource, Configuration, LoadOverflowError, PairScheduler,
                         Simulation, StateUsageTracker, check_load, measure_state_usage, run,
                         run_streams, schedule_step)
from core.state import CoinState, JuntaState
from protocols.approximate import ApproximateProtocol, StableApproximateProtocol
from protocols.auxiliary import BroadcastSuite
from protocols.count_exact import BackupExactSuite, CountExactProtocol
from protocols.suite_base import backup_budget
from utils.statistics import pair_counts, uniformity_pvalue


class TestScheduler:
    """Test pair scheduling."""

    def test_never_self_pairs(self):
        """Test that two agents always form the pair (0, 1) or (1, 0)."""
        config = Configuration(agents=[0, 0])
        rng = np.random.default_rng(1)
        for _ in range(500):
            i, j = schedule_step(config, rng)
            assert {i, j} == {0, 1}

    def test_buffered_scheduler_distinct(self):
        """Test that the block scheduler never pairs an agent with itself."""
        scheduler = PairScheduler(7, np.random.default_rng(3), block=64)
        for _ in range(1000):
            i, j = scheduler.next_pair()
            assert i != j
            assert 0 <= i < 7 and 0 <= j < 7

    def test_uniform_over_ordered_pairs(self):
        """Test uniformity with a chi-square test over all 20 ordered pairs."""
        scheduler_rng, _ = run_streams(seed=11)
        scheduler = PairScheduler(5, scheduler_rng)
        pairs = [scheduler.next_pair() for _ in range(40_000)]
        counts = pair_counts(pairs, 5)
        assert len(counts) == 20
        assert uniformity_pvalue(counts) > 0.001

    def test_too_small_population(self):
        """Test that fewer than two agents is rejected."""
        with pytest.raises(ConfigurationError):
            Configuration(agents=[0])
        with pytest.raises(ConfigurationError):
            PairScheduler(1, np.random.default_rng(0))


class TestStreams:
    """Test seed derivation and coins."""

    def test_same_seed_same_streams(self):
        """Test that equal seeds reproduce both streams."""
        a_sched, a_coin = run_streams(5)
        b_sched, b_coin = run_streams(5)
        assert a_sched.integers(1000, size=10).tolist() == b_sched.integers(1000, size=10).tolist()
        assert a_coin.integers(1000, size=10).tolist() == b_coin.integers(1000, size=10).tolist()

    def test_streams_differ(self):
        """Test that scheduler and coin streams are independent."""
        sched, coin = run_streams(5)
        assert sched.integers(1 << 30, size=8).tolist() != coin.integers(1 << 30, size=8).tolist()

    def test_synthetic_coin_reads_partner(self):
        """Test that synthetic mode returns the partner's parity."""
        coins = CoinSource(np.random.default_rng(0), mode="synthetic")
        assert coins.draw(CoinState(1)) == 1
        assert coins.draw(CoinState(0)) == 0
        assert coins.draws == 2

    def test_rng_coin_bits(self):
        """Test that rng mode yields bits."""
        coins = CoinSource(np.random.default_rng(0), block=16)
        bits = {coins.draw() for _ in range(100)}
        assert bits <= {0, 1}


class TestLoadLimit:
    """Test the load overflow guard."""

    def test_below_limit(self):
        """Test that values below the limit pass."""
        assert check_load(LOAD_LIMIT - 1) == LOAD_LIMIT - 1

    def test_at_limit(self):
        """Test that the limit itself raises."""
        with pytest.raises(LoadOverflowError):
            check_load(LOAD_LIMIT)


class TestStateUsage:
    """Test state usage reports."""

    def test_ranges_and_counts(self):
        """Test ranges, distinct states and the product of ranges."""
        report = measure_state_usage([[JuntaState(), JuntaState(level=2, active=False)]])
        assert report.ranges['level'] == (0, 2)
        assert report.ranges['active'] == (0, 1)
        assert report.ranges['junta'] == (1, 1)
        assert report.distinct_composite_states == 2
        assert report.product_of_ranges == 6

    def test_plain_values(self):
        """Test integer states."""
        report = measure_state_usage([[0, 1], [1, 1]])
        assert report.ranges == {'value': (0, 1)}
        assert report.distinct_composite_states == 2

    def test_empty_trace(self):
        """Test that an empty trace is rejected."""
        with pytest.raises(ValueError):
            measure_state_usage([])

    def test_tracker_cap(self):
        """Test that distinct states stop accumulating at the cap while ranges widen."""
        tracker = StateUsageTracker(cap=3)
        tracker.record_all(range(10))
        report = tracker.report()
        assert report.distinct_composite_states == 3
        assert report.saturated
        assert report.ranges == {'value': (0, 9)}
        assert report.to_dict()['saturated'] is True

    def test_tracker_below_cap(self):
        tracker = StateUsageTracker(cap=3)
        tracker.record_all([1, 1, 2])
        assert not tracker.report().saturated
        assert tracker.report().distinct_composite_states == 2

    def test_simulation_tracker_is_capped(self):
        """Test that a long run never remembers more than the cap."""
        sim = Simulation(BackupExactSuite(), 12, seed=3)
        sim.usage = StateUsageTracker(cap=4)
        sim.run_for(500)
        assert len(sim.usage.seen) == 4
        assert sim.usage.saturated


class TestSimulation:
    """Test the simulation loop."""

    def test_broadcast_stabilizes(self):
        """Test convergence and stabilisation of a broadcast."""
        limits = RunLimits(max_interactions=100_000)
        metrics = run(BroadcastSuite(), 10, seed=1, limits=limits)
        assert metrics.correct
        assert metrics.t_convergence == metrics.t_stabilization
        assert metrics.interactions == metrics.t_stabilization + limits.probe_window(10)

    def test_same_seed_same_digest(self):
        """Test that a run replays exactly."""
        first = run(BroadcastSuite(), 20, seed=4)
        second = run(BroadcastSuite(), 20, seed=4)
        assert first.output_history_digest == second.output_history_digest
        assert first.t_convergence == second.t_convergence

    def test_different_seeds_differ(self):
        """Test that different seeds give different histories."""
        first = run(BroadcastSuite(), 20, seed=4)
        second = run(BroadcastSuite(), 20, seed=5)
        assert first.output_history_digest != second.output_history_digest

    def test_interaction_limit(self):
        """Test an unfinished run."""
        metrics = run(BackupExactSuite(), 30, seed=0, limits=RunLimits(max_interactions=10))
        assert not metrics.correct
        assert metrics.t_convergence is None
        assert metrics.interactions == 10

    def test_zero_stabilization_window(self):
        """Test that a zero quiet window stops at the first stable configuration."""
        limits = RunLimits(stabilization_probe_window=0)
        metrics = run(BroadcastSuite(), 8, seed=2, limits=limits)
        assert metrics.correct
        assert metrics.interactions == metrics.t_stabilization

    def test_step_counts_interactions(self):
        """Test that every step advances t by one."""
        sim = Simulation(BackupExactSuite(), 12, seed=3)
        sim.run_for(250)
        assert sim.t == 250

    def test_backup_exact_conserves_tokens(self):
        """Test that uncounted agents always hold all n tokens."""
        sim = Simulation(BackupExactSuite(), 12, seed=3)
        for _ in range(2000):
            sim.step()
            assert sum(s.nmax for s in sim.config.agents if not s.counted) == 12

    def test_run_until(self):
        """Test that run_until stops at the first hit."""
        sim = Simulation(BroadcastSuite(), 16, seed=0)
        t = sim.run_until(lambda s: all(s.config.agents), 100_000)
        assert t is not None
        assert t == sim.t
        assert all(sim.config.agents)


class TestInteractionLimit:
    """Test the per-run interaction limit."""

    def test_clockless_default(self):
        """Test the global default for protocols without a clock."""
        assert Simulation(BroadcastSuite(), 8, seed=0).limit == DEFAULT_MAX_INTERACTIONS

    def test_explicit_limit_wins(self):
        limits = RunLimits(max_interactions=1234)
        assert Simulation(ApproximateProtocol(), 1024, seed=0, limits=limits).limit == 1234

    def test_derived_from_phases(self):
        """Test 2 * phases * m * n * (ceil(log2 n) + 1) for the approximate counter."""
        smoke = resolve_profile("smoke")
        n = 16
        phases = smoke.outer_modulus + 5 * (4 + 3) + 4 + 2
        expected = 2 * phases * smoke.modulus * n * (4 + 1)
        assert Simulation(ApproximateProtocol(smoke), n, seed=0).limit == expected
        stable = Simulation(StableApproximateProtocol(smoke), n, seed=0)
        assert stable.limit == expected + backup_budget(n)

    def test_grows_with_population(self):
        """Test that large desk populations get more than the global default."""
        desk = resolve_profile("desk")
        approximate = ApproximateProtocol(desk).interaction_budget(1024)
        exact = CountExactProtocol(desk).interaction_budget(1024)
        assert approximate > DEFAULT_MAX_INTERACTIONS
        assert exact > DEFAULT_MAX_INTERACTIONS
        assert approximate < ApproximateProtocol(desk).interaction_budget(4096)


class TestIncrementalCorrectness:
    """Test the per-step bookkeeping of wrong outputs."""

    def test_wrong_count_matches_scan(self):
        sim = Simulation(BroadcastSuite(), 12, seed=6)
        for _ in range(300):
            sim.step()
            scan = sum(1 for value in sim.outputs if value not in sim.truth)
            assert sim.wrong == scan
            assert sim.outputs_correct() == (scan == 0)
