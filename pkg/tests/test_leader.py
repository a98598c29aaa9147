"""
Test Leader Election
====================

Unit tests for the slow and fast election rules and their stand-alone suites.
"""

import math
from dataclasses import replace

import numpy as np
import pytest

from config import resolve_profile
from core.engine import CoinSource, Simulation, run
from core.leader import (fast_leader_interact, fast_leader_step, fast_leader_tick,
                         slow_leader_interact, slow_leader_step, slow_leader_tick)
from core.observers import LeaderCountMonitor
from core.state import (AgentState, ClockState, CoinState, FastLeaderState, LeaderState,
                        SlowElectionState, evolve)
from protocols.auxiliary import FastLeaderSuite, SlowLeaderSuite, _ElectionSuite


@pytest.fixture
def synthetic_coins():
    """Coin source that reads the partner's parity."""
    return CoinSource(np.random.default_rng(0), mode="synthetic")


@pytest.fixture
def desk():
    return resolve_profile("desk")


def _at_phase(phase, first_tick=False, **kwargs):
    return AgentState(clock=ClockState(clock=0, phase=phase, first_tick=first_tick), **kwargs)


class TestSlowElection:
    """Test the clock-gated coin election."""

    def test_tick_draws_heads(self, synthetic_coins):
        """Test that a contender draws a coin at its tick."""
        agent = _at_phase(3, first_tick=True)
        partner = _at_phase(3, coin=CoinState(1))
        ticked = slow_leader_tick(agent, partner, synthetic_coins, outer_modulus=60)
        assert ticked.slow == SlowElectionState(heads=True, heads_seen=True, seen_phase=3,
                                                rounds=1)

    def test_non_contender_draws_nothing(self, synthetic_coins):
        """Test that followers never hold heads."""
        agent = _at_phase(3, first_tick=True, leader=LeaderState(leader=False))
        partner = _at_phase(3, coin=CoinState(1))
        ticked = slow_leader_tick(agent, partner, synthetic_coins, outer_modulus=60)
        assert not ticked.slow.heads
        assert synthetic_coins.draws == 0

    def test_outer_counter_sets_done1(self, synthetic_coins):
        """Test done1 after outer_modulus ticks."""
        agent = _at_phase(5, first_tick=True, slow=SlowElectionState(rounds=3))
        ticked = slow_leader_tick(agent, _at_phase(5), synthetic_coins, outer_modulus=4)
        assert ticked.done1
        assert ticked.slow.rounds == 4

    def test_collision_keeps_initiator(self):
        """Test that two contenders leave only the initiator."""
        u, v = slow_leader_interact(_at_phase(2), _at_phase(2))
        assert u.is_leader
        assert not v.is_leader

    def test_tails_hears_heads(self):
        """Test withdrawal of a tails contender in the same phase."""
        u = _at_phase(2, slow=SlowElectionState(heads=False, seen_phase=2))
        v = _at_phase(2, leader=LeaderState(leader=False),
                      slow=SlowElectionState(heads_seen=True, seen_phase=2))
        u, v = slow_leader_interact(u, v)
        assert not u.is_leader
        assert u.slow.heads_seen

    def test_stale_heads_ignored(self):
        """Test that news from an older phase has no effect."""
        u = _at_phase(2, slow=SlowElectionState(heads=False, seen_phase=2))
        v = _at_phase(2, leader=LeaderState(leader=False),
                      slow=SlowElectionState(heads_seen=True, seen_phase=1))
        u, _ = slow_leader_interact(u, v)
        assert u.is_leader

    def test_done_initiator_is_inert(self):
        """Test that a finished initiator changes nothing."""
        u = _at_phase(2, leader=LeaderState(leader=True, done1=True))
        v = _at_phase(2)
        assert slow_leader_interact(u, v) == (u, v)

    def test_step_ticks_then_interacts(self, synthetic_coins):
        """Test a heads draw followed by a collision in one step."""
        u = _at_phase(3, first_tick=True)
        v = _at_phase(3, coin=CoinState(1))
        u, v = slow_leader_step(u, v, synthetic_coins, outer_modulus=60)
        assert u.is_leader
        assert u.slow.heads
        assert not v.is_leader
        assert v.slow.heads_seen


class TestFastElection:
    """Test the bit-string election."""

    def test_even_phase_draws_bits(self, synthetic_coins, desk):
        """Test one bit per interaction up to the budget."""
        u = _at_phase(0)
        v = _at_phase(0, coin=CoinState(1))
        u, _ = fast_leader_interact(u, v, synthetic_coins, desk)
        assert u.fast == FastLeaderState(coins=1, counter=1)

        u, _ = fast_leader_interact(u, v, synthetic_coins, desk)
        assert u.fast == FastLeaderState(coins=1, counter=1)

    def test_odd_phase_larger_coins_win(self, synthetic_coins, desk):
        """Test withdrawal on a larger bit string."""
        u = _at_phase(1, fast=FastLeaderState(coins=1, counter=1))
        v = _at_phase(1, fast=FastLeaderState(coins=3, counter=2))
        new_u, new_v = fast_leader_interact(u, v, synthetic_coins, desk)
        assert not new_u.is_leader
        assert new_u.fast.coins == 3
        assert new_v == v

    def test_different_phases_no_action(self, synthetic_coins, desk):
        """Test that agents in different phases ignore each other."""
        u = _at_phase(1, fast=FastLeaderState(coins=1))
        v = _at_phase(2, fast=FastLeaderState(coins=3))
        assert fast_leader_interact(u, v, synthetic_coins, desk) == (u, v)

    def test_terminal_phase(self, synthetic_coins, desk):
        """Test done1 at the terminal phase."""
        u = _at_phase(desk.terminal_phase)
        v = _at_phase(desk.terminal_phase)
        u, _ = fast_leader_interact(u, v, synthetic_coins, desk)
        assert u.done1

    def test_even_tick_resets_coins(self, synthetic_coins, desk):
        """Test the coin reset at an even phase tick."""
        u = _at_phase(2, first_tick=True, fast=FastLeaderState(coins=5, counter=3))
        assert fast_leader_tick(u).fast == FastLeaderState()
        odd = _at_phase(3, first_tick=True, fast=FastLeaderState(coins=5, counter=3))
        assert fast_leader_tick(odd) == odd

    def test_step_combines_tick_and_interaction(self, synthetic_coins, desk):
        """Test that a tick is applied before drawing."""
        u = _at_phase(2, first_tick=True, fast=FastLeaderState(coins=5, counter=3))
        v = _at_phase(2, coin=CoinState(0))
        u, _ = fast_leader_step(u, v, synthetic_coins, desk)
        assert u.fast == FastLeaderState(coins=0, counter=1)


class TestElectionSuites:
    """Test full elections on small populations."""

    @pytest.mark.parametrize("suite_class", [SlowLeaderSuite, FastLeaderSuite])
    def test_never_zero_leaders(self, suite_class):
        """Test that contenders only withdraw and some contender survives."""
        profile = resolve_profile("smoke")
        monitor = LeaderCountMonitor()
        sim = Simulation(suite_class(profile), 24, seed=3, observers=[monitor])
        done = sim.run_until(lambda s: s.protocol.is_stable(s.config), check_every=24)
        assert done is not None
        assert monitor.min_count >= 1
        assert not monitor.grew
        assert sum(1 for a in sim.config.agents if a.is_leader) >= 1

    def test_election_hooks_are_abstract(self):
        """Test that the shared election base cannot be instantiated."""
        with pytest.raises(TypeError):
            _ElectionSuite()

    def test_limit_follows_phase_budget(self):
        """Test that the default interaction limit grows with the clock phases."""
        smoke = resolve_profile("smoke")
        slow = Simulation(SlowLeaderSuite(smoke), 32, seed=0)
        fast = Simulation(FastLeaderSuite(smoke), 32, seed=0)
        per_phase = 2 * smoke.modulus * 32 * (5 + 1)
        assert slow.limit == (smoke.outer_modulus + 2) * per_phase
        assert fast.limit == (smoke.terminal_phase + 2) * per_phase

    def test_phase_intervals_exceed_clock_bound(self):
        """Test that every observed phase keeps all agents together for c n ln n."""
        smoke = resolve_profile("smoke")
        n = 64
        metrics = run(FastLeaderSuite(smoke), n, seed=5)
        assert metrics.correct
        intervals = metrics.phase_intervals
        assert len(intervals) >= 5
        bound = smoke.clock_c * n * math.log(n)
        assert all(end - start >= bound for _, start, end in intervals), intervals


def _fast_rounds(u, v, coins, profile, rounds):
    """Play even/odd phase pairs between two agents, each side initiating in turn."""
    for r in range(rounds):
        u = fast_leader_tick(evolve(u, clock=ClockState(clock=0, phase=2 * r)))
        v = fast_leader_tick(evolve(v, clock=ClockState(clock=0, phase=2 * r)))
        for _ in range(profile.budget(0)):
            u, _ = fast_leader_interact(u, v, coins, profile)
            v, _ = fast_leader_interact(v, u, coins, profile)
        u = evolve(u, clock=ClockState(clock=0, phase=2 * r + 1))
        v = evolve(v, clock=ClockState(clock=0, phase=2 * r + 1))
        u, _ = fast_leader_interact(u, v, coins, profile)
        v, _ = fast_leader_interact(v, u, coins, profile)
    return u, v


class TestFastCollisionBound:
    """Two contenders survive b bits times R rounds with probability 2**-(bR)."""

    @pytest.mark.parametrize("bits,rounds", [(2, 2), (3, 1), (1, 3)])
    def test_both_survive_rate(self, desk, bits, rounds):
        profile = replace(desk, bit_budget=bits)
        coins = CoinSource(np.random.default_rng(bits * 10 + rounds))
        trials = 4000
        survived = 0
        for _ in range(trials):
            u, v = _fast_rounds(AgentState(), AgentState(), coins, profile, rounds)
            assert u.is_leader or v.is_leader
            survived += u.is_leader and v.is_leader
        expected = 2.0 ** -(bits * rounds)
        sigma = math.sqrt(expected * (1 - expected) / trials)
        assert abs(survived / trials - expected) <= 5 * sigma
