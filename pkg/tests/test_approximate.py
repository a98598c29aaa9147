"""
Test Approximate Counting
=========================

Unit tests for the backup, search and verification rules of the
approximate counting protocols.
"""

import math
from dataclasses import replace

import numpy as np
import pytest

from config import resolve_profile
from core.acceptance import in_halting_window
from core.engine import CoinSource, Simulation, measure_state_usage, run
from core.harness import Cell, run_cell
from core.state import (AgentState, BackupApproxState, ClockState, ErrorDetectState,
                        JuntaState, LeaderState, SearchState)
from protocols.approximate import (ApproximateProtocol, BackupApproxSuite,
                                   RelaxedStableApproximateProtocol, StableApproximateProtocol,
                                   approximate_output, approximate_step, backup_approx_settled,
                                   backup_approx_step, enter_error_detection,
                                   error_detection_interact, error_detection_step,
                                   error_detection_tick, raise_error, search_interact,
                                   search_step, search_tick)
from utils.helpers import bits_of

SETTLED = JuntaState(level=2, active=False, junta=False)
ELECTED = LeaderState(leader=True, done1=True)
FOLLOWER = LeaderState(leader=False, done1=True)


def _agent(phase=0, first_tick=False, **kwargs):
    kwargs.setdefault('junta', SETTLED)
    return AgentState(clock=ClockState(clock=5, phase=phase, first_tick=first_tick), **kwargs)


def _in_detection(detect_phase, k=-1, l=0, leader=FOLLOWER):
    return _agent(leader=leader, search=SearchState(k=k, done2=True),
                  detect=ErrorDetectState(l=l, phase=detect_phase))


@pytest.fixture
def coins():
    return CoinSource(np.random.default_rng(0))


@pytest.fixture
def desk():
    return resolve_profile("desk")


class TestBackupApprox:
    """Test the merging backup protocol."""

    @pytest.mark.parametrize("u,v,expected", [
        ((2, 2), (2, 3), ((3, 3), (-1, 3))),
        ((0, 0), (0, 0), ((1, 0), (-1, 0))),
        ((3, 3), (1, 1), ((3, 3), (1, 3))),
        ((-1, 2), (-1, 4), ((-1, 4), (-1, 4))),
    ])
    def test_cases(self, u, v, expected):
        """Test merge and maximum propagation."""
        new_u, new_v = backup_approx_step(BackupApproxState(*u), BackupApproxState(*v))
        assert (new_u.k, new_u.kmax) == expected[0]
        assert (new_v.k, new_v.kmax) == expected[1]

    @pytest.mark.parametrize("u,v,expected", [
        ((2, 2), (2, 3), ((3, 3), (-1, 3))),
        ((3, 3), (1, 1), ((3, 3), (1, 1))),
        ((-1, 2), (3, 3), ((-1, 3), (3, 3))),
    ])
    def test_relaxed_cases(self, u, v, expected):
        """Test that relaxed holders keep their own exponent."""
        new_u, new_v = backup_approx_step(BackupApproxState(*u), BackupApproxState(*v),
                                          relaxed=True)
        assert (new_u.k, new_u.kmax) == expected[0]
        assert (new_v.k, new_v.kmax) == expected[1]

    def test_settled(self):
        """Test the stability predicate on the binary representation of 5."""
        states = [BackupApproxState(2, 2), BackupApproxState(0, 2), BackupApproxState(-1, 2)]
        assert backup_approx_settled(states)
        assert not backup_approx_settled(states + [BackupApproxState(0, 2)])
        assert not backup_approx_settled([BackupApproxState(2, 2), BackupApproxState(0, 1)])

    @pytest.mark.parametrize("n", [2, 5, 13, 16])
    def test_runs_to_binary_representation(self, n):
        """Test that holders end on the bits of n and everybody outputs floor(log2 n)."""
        sim = Simulation(BackupApproxSuite(), n, seed=n)
        metrics = sim.run()
        assert metrics.correct
        assert sorted(s.k for s in sim.config.agents if s.k >= 0) == bits_of(n)
        assert metrics.extra['holders'] == bits_of(n)

    def test_state_bound_applies_to_stabilised_configuration(self):
        """Test that a lagging kmax exceeds (floor(log2 n) + 1)**2 only before stabilisation."""
        sim = Simulation(BackupApproxSuite(), 2, seed=0)
        trace = [list(sim.config.agents)]
        while not sim.protocol.is_stable(sim.config):
            sim.step()
            trace.append(list(sim.config.agents))
        assert len(trace) == 3
        assert measure_state_usage(trace).distinct_composite_states == 5
        assert measure_state_usage(trace[-1:]).distinct_composite_states == 2

    def test_unchanged_pair_is_returned(self):
        """Test that a settled pair comes back as the same records."""
        u, v = BackupApproxState(2, 2), BackupApproxState(-1, 2)
        new_u, new_v = backup_approx_step(u, v)
        assert new_u is u and new_v is v


class TestSearch:
    """Test the exponential search."""

    def test_phase4_increment(self):
        """Test that an empty partner lets the leader double."""
        leader = _agent(phase=4, first_tick=True, leader=ELECTED, search=SearchState(k=6))
        partner = _agent(phase=4, leader=FOLLOWER, search=SearchState(k=0))
        new_leader, _ = search_step(leader, partner)
        assert new_leader.search == SearchState(k=7)

    def test_phase4_done(self):
        """Test that a loaded partner halts the search."""
        leader = _agent(phase=4, first_tick=True, leader=ELECTED, search=SearchState(k=6))
        partner = _agent(phase=4, leader=FOLLOWER, search=SearchState(k=1))
        new_leader, _ = search_step(leader, partner)
        assert new_leader.search == SearchState(k=6, done2=True)

    def test_phase1_infusion(self):
        """Test that the leader injects 2**k into its partner."""
        leader = _agent(phase=6, first_tick=True, leader=ELECTED, search=SearchState(k=3))
        partner = _agent(phase=6, leader=FOLLOWER)
        _, new_partner = search_tick(leader, partner)
        assert new_partner.search.k == 3

    def test_leader_starts_at_zero(self):
        """Test that a fresh leader searches from k = 0."""
        leader = _agent(phase=1, first_tick=True, leader=ELECTED)
        new_leader, new_partner = search_tick(leader, _agent(phase=1, leader=FOLLOWER))
        assert new_leader.search.k == 0
        assert new_partner.search.k == 0

    @pytest.mark.parametrize("phase,k_u,k_v,expected", [
        (0, 3, 2, (-1, 2)),
        (2, 3, -1, (2, 2)),
        (3, 1, 4, (4, 4)),
        (1, 3, -1, (3, -1)),
    ])
    def test_pairwise_rules(self, phase, k_u, k_v, expected):
        """Test reset, balancing and maximum broadcast between followers."""
        u = _agent(phase=phase, leader=FOLLOWER, search=SearchState(k=k_u))
        v = _agent(phase=phase, leader=FOLLOWER, search=SearchState(k=k_v))
        new_u, new_v = search_interact(u, v)
        assert (new_u.search.k, new_v.search.k) == expected

    def test_leader_excluded(self):
        """Test that the leader never balances."""
        u = _agent(phase=2, leader=ELECTED, search=SearchState(k=3))
        v = _agent(phase=2, leader=FOLLOWER)
        assert search_interact(u, v) == (u, v)

    def test_phase2_conserves_load(self):
        """Test that balancing keeps the sum of 2**k over non-empty followers."""
        rng = np.random.default_rng(4)
        agents = [_agent(phase=2, leader=FOLLOWER, search=SearchState(k=int(k)))
                  for k in rng.integers(-1, 6, size=30)]

        def total():
            return sum(1 << a.search.k for a in agents if a.search.k >= 0)

        initial = total()
        for _ in range(3000):
            i, j = rng.choice(len(agents), size=2, replace=False)
            agents[i], agents[j] = search_interact(agents[i], agents[j])
            assert total() == initial


class TestErrorDetection:
    """Test the verification stage."""

    def test_injection(self):
        """Test that the leader injects 2**(k-2) into a fresh partner."""
        leader = _in_detection(0, k=10, leader=ELECTED)
        partner = _agent(leader=FOLLOWER, search=SearchState(k=10, done2=False))
        _, new_partner = error_detection_tick(leader, partner)
        assert new_partner.search == SearchState(k=8, done2=True)
        assert new_partner.detect.phase == 0

    def test_injection_below_zero(self):
        """Test that a negative exponent injects no tokens."""
        leader = _in_detection(0, k=1, leader=ELECTED)
        _, new_partner = error_detection_tick(leader, _in_detection(0, k=0))
        assert new_partner.search.k == -1

    @pytest.mark.parametrize("k,expected_l", [(-1, 0), (0, 32)])
    def test_conversion(self, k, expected_l):
        """Test the conversion of a balanced load to 32 tokens."""
        agent, _ = error_detection_tick(_in_detection(2, k=k), _in_detection(2))
        assert agent.detect.l == expected_l
        assert not agent.error

    def test_conversion_of_large_load_errors(self):
        """Test that an unbalanced load raises the flag."""
        agent, _ = error_detection_tick(_in_detection(2, k=2), _in_detection(2))
        assert agent.error
        assert agent.backup == BackupApproxState()

    def test_leader_correction(self):
        """Test k + 3 - log2(l), rounded."""
        agent, _ = error_detection_tick(_in_detection(4, k=10, l=8, leader=ELECTED),
                                        _in_detection(4, l=8))
        assert agent.search.k == 10
        agent, _ = error_detection_tick(_in_detection(4, k=10, l=32, leader=ELECTED),
                                        _in_detection(4, l=32))
        assert agent.search.k == 8

    def test_leader_without_tokens_errors(self):
        """Test that a leader with no tokens at the end raises the flag."""
        agent, _ = error_detection_tick(_in_detection(4, k=10, l=0, leader=ELECTED),
                                        _in_detection(4))
        assert agent.error

    def test_low_load_errors(self):
        """Test the minimum load check."""
        u, _ = error_detection_interact(_in_detection(4, k=9, l=2), _in_detection(4, k=9, l=2))
        assert u.error

    def test_discrepancy_errors(self):
        """Test the maximum discrepancy check."""
        u, _ = error_detection_interact(_in_detection(4, k=9, l=3), _in_detection(4, k=9, l=6))
        assert u.error

    def test_final_phase_broadcast(self):
        """Test that a consistent pair adopts the larger k."""
        u, _ = error_detection_interact(_in_detection(4, k=-1, l=4), _in_detection(4, k=9, l=5))
        assert not u.error
        assert u.search.k == 9

    def test_balancing_phases(self):
        """Test powers-of-two balancing in phase 1 and classical in phase 3."""
        u, v = error_detection_interact(_in_detection(1, k=3), _in_detection(1, k=-1))
        assert (u.search.k, v.search.k) == (2, 2)
        u, v = error_detection_interact(_in_detection(3, l=32), _in_detection(3, l=0))
        assert (u.detect.l, v.detect.l) == (16, 16)

    def test_entering_partner(self):
        """Test that a responder outside the stage is pulled in."""
        v = enter_error_detection(_agent(search=SearchState(k=4)))
        assert v.search == SearchState(k=-1, done2=True)
        assert v.detect.phase == 0

    def test_step_advances_local_phase(self):
        """Test the local tick followed by the pairwise rule."""
        u = _in_detection(1, k=0)
        u = replace(u, clock=replace(u.clock, first_tick=True))
        u, _ = error_detection_step(u, _in_detection(2))
        assert u.detect == ErrorDetectState(l=32, phase=2)

    def test_step_stops_on_error(self):
        u = _in_detection(1, k=2)
        u = replace(u, clock=replace(u.clock, first_tick=True))
        v = _in_detection(2)
        new_u, new_v = error_detection_step(u, v)
        assert new_u.error
        assert new_v == v

    def test_error_reaches_everybody_within_broadcast_window(self):
        """Test that one error agent converts the population within 4 n ln n."""
        protocol = StableApproximateProtocol(resolve_profile("smoke"))
        n = 64
        bound = int(4 * n * math.log(n))
        hits = 0
        for seed in range(20):
            sim = Simulation(protocol, n, seed)
            sim.config.agents[0] = raise_error(sim.config.agents[0])
            done = sim.run_until(lambda s: all(a.error for a in s.config.agents), bound)
            hits += done is not None
        assert hits >= 19


class TestApproximateStep:
    """Test the composed transition function."""

    def test_higher_level_reinitializes(self, coins, desk):
        """Test that meeting a higher junta level restarts the agent."""
        u = AgentState(junta=JuntaState(level=1, active=False, junta=True),
                       leader=ELECTED, search=SearchState(k=5, done2=True))
        v = AgentState(junta=JuntaState(level=3, active=False, junta=True))
        new_u, _ = approximate_step(u, v, coins, desk)
        assert new_u.search == SearchState()
        assert not new_u.done1
        assert new_u.junta.level == 3
        assert not new_u.junta.junta

    def test_final_broadcast(self, coins, desk):
        """Test that the halted leader's k spreads in the fast variant."""
        u = _agent(phase=30, leader=ELECTED, search=SearchState(k=10, done2=True))
        v = _agent(phase=30, leader=FOLLOWER, search=SearchState(k=4))
        _, new_v = approximate_step(u, v, coins, desk)
        assert new_v.search == SearchState(k=10, done2=True)

    def test_leader_collision_raises_error(self, coins, desk):
        """Test that two elected leaders switch to the backup."""
        u = _agent(phase=30, leader=ELECTED)
        v = _agent(phase=30, leader=ELECTED)
        new_u, new_v = approximate_step(u, v, coins, desk, stable=True)
        assert new_u.error and new_v.error
        assert new_u.backup == BackupApproxState(k=1, kmax=0)
        assert new_v.backup == BackupApproxState(k=-1, kmax=0)

    def test_error_spreads(self, coins, desk):
        """Test the error epidemic."""
        u = _agent(phase=30, leader=FOLLOWER,
                   detect=ErrorDetectState(error=True), backup=BackupApproxState(k=2, kmax=2))
        v = _agent(phase=30, leader=FOLLOWER)
        new_u, new_v = approximate_step(u, v, coins, desk, stable=True)
        assert new_v.error
        assert new_u.backup.kmax == 2

    def test_parities_flip(self, coins, desk):
        """Test that every interaction flips both parities."""
        new_u, new_v = approximate_step(AgentState(), AgentState(), coins, desk)
        assert new_u.coin.parity == 1
        assert new_v.coin.parity == 1

    def test_stable_pause_follows_done1(self, coins, desk):
        """Test that the backup pauses with done1 and parities still flip."""
        u = _agent(phase=30, leader=ELECTED, search=SearchState(k=10, done2=False))
        v = _agent(phase=30, leader=FOLLOWER)
        new_u, new_v = approximate_step(u, v, coins, desk, stable=True)
        assert new_u.backup.paused and new_v.backup.paused
        assert (new_u.coin.parity, new_v.coin.parity) == (1, 1)

        fresh_u, fresh_v = approximate_step(AgentState(), AgentState(), coins, desk, stable=True)
        assert not fresh_u.backup.paused
        assert fresh_u.coin.parity == 1


class TestOutputs:
    """Test output functions and ground truths."""

    def test_fast_variant_reports_k(self):
        """Test the plain output."""
        assert approximate_output(_agent(search=SearchState(k=7))) == 7

    def test_stable_variant_reports_backup_on_error(self):
        """Test the fallback output."""
        state = _agent(leader=ELECTED, search=SearchState(k=7),
                       detect=ErrorDetectState(error=True), backup=BackupApproxState(1, 3))
        assert approximate_output(state, stable=True) == 3
        assert approximate_output(state, stable=True, relaxed=True) == 1

    def test_stable_variant_before_election(self):
        """Test that the backup answers until done1."""
        state = AgentState(search=SearchState(k=7), backup=BackupApproxState(-1, 2))
        assert approximate_output(state, stable=True) == 2

    def test_ground_truth(self):
        """Test floor and ceil of log2 n."""
        assert ApproximateProtocol().ground_truth(13) == {3, 4}
        assert ApproximateProtocol().ground_truth(1024) == {10}
        assert RelaxedStableApproximateProtocol().tolerance(13) == 3

    def test_fault_boundaries(self):
        """Test which stage boundaries accept faults."""
        assert "pre-errordetect" in StableApproximateProtocol.fault_boundaries
        assert "pre-errordetect" not in ApproximateProtocol.fault_boundaries


class TestApproximateRun:
    """End-to-end runs on a tiny population."""

    def test_backup_suite_run(self):
        """Test a full backup run through the engine."""
        metrics = run(BackupApproxSuite(), 9, seed=1)
        assert metrics.correct
        assert metrics.t_convergence <= metrics.t_stabilization


class TestSmokeRuns:
    """Whole runs on the smoke profile."""

    def test_approximate_halts_in_window(self):
        """Test correct outputs and a halting exponent with 3n/4 < 2**k <= 2**ceil(log2 n)."""
        n = 24
        runs = [run_cell(Cell(protocol="approximate", n=n, seed=seed, profile="smoke"))
                for seed in range(3)]
        good = [m for m in runs if m.correct and in_halting_window(n, m.extra['leader_k'])]
        assert len(good) >= 2
        for metrics in good:
            assert metrics.extra['leader_k'] == 5
            assert metrics.t_convergence <= metrics.t_stabilization

    @pytest.mark.parametrize("protocol", ["approximate-stable", "approximate-stable-relaxed"])
    def test_stable_variants(self, protocol):
        metrics = run_cell(Cell(protocol=protocol, n=20, seed=0, profile="smoke"))
        assert metrics.correct
        assert metrics.aborted is None

    def test_halting_window(self):
        assert in_halting_window(24, 5)
        assert not in_halting_window(24, 4)
        assert not in_halting_window(24, 6)
        assert in_halting_window(32, 5)
        assert not in_halting_window(32, None)


class TestFaultRecovery:
    """Faults that certainly fire end in a correct backup answer."""

    @pytest.mark.parametrize("fault", [
        # the search halts with k <= 5 at n = 20, so at most one token is injected
        # and no agent reaches l >= 3
        "corrupt-k:-3@pre-errordetect",
        # the two elected leaders meet eventually
        "dup-leader@post-election",
    ])
    def test_detected_and_correct(self, fault):
        n = 20
        metrics = run_cell(Cell(protocol="approximate-stable", n=n, seed=1, profile="smoke",
                                fault=fault))
        assert metrics.extra['fault_fired'] is True
        assert metrics.error_raised
        assert metrics.extra['error_agents'] == n
        assert metrics.correct
