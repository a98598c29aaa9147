"""
Approximate Counting
====================

Uniform protocols whose agents agree on ``floor(log2 n)`` or ``ceil(log2 n)``.

Stages
------
1. Junta election and phase clock run all the time. An agent that meets a
   higher junta level restarts every stage variable.
2. Slow leader election until ``done1``.
3. Search: the leader doubles a load ``2**k`` each five-phase round. The load
   is injected into one agent (phase 1), spread by powers-of-two balancing
   (phase 2), its largest piece broadcast (phase 3) and inspected by the leader
   (phase 4). While the spread load stays at most one token per agent the
   leader increments ``k``; otherwise it sets ``done2``.
4. Non-stable variant: the leader's ``k`` is broadcast with ``done2``.
   Stable variants: a five-phase verification re-injects ``2**(k-2)``,
   converts it to ``l`` tokens and balances them. The leader then corrects
   ``k`` by the measured load, and any inconsistency raises the error flag.

Error mode
----------
An agent with the error flag drops everything else, and the flag spreads
epidemically. Error agents run a fresh backup instance with each other: a
slow protocol that merges equal powers of two and is always correct.

Variants
--------
- ``approximate``: fast, correct with high probability
- ``approximate-stable``: every agent eventually outputs ``floor(log2 n)``
  or ``ceil(log2 n)`` with probability 1
- ``approximate-stable-relaxed``: the backup stops propagating maxima to
  token holders; up to ``floor(log2 n)`` holders output their own exponent
- ``backup-approx``: the backup protocol alone
"""

import math
from typing import Any, Dict, FrozenSet, List, Optional, Sequence, Tuple

from config import ProfileConfig
from core.balancing import EMPTY, classical_balance, pow2_balance
from core.engine import CoinSource, Configuration
from core.leader import slow_leader_interact, slow_leader_tick
from core.primitives import clock_step, flip_parities, junta_step
from core.state import (AgentState, BackupApproxState, ClockState, ErrorDetectState,
                        LeaderState, SearchState, SlowElectionState, evolve)
from protocols.suite_base import FaultInjector, ProtocolSuite, backup_budget
from utils.helpers import ceil_log2, floor_log2

SEARCH_ROUND = 5
DETECT_LAST_PHASE = 4
DETECT_TOKENS = 32
MIN_DETECT_LOAD = 3
MAX_DETECT_DISCREPANCY = 2


# ---------------------------------------------------------------------------
# Backup protocol

def backup_approx_step(u: BackupApproxState, v: BackupApproxState,
                       relaxed: bool = False) -> Tuple[BackupApproxState, BackupApproxState]:
    """
    Merge two equal powers of two and spread the largest exponent seen.

    Args:
        u: Initiator backup state
        v: Responder backup state
        relaxed: Token holders keep their own exponent as maximum

    Returns:
        New (u, v)
    """
    top = max(u.k, v.k, u.kmax, v.kmax)
    k_u, k_v = u.k, v.k
    if k_u == k_v >= 0:
        k_u, k_v = k_u + 1, EMPTY
    elif not relaxed and u.kmax == v.kmax == top:
        return u, v

    if relaxed:
        top = max(top, k_u)
        return (evolve(u, k=k_u, kmax=k_u if k_u >= 0 else top),
                evolve(v, k=k_v, kmax=k_v if k_v >= 0 else top))
    return evolve(u, k=k_u, kmax=top), evolve(v, k=k_v, kmax=top)


def backup_approx_output(state: BackupApproxState, relaxed: bool = False) -> int:
    """Backup estimate: ``kmax``, or a holder's own exponent in relaxed mode."""
    if relaxed and state.k >= 0:
        return state.k
    return state.kmax


def backup_approx_settled(states: Sequence[BackupApproxState], relaxed: bool = False) -> bool:
    """
    Whether no further backup interaction can change an output.

    Holders have pairwise distinct exponents and every maximum reached the
    agents that report it.
    """
    held = [s.k for s in states if s.k >= 0]
    if not held or len(held) != len(set(held)):
        return False
    top = max(held)
    if relaxed:
        return all(s.kmax == top for s in states if s.k < 0)
    return all(s.kmax == top for s in states)


# ---------------------------------------------------------------------------
# Search

def reinitialize(agent: AgentState) -> AgentState:
    """Restart clock, election, search and verification; keep junta and error."""
    return evolve(agent, clock=ClockState(), leader=LeaderState(),
                  slow=SlowElectionState(), search=SearchState(),
                  detect=ErrorDetectState(error=agent.detect.error))


def search_tick(agent: AgentState, partner: AgentState) -> Tuple[AgentState, AgentState]:
    """
    One-shot search actions of a leader whose phase just advanced.

    Phase 1 infuses the load ``2**k`` into the partner; phase 4 either
    doubles the load or halts the search.
    """
    if not agent.is_leader or agent.search.done2:
        return agent, partner

    search = agent.search
    if search.k < 0:
        search = evolve(search, k=0)

    phase = agent.clock.phase % SEARCH_ROUND
    if phase == 1:
        partner = evolve(partner, search=evolve(partner.search, k=search.k))
    elif phase == 4:
        if partner.search.k <= 0:
            search = evolve(search, k=search.k + 1)
        else:
            search = evolve(search, done2=True)
    return evolve(agent, search=search), partner


def search_interact(u: AgentState, v: AgentState) -> Tuple[AgentState, AgentState]:
    """Pairwise search rules; they apply between non-leaders only."""
    if u.is_leader or v.is_leader:
        return u, v

    phase = u.clock.phase % SEARCH_ROUND
    k_u, k_v = u.search.k, v.search.k
    if phase == 0:
        k_u = EMPTY
    elif phase == 2:
        k_u, k_v = pow2_balance(k_u, k_v)
    elif phase == 3:
        k_u = k_v = max(k_u, k_v)
    else:
        return u, v
    if k_u == u.search.k and k_v == v.search.k:
        return u, v
    return (evolve(u, search=evolve(u.search, k=k_u)),
            evolve(v, search=evolve(v.search, k=k_v)))


def search_step(u: AgentState, v: AgentState) -> Tuple[AgentState, AgentState]:
    """
    Search protocol for an initiator that has elected but not halted.

    Args:
        u: Initiator
        v: Responder

    Returns:
        New (u, v)
    """
    if u.clock.first_tick:
        u, v = search_tick(u, v)
    return search_interact(u, v)


# ---------------------------------------------------------------------------
# Error detection

def raise_error(agent: AgentState) -> AgentState:
    """Set the error flag and restart the backup on first entry."""
    if agent.error:
        return agent
    return evolve(agent, detect=evolve(agent.detect, error=True),
                  backup=BackupApproxState())


def enter_error_detection(agent: AgentState) -> AgentState:
    """Verification entry: no tokens, halted search, restarted local phase."""
    return evolve(agent, search=SearchState(k=EMPTY, done2=True),
                  detect=evolve(agent.detect, l=0, phase=0))


def in_error_detection(agent: AgentState) -> bool:
    return agent.search.done2


def error_detection_tick(agent: AgentState, partner: AgentState) -> Tuple[AgentState, AgentState]:
    """
    One-shot verification actions at the current local phase.

    Phase 0 (leader): inject ``2**(k-2)`` into the partner.
    Phase 2: convert ``k`` in {-1, 0} to ``l`` in {0, 32}.
    Phase 4 (leader): correct ``k`` by the measured load.
    """
    detect = agent.detect
    search = agent.search
    phase = detect.phase

    if phase == 0:
        if agent.is_leader:
            if not in_error_detection(partner):
                partner = enter_error_detection(partner)
            partner = evolve(partner, search=evolve(partner.search, k=max(EMPTY, search.k - 2)))
        return agent, partner

    if phase == 2:
        if search.k == EMPTY or agent.is_leader:
            detect = evolve(detect, l=0)
        elif search.k == 0:
            detect = evolve(detect, l=DETECT_TOKENS)
        else:
            return raise_error(agent), partner
    elif phase == DETECT_LAST_PHASE and agent.is_leader:
        if detect.l < 1:
            return raise_error(agent), partner
        corrected = math.floor(search.k + 3 - math.log2(detect.l) + 0.5)
        search = evolve(search, k=corrected)
    return evolve(agent, detect=detect, search=search), partner


def error_detection_interact(u: AgentState, v: AgentState) -> Tuple[AgentState, AgentState]:
    """Pairwise verification rules at the initiator's local phase."""
    if not in_error_detection(v):
        v = enter_error_detection(v)

    phase = u.detect.phase
    if phase == 1:
        k_u, k_v = pow2_balance(u.search.k, v.search.k, u.is_leader, v.is_leader)
        return (evolve(u, search=evolve(u.search, k=k_u)),
                evolve(v, search=evolve(v.search, k=k_v)))
    if phase == 3:
        l_u, l_v = classical_balance(u.detect.l, v.detect.l)
        if l_u == u.detect.l and l_v == v.detect.l:
            return u, v
        return (evolve(u, detect=evolve(u.detect, l=l_u)),
                evolve(v, detect=evolve(v.detect, l=l_v)))
    if phase == DETECT_LAST_PHASE:
        if u.detect.l < MIN_DETECT_LOAD or abs(u.detect.l - v.detect.l) > MAX_DETECT_DISCREPANCY:
            return raise_error(u), v
        k = max(u.search.k, v.search.k)
        return evolve(u, search=evolve(u.search, k=k)), v
    return u, v


def error_detection_step(u: AgentState, v: AgentState) -> Tuple[AgentState, AgentState]:
    """
    Verification stage for an initiator with ``done1`` and ``done2``.

    A local phase tick of the initiator advances its stage counter and runs
    that phase's one-shot action before the pairwise rule.

    Args:
        u: Initiator
        v: Responder

    Returns:
        New (u, v)
    """
    if u.clock.first_tick:
        u = evolve(u, detect=evolve(u.detect, phase=min(u.detect.phase + 1, DETECT_LAST_PHASE)))
        u, v = error_detection_tick(u, v)
        if u.error:
            return u, v
    return error_detection_interact(u, v)


# ---------------------------------------------------------------------------
# Composition

def approximate_output(state: AgentState, stable: bool = False, relaxed: bool = False) -> int:
    """
    Output of one agent.

    Stable variants report the backup estimate until the leader election
    finished and whenever the error flag is set.
    """
    if stable and (state.error or not state.done1):
        return backup_approx_output(state.backup, relaxed)
    return state.search.k


def _pause_and_flip(agent: AgentState) -> AgentState:
    backup = agent.backup
    if backup.paused != agent.done1:
        backup = evolve(backup, paused=agent.done1)
    return evolve(agent, backup=backup, coin=agent.coin.flipped())


class _ApproximateRules:
    """Transition function of the approximate protocols for one profile."""

    def __init__(self, profile: ProfileConfig, stable: bool, relaxed: bool,
                 fault: Optional[FaultInjector]):
        self.profile = profile
        self.stable = stable
        self.relaxed = relaxed
        self.fault = fault

    def _stopped(self, agent: AgentState) -> bool:
        return (self.stable and in_error_detection(agent)
                and agent.detect.phase >= DETECT_LAST_PHASE)

    def _tick(self, agent: AgentState, partner: AgentState,
              coins: CoinSource) -> Tuple[AgentState, AgentState]:
        if self.stable and in_error_detection(agent):
            agent = evolve(agent, detect=evolve(
                agent.detect, phase=min(agent.detect.phase + 1, DETECT_LAST_PHASE)))
            agent, partner = error_detection_tick(agent, partner)
            if agent.error:
                return agent, partner

        if not agent.done1:
            agent = slow_leader_tick(agent, partner, coins, self.profile.outer_modulus)

        if agent.done1 and not agent.search.done2:
            agent, partner = search_tick(agent, partner)
            if agent.search.done2:
                if self.fault is not None:
                    k = self.fault.corrupt_k("pre-errordetect", agent.search.k)
                    agent = evolve(agent, search=evolve(agent.search, k=k))
                if self.stable:
                    agent = evolve(agent, detect=evolve(agent.detect, l=0, phase=0))
                    agent, partner = error_detection_tick(agent, partner)
        return agent, partner

    def _error_mode(self, u: AgentState, v: AgentState) -> Tuple[AgentState, AgentState]:
        u, v = raise_error(u), raise_error(v)
        b_u, b_v = backup_approx_step(u.backup, v.backup, self.relaxed)
        return flip_parities(evolve(u, backup=b_u), evolve(v, backup=b_v))

    def __call__(self, u: AgentState, v: AgentState,
                 coins: CoinSource) -> Tuple[AgentState, AgentState]:
        if self.stable and (u.error or v.error):
            return self._error_mode(u, v)

        level_u, level_v = u.junta.level, v.junta.level
        if level_v > level_u:
            u = reinitialize(u)
        elif level_u > level_v:
            v = reinitialize(v)

        j_u, j_v = junta_step(u.junta, v.junta, self.profile.junta_symmetric)
        c_u, c_v = clock_step(u.clock, v.clock, j_u.junta, j_v.junta,
                              modulus=self.profile.modulus, phase_cap=self.profile.phase_cap)
        if c_u.first_tick and self._stopped(u):
            c_u = evolve(c_u, first_tick=False)
        if c_v.first_tick and self._stopped(v):
            c_v = evolve(c_v, first_tick=False)
        if j_u is not u.junta or c_u is not u.clock:
            u = evolve(u, junta=j_u, clock=c_u)
        if j_v is not v.junta or c_v is not v.clock:
            v = evolve(v, junta=j_v, clock=c_v)

        if self.stable and not u.done1 and not v.done1:
            b_u, b_v = backup_approx_step(u.backup, v.backup, self.relaxed)
            if b_u is not u.backup or b_v is not v.backup:
                u, v = evolve(u, backup=b_u), evolve(v, backup=b_v)

        if v.clock.first_tick:
            v, u = self._tick(v, u, coins)
        if u.clock.first_tick:
            u, v = self._tick(u, v, coins)

        if self.stable:
            collision = u.done1 and v.done1 and u.is_leader and v.is_leader
            desync = (in_error_detection(u) and in_error_detection(v)
                      and u.detect.phase != v.detect.phase)
            if collision or desync or u.error or v.error:
                return self._error_mode(u, v)

        if not u.done1:
            u, v = slow_leader_interact(u, v)
        if u.done1 and not u.search.done2:
            u, v = search_interact(u, v)
        if u.done1 and u.search.done2:
            if self.stable:
                u, v = error_detection_interact(u, v)
            else:
                v = evolve(v, search=SearchState(k=u.search.k, done2=True))

        if (self.fault is not None and u.done1 and v.done1
                and u.is_leader != v.is_leader
                and self.fault.duplicate_leader("post-election")):
            if u.is_leader:
                v = evolve(v, leader=evolve(v.leader, leader=True))
            else:
                u = evolve(u, leader=evolve(u.leader, leader=True))

        if not self.stable:
            return flip_parities(u, v)
        return _pause_and_flip(u), _pause_and_flip(v)


def approximate_step(u: AgentState, v: AgentState, coins: CoinSource,
                     profile: ProfileConfig, *, stable: bool = False, relaxed: bool = False,
                     fault: Optional[FaultInjector] = None) -> Tuple[AgentState, AgentState]:
    """
    One interaction of the approximate counting protocol.

    Args:
        u: Initiator
        v: Responder
        coins: Coin source
        profile: Protocol constants
        stable: Add verification and the backup fallback
        relaxed: Use the relaxed backup (stable only)
        fault: Optional one-shot fault

    Returns:
        New (u, v)
    """
    return _ApproximateRules(profile, stable, relaxed, fault)(u, v, coins)


def _junta_settled(agents: Sequence[AgentState]) -> bool:
    level = agents[0].junta.level
    return all(not a.junta.active and a.junta.level == level for a in agents)


class ApproximateProtocol(ProtocolSuite):
    """Approximate counting, correct with high probability."""

    name = "approximate"
    description = "Approximate counting by leader election and exponential search"
    tracks_phases = True
    fault_boundaries = ("post-election",)
    stable = False
    relaxed = False

    def __init__(self, profile: Optional[ProfileConfig] = None,
                 fault: Optional[FaultInjector] = None):
        super().__init__(profile, fault)
        self._rules = _ApproximateRules(self.profile, self.stable, self.relaxed, self.fault)

    def initial_configuration(self, n: int) -> List[AgentState]:
        return [AgentState() for _ in range(n)]

    def delta(self, u: AgentState, v: AgentState,
              coins: CoinSource) -> Tuple[AgentState, AgentState]:
        return self._rules(u, v, coins)

    def output(self, state: AgentState) -> int:
        return approximate_output(state, self.stable, self.relaxed)

    def ground_truth(self, n: int) -> FrozenSet[int]:
        return frozenset({floor_log2(n), ceil_log2(n)})

    def phase_of(self, state: AgentState) -> int:
        return state.clock.phase

    def phase_budget(self, n: int) -> int:
        """Election, one search round per doubling plus slack, and verification."""
        rounds = ceil_log2(n) + 3
        return self.profile.outer_modulus + SEARCH_ROUND * rounds + DETECT_LAST_PHASE + 2

    def is_stable(self, config: Configuration) -> bool:
        agents = config.agents
        if not _junta_settled(agents):
            return False
        k = agents[0].search.k
        return all(a.done1 and a.search.done2 and a.search.k == k for a in agents)

    def summarize(self, config: Configuration, outputs: Sequence[Any]) -> Dict[str, Any]:
        leaders = [a for a in config.agents if a.is_leader]
        return {
            'leaders': len(leaders),
            'leader_k': leaders[0].search.k if len(leaders) == 1 else None,
            'junta_level': max(a.junta.level for a in config.agents),
        }


class StableApproximateProtocol(ApproximateProtocol):
    """Approximate counting with verification and a backup fallback."""

    name = "approximate-stable"
    description = "Approximate counting, always correct (verification plus backup)"
    fault_boundaries = ("pre-errordetect", "post-election")
    stable = True

    def error_raised(self, config: Configuration) -> bool:
        return any(a.error for a in config.agents)

    def interaction_budget(self, n: int) -> Optional[int]:
        """Clocked budget plus room for the backup after an error."""
        budget = super().interaction_budget(n)
        return None if budget is None else budget + backup_budget(n)

    def _backup_settled(self, agents: Sequence[AgentState]) -> bool:
        return (all(a.error for a in agents)
                and backup_approx_settled([a.backup for a in agents], self.relaxed))

    def is_stable(self, config: Configuration) -> bool:
        agents = config.agents
        if any(a.error for a in agents):
            return self._backup_settled(agents)
        if not _junta_settled(agents):
            return False
        if sum(1 for a in agents if a.is_leader) != 1:
            return False
        k = agents[0].search.k
        loads = [a.detect.l for a in agents]
        return (all(a.done1 and a.search.done2 and a.detect.phase == DETECT_LAST_PHASE
                    and a.search.k == k for a in agents)
                and min(loads) >= MIN_DETECT_LOAD
                and max(loads) - min(loads) <= MAX_DETECT_DISCREPANCY)

    def summarize(self, config: Configuration, outputs: Sequence[Any]) -> Dict[str, Any]:
        summary = super().summarize(config, outputs)
        summary['error_agents'] = sum(1 for a in config.agents if a.error)
        return summary


class RelaxedStableApproximateProtocol(StableApproximateProtocol):
    """Stable approximate counting with the relaxed backup."""

    name = "approximate-stable-relaxed"
    description = "Approximate counting, always correct for all but log n agents"
    relaxed = True

    def tolerance(self, n: int) -> int:
        return floor_log2(n)

    def summarize(self, config: Configuration, outputs: Sequence[Any]) -> Dict[str, Any]:
        summary = super().summarize(config, outputs)
        if summary['error_agents']:
            held = [a.backup.k for a in config.agents if a.error and a.backup.k >= 0]
            top = max(held, default=EMPTY)
            summary['excluded'] = sum(1 for k in held if k < top)
        else:
            summary['excluded'] = 0
        return summary


class BackupApproxSuite(ProtocolSuite):
    """The approximate backup protocol on its own."""

    name = "backup-approx"
    description = "Slow always-correct floor(log n) by merging powers of two"

    def initial_configuration(self, n: int) -> List[BackupApproxState]:
        return [BackupApproxState() for _ in range(n)]

    def delta(self, u: BackupApproxState, v: BackupApproxState,
              coins: CoinSource) -> Tuple[BackupApproxState, BackupApproxState]:
        return backup_approx_step(u, v)

    def output(self, state: BackupApproxState) -> int:
        return backup_approx_output(state)

    def ground_truth(self, n: int) -> FrozenSet[int]:
        return frozenset({floor_log2(n)})

    def is_stable(self, config: Configuration) -> bool:
        return backup_approx_settled(config.agents)

    def summarize(self, config: Configuration, outputs: Sequence[Any]) -> Dict[str, Any]:
        return {'holders': sorted(s.k for s in config.agents if s.k >= 0)}
