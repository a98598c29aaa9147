"""
Exact Counting
==============

Uniform protocols whose agents all output the exact population size.

Stages
------
1. Junta election and phase clock, restarted on a higher junta level.
2. Fast leader election until ``done1``.
3. Approximation: at every phase tick each agent multiplies its token count
   by ``2**e`` (``e`` from the profile and the junta level); the leader
   starts with one token and agents balance counts in between. Once the
   leader holds at least four tokens it knows ``k = i*e - floor(log2 l)``,
   an estimate of ``log2 n`` within a few units, and sets ``done2``.
4. Refinement: everybody adopts the maximum ``k`` with an empty load
   (phase 0), the leader creates ``2**shift * 2**k`` tokens (phase 1), every
   agent multiplies its balanced share by ``2**k`` (phase 2). Balancing
   leaves each agent with about ``M / n`` tokens, ``M = 2**(shift + 2k)``,
   so ``round(M / l)`` is exactly ``n``.

The stable variant checks for two elected leaders, mismatched stage phase
counters, a share below ``2**5 - 1`` before the phase-2 multiply and
disagreeing ``k`` values; any of them raises the error flag, and error agents
fall back to a token-merging backup that counts exactly.
"""

from typing import Any, Dict, FrozenSet, List, Optional, Sequence, Tuple

from config import ProfileConfig
from core.balancing import classical_balance
from core.engine import CoinSource, Configuration, check_load
from core.leader import fast_leader_interact, fast_leader_tick
from core.primitives import clock_step, flip_parities, junta_step
from core.state import (AgentState, ApproxStageState, BackupExactState, ClockState,
                        ErrorDetectState, FastLeaderState, LeaderState, RefineState,
                        evolve)
from protocols.suite_base import FaultInjector, ProtocolSuite, backup_budget
from utils.helpers import ceil_log2

DECISION_LOAD = 4
REFINE_LAST_PHASE = 3
MIN_REFINE_SHARE = 31


# ---------------------------------------------------------------------------
# Backup protocol

def backup_exact_step(u: BackupExactState,
                      v: BackupExactState) -> Tuple[BackupExactState, BackupExactState]:
    """
    Merge two uncounted token piles, otherwise spread the maximum.

    Only counted agents adopt the maximum; an uncounted agent's ``nmax`` is
    its pile, so the piles always sum to n.

    Args:
        u: Initiator backup state
        v: Responder backup state

    Returns:
        New (u, v)
    """
    if not u.counted and not v.counted:
        total = u.nmax + v.nmax
        return BackupExactState(False, total), BackupExactState(True, total)
    if u.nmax == v.nmax:
        return u, v
    top = max(u.nmax, v.nmax)
    return (evolve(u, nmax=top) if u.counted else u,
            evolve(v, nmax=top) if v.counted else v)


def backup_exact_settled(states: Sequence[BackupExactState]) -> bool:
    """One uncounted agent holds all n tokens and everybody knows n."""
    n = len(states)
    uncounted = [s for s in states if not s.counted]
    return len(uncounted) == 1 and all(s.nmax == n for s in states)


# ---------------------------------------------------------------------------
# Output

def exact_output(refine: RefineState, shift: int = 8) -> Optional[int]:
    """
    Population estimate ``round(2**shift * 2**(2k) / l)``.

    Returns:
        The estimate, or None while the agent holds no refinement load
    """
    if not refine.entered or refine.l <= 0 or refine.k < 0:
        return None
    total = 1 << (shift + 2 * refine.k)
    return (2 * total + refine.l) // (2 * refine.l)


def count_exact_output(state: AgentState, stable: bool = False, shift: int = 8) -> Optional[int]:
    """Output of one agent; error agents report their backup maximum."""
    if stable and state.error:
        return state.exact_backup.nmax
    return exact_output(state.refine, shift)


# ---------------------------------------------------------------------------
# Approximation stage

def reinitialize(agent: AgentState) -> AgentState:
    """Restart clock, election and both counting stages; keep junta and error."""
    return evolve(agent, clock=ClockState(), leader=LeaderState(), fast=FastLeaderState(),
                  approx=ApproxStageState(), refine=RefineState(),
                  detect=ErrorDetectState(error=agent.detect.error))


def enter_refinement(agent: AgentState) -> AgentState:
    """Mark ``done2`` and start the refinement stage at its phase 0."""
    approx = evolve(agent.approx, done2=True)
    refine = RefineState(k=max(agent.refine.k, approx.k), l=0, phase=0, entered=True)
    return evolve(agent, approx=approx, refine=refine)


def approximation_tick(agent: AgentState, profile: ProfileConfig,
                       fault: Optional[FaultInjector] = None) -> AgentState:
    """
    Phase tick of the approximation stage (load explosion).

    Raises:
        LoadOverflowError: If the multiplied load leaves the load width
    """
    approx = agent.approx
    exponent = profile.exponent(agent.junta.level)

    if agent.is_leader:
        if approx.i == 0:
            approx = evolve(approx, l=1)
        if approx.l >= DECISION_LOAD:
            k = approx.i * exponent - (approx.l.bit_length() - 1)
            if fault is not None:
                k = fault.corrupt_k("pre-refine", k)
            agent = evolve(agent, approx=evolve(approx, k=k))
            return enter_refinement(agent)

    approx = evolve(approx, i=approx.i + 1, l=check_load(approx.l << exponent))
    return evolve(agent, approx=approx)


def approximation_interact(u: AgentState, v: AgentState) -> Tuple[AgentState, AgentState]:
    """Balance counts; adopt ``done2`` from the responder."""
    l_u, l_v = classical_balance(u.approx.l, v.approx.l)
    if l_u != u.approx.l:
        u = evolve(u, approx=evolve(u.approx, l=l_u))
    if l_v != v.approx.l:
        v = evolve(v, approx=evolve(v.approx, l=l_v))
    if v.approx.done2:
        u = enter_refinement(u)
    return u, v


def approximation_stage_step(u: AgentState, v: AgentState,
                             profile: ProfileConfig) -> Tuple[AgentState, AgentState]:
    """
    Approximation stage for an elected initiator.

    Args:
        u: Initiator with ``done1`` and without ``done2``
        v: Responder
        profile: Supplies the explosion exponent

    Returns:
        New (u, v)
    """
    if u.clock.first_tick:
        u = approximation_tick(u, profile)
        if u.approx.done2:
            return refinement_interact(u, v)
    return approximation_interact(u, v)


# ---------------------------------------------------------------------------
# Refinement stage

def refinement_tick(agent: AgentState, profile: ProfileConfig,
                    stable: bool = False) -> AgentState:
    """
    Phase tick of the refinement stage.

    Phase 1: the leader creates ``2**shift * 2**k`` tokens.
    Phase 2: every agent multiplies its share by ``2**k``.
    """
    refine = agent.refine
    phase = min(refine.phase + 1, REFINE_LAST_PHASE)
    if phase == refine.phase:
        return agent
    refine = evolve(refine, phase=phase)

    if phase == 1 and agent.is_leader:
        if refine.k < 0:
            return _flag_error(agent, refine) if stable else evolve(agent, refine=refine)
        refine = evolve(refine, l=check_load(1 << (profile.refine_shift + refine.k)))
    elif phase == 2:
        if refine.k < 0 or (stable and refine.l < MIN_REFINE_SHARE):
            return _flag_error(agent, refine) if stable else evolve(agent, refine=refine)
        refine = evolve(refine, l=check_load(refine.l << refine.k))
    return evolve(agent, refine=refine)


def refinement_interact(u: AgentState, v: AgentState) -> Tuple[AgentState, AgentState]:
    """Adopt the maximum ``k`` in phase 0, then balance the loads."""
    if not v.refine.entered:
        v = enter_refinement(v)
    r_u, r_v = u.refine, v.refine
    if r_u.phase == 0:
        k = max(r_u.k, r_v.k)
        r_u = evolve(r_u, k=k, l=0)
        r_v = evolve(r_v, k=k, l=0)
    l_u, l_v = classical_balance(r_u.l, r_v.l)
    if r_u is not u.refine or l_u != r_u.l:
        u = evolve(u, refine=evolve(r_u, l=l_u))
    if r_v is not v.refine or l_v != r_v.l:
        v = evolve(v, refine=evolve(r_v, l=l_v))
    return u, v


def refinement_stage_step(u: AgentState, v: AgentState, profile: ProfileConfig,
                          stable: bool = False) -> Tuple[AgentState, AgentState]:
    """
    Refinement stage for an initiator with ``done2``.

    Args:
        u: Initiator
        v: Responder
        profile: Supplies the refinement shift
        stable: Check the share before the phase-2 multiply

    Returns:
        New (u, v)
    """
    if u.clock.first_tick:
        u = refinement_tick(u, profile, stable)
        if u.error:
            return u, v
    return refinement_interact(u, v)


# ---------------------------------------------------------------------------
# Composition

def _flag_error(agent: AgentState, refine: Optional[RefineState] = None) -> AgentState:
    if refine is not None:
        agent = evolve(agent, refine=refine)
    if agent.error:
        return agent
    return evolve(agent, detect=evolve(agent.detect, error=True),
                  exact_backup=BackupExactState())


class _CountExactRules:
    """Transition function of the exact protocols for one profile."""

    def __init__(self, profile: ProfileConfig, stable: bool, fault: Optional[FaultInjector]):
        self.profile = profile
        self.stable = stable
        self.fault = fault

    def _tick(self, agent: AgentState) -> AgentState:
        if agent.refine.entered:
            return refinement_tick(agent, self.profile, self.stable)
        if not agent.done1:
            return fast_leader_tick(agent)
        return approximation_tick(agent, self.profile, self.fault)

    def _error_mode(self, u: AgentState, v: AgentState) -> Tuple[AgentState, AgentState]:
        u, v = _flag_error(u), _flag_error(v)
        b_u, b_v = backup_exact_step(u.exact_backup, v.exact_backup)
        return flip_parities(evolve(u, exact_backup=b_u), evolve(v, exact_backup=b_v))

    @staticmethod
    def _inconsistent(u: AgentState, v: AgentState) -> bool:
        if not (u.done1 and v.done1):
            return False
        if u.is_leader and v.is_leader:
            return True
        r_u, r_v = u.refine, v.refine
        if r_u.entered and r_v.entered:
            if r_u.phase >= 2 and r_v.phase >= 2 and r_u.k != r_v.k:
                return True
            finished = r_u.phase >= REFINE_LAST_PHASE and r_v.phase >= REFINE_LAST_PHASE
            return not finished and r_u.phase != r_v.phase
        if not r_u.entered and not r_v.entered:
            return u.approx.i != v.approx.i
        return False

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
        if j_u is not u.junta or c_u is not u.clock:
            u = evolve(u, junta=j_u, clock=c_u)
        if j_v is not v.junta or c_v is not v.clock:
            v = evolve(v, junta=j_v, clock=c_v)

        if c_v.first_tick:
            v = self._tick(v)
        if c_u.first_tick:
            u = self._tick(u)

        if self.stable and (u.error or v.error or self._inconsistent(u, v)):
            return self._error_mode(u, v)

        if not u.done1:
            u, v = fast_leader_interact(u, v, coins, self.profile)
        elif u.refine.entered:
            u, v = refinement_interact(u, v)
        else:
            u, v = approximation_interact(u, v)

        if (self.fault is not None and u.done1 and v.done1
                and u.is_leader != v.is_leader
                and self.fault.duplicate_leader("post-election")):
            if u.is_leader:
                v = evolve(v, leader=evolve(v.leader, leader=True))
            else:
                u = evolve(u, leader=evolve(u.leader, leader=True))

        return flip_parities(u, v)


def count_exact_step(u: AgentState, v: AgentState, coins: CoinSource,
                     profile: ProfileConfig, *, stable: bool = False,
                     fault: Optional[FaultInjector] = None) -> Tuple[AgentState, AgentState]:
    """
    One interaction of the exact counting protocol.

    Args:
        u: Initiator
        v: Responder
        coins: Coin source
        profile: Protocol constants
        stable: Add consistency checks and the backup fallback
        fault: Optional one-shot fault

    Returns:
        New (u, v)
    """
    return _CountExactRules(profile, stable, fault)(u, v, coins)


class CountExactProtocol(ProtocolSuite):
    """Exact counting, correct with high probability."""

    name = "count-exact"
    description = "Exact counting by load explosion and refinement"
    tracks_phases = True
    fault_boundaries = ("pre-refine", "post-election")
    stable = False

    def __init__(self, profile: Optional[ProfileConfig] = None,
                 fault: Optional[FaultInjector] = None):
        super().__init__(profile, fault)
        self._rules = _CountExactRules(self.profile, self.stable, self.fault)

    def initial_configuration(self, n: int) -> List[AgentState]:
        return [AgentState() for _ in range(n)]

    def delta(self, u: AgentState, v: AgentState,
              coins: CoinSource) -> Tuple[AgentState, AgentState]:
        return self._rules(u, v, coins)

    def output(self, state: AgentState) -> Optional[int]:
        return count_exact_output(state, self.stable, self.profile.refine_shift)

    def ground_truth(self, n: int) -> FrozenSet[int]:
        return frozenset({n})

    def phase_of(self, state: AgentState) -> int:
        return state.clock.phase

    def phase_budget(self, n: int) -> int:
        """Election, load explosion with slack, and the refinement phases."""
        return self.profile.terminal_phase + ceil_log2(n) + REFINE_LAST_PHASE + 2

    def is_stable(self, config: Configuration) -> bool:
        agents = config.agents
        level = agents[0].junta.level
        if any(a.junta.active or a.junta.level != level for a in agents):
            return False
        k = agents[0].refine.k
        if k < 0:
            return False
        if not all(a.refine.entered and a.refine.phase == REFINE_LAST_PHASE
                   and a.refine.k == k for a in agents):
            return False
        # Balancing keeps every load within [low, high] and the estimate is
        # monotone in the load, so equal estimates at both ends fix all outputs.
        low = min(agents, key=lambda a: a.refine.l).refine
        high = max(agents, key=lambda a: a.refine.l).refine
        if low.l <= 0:
            return False
        shift = self.profile.refine_shift
        return exact_output(low, shift) == exact_output(high, shift)

    def summarize(self, config: Configuration, outputs: Sequence[Any]) -> Dict[str, Any]:
        leaders = [a for a in config.agents if a.is_leader]
        return {
            'leaders': len(leaders),
            'leader_k': leaders[0].approx.k if len(leaders) == 1 else None,
            'refine_k': max(a.refine.k for a in config.agents),
            'junta_level': max(a.junta.level for a in config.agents),
        }


class StableCountExactProtocol(CountExactProtocol):
    """Exact counting with consistency checks and a backup fallback."""

    name = "count-exact-stable"
    description = "Exact counting, always correct (consistency checks plus backup)"
    stable = True

    def error_raised(self, config: Configuration) -> bool:
        return any(a.error for a in config.agents)

    def interaction_budget(self, n: int) -> Optional[int]:
        """Clocked budget plus room for the backup after an error."""
        budget = super().interaction_budget(n)
        return None if budget is None else budget + backup_budget(n)

    def is_stable(self, config: Configuration) -> bool:
        agents = config.agents
        if any(a.error for a in agents):
            return (all(a.error for a in agents)
                    and backup_exact_settled([a.exact_backup for a in agents]))
        if sum(1 for a in agents if a.is_leader) != 1:
            return False
        return super().is_stable(config)

    def summarize(self, config: Configuration, outputs: Sequence[Any]) -> Dict[str, Any]:
        summary = super().summarize(config, outputs)
        summary['error_agents'] = sum(1 for a in config.agents if a.error)
        return summary


class BackupExactSuite(ProtocolSuite):
    """The exact backup protocol on its own."""

    name = "backup-exact"
    description = "Slow always-correct exact count by merging tokens"

    def initial_configuration(self, n: int) -> List[BackupExactState]:
        return [BackupExactState() for _ in range(n)]

    def delta(self, u: BackupExactState, v: BackupExactState,
              coins: CoinSource) -> Tuple[BackupExactState, BackupExactState]:
        return backup_exact_step(u, v)

    def output(self, state: BackupExactState) -> int:
        return state.nmax

    def ground_truth(self, n: int) -> FrozenSet[int]:
        return frozenset({n})

    def is_stable(self, config: Configuration) -> bool:
        return backup_exact_settled(config.agents)
