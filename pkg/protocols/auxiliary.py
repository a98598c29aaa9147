"""
Auxiliary Protocols
===================

Stand-alone suites for the building blocks of the counting protocols, used
to measure broadcast times, junta sizes, balancing bounds and leader
elections on their own.
"""

from abc import abstractmethod
from typing import Any, Dict, List, Sequence, Tuple

from core.balancing import EMPTY, pow2_balance
from core.engine import CoinSource, Configuration
from core.leader import (fast_leader_interact, fast_leader_tick, slow_leader_interact,
                         slow_leader_tick)
from core.primitives import broadcast_step, clock_step, flip_parities, junta_step
from core.state import AgentState, JuntaState, evolve
from protocols import approximate, count_exact
from protocols.suite_base import ProtocolSuite
from utils.helpers import floor_log2


class BroadcastSuite(ProtocolSuite):
    """One-way epidemic from a single informed agent."""

    name = "broadcast"
    description = "One-way epidemic of a single bit"

    def initial_configuration(self, n: int) -> List[int]:
        return [1] + [0] * (n - 1)

    def delta(self, u: int, v: int, coins: CoinSource) -> Tuple[int, int]:
        return broadcast_step(u, v)

    def output(self, state: int) -> int:
        return state

    def ground_truth(self, n: int) -> frozenset:
        return frozenset({1})

    def is_stable(self, config: Configuration) -> bool:
        return all(config.agents)


class JuntaSuite(ProtocolSuite):
    """Junta process until every agent is inactive."""

    name = "junta"
    description = "Junta election by level climbing"

    def initial_configuration(self, n: int) -> List[JuntaState]:
        return [JuntaState() for _ in range(n)]

    def delta(self, u: JuntaState, v: JuntaState,
              coins: CoinSource) -> Tuple[JuntaState, JuntaState]:
        return junta_step(u, v, self.profile.junta_symmetric)

    def output(self, state: JuntaState) -> int:
        return state.level

    def is_stable(self, config: Configuration) -> bool:
        return not any(s.active for s in config.agents)

    def summarize(self, config: Configuration, outputs: Sequence[Any]) -> Dict[str, Any]:
        level = max(s.level for s in config.agents)
        return {
            'level': level,
            'junta_size': sum(1 for s in config.agents if s.junta and s.level == level),
        }


def largest_pow2_exponent(n: int) -> int:
    """Largest kappa with 2**kappa <= 3n/4."""
    return floor_log2(max(1, 3 * n // 4))


class Pow2BalanceSuite(ProtocolSuite):
    """Powers-of-two balancing from a single loaded agent."""

    name = "pow2-balance"
    description = "Powers-of-two load balancing from one source"

    def initial_configuration(self, n: int) -> List[int]:
        return [largest_pow2_exponent(n)] + [EMPTY] * (n - 1)

    def delta(self, u: int, v: int, coins: CoinSource) -> Tuple[int, int]:
        return pow2_balance(u, v)

    def output(self, state: int) -> int:
        return state

    def is_stable(self, config: Configuration) -> bool:
        return max(config.agents) <= 0

    def summarize(self, config: Configuration, outputs: Sequence[Any]) -> Dict[str, Any]:
        return {
            'max_k': max(config.agents),
            'total_load': sum(1 << k for k in config.agents if k >= 0),
        }


class _ElectionSuite(ProtocolSuite):
    """Junta, clock and one leader election on composite states."""

    tracks_phases = True

    def initial_configuration(self, n: int) -> List[AgentState]:
        return [AgentState() for _ in range(n)]

    @abstractmethod
    def _reinitialize(self, agent: AgentState) -> AgentState:
        """Restart the election after a higher junta level was seen."""

    @abstractmethod
    def _tick(self, agent: AgentState, partner: AgentState, coins: CoinSource) -> AgentState:
        """Phase tick of an agent that has not finished."""

    @abstractmethod
    def _interact(self, u: AgentState, v: AgentState,
                  coins: CoinSource) -> Tuple[AgentState, AgentState]:
        """Pairwise election rules."""

    def delta(self, u: AgentState, v: AgentState,
              coins: CoinSource) -> Tuple[AgentState, AgentState]:
        if v.junta.level > u.junta.level:
            u = self._reinitialize(u)
        elif u.junta.level > v.junta.level:
            v = self._reinitialize(v)

        j_u, j_v = junta_step(u.junta, v.junta, self.profile.junta_symmetric)
        c_u, c_v = clock_step(u.clock, v.clock, j_u.junta, j_v.junta,
                              modulus=self.profile.modulus, phase_cap=self.profile.phase_cap)
        if j_u is not u.junta or c_u is not u.clock:
            u = evolve(u, junta=j_u, clock=c_u)
        if j_v is not v.junta or c_v is not v.clock:
            v = evolve(v, junta=j_v, clock=c_v)

        if c_v.first_tick and not v.done1:
            v = self._tick(v, u, coins)
        if c_u.first_tick and not u.done1:
            u = self._tick(u, v, coins)
        u, v = self._interact(u, v, coins)
        return flip_parities(u, v)

    def output(self, state: AgentState) -> int:
        return int(state.is_leader)

    def phase_of(self, state: AgentState) -> int:
        return state.clock.phase

    def is_stable(self, config: Configuration) -> bool:
        return all(a.done1 for a in config.agents)

    def summarize(self, config: Configuration, outputs: Sequence[Any]) -> Dict[str, Any]:
        return {'leaders': sum(1 for a in config.agents if a.is_leader)}


class SlowLeaderSuite(_ElectionSuite):
    """Clock-gated coin-flip leader election."""

    name = "slow-leader"
    description = "Slow leader election with a fixed number of coin rounds"

    def phase_budget(self, n: int) -> int:
        return self.profile.outer_modulus + 2

    def _reinitialize(self, agent: AgentState) -> AgentState:
        return approximate.reinitialize(agent)

    def _tick(self, agent: AgentState, partner: AgentState, coins: CoinSource) -> AgentState:
        return slow_leader_tick(agent, partner, coins, self.profile.outer_modulus)

    def _interact(self, u: AgentState, v: AgentState,
                  coins: CoinSource) -> Tuple[AgentState, AgentState]:
        return slow_leader_interact(u, v)


class FastLeaderSuite(_ElectionSuite):
    """Leader election by comparing random bit strings."""

    name = "fast-leader"
    description = "Fast leader election with junta-sized bit strings"

    def phase_budget(self, n: int) -> int:
        return self.profile.terminal_phase + 2

    def _reinitialize(self, agent: AgentState) -> AgentState:
        return count_exact.reinitialize(agent)

    def _tick(self, agent: AgentState, partner: AgentState, coins: CoinSource) -> AgentState:
        return fast_leader_tick(agent)

    def _interact(self, u: AgentState, v: AgentState,
                  coins: CoinSource) -> Tuple[AgentState, AgentState]:
        return fast_leader_interact(u, v, coins, self.profile)
