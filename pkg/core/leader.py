"""
Leader Election
===============

Two elections driven by the phase clock.

Slow election
-------------
Every agent starts as a contender. At each phase tick a contender draws a coin;
heads contenders announce themselves by a per-phase epidemic, and a tails
contender that hears of a heads contender in the same phase withdraws. Two
contenders meeting directly leave only the initiator (which keeps the heads
flag of either). Since a heads contender never withdraws in its own phase and
a collision always keeps one side, at least one contender survives. Each agent
counts its phase ticks and sets ``done1`` after ``outer_modulus`` of them.

Fast election
-------------
Phases alternate. In even phases contenders append random bits to an integer
``coins`` (reset on the tick), up to a budget derived from the junta level.
In odd phases every agent adopts a larger ``coins`` it meets, and a contender
doing so withdraws. Agents only act on partners in the same phase; at the
terminal phase ``done1`` is set.

Both steps act on composite agent states and expect the clock to have been
synchronised earlier in the same interaction.
"""

from typing import Tuple

from config import ProfileConfig
from core.engine import CoinSource
from core.state import AgentState, FastLeaderState, LeaderState, SlowElectionState, evolve


def slow_leader_tick(agent: AgentState, partner: AgentState, coins: CoinSource,
                     outer_modulus: int) -> AgentState:
    """
    Phase tick of the slow election for one agent.

    Args:
        agent: Agent whose phase counter just advanced
        partner: Its interaction partner (synthetic coin source)
        coins: Coin source
        outer_modulus: Ticks until done1

    Returns:
        Updated agent
    """
    if agent.leader.done1:
        return agent
    rounds = min(agent.slow.rounds + 1, outer_modulus)
    heads = bool(coins.draw(partner.coin)) if agent.leader.leader else False
    slow = SlowElectionState(heads=heads, heads_seen=heads,
                             seen_phase=agent.clock.phase, rounds=rounds)
    leader = agent.leader
    if rounds >= outer_modulus:
        leader = evolve(leader, done1=True)
    return evolve(agent, leader=leader, slow=slow)


def _heard_heads(slow: SlowElectionState, phase: int) -> bool:
    return slow.heads_seen and slow.seen_phase == phase


def slow_leader_step(u: AgentState, v: AgentState, coins: CoinSource,
                     outer_modulus: int) -> Tuple[AgentState, AgentState]:
    """
    Slow election for an initiator that has not finished.

    Args:
        u: Initiator
        v: Responder
        coins: Coin source
        outer_modulus: Ticks until done1

    Returns:
        New (u, v)
    """
    if u.clock.first_tick:
        u = slow_leader_tick(u, v, coins, outer_modulus)
    return slow_leader_interact(u, v)


def slow_leader_interact(u: AgentState, v: AgentState) -> Tuple[AgentState, AgentState]:
    """Pairwise part of the slow election (no phase tick handling)."""
    if u.leader.done1:
        return u, v

    u_lead, v_lead = u.leader, v.leader
    u_slow, v_slow = u.slow, v.slow
    v_open = not v_lead.done1

    if u_lead.leader and v_lead.leader and v_open:
        v_lead = evolve(v_lead, leader=False)
        u_slow = evolve(u_slow, heads=u_slow.heads or v_slow.heads)

    phase = u.clock.phase
    if v.clock.phase == phase and (_heard_heads(u_slow, phase) or _heard_heads(v_slow, phase)):
        u_slow = evolve(u_slow, heads_seen=True, seen_phase=phase)
        if u_lead.leader and not u_slow.heads:
            u_lead = evolve(u_lead, leader=False)
        if v_open:
            v_slow = evolve(v_slow, heads_seen=True, seen_phase=phase)
            if v_lead.leader and not v_slow.heads:
                v_lead = evolve(v_lead, leader=False)

    if u_lead is not u.leader or u_slow is not u.slow:
        u = evolve(u, leader=u_lead, slow=u_slow)
    if v_lead is not v.leader or v_slow is not v.slow:
        v = evolve(v, leader=v_lead, slow=v_slow)
    return u, v


def fast_leader_tick(agent: AgentState) -> AgentState:
    """Reset the coin string at the start of an even phase."""
    if agent.leader.done1 or agent.clock.phase % 2:
        return agent
    return evolve(agent, fast=FastLeaderState())


def fast_leader_step(u: AgentState, v: AgentState, coins: CoinSource,
                     profile: ProfileConfig) -> Tuple[AgentState, AgentState]:
    """
    Fast election for an initiator that has not finished.

    Args:
        u: Initiator
        v: Responder
        coins: Coin source
        profile: Supplies the bit budget and the terminal phase

    Returns:
        New (u, v); the responder is never modified
    """
    if u.clock.first_tick:
        u = fast_leader_tick(u)
    return fast_leader_interact(u, v, coins, profile)


def fast_leader_interact(u: AgentState, v: AgentState, coins: CoinSource,
                         profile: ProfileConfig) -> Tuple[AgentState, AgentState]:
    """Pairwise part of the fast election (no phase tick handling)."""
    if u.leader.done1:
        return u, v

    phase = u.clock.phase
    if v.clock.phase != phase:
        return u, v

    leader: LeaderState = u.leader
    fast = u.fast
    if phase % 2 == 0:
        if leader.leader and fast.counter < profile.budget(u.junta.level):
            bit = coins.draw(v.coin)
            fast = FastLeaderState(coins=fast.coins | (bit << fast.counter),
                                   counter=fast.counter + 1)
    elif fast.coins < v.fast.coins:
        leader = evolve(leader, leader=False)
        fast = evolve(fast, coins=v.fast.coins)

    if phase >= profile.terminal_phase:
        leader = evolve(leader, done1=True)

    if leader is u.leader and fast is u.fast:
        return u, v
    return evolve(u, leader=leader, fast=fast), v

