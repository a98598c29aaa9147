"""
Population Protocol Primitives
==============================

Building blocks shared by the counting protocols.

One-way epidemics
-----------------
``broadcast_step`` lets the initiator adopt the larger of two values; the
responder is unchanged. Starting from a single informed agent the maximum
reaches everybody in O(n log n) interactions.

Junta process
-------------
Every agent starts active on level 0 with its junta bit set. Two active agents
on the same level move up one level; any other encounter deactivates an active
agent. An agent that meets a higher level loses its junta bit, and inactive
agents adopt the higher level. The process ends when all agents are inactive;
the agents left on the maximum level with their junta bit set form the junta.
Rules are applied to both participants against each other's pre-interaction
state unless ``symmetric`` is turned off.

Phase clocks
------------
Each agent holds a clock value in [0, m). In every interaction both agents
move to the value that is ahead in circular order, where ``b`` is ahead of
``a`` iff ``(b - a) mod m`` lies in [1, floor(m/2)]. A junta member meeting an
agent on its own clock value first advances by one step. Crossing from m-1 to
0 is a tick: the exact phase counter grows by one and ``first_tick`` is set
for that interaction only.

Synthetic coins
---------------
Every agent flips a parity bit on every participation. Reading the partner's
parity yields a bit whose randomness comes from the scheduler alone.
"""

from typing import Any, Tuple, TypeVar

from core.state import ClockState, CoinState, JuntaState, evolve

T = TypeVar('T')

PHASE_CAP = 1 << 16


def broadcast_step(u_val: T, v_val: T) -> Tuple[T, T]:
    """
    One-way epidemic: the initiator adopts the maximum.

    Args:
        u_val: Initiator value
        v_val: Responder value

    Returns:
        (max(u_val, v_val), v_val)
    """
    return (v_val if v_val > u_val else u_val), v_val  # type: ignore[operator]


def _junta_update(a: JuntaState, b: JuntaState) -> JuntaState:
    level, active, junta = a.level, a.active, a.junta

    if a.active:
        if b.active and a.level == b.level:
            level += 1
        else:
            active = False

    if a.level < b.level:
        junta = False
        if not active:
            level = max(level, b.level)

    if level == a.level and active == a.active and junta == a.junta:
        return a
    return JuntaState(level=level, active=active, junta=junta)


def junta_step(u: JuntaState, v: JuntaState,
               symmetric: bool = True) -> Tuple[JuntaState, JuntaState]:
    """
    One interaction of the junta process.

    Args:
        u: Initiator junta state
        v: Responder junta state
        symmetric: Also update the responder against the initiator

    Returns:
        New (u, v)
    """
    new_u = _junta_update(u, v)
    new_v = _junta_update(v, u) if symmetric else v
    return new_u, new_v


def is_ahead(b: int, a: int, modulus: int) -> bool:
    """Check whether clock value ``b`` is ahead of ``a``."""
    return 1 <= (b - a) % modulus <= modulus // 2


def _move_clock(state: ClockState, target: int, modulus: int,
                phase_cap: int) -> ClockState:
    if target == state.clock and not state.first_tick:
        return state
    distance = (target - state.clock) % modulus
    ticked = state.clock + distance >= modulus
    phase = min(state.phase + 1, phase_cap) if ticked else state.phase
    return ClockState(clock=target, phase=phase, first_tick=ticked)


def clock_step(u: ClockState, v: ClockState, u_in_junta: bool,
               v_in_junta: bool = False, *, modulus: int,
               phase_cap: int = PHASE_CAP) -> Tuple[ClockState, ClockState]:
    """
    Synchronise two phase clocks.

    Args:
        u: Initiator clock
        v: Responder clock
        u_in_junta: Initiator carries the junta bit
        v_in_junta: Responder carries the junta bit
        modulus: Clock modulus m
        phase_cap: Saturation value of the phase counter

    Returns:
        New (u, v); both carry the same clock value
    """
    cu, cv = u.clock, v.clock
    if cu == cv:
        if u_in_junta:
            cu = (cu + 1) % modulus
        if v_in_junta:
            cv = (cv + 1) % modulus

    target = cv if is_ahead(cv, cu, modulus) else cu
    return (_move_clock(u, target, modulus, phase_cap),
            _move_clock(v, target, modulus, phase_cap))


def synthetic_coin(partner: CoinState) -> Tuple[int, CoinState]:
    """
    Draw a bit from the partner's parity.

    Args:
        partner: Coin state of the interaction partner

    Returns:
        (bit, partner state after its parity flip)
    """
    return partner.parity, partner.flipped()


def flip_parities(u: Any, v: Any) -> Tuple[Any, Any]:
    """Flip the coin parity of both participants of a composite state."""
    return evolve(u, coin=u.coin.flipped()), evolve(v, coin=v.coin.flipped())
