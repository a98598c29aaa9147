"""
Token Balancing Rules
=====================

Pair rules that move tokens between two agents.

Powers-of-two balancing keeps every load either empty or a power of two. A
load is stored as its exponent ``k`` (load ``2**k``), with ``k = -1`` meaning
an empty agent. A non-empty agent with ``k > 0`` meeting an empty agent splits
its load in half:

    (k, -1)  ->  (k - 1, k - 1)
    (-1, k)  ->  (k - 1, k - 1)

Every other pair is left as it is, and no action is taken when either
participant is the leader.

Classical balancing averages plain token counts:

    (l_u, l_v)  ->  (floor((l_u + l_v) / 2), ceil((l_u + l_v) / 2))

Both rules conserve the total load. Who balances when is decided by the
protocol that uses them.
"""

from typing import Tuple

EMPTY = -1


def pow2_balance(k_u: int, k_v: int,
                 u_is_leader: bool = False,
                 v_is_leader: bool = False) -> Tuple[int, int]:
    """
    Apply one powers-of-two balancing action.

    Args:
        k_u: Logarithmic load of the initiator (-1 for empty)
        k_v: Logarithmic load of the responder (-1 for empty)
        u_is_leader: Initiator is the leader
        v_is_leader: Responder is the leader

    Returns:
        New (k_u, k_v)
    """
    if u_is_leader or v_is_leader:
        return k_u, k_v
    if k_u == EMPTY and k_v > 0:
        return k_v - 1, k_v - 1
    if k_v == EMPTY and k_u > 0:
        return k_u - 1, k_u - 1
    return k_u, k_v


def classical_balance(l_u: int, l_v: int) -> Tuple[int, int]:
    """
    Split the combined load of two agents as evenly as possible.

    Args:
        l_u: Initiator load
        l_v: Responder load

    Returns:
        (floor, ceil) of the average
    """
    total = l_u + l_v
    return total // 2, total - total // 2


def pow2_load(k: int) -> int:
    """Token count represented by a logarithmic load."""
    return 0 if k < 0 else 1 << k
