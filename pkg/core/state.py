"""
Agent State Records
===================

Immutable per-agent records for every protocol in the library.

Each sub-protocol owns a small frozen dataclass. ``AgentState`` is the
composite value stored in a configuration: the counting protocols carry all
of their sub-records in it, and a transition returns new composites built with
``evolve``. Transitions that change nothing return their inputs unchanged.
Because every record is frozen and hashable, whole configurations can be
compared, hashed and counted for state-usage reports.
"""

import sys
from dataclasses import dataclass, field, fields, is_dataclass
from functools import lru_cache
from operator import attrgetter
from typing import Any, Callable, Dict, Tuple, TypeVar

R = TypeVar('R')


@dataclass(frozen=True, slots=True)
class JuntaState:
    """Junta process triple."""
    level: int = 0
    active: bool = True
    junta: bool = True


@dataclass(frozen=True, slots=True)
class ClockState:
    """
    Phase clock of one agent.

    Attributes:
        clock: Position on the modular clock, in [0, m)
        phase: Exact phase counter (saturates at the profile's cap)
        first_tick: True only in the interaction in which ``phase`` advanced
    """
    clock: int = 0
    phase: int = 0
    first_tick: bool = False


@dataclass(frozen=True, slots=True)
class CoinState:
    """Synthetic coin parity, flipped on every participation."""
    parity: int = 0

    def flipped(self) -> 'CoinState':
        return COIN_STATES[1 - self.parity]


@dataclass(frozen=True, slots=True)
class LeaderState:
    """Leader election interface shared by both election protocols."""
    leader: bool = True
    done1: bool = False


@dataclass(frozen=True, slots=True)
class SlowElectionState:
    """
    Internals of the clock-gated slow election.

    Attributes:
        heads: Coin drawn by a contender at its last phase tick
        heads_seen: Whether a heads contender was heard of in ``seen_phase``
        seen_phase: Phase to which ``heads_seen`` refers
        rounds: Inner phases counted so far (the outer counter)
    """
    heads: bool = False
    heads_seen: bool = False
    seen_phase: int = 0
    rounds: int = 0


@dataclass(frozen=True, slots=True)
class FastLeaderState:
    """Random bit string of a fast-election contender."""
    coins: int = 0
    counter: int = 0


@dataclass(frozen=True, slots=True)
class SearchState:
    """Logarithmic load and halting flag of the search protocol."""
    k: int = -1
    done2: bool = False


@dataclass(frozen=True, slots=True)
class ErrorDetectState:
    """
    Verification stage bookkeeping.

    Attributes:
        l: Token count in [0, 32]
        error: Error flag (monotone)
        phase: Phase counter restarted when the stage is entered, in [0, 4]
    """
    l: int = 0
    error: bool = False
    phase: int = 0


@dataclass(frozen=True, slots=True)
class BackupApproxState:
    """Merged-token exponent, best known maximum and pause flag."""
    k: int = 0
    kmax: int = 0
    paused: bool = False


@dataclass(frozen=True, slots=True)
class ApproxStageState:
    """Load explosion state of the exact counter's first stage."""
    i: int = 0
    l: int = 0
    k: int = -1
    done2: bool = False


@dataclass(frozen=True, slots=True)
class RefineState:
    """
    Refinement stage state.

    ``phase`` counts phases since the agent entered the stage; ``entered``
    distinguishes agents that never reached the stage.
    """
    k: int = -1
    l: int = 0
    phase: int = 0
    entered: bool = False


@dataclass(frozen=True, slots=True)
class BackupExactState:
    """Token count and counted bit of the exact backup protocol."""
    counted: bool = False
    nmax: int = 1


@dataclass(frozen=True, slots=True)
class AgentState:
    """
    Composite state of one agent of a counting protocol.

    Protocols that do not use a sub-record leave it at its default, so it
    contributes a single value to state-usage reports.
    """
    junta: JuntaState = field(default_factory=JuntaState)
    clock: ClockState = field(default_factory=ClockState)
    coin: CoinState = field(default_factory=CoinState)
    leader: LeaderState = field(default_factory=LeaderState)
    slow: SlowElectionState = field(default_factory=SlowElectionState)
    fast: FastLeaderState = field(default_factory=FastLeaderState)
    search: SearchState = field(default_factory=SearchState)
    detect: ErrorDetectState = field(default_factory=ErrorDetectState)
    backup: BackupApproxState = field(default_factory=BackupApproxState)
    approx: ApproxStageState = field(default_factory=ApproxStageState)
    refine: RefineState = field(default_factory=RefineState)
    exact_backup: BackupExactState = field(default_factory=BackupExactState)

    @property
    def error(self) -> bool:
        return self.detect.error

    @property
    def is_leader(self) -> bool:
        return self.leader.leader

    @property
    def done1(self) -> bool:
        return self.leader.done1


COIN_STATES = (CoinState(0), CoinState(1))


@lru_cache(maxsize=None)
def _layout(cls: type) -> Tuple[Callable[[Any], Tuple[Any, ...]], Dict[str, int]]:
    names = tuple(f.name for f in fields(cls))
    getter: Callable[[Any], Tuple[Any, ...]]
    if len(names) == 1:
        single = attrgetter(names[0])
        getter = lambda record: (single(record),)  # noqa: E731
    else:
        getter = attrgetter(*names)
    return getter, {name: index for index, name in enumerate(names)}


def evolve(record: R, **changes: Any) -> R:
    """
    Copy of a state record with some fields changed.

    Same result as ``dataclasses.replace`` for the records of this module
    (plain init fields only), without its per-field checks.

    Raises:
        KeyError: For a name that is not a field of the record
    """
    getter, index = _layout(type(record))
    values = list(getter(record))
    for name, value in changes.items():
        values[index[name]] = value
    return type(record)(*values)


def _flatten(value: Any, prefix: str, out: Dict[str, int]) -> None:
    if is_dataclass(value):
        for f in fields(value):
            name = sys.intern(f"{prefix}.{f.name}" if prefix else f.name)
            _flatten(getattr(value, f.name), name, out)
    elif isinstance(value, (bool, int)):
        out[prefix] = int(value)


@lru_cache(maxsize=1 << 12)
def flatten_state(state: Any) -> Tuple[Tuple[str, int], ...]:
    """
    Flatten a (possibly nested) state record into dotted variable names.

    Args:
        state: Frozen dataclass instance or plain integer value

    Returns:
        Tuple of (variable name, integer value) pairs
    """
    if not is_dataclass(state):
        return (("value", int(state)),)
    out: Dict[str, int] = {}
    _flatten(state, "", out)
    return tuple(out.items())
