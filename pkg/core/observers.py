"""
Simulation Observers
====================

Hooks called by the simulation loop.

To add an observer:
1. Inherit from SimulationObserver
2. Implement ``on_step``
3. Pass an instance to ``Simulation`` or ``engine.run``
"""

import json
import logging
from abc import ABC, abstractmethod
from typing import IO, TYPE_CHECKING, Any, Dict, List, Optional, Tuple

from config import ConfigurationError
from core.state import flatten_state

if TYPE_CHECKING:
    from core.engine import RunMetrics, Simulation

logger = logging.getLogger('PopulationCounting.observers')

TRACE_MAX_AGENTS = 256


class SimulationObserver(ABC):
    """Base class for all observers."""

    name: str = "observer"

    def on_run_start(self, sim: 'Simulation') -> None:
        """Called once the initial configuration exists."""

    @abstractmethod
    def on_step(self, sim: 'Simulation', i: int, j: int, before_u: Any, before_v: Any) -> None:
        """
        Called after every interaction.

        Args:
            sim: Running simulation (new states are in ``sim.config``)
            i: Initiator index
            j: Responder index
            before_u: Initiator state before the interaction
            before_v: Responder state before the interaction
        """

    def on_run_complete(self, sim: 'Simulation', metrics: 'RunMetrics') -> None:
        """Called after the run loop ends."""


class PhaseIntervalRecorder(SimulationObserver):
    """
    Record, per exact phase id, when the last agent entered it and when the
    first agent left it.
    """

    name = "phase-intervals"

    def __init__(self) -> None:
        self.counts: Dict[int, int] = {}
        self.min_phase = 0
        self.max_phase = 0
        self.start: Dict[int, int] = {}
        self.end: Dict[int, int] = {}

    def _phase(self, sim: 'Simulation', state: Any) -> int:
        phase = sim.protocol.phase_of(state)
        return 0 if phase is None else phase

    def on_run_start(self, sim: 'Simulation') -> None:
        for state in sim.config.agents:
            phase = self._phase(sim, state)
            self.counts[phase] = self.counts.get(phase, 0) + 1
        self.min_phase = min(self.counts)
        self.max_phase = max(self.counts)
        self.start[self.min_phase] = 0

    def _move(self, old: int, new: int) -> None:
        self.counts[old] -= 1
        self.counts[new] = self.counts.get(new, 0) + 1

    def on_step(self, sim: 'Simulation', i: int, j: int, before_u: Any, before_v: Any) -> None:
        t = sim.t
        agents = sim.config.agents
        changed = False
        for before, index in ((before_u, i), (before_v, j)):
            old = self._phase(sim, before)
            new = self._phase(sim, agents[index])
            if old != new:
                self._move(old, new)
                changed = True
                if new > self.max_phase:
                    for phase in range(self.max_phase, new):
                        self.end.setdefault(phase, t - 1)
                    self.max_phase = new
                if new < self.min_phase:
                    self.min_phase = new
        if not changed:
            return
        while self.counts.get(self.min_phase, 0) == 0 and self.min_phase < self.max_phase:
            self.min_phase += 1
            self.start.setdefault(self.min_phase, t)

    def intervals(self) -> List[Tuple[int, int, int]]:
        """(phase id, D_start, D_end) for every phase that both started and ended."""
        return [(p, self.start[p], self.end[p]) for p in sorted(self.start) if p in self.end]


class LeaderCountMonitor(SimulationObserver):
    """
    Track the number of leader contenders over a run.

    ``grew`` records a contender appearing outside a junta reinitialisation,
    which the elections never do.
    """

    name = "leader-count"

    def __init__(self) -> None:
        self.count = 0
        self.min_count: Optional[int] = None
        self.zero_leader_steps = 0
        self.first_done1_t: Optional[int] = None
        self.leaders_at_first_done1: Optional[int] = None
        self.grew = False

    def on_run_start(self, sim: 'Simulation') -> None:
        self.count = sum(1 for a in sim.config.agents if a.is_leader)
        self.min_count = self.count

    def on_step(self, sim: 'Simulation', i: int, j: int, before_u: Any, before_v: Any) -> None:
        agents = sim.config.agents
        delta = 0
        for before, index in ((before_u, i), (before_v, j)):
            delta += int(agents[index].is_leader) - int(before.is_leader)
            if self.first_done1_t is None and agents[index].done1 and not before.done1:
                self.first_done1_t = sim.t
        if delta > 0 and before_u.junta.level == before_v.junta.level:
            self.grew = True
        self.count += delta
        if self.min_count is None or self.count < self.min_count:
            self.min_count = self.count
        if self.count == 0:
            self.zero_leader_steps += 1
        if self.first_done1_t == sim.t and self.leaders_at_first_done1 is None:
            self.leaders_at_first_done1 = self.count


class TraceWriter(SimulationObserver):
    """Write one NDJSON record per interaction with the changed fields."""

    name = "trace"

    def __init__(self, path: str):
        self.path = path
        self._handle: Optional[IO[str]] = None

    def on_run_start(self, sim: 'Simulation') -> None:
        if sim.n > TRACE_MAX_AGENTS:
            raise ConfigurationError(
                f"Tracing is limited to populations of at most {TRACE_MAX_AGENTS} agents")
        self._handle = open(self.path, 'w', encoding='utf-8')
        logger.info("Writing interaction trace to %s", self.path)

    @staticmethod
    def _changes(before: Any, after: Any) -> Dict[str, int]:
        old = dict(flatten_state(before))
        return {name: value for name, value in flatten_state(after) if old.get(name) != value}

    def on_step(self, sim: 'Simulation', i: int, j: int, before_u: Any, before_v: Any) -> None:
        if self._handle is None:
            return
        agents = sim.config.agents
        record = {
            't': sim.t,
            'initiator': i,
            'responder': j,
            'changed_fields': {
                'initiator': self._changes(before_u, agents[i]),
                'responder': self._changes(before_v, agents[j]),
            },
        }
        self._handle.write(json.dumps(record, sort_keys=True) + "\n")

    def on_run_complete(self, sim: 'Simulation', metrics: 'RunMetrics') -> None:
        self.close()

    def close(self) -> None:
        if self._handle is not None:
            self._handle.close()
            self._handle = None
