"""
Simulation Engine
=================

Uniform random pairwise scheduler, simulation loop and run metrics.

Model Overview:
---------------
A configuration is a fixed-length sequence of agent states plus an interaction
counter ``t``. Each step the scheduler picks an ordered pair (initiator,
responder) uniformly among the n(n-1) pairs of distinct agents, the protocol's
transition function maps the two states to two new states, and ``t`` grows by
one. Nothing else changes.

Randomness:
-----------
Every run owns two streams derived from ``SeedSequence([seed, run_id])``: one
for the scheduler and one for protocol coins. Both use numpy's ``Philox``
counter-based bit generator, so a (protocol, n, seed, profile, limits) cell
replays bit-exactly.

Convergence and stabilisation:
------------------------------
Outputs are recomputed for the two touched agents only. The convergence index
is the interaction of the last output change of a run that ends correct. The
run stops once the protocol's stability predicate holds with all outputs
correct and no output changes during a quiet window afterwards; the first
interaction at which the predicate held is the stabilisation index.
"""

import hashlib
import logging
import math
from dataclasses import dataclass, field
from typing import (TYPE_CHECKING, Any, Callable, Dict, Iterable, List, Optional,
                    Sequence, Tuple)

import numpy as np

from config import ConfigurationError, RunLimits
from core.primitives import synthetic_coin
from core.state import CoinState, flatten_state

if TYPE_CHECKING:
    from core.observers import SimulationObserver
    from protocols.suite_base import ProtocolSuite

logger = logging.getLogger('PopulationCounting.engine')

LOAD_LIMIT = 1 << 127

_BLOCK = 4096

# Distinct states remembered per run before the count saturates
STATE_USAGE_CAP = 1 << 16


class LoadOverflowError(OverflowError):
    """A token count left the supported 128-bit range."""


def check_load(value: int) -> int:
    """
    Return ``value`` unchanged if it fits the load width.

    Raises:
        LoadOverflowError: If the value reaches 2 ** 127
    """
    if value >= LOAD_LIMIT:
        raise LoadOverflowError(f"Token count {value} exceeds the 128-bit load limit")
    return value


def make_generator(seed_seq: np.random.SeedSequence) -> np.random.Generator:
    """Philox-backed generator for one stream."""
    return np.random.Generator(np.random.Philox(seed_seq))


def run_streams(seed: int, run_id: int = 0) -> Tuple[np.random.Generator, np.random.Generator]:
    """
    Derive the scheduler and coin streams of a run.

    Args:
        seed: Experiment seed
        run_id: Identifier separating runs that share a seed

    Returns:
        (scheduler generator, coin generator)
    """
    scheduler_seq, coin_seq = np.random.SeedSequence([seed, run_id]).spawn(2)
    return make_generator(scheduler_seq), make_generator(coin_seq)


@dataclass
class Configuration:
    """Agent states and interaction counter."""
    agents: List[Any]
    t: int = 0

    @property
    def n(self) -> int:
        return len(self.agents)

    def __post_init__(self) -> None:
        if len(self.agents) < 2:
            raise ConfigurationError("A population needs at least two agents")


def schedule_step(config: Configuration, rng: np.random.Generator) -> Tuple[int, int]:
    """
    Pick one ordered pair of distinct agents uniformly at random.

    Args:
        config: Current configuration (only its size is read)
        rng: Scheduler stream

    Returns:
        (initiator index, responder index)
    """
    n = config.n
    if n < 2:
        raise ConfigurationError("Scheduling needs at least two agents")
    i = int(rng.integers(n))
    j = int(rng.integers(n - 1))
    return i, (j + 1 if j >= i else j)


class PairScheduler:
    """Block-buffered version of ``schedule_step`` for the simulation loop."""

    def __init__(self, n: int, rng: np.random.Generator, block: int = _BLOCK):
        if n < 2:
            raise ConfigurationError("Scheduling needs at least two agents")
        self.n = n
        self.rng = rng
        self.block = block
        self._pairs: List[Tuple[int, int]] = []
        self._pos = 0

    def _refill(self) -> None:
        initiators = self.rng.integers(self.n, size=self.block)
        responders = self.rng.integers(self.n - 1, size=self.block)
        responders = responders + (responders >= initiators)
        self._pairs = list(zip(initiators.tolist(), responders.tolist()))
        self._pos = 0

    def next_pair(self) -> Tuple[int, int]:
        if self._pos >= len(self._pairs):
            self._refill()
        pair = self._pairs[self._pos]
        self._pos += 1
        return pair


class CoinSource:
    """
    Random bits for protocol transitions.

    In ``rng`` mode bits come from the run's coin stream; in ``synthetic`` mode
    the partner's parity bit is read instead.
    """

    def __init__(self, rng: np.random.Generator, mode: str = "rng", block: int = _BLOCK):
        self.rng = rng
        self.mode = mode
        self.block = block
        self._bits: List[int] = []
        self._pos = 0
        self.draws = 0

    def draw(self, partner: Optional[CoinState] = None) -> int:
        """
        Draw one bit.

        Args:
            partner: Coin state of the interaction partner (synthetic mode)

        Returns:
            0 or 1
        """
        self.draws += 1
        if self.mode == "synthetic" and partner is not None:
            bit, _ = synthetic_coin(partner)
            return bit
        if self._pos >= len(self._bits):
            self._bits = self.rng.integers(2, size=self.block).tolist()
            self._pos = 0
        bit = self._bits[self._pos]
        self._pos += 1
        return bit


@dataclass
class StateUsageReport:
    """
    Observed variable ranges and composite state count.

    ``saturated`` means the tracker stopped remembering states at its cap, so
    ``distinct_composite_states`` is a lower bound.
    """
    ranges: Dict[str, Tuple[int, int]] = field(default_factory=dict)
    distinct_composite_states: int = 0
    saturated: bool = False

    @property
    def product_of_ranges(self) -> int:
        product = 1
        for low, high in self.ranges.values():
            product *= high - low + 1
        return product

    def to_dict(self) -> Dict[str, Any]:
        return {
            'ranges': {k: list(v) for k, v in sorted(self.ranges.items())},
            'distinct_composite_states': self.distinct_composite_states,
            'saturated': self.saturated,
            'product_of_ranges': self.product_of_ranges,
        }


class StateUsageTracker:
    """
    Incremental range and distinct-state bookkeeping.

    At most ``cap`` distinct states are remembered. Past the cap the count
    stays at ``cap`` (reported as saturated) while variable ranges keep
    widening for every state recorded.
    """

    def __init__(self, cap: int = STATE_USAGE_CAP) -> None:
        self.cap = cap
        self.ranges: Dict[str, List[int]] = {}
        self.seen: set = set()
        self.saturated = False

    def record(self, state: Any) -> None:
        if state in self.seen:
            return
        if len(self.seen) < self.cap:
            self.seen.add(state)
        else:
            self.saturated = True
        for name, value in flatten_state(state):
            bounds = self.ranges.get(name)
            if bounds is None:
                self.ranges[name] = [value, value]
            elif value < bounds[0]:
                bounds[0] = value
            elif value > bounds[1]:
                bounds[1] = value

    def record_all(self, states: Iterable[Any]) -> None:
        for state in states:
            self.record(state)

    def report(self) -> StateUsageReport:
        return StateUsageReport(
            ranges={k: (v[0], v[1]) for k, v in self.ranges.items()},
            distinct_composite_states=len(self.seen),
            saturated=self.saturated,
        )


def measure_state_usage(trace: Iterable[Sequence[Any]]) -> StateUsageReport:
    """
    Summarise the states seen in a sequence of configurations.

    Args:
        trace: Recorded configurations (each a sequence of agent states)

    Returns:
        StateUsageReport over all agents of all configurations

    Raises:
        ValueError: If the trace is empty
    """
    tracker = StateUsageTracker()
    recorded = 0
    for configuration in trace:
        tracker.record_all(configuration)
        recorded += 1
    if recorded == 0:
        raise ValueError("measure_state_usage needs at least one configuration")
    return tracker.report()


@dataclass
class RunMetrics:
    """Outcome of one run."""
    protocol: str
    n: int
    seed: int
    profile: str = ""
    t_convergence: Optional[int] = None
    t_stabilization: Optional[int] = None
    correct: bool = False
    interactions: int = 0
    state_usage: StateUsageReport = field(default_factory=StateUsageReport)
    phase_intervals: List[Tuple[int, int, int]] = field(default_factory=list)
    output_history_digest: str = ""
    error_raised: bool = False
    aborted: Optional[str] = None
    extra: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return {
            'protocol': self.protocol,
            'n': self.n,
            'seed': self.seed,
            'profile': self.profile,
            't_convergence': self.t_convergence,
            't_stabilization': self.t_stabilization,
            'correct': self.correct,
            'interactions': self.interactions,
            'state_usage': self.state_usage.to_dict(),
            'phase_intervals': [list(p) for p in self.phase_intervals],
            'output_history_digest': self.output_history_digest,
            'error_raised': self.error_raised,
            'aborted': self.aborted,
            'extra': dict(self.extra),
        }


class Simulation:
    """
    One run of a protocol on a population.

    The loop is strictly sequential; observers are notified after every step
    with the indices and pre-interaction states of the two participants.
    """

    def __init__(self, protocol: 'ProtocolSuite', n: int, seed: int,
                 limits: Optional[RunLimits] = None, run_id: int = 0,
                 observers: Sequence['SimulationObserver'] = ()):
        if n < 2:
            raise ConfigurationError(f"Population size must be at least 2, got {n}")
        self.protocol = protocol
        self.n = n
        self.seed = seed
        self.limits = limits or RunLimits()
        self.limit = self.limits.interaction_limit(protocol.interaction_budget(n))
        self.observers = list(observers)

        scheduler_rng, coin_rng = run_streams(seed, run_id)
        self.scheduler = PairScheduler(n, scheduler_rng)
        self.coins = CoinSource(coin_rng, protocol.coin_mode)

        self.config = Configuration(agents=list(protocol.initial_configuration(n)))
        self.outputs = [protocol.output(a) for a in self.config.agents]
        self.last_change = 0

        # Outputs outside the ground truth, kept up to date per step
        self.truth = protocol.ground_truth(n)
        self.tolerance = protocol.tolerance(n)
        self.wrong = (0 if self.truth is None
                      else sum(1 for value in self.outputs if value not in self.truth))

        self._digest = hashlib.sha256()
        for index, value in enumerate(self.outputs):
            self._digest.update(f"0:{index}:{value!r};".encode())

        self.full_capture = n <= 64
        self.usage = StateUsageTracker()
        self.usage.record_all(self.config.agents)

        for observer in self.observers:
            observer.on_run_start(self)

    @property
    def t(self) -> int:
        return self.config.t

    def step(self) -> Tuple[int, int]:
        """Execute one interaction and return the scheduled pair."""
        i, j = self.scheduler.next_pair()
        agents = self.config.agents
        u, v = agents[i], agents[j]
        new_u, new_v = self.protocol.delta(u, v, self.coins)
        agents[i] = new_u
        agents[j] = new_v
        self.config.t += 1
        t = self.config.t

        output = self.protocol.output
        outputs = self.outputs
        truth = self.truth
        for index, state in ((i, new_u), (j, new_v)):
            value = output(state)
            old = outputs[index]
            if value != old:
                outputs[index] = value
                self.last_change = t
                if truth is not None:
                    self.wrong += (value not in truth) - (old not in truth)
                self._digest.update(f"{t}:{index}:{value!r};".encode())

        if self.full_capture and not self.usage.saturated:
            self.usage.record(new_u)
            self.usage.record(new_v)
        elif t % self.n == 0:
            self.usage.record_all(agents)

        for observer in self.observers:
            observer.on_step(self, i, j, u, v)
        return i, j

    def run_for(self, steps: int) -> None:
        """Execute a fixed number of interactions."""
        for _ in range(steps):
            self.step()

    def run_until(self, predicate: Callable[['Simulation'], bool],
                  max_interactions: Optional[int] = None,
                  check_every: int = 1) -> Optional[int]:
        """
        Step until ``predicate`` holds.

        Args:
            predicate: Checked on the simulation
            max_interactions: Stop here (the run's own limit if None)
            check_every: Evaluate the predicate every this many interactions

        Returns:
            Interaction index at which it first held, or None
        """
        limit = self.limit if max_interactions is None else max_interactions
        if predicate(self):
            return self.t
        while self.t < limit:
            self.step()
            if self.t % check_every == 0 and predicate(self):
                return self.t
        return None

    def outputs_correct(self) -> bool:
        return self.wrong <= self.tolerance

    def _settled(self) -> bool:
        return self.wrong <= self.tolerance and self.protocol.is_stable(self.config)

    def run(self) -> RunMetrics:
        """
        Run until empirical stabilisation or the interaction limit.

        The stability predicate costs O(n), so it is evaluated only after an
        output change and once every n interactions; the stabilisation index
        is exact when the last output change settles the run and otherwise
        resolved to n interactions.

        Returns:
            RunMetrics of the run
        """
        n = self.n
        limit = self.limit
        window = self.limits.probe_window(n, self.protocol.probe_factor)
        stable_at: Optional[int] = None
        stabilized = False

        logger.debug("Run %s n=%d seed=%d limit=%d window=%d",
                     self.protocol.name, n, self.seed, limit, window)

        if self._settled():
            stable_at = 0
            stabilized = window == 0

        step = self.step
        while not stabilized and self.config.t < limit:
            step()
            t = self.config.t
            if stable_at is not None:
                if self.last_change <= stable_at:
                    stabilized = t - stable_at >= window
                    continue
                stable_at = None
            if (self.last_change == t or t % n == 0) and self._settled():
                stable_at = t
                stabilized = window == 0

        metrics = self._metrics(stabilized, stable_at)
        for observer in self.observers:
            observer.on_run_complete(self, metrics)
        logger.debug("Run %s n=%d seed=%d finished after %d interactions (correct=%s)",
                     self.protocol.name, n, self.seed, self.t, metrics.correct)
        return metrics

    def _metrics(self, stabilized: bool, stable_at: Optional[int]) -> RunMetrics:
        self.usage.record_all(self.config.agents)
        metrics = RunMetrics(
            protocol=self.protocol.name,
            n=self.n,
            seed=self.seed,
            profile=self.protocol.profile.name,
            interactions=self.t,
            state_usage=self.usage.report(),
            output_history_digest=self.digest(),
            error_raised=self.protocol.error_raised(self.config),
            extra=self.protocol.summarize(self.config, self.outputs),
        )
        if stabilized:
            metrics.correct = True
            metrics.t_stabilization = stable_at
            metrics.t_convergence = self.last_change
        for observer in self.observers:
            intervals = getattr(observer, 'intervals', None)
            if intervals is not None:
                metrics.phase_intervals = intervals()
        return metrics

    def digest(self) -> str:
        """Hex digest of the output history so far."""
        return self._digest.copy().hexdigest()


def run(protocol: 'ProtocolSuite', n: int, seed: int,
        limits: Optional[RunLimits] = None, run_id: int = 0,
        observers: Sequence['SimulationObserver'] = ()) -> RunMetrics:
    """
    Run a protocol to empirical stabilisation.

    Args:
        protocol: Protocol suite (fresh instance per run)
        n: Population size
        seed: Seed of the run
        limits: Run limits
        run_id: Stream separator for runs sharing a seed
        observers: Extra observers

    Returns:
        RunMetrics
    """
    from core.observers import PhaseIntervalRecorder

    extra: List['SimulationObserver'] = list(observers)
    if protocol.tracks_phases and not any(isinstance(o, PhaseIntervalRecorder) for o in extra):
        extra.append(PhaseIntervalRecorder())
    return Simulation(protocol, n, seed, limits, run_id, extra).run()


def n_log_n(n: int) -> float:
    """n * ln n."""
    return n * math.log(n)
