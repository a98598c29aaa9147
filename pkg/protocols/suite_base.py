"""
Protocol Suite Base
===================

Contract shared by all protocols, fault injection, and the protocol registry.

To add a protocol:
1. Inherit from ProtocolSuite
2. Set a unique ``name`` and implement the abstract methods
3. Place the module in the protocols/ directory
4. The registry discovers it by name
"""

import importlib
import inspect
import logging
import re
from abc import ABC, abstractmethod
from dataclasses import dataclass
from pathlib import Path
from typing import (TYPE_CHECKING, Any, Dict, FrozenSet, List, Optional, Sequence,
                    Tuple, Type)

from config import PROFILES, ConfigurationError, ProfileConfig
from utils.helpers import ceil_log2

if TYPE_CHECKING:
    from core.engine import CoinSource, Configuration

logger = logging.getLogger('PopulationCounting.protocols')

FAULT_BOUNDARIES = ("pre-errordetect", "pre-refine", "post-election")

_FAULT_PATTERN = re.compile(
    r'^(?:corrupt-k:(?P<delta>[+-]?\d+)@(?P<kboundary>pre-errordetect|pre-refine)'
    r'|dup-leader@(?P<lboundary>post-election))$'
)


@dataclass
class FaultInjector:
    """
    One-shot fault applied at a stage boundary.

    Attributes:
        kind: ``corrupt-k`` or ``dup-leader``
        boundary: Stage boundary at which the fault fires
        delta: Added to the leader's k (corrupt-k only)
        fired: Set once the fault was applied
    """
    kind: str
    boundary: str
    delta: int = 0
    fired: bool = False

    @property
    def descriptor(self) -> str:
        if self.kind == "corrupt-k":
            return f"corrupt-k:{self.delta}@{self.boundary}"
        return f"dup-leader@{self.boundary}"

    def corrupt_k(self, boundary: str, k: int) -> int:
        """Return the leader's k, shifted if this fault is due here."""
        if self.fired or self.kind != "corrupt-k" or self.boundary != boundary:
            return k
        self.fired = True
        corrupted = max(-1, k + self.delta)
        logger.info("Fault %s: leader k %d -> %d", self.descriptor, k, corrupted)
        return corrupted

    def duplicate_leader(self, boundary: str) -> bool:
        """Whether a second leader should be planted here."""
        if self.fired or self.kind != "dup-leader" or self.boundary != boundary:
            return False
        self.fired = True
        logger.info("Fault %s: planting a second leader", self.descriptor)
        return True


def parse_fault(text: str) -> FaultInjector:
    """
    Parse a fault descriptor.

    Args:
        text: ``corrupt-k:<delta>@pre-errordetect``,
            ``corrupt-k:<delta>@pre-refine`` or ``dup-leader@post-election``

    Returns:
        Fresh FaultInjector
    """
    match = _FAULT_PATTERN.match(text.strip())
    if not match:
        raise ConfigurationError(f"Invalid fault descriptor: {text}")
    if match.group('lboundary'):
        return FaultInjector(kind="dup-leader", boundary=match.group('lboundary'))
    return FaultInjector(kind="corrupt-k", boundary=match.group('kboundary'),
                         delta=int(match.group('delta')))


def backup_budget(n: int) -> int:
    """Interactions granted to a backup protocol that merges n pieces pairwise."""
    return 16 * n * n * (ceil_log2(n) + 1)


class ProtocolSuite(ABC):
    """
    Base class for all protocols.

    A suite bundles the transition function, the output function, a
    stability predicate and the ground truth for a population size. The
    transition function never reads n.
    """

    # Protocol metadata (override in subclass)
    name: str = "unnamed"
    description: str = "No description"
    tracks_phases: bool = False
    fault_boundaries: Tuple[str, ...] = ()

    def __init__(self, profile: Optional[ProfileConfig] = None,
                 fault: Optional[FaultInjector] = None):
        """
        Initialize suite.

        Args:
            profile: Protocol constants (desk profile if None)
            fault: Optional one-shot fault
        """
        self.profile = profile or PROFILES['desk']
        if fault is not None and fault.boundary not in self.fault_boundaries:
            raise ConfigurationError(
                f"Protocol {self.name} has no stage boundary {fault.boundary}")
        self.fault = fault

    @property
    def coin_mode(self) -> str:
        return self.profile.coin_mode

    @property
    def probe_factor(self) -> float:
        return self.profile.probe_factor

    @abstractmethod
    def initial_configuration(self, n: int) -> List[Any]:
        """Initial agent states of a population of size n."""

    @abstractmethod
    def delta(self, u: Any, v: Any, coins: 'CoinSource') -> Tuple[Any, Any]:
        """
        Transition function.

        Args:
            u: Initiator state
            v: Responder state
            coins: Source of random bits

        Returns:
            New (initiator, responder) states
        """

    @abstractmethod
    def output(self, state: Any) -> Any:
        """Output function of a single agent."""

    @abstractmethod
    def is_stable(self, config: 'Configuration') -> bool:
        """Whether no continuation can change any output."""

    def ground_truth(self, n: int) -> Optional[FrozenSet[Any]]:
        """
        Acceptable outputs for population size n.

        Returns:
            Set of correct values, or None if outputs are not checked
        """
        return None

    def tolerance(self, n: int) -> int:
        """Number of agents allowed to output a wrong value."""
        return 0

    def outputs_correct(self, outputs: Sequence[Any], n: int) -> bool:
        """Check an output vector against the ground truth."""
        truth = self.ground_truth(n)
        if truth is None:
            return True
        wrong = sum(1 for value in outputs if value not in truth)
        return wrong <= self.tolerance(n)

    def phase_of(self, state: Any) -> Optional[int]:
        """Exact phase counter of a state, if the protocol has a clock."""
        return None

    def phase_budget(self, n: int) -> Optional[int]:
        """Clock phases a run of size n needs at most (None without a clock)."""
        return None

    def interaction_budget(self, n: int) -> Optional[int]:
        """
        Default interaction limit for population size n.

        A phase is charged ``2 * modulus * n * (ceil(log2 n) + 1)``
        interactions; measured phases take about ``modulus * n``.

        Returns:
            Interaction count, or None to use the global default
        """
        phases = self.phase_budget(n)
        if phases is None:
            return None
        return 2 * phases * self.profile.modulus * n * (ceil_log2(n) + 1)

    def error_raised(self, config: 'Configuration') -> bool:
        """Whether any agent carries the error flag."""
        return False

    def summarize(self, config: 'Configuration', outputs: Sequence[Any]) -> Dict[str, Any]:
        """Protocol-specific values reported with run metrics."""
        return {}


class ProtocolRegistry:
    """
    Discovers protocol suites and creates fresh instances by name.
    """

    def __init__(self, protocols_dir: Optional[str] = None):
        """
        Initialize registry.

        Args:
            protocols_dir: Directory containing protocol modules (None for default)
        """
        self.protocols_dir = Path(protocols_dir) if protocols_dir else Path(__file__).parent
        self.suites: Dict[str, Type[ProtocolSuite]] = {}
        self.load_all_protocols()

    def load_all_protocols(self) -> None:
        """Import every protocol module and register its suites."""
        for file_path in sorted(self.protocols_dir.glob("*.py")):
            if file_path.stem.startswith("_") or file_path.stem == "suite_base":
                continue
            self.load_module(file_path.stem)

    def load_module(self, module_name: str) -> int:
        """
        Register all concrete suites of one module.

        Args:
            module_name: Module name inside the protocols package

        Returns:
            Number of suites registered
        """
        module = importlib.import_module(f"protocols.{module_name}")
        registered = 0
        for _, attr in inspect.getmembers(module, inspect.isclass):
            if (issubclass(attr, ProtocolSuite) and attr is not ProtocolSuite
                    and not inspect.isabstract(attr) and attr.name != "unnamed"):
                self.register(attr)
                registered += 1
        return registered

    def register(self, suite_class: Type[ProtocolSuite]) -> None:
        existing = self.suites.get(suite_class.name)
        if existing is not None and existing is not suite_class:
            raise ConfigurationError(f"Duplicate protocol name: {suite_class.name}")
        self.suites[suite_class.name] = suite_class
        logger.debug("Registered protocol %s", suite_class.name)

    def get_class(self, name: str) -> Type[ProtocolSuite]:
        """
        Look up a suite class.

        Raises:
            ConfigurationError: For unknown names
        """
        try:
            return self.suites[name]
        except KeyError:
            known = ', '.join(sorted(self.suites))
            raise ConfigurationError(f"Unknown protocol: {name} (known: {known})") from None

    def create(self, name: str, profile: Optional[ProfileConfig] = None,
               fault: Optional[FaultInjector] = None) -> ProtocolSuite:
        """Fresh suite instance for one run."""
        return self.get_class(name)(profile=profile, fault=fault)

    def list_protocols(self) -> List[Dict[str, str]]:
        """
        List all registered protocols.

        Returns:
            List of protocol info dictionaries
        """
        return [
            {
                'name': cls.name,
                'description': cls.description,
                'faults': ', '.join(cls.fault_boundaries) or '-',
            }
            for _, cls in sorted(self.suites.items())
        ]


# Global protocol registry instance
_registry: Optional[ProtocolRegistry] = None


def get_protocol_registry() -> ProtocolRegistry:
    """
    Get global protocol registry instance.

    Returns:
        ProtocolRegistry instance
    """
    global _registry
    if _registry is None:
        _registry = ProtocolRegistry()
    return _registry
