"""
Configuration Management
=======================

Protocol profiles, run limits and experiment specifications.

An experiment lives in one YAML file of flat keys plus lists; command-line
flags override file values. Profiles bundle every protocol constant so that a
run is fully described by (protocol, n, seed, profile, overrides, limits).
"""

import logging
import math
import os
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import yaml

logger = logging.getLogger('PopulationCounting.config')

WORKERS_ENV = 'POPCOUNT_WORKERS'

# Cap for protocols without a phase-based interaction budget
DEFAULT_MAX_INTERACTIONS = 50_000_000


class ConfigurationError(ValueError):
    """Raised for invalid experiments before any run starts."""


@dataclass(frozen=True)
class ProfileConfig:
    """Constants shared by all protocols of one run."""

    name: str = "desk"

    # Phase clock
    clock_c: int = 20
    clock_modulus: Optional[int] = None  # None means 60 * clock_c
    phase_cap: int = 1 << 16

    # Leader election
    level_offset: int = 0
    terminal_phase: int = 16
    bit_budget: Optional[int] = None  # None means max(1, 2 ** (level - offset))
    outer_modulus: int = 60

    # Refinement constant exponent (2 ** 8 tokens per approximated agent)
    refine_shift: int = 8

    # Randomness and junta
    coin_mode: str = "rng"  # rng, synthetic
    junta_symmetric: bool = True

    # Empirical stabilisation window is probe_factor * n * ln n
    probe_factor: float = 10.0

    @property
    def modulus(self) -> int:
        """Clock modulus m."""
        return self.clock_modulus if self.clock_modulus else 60 * self.clock_c

    def exponent(self, level: int) -> int:
        """Load explosion exponent e = max(1, 2 ** (level - offset))."""
        shift = level - self.level_offset
        return 1 << shift if shift > 0 else 1

    def budget(self, level: int) -> int:
        """Number of random bits a fast-election contender draws per round."""
        if self.bit_budget is not None:
            return self.bit_budget
        return self.exponent(level)

    def validate(self) -> None:
        """Check value ranges."""
        if self.clock_c < 1:
            raise ConfigurationError("clock_c must be at least 1")
        if self.modulus < 2:
            raise ConfigurationError("clock modulus must be at least 2")
        if self.terminal_phase < 1 or self.outer_modulus < 1:
            raise ConfigurationError("terminal_phase and outer_modulus must be positive")
        if self.bit_budget is not None and self.bit_budget < 1:
            raise ConfigurationError("bit_budget must be positive")
        if self.phase_cap < self.terminal_phase:
            raise ConfigurationError("phase_cap must not be below terminal_phase")
        if self.coin_mode not in ("rng", "synthetic"):
            raise ConfigurationError(f"Unknown coin mode: {self.coin_mode}")
        if self.probe_factor < 0:
            raise ConfigurationError("probe_factor must be non-negative")


PROFILES: Dict[str, ProfileConfig] = {
    "asymptotic": ProfileConfig(name="asymptotic", level_offset=8, terminal_phase=1 << 13),
    "desk": ProfileConfig(name="desk"),
    "smoke": ProfileConfig(name="smoke", clock_c=4, terminal_phase=8, outer_modulus=16),
}

# Alternative names accepted wherever a profile name is read
PROFILE_ALIASES: Dict[str, str] = {
    "paper": "asymptotic",
}

OVERRIDE_KEYS = tuple(f.name for f in fields(ProfileConfig) if f.name != "name")


def _parse_value(key: str, raw: Any) -> Any:
    """Parse an override value to the type of the profile field."""
    if not isinstance(raw, str):
        return raw
    text = raw.strip()
    if key in ("coin_mode",):
        return text
    if key == "junta_symmetric":
        lowered = text.lower()
        if lowered in ("1", "true", "yes", "on"):
            return True
        if lowered in ("0", "false", "no", "off"):
            return False
        raise ConfigurationError(f"Invalid boolean for {key}: {raw}")
    if key in ("clock_modulus", "bit_budget") and text.lower() in ("none", "auto", ""):
        return None
    try:
        return float(text) if key == "probe_factor" else int(text)
    except ValueError:
        raise ConfigurationError(f"Invalid value for {key}: {raw}") from None


def resolve_profile(name: str, overrides: Optional[Mapping[str, Any]] = None) -> ProfileConfig:
    """
    Build a profile from its name and override map.

    Args:
        name: Profile name (asymptotic, desk, smoke) or an alias
        overrides: Field name to value (strings are parsed)

    Returns:
        Validated ProfileConfig
    """
    name = PROFILE_ALIASES.get(name, name)
    if name not in PROFILES:
        raise ConfigurationError(f"Unknown profile: {name}")

    values: Dict[str, Any] = {}
    for key, raw in (overrides or {}).items():
        if key not in OVERRIDE_KEYS:
            raise ConfigurationError(f"Unknown override key: {key}")
        values[key] = _parse_value(key, raw)

    profile = replace(PROFILES[name], **values)
    profile.validate()
    return profile


def parse_override(text: str) -> Tuple[str, str]:
    """Split a ``key=value`` override."""
    if '=' not in text:
        raise ConfigurationError(f"Override must look like key=value: {text}")
    key, value = text.split('=', 1)
    return key.strip(), value.strip()


@dataclass(frozen=True)
class RunLimits:
    """
    Limits of a single run.

    Attributes:
        max_interactions: Hard stop for the simulation loop (None derives it
            from the protocol's interaction budget for the population size)
        stabilization_probe_window: Interactions without output change needed
            after the stability predicate first holds (None derives it from
            ``probe_factor``)
    """
    max_interactions: Optional[int] = None
    stabilization_probe_window: Optional[int] = None

    def __post_init__(self) -> None:
        if self.max_interactions is not None and self.max_interactions < 1:
            raise ConfigurationError("max_interactions must be at least 1")
        if self.stabilization_probe_window is not None and self.stabilization_probe_window < 0:
            raise ConfigurationError("stabilization_probe_window must be non-negative")

    def interaction_limit(self, budget: Optional[int] = None) -> int:
        """
        Hard stop for one run.

        Args:
            budget: Protocol-derived budget for the run's population size

        Returns:
            The explicit limit, else the budget, else DEFAULT_MAX_INTERACTIONS
        """
        if self.max_interactions is not None:
            return self.max_interactions
        return budget if budget is not None else DEFAULT_MAX_INTERACTIONS

    def probe_window(self, n: int, probe_factor: float = 10.0) -> int:
        """Probe window for population size n."""
        if self.stabilization_probe_window is not None:
            return self.stabilization_probe_window
        return int(math.ceil(probe_factor * n * math.log(n)))


@dataclass
class ExperimentSpec:
    """A sweep over population sizes and seeds for one protocol."""

    protocol: str = "approximate"
    n_values: List[int] = field(default_factory=lambda: [256])
    seeds: Union[int, List[int]] = 5
    profile: str = "desk"
    limits: RunLimits = field(default_factory=RunLimits)
    overrides: Dict[str, Any] = field(default_factory=dict)
    fault: Optional[str] = None
    outputs: List[Tuple[str, str]] = field(default_factory=list)
    trace: Optional[str] = None

    @property
    def seed_list(self) -> List[int]:
        """Explicit seed values."""
        if isinstance(self.seeds, int):
            return list(range(self.seeds))
        return list(self.seeds)

    def resolved_profile(self) -> ProfileConfig:
        return resolve_profile(self.profile, self.overrides)

    def validate(self) -> None:
        """Check everything that can be checked without running."""
        from protocols.suite_base import get_protocol_registry, parse_fault

        if not self.n_values:
            raise ConfigurationError("At least one population size is required")
        for n in self.n_values:
            if n < 2:
                raise ConfigurationError(f"Population size must be at least 2, got {n}")
        if not self.seed_list:
            raise ConfigurationError("At least one seed is required")
        registry = get_protocol_registry()
        profile = self.resolved_profile()
        fault = parse_fault(self.fault) if self.fault else None
        registry.create(self.protocol, profile, fault)
        for fmt, _ in self.outputs:
            if fmt not in ("csv", "json", "html"):
                raise ConfigurationError(f"Unknown output format: {fmt}")


def output_format(path: str) -> str:
    """Infer an output format from a file suffix."""
    suffix = Path(path).suffix.lower().lstrip('.')
    if suffix in ("csv", "json", "html"):
        return suffix
    if suffix == "htm":
        return "html"
    raise ConfigurationError(f"Cannot infer output format from {path}")


class ConfigManager:
    """Loads and saves experiment files."""

    def __init__(self, config_dir: Optional[str] = None):
        """
        Initialize configuration manager.

        Args:
            config_dir: Directory searched for relative experiment files
                (None for the current directory)
        """
        self.config_dir = Path(config_dir) if config_dir else Path.cwd()

    def _path(self, path: str) -> Path:
        candidate = Path(path)
        if not candidate.is_absolute():
            candidate = self.config_dir / candidate
        return candidate

    def load_experiment(self, path: str) -> ExperimentSpec:
        """
        Load an experiment from a YAML file.

        Args:
            path: Experiment file

        Returns:
            ExperimentSpec with file values applied to the defaults
        """
        file_path = self._path(path)
        try:
            with open(file_path, 'r', encoding='utf-8') as f:
                data = yaml.safe_load(f) or {}
        except (OSError, yaml.YAMLError) as e:
            raise ConfigurationError(f"Cannot read experiment file {file_path}: {e}") from e

        if not isinstance(data, dict):
            raise ConfigurationError(f"Experiment file {file_path} must hold a mapping")

        logger.debug("Loaded experiment file %s", file_path)
        return self.spec_from_dict(data)

    def spec_from_dict(self, data: Mapping[str, Any]) -> ExperimentSpec:
        """Build an ExperimentSpec from flat keys."""
        spec = ExperimentSpec()
        known = {'protocol', 'n', 'seeds', 'seed', 'profile', 'max_interactions',
                 'probe_window', 'overrides', 'fault', 'out', 'trace'}
        unknown = set(data) - known
        if unknown:
            raise ConfigurationError(f"Unknown experiment keys: {', '.join(sorted(unknown))}")

        if 'protocol' in data:
            spec.protocol = str(data['protocol'])
        if 'n' in data:
            n = data['n']
            spec.n_values = [int(x) for x in n] if isinstance(n, list) else [int(n)]
        if 'seeds' in data:
            seeds = data['seeds']
            spec.seeds = [int(s) for s in seeds] if isinstance(seeds, list) else int(seeds)
        if 'seed' in data:
            spec.seeds = [int(data['seed'])]
        if 'profile' in data:
            spec.profile = str(data['profile'])
        if 'max_interactions' in data or 'probe_window' in data:
            spec.limits = RunLimits(
                max_interactions=(int(data['max_interactions'])
                                  if data.get('max_interactions') is not None else None),
                stabilization_probe_window=(int(data['probe_window'])
                                            if data.get('probe_window') is not None else None),
            )
        if 'overrides' in data:
            overrides = data['overrides'] or {}
            if not isinstance(overrides, dict):
                raise ConfigurationError("overrides must be a mapping")
            spec.overrides = dict(overrides)
        if data.get('fault'):
            spec.fault = str(data['fault'])
        if 'out' in data:
            outs = data['out']
            outs = outs if isinstance(outs, list) else [outs]
            spec.outputs = [(output_format(str(p)), str(p)) for p in outs]
        if data.get('trace'):
            spec.trace = str(data['trace'])
        return spec

    def save_experiment(self, spec: ExperimentSpec, path: str) -> None:
        """
        Write an experiment file that reloads to the same spec.

        Args:
            spec: Experiment to save
            path: Target file
        """
        data: Dict[str, Any] = {
            'protocol': spec.protocol,
            'n': list(spec.n_values),
            'seeds': spec.seeds,
            'profile': spec.profile,
            'overrides': dict(spec.overrides),
        }
        if spec.limits.max_interactions is not None:
            data['max_interactions'] = spec.limits.max_interactions
        if spec.limits.stabilization_probe_window is not None:
            data['probe_window'] = spec.limits.stabilization_probe_window
        if spec.fault:
            data['fault'] = spec.fault
        if spec.outputs:
            data['out'] = [p for _, p in spec.outputs]
        if spec.trace:
            data['trace'] = spec.trace

        file_path = self._path(path)
        try:
            with open(file_path, 'w', encoding='utf-8') as f:
                yaml.safe_dump(data, f, default_flow_style=False, sort_keys=False)
        except OSError as e:
            raise ConfigurationError(f"Cannot write experiment file {file_path}: {e}") from e

    def profile_table(self) -> List[Dict[str, Any]]:
        """Describe all built-in profiles."""
        return [dict(asdict(p), modulus=p.modulus) for p in PROFILES.values()]


def worker_count(default: int = 1) -> int:
    """Number of sweep worker processes from the environment."""
    raw = os.getenv(WORKERS_ENV)
    if not raw:
        return default
    try:
        return max(1, int(raw))
    except ValueError:
        raise ConfigurationError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from None


def merge_cli(spec: ExperimentSpec, *, protocol: Optional[str] = None,
              n_values: Optional[Sequence[int]] = None,
              seeds: Optional[int] = None, seed: Optional[int] = None,
              profile: Optional[str] = None, max_interactions: Optional[int] = None,
              overrides: Optional[Sequence[str]] = None, fault: Optional[str] = None,
              outputs: Optional[Sequence[str]] = None,
              trace: Optional[str] = None) -> ExperimentSpec:
    """
    Apply command-line values on top of a spec.

    Returns:
        The same spec, updated in place
    """
    if protocol:
        spec.protocol = protocol
    if n_values:
        spec.n_values = list(n_values)
    if seeds is not None:
        spec.seeds = seeds
    if seed is not None:
        spec.seeds = [seed]
    if profile:
        spec.profile = profile
    if max_interactions is not None:
        spec.limits = RunLimits(max_interactions=max_interactions,
                                stabilization_probe_window=spec.limits.stabilization_probe_window)
    for item in overrides or ():
        key, value = parse_override(item)
        spec.overrides[key] = value
    if fault:
        spec.fault = fault
    if outputs:
        spec.outputs = [(output_format(p), p) for p in outputs]
    if trace:
        spec.trace = trace
    return spec


# Global config manager instance
_config_manager: Optional[ConfigManager] = None


def get_config_manager() -> ConfigManager:
    """
    Get global configuration manager instance.

    Returns:
        ConfigManager instance
    """
    global _config_manager
    if _config_manager is None:
        _config_manager = ConfigManager()
    return _config_manager
