"""
Experiment Harness
==================

Turns an ExperimentSpec into independent (n, seed) cells, runs them
sequentially or in a process pool, and aggregates the results.

Cells are deterministic and independent: a cell's metrics depend only on
its own (protocol, n, seed, profile, overrides, limits, fault). Results are
sorted by (protocol, n, seed) before aggregation, so the order in which
workers finish never shows in the output.
"""

import logging
import multiprocessing
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

from config import ConfigurationError, ExperimentSpec, RunLimits, resolve_profile, worker_count
from core import engine
from core.engine import LoadOverflowError, RunMetrics
from core.observers import SimulationObserver, TraceWriter
from protocols.suite_base import get_protocol_registry, parse_fault
from utils.helpers import ProgressTracker, format_duration, fraction
from utils.statistics import COMPLEXITY_FORMS, ComplexityFit, fit_complexity, median, quantile

logger = logging.getLogger('PopulationCounting.harness')

# Claimed growth of the convergence time per protocol
CLAIMED_FORMS: Dict[str, str] = {
    'approximate': 'n log^2 n',
    'approximate-stable': 'n log^2 n',
    'approximate-stable-relaxed': 'n log^2 n',
    'backup-approx': 'n^2 log n',
    'count-exact': 'n log n',
    'count-exact-stable': 'n log n',
    'backup-exact': 'n^2 log n',
    'broadcast': 'n log n',
    'junta': 'n log n',
    'pow2-balance': 'n log n',
    'slow-leader': 'n log^2 n',
    'fast-leader': 'n log n',
}


def claimed_form(protocol: str) -> str:
    return CLAIMED_FORMS.get(protocol, 'n log n')


@dataclass(frozen=True)
class Cell:
    """One (n, seed) run of an experiment; picklable for worker processes."""
    protocol: str
    n: int
    seed: int
    profile: str = "desk"
    overrides: Tuple[Tuple[str, Any], ...] = ()
    limits: RunLimits = field(default_factory=RunLimits)
    fault: Optional[str] = None
    trace: Optional[str] = None


@dataclass
class Aggregate:
    """Per-n summary of the runs of one protocol."""
    protocol: str
    n: int
    runs: int
    success_rate: float
    median_tc: Optional[float]
    p95_tc: Optional[float]
    fitted_c: Optional[float]
    form: str
    max_distinct_states: int = 0
    errors_raised: int = 0
    aborted: int = 0

    def to_dict(self) -> Dict[str, Any]:
        return {
            'protocol': self.protocol,
            'n': self.n,
            'success_rate': self.success_rate,
            'median_tc': self.median_tc,
            'p95_tc': self.p95_tc,
            'fitted_c': self.fitted_c,
            'form': self.form,
        }


@dataclass
class ExperimentResult:
    """Runs of a sweep plus their aggregates."""
    protocol: str
    runs: List[RunMetrics] = field(default_factory=list)
    aggregates: List[Aggregate] = field(default_factory=list)
    fit: Optional[ComplexityFit] = None


def build_cells(spec: ExperimentSpec) -> List[Cell]:
    """Expand a spec into its cells, ordered by (n, seed)."""
    overrides = tuple(sorted(spec.overrides.items()))
    return [
        Cell(protocol=spec.protocol, n=n, seed=seed, profile=spec.profile,
             overrides=overrides, limits=spec.limits, fault=spec.fault, trace=spec.trace)
        for n in spec.n_values
        for seed in spec.seed_list
    ]


def run_cell(cell: Cell, observers: Sequence[SimulationObserver] = ()) -> RunMetrics:
    """
    Run one cell with a fresh protocol instance.

    A load overflow aborts the cell: it is logged and reported as an
    incorrect run with the diagnostic in ``aborted``.

    Args:
        cell: Cell to run
        observers: Extra observers (trace writer is added from the cell)

    Returns:
        RunMetrics of the cell
    """
    profile = resolve_profile(cell.profile, dict(cell.overrides))
    fault = parse_fault(cell.fault) if cell.fault else None
    protocol = get_protocol_registry().create(cell.protocol, profile, fault)

    extra = list(observers)
    if cell.trace:
        extra.append(TraceWriter(cell.trace))

    try:
        metrics = engine.run(protocol, cell.n, cell.seed, cell.limits, observers=extra)
    except LoadOverflowError as e:
        logger.error("Cell %s n=%d seed=%d aborted: %s", cell.protocol, cell.n, cell.seed, e)
        for observer in extra:
            if isinstance(observer, TraceWriter):
                observer.close()
        metrics = RunMetrics(protocol=cell.protocol, n=cell.n, seed=cell.seed,
                             profile=profile.name, aborted=str(e))

    if fault is not None:
        metrics.extra['fault'] = fault.descriptor
        metrics.extra['fault_fired'] = fault.fired
    if not metrics.correct and metrics.aborted is None:
        logger.warning("Cell %s n=%d seed=%d did not stabilise within %d interactions",
                       cell.protocol, cell.n, cell.seed, metrics.interactions)
    return metrics


def aggregate_runs(protocol: str, runs: Sequence[RunMetrics],
                   form: Optional[str] = None) -> Tuple[List[Aggregate], Optional[ComplexityFit]]:
    """
    Summarise runs per population size.

    Args:
        protocol: Protocol name
        runs: Runs of that protocol
        form: Complexity form (claimed form of the protocol if None)

    Returns:
        (per-n aggregates, least-squares fit over the per-n medians or None)
    """
    form = form or claimed_form(protocol)
    growth = COMPLEXITY_FORMS[form]
    by_n: Dict[int, List[RunMetrics]] = {}
    for metrics in runs:
        by_n.setdefault(metrics.n, []).append(metrics)

    aggregates: List[Aggregate] = []
    for n in sorted(by_n):
        cell_runs = by_n[n]
        times = [float(m.t_convergence) for m in cell_runs
                 if m.correct and m.t_convergence is not None]
        med = median(times)
        aggregates.append(Aggregate(
            protocol=protocol,
            n=n,
            runs=len(cell_runs),
            success_rate=fraction([m.correct for m in cell_runs]),
            median_tc=med,
            p95_tc=quantile(times, 0.95),
            fitted_c=med / growth(n) if med is not None else None,
            form=form,
            max_distinct_states=max(m.state_usage.distinct_composite_states for m in cell_runs),
            errors_raised=sum(1 for m in cell_runs if m.error_raised),
            aborted=sum(1 for m in cell_runs if m.aborted),
        ))

    points = [(a.n, a.median_tc) for a in aggregates if a.median_tc is not None]
    fit = fit_complexity(points, form) if len(points) >= 2 else None
    return aggregates, fit


def sweep(spec: ExperimentSpec,
          progress: Optional[Callable[[int, int, str], None]] = None) -> ExperimentResult:
    """
    Run every cell of an experiment.

    Args:
        spec: Experiment specification (validated here)
        progress: Optional callback(current, total, message)

    Returns:
        ExperimentResult with runs sorted by (protocol, n, seed)

    Raises:
        ConfigurationError: Before any run, if the spec is invalid
    """
    spec.validate()
    cells = build_cells(spec)
    if spec.trace and len(cells) > 1:
        raise ConfigurationError("Tracing needs a single (n, seed) cell")

    workers = min(worker_count(), len(cells))
    tracker = ProgressTracker(len(cells), progress)
    logger.info("Sweep %s: %d cells, profile %s, %d worker(s)",
                spec.protocol, len(cells), spec.profile, workers)

    runs: List[RunMetrics] = []
    if workers > 1:
        with multiprocessing.Pool(workers) as pool:
            for metrics in pool.imap_unordered(run_cell, cells):
                runs.append(metrics)
                tracker.update(1, f"n={metrics.n} seed={metrics.seed}")
    else:
        for cell in cells:
            runs.append(run_cell(cell))
            tracker.update(1, f"n={cell.n} seed={cell.seed}")

    runs.sort(key=lambda m: (m.protocol, m.n, m.seed))
    aggregates, fit = aggregate_runs(spec.protocol, runs)
    logger.info("Sweep %s finished in %s", spec.protocol,
                format_duration(tracker.get_elapsed_time()))
    return ExperimentResult(protocol=spec.protocol, runs=runs, aggregates=aggregates, fit=fit)


def run_single(spec: ExperimentSpec) -> RunMetrics:
    """
    Run the first (n, seed) cell of a spec.

    Returns:
        RunMetrics of that cell
    """
    spec.validate()
    return run_cell(build_cells(spec)[0])
