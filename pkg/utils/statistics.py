"""
Statistics Helpers
==================

Complexity fits, quantiles and goodness-of-fit tests for experiment results.

A complexity form maps a population size to the growth term of a claimed
bound (``n log n``, ``n log^2 n`` or ``n^2 log n``). Fitting a form means
finding the constant c that minimises the squared error of ``T ~ c * form(n)``.
"""

import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.stats as stats

COMPLEXITY_FORMS: Dict[str, Callable[[float], float]] = {
    'n log n': lambda n: n * math.log2(n),
    'n log^2 n': lambda n: n * math.log2(n) ** 2,
    'n^2 log n': lambda n: n * n * math.log2(n),
}


@dataclass
class ComplexityFit:
    """
    Least-squares fit of one complexity form.

    Attributes:
        form: Name of the complexity form
        c: Fitted constant
        ratios: Per-point ``T / form(n)``
        residuals: Per-point ``T - c * form(n)``
    """
    form: str
    c: float
    ratios: List[Tuple[int, float]] = field(default_factory=list)
    residuals: List[Tuple[int, float]] = field(default_factory=list)

    @property
    def ratio_spread(self) -> float:
        """Largest over smallest per-point ratio (1.0 means a perfect fit)."""
        values = [r for _, r in self.ratios if r > 0]
        if not values:
            return math.inf
        return max(values) / min(values)


def complexity_form(name: str) -> Callable[[float], float]:
    """Look up a complexity form by name."""
    try:
        return COMPLEXITY_FORMS[name]
    except KeyError:
        raise ValueError(f"Unknown complexity form: {name}") from None


def fit_complexity(points: Sequence[Tuple[int, float]], form: str) -> ComplexityFit:
    """
    Fit ``T ~ c * form(n)``.

    Args:
        points: (n, T) pairs
        form: Name of the complexity form

    Returns:
        ComplexityFit

    Raises:
        ValueError: If fewer than two distinct n values are given
    """
    if len({n for n, _ in points}) < 2:
        raise ValueError("fit_complexity needs at least two distinct population sizes")

    growth = complexity_form(form)
    x = np.array([growth(n) for n, _ in points], dtype=float)
    y = np.array([t for _, t in points], dtype=float)
    coef, *_ = np.linalg.lstsq(x[:, None], y, rcond=None)
    c = float(coef[0])

    return ComplexityFit(
        form=form,
        c=c,
        ratios=[(n, float(t) / growth(n)) for n, t in points],
        residuals=[(n, float(t) - c * growth(n)) for n, t in points],
    )


def quantile(values: Sequence[float], q: float) -> Optional[float]:
    """Linear-interpolated quantile, None for no values."""
    if not values:
        return None
    return float(np.quantile(np.asarray(values, dtype=float), q))


def median(values: Sequence[float]) -> Optional[float]:
    return quantile(values, 0.5)


def uniformity_pvalue(counts: Sequence[int]) -> float:
    """
    Chi-square goodness-of-fit p-value against the uniform distribution.

    Args:
        counts: Observed count per category

    Returns:
        p-value of the test
    """
    observed = np.asarray(counts, dtype=float)
    if observed.size < 2 or observed.sum() == 0:
        raise ValueError("uniformity test needs at least two categories and one observation")
    return float(stats.chisquare(observed).pvalue)


def pair_counts(pairs: Sequence[Tuple[int, int]], n: int) -> np.ndarray:
    """
    Count ordered pairs of distinct agents.

    Args:
        pairs: Scheduled (initiator, responder) pairs
        n: Population size

    Returns:
        Flat array of the n*(n-1) off-diagonal counts
    """
    matrix = np.zeros((n, n), dtype=np.int64)
    for i, j in pairs:
        matrix[i, j] += 1
    return matrix[~np.eye(n, dtype=bool)]
