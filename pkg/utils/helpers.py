"""
Helper Utilities
================

Common utility functions used throughout the application.
"""

import logging
import os
import time
from functools import wraps
from typing import Any, Callable, List, Optional, Sequence

logger = logging.getLogger('PopulationCounting.helpers')


def floor_log2(n: int) -> int:
    """
    Exact floor(log2 n) for a positive integer.

    Args:
        n: Positive integer

    Returns:
        Position of the highest set bit
    """
    if n < 1:
        raise ValueError(f"floor_log2 needs a positive integer, got {n}")
    return n.bit_length() - 1


def ceil_log2(n: int) -> int:
    """Exact ceil(log2 n) for a positive integer."""
    if n < 1:
        raise ValueError(f"ceil_log2 needs a positive integer, got {n}")
    return (n - 1).bit_length()


def bits_of(n: int) -> List[int]:
    """
    Positions of the set bits of n, lowest first.

    Args:
        n: Non-negative integer

    Returns:
        List of bit positions
    """
    return [i for i in range(n.bit_length()) if n >> i & 1]


def parse_int_list(text: str) -> List[int]:
    """
    Parse ``"256,1024"`` or ``"2..16"`` (inclusive range) into integers.

    Args:
        text: Comma-separated values and ranges

    Returns:
        List of integers in the given order
    """
    values: List[int] = []
    for part in text.split(','):
        part = part.strip()
        if not part:
            continue
        if '..' in part:
            low, high = part.split('..', 1)
            values.extend(range(int(low), int(high) + 1))
        else:
            values.append(int(part))
    return values


def ensure_parent_dir(path: str) -> None:
    """Create the parent directory of a file path if needed."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)


def format_duration(seconds: float) -> str:
    """Format a duration as ``1h 02m 03s`` / ``2m 03s`` / ``3.2s``."""
    if seconds < 60:
        return f"{seconds:.1f}s"
    minutes, secs = divmod(int(seconds), 60)
    if minutes < 60:
        return f"{minutes}m {secs:02d}s"
    hours, minutes = divmod(minutes, 60)
    return f"{hours}h {minutes:02d}m {secs:02d}s"


def timer(func: Callable[..., Any]) -> Callable[..., Any]:
    """
    Decorator to time function execution.

    Args:
        func: Function to time

    Returns:
        Wrapped function
    """
    @wraps(func)
    def wrapper(*args: Any, **kwargs: Any) -> Any:
        start = time.perf_counter()
        result = func(*args, **kwargs)
        logger.debug("%s took %s", func.__name__, format_duration(time.perf_counter() - start))
        return result
    return wrapper


class ProgressTracker:
    """Track progress of long-running sweeps."""

    def __init__(self, total: int, callback: Optional[Callable[[int, int, str], None]] = None):
        """
        Initialize progress tracker.

        Args:
            total: Total number of items
            callback: Optional callback function(current, total, message)
        """
        self.total = total
        self.current = 0
        self.callback = callback
        self.start_time = time.perf_counter()

    def update(self, increment: int = 1, message: str = "") -> None:
        """
        Update progress.

        Args:
            increment: Amount to increment
            message: Optional message
        """
        self.current += increment
        if self.callback:
            self.callback(self.current, self.total, message)

    def get_elapsed_time(self) -> float:
        """Get elapsed time in seconds."""
        return time.perf_counter() - self.start_time


def fraction(flags: Sequence[bool]) -> float:
    """Share of true values (0.0 for an empty sequence)."""
    return sum(1 for f in flags if f) / len(flags) if flags else 0.0
