"""Shared cost accounting.

One cost unit is one lower-level solver iteration or one linear-system
(CG) iteration; everything else (pointwise ops, reductions, parameter
updates) is free. Counters are thread-safe so per-sample pipelines can
charge them concurrently.
"""

from __future__ import annotations

import threading


class CostCounter:
    """Thread-safe accumulator of integer cost units."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._total = 0

    def add(self, units: int) -> None:
        if units < 0:
            raise ValueError("cost units must be non-negative")
        with self._lock:
            self._total += int(units)

    @property
    def total(self) -> int:
        with self._lock:
            return self._total

    def __repr__(self) -> str:  # pragma: no cover
        return f"CostCounter(total={self.total})"
