"""Explicit transient-memory accounting.

Peak memory is tracked by registration rather than allocator hooks: every
transient tensor in both pipelines (index blocks, gathered features,
activations, gradient temporaries) is acquired against a meter and released
when it dies.  Persistent state — the graph, features, model parameters,
optimizer moments, reusable gradient scratch — is never registered.

The convention for operator APIs: an op given a meter releases everything it
allocated internally before returning, except the arrays it returns, which
stay acquired until the caller unregisters them (see :meth:`MemoryMeter.hold`
and :meth:`MemoryMeter.untrack`).
"""

from __future__ import annotations

from contextlib import contextmanager
from typing import Iterator, Optional

import numpy as np


class AccountingError(RuntimeError):
    """Release without a matching acquire: the books are broken, stop."""


class MemoryMeter:
    """Counter pair (current, peak) over registered transient bytes."""

    __slots__ = ("current_bytes", "peak_bytes")

    def __init__(self):
        self.current_bytes = 0
        self.peak_bytes = 0

    def reset(self) -> None:
        """Start a measurement window: the peak collapses onto the current level."""
        self.peak_bytes = self.current_bytes

    def acquire(self, nbytes: int) -> None:
        if nbytes < 0:
            raise ValueError("cannot acquire a negative byte count")
        self.current_bytes += nbytes
        if self.current_bytes > self.peak_bytes:
            self.peak_bytes = self.current_bytes

    def release(self, nbytes: int) -> None:
        if nbytes < 0:
            raise ValueError("cannot release a negative byte count")
        self.current_bytes -= nbytes
        if self.current_bytes < 0:
            raise AccountingError(
                f"released {nbytes} bytes with only {self.current_bytes + nbytes} outstanding"
            )

    @contextmanager
    def scope(self, nbytes: int) -> Iterator[None]:
        """Register ``nbytes`` for the duration of the with-block."""
        self.acquire(nbytes)
        try:
            yield
        finally:
            self.release(nbytes)

    def track(self, *arrays: Optional[np.ndarray]) -> None:
        self.acquire(_total_bytes(arrays))

    def untrack(self, *arrays: Optional[np.ndarray]) -> None:
        self.release(_total_bytes(arrays))

    @contextmanager
    def hold(self, *arrays: Optional[np.ndarray]) -> Iterator[None]:
        """Scope over the byte size of concrete arrays (Nones are skipped)."""
        with self.scope(_total_bytes(arrays)):
            yield


def _total_bytes(arrays) -> int:
    return sum(int(a.nbytes) for a in arrays if a is not None)


def null_meter() -> MemoryMeter:
    """A fresh throwaway meter for callers that do not care about accounting."""
    return MemoryMeter()
