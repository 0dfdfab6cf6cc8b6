"""Exception hierarchy for the peak-memory estimation pipeline.

Every failure mode named by an operation contract gets its own class so
callers (and the CLI exit-code mapping) can dispatch on type rather than
on message text.
"""

from __future__ import annotations


class PeakMemError(Exception):
    """Base class for all pipeline errors."""


# --- trace ingest ---------------------------------------------------------

class MalformedTrace(PeakMemError):
    """Input is not JSON or is missing mandatory fields."""


class EmptyTrace(PeakMemError):
    """Trace contains zero events."""


# --- event analysis -------------------------------------------------------

class CyclicParentLink(PeakMemError):
    """A python_function parent chain revisits a node."""


class NoIterationMarkers(PeakMemError):
    """No profiler-step annotations: the trace cannot be segmented."""


# --- orchestration --------------------------------------------------------

class NoGradientBlocks(PeakMemError):
    """Backward pass absent from trace; model load cannot be synthesized."""


class MissingBatchBytes(PeakMemError):
    """Sidecar does not provide per-iteration batch tensor sizes."""


class NoIterations(PeakMemError):
    """Sequence construction needs at least one iteration."""


# --- allocator simulation -------------------------------------------------

class ZeroSize(PeakMemError):
    """Allocation request of zero (or negative) bytes."""


class OutOfMemory(PeakMemError):
    """Request cannot be satisfied within device capacity."""

    def __init__(self, message: str, seq_no: int | None = None):
        super().__init__(message)
        self.seq_no = seq_no


class DuplicateHandle(PeakMemError):
    """Allocation handle already live."""


class UnknownHandle(PeakMemError):
    """Free of a handle that was never allocated."""


class DoubleFree(PeakMemError):
    """Free of a handle that was already freed."""


class MalformedSequence(PeakMemError):
    """Request sequence violates well-formedness (e.g. free before alloc)."""


# --- metrics --------------------------------------------------------------

class EmptyInput(PeakMemError):
    """Aggregate operation applied to an empty collection."""
