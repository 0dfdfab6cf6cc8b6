"""Trace ingest: parse profiler JSON into normalized event streams.

The input is the Chrome-trace-event-style JSON that framework profilers
export: a top-level object with a "traceEvents" array (or a bare array)
of {ph, cat, name, ts, dur, args} records. Only four categories carry
meaning for the pipeline -- python_function, cpu_op, user_annotation,
cpu_instant_event -- everything else is retained inert under Other.

Normalization contract:
  * timestamps become integer microseconds relative to the earliest
    event, flooring starts and ceiling ends so a positive-duration
    interval never collapses to empty
  * events are stably sorted by start time (file order breaks ties) and
    event_id is the position in that order, making (start_ts, event_id)
    a total order
  * metadata field names are mapped through one adapter table; the
    magnitude and sign of allocation byte counts are never altered

Re-serializing a bundle with to_json_dict() and parsing the result
yields an equal bundle (the round-trip property in the tests).
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

from .errors import EmptyTrace, MalformedTrace

logger = logging.getLogger(__name__)


class EventCategory(Enum):
    PYTHON_FUNCTION = "python_function"
    CPU_OP = "cpu_op"
    USER_ANNOTATION = "user_annotation"
    CPU_INSTANT_EVENT = "cpu_instant_event"
    OTHER = "other"


_KNOWN_CATEGORIES = {
    "python_function": EventCategory.PYTHON_FUNCTION,
    "cpu_op": EventCategory.CPU_OP,
    "user_annotation": EventCategory.USER_ANNOTATION,
    "cpu_instant_event": EventCategory.CPU_INSTANT_EVENT,
    "other": EventCategory.OTHER,
}

# adapter table: profiler arg names -> normalized field names
_ARG_PYTHON_ID = "Python id"
_ARG_PYTHON_PARENT_ID = "Python parent id"
_ARG_SEQUENCE_NUMBER = "Sequence number"
_ARG_ADDR = "Addr"
_ARG_BYTES = "Bytes"
_ARG_TOTAL_ALLOCATED = "Total Allocated"
_ARG_TOTAL_RESERVED = "Total Reserved"


@dataclass(frozen=True)
class TraceEvent:
    """One normalized profiler event."""

    event_id: int
    category: EventCategory
    name: str
    start_ts: int                       # integer microseconds, >= 0
    duration: int                       # integer microseconds, >= 0
    python_id: int | None = None        # python_function only
    parent_id: int | None = None        # python_function only
    sequence_number: int | None = None  # cpu_op only
    addr: int | None = None             # cpu_instant_event only
    nbytes: int | None = None           # cpu_instant_event; sign = alloc/free
    total_allocated: int | None = None
    total_reserved: int | None = None

    @property
    def end_ts(self) -> int:
        return self.start_ts + self.duration


@dataclass(frozen=True)
class SidecarConfig:
    """Capture-time metadata the trace itself does not carry."""

    param_sizes: tuple[int, ...] = ()
    batch_bytes: tuple[int, ...] = ()
    optimizer_name: str = ""
    device_capacity: int = 0            # bytes; 0 = unbounded
    initial_memory: int = 0             # bytes already in use on the device

    def to_json_dict(self) -> dict:
        return {
            "param_sizes": list(self.param_sizes),
            "batch_bytes": list(self.batch_bytes),
            "optimizer": self.optimizer_name,
            "device_capacity_bytes": self.device_capacity,
            "initial_memory_bytes": self.initial_memory,
        }


@dataclass(frozen=True)
class TraceBundle:
    """All events of one trace, sorted, plus sidecar metadata."""

    events: tuple[TraceEvent, ...]
    source_path: str = field(compare=False, default="")
    metadata: SidecarConfig | None = None

    def by_category(self, category: EventCategory) -> list[TraceEvent]:
        return [e for e in self.events if e.category is category]

    def to_json_dict(self) -> dict:
        out = []
        for e in self.events:
            args: dict = {}
            if e.python_id is not None:
                args[_ARG_PYTHON_ID] = e.python_id
            if e.parent_id is not None:
                args[_ARG_PYTHON_PARENT_ID] = e.parent_id
            if e.sequence_number is not None:
                args[_ARG_SEQUENCE_NUMBER] = e.sequence_number
            if e.addr is not None:
                args[_ARG_ADDR] = e.addr
            if e.nbytes is not None:
                args[_ARG_BYTES] = e.nbytes
            if e.total_allocated is not None:
                args[_ARG_TOTAL_ALLOCATED] = e.total_allocated
            if e.total_reserved is not None:
                args[_ARG_TOTAL_RESERVED] = e.total_reserved
            record = {
                "ph": "i" if e.category is EventCategory.CPU_INSTANT_EVENT else "X",
                "cat": e.category.value,
                "name": e.name,
                "ts": e.start_ts,
                "dur": e.duration,
                "args": args,
            }
            out.append(record)
        return {"traceEvents": out}


def _as_int(value, what: str, record_name: str):
    if value is None:
        return None
    try:
        return int(value)
    except (TypeError, ValueError):
        raise MalformedTrace(f"non-integer {what} in event {record_name!r}: {value!r}")


def parse_trace(path: str | Path, sidecar: SidecarConfig | None = None,
                strict: bool = False) -> TraceBundle:
    """Parse a trace file into a normalized, sorted TraceBundle.

    strict=True rejects event categories outside the four the pipeline
    consumes instead of bucketing them into Other, and rejects malformed
    instant events instead of dropping them with a warning.
    """
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise MalformedTrace(f"trace file not found: {path}")
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise MalformedTrace(f"trace file is not valid JSON: {path}: {exc}")

    if isinstance(raw, dict):
        records = raw.get("traceEvents")
        if records is None:
            raise MalformedTrace(f"no traceEvents array in {path}")
    elif isinstance(raw, list):
        records = raw
    else:
        raise MalformedTrace(f"trace root must be an object or array: {path}")

    parsed: list[tuple[float, float, dict]] = []  # (raw_ts, raw_end, fields)
    for rec in records:
        if not isinstance(rec, dict):
            raise MalformedTrace(f"non-object trace record in {path}")
        if rec.get("ph") == "M":
            continue  # chrome metadata records carry no timing
        cat = rec.get("cat")
        category = _KNOWN_CATEGORIES.get(cat, EventCategory.OTHER)
        if category is EventCategory.OTHER and strict and cat != "other":
            raise MalformedTrace(f"unknown event category {cat!r} under --strict")
        name = rec.get("name", "")
        ts = rec.get("ts")
        if ts is None:
            raise MalformedTrace(f"event {name!r} has no timestamp")
        dur = rec.get("dur", 0) or 0
        args = rec.get("args") or {}

        fields: dict = {"category": category, "name": str(name)}
        if category is EventCategory.PYTHON_FUNCTION:
            fields["python_id"] = _as_int(args.get(_ARG_PYTHON_ID), "python id", name)
            fields["parent_id"] = _as_int(
                args.get(_ARG_PYTHON_PARENT_ID), "parent id", name)
        elif category is EventCategory.CPU_OP:
            seq = _as_int(args.get(_ARG_SEQUENCE_NUMBER), "sequence number", name)
            if seq is not None and seq < 0:
                seq = None  # the profiler uses -1 for "no sequence"
            fields["sequence_number"] = seq
        elif category is EventCategory.CPU_INSTANT_EVENT:
            addr = _as_int(args.get(_ARG_ADDR), "address", name)
            nbytes = _as_int(args.get(_ARG_BYTES), "byte count", name)
            if addr is None or nbytes is None or nbytes == 0:
                msg = (f"instant event {name!r} lacks a usable Addr/Bytes pair "
                       f"(addr={addr}, bytes={nbytes})")
                if strict:
                    raise MalformedTrace(msg)
                logger.warning("%s -- dropped", msg)
                continue
            fields["addr"] = addr
            fields["nbytes"] = nbytes
            fields["total_allocated"] = _as_int(
                args.get(_ARG_TOTAL_ALLOCATED), "total allocated", name)
            fields["total_reserved"] = _as_int(
                args.get(_ARG_TOTAL_RESERVED), "total reserved", name)
        parsed.append((float(ts), float(ts) + float(dur), fields))

    if not parsed:
        raise EmptyTrace(f"no events in {path}")

    t0 = min(ts for ts, _, _ in parsed)
    events: list[TraceEvent] = []
    order = sorted(range(len(parsed)), key=lambda i: (parsed[i][0], i))
    for event_id, i in enumerate(order):
        raw_ts, raw_end, fields = parsed[i]
        start = math.floor(raw_ts - t0)
        end = max(start, math.ceil(raw_end - t0))
        events.append(TraceEvent(
            event_id=event_id, start_ts=start, duration=end - start, **fields))

    return TraceBundle(events=tuple(events), source_path=str(path), metadata=sidecar)


def filter_category(bundle: TraceBundle, category: EventCategory) -> list[TraceEvent]:
    """Stable-ordered subsequence of events with the given category."""
    return bundle.by_category(category)


def load_sidecar(path: str | Path) -> SidecarConfig:
    """Load and validate the sidecar metadata JSON."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise MalformedTrace(f"sidecar file not found: {path}")
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise MalformedTrace(f"sidecar is not valid JSON: {path}: {exc}")
    if not isinstance(raw, dict):
        raise MalformedTrace(f"sidecar root must be an object: {path}")

    def int_list(key: str) -> tuple[int, ...]:
        values = raw.get(key, [])
        if not isinstance(values, list) or any(
                not isinstance(v, int) or isinstance(v, bool) or v <= 0
                for v in values):
            raise MalformedTrace(f"sidecar {key} must be a list of positive ints")
        return tuple(values)

    def nonneg(key: str) -> int:
        value = raw.get(key, 0)
        if not isinstance(value, int) or isinstance(value, bool) or value < 0:
            raise MalformedTrace(f"sidecar {key} must be a non-negative int")
        return value

    return SidecarConfig(
        param_sizes=int_list("param_sizes"),
        batch_bytes=int_list("batch_bytes"),
        optimizer_name=str(raw.get("optimizer", "")),
        device_capacity=nonneg("device_capacity_bytes"),
        initial_memory=nonneg("initial_memory_bytes"),
    )
