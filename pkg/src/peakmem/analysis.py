"""Event analysis: structural views over one trace.

Four views feed the linking phase:
  * a layer tree from python_function events (module-call frames kept,
    plain Python frames collapsed away)
  * the top-level operator forest from cpu_op events (nested operators
    absorbed into their roots, donating their sequence numbers)
  * typed iteration markers from user_annotation events
  * paired alloc/free MemoryBlocks from cpu_instant_event streams

Block pairing is address-recurrence based and sign-aware: an allocation
at an already-open address closes the open block first (with a
diagnostic), a deallocation at an unknown address is dropped with a
warning. Every allocation event therefore opens exactly one block.
"""

from __future__ import annotations

import logging
from bisect import bisect_right
from dataclasses import dataclass, field
from enum import Enum

from .errors import CyclicParentLink, NoIterationMarkers
from .trace import EventCategory, TraceEvent

logger = logging.getLogger(__name__)

LAYER_NAME_PREFIXES = ("nn.Module: ",)


@dataclass(eq=False)
class LayerNode:
    """A module-call frame; children nest inside the parent interval.

    Identity semantics (eq=False): nodes are used as dict keys by the
    linking phase.
    """

    name: str
    start_ts: int
    end_ts: int
    children: list["LayerNode"] = field(default_factory=list)
    is_wrapper: bool = False
    event_id: int = -1

    def walk(self):
        yield self
        for child in self.children:
            yield from child.walk()


@dataclass(eq=False)
class OperatorNode:
    """A top-level operator interval with all absorbed sequence numbers.

    Identity semantics (eq=False): ops are deduplicated by identity when
    layers claim them.
    """

    name: str
    start_ts: int
    end_ts: int
    sequence_numbers: set[int] = field(default_factory=set)
    is_root: bool = True

    def contains_ts(self, ts: int) -> bool:
        return self.start_ts <= ts < self.end_ts


class MarkerKind(Enum):
    PROFILER_STEP = "profiler_step"
    ZERO_GRAD = "zero_grad"
    OPTIMIZER_STEP = "optimizer_step"


@dataclass(frozen=True)
class AnnotationMarker:
    kind: MarkerKind
    start_ts: int
    end_ts: int
    iteration_index: int


class BlockRole(Enum):
    UNCLASSIFIED = "unclassified"
    MODEL = "model"
    BATCH = "batch"
    GRADIENT = "gradient"
    OPTIMIZER_STATE = "optimizer_state"
    TEMPORARY = "temporary"
    RETAINED = "retained"


@dataclass
class MemoryBlock:
    """One alloc/free lifetime; free_time None = never freed (permanent)."""

    block_id: int
    addr: int
    size: int
    alloc_time: int
    free_time: int | None = None
    role: BlockRole = BlockRole.UNCLASSIFIED

    @property
    def permanent(self) -> bool:
        return self.free_time is None


def _is_layer_name(name: str, prefixes: tuple[str, ...]) -> bool:
    return name.startswith(prefixes)


def build_layer_tree(functions: list[TraceEvent],
                     layer_prefixes: tuple[str, ...] = LAYER_NAME_PREFIXES,
                     ) -> LayerNode:
    """Collapse python_function events into a tree of module-call frames.

    Non-layer frames are removed and their children re-parented to the
    nearest layer ancestor (or the synthetic root). A frame is a wrapper
    when at least one layer call nests inside it.
    """
    for e in functions:
        if e.category is not EventCategory.PYTHON_FUNCTION:
            raise ValueError(f"not a python_function event: {e.name!r}")

    by_id: dict[int, TraceEvent] = {}
    for e in functions:
        if e.python_id is None:
            continue
        if e.python_id in by_id:
            logger.warning("duplicate python id %s (%r); keeping the first",
                           e.python_id, e.name)
            continue
        by_id[e.python_id] = e

    # nearest layer ancestor per event, walking parent chains with a
    # cycle guard
    def layer_ancestor(e: TraceEvent) -> TraceEvent | None:
        seen = {e.python_id} if e.python_id is not None else set()
        cur = e
        while cur.parent_id is not None:
            parent = by_id.get(cur.parent_id)
            if parent is None:
                return None
            if parent.python_id in seen:
                raise CyclicParentLink(
                    f"parent chain of {e.name!r} revisits id {parent.python_id}")
            seen.add(parent.python_id)
            if _is_layer_name(parent.name, layer_prefixes):
                return parent
            cur = parent
        return None

    root = LayerNode(name="<root>", start_ts=0, end_ts=0, is_wrapper=True)
    nodes: dict[int, LayerNode] = {}
    layer_events = [e for e in functions
                    if _is_layer_name(e.name, layer_prefixes)]
    for e in layer_events:
        display = e.name
        for prefix in layer_prefixes:
            if display.startswith(prefix):
                display = display[len(prefix):]
                break
        nodes[e.event_id] = LayerNode(
            name=display, start_ts=e.start_ts, end_ts=e.end_ts,
            event_id=e.event_id)

    for e in layer_events:
        ancestor = layer_ancestor(e)
        parent_node = nodes[ancestor.event_id] if ancestor is not None else root
        parent_node.children.append(nodes[e.event_id])

    for node in nodes.values():
        node.children.sort(key=lambda n: (n.start_ts, n.event_id))
        node.is_wrapper = bool(node.children)
    root.children.sort(key=lambda n: (n.start_ts, n.event_id))
    if root.children:
        root.start_ts = min(c.start_ts for c in root.children)
        root.end_ts = max(c.end_ts for c in root.children)
    return root


def build_operator_roots(ops: list[TraceEvent]) -> list[OperatorNode]:
    """Keep only operators not contained in another operator's interval.

    Containment is closed-open: an operator ending exactly when another
    starts is not nested. Nested operators are absorbed into their root
    and donate their sequence numbers to it.
    """
    for e in ops:
        if e.category is not EventCategory.CPU_OP:
            raise ValueError(f"not a cpu_op event: {e.name!r}")

    ordered = sorted(ops, key=lambda e: (e.start_ts, -e.end_ts, e.event_id))
    roots: list[OperatorNode] = []
    current: OperatorNode | None = None
    for e in ordered:
        if current is not None and e.start_ts < current.end_ts:
            if e.end_ts <= current.end_ts:
                if e.sequence_number is not None:
                    current.sequence_numbers.add(e.sequence_number)
                continue
            logger.warning("operator %r partially overlaps %r; treating as root",
                           e.name, current.name)
        seqs = set() if e.sequence_number is None else {e.sequence_number}
        current = OperatorNode(name=e.name, start_ts=e.start_ts,
                               end_ts=e.end_ts, sequence_numbers=seqs)
        roots.append(current)
    return roots


def extract_markers(annotations: list[TraceEvent]) -> list[AnnotationMarker]:
    """Type the iteration-control annotations and index them by iteration.

    Raises NoIterationMarkers when the trace has no profiler-step
    annotations at all: without them iterations cannot be segmented.
    """
    for e in annotations:
        if e.category is not EventCategory.USER_ANNOTATION:
            raise ValueError(f"not a user_annotation event: {e.name!r}")

    def kind_of(name: str) -> MarkerKind | None:
        if name.startswith("ProfilerStep"):
            return MarkerKind.PROFILER_STEP
        if "zero_grad" in name:
            return MarkerKind.ZERO_GRAD
        if name.startswith("Optimizer.step") or name.endswith(".step"):
            return MarkerKind.OPTIMIZER_STEP
        return None

    typed = [(e, kind_of(e.name)) for e in annotations]
    steps = sorted((e for e, k in typed if k is MarkerKind.PROFILER_STEP),
                   key=lambda e: (e.start_ts, e.event_id))
    if not steps:
        raise NoIterationMarkers("no profiler-step annotations in trace")
    step_starts = [e.start_ts for e in steps]

    markers: list[AnnotationMarker] = []
    for rank, e in enumerate(steps):
        markers.append(AnnotationMarker(MarkerKind.PROFILER_STEP,
                                        e.start_ts, e.end_ts, rank))
    for e, kind in typed:
        if kind in (MarkerKind.ZERO_GRAD, MarkerKind.OPTIMIZER_STEP):
            iteration = max(0, bisect_right(step_starts, e.start_ts) - 1)
            markers.append(AnnotationMarker(kind, e.start_ts, e.end_ts, iteration))
    markers.sort(key=lambda m: (m.start_ts, m.kind.value))
    return markers


def group_memory_events(instants: list[TraceEvent]) -> list[MemoryBlock]:
    """Pair instant events into MemoryBlocks by address recurrence.

    Sign-aware: every positive event opens a block (closing any block
    still open at that address first, with a diagnostic); a negative
    event closes the open block at its address or is dropped with a
    warning. Unmatched opens stay permanent. Result sorted by alloc
    time; block ids are positions in that order.
    """
    for e in instants:
        if e.category is not EventCategory.CPU_INSTANT_EVENT:
            raise ValueError(f"not a cpu_instant_event: {e.name!r}")

    open_at: dict[int, MemoryBlock] = {}
    blocks: list[MemoryBlock] = []
    for e in sorted(instants, key=lambda e: (e.start_ts, e.event_id)):
        assert e.addr is not None and e.nbytes is not None and e.nbytes != 0
        if e.nbytes > 0:
            stale = open_at.pop(e.addr, None)
            if stale is not None:
                logger.info(
                    "allocation at open address 0x%x (t=%d); closing the "
                    "previous block first", e.addr, e.start_ts)
                stale.free_time = e.start_ts
            block = MemoryBlock(block_id=-1, addr=e.addr, size=e.nbytes,
                                alloc_time=e.start_ts)
            open_at[e.addr] = block
            blocks.append(block)
        else:
            block = open_at.pop(e.addr, None)
            if block is None:
                logger.warning("free at address 0x%x (t=%d) with no open "
                               "allocation; dropped", e.addr, e.start_ts)
                continue
            if block.size != -e.nbytes:
                logger.info("free size %d != alloc size %d at 0x%x",
                            -e.nbytes, block.size, e.addr)
            block.free_time = e.start_ts

    blocks.sort(key=lambda b: b.alloc_time)
    for i, block in enumerate(blocks):
        block.block_id = i
    return blocks
