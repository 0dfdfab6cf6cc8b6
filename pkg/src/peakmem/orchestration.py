"""Sequence orchestration: turn linked trace views into a GPU-faithful
request sequence.

Five adjustments are applied on top of the linked trace data:
  1. model load -- one permanent allocation per first-iteration gradient
     block, at the head of the timeline, in reverse backward order (the
     backward pass allocates gradients in reverse of load order)
  2. batch data -- synthetic blocks per iteration, allocated at the
     iteration marker's start and freed at its end
  3. gradients -- every gradient block's free moves to the start of the
     next zero-grad call after its allocation; without one it stays
     allocated forever
  4. optimizer state -- blocks born in the first iteration's optimizer
     step span that match a parameter size and survive the span become
     permanent; every other step-span block (any iteration) is dropped
  5. repetitive iterations -- the replay covers two iterations; a
     one-iteration trace is extended by cloning the iteration template
     (shifted timestamps, fresh block ids, no new optimizer state)

Intra-operator temporaries identified by the link phase are excluded
throughout: their CPU-side footprints do not transfer to the device.
"""

from __future__ import annotations

import logging
from bisect import bisect_right
from dataclasses import dataclass, field
from enum import Enum

from .analysis import (
    AnnotationMarker,
    BlockRole,
    LayerNode,
    MarkerKind,
    MemoryBlock,
    OperatorNode,
    build_layer_tree,
    build_operator_roots,
    extract_markers,
    group_memory_events,
)
from .errors import MissingBatchBytes, NoGradientBlocks, NoIterations
from .linking import LayerMemoryProfile, link
from .trace import EventCategory, TraceBundle

logger = logging.getLogger(__name__)


class RequestKind(Enum):
    ALLOC = "alloc"
    FREE = "free"


@dataclass(frozen=True)
class MemoryRequest:
    seq_no: int
    kind: RequestKind
    block_id: int | str
    size: int
    virtual_ts: int
    stream: int = 0

    def to_json_dict(self) -> dict:
        return {"seq_no": self.seq_no, "kind": self.kind.value,
                "block_id": self.block_id, "size": self.size,
                "virtual_ts": self.virtual_ts, "stream": self.stream}


@dataclass
class RequestSequence:
    requests: list[MemoryRequest]
    iteration_boundaries: list[int]
    phase_tags: dict[int | str, BlockRole]

    def to_json_dict(self) -> dict:
        return {
            "requests": [r.to_json_dict() for r in self.requests],
            "iteration_boundaries": list(self.iteration_boundaries),
            "phase_tags": {str(k): v.value for k, v in self.phase_tags.items()},
        }

    def replay_records(self) -> list[dict]:
        """The shape allocator.replay consumes."""
        return [{"seq_no": r.seq_no, "kind": r.kind.value,
                 "block_id": r.block_id, "size": r.size, "stream": r.stream}
                for r in self.requests]


@dataclass
class AnalyzedTrace:
    """All structural views of one bundle, ready for orchestration."""

    bundle: TraceBundle
    layer_tree: LayerNode
    operator_roots: list[OperatorNode]
    markers: list[AnnotationMarker]
    blocks: list[MemoryBlock]
    profiles: dict[LayerNode, LayerMemoryProfile]

    def steps(self) -> list[AnnotationMarker]:
        return sorted((m for m in self.markers
                       if m.kind is MarkerKind.PROFILER_STEP),
                      key=lambda m: m.iteration_index)


def analyze(bundle: TraceBundle) -> AnalyzedTrace:
    """Build every structural view and link them."""
    tree = build_layer_tree(bundle.by_category(EventCategory.PYTHON_FUNCTION))
    roots = build_operator_roots(bundle.by_category(EventCategory.CPU_OP))
    markers = extract_markers(bundle.by_category(EventCategory.USER_ANNOTATION))
    blocks = group_memory_events(
        bundle.by_category(EventCategory.CPU_INSTANT_EVENT))
    profiles = link(tree, roots, blocks)
    return AnalyzedTrace(bundle=bundle, layer_tree=tree, operator_roots=roots,
                         markers=markers, blocks=blocks, profiles=profiles)


# --- orchestration steps ----------------------------------------------------


def tag_gradient_blocks(profiles: dict[LayerNode, LayerMemoryProfile]
                        ) -> list[MemoryBlock]:
    """Mark every backward-retained block as a gradient block."""
    grads: list[MemoryBlock] = []
    for profile in profiles.values():
        for block in profile.backward_retained_blocks():
            if block.role is not BlockRole.GRADIENT:
                block.role = BlockRole.GRADIENT
                grads.append(block)
    grads.sort(key=lambda b: (b.alloc_time, b.block_id))
    return grads


def synthesize_model_load(profiles: dict[LayerNode, LayerMemoryProfile],
                          param_sizes: tuple[int, ...],
                          window: tuple[int, int] | None = None,
                          ) -> list[MemoryRequest]:
    """Permanent model allocations equal to one backward pass's gradients.

    The backward pass produces gradients in reverse of the load order,
    so the gradient sizes are replayed reversed, before everything else
    on the timeline. param_sizes is carried for interface parity with
    the optimizer filter; the equality target is the gradient bytes.
    """
    del param_sizes  # model bytes are defined by the gradient bytes
    grads: list[MemoryBlock] = []
    for profile in profiles.values():
        grads.extend(profile.backward_retained_blocks())
    if window is not None:
        grads = [b for b in grads if window[0] <= b.alloc_time < window[1]]
    if not grads:
        raise NoGradientBlocks("no backward-retained blocks in trace")
    grads.sort(key=lambda b: (b.alloc_time, b.block_id))
    sizes = [b.size for b in reversed(grads)]
    requests = []
    for i, size in enumerate(sizes):
        requests.append(MemoryRequest(
            seq_no=-1, kind=RequestKind.ALLOC, block_id=f"model:{i}",
            size=size, virtual_ts=i - len(sizes)))
    return requests


def synthesize_batch_blocks(markers: list[AnnotationMarker],
                            batch_bytes: tuple[int, ...],
                            ) -> list[MemoryRequest]:
    """Per-iteration batch tensors: alloc at iteration start, free at end."""
    steps = sorted((m for m in markers if m.kind is MarkerKind.PROFILER_STEP),
                   key=lambda m: m.iteration_index)
    if not steps:
        raise NoIterations("no iteration markers for batch synthesis")
    if not batch_bytes:
        raise MissingBatchBytes("sidecar provides no batch tensor sizes")
    requests = []
    for step in steps:
        for j, size in enumerate(batch_bytes):
            block_id = f"batch:{step.iteration_index}:{j}"
            requests.append(MemoryRequest(
                seq_no=-1, kind=RequestKind.ALLOC, block_id=block_id,
                size=size, virtual_ts=step.start_ts))
            requests.append(MemoryRequest(
                seq_no=-1, kind=RequestKind.FREE, block_id=block_id,
                size=size, virtual_ts=step.end_ts))
    return requests


def adjust_gradient_lifetimes(gradient_blocks: list[MemoryBlock],
                              markers: list[AnnotationMarker]) -> None:
    """Point every gradient free at the next zero-grad after its alloc.

    Gradients with no later zero-grad stay allocated (permanent).
    """
    zg_starts = sorted(m.start_ts for m in markers
                       if m.kind is MarkerKind.ZERO_GRAD)
    for block in gradient_blocks:
        idx = bisect_right(zg_starts, block.alloc_time)
        block.free_time = zg_starts[idx] if idx < len(zg_starts) else None


def extract_optimizer_state(blocks: list[MemoryBlock],
                            param_sizes: tuple[int, ...],
                            span: tuple[int, int]) -> list[MemoryRequest]:
    """Keep span-surviving, parameter-sized blocks as permanent state.

    A block allocated inside the optimizer-step span becomes permanent
    optimizer state when its size matches a parameter size and it is
    not freed before the span ends; candidates freed inside the span
    are the step's own temporaries, not state. Mutates the kept blocks
    (role + lifetime) and returns their allocation requests; dropping
    the rest of the span's blocks is the sequence builder's job.
    """
    start, end = span
    sizes = set(param_sizes)
    requests = []
    for block in blocks:
        if not (start <= block.alloc_time < end):
            continue
        if block.size not in sizes:
            continue
        if block.free_time is not None and block.free_time < end:
            continue
        block.role = BlockRole.OPTIMIZER_STATE
        block.free_time = None
        requests.append(MemoryRequest(
            seq_no=-1, kind=RequestKind.ALLOC, block_id=block.block_id,
            size=block.size, virtual_ts=block.alloc_time))
    return requests


def _clone_block(block: MemoryBlock, shift: int, tag: str) -> MemoryBlock:
    free = block.free_time + shift if block.free_time is not None else None
    return MemoryBlock(
        block_id=f"{tag}:{block.block_id}", addr=block.addr, size=block.size,
        alloc_time=block.alloc_time + shift, free_time=free, role=block.role)


def build_sequence(analyzed: AnalyzedTrace, iterations: int = 2,
                   ) -> RequestSequence:
    """Assemble the final replayable request sequence.

    Covers `iterations` training iterations: taken from the trace when
    it has enough, otherwise extended by cloning the last traced
    iteration (shifted timestamps, fresh block ids, no new optimizer
    state). Model-load and batch blocks are synthetic; gradient and
    optimizer-state lifetimes are rewritten per the orchestration rules.
    """
    if iterations < 1:
        raise NoIterations(f"iterations must be >= 1, got {iterations}")
    sidecar = analyzed.bundle.metadata
    if sidecar is None:
        raise MissingBatchBytes(
            "orchestration requires a sidecar (param_sizes, batch_bytes)")

    steps = analyzed.steps()
    if not steps:
        raise NoIterations("trace has no iteration markers")

    n_trace = len(steps)
    include = min(iterations, n_trace)
    clones = iterations - include

    # iteration windows over the trace: [start_k, start_{k+1}), the last
    # one closing at its own marker end
    windows: list[tuple[int, int]] = []
    for k in range(include):
        start = steps[k].start_ts
        end = steps[k + 1].start_ts if k + 1 < n_trace else steps[k].end_ts
        windows.append((start, end))

    # 1. gradients get their role before any lifetime surgery
    gradient_blocks = tag_gradient_blocks(analyzed.profiles)

    # 2. optimizer-step spans: first-iteration survivors become state,
    #    every other span block is dropped
    span_markers = [m for m in analyzed.markers
                    if m.kind is MarkerKind.OPTIMIZER_STEP]
    dropped: set[int] = set()
    state_blocks: list[MemoryBlock] = []
    for marker in span_markers:
        span = (marker.start_ts, marker.end_ts)
        in_span = [b for b in analyzed.blocks
                   if span[0] <= b.alloc_time < span[1]]
        if marker.iteration_index == 0:
            extract_optimizer_state(in_span, sidecar.param_sizes, span)
            for b in in_span:
                if b.role is BlockRole.OPTIMIZER_STATE:
                    state_blocks.append(b)
                else:
                    dropped.add(b.block_id)
        else:
            dropped.update(b.block_id for b in in_span)

    def sequenced(block: MemoryBlock) -> bool:
        return (block.role is not BlockRole.TEMPORARY
                and block.block_id not in dropped)

    # 3. clone extra iterations from the last traced one
    clone_blocks: list[MemoryBlock] = []
    clone_markers: list[AnnotationMarker] = []
    if clones:
        tpl_window = windows[-1]
        width = tpl_window[1] - tpl_window[0]
        template = [b for b in analyzed.blocks
                    if sequenced(b) and b.role is not BlockRole.OPTIMIZER_STATE
                    and tpl_window[0] <= b.alloc_time < tpl_window[1]]
        tpl_markers = [m for m in analyzed.markers
                       if m.iteration_index == include - 1
                       and tpl_window[0] <= m.start_ts < tpl_window[1]]
        for c in range(1, clones + 1):
            shift = width * c
            tag = f"clone{c}"
            for b in template:
                clone_blocks.append(_clone_block(b, shift, tag))
            for m in tpl_markers:
                clone_markers.append(AnnotationMarker(
                    m.kind, m.start_ts + shift, m.end_ts + shift,
                    include - 1 + c))

    all_markers = list(analyzed.markers) + clone_markers
    all_gradients = gradient_blocks + [b for b in clone_blocks
                                       if b.role is BlockRole.GRADIENT]

    # 4. gradient frees move to the next zero-grad (cloned ones included)
    adjust_gradient_lifetimes(all_gradients, all_markers)

    # 5. synthetic model load from the first iteration's gradients
    model_requests = synthesize_model_load(
        analyzed.profiles, sidecar.param_sizes, window=windows[0])

    # 6. synthetic batch blocks for every replayed iteration
    step_markers = [m for m in all_markers
                    if m.kind is MarkerKind.PROFILER_STEP
                    and m.iteration_index < iterations]
    batch_requests = synthesize_batch_blocks(step_markers, sidecar.batch_bytes)

    # 7. emit trace blocks: pre-iteration prefix plus included windows
    chosen: list[MemoryBlock] = []
    first_start = windows[0][0]
    for b in analyzed.blocks:
        if not sequenced(b):
            continue
        if b.alloc_time < first_start:
            chosen.append(b)
            continue
        if any(w[0] <= b.alloc_time < w[1] for w in windows):
            chosen.append(b)
    chosen.extend(clone_blocks)

    raw: list[MemoryRequest] = list(model_requests) + list(batch_requests)
    phase_tags: dict[int | str, BlockRole] = {}
    for r in model_requests:
        phase_tags[r.block_id] = BlockRole.MODEL
    for r in batch_requests:
        phase_tags[r.block_id] = BlockRole.BATCH
    for b in chosen:
        phase_tags[b.block_id] = b.role
        raw.append(MemoryRequest(seq_no=-1, kind=RequestKind.ALLOC,
                                 block_id=b.block_id, size=b.size,
                                 virtual_ts=b.alloc_time))
        if b.free_time is not None:
            raw.append(MemoryRequest(seq_no=-1, kind=RequestKind.FREE,
                                     block_id=b.block_id, size=b.size,
                                     virtual_ts=b.free_time))

    # total order: frees of older blocks, then allocs, then frees of
    # blocks allocated at this same timestamp -- a free at time t can
    # serve an alloc at time t, and no block is freed before its alloc
    alloc_ts: dict[int | str, int] = {}
    for r in raw:
        if r.kind is RequestKind.ALLOC:
            alloc_ts[r.block_id] = r.virtual_ts

    def order_key(item: tuple[int, MemoryRequest]):
        idx, r = item
        if r.kind is RequestKind.ALLOC:
            rank = 1
        elif alloc_ts.get(r.block_id, -1 << 62) < r.virtual_ts:
            rank = 0
        else:
            rank = 2
        return (r.virtual_ts, rank, idx)

    ordered = [r for _, r in sorted(enumerate(raw), key=order_key)]
    requests = [MemoryRequest(seq_no=i, kind=r.kind, block_id=r.block_id,
                              size=r.size, virtual_ts=r.virtual_ts,
                              stream=r.stream)
                for i, r in enumerate(ordered)]

    boundaries = [w[0] for w in windows]
    end = windows[-1][1]
    if clones:
        width = windows[-1][1] - windows[-1][0]
        for c in range(1, clones + 1):
            boundaries.append(windows[-1][0] + width * c)
        end = windows[-1][0] + width * (clones + 1)
    boundaries.append(end)

    return RequestSequence(requests=requests, iteration_boundaries=boundaries,
                           phase_tags=phase_tags)
