"""Data link: tie layers to their operators and operators to their blocks.

Ownership rules:
  * a non-wrapper layer owns every root operator whose interval is fully
    contained in the layer's interval; when layers nest, the innermost
    non-wrapper wins, and each operator belongs to at most one layer
  * backward operators are found by sequence number: every root operator
    elsewhere in the trace that carries one of a layer's forward
    sequence numbers is attached as a backward operator of that layer
  * a memory block belongs to the layer owning the operator in whose
    interval it was allocated; blocks that die inside that same operator
    interval are intra-operator temporaries, everything else is retained

Blocks allocated outside any owned operator stay globally unclassified.
"""

from __future__ import annotations

from bisect import bisect_right
from dataclasses import dataclass, field

from .analysis import BlockRole, LayerNode, MemoryBlock, OperatorNode

ProfileMap = dict[LayerNode, "LayerMemoryProfile"]


@dataclass(eq=False)
class LayerMemoryProfile:
    """Per-layer view: owned operators and the blocks they retain."""

    layer: LayerNode
    forward_ops: list[OperatorNode] = field(default_factory=list)
    backward_ops: list[OperatorNode] = field(default_factory=list)
    retained_blocks: list[MemoryBlock] = field(default_factory=list)
    temporary_blocks: list[MemoryBlock] = field(default_factory=list)

    def owned_ops(self) -> list[OperatorNode]:
        return self.forward_ops + self.backward_ops

    def backward_retained_blocks(self) -> list[MemoryBlock]:
        """Retained blocks allocated during this layer's backward ops."""
        return [b for b in self.retained_blocks
                if any(op.contains_ts(b.alloc_time) for op in self.backward_ops)]


def _non_wrapper_layers(tree: LayerNode) -> list[LayerNode]:
    return [n for n in tree.walk() if n is not tree and not n.is_wrapper]


def link_layers_to_ops(tree: LayerNode,
                       roots: list[OperatorNode]) -> ProfileMap:
    """Assign each root operator to the innermost non-wrapper layer
    whose interval contains it."""
    layers = _non_wrapper_layers(tree)
    profiles: ProfileMap = {layer: LayerMemoryProfile(layer) for layer in layers}
    for op in roots:
        best: LayerNode | None = None
        for layer in layers:
            if layer.start_ts <= op.start_ts and op.end_ts <= layer.end_ts:
                if best is None or (layer.end_ts - layer.start_ts
                                    < best.end_ts - best.start_ts):
                    best = layer
        if best is not None:
            profiles[best].forward_ops.append(op)
    return profiles


def attach_backward_ops(profiles: ProfileMap,
                        all_ops: list[OperatorNode]) -> ProfileMap:
    """Attach, per layer, every operator elsewhere in the trace carrying
    one of the layer's forward sequence numbers."""
    by_seq: dict[int, list[OperatorNode]] = {}
    for op in all_ops:
        for seq in op.sequence_numbers:
            by_seq.setdefault(seq, []).append(op)

    for profile in profiles.values():
        own = set(map(id, profile.forward_ops))
        seqs: set[int] = set()
        for op in profile.forward_ops:
            seqs.update(op.sequence_numbers)
        seen: set[int] = set()
        found: list[OperatorNode] = []
        for seq in sorted(seqs):
            for op in by_seq.get(seq, []):
                if id(op) in own or id(op) in seen:
                    continue
                seen.add(id(op))
                found.append(op)
        found.sort(key=lambda o: o.start_ts)
        profile.backward_ops = found
    return profiles


def attach_blocks(profiles: ProfileMap,
                  blocks: list[MemoryBlock]) -> ProfileMap:
    """Attach blocks to the layer owning the operator they were born in.

    A block allocated and freed within one owning operator's interval is
    an intra-operator temporary; otherwise it is retained. Blocks born
    outside every owned operator keep their unclassified role.
    """
    owners: list[tuple[OperatorNode, LayerMemoryProfile]] = []
    for profile in profiles.values():
        for op in profile.owned_ops():
            owners.append((op, profile))
    owners.sort(key=lambda pair: pair[0].start_ts)
    starts = [op.start_ts for op, _ in owners]

    for block in blocks:
        idx = bisect_right(starts, block.alloc_time) - 1
        if idx < 0:
            continue
        op, profile = owners[idx]
        if not op.contains_ts(block.alloc_time):
            continue
        if block.free_time is not None and block.free_time < op.end_ts:
            block.role = BlockRole.TEMPORARY
            profile.temporary_blocks.append(block)
        else:
            block.role = BlockRole.RETAINED
            profile.retained_blocks.append(block)
    return profiles


def link(tree: LayerNode, roots: list[OperatorNode],
         blocks: list[MemoryBlock]) -> ProfileMap:
    """Run the three linking steps in order."""
    profiles = link_layers_to_ops(tree, roots)
    attach_backward_ops(profiles, roots)
    attach_blocks(profiles, blocks)
    return profiles
