"""Data-link tests: ownership, backward attachment, block classification."""

from peakmem.analysis import (
    BlockRole,
    LayerNode,
    MemoryBlock,
    OperatorNode,
)
from peakmem.linking import (
    attach_backward_ops,
    attach_blocks,
    link,
    link_layers_to_ops,
)


def layer(name, start, end, children=(), wrapper=False):
    node = LayerNode(name=name, start_ts=start, end_ts=end,
                     children=list(children), is_wrapper=wrapper)
    return node


def tree_of(*layers):
    root = LayerNode(name="<root>", start_ts=0, end_ts=10_000,
                     children=list(layers), is_wrapper=True)
    return root


def op(name, start, end, seqs=()):
    return OperatorNode(name=name, start_ts=start, end_ts=end,
                        sequence_numbers=set(seqs))


def block(block_id, alloc, free=None, size=512):
    return MemoryBlock(block_id=block_id, addr=block_id, size=size,
                       alloc_time=alloc, free_time=free)


class TestLinkLayersToOps:
    def test_layer_owns_contained_ops(self):
        lin = layer("Linear_0", 0, 100)
        a, b = op("A", 5, 10), op("B", 50, 60)
        profiles = link_layers_to_ops(tree_of(lin), [a, b])
        assert profiles[lin].forward_ops == [a, b]

    def test_innermost_wins(self):
        inner = layer("Linear_0", 10, 20)
        outer = layer("Custom_0", 0, 100, children=[inner])
        # outer has a layer child but also own ops; mark it non-wrapper
        # here to exercise the innermost rule directly
        o = op("O", 12, 15)
        profiles = link_layers_to_ops(tree_of(outer), [o])
        assert profiles[inner].forward_ops == [o]
        assert profiles[outer].forward_ops == []

    def test_wrapper_excluded(self):
        inner = layer("Linear_0", 10, 20)
        wrapper = layer("Sequential_0", 0, 100, children=[inner], wrapper=True)
        o = op("O", 12, 15)
        profiles = link_layers_to_ops(tree_of(wrapper), [o])
        assert wrapper not in profiles
        assert profiles[inner].forward_ops == [o]

    def test_op_outside_every_layer_unowned(self):
        lin = layer("Linear_0", 0, 100)
        o = op("O", 200, 210)
        profiles = link_layers_to_ops(tree_of(lin), [o])
        assert profiles[lin].forward_ops == []

    def test_partial_overlap_not_owned(self):
        lin = layer("Linear_0", 0, 100)
        o = op("O", 90, 110)   # sticks out of the layer interval
        profiles = link_layers_to_ops(tree_of(lin), [o])
        assert profiles[lin].forward_ops == []


class TestAttachBackwardOps:
    def test_single_seq_match(self):
        lin = layer("Linear_0", 0, 100)
        fwd = op("aten::linear", 5, 10, seqs={3})
        bwd = op("AddmmBackward0", 500, 520, seqs={3})
        profiles = link_layers_to_ops(tree_of(lin), [fwd, bwd])
        attach_backward_ops(profiles, [fwd, bwd])
        assert profiles[lin].backward_ops == [bwd]

    def test_union_over_multiple_seqs(self):
        lin = layer("Custom_0", 0, 100)
        f1 = op("f1", 5, 10, seqs={3})
        f2 = op("f2", 20, 30, seqs={4})
        b1 = op("b1", 500, 510, seqs={3})
        b2 = op("b2", 520, 530, seqs={4})
        profiles = link_layers_to_ops(tree_of(lin), [f1, f2, b1, b2])
        attach_backward_ops(profiles, [f1, f2, b1, b2])
        assert profiles[lin].backward_ops == [b1, b2]

    def test_no_seq_no_backward(self):
        lin = layer("ReLU_0", 0, 100)
        fwd = op("aten::relu", 5, 10)
        profiles = link_layers_to_ops(tree_of(lin), [fwd])
        attach_backward_ops(profiles, [fwd])
        assert profiles[lin].backward_ops == []

    def test_own_forward_ops_not_reattached(self):
        lin = layer("Linear_0", 0, 100)
        fwd = op("aten::linear", 5, 10, seqs={3})
        profiles = link_layers_to_ops(tree_of(lin), [fwd])
        attach_backward_ops(profiles, [fwd])
        assert profiles[lin].backward_ops == []

    def test_dedup_by_identity(self):
        lin = layer("Custom_0", 0, 100)
        f1 = op("f1", 5, 10, seqs={3, 4})
        shared = op("b", 500, 510, seqs={3, 4})   # carries both seqs
        profiles = link_layers_to_ops(tree_of(lin), [f1, shared])
        attach_backward_ops(profiles, [f1, shared])
        assert profiles[lin].backward_ops == [shared]


class TestAttachBlocks:
    def test_temporary_inside_one_op(self):
        lin = layer("Linear_0", 0, 100)
        o = op("O", 10, 20)
        profiles = link_layers_to_ops(tree_of(lin), [o])
        b = block(0, alloc=12, free=18)
        attach_blocks(profiles, [b])
        assert profiles[lin].temporary_blocks == [b]
        assert b.role is BlockRole.TEMPORARY

    def test_retained_outlives_op(self):
        lin = layer("Linear_0", 0, 100)
        o = op("O", 10, 20)
        profiles = link_layers_to_ops(tree_of(lin), [o])
        b = block(0, alloc=12, free=500)
        attach_blocks(profiles, [b])
        assert profiles[lin].retained_blocks == [b]
        assert b.role is BlockRole.RETAINED

    def test_permanent_block_is_retained(self):
        lin = layer("Linear_0", 0, 100)
        o = op("O", 10, 20)
        profiles = link_layers_to_ops(tree_of(lin), [o])
        b = block(0, alloc=12, free=None)
        attach_blocks(profiles, [b])
        assert profiles[lin].retained_blocks == [b]

    def test_block_before_any_op_unclassified(self):
        lin = layer("Linear_0", 0, 100)
        o = op("O", 10, 20)
        profiles = link_layers_to_ops(tree_of(lin), [o])
        b = block(0, alloc=5)
        attach_blocks(profiles, [b])
        assert b.role is BlockRole.UNCLASSIFIED
        assert profiles[lin].retained_blocks == []

    def test_free_at_op_end_is_retained(self):
        # closed-open interval: a free exactly at end_ts is outside
        lin = layer("Linear_0", 0, 100)
        o = op("O", 10, 20)
        profiles = link_layers_to_ops(tree_of(lin), [o])
        b = block(0, alloc=12, free=20)
        attach_blocks(profiles, [b])
        assert b.role is BlockRole.RETAINED

    def test_partition_property(self):
        lin1 = layer("Linear_0", 0, 100)
        lin2 = layer("Linear_1", 200, 300)
        o1, o2 = op("O1", 10, 20), op("O2", 210, 260)
        profiles = link_layers_to_ops(tree_of(lin1, lin2), [o1, o2])
        blocks = [block(0, 12, 15), block(1, 12, 500), block(2, 220),
                  block(3, 150), block(4, 999)]
        attach_blocks(profiles, blocks)
        placed = (profiles[lin1].retained_blocks + profiles[lin1].temporary_blocks
                  + profiles[lin2].retained_blocks + profiles[lin2].temporary_blocks)
        unclassified = [b for b in blocks if b.role is BlockRole.UNCLASSIFIED]
        assert len(placed) + len(unclassified) == len(blocks)
        assert {id(b) for b in placed} | {id(b) for b in unclassified} \
            == {id(b) for b in blocks}


class TestBackwardRetained:
    def test_gradient_candidates_from_backward_ops(self):
        lin = layer("Linear_0", 0, 100)
        fwd = op("aten::linear", 5, 10, seqs={3})
        bwd = op("AddmmBackward0", 500, 520, seqs={3})
        profiles = link(tree_of(lin), [fwd, bwd],
                        [block(0, alloc=6, free=900),     # fwd retained
                         block(1, alloc=505, free=None),  # bwd retained
                         block(2, alloc=507, free=510)])  # bwd temporary
        got = profiles[lin].backward_retained_blocks()
        assert [b.block_id for b in got] == [1]
