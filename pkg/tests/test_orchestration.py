"""Sequence orchestration: synthetic adjustments and the full builder."""

import pytest

from peakmem.analysis import (
    AnnotationMarker,
    BlockRole,
    LayerNode,
    MarkerKind,
    MemoryBlock,
    OperatorNode,
)
from peakmem.errors import (
    MissingBatchBytes,
    NoGradientBlocks,
    NoIterations,
)
from peakmem.linking import LayerMemoryProfile
from peakmem.orchestration import (
    RequestKind,
    adjust_gradient_lifetimes,
    analyze,
    build_sequence,
    extract_optimizer_state,
    synthesize_batch_blocks,
    synthesize_model_load,
)
from peakmem.reference import replay_reference
from peakmem.trace import SidecarConfig, parse_trace
from tests.conftest import iteration_records


def profile_with_gradients(blocks):
    """One layer whose backward op [20, 100) retains `blocks`."""
    layer = LayerNode(name="Linear_0", start_ts=0, end_ts=10)
    profile = LayerMemoryProfile(layer)
    profile.backward_ops.append(
        OperatorNode(name="bw", start_ts=20, end_ts=100))
    profile.retained_blocks.extend(blocks)
    return {layer: profile}


def step_marker(index, start, end):
    return AnnotationMarker(MarkerKind.PROFILER_STEP, start, end, index)


class TestModelLoad:
    def test_reversed_gradient_order(self):
        # backward allocates g3, g2, g1 -> model loads 100, 200, 300
        blocks = [
            MemoryBlock(block_id=0, addr=1, size=300, alloc_time=30),
            MemoryBlock(block_id=1, addr=2, size=200, alloc_time=40),
            MemoryBlock(block_id=2, addr=3, size=100, alloc_time=50),
        ]
        reqs = synthesize_model_load(profile_with_gradients(blocks), (100,))
        assert [r.size for r in reqs] == [100, 200, 300]
        assert all(r.kind is RequestKind.ALLOC for r in reqs)
        assert [r.block_id for r in reqs] == ["model:0", "model:1", "model:2"]

    def test_placed_before_time_zero(self):
        blocks = [MemoryBlock(block_id=0, addr=1, size=64, alloc_time=30)]
        reqs = synthesize_model_load(profile_with_gradients(blocks), ())
        assert [r.virtual_ts for r in reqs] == [-1]
        assert reqs[0].virtual_ts < 0

    def test_window_filters_later_iterations(self):
        blocks = [
            MemoryBlock(block_id=0, addr=1, size=300, alloc_time=30),
            MemoryBlock(block_id=1, addr=2, size=200, alloc_time=90),
        ]
        reqs = synthesize_model_load(profile_with_gradients(blocks), (),
                                     window=(0, 50))
        assert [r.size for r in reqs] == [300]

    def test_no_gradients_raises(self):
        with pytest.raises(NoGradientBlocks):
            synthesize_model_load(profile_with_gradients([]), ())


class TestBatchBlocks:
    def test_alloc_at_start_free_at_end(self):
        markers = [step_marker(0, 100, 190), step_marker(1, 200, 290)]
        reqs = synthesize_batch_blocks(markers, (10, 20))
        assert len(reqs) == 8
        first = [r for r in reqs if r.block_id == "batch:0:0"]
        assert [(r.kind, r.virtual_ts) for r in first] == [
            (RequestKind.ALLOC, 100), (RequestKind.FREE, 190)]
        second_iter = [r for r in reqs if r.block_id == "batch:1:1"]
        assert [(r.kind, r.virtual_ts, r.size) for r in second_iter] == [
            (RequestKind.ALLOC, 200, 20), (RequestKind.FREE, 290, 20)]

    def test_zero_iterations_raises(self):
        with pytest.raises(NoIterations):
            synthesize_batch_blocks([], (10,))

    def test_no_batch_bytes_raises(self):
        with pytest.raises(MissingBatchBytes):
            synthesize_batch_blocks([step_marker(0, 0, 10)], ())


class TestGradientLifetimes:
    def zg(self, start):
        return AnnotationMarker(MarkerKind.ZERO_GRAD, start, start + 5, 0)

    def test_free_moves_to_next_zero_grad(self):
        blocks = [
            MemoryBlock(block_id=0, addr=1, size=8, alloc_time=100,
                        free_time=260),
            MemoryBlock(block_id=1, addr=2, size=8, alloc_time=250),
        ]
        adjust_gradient_lifetimes(blocks,
                                  [self.zg(50), self.zg(200), self.zg(300)])
        assert blocks[0].free_time == 200
        assert blocks[1].free_time == 300

    def test_no_later_zero_grad_means_permanent(self):
        block = MemoryBlock(block_id=0, addr=1, size=8, alloc_time=350,
                            free_time=400)
        adjust_gradient_lifetimes([block], [self.zg(200)])
        assert block.free_time is None

    def test_coincident_zero_grad_is_not_after(self):
        block = MemoryBlock(block_id=0, addr=1, size=8, alloc_time=200)
        adjust_gradient_lifetimes([block], [self.zg(200), self.zg(300)])
        assert block.free_time == 300


class TestOptimizerState:
    def test_param_sized_survivors_become_state(self):
        b1 = MemoryBlock(block_id=1, addr=1, size=400, alloc_time=10)
        b2 = MemoryBlock(block_id=2, addr=2, size=400, alloc_time=20,
                         free_time=150)
        b3 = MemoryBlock(block_id=3, addr=3, size=400, alloc_time=30,
                         free_time=90)
        b4 = MemoryBlock(block_id=4, addr=4, size=512, alloc_time=40)
        b5 = MemoryBlock(block_id=5, addr=5, size=1600, alloc_time=200)
        reqs = extract_optimizer_state([b1, b2, b3, b4, b5], (400, 1600),
                                       span=(0, 100))
        assert [r.block_id for r in reqs] == [1, 2]
        assert b1.role is BlockRole.OPTIMIZER_STATE
        assert b2.role is BlockRole.OPTIMIZER_STATE
        assert b2.free_time is None          # state never dies
        assert b3.role is BlockRole.UNCLASSIFIED   # freed inside the span
        assert b4.role is BlockRole.UNCLASSIFIED   # size not a parameter
        assert b5.role is BlockRole.UNCLASSIFIED   # outside the span

    def test_requests_carry_alloc_positions(self):
        b = MemoryBlock(block_id=7, addr=1, size=16, alloc_time=55)
        reqs = extract_optimizer_state([b], (16,), span=(50, 60))
        assert [(r.kind, r.virtual_ts, r.size) for r in reqs] == [
            (RequestKind.ALLOC, 55, 16)]


# --- full builder over synthetic traces -------------------------------------


SIDECAR = SidecarConfig(param_sizes=(400,), batch_bytes=(64, 32))


# timestamps are normalized so the first record lands at zero; starting
# iteration 0 at base 0 keeps the expected values readable
@pytest.fixture
def two_iteration_trace(write_trace):
    records = (iteration_records(0, 0, with_grad_free_at=1025)
               + iteration_records(1, 1000))
    return write_trace(records)


@pytest.fixture
def one_iteration_trace(write_trace):
    return write_trace(iteration_records(0, 0))


def built(path, iterations=2, sidecar=SIDECAR):
    return build_sequence(analyze(parse_trace(path, sidecar=sidecar)),
                          iterations=iterations)


def by_block(seq, block_id):
    return [r for r in seq.requests if r.block_id == block_id]


class TestBuildSequence:
    def test_request_count_and_seq_nos(self, two_iteration_trace):
        seq = built(two_iteration_trace)
        assert [r.seq_no for r in seq.requests] == list(range(21))

    def test_model_load_comes_first(self, two_iteration_trace):
        seq = built(two_iteration_trace)
        head = seq.requests[0]
        assert head.block_id == "model:0"
        assert head.size == 400
        assert head.virtual_ts < 0
        assert not any(r.kind is RequestKind.FREE and r.block_id == "model:0"
                       for r in seq.requests)

    def test_batch_blocks_span_each_iteration(self, two_iteration_trace):
        seq = built(two_iteration_trace)
        assert [(r.kind, r.virtual_ts)
                for r in by_block(seq, "batch:0:1")] == [
            (RequestKind.ALLOC, 0), (RequestKind.FREE, 900)]
        assert [(r.kind, r.virtual_ts)
                for r in by_block(seq, "batch:1:0")] == [
            (RequestKind.ALLOC, 1000), (RequestKind.FREE, 1900)]

    def test_gradient_freed_at_next_zero_grad(self, two_iteration_trace):
        seq = built(two_iteration_trace)
        grad0 = by_block(seq, 3)    # alloc order: act, tmp, uncls, grad, ...
        assert [(r.kind, r.virtual_ts) for r in grad0] == [
            (RequestKind.ALLOC, 250), (RequestKind.FREE, 1010)]

    def test_last_iteration_gradient_is_permanent(self, two_iteration_trace):
        seq = built(two_iteration_trace)
        grad1 = [r for r in seq.requests
                 if seq.phase_tags.get(r.block_id) is BlockRole.GRADIENT
                 and r.virtual_ts >= 1000 and r.kind is RequestKind.ALLOC]
        assert len(grad1) == 1
        assert not by_block(seq, grad1[0].block_id)[1:]

    def test_optimizer_state_kept_once_and_permanent(self,
                                                     two_iteration_trace):
        seq = built(two_iteration_trace)
        state = [r for r in seq.requests
                 if seq.phase_tags.get(r.block_id)
                 is BlockRole.OPTIMIZER_STATE]
        assert [(r.kind, r.virtual_ts, r.size) for r in state] == [
            (RequestKind.ALLOC, 420, 400)]

    def test_step_span_temporaries_dropped(self, two_iteration_trace):
        seq = built(two_iteration_trace)
        sizes = [r.size for r in seq.requests]
        assert 999 not in sizes                 # non-param span block
        # the span's freed-within 400 and iteration-1's state-like 400
        # are both dropped: the only 400s are model, grads, and state
        allocs_400 = [r for r in seq.requests
                      if r.kind is RequestKind.ALLOC and r.size == 400]
        assert len(allocs_400) == 4             # model + 2 grads + state

    def test_intra_op_temporaries_excluded(self, two_iteration_trace):
        seq = built(two_iteration_trace)
        assert 500 not in [r.size for r in seq.requests]

    def test_unclassified_blocks_kept(self, two_iteration_trace):
        seq = built(two_iteration_trace)
        uncls = [r for r in seq.requests if r.size == 123]
        assert len(uncls) == 4                  # alloc+free per iteration

    def test_boundaries_cover_included_iterations(self, two_iteration_trace):
        seq = built(two_iteration_trace)
        assert seq.iteration_boundaries == [0, 1000, 1900]

    def test_allocs_precede_frees_per_block(self, two_iteration_trace):
        seq = built(two_iteration_trace)
        seen = set()
        for r in seq.requests:
            if r.kind is RequestKind.ALLOC:
                assert r.block_id not in seen
                seen.add(r.block_id)
            else:
                assert r.block_id in seen

    def test_free_ordered_before_alloc_at_same_ts(self, two_iteration_trace):
        seq = built(two_iteration_trace)
        by_ts = {}
        for r in seq.requests:
            by_ts.setdefault(r.virtual_ts, []).append(r)
        alloc_at = {r.block_id: r.virtual_ts for r in seq.requests
                    if r.kind is RequestKind.ALLOC}
        for group in by_ts.values():
            ranks = []
            for r in group:
                if r.kind is RequestKind.ALLOC:
                    ranks.append(1)
                elif alloc_at[r.block_id] < r.virtual_ts:
                    ranks.append(0)
                else:
                    ranks.append(2)
            assert ranks == sorted(ranks)

    def test_deterministic(self, two_iteration_trace):
        a = built(two_iteration_trace).to_json_dict()
        b = built(two_iteration_trace).to_json_dict()
        assert a == b

    def test_replayable_through_reference(self, two_iteration_trace):
        seq = built(two_iteration_trace)
        result = replay_reference(seq.replay_records(), capacity=None,
                                  max_split_size=1 << 62)
        assert result["oom_seq_no"] is None
        assert result["peak_reserved"] > 0

    def test_single_iteration_request(self, two_iteration_trace):
        seq = built(two_iteration_trace, iterations=1)
        assert seq.iteration_boundaries == [0, 1000]
        assert not [r for r in seq.requests if r.virtual_ts >= 1000
                    and r.kind is RequestKind.ALLOC]
        assert len([r for r in seq.requests
                    if str(r.block_id).startswith("batch:")]) == 4

    def test_zero_iterations_rejected(self, two_iteration_trace):
        with pytest.raises(NoIterations):
            built(two_iteration_trace, iterations=0)

    def test_missing_sidecar_rejected(self, two_iteration_trace):
        with pytest.raises(MissingBatchBytes):
            built(two_iteration_trace, sidecar=None)


class TestCloneExtension:
    def test_cloned_blocks_get_fresh_ids_and_shift(self,
                                                   one_iteration_trace):
        seq = built(one_iteration_trace)
        act = by_block(seq, 0)
        act_clone = by_block(seq, "clone1:0")
        assert [(r.kind, r.virtual_ts) for r in act] == [
            (RequestKind.ALLOC, 70), (RequestKind.FREE, 230)]
        assert [(r.kind, r.virtual_ts) for r in act_clone] == [
            (RequestKind.ALLOC, 970), (RequestKind.FREE, 1130)]

    def test_clone_creates_no_optimizer_state(self, one_iteration_trace):
        seq = built(one_iteration_trace)
        state = [b for b, role in seq.phase_tags.items()
                 if role is BlockRole.OPTIMIZER_STATE]
        assert state == [4]                     # the original only

    def test_original_gradient_freed_at_cloned_zero_grad(
            self, one_iteration_trace):
        seq = built(one_iteration_trace)
        grad = by_block(seq, 3)
        assert [(r.kind, r.virtual_ts) for r in grad] == [
            (RequestKind.ALLOC, 250), (RequestKind.FREE, 910)]

    def test_cloned_gradient_is_permanent(self, one_iteration_trace):
        seq = built(one_iteration_trace)
        assert [(r.kind, r.virtual_ts)
                for r in by_block(seq, "clone1:3")] == [
            (RequestKind.ALLOC, 1150)]

    def test_batch_blocks_cover_cloned_iteration(self, one_iteration_trace):
        seq = built(one_iteration_trace)
        assert [(r.kind, r.virtual_ts)
                for r in by_block(seq, "batch:1:0")] == [
            (RequestKind.ALLOC, 900), (RequestKind.FREE, 1800)]

    def test_boundaries_extend_past_trace(self, one_iteration_trace):
        seq = built(one_iteration_trace)
        assert seq.iteration_boundaries == [0, 900, 1800]

    def test_alloc_multisets_match_between_iterations(
            self, one_iteration_trace):
        seq = built(one_iteration_trace)
        b = seq.iteration_boundaries
        first = sorted(r.size for r in seq.requests
                       if r.kind is RequestKind.ALLOC
                       and b[0] <= r.virtual_ts < b[1]
                       and seq.phase_tags[r.block_id]
                       is not BlockRole.OPTIMIZER_STATE)
        second = sorted(r.size for r in seq.requests
                        if r.kind is RequestKind.ALLOC
                        and b[1] <= r.virtual_ts < b[2])
        assert first == second
