"""Caching-allocator simulator: the optimized state machine.

Mirrors the behaviour of a CUDA caching allocator closely enough to
replay a request sequence and read off the reserved-segment high-water
mark:

  * request sizes round up to 512-byte multiples
  * cache misses reserve whole segments from the device, sized by the
    small-buffer / large-buffer / 2 MiB-round-up rule
  * best-fit search over a pool of free blocks keyed lexicographically
    by (stream, size, address), splitting oversized hits
  * frees coalesce with free neighbours inside the segment
  * under capacity pressure, wholly-free segments are released
    (over-threshold ones first, largest first), then the request fails

The naive twin in reference.py implements the same contract with none
of the indexing; tests hold the two to identical per-request timelines.

State invariants (checked by AllocatorState.check_invariants, and after
every mutation when constructed with validate=True):
  * conservation: free bytes + allocated bytes == reserved bytes
  * tiling: each segment's blocks partition [0, size) without gaps
  * canonical form: no two adjacent free blocks
  * every block size is a multiple of the 512-byte alignment
  * the free pool and the segment chains agree exactly
"""

from __future__ import annotations

import json
from bisect import insort
from dataclasses import dataclass
from typing import Iterable, Iterator

from .errors import (
    DoubleFree,
    DuplicateHandle,
    MalformedSequence,
    OutOfMemory,
    UnknownHandle,
    ZeroSize,
)
from .units import MIB

FREE = "free"
ALLOCATED = "allocated"


@dataclass(frozen=True)
class AllocatorConfig:
    """Tunable constants of the simulated allocator.

    max_split_size=None means unbounded (every block may be split);
    device_capacity=None means the device never runs out.
    """

    k_small_size: int = 1 * MIB
    k_small_buffer: int = 2 * MIB
    k_min_large_alloc: int = 10 * MIB
    k_large_buffer: int = 20 * MIB
    k_round_large: int = 2 * MIB
    alignment: int = 512
    max_split_size: int | None = None
    device_capacity: int | None = None

    def __post_init__(self):
        for name in ("k_small_size", "k_small_buffer", "k_min_large_alloc",
                     "k_large_buffer", "k_round_large", "alignment"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.alignment & (self.alignment - 1):
            raise ValueError("alignment must be a power of two")
        if self.max_split_size is not None and self.max_split_size < self.k_large_buffer:
            # a smaller threshold would forbid splitting the allocator's
            # own fresh buffers, wedging every small request
            raise ValueError("max_split_size below the large buffer size")


def round_request(size: int, alignment: int = 512) -> int:
    """Round a request up to the next multiple of the alignment."""
    if size <= 0:
        raise ZeroSize(f"allocation of {size} bytes")
    return -(-size // alignment) * alignment


def segment_size_for(size: int, cfg: AllocatorConfig = AllocatorConfig()) -> int:
    """Size of the device segment backing a cache miss of `size` bytes."""
    if size <= cfg.k_small_size:
        return cfg.k_small_buffer
    if size <= cfg.k_min_large_alloc:
        return cfg.k_large_buffer
    return -(-size // cfg.k_round_large) * cfg.k_round_large


class SimBlock:
    """A contiguous run of bytes inside one segment."""

    __slots__ = ("segment", "offset", "size", "state", "stream", "prev", "next")

    def __init__(self, segment: "Segment", offset: int, size: int, state: str):
        self.segment = segment
        self.offset = offset
        self.size = size
        self.state = state
        self.stream = segment.stream
        self.prev: SimBlock | None = None
        self.next: SimBlock | None = None

    @property
    def addr(self) -> int:
        return self.segment.base_addr + self.offset


class Segment:
    """A device reservation, tiled by a doubly-linked chain of blocks."""

    __slots__ = ("base_addr", "size", "stream", "head")

    def __init__(self, base_addr: int, size: int, stream: int):
        self.base_addr = base_addr
        self.size = size
        self.stream = stream
        self.head = SimBlock(self, 0, size, FREE)

    def blocks(self) -> Iterator[SimBlock]:
        node = self.head
        while node is not None:
            yield node
            node = node.next

    def wholly_free(self) -> bool:
        return self.head.next is None and self.head.state == FREE


@dataclass
class SimulationResult:
    peak_reserved: int
    peak_allocated: int
    timeline: list[tuple[int, int, int]]
    oom_seq_no: int | None = None
    final_reserved: int = 0
    final_allocated: int = 0

    def to_json_dict(self) -> dict:
        return {
            "peak_reserved": self.peak_reserved,
            "peak_allocated": self.peak_allocated,
            "oom_seq_no": self.oom_seq_no,
            "final_reserved": self.final_reserved,
            "final_allocated": self.final_allocated,
            "timeline": [list(t) for t in self.timeline],
        }


class AllocatorState:
    """Mutable simulator state; single-owner, strictly serialized."""

    def __init__(self, cfg: AllocatorConfig | None = None, validate: bool = False):
        self.cfg = cfg or AllocatorConfig()
        self.validate = validate
        self.segments: list[Segment] = []
        self._next_base = 0
        # sorted list of (stream, size, addr, block); insort keeps the
        # lexicographic pool order the best-fit search relies on
        self.free_pool: list[tuple[int, int, int, SimBlock]] = []
        self.allocated_map: dict[object, SimBlock] = {}
        self._freed: set = set()
        self.reserved_bytes = 0
        self.allocated_bytes = 0
        self.peak_reserved = 0
        self.peak_allocated = 0
        self.timeline: list[tuple[int, int, int]] = []

    # -- free-pool bookkeeping ---------------------------------------------

    @staticmethod
    def _key(block: SimBlock) -> tuple[int, int, int, SimBlock]:
        return (block.stream, block.size, block.addr, block)

    def _pool_add(self, block: SimBlock) -> None:
        insort(self.free_pool, self._key(block))

    def _pool_remove(self, block: SimBlock) -> None:
        key = self._key(block)
        lo = self._bisect_left(key[:3])
        # the (stream, size, addr) prefix is unique per live block
        entry = self.free_pool[lo]
        assert entry[3] is block
        del self.free_pool[lo]

    def _bisect_left(self, prefix: tuple[int, int, int]) -> int:
        lo, hi = 0, len(self.free_pool)
        while lo < hi:
            mid = (lo + hi) // 2
            if self.free_pool[mid][:3] < prefix:
                lo = mid + 1
            else:
                hi = mid
        return lo

    # -- allocation ----------------------------------------------------------

    def _find_best_fit(self, rounded: int, stream: int) -> SimBlock | None:
        """Smallest adequate free block on the stream; ties by address.

        The pool is sorted by (stream, size, addr), so a forward walk
        from the first entry >= (stream, rounded, 0) visits candidates
        in exactly best-fit order; the walk is only longer than one
        step when a bounded split threshold rejects oversize blocks.
        """
        t = self.cfg.max_split_size
        i = self._bisect_left((stream, rounded, 0))
        while i < len(self.free_pool):
            s, size, _, block = self.free_pool[i]
            if s != stream:
                return None
            if t is not None and size > t and size - rounded >= t:
                i += 1
                continue
            return block
        return None

    def _split(self, block: SimBlock, rounded: int) -> None:
        remainder = block.size - rounded
        assert remainder >= self.cfg.alignment
        tail = SimBlock(block.segment, block.offset + rounded, remainder, FREE)
        tail.prev, tail.next = block, block.next
        if block.next is not None:
            block.next.prev = tail
        block.next = tail
        block.size = rounded
        self._pool_add(tail)

    def _take(self, block: SimBlock, rounded: int, handle) -> None:
        self._pool_remove(block)
        t = self.cfg.max_split_size
        splittable = t is None or block.size <= t
        if splittable and block.size > rounded:
            self._split(block, rounded)
        block.state = ALLOCATED
        self.allocated_map[handle] = block
        self.allocated_bytes += block.size

    def _new_segment(self, seg_size: int, stream: int) -> Segment:
        seg = Segment(self._next_base, seg_size, stream)
        self._next_base += seg_size
        self.segments.append(seg)
        self.reserved_bytes += seg_size
        self._pool_add(seg.head)
        return seg

    def _release_segment(self, seg: Segment) -> None:
        assert seg.wholly_free()
        self._pool_remove(seg.head)
        self.segments.remove(seg)
        self.reserved_bytes -= seg.size

    def _make_room(self, seg_size: int) -> bool:
        """Release cached segments until a new reservation fits."""
        cap = self.cfg.device_capacity
        t = self.cfg.max_split_size
        if t is not None:
            over = [s for s in self.segments if s.wholly_free() and s.size > t]
            for seg in sorted(over, key=lambda s: -s.size):
                if self.reserved_bytes + seg_size <= cap:
                    break
                self._release_segment(seg)
        if self.reserved_bytes + seg_size > cap:
            for seg in [s for s in self.segments if s.wholly_free()]:
                self._release_segment(seg)
        return self.reserved_bytes + seg_size <= cap

    def allocate(self, handle, size: int, stream: int = 0) -> None:
        if handle in self.allocated_map or handle in self._freed:
            raise DuplicateHandle(f"handle {handle!r} already used")
        rounded = round_request(size, self.cfg.alignment)
        block = self._find_best_fit(rounded, stream)
        if block is None:
            seg_size = segment_size_for(rounded, self.cfg)
            cap = self.cfg.device_capacity
            if cap is not None and self.reserved_bytes + seg_size > cap:
                if not self._make_room(seg_size):
                    raise OutOfMemory(
                        f"segment of {seg_size} bytes does not fit: "
                        f"reserved {self.reserved_bytes} of {cap}"
                    )
            block = self._new_segment(seg_size, stream).head
        self._take(block, rounded, handle)
        self.peak_reserved = max(self.peak_reserved, self.reserved_bytes)
        self.peak_allocated = max(self.peak_allocated, self.allocated_bytes)
        if self.validate:
            self.check_invariants()

    def free(self, handle) -> None:
        if handle in self._freed:
            raise DoubleFree(f"handle {handle!r} freed twice")
        block = self.allocated_map.pop(handle, None)
        if block is None:
            raise UnknownHandle(f"handle {handle!r} never allocated")
        self._freed.add(handle)
        self.allocated_bytes -= block.size
        block.state = FREE
        nxt = block.next
        if nxt is not None and nxt.state == FREE:
            self._pool_remove(nxt)
            block.size += nxt.size
            block.next = nxt.next
            if nxt.next is not None:
                nxt.next.prev = block
        prv = block.prev
        if prv is not None and prv.state == FREE:
            self._pool_remove(prv)
            prv.size += block.size
            prv.next = block.next
            if block.next is not None:
                block.next.prev = prv
            block = prv
        self._pool_add(block)
        if self.validate:
            self.check_invariants()

    # -- validation ----------------------------------------------------------

    def check_invariants(self) -> None:
        free_total = 0
        allocated_total = 0
        seen_free = set()
        for seg in self.segments:
            expect_offset = 0
            prev_state = None
            prev_node = None
            for blk in seg.blocks():
                assert blk.offset == expect_offset, "tiling gap/overlap"
                assert blk.size > 0
                assert blk.size % self.cfg.alignment == 0, "unaligned block"
                assert blk.prev is prev_node, "broken back-link"
                if blk.state == FREE:
                    assert prev_state != FREE, "adjacent free blocks"
                    free_total += blk.size
                    seen_free.add(id(blk))
                else:
                    allocated_total += blk.size
                expect_offset += blk.size
                prev_state = blk.state
                prev_node = blk
            assert expect_offset == seg.size, "blocks do not tile segment"
        assert free_total + allocated_total == self.reserved_bytes, "conservation"
        assert allocated_total == self.allocated_bytes
        assert self.reserved_bytes == sum(s.size for s in self.segments)
        pool_ids = {id(b) for _, _, _, b in self.free_pool}
        assert pool_ids == seen_free, "pool and segment chains disagree"
        assert len(self.free_pool) == len(seen_free)
        if self.cfg.device_capacity is not None:
            assert self.reserved_bytes <= self.cfg.device_capacity

    def step(self, seq_no: int) -> None:
        self.timeline.append((seq_no, self.reserved_bytes, self.allocated_bytes))


def replay(requests: Iterable[dict], cfg: AllocatorConfig | None = None,
           validate: bool = False) -> SimulationResult:
    """Apply [{seq_no, kind, block_id, size, stream}] in order.

    OutOfMemory is a verdict, not an error: the result records the
    failing seq_no and the state reached. Structural problems (free
    before alloc, double free, unknown kind) raise MalformedSequence.
    """
    state = AllocatorState(cfg, validate=validate)
    oom_seq = None
    for req in requests:
        kind = str(req["kind"]).lower()
        seq_no = req["seq_no"]
        try:
            if kind == "alloc":
                state.allocate(req["block_id"], req["size"], req.get("stream", 0))
            elif kind == "free":
                state.free(req["block_id"])
            else:
                raise MalformedSequence(f"unknown request kind {req['kind']!r}")
        except OutOfMemory:
            oom_seq = seq_no
            break
        except (UnknownHandle, DoubleFree, DuplicateHandle) as exc:
            raise MalformedSequence(str(exc)) from exc
        state.step(seq_no)
    return SimulationResult(
        peak_reserved=state.peak_reserved,
        peak_allocated=state.peak_allocated,
        timeline=state.timeline,
        oom_seq_no=oom_seq,
        final_reserved=state.reserved_bytes,
        final_allocated=state.allocated_bytes,
    )


def load_sequence_file(path: str) -> list[dict]:
    """Read the replayable JSON sequence format."""
    with open(path, encoding="utf-8") as f:
        data = json.load(f)
    if isinstance(data, dict) and "requests" in data:
        data = data["requests"]
    if not isinstance(data, list):
        raise MalformedSequence("sequence file must hold a list of requests")
    return data
