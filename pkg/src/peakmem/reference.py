"""Naive reference allocator: the correctness oracle for the simulator.

This module re-implements the caching-allocator rules in the most direct
way possible: segments are plain lists of (offset, size, state) tuples,
every search is a linear scan, and nothing is cached or indexed. It is
deliberately slow and deliberately independent of allocator.py -- the two
share no code beyond the exception types, so a bug has to be made twice
to go unnoticed. Tests compare their per-request timelines.

Rules implemented (identical contract to the optimized simulator):
  * request sizes round up to multiples of 512
  * fresh segment sizing: <=1 MiB -> 2 MiB; <=10 MiB -> 20 MiB;
    else round up to a 2 MiB multiple
  * best fit: smallest adequate free block, ties by lowest address
  * split when the chosen block is strictly larger, except blocks above
    max_split_size are never split (they match only when the remainder
    is below the threshold, and are then handed out whole)
  * free coalesces with adjacent free neighbours inside the segment
  * on capacity exhaustion: release wholly-free segments above
    max_split_size largest-first until the new segment fits, then all
    wholly-free segments, then fail
  * reserved = sum of segment sizes, allocated = sum of live block sizes,
    timeline records (seq_no, reserved, allocated) after every request
"""

from __future__ import annotations

from .errors import (
    DoubleFree,
    DuplicateHandle,
    MalformedSequence,
    OutOfMemory,
    UnknownHandle,
    ZeroSize,
)

_ALIGN = 512
_SMALL_SIZE = 1 * 1024 * 1024
_SMALL_BUFFER = 2 * 1024 * 1024
_MIN_LARGE = 10 * 1024 * 1024
_LARGE_BUFFER = 20 * 1024 * 1024
_ROUND_LARGE = 2 * 1024 * 1024

FREE = "free"
USED = "used"


class _Seg:
    def __init__(self, base: int, size: int, stream: int):
        self.base = base
        self.size = size
        self.stream = stream
        # list of [offset, size, state, handle] sorted by offset
        self.blocks = [[0, size, FREE, None]]

    def wholly_free(self) -> bool:
        return len(self.blocks) == 1 and self.blocks[0][2] == FREE


class ReferenceAllocator:
    """Straightforward oracle implementation. Do not optimize."""

    def __init__(self, capacity: int | None = None, max_split_size: int | None = None):
        self.capacity = capacity
        self.max_split_size = max_split_size
        self.segments: list[_Seg] = []
        self.next_base = 0
        self.handles: dict[object, tuple[_Seg, int]] = {}  # handle -> (segment, offset)
        self.freed: set = set()
        self.reserved = 0
        self.allocated = 0
        self.peak_reserved = 0
        self.peak_allocated = 0
        self.timeline: list[tuple[int, int, int]] = []

    # -- rules, restated naively ------------------------------------------

    @staticmethod
    def _round(size: int) -> int:
        if size <= 0:
            raise ZeroSize(f"allocation of {size} bytes")
        whole, rem = divmod(size, _ALIGN)
        return (whole + (1 if rem else 0)) * _ALIGN

    @staticmethod
    def _segment_size(rounded: int) -> int:
        if rounded <= _SMALL_SIZE:
            return _SMALL_BUFFER
        if rounded <= _MIN_LARGE:
            return _LARGE_BUFFER
        whole, rem = divmod(rounded, _ROUND_LARGE)
        return (whole + (1 if rem else 0)) * _ROUND_LARGE

    def _find_best(self, rounded: int, stream: int):
        """Scan every free block; return (segment, index) of the best fit."""
        best = None
        best_key = None
        for seg in self.segments:
            if seg.stream != stream:
                continue
            for i, blk in enumerate(seg.blocks):
                off, size, state, _ = blk
                if state != FREE or size < rounded:
                    continue
                if self.max_split_size is not None and size > self.max_split_size:
                    # oversize cached block: only for requests leaving a
                    # sub-threshold remainder
                    if size - rounded >= self.max_split_size:
                        continue
                key = (size, seg.base + off)
                if best_key is None or key < best_key:
                    best, best_key = (seg, i), key
        return best

    def _take(self, seg: _Seg, idx: int, rounded: int, handle) -> None:
        off, size, _, _ = seg.blocks[idx]
        splittable = self.max_split_size is None or size <= self.max_split_size
        if splittable and size > rounded:
            assert size - rounded >= _ALIGN
            seg.blocks[idx] = [off, rounded, USED, handle]
            seg.blocks.insert(idx + 1, [off + rounded, size - rounded, FREE, None])
            taken = rounded
        else:
            seg.blocks[idx] = [off, size, USED, handle]
            taken = size
        self.handles[handle] = (seg, off)
        self.allocated += taken

    def _release_segment(self, seg: _Seg) -> None:
        self.segments.remove(seg)
        self.reserved -= seg.size

    def _new_segment(self, seg_size: int, stream: int) -> _Seg:
        seg = _Seg(self.next_base, seg_size, stream)
        self.next_base += seg_size
        self.segments.append(seg)
        self.reserved += seg_size
        return seg

    # -- public operations -------------------------------------------------

    def allocate(self, handle, size: int, stream: int = 0) -> None:
        if handle in self.handles or handle in self.freed:
            raise DuplicateHandle(f"handle {handle!r} already used")
        rounded = self._round(size)
        hit = self._find_best(rounded, stream)
        if hit is None:
            seg_size = self._segment_size(rounded)
            if self.capacity is not None and self.reserved + seg_size > self.capacity:
                # stage 1: drop wholly-free segments above the split
                # threshold, largest first, until the new segment fits
                if self.max_split_size is not None:
                    candidates = [s for s in self.segments
                                  if s.wholly_free() and s.size > self.max_split_size]
                    for seg in sorted(candidates, key=lambda s: -s.size):
                        if self.reserved + seg_size <= self.capacity:
                            break
                        self._release_segment(seg)
                # stage 2: drop every wholly-free segment
                if self.reserved + seg_size > self.capacity:
                    for seg in [s for s in self.segments if s.wholly_free()]:
                        self._release_segment(seg)
                if self.reserved + seg_size > self.capacity:
                    raise OutOfMemory(
                        f"need {seg_size} bytes reserved {self.reserved} "
                        f"capacity {self.capacity}"
                    )
            seg = self._new_segment(seg_size, stream)
            self._take(seg, 0, rounded, handle)
        else:
            self._take(hit[0], hit[1], rounded, handle)
        self.peak_reserved = max(self.peak_reserved, self.reserved)
        self.peak_allocated = max(self.peak_allocated, self.allocated)

    def free(self, handle) -> None:
        if handle in self.freed:
            raise DoubleFree(f"handle {handle!r} freed twice")
        if handle not in self.handles:
            raise UnknownHandle(f"handle {handle!r} never allocated")
        seg, off = self.handles.pop(handle)
        self.freed.add(handle)
        idx = next(i for i, b in enumerate(seg.blocks) if b[0] == off)
        self.allocated -= seg.blocks[idx][1]
        seg.blocks[idx][2] = FREE
        seg.blocks[idx][3] = None
        # coalesce with the next free neighbour, then the previous one
        if idx + 1 < len(seg.blocks) and seg.blocks[idx + 1][2] == FREE:
            seg.blocks[idx][1] += seg.blocks[idx + 1][1]
            del seg.blocks[idx + 1]
        if idx > 0 and seg.blocks[idx - 1][2] == FREE:
            seg.blocks[idx - 1][1] += seg.blocks[idx][1]
            del seg.blocks[idx]

    def step(self, seq_no: int) -> None:
        self.timeline.append((seq_no, self.reserved, self.allocated))


def replay_reference(requests, capacity: int | None = None,
                     max_split_size: int | None = None) -> dict:
    """Replay [{seq_no, kind, block_id, size, stream}] through the oracle.

    Returns {peak_reserved, peak_allocated, timeline, oom_seq_no}.
    On OOM the timeline covers requests up to (not including) the failure.
    """
    alloc = ReferenceAllocator(capacity=capacity, max_split_size=max_split_size)
    oom_seq = None
    for req in requests:
        kind = req["kind"].lower()
        seq_no = req["seq_no"]
        try:
            if kind == "alloc":
                alloc.allocate(req["block_id"], req["size"], req.get("stream", 0))
            elif kind == "free":
                alloc.free(req["block_id"])
            else:
                raise MalformedSequence(f"unknown request kind {req['kind']!r}")
        except OutOfMemory:
            oom_seq = seq_no
            break
        alloc.step(seq_no)
    return {
        "peak_reserved": alloc.peak_reserved,
        "peak_allocated": alloc.peak_allocated,
        "timeline": alloc.timeline,
        "oom_seq_no": oom_seq,
    }
