"""Random well-formed request-sequence generator.

Used by the equivalence suite (optimized simulator vs naive reference)
and by the CLI selftest. Sequences are well-formed by construction:
every free names a live handle, no handle is reused.
"""

from __future__ import annotations

import random

from .units import MIB


def random_sequence(rng: random.Random, max_requests: int = 200,
                    max_size: int = 64 * MIB) -> list[dict]:
    """One well-formed sequence of allocs and frees of random sizes."""
    n = rng.randint(1, max_requests)
    live: list[int] = []
    next_id = 0
    requests: list[dict] = []
    for _ in range(n):
        do_free = live and (rng.random() < 0.45 or len(live) > 40)
        if do_free:
            idx = rng.randrange(len(live))
            live[idx], live[-1] = live[-1], live[idx]
            block_id = live.pop()
            requests.append({"seq_no": len(requests), "kind": "free",
                             "block_id": block_id})
        else:
            size = rng.randint(1, max_size)
            if rng.random() < 0.3:
                # exercise boundary-adjacent sizes where branches flip
                size = rng.choice([1, 511, 512, 513, 1 * MIB, 1 * MIB + 1,
                                   2 * MIB, 10 * MIB, 10 * MIB + 1, 20 * MIB])
            requests.append({"seq_no": len(requests), "kind": "alloc",
                             "block_id": next_id, "size": size})
            live.append(next_id)
            next_id += 1
    return requests


def random_config(rng: random.Random) -> dict:
    """Capacity / split-threshold parameters for one equivalence run."""
    capacity = None
    if rng.random() < 0.5:
        capacity = rng.randint(20 * MIB, 512 * MIB)
    max_split = None
    if rng.random() < 0.4:
        max_split = rng.randint(20 * MIB, 128 * MIB)
    return {"capacity": capacity, "max_split_size": max_split}
