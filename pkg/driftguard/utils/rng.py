"""
Seeded random streams.

Every experiment seed fans out into independent PCG64 substreams keyed by purpose, so
initialization, minibatch order and data sampling never share state. A substream is a pure
function of (seed, purpose, *extra): two methods trained under the same seed see the same
initial weights and the same minibatch order.
"""
import numpy as np

PURPOSES = {
    "init": 1,
    "shuffle": 2,
    "train": 3,
    "validation": 4,
    "deployment": 5,
    "sampling": 6,
    "bootstrap": 7,
}


def substream(seed: int, purpose: str, *extra: int) -> np.random.Generator:
    if purpose not in PURPOSES:
        raise KeyError(f"Unknown random stream purpose '{purpose}'")
    if seed < 0:
        raise ValueError("seed must be non-negative")
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF, PURPOSES[purpose], *[int(x) for x in extra]]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))
