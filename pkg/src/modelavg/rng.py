"""Counter-based random streams and deterministic fold assignment.

Every stochastic routine in the package draws from a Philox generator
keyed by (seed, stream), so Monte Carlo run r can use stream r and the
results do not depend on scheduling or worker count.
"""

from __future__ import annotations

import numpy as np

__all__ = ["child_seed", "kfold_split", "make_rng"]


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Generator for the given (seed, stream) pair; identical on every platform."""
    return np.random.Generator(
        np.random.Philox(np.random.SeedSequence(seed, spawn_key=(stream,)))
    )


def child_seed(seed: int, *key: int) -> int:
    """Derive a subordinate integer seed from a seed and an index path."""
    ss = np.random.SeedSequence(seed, spawn_key=tuple(int(k) for k in key))
    return int(ss.generate_state(1, np.uint64)[0])


def kfold_split(n: int, k: int, seed: int) -> np.ndarray:
    """Assign each of n observations to one of k folds.

    Fold sizes differ by at most one; the shuffle is a deterministic
    function of the seed.
    """
    if not 2 <= k <= n:
        raise ValueError(f"fold count must satisfy 2 <= k <= n, got k={k}, n={n}")
    perm = make_rng(seed).permutation(n)
    fold = np.empty(n, dtype=np.int64)
    sizes = [n // k + (1 if i < n % k else 0) for i in range(k)]
    pos = 0
    for i, size in enumerate(sizes):
        fold[perm[pos:pos + size]] = i
        pos += size
    return fold
