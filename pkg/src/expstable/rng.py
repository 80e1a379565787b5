"""Counter-based seed derivation and block-parallel replica loops.

Every random stream is ``PCG64(SeedSequence(seed, spawn_key=keys))``: the
key tuple plays the role of a counter, so stream ``(seed, 3)`` is the same
whatever order or process it is generated in. String keys are mapped to
integers with CRC32.

Replica loops are cut into fixed-size blocks and block ``j`` draws from
stream ``(seed, j)``. Results therefore depend on ``(seed, block_size)``
but not on the number of workers.
"""

from __future__ import annotations

import os
import zlib
from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Sequence

import numpy as np

WORKERS_ENV = "EXPSTABLE_WORKERS"


def _key(k) -> int:
    if isinstance(k, str):
        return zlib.crc32(k.encode())
    k = int(k)
    if k < 0:
        raise ValueError("seed keys must be non-negative")
    return k


def seed_sequence(seed: int, *keys) -> np.random.SeedSequence:
    if seed is None:
        raise ValueError("a seed is required; pass one explicitly")
    return np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(_key(k) for k in keys))


def generator(seed: int, *keys) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed_sequence(seed, *keys)))


def derive_seed(seed: int, *keys) -> int:
    """A 64-bit child seed; ``derive_seed(s, a, b)`` is a pure function."""
    return int(seed_sequence(seed, *keys).generate_state(1, np.uint64)[0])


def fresh_seed() -> int:
    return int(np.random.SeedSequence().generate_state(1, np.uint64)[0])


def default_workers() -> int:
    env = os.environ.get(WORKERS_ENV)
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def blocks(n: int, block_size: int) -> list[tuple[int, int]]:
    return [(a, min(a + block_size, n)) for a in range(0, n, block_size)]


def map_blocks(fn: Callable[[int, np.random.Generator], object], n: int, seed: int,
               block_size: int, workers: int | None = 1) -> list:
    """Apply ``fn(count, rng)`` to each block of replicas, in block order.

    ``fn`` must be picklable when ``workers > 1``.
    """
    spans = blocks(n, block_size)
    seeds = [derive_seed(seed, j) for j in range(len(spans))]
    workers = default_workers() if workers is None else workers
    if workers <= 1 or len(spans) <= 1:
        return [_run_block(fn, b - a, s) for (a, b), s in zip(spans, seeds)]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_block, [fn] * len(spans), [b - a for a, b in spans], seeds))


def _run_block(fn, count: int, seed: int):
    return fn(count, generator(seed))


def poisson_inverse(rng: np.random.Generator, mean) -> np.ndarray:
    """Poisson variates by CDF inversion of one uniform each.

    Consumes exactly one uniform per variate, so the stream position never
    depends on the values drawn.
    """
    from scipy.stats import poisson

    mean = np.asarray(mean, dtype=np.float64)
    u = rng.random(mean.shape)
    u = np.maximum(u, np.finfo(float).tiny)
    out = poisson.ppf(u, mean)
    return np.where(mean > 0, out, 0).astype(np.int64)


def stack(parts: Sequence[np.ndarray]) -> np.ndarray:
    return np.concatenate(parts) if parts else np.empty(0)
