"""Splittable random-number streams.

Every stochastic routine in the package draws from a stream derived from
``(master_seed, tag, index)`` through :class:`numpy.random.SeedSequence`
spawn keys, so replicate ``r`` of an experiment sees the same randomness
no matter how replicates are batched or scheduled.  Batched Monte Carlo
routines consume one stream per fixed-size chunk of ``REPLICATE_CHUNK``
replicates (chunk ``c`` covers replicates ``[c * CHUNK, (c+1) * CHUNK)``),
which keeps results byte-identical across worker counts.
"""

from __future__ import annotations

import numpy as np

# Chunk size for vectorized Monte Carlo batches. Fixed: results must not
# depend on thread count or scheduling.
REPLICATE_CHUNK = 1 << 16

# Stream tags, one per independent consumer of randomness.
TAG_MORAN = 1
TAG_ASG = 2
TAG_PATHWISE = 3
TAG_SDE = 4
TAG_LIMIT_CHAIN = 5
TAG_CONVERGENCE_MORAN = 6
TAG_CONVERGENCE_SDE = 7
TAG_FIXATION_MC = 8
TAG_KS_BOOTSTRAP = 9
TAG_MORAN_PATH = 10
TAG_SDE_PATH = 11
TAG_CHAIN_PATH = 12
TAG_CONSISTENCY = 13
TAG_LINECOUNT_PATH = 14

# Chunk size for per-replicate (non-vectorized) Monte Carlo loops.
PATHWISE_CHUNK = 2048

SEED_RULE = (
    "stream(*key) = default_rng(SeedSequence(seed, spawn_key=key)); key starts "
    "with a fixed per-consumer tag; batched routines append one chunk index "
    f"per {REPLICATE_CHUNK} replicates"
)


def substream(seed: int, *key: int) -> np.random.Generator:
    """Return the generator for stream ``(seed, *key)``."""
    ss = np.random.SeedSequence(entropy=seed, spawn_key=tuple(key))
    return np.random.default_rng(ss)


def chunk_bounds(replicates: int) -> list[tuple[int, int, int]]:
    """Split ``replicates`` into fixed-size chunks.

    Returns tuples ``(chunk_index, start, stop)``.
    """
    out = []
    c = 0
    start = 0
    while start < replicates:
        stop = min(start + REPLICATE_CHUNK, replicates)
        out.append((c, start, stop))
        c += 1
        start = stop
    return out


def pathwise_chunks(replicates: int) -> list[tuple[int, int]]:
    """Fixed-size (start, stop) ranges for per-replicate loops."""
    return [
        (start, min(start + PATHWISE_CHUNK, replicates))
        for start in range(0, replicates, PATHWISE_CHUNK)
    ]


def run_jobs(fn, jobs: list, threads: int) -> list:
    """Apply ``fn`` to each job, optionally on a process pool.

    Results are returned in job order, so the output is identical for any
    worker count (each job derives its randomness from its own stream).
    """
    if threads <= 1 or len(jobs) <= 1:
        return [fn(job) for job in jobs]
    from concurrent.futures import ProcessPoolExecutor

    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, jobs))
