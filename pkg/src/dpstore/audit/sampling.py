"""Monte Carlo companions to the exact enumerators.

Trials are grouped into chunks; each chunk draws from its own seed-derived
stream, so a run is reproducible from (seed, trials, chunk_size) alone and
can be split across workers by partitioning chunks — merging results is
just summing counters. Estimated distributions store exact empirical
frequencies (count / trials).
"""

from __future__ import annotations

import random
from fractions import Fraction
from typing import Callable, Hashable, Sequence

from ..blockstore.cipher import TransparentCipher
from ..dpram import RamParams, RamQuery, RngBundle, derive_seed, ram_setup
from ..errors import ParameterError
from .exact import TraceDistribution

__all__ = ["empirical_distribution", "ir_set_runner", "ram_trace_runner"]

DEFAULT_CHUNK = 20_000


def empirical_distribution(
    run_once: Callable[[random.Random], Hashable],
    trials: int,
    seed: int,
    n: int = 0,
    p=Fraction(0),
    queries: Sequence[int] = (),
    chunk_size: int = DEFAULT_CHUNK,
) -> TraceDistribution:
    """Estimate a transcript distribution from ``trials`` runs.

    ``run_once`` receives the chunk's stream and returns one hashable
    transcript. Instance metadata (n, p, queries) is carried through for
    comparisons against exact distributions.
    """
    if trials < 1:
        raise ParameterError(f"trials must be >= 1, got {trials}")
    counts: dict[Hashable, int] = {}
    done = 0
    chunk_index = 0
    while done < trials:
        rng = random.Random(derive_seed(seed, f"chunk-{chunk_index}"))
        for _ in range(min(chunk_size, trials - done)):
            trace = run_once(rng)
            counts[trace] = counts.get(trace, 0) + 1
        done += min(chunk_size, trials - done)
        chunk_index += 1
    probs = {trace: Fraction(c, trials) for trace, c in counts.items()}
    return TraceDistribution(
        probs=probs,
        exact=False,
        n=n,
        p=Fraction(p),
        queries=tuple(queries),
        trials=trials,
    )


def ram_trace_runner(
    n: int,
    p,
    queries: Sequence[int],
    block_size: int = 16,
) -> Callable[[random.Random], tuple]:
    """Build a one-trial runner: fresh setup plus the query sequence, on the
    real client under the transparent cipher (ciphertexts are excluded from
    audited transcripts).

    All four client streams draw from the chunk rng; stream separation only
    matters when a test needs to pin one kind of draw.
    """
    params = RamParams(n=n, stash_prob=Fraction(p), block_size=block_size)
    blocks = [i.to_bytes(4, "big").rjust(block_size, b"\0") for i in range(1, n + 1)]
    query_objs = [RamQuery(q) for q in queries]

    def run_once(rng: random.Random) -> tuple:
        rngs = RngBundle(rng, rng, rng, rng)
        _, client = ram_setup(blocks, params, cipher=TransparentCipher(rng=rng), rngs=rngs)
        query = client.query
        return tuple(query(q)[1] for q in query_objs)

    return run_once


def ir_set_runner(params, index: int) -> Callable[[random.Random], tuple]:
    """One-trial runner for the retrieval scheme's download set."""
    from ..dpir import sample_download_set

    def run_once(rng: random.Random) -> tuple:
        _, transcript = sample_download_set(params, index, rng)
        return transcript

    return run_once
