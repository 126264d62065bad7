"""Overhead measurement with storage-layer ground truth.

Costs are counted in blocks touched at the server (the unit the schemes'
guarantees are stated in), sourced from the cell array's own counters rather
than scheme self-reports; wall time is recorded as a secondary figure. One
cell is one block for the flat schemes and ``node_capacity`` blocks for the
key-value store, whose cells are whole forest nodes.
"""

from __future__ import annotations

import bisect
import json
import math
import random
import time
from dataclasses import dataclass, field
from fractions import Fraction

from .blockstore.cipher import AeadCipher, TransparentCipher, generate_key
from .dpir import DpIrParams, ir_query
from .dpkvs import KvsParams, kvs_setup
from .dpram import RamParams, RngBundle, ram_setup
from .errors import ParameterError

__all__ = ["BenchResult", "fit_slope", "growth_curve", "run_bench"]

SCHEMES = ("dpir", "dpram", "dpkvs")
WORKLOADS = ("uniform", "zipf", "repeat_one")
BENCH_BLOCK_SIZE = 16
ZIPF_EXPONENT = 1.1


@dataclass
class BenchResult:
    """One run's measurements; counters come from the storage layer."""

    scheme: str
    workload: str
    n: int
    ops: int
    seed: int
    blocks_per_op_mean: float
    blocks_per_op_max: int
    round_trips_per_op: float
    stash_max: int
    super_root_max: int
    wall_time: float
    extra: dict = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        out = {
            "scheme": self.scheme,
            "workload": self.workload,
            "n": self.n,
            "ops": self.ops,
            "seed": self.seed,
            "blocks_per_op_mean": self.blocks_per_op_mean,
            "blocks_per_op_max": self.blocks_per_op_max,
            "round_trips_per_op": self.round_trips_per_op,
            "stash_max": self.stash_max,
            "super_root_max": self.super_root_max,
            "wall_time": self.wall_time,
        }
        out.update(self.extra)
        return out

    CSV_HEADER = (
        "scheme,workload,n,ops,seed,blocks_per_op_mean,blocks_per_op_max,"
        "round_trips_per_op,stash_max,super_root_max,wall_time"
    )

    def to_csv_row(self) -> str:
        return (
            f"{self.scheme},{self.workload},{self.n},{self.ops},{self.seed},"
            f"{self.blocks_per_op_mean},{self.blocks_per_op_max},"
            f"{self.round_trips_per_op},{self.stash_max},{self.super_root_max},"
            f"{self.wall_time:.3f}"
        )


class _Workload:
    """Deterministic index stream over [1, n] under one of three key laws."""

    def __init__(self, kind: str, n: int, rng: random.Random):
        if kind not in WORKLOADS:
            raise ParameterError(f"workload must be one of {WORKLOADS}, got {kind!r}")
        self.kind = kind
        self.n = n
        self.rng = rng
        self._zipf_cdf: list[float] | None = None
        if kind == "zipf":
            weights = [1.0 / (rank ** ZIPF_EXPONENT) for rank in range(1, n + 1)]
            total = 0.0
            cdf = []
            for w in weights:
                total += w
                cdf.append(total)
            self._zipf_cdf = [c / total for c in cdf]

    def next_index(self) -> int:
        if self.kind == "uniform":
            return self.rng.randrange(self.n) + 1
        if self.kind == "repeat_one":
            return 1
        return bisect.bisect_left(self._zipf_cdf, self.rng.random()) + 1


def run_bench(
    scheme: str,
    workload: str = "uniform",
    n: int = 1024,
    ops: int = 1000,
    seed: int = 0,
    alpha: float = 0.5,
    k: int | None = None,
    store=None,
    use_aead: bool = False,
) -> BenchResult:
    """Measure one scheme; deterministic given the seed (in-memory backend)."""
    if scheme not in SCHEMES:
        raise ParameterError(f"scheme must be one of {SCHEMES}, got {scheme!r}")
    if scheme == "dpir":
        return _bench_dpir(workload, n, ops, seed, alpha, k, store)
    if scheme == "dpram":
        return _bench_dpram(workload, n, ops, seed, store, use_aead)
    return _bench_dpkvs(workload, n, ops, seed, store, use_aead)


def _per_op_counters(store, fn, ops_iter) -> tuple[list[int], float]:
    counts = []
    start = time.perf_counter()
    for op in ops_iter:
        before = store.op_count
        fn(op)
        counts.append(store.op_count - before)
    return counts, time.perf_counter() - start


def _result(scheme, workload, n, ops, seed, counts, wall, blocks_per_cell=1,
            stash_max=0, super_root_max=0, extra=None) -> BenchResult:
    blocks = [c * blocks_per_cell for c in counts]
    return BenchResult(
        scheme=scheme,
        workload=workload,
        n=n,
        ops=ops,
        seed=seed,
        blocks_per_op_mean=sum(blocks) / len(blocks),
        blocks_per_op_max=max(blocks),
        round_trips_per_op=sum(counts) / len(counts),
        stash_max=stash_max,
        super_root_max=super_root_max,
        wall_time=wall,
        extra=extra or {},
    )


def _bench_dpir(workload, n, ops, seed, alpha, k, store) -> BenchResult:
    from .blockstore.array import MemoryArray
    from .dpram import derive_seed

    if k is None:
        k = max(1, min(n, 8))
    params = DpIrParams(n=n, alpha=alpha, k=k)
    if store is None:
        store = MemoryArray(n, BENCH_BLOCK_SIZE)
    rng = random.Random(derive_seed(seed, "dpir-query"))
    load = _Workload(workload, n, random.Random(derive_seed(seed, "workload")))
    store.reset_counters()
    hits = 0

    def one(op):
        nonlocal hits
        hits += ir_query(params, op, store, rng).hit

    counts, wall = _per_op_counters(store, one, (load.next_index() for _ in range(ops)))
    return _result(
        "dpir", workload, n, ops, seed, counts, wall,
        extra={"k": k, "alpha": alpha, "hits": hits},
    )


def _bench_dpram(workload, n, ops, seed, store, use_aead) -> BenchResult:
    from .dpram import derive_seed

    params = RamParams(n=n, block_size=BENCH_BLOCK_SIZE)
    cipher = AeadCipher(generate_key()) if use_aead else TransparentCipher()
    rngs = RngBundle.from_seed(derive_seed(seed, "dpram"))
    blocks = [bytes(BENCH_BLOCK_SIZE)] * n
    store, client = ram_setup(blocks, params, cipher=cipher, rngs=rngs, store=store)
    load = _Workload(workload, n, random.Random(derive_seed(seed, "workload")))
    op_rng = random.Random(derive_seed(seed, "opmix"))
    payload = b"\x5a" * BENCH_BLOCK_SIZE
    store.reset_counters()
    stash_max = client.stash_size()

    def one(index):
        nonlocal stash_max
        if op_rng.random() < 0.5:
            client.read(index)
        else:
            client.write(index, payload)
        stash_max = max(stash_max, client.stash_size())

    counts, wall = _per_op_counters(store, one, (load.next_index() for _ in range(ops)))
    return _result(
        "dpram", workload, n, ops, seed, counts, wall,
        stash_max=stash_max,
        extra={"stash_threshold": params.stash_threshold},
    )


def _bench_dpkvs(workload, n, ops, seed, store, use_aead) -> BenchResult:
    from .dpram import derive_seed

    params = KvsParams.create(n, block_size=BENCH_BLOCK_SIZE)
    cipher = None if use_aead else TransparentCipher()
    kvs = kvs_setup(
        params,
        master_key=generate_key(),
        rngs=RngBundle.from_seed(derive_seed(seed, "dpkvs")),
        store=store,
        cipher=cipher,
        pad_rng=random.Random(derive_seed(seed, "pad")),
    )
    # Keys draw from a pool sized well under capacity so puts stay in range.
    pool = max(16, n // 8)
    load = _Workload(workload, pool, random.Random(derive_seed(seed, "workload")))
    op_rng = random.Random(derive_seed(seed, "opmix"))
    payload = b"\xa5" * BENCH_BLOCK_SIZE
    kvs.store.reset_counters()
    stash_max = kvs.bucket_ram.stashed_count()
    super_max = 0
    get_counts: list[int] = []
    put_counts: list[int] = []

    def one(index):
        nonlocal stash_max, super_max
        key = f"key-{index}"
        before = kvs.store.op_count
        if op_rng.random() < 0.5:
            kvs.get(key)
            get_counts.append(kvs.store.op_count - before)
        else:
            kvs.put(key, payload)
            put_counts.append(kvs.store.op_count - before)
        stash_max = max(stash_max, kvs.bucket_ram.stashed_count())
        super_max = max(super_max, len(kvs.super_root))

    counts, wall = _per_op_counters(
        kvs.store, one, (load.next_index() for _ in range(ops))
    )
    t = params.layout.node_capacity
    return _result(
        "dpkvs", workload, n, ops, seed, counts, wall,
        blocks_per_cell=t,
        stash_max=stash_max,
        super_root_max=super_max,
        extra={
            "levels": params.layout.levels,
            "bucket_blocks": params.bucket_blocks,
            "blocks_per_get": (
                max(c * t for c in get_counts) if get_counts else 0
            ),
            "blocks_per_put": (
                max(c * t for c in put_counts) if put_counts else 0
            ),
            "get_blocks_constant": len({c for c in get_counts}) <= 1,
            "put_blocks_constant": len({c for c in put_counts}) <= 1,
        },
    )


def fit_slope(points: list[tuple[float, float]]) -> float:
    """Least-squares slope of y against x."""
    if len(points) < 2:
        raise ParameterError("slope needs at least two points")
    mean_x = sum(x for x, _ in points) / len(points)
    mean_y = sum(y for _, y in points) / len(points)
    num = sum((x - mean_x) * (y - mean_y) for x, y in points)
    den = sum((x - mean_x) ** 2 for x, _ in points)
    return num / den


def growth_curve(
    scheme: str,
    n_grid: list[int],
    ops_per_point: int = 500,
    seed: int = 0,
    workload: str = "uniform",
) -> dict:
    """Blocks/op across sizes plus a slope fit against log2(n).

    For the flat schemes the slope should be indistinguishable from zero;
    the key-value store's cost steps exactly when the forest gains a level.
    """
    results = [
        run_bench(scheme, workload=workload, n=n, ops=ops_per_point, seed=seed)
        for n in n_grid
    ]
    points = [(math.log2(r.n), r.blocks_per_op_mean) for r in results]
    slope = fit_slope(points)
    residuals = [
        y - (slope * (x - points[0][0]) + points[0][1]) for x, y in points
    ]
    return {
        "scheme": scheme,
        "slope_per_doubling": slope,
        "max_abs_residual": max(abs(r) for r in residuals),
        "results": results,
    }
