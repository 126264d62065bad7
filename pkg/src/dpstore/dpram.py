"""Errorless differentially private RAM with a probabilistic client stash.

Every block lives encrypted in one server cell; the client additionally
keeps each block in a local stash with independent probability ``p``. A
query runs two phases:

- download phase: if the block is stashed, pop it from the stash and
  download a uniformly random decoy cell; otherwise download the real cell.
- overwrite phase: with probability ``p`` the (possibly just written) block
  re-enters the stash and a uniformly random cell is downloaded,
  re-encrypted and re-uploaded; otherwise the real cell is downloaded,
  discarded, and a fresh encryption of the current value is uploaded.

The adversary sees the pair of touched indices ``(d, o)`` per query, three
cell operations flat. The transcript marginals have exact closed forms
(:func:`overwrite_marginal`, :func:`download_conditional`) that the audit
module checks against brute-force enumeration.

The stash probability is an exact rational realized by integer draws
(``randrange(p.denominator) < p.numerator``), never a float comparison, so
exact enumeration and the running scheme agree on every branch weight. The
draws are split over four named sub-streams (setup membership, decoy
download picks, stash decisions, decoy overwrite picks) so tests can pin any
one of them.
"""

from __future__ import annotations

import hashlib
import math
import random
import warnings
from dataclasses import dataclass
from enum import Enum
from fractions import Fraction
from typing import Literal, Sequence

from .blockstore.array import MemoryArray, ServerArray
from .blockstore.cipher import AeadCipher
from .errors import ParameterError

__all__ = [
    "PrevCase",
    "RamClient",
    "RamParams",
    "RamQuery",
    "RamTrace",
    "RngBundle",
    "bernoulli",
    "classify_prev_case",
    "derive_seed",
    "download_conditional",
    "overwrite_marginal",
    "ram_setup",
    "uniform_index",
]


def default_stash_threshold(n: int) -> int:
    """Default C = ceil(log2(n)^2); keeps C/n super-logarithmic in practice."""
    return max(1, math.ceil(math.log2(max(n, 2)) ** 2))


@dataclass(frozen=True)
class RamParams:
    """Size and stash parameters for one deployment.

    ``stash_threshold`` is the integer C compared against a uniform draw on
    [n] at every stash decision, so p = C/n exactly. ``stash_prob`` may be
    given instead as any Fraction in (0, 1] (audit instances use e.g. 1/2 at
    n = 3, where no integer C fits).
    """

    n: int
    stash_threshold: int | None = None
    block_size: int = 1024
    stash_prob: Fraction | None = None

    def __post_init__(self):
        if self.n < 1:
            raise ParameterError(f"n must be >= 1, got {self.n}")
        if self.block_size < 1:
            raise ParameterError(f"block_size must be >= 1, got {self.block_size}")
        if self.stash_prob is not None:
            if self.stash_threshold is not None:
                raise ParameterError("give stash_threshold or stash_prob, not both")
            p = Fraction(self.stash_prob)
        else:
            c = self.stash_threshold
            if c is None:
                c = default_stash_threshold(self.n)
                object.__setattr__(self, "stash_threshold", c)
            if not isinstance(c, int) or c < 1:
                raise ParameterError(f"stash threshold C must be a positive integer, got {c}")
            if c > self.n:
                raise ParameterError(f"stash threshold C={c} exceeds n={self.n}")
            p = Fraction(c, self.n)
        if not 0 < p <= 1:
            raise ParameterError(f"stash probability must be in (0, 1], got {p}")
        object.__setattr__(self, "stash_prob", p)
        if self.stash_threshold is not None and self.stash_threshold < default_stash_threshold(self.n):
            warnings.warn(
                f"C={self.stash_threshold} is below the guidance value "
                f"{default_stash_threshold(self.n)} = ceil(log2(n)^2); the stash "
                "bound analysis assumes C grows faster than log n",
                stacklevel=2,
            )

    @property
    def p(self) -> Fraction:
        return self.stash_prob  # type: ignore[return-value]


class RamTrace(tuple):
    """Adversary view of one query: (downloaded index, overwritten index)."""

    __slots__ = ()

    def __new__(cls, d: int, o: int):
        return super().__new__(cls, (d, o))

    @property
    def d(self) -> int:
        return self[0]

    @property
    def o(self) -> int:
        return self[1]


@dataclass(frozen=True)
class RamQuery:
    """One operation. Adjacency of two query sequences is Hamming distance 1
    over (index, op, payload) triples; traces depend on the index only."""

    index: int
    op: Literal["read", "write"] = "read"
    new_block: bytes | None = None

    def __post_init__(self):
        if self.op not in ("read", "write"):
            raise ParameterError(f"op must be 'read' or 'write', got {self.op!r}")
        if (self.op == "write") != (self.new_block is not None):
            raise ParameterError("new_block must be given exactly when op == 'write'")


def bernoulli(stream, p: Fraction) -> bool:
    """Exact rational Bernoulli via one integer draw."""
    return stream.randrange(p.denominator) < p.numerator


def uniform_index(stream, n: int) -> int:
    """Uniform draw from [1, n]."""
    return stream.randrange(n) + 1


def derive_seed(seed: int, label: str) -> int:
    """Mix a base seed and a label into an independent 64-bit stream seed."""
    digest = hashlib.blake2b(f"{seed}:{label}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "big")


@dataclass
class RngBundle:
    """The four named randomness streams a DP-RAM client consumes.

    Splitting them lets tests force one kind of draw (e.g. a setup that
    stashes nothing) without disturbing the others.
    """

    setup_membership: random.Random
    download_pick: random.Random
    stash_decision: random.Random
    overwrite_pick: random.Random

    _STREAMS = ("setup_membership", "download_pick", "stash_decision", "overwrite_pick")

    @classmethod
    def from_seed(cls, seed: int) -> "RngBundle":
        return cls(*(random.Random(derive_seed(seed, name)) for name in cls._STREAMS))

    @classmethod
    def system(cls) -> "RngBundle":
        return cls(*(random.SystemRandom() for _ in range(4)))


class RamClient:
    """Client state: the decryption key (via ``cipher``) plus the stash.

    One client serves one logical session; queries are strictly sequential.
    ``cipher=None`` runs a plaintext retrieval-only deployment (the scheme
    needs no encryption when overwrites are disabled) and refuses writes.
    """

    def __init__(self, params: RamParams, store: ServerArray, cipher, rngs: RngBundle):
        self.params = params
        self.store = store
        self.cipher = cipher
        self.rngs = rngs
        self.stash: dict[int, bytes] = {}

    def stash_size(self) -> int:
        return len(self.stash)

    def read(self, index: int) -> tuple[bytes, RamTrace]:
        return self.query(RamQuery(index, "read"))

    def write(self, index: int, block: bytes) -> tuple[bytes, RamTrace]:
        return self.query(RamQuery(index, "write", block))

    def query(self, q: RamQuery) -> tuple[bytes, RamTrace]:
        """Run one query; returns the block's current value and the trace."""
        n = self.params.n
        if not 1 <= q.index <= n:
            raise ParameterError(f"index {q.index} out of range [1, {n}]")
        if q.op == "write":
            if self.cipher is None:
                raise ParameterError("plaintext-readonly deployment refuses writes")
            if len(q.new_block) != self.params.block_size:
                raise ParameterError(
                    f"write payload of {len(q.new_block)} bytes != block size "
                    f"{self.params.block_size}"
                )

        # Download phase.
        if q.index in self.stash:
            d = uniform_index(self.rngs.download_pick, n)
            self.store.download(d)
            block = self.stash.pop(q.index)
        else:
            d = q.index
            block = self._decrypt(self.store.download(d))

        # Writes take effect here, before anything is persisted.
        if q.op == "write":
            block = q.new_block

        # Overwrite phase.
        if bernoulli(self.rngs.stash_decision, self.params.p):
            self.stash[q.index] = block
            o = uniform_index(self.rngs.overwrite_pick, n)
            plain = self._decrypt(self.store.download(o))
            self.store.upload(o, self._encrypt(plain))
        else:
            o = q.index
            self.store.download(o)
            self.store.upload(o, self._encrypt(block))
        return block, RamTrace(d, o)

    def _decrypt(self, cell: bytes) -> bytes:
        return cell if self.cipher is None else self.cipher.decrypt(cell)

    def _encrypt(self, block: bytes) -> bytes:
        if self.cipher is None:
            return block
        return self.cipher.encrypt(block)


def ram_setup(
    blocks: Sequence[bytes],
    params: RamParams,
    key: bytes | None = None,
    rngs: RngBundle | None = None,
    cipher=None,
    store: ServerArray | None = None,
) -> tuple[ServerArray, RamClient]:
    """Populate a server array and draw the initial stash.

    Cell i holds a fresh encryption of block i; each block independently
    enters the stash with probability p. ``cipher`` defaults to AES-GCM
    under ``key``; pass an explicit cipher (or ``cipher=None`` with
    ``key=None`` for plaintext-readonly mode) to override.
    """
    if len(blocks) != params.n:
        raise ParameterError(f"expected {params.n} blocks, got {len(blocks)}")
    for b in blocks:
        if len(b) != params.block_size:
            raise ParameterError(
                f"block of {len(b)} bytes != block size {params.block_size}"
            )
    if cipher is None and key is not None:
        cipher = AeadCipher(key)
    if rngs is None:
        rngs = RngBundle.system()
    overhead = 0 if cipher is None else cipher.overhead
    if store is None:
        store = MemoryArray(params.n, params.block_size + overhead)
    client = RamClient(params, store, cipher, rngs)
    for i, block in enumerate(blocks, start=1):
        store.upload(i, client._encrypt(block))
        if bernoulli(rngs.setup_membership, params.p):
            client.stash[i] = block
    return store, client


class PrevCase(Enum):
    """How the most recent earlier query to the same block ended.

    NEVER_QUERIED: no earlier query for this block exists.
    PREV_OVERWROTE_SAME: the previous query's overwrite index equals the
        block's own index.
    PREV_OVERWROTE_OTHER: the previous query's overwrite index was some
        other cell (which forces that query to have stashed the block).
    """

    NEVER_QUERIED = "never"
    PREV_OVERWROTE_SAME = "same"
    PREV_OVERWROTE_OTHER = "other"


def classify_prev_case(q: int, prev_overwrite: int | None) -> PrevCase:
    """Case from the observable trace: previous overwrite index or None."""
    if prev_overwrite is None:
        return PrevCase.NEVER_QUERIED
    if prev_overwrite == q:
        return PrevCase.PREV_OVERWROTE_SAME
    return PrevCase.PREV_OVERWROTE_OTHER


def overwrite_marginal(n: int, p: Fraction, q: int, o: int) -> Fraction:
    """Exact Pr[overwrite index = o] for a query on block q.

    (1-p) + p/n when o == q (no-stash branch is deterministic, stash branch
    picks uniformly), p/n otherwise. Independent of all history.
    """
    _check_indices(n, q, o)
    p = Fraction(p)
    if o == q:
        return (1 - p) + Fraction(p, n)
    return Fraction(p, n)


def download_conditional(n: int, p: Fraction, case: PrevCase, q: int, d: int) -> Fraction:
    """Exact Pr[download index = d | overwrite index at the previous query
    to the same block] for a query on block q.

    The joint probabilities of (previous overwrite, this download) are:

        never queried, d == q:             (1-p) + p/n
        never queried, d != q:             p/n
        prev overwrote q itself, d == q:   (1-p) + p/n^2
        prev overwrote q itself, d != q:   p/n^2
        prev overwrote another cell:       p/n^2  (any d)

    The two conditioned cases divide the joint by the matching overwrite
    marginal ((1-p) + p/n, resp. p/n).
    """
    _check_indices(n, q, d)
    p = Fraction(p)
    if case is PrevCase.NEVER_QUERIED:
        # Stash membership comes straight from setup: in with probability p.
        return overwrite_marginal(n, p, q, d)
    if case is PrevCase.PREV_OVERWROTE_SAME:
        marginal = (1 - p) + Fraction(p, n)
        joint = (1 - p) + Fraction(p, n * n) if d == q else Fraction(p, n * n)
        return joint / marginal
    if case is PrevCase.PREV_OVERWROTE_OTHER:
        # The block is certainly stashed, so the decoy download is uniform.
        return Fraction(1, n)
    raise ParameterError(f"unknown case {case!r}")


def _check_indices(n: int, *indices: int) -> None:
    for i in indices:
        if not 1 <= i <= n:
            raise ParameterError(f"index {i} out of range [1, {n}]")
