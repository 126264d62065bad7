"""Differentially private key-value store.

Composes the two-choice forest (:mod:`dpstore.mapping`) with a DP-RAM that
operates over a repertoire of buckets instead of single cells
(:class:`BucketRam`). A bucket is the path of forest nodes from one leaf to
its tree root; the server stores each node as one encrypted cell and a
bucket request expands into that fixed set of cells, so buckets overlap on
shared ancestors without duplicating storage.

Every get issues exactly two bucket reads (the key's two hashed buckets,
padded with a uniformly random bucket when they coincide); every put issues
the same two reads followed by two bucket updates, of which only the bucket
holding the key's slot actually changes content while the other re-uploads
what it already held. Client state is the bucket stash (with a freshness map
holding the authoritative copy of every node that lives in a stashed
bucket), plus the plaintext super root.

Node wire format: ``node_capacity`` fixed-size slots of
``key tag (16 bytes) || block``; an all-zero tag marks an empty slot, so
node plaintexts never reveal occupancy by length.
"""

from __future__ import annotations

import hashlib
import random
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

from .blockstore.array import MemoryArray, ServerArray
from .blockstore.cipher import AeadCipher, derive_subkey
from .dpram import RamTrace, RngBundle, bernoulli, default_stash_threshold, uniform_index
from .errors import CapacityError, ParameterError
from .mapping import (
    ForestLayout,
    MappingFn,
    NodeAddr,
    PlacementKind,
    choose_placement,
    key_bytes,
    layout_for,
    path_nodes,
)

__all__ = [
    "BucketRam",
    "Kvs",
    "KvsParams",
    "TAG_SIZE",
    "cell_addr",
    "forest_repertoire",
    "kvs_setup",
    "node_pack",
    "node_unpack",
]

TAG_SIZE = 16
EMPTY_TAG = bytes(TAG_SIZE)


def cell_addr(layout: ForestLayout, node: NodeAddr) -> int:
    """1-based server cell holding a node; nodes are laid out per tree,
    leaves first, each level above following in full."""
    offset = 0
    for height in range(node.height):
        offset += layout.tree_leaves >> height
    return node.tree * layout.nodes_per_tree + offset + node.index_in_level + 1


def forest_repertoire(layout: ForestLayout) -> list[tuple[int, ...]]:
    """Bucket id (1-based leaf index) -> the path's cell addresses."""
    return [
        tuple(cell_addr(layout, node) for node in path_nodes(layout, leaf))
        for leaf in range(layout.leaf_count)
    ]


def node_pack(slots: Sequence, node_capacity: int, block_size: int) -> bytes:
    """Serialize ``(tag, block) | None`` slots into the fixed node layout."""
    if len(slots) != node_capacity:
        raise ParameterError(f"expected {node_capacity} slots, got {len(slots)}")
    parts = []
    for slot in slots:
        if slot is None:
            parts.append(EMPTY_TAG)
            parts.append(bytes(block_size))
        else:
            tag, block = slot
            if len(tag) != TAG_SIZE or tag == EMPTY_TAG:
                raise ParameterError("slot tag must be 16 bytes and non-zero")
            if len(block) != block_size:
                raise ParameterError(f"slot block must be {block_size} bytes")
            parts.append(tag)
            parts.append(block)
    return b"".join(parts)


def node_unpack(plain: bytes, node_capacity: int, block_size: int) -> list:
    """Inverse of :func:`node_pack`."""
    stride = TAG_SIZE + block_size
    if len(plain) != node_capacity * stride:
        raise ParameterError(
            f"node plaintext of {len(plain)} bytes != {node_capacity * stride}"
        )
    slots = []
    for i in range(node_capacity):
        tag = plain[i * stride : i * stride + TAG_SIZE]
        if tag == EMPTY_TAG:
            slots.append(None)
        else:
            slots.append((tag, plain[i * stride + TAG_SIZE : (i + 1) * stride]))
    return slots


class BucketRam:
    """The stash DP-RAM run at bucket granularity over a fixed repertoire.

    ``repertoire[b-1]`` lists the cells of bucket ``b``; buckets may share
    cells. The client keeps a set of stashed bucket ids plus the freshness
    map ``client_cells``: the authoritative plaintext of every cell that
    belongs to at least one stashed bucket (reference-counted so entries
    retire exactly when their last stashed bucket is re-uploaded, at which
    point the server copy is fresh again).
    """

    def __init__(
        self,
        store: ServerArray,
        repertoire: Sequence[tuple[int, ...]],
        stash_prob: Fraction,
        cipher,
        rngs: RngBundle,
    ):
        widths = {len(cells) for cells in repertoire}
        if len(widths) != 1:
            raise ParameterError("all buckets must span the same number of cells")
        if not 0 < stash_prob <= 1:
            raise ParameterError(f"stash probability must be in (0, 1], got {stash_prob}")
        self.store = store
        self.repertoire = [tuple(cells) for cells in repertoire]
        self.p = Fraction(stash_prob)
        self.cipher = cipher
        self.rngs = rngs
        self.stashed: set[int] = set()
        self.client_cells: dict[int, bytes] = {}
        self._cell_refs: dict[int, int] = {}

    @property
    def bucket_count(self) -> int:
        return len(self.repertoire)

    @property
    def cells_per_bucket(self) -> int:
        return len(self.repertoire[0])

    def stashed_count(self) -> int:
        return len(self.stashed)

    def seed_stash(self, initial_plain: dict[int, bytes]) -> None:
        """Initial stash draw: each bucket enters independently with
        probability p, carrying the given cell plaintexts."""
        for bucket in range(1, self.bucket_count + 1):
            if bernoulli(self.rngs.setup_membership, self.p):
                cells = self.repertoire[bucket - 1]
                self._stash_insert(bucket, {c: initial_plain[c] for c in cells})

    def read(self, bucket: int) -> tuple[dict[int, bytes], RamTrace]:
        return self.query(bucket)

    def update(self, bucket: int, new_contents: dict[int, bytes]) -> tuple[dict[int, bytes], RamTrace]:
        return self.query(bucket, new_contents)

    def query(
        self, bucket: int, new_contents: dict[int, bytes] | None = None
    ) -> tuple[dict[int, bytes], RamTrace]:
        """One bucket query: download phase, then overwrite phase.

        Touches exactly 3 * cells_per_bucket cells whatever branch runs.
        Returns the bucket's current plaintext contents and the (d, o) pair
        of bucket indices the server observed.
        """
        b = self.bucket_count
        if not 1 <= bucket <= b:
            raise ParameterError(f"bucket {bucket} out of range [1, {b}]")
        cells = self.repertoire[bucket - 1]

        # Download phase.
        if bucket in self.stashed:
            d = uniform_index(self.rngs.download_pick, b)
            for cell in self.repertoire[d - 1]:
                self.store.download(cell)
            contents = {cell: self.client_cells[cell] for cell in cells}
            self._stash_remove(bucket)
        else:
            d = bucket
            contents = {}
            for cell in cells:
                raw = self.store.download(cell)
                # The freshness map overrides stale server copies of nodes
                # shared with stashed buckets.
                contents[cell] = (
                    self.client_cells[cell]
                    if cell in self.client_cells
                    else self.cipher.decrypt(raw)
                )

        # Updates take effect before anything is persisted.
        if new_contents is not None:
            if set(new_contents) != set(cells):
                raise ParameterError("new contents must cover exactly the bucket's cells")
            contents = dict(new_contents)

        # Overwrite phase.
        if bernoulli(self.rngs.stash_decision, self.p):
            self._stash_insert(bucket, contents)
            o = uniform_index(self.rngs.overwrite_pick, b)
            o_cells = self.repertoire[o - 1]
            fetched = {cell: self.store.download(cell) for cell in o_cells}
            for cell in o_cells:
                plain = self.client_cells.get(cell)
                if plain is None:
                    plain = self.cipher.decrypt(fetched[cell])
                self.store.upload(cell, self.cipher.encrypt(plain))
        else:
            o = bucket
            for cell in cells:
                self.store.download(cell)
            for cell in cells:
                self.store.upload(cell, self.cipher.encrypt(contents[cell]))
                if cell in self.client_cells:
                    self.client_cells[cell] = contents[cell]
        return contents, RamTrace(d, o)

    def _stash_insert(self, bucket: int, contents: dict[int, bytes]) -> None:
        self.stashed.add(bucket)
        for cell in self.repertoire[bucket - 1]:
            self._cell_refs[cell] = self._cell_refs.get(cell, 0) + 1
            self.client_cells[cell] = contents[cell]

    def _stash_remove(self, bucket: int) -> None:
        self.stashed.discard(bucket)
        for cell in self.repertoire[bucket - 1]:
            refs = self._cell_refs[cell] - 1
            if refs:
                self._cell_refs[cell] = refs
            else:
                del self._cell_refs[cell]
                del self.client_cells[cell]


@dataclass(frozen=True)
class KvsParams:
    """Capacity, forest geometry and bucket-stash parameters.

    ``uniform_shape`` makes gets issue the two fake updates a put would, so
    reads and writes become shape-identical at the cost of doubling read
    bandwidth.
    """

    layout: ForestLayout
    block_size: int = 1024
    bucket_stash_threshold: int | None = None
    uniform_shape: bool = False

    def __post_init__(self):
        if self.block_size < 1:
            raise ParameterError(f"block_size must be >= 1, got {self.block_size}")
        buckets = self.layout.leaf_count
        c = self.bucket_stash_threshold
        if c is None:
            object.__setattr__(
                self, "bucket_stash_threshold", default_stash_threshold(buckets)
            )
        elif not 1 <= c <= buckets:
            raise ParameterError(f"bucket stash threshold must be in [1, {buckets}]")

    @classmethod
    def create(
        cls,
        capacity: int,
        block_size: int = 1024,
        node_capacity: int = 4,
        phi_exponent: float = 1.5,
        bucket_stash_threshold: int | None = None,
        uniform_shape: bool = False,
    ) -> "KvsParams":
        return cls(
            layout=layout_for(capacity, node_capacity, phi_exponent),
            block_size=block_size,
            bucket_stash_threshold=bucket_stash_threshold,
            uniform_shape=uniform_shape,
        )

    @property
    def stash_prob(self) -> Fraction:
        return Fraction(self.bucket_stash_threshold, self.layout.leaf_count)

    @property
    def node_plain_size(self) -> int:
        return self.layout.node_capacity * (TAG_SIZE + self.block_size)

    @property
    def bucket_blocks(self) -> int:
        """s: blocks moved per bucket touch."""
        return self.layout.bucket_slots

    @property
    def blocks_per_get(self) -> int:
        queries = 4 if self.uniform_shape else 2
        return queries * 3 * self.bucket_blocks

    @property
    def blocks_per_put(self) -> int:
        return 4 * 3 * self.bucket_blocks


class Kvs:
    """One client session over a key-value store."""

    def __init__(
        self,
        params: KvsParams,
        master_key: bytes | None = None,
        rngs: RngBundle | None = None,
        store: ServerArray | None = None,
        cipher=None,
        pad_rng: random.Random | None = None,
    ):
        self.params = params
        layout = params.layout
        if cipher is None:
            if master_key is None:
                raise ParameterError("a master key or an explicit cipher is required")
            cipher = AeadCipher(derive_subkey(master_key, "kvs-node-cipher"))
        if master_key is None:
            tag_key = b"kvs-untagged"
            prf1, prf2 = b"kvs-prf-1", b"kvs-prf-2"
        else:
            tag_key = derive_subkey(master_key, "kvs-key-tag", TAG_SIZE)
            prf1 = derive_subkey(master_key, "kvs-choice-1", 16)
            prf2 = derive_subkey(master_key, "kvs-choice-2", 16)
        self._tag_key = tag_key
        self.mapping_fn = MappingFn(prf_key1=prf1, prf_key2=prf2, leaf_count=layout.leaf_count)
        record_size = params.node_plain_size + cipher.overhead
        if store is None:
            store = MemoryArray(layout.node_count, record_size)
        elif store.cells != layout.node_count or store.record_size != record_size:
            raise ParameterError(
                f"store geometry ({store.cells} cells of {store.record_size}) does not "
                f"match the layout ({layout.node_count} cells of {record_size})"
            )
        self.store = store
        if rngs is None:
            rngs = RngBundle.system()
        self.bucket_ram = BucketRam(
            store, forest_repertoire(layout), params.stash_prob, cipher, rngs
        )
        self.pad_rng = pad_rng if pad_rng is not None else random.SystemRandom()
        self.super_root: dict[bytes, bytes] = {}
        self._empty_node = node_pack(
            [None] * layout.node_capacity, layout.node_capacity, params.block_size
        )

    # -- setup -------------------------------------------------------------

    def initialize(self) -> None:
        """Upload fresh encryptions of empty nodes everywhere and draw the
        initial bucket stash."""
        cipher = self.bucket_ram.cipher
        for cell in range(1, self.store.cells + 1):
            self.store.upload(cell, cipher.encrypt(self._empty_node))
        initial = {cell: self._empty_node for cell in range(1, self.store.cells + 1)}
        self.bucket_ram.seed_stash(initial)

    # -- operations ----------------------------------------------------------

    def get(self, key) -> bytes | None:
        """Fetch a key's block, or None when absent.

        Issues exactly two bucket reads (plus two fake updates under
        ``uniform_shape``); server touches never depend on presence.
        """
        tag = self._key_tag(key)
        buckets = self._query_buckets(key)
        fetched: list[tuple[int, dict[int, bytes]]] = []
        found = None
        for bucket in buckets:
            contents, _ = self.bucket_ram.read(bucket)
            fetched.append((bucket, contents))
            located = self._find_slot(contents, tag)
            if located is not None and found is None:
                cell, slot_index, block = located
                found = block
        if found is None:
            found = self.super_root.get(key_bytes(key))
        if self.params.uniform_shape:
            for bucket, contents in fetched:
                self.bucket_ram.update(bucket, contents)
        return found

    def put(self, key, block: bytes) -> None:
        """Insert or update a key.

        Reads both buckets, applies the change client-side (in-place slot
        update, super-root update, or a fresh placement by the storing
        rule), then updates both buckets; the one not holding the key
        re-uploads unchanged contents.
        """
        if len(block) != self.params.block_size:
            raise ParameterError(
                f"block of {len(block)} bytes != block size {self.params.block_size}"
            )
        tag = self._key_tag(key)
        buckets = self._query_buckets(key)
        merged: dict[int, bytes] = {}
        for bucket in buckets:
            contents, _ = self.bucket_ram.read(bucket)
            merged.update(contents)

        located = self._find_slot(merged, tag)
        if located is not None:
            cell, slot_index, _ = located
            self._write_slot(merged, cell, slot_index, (tag, block))
        elif key_bytes(key) in self.super_root:
            self.super_root[key_bytes(key)] = block
        else:
            self._place_new(key, tag, block, merged)

        for bucket in buckets:
            cells = self.bucket_ram.repertoire[bucket - 1]
            self.bucket_ram.update(bucket, {cell: merged[cell] for cell in cells})

    def _place_new(self, key, tag: bytes, block: bytes, merged: dict[int, bytes]) -> None:
        layout = self.params.layout
        leaf_a, leaf_b = self.mapping_fn.map_key(key)

        def free_slot(node: NodeAddr) -> int | None:
            slots = self._node_slots(merged, cell_addr(layout, node))
            try:
                return slots.index(None)
            except ValueError:
                return None

        placement = choose_placement(layout, leaf_a, leaf_b, free_slot, len(self.super_root))
        if placement.kind is PlacementKind.NODE:
            cell = cell_addr(layout, placement.node)
            self._write_slot(merged, cell, placement.slot, (tag, block))
        elif placement.kind is PlacementKind.SUPER_ROOT:
            self.super_root[key_bytes(key)] = block
        else:
            raise CapacityError(
                f"both buckets full and super root at capacity "
                f"{layout.super_root_capacity}"
            )

    # -- helpers -------------------------------------------------------------

    def _key_tag(self, key) -> bytes:
        tag = hashlib.blake2b(key_bytes(key), key=self._tag_key, digest_size=TAG_SIZE).digest()
        # The all-zero tag is reserved for empty slots; 2**-128 events aside,
        # remap it deterministically.
        return tag if tag != EMPTY_TAG else b"\x01" + tag[1:]

    def _query_buckets(self, key) -> tuple[int, int]:
        leaf_a, leaf_b = self.mapping_fn.map_key(key)
        if leaf_a == leaf_b:
            # Pad the collapsed pair with a uniformly random second bucket.
            leaf_b = self.pad_rng.randrange(self.params.layout.leaf_count)
        return leaf_a + 1, leaf_b + 1

    def _node_slots(self, merged: dict[int, bytes], cell: int) -> list:
        return node_unpack(
            merged[cell], self.params.layout.node_capacity, self.params.block_size
        )

    def _write_slot(self, merged: dict[int, bytes], cell: int, slot_index: int, slot) -> None:
        slots = self._node_slots(merged, cell)
        slots[slot_index] = slot
        merged[cell] = node_pack(
            slots, self.params.layout.node_capacity, self.params.block_size
        )

    def _find_slot(self, contents: dict[int, bytes], tag: bytes):
        for cell, plain in contents.items():
            for slot_index, slot in enumerate(
                node_unpack(plain, self.params.layout.node_capacity, self.params.block_size)
            ):
                if slot is not None and slot[0] == tag:
                    return cell, slot_index, slot[1]
        return None

    # -- observability ---------------------------------------------------------

    def stats(self) -> dict:
        params = self.params
        return {
            "capacity": params.layout.requested,
            "buckets": params.layout.leaf_count,
            "bucket_stash_count": self.bucket_ram.stashed_count(),
            "freshness_map_cells": len(self.bucket_ram.client_cells),
            "super_root_load": len(self.super_root),
            "super_root_capacity": params.layout.super_root_capacity,
            "blocks_per_get": params.blocks_per_get,
            "blocks_per_put": params.blocks_per_put,
            "epsilon_multiplier_get": 4 if params.uniform_shape else 2,
            "epsilon_multiplier_put": 4,
            "store_downloads": self.store.downloads,
            "store_uploads": self.store.uploads,
        }


def kvs_setup(
    params: KvsParams,
    master_key: bytes | None = None,
    rngs: RngBundle | None = None,
    store: ServerArray | None = None,
    cipher=None,
    pad_rng: random.Random | None = None,
) -> Kvs:
    """Build and initialize a store: encrypted empty forest, seeded stash."""
    kvs = Kvs(params, master_key, rngs=rngs, store=store, cipher=cipher, pad_rng=pad_rng)
    kvs.initialize()
    return kvs
