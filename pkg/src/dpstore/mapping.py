"""Oblivious two-choice hashing over a forest of binary trees.

Keys hash to two leaves (buckets); a bucket's storage is the whole path from
its leaf up to its tree root, and every node on the way holds a constant
number of slots. Placement always takes the lowest-height free slot across
the two paths, ties going to the lower leaf index, so bucket contents stay
uniform in shape and lookups can scan a fixed node set regardless of
occupancy. Keys that find both paths full land in a client-resident super
root shared by all trees; the scheme fails only when that also overflows,
which the load analysis makes negligibly rare.

The load reference sequence beta tracks how many nodes can be completely
full per level: beta_0 = n / (e * 3^4) and
beta_{i+1} = (e / n) * beta_i^2 * 4^{i+1}, with the closed form
beta_i = (n / e) * (2/3)^(2^(i+2)) * (1/2)^(2(i+2)). The rational part is
computed exactly so the recurrence/closed-form identity is testable without
tolerances.
"""

from __future__ import annotations

import hashlib
import math
import secrets
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction

from .errors import ParameterError

__all__ = [
    "Forest",
    "ForestLayout",
    "MappingFn",
    "NodeAddr",
    "Placement",
    "PlacementKind",
    "beta",
    "beta_closed_scaled",
    "beta_recurrence_scaled",
    "choose_placement",
    "key_bytes",
    "last_level_with_beta_at_least",
    "layout_for",
    "path_nodes",
]

DEFAULT_NODE_CAPACITY = 4
DEFAULT_PHI_EXPONENT = 1.5


@dataclass(frozen=True)
class ForestLayout:
    """Geometry of the forest.

    ``leaf_count`` is the bucket count: the requested capacity rounded up to
    a whole number of trees. Heights run 0 (leaves) .. levels-1 (tree root).
    """

    requested: int
    tree_leaves: int       # L, a power of two
    tree_count: int        # T
    node_capacity: int     # t slots per node
    super_root_capacity: int  # phi

    def __post_init__(self):
        if self.tree_leaves < 2 or self.tree_leaves & (self.tree_leaves - 1):
            raise ParameterError(f"tree_leaves must be a power of two >= 2, got {self.tree_leaves}")
        if self.tree_count < 1:
            raise ParameterError(f"tree_count must be >= 1, got {self.tree_count}")
        if self.node_capacity < 1:
            raise ParameterError(f"node_capacity must be >= 1, got {self.node_capacity}")
        if self.super_root_capacity < 1:
            raise ParameterError(f"super_root_capacity must be >= 1")

    @property
    def leaf_count(self) -> int:
        return self.tree_count * self.tree_leaves

    @property
    def levels(self) -> int:
        return self.tree_leaves.bit_length()  # log2(L) + 1

    @property
    def nodes_per_tree(self) -> int:
        return 2 * self.tree_leaves - 1

    @property
    def node_count(self) -> int:
        return self.tree_count * self.nodes_per_tree

    @property
    def slot_count(self) -> int:
        return self.node_count * self.node_capacity

    @property
    def bucket_slots(self) -> int:
        """Blocks per bucket: s = t * levels."""
        return self.node_capacity * self.levels


def layout_for(
    n: int,
    node_capacity: int = DEFAULT_NODE_CAPACITY,
    phi_exponent: float = DEFAULT_PHI_EXPONENT,
) -> ForestLayout:
    """Standard layout: trees of L = smallest power of two >= log2(n) leaves,
    super root capacity ceil(log2(n) ** phi_exponent)."""
    if n < 16:
        raise ParameterError(f"capacity below 16 degenerates the forest, got {n}")
    log_n = math.log2(n)
    tree_leaves = 2
    while tree_leaves < log_n:
        tree_leaves *= 2
    tree_count = math.ceil(n / tree_leaves)
    phi = math.ceil(log_n ** phi_exponent)
    return ForestLayout(
        requested=n,
        tree_leaves=tree_leaves,
        tree_count=tree_count,
        node_capacity=node_capacity,
        super_root_capacity=phi,
    )


@dataclass(frozen=True, order=True)
class NodeAddr:
    """A node: which tree, how high, and which node within that level."""

    tree: int
    height: int
    index_in_level: int

    def validate(self, layout: ForestLayout) -> "NodeAddr":
        if not 0 <= self.tree < layout.tree_count:
            raise ParameterError(f"tree {self.tree} out of range")
        if not 0 <= self.height < layout.levels:
            raise ParameterError(f"height {self.height} out of range")
        if not 0 <= self.index_in_level < layout.tree_leaves >> self.height:
            raise ParameterError(f"index {self.index_in_level} out of range at height {self.height}")
        return self


def path_nodes(layout: ForestLayout, leaf: int) -> list[NodeAddr]:
    """Nodes of bucket ``leaf`` (0-based), from height 0 up to the tree root."""
    if not 0 <= leaf < layout.leaf_count:
        raise ParameterError(f"leaf {leaf} out of range [0, {layout.leaf_count})")
    tree, index = divmod(leaf, layout.tree_leaves)
    nodes = []
    for height in range(layout.levels):
        nodes.append(NodeAddr(tree, height, index))
        index >>= 1
    return nodes


def key_bytes(key) -> bytes:
    """Canonical byte form of a universe key (bytes, str or int)."""
    if isinstance(key, bytes):
        return key
    if isinstance(key, str):
        return key.encode()
    if isinstance(key, int):
        return key.to_bytes((max(key.bit_length(), 1) + 7) // 8, "big", signed=key < 0)
    raise ParameterError(f"unsupported key type {type(key).__name__}")


@dataclass(frozen=True)
class MappingFn:
    """Two keyed hashes mapping a universe key to its pair of leaves.

    The hash is a keyed cryptographic hash truncated to 64 bits, reduced mod
    the leaf count; the construction is swappable as long as the output pair
    is deterministic per key pair and uniform per coordinate.
    """

    prf_key1: bytes
    prf_key2: bytes
    leaf_count: int

    @classmethod
    def generate(cls, leaf_count: int, rng=None) -> "MappingFn":
        draw = (lambda: rng.randbytes(16)) if rng is not None else (lambda: secrets.token_bytes(16))
        return cls(prf_key1=draw(), prf_key2=draw(), leaf_count=leaf_count)

    def _leaf(self, prf_key: bytes, data: bytes) -> int:
        digest = hashlib.blake2b(data, key=prf_key, digest_size=8).digest()
        return int.from_bytes(digest, "big") % self.leaf_count

    def map_key(self, key) -> tuple[int, int]:
        """The key's two candidate leaves (0-based); they may coincide."""
        data = key_bytes(key)
        return self._leaf(self.prf_key1, data), self._leaf(self.prf_key2, data)


class PlacementKind(Enum):
    NODE = "node"
    SUPER_ROOT = "super_root"
    FULL = "full"


@dataclass(frozen=True)
class Placement:
    kind: PlacementKind
    node: NodeAddr | None = None
    slot: int | None = None

    @property
    def failed(self) -> bool:
        return self.kind is PlacementKind.FULL


def choose_placement(
    layout: ForestLayout,
    leaf_a: int,
    leaf_b: int,
    free_slot,
    super_root_load: int,
) -> Placement:
    """The storing rule, shared by the local forest and the key-value store.

    ``free_slot(node) -> int | None`` reports the first free slot index of a
    node. Scans heights bottom-up; at equal height the node on the
    lower-indexed leaf's path wins; a doubled path is scanned once.
    """
    path_a = path_nodes(layout, leaf_a)
    path_b = path_nodes(layout, leaf_b)
    if leaf_b < leaf_a:
        path_a, path_b = path_b, path_a
    for height in range(layout.levels):
        candidates = [path_a[height]]
        if path_b[height] != path_a[height]:
            candidates.append(path_b[height])
        for node in candidates:
            slot = free_slot(node)
            if slot is not None:
                return Placement(PlacementKind.NODE, node, slot)
    if super_root_load < layout.super_root_capacity:
        return Placement(PlacementKind.SUPER_ROOT)
    return Placement(PlacementKind.FULL)


class Forest:
    """Local in-memory forest state: nodes, super root, and the counters the
    load experiments read."""

    def __init__(self, layout: ForestLayout, mapping_fn: MappingFn):
        if mapping_fn.leaf_count != layout.leaf_count:
            raise ParameterError(
                f"mapping function targets {mapping_fn.leaf_count} leaves, "
                f"layout has {layout.leaf_count}"
            )
        self.layout = layout
        self.mapping_fn = mapping_fn
        # Only touched nodes materialize; absent means all slots empty.
        self._nodes: dict[NodeAddr, list] = {}
        self.super_root: dict = {}
        self.keys_stored = 0

    def _slots(self, node: NodeAddr) -> list:
        slots = self._nodes.get(node)
        if slots is None:
            slots = [None] * self.layout.node_capacity
            self._nodes[node] = slots
        return slots

    def _free_slot(self, node: NodeAddr) -> int | None:
        slots = self._nodes.get(node)
        if slots is None:
            return 0
        try:
            return slots.index(None)
        except ValueError:
            return None

    def store(self, key, block) -> Placement:
        """Place a new key (the caller guarantees it is not already stored)."""
        leaf_a, leaf_b = self.mapping_fn.map_key(key)
        placement = choose_placement(
            self.layout, leaf_a, leaf_b, self._free_slot, len(self.super_root)
        )
        if placement.kind is PlacementKind.NODE:
            self._slots(placement.node)[placement.slot] = (key, block)
            self.keys_stored += 1
        elif placement.kind is PlacementKind.SUPER_ROOT:
            self.super_root[key] = block
            self.keys_stored += 1
        return placement

    def nodes_probed(self, key) -> list[NodeAddr]:
        """The fixed node sequence a lookup reads: both full paths, in order.

        Always 2 * levels entries, independent of occupancy or outcome
        (shared ancestors appear once per path)."""
        leaf_a, leaf_b = self.mapping_fn.map_key(key)
        return path_nodes(self.layout, leaf_a) + path_nodes(self.layout, leaf_b)

    def lookup(self, key) -> Placement | None:
        """Scan both paths and the super root; None when absent."""
        found = None
        seen = set()
        for node in self.nodes_probed(key):
            if node in seen:
                continue
            seen.add(node)
            slots = self._nodes.get(node)
            if slots is None:
                continue
            for slot_index, slot in enumerate(slots):
                if slot is not None and slot[0] == key and found is None:
                    found = Placement(PlacementKind.NODE, node, slot_index)
        if found is None and key in self.super_root:
            return Placement(PlacementKind.SUPER_ROOT)
        return found

    def block_at(self, placement: Placement, key=None):
        if placement.kind is PlacementKind.NODE:
            return self._nodes[placement.node][placement.slot][1]
        if placement.kind is PlacementKind.SUPER_ROOT:
            return self.super_root[key]
        raise ParameterError("placement carries no block")

    def level_fill_histogram(self) -> list[int]:
        """Per height, how many nodes have every slot occupied."""
        counts = [0] * self.layout.levels
        for node, slots in self._nodes.items():
            if None not in slots:
                counts[node.height] += 1
        return counts

    def occupied_slots(self) -> int:
        return sum(
            sum(1 for slot in slots if slot is not None)
            for slots in self._nodes.values()
        )

    def max_height_used(self) -> int:
        used = [
            node.height
            for node, slots in self._nodes.items()
            if any(slot is not None for slot in slots)
        ]
        return max(used, default=-1)


def beta(i: int, n: int) -> float:
    """Closed-form level-load reference; may underflow to 0.0 for large i."""
    if i < 0:
        raise ParameterError(f"level must be >= 0, got {i}")
    return n / math.e * float(beta_closed_scaled(i))


def beta_closed_scaled(i: int) -> Fraction:
    """Exact rational part of beta: beta_i * e / n."""
    return Fraction(2, 3) ** (2 ** (i + 2)) * Fraction(1, 2) ** (2 * (i + 2))


def beta_recurrence_scaled(i: int) -> Fraction:
    """Same quantity built from the recurrence; must equal the closed form."""
    value = Fraction(1, 81)  # beta_0 = n / (e * 3^4)
    for level in range(i):
        value = value * value * Fraction(4) ** (level + 1)
    return value


def last_level_with_beta_at_least(n: int, threshold: float) -> int:
    """Largest i with beta_i >= threshold, or -1 when even beta_0 is below."""
    i = -1
    while beta(i + 1, n) >= threshold:
        i += 1
    return i
