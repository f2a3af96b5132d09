"""Merkle tree primitives with domain-separated node hashing.

Leaf hash     = SHA-256(0x00 || leaf bytes)
Interior hash = SHA-256(0x01 || left || right)

The prefixes prevent second-preimage confusion between leaves and interior
nodes. Trees are left-balanced: pairing proceeds left to right and an odd
node at any level is promoted unchanged, which yields the same shape as the
classic certificate-transparency construction (split at the largest power
of two below n). Inclusion and consistency proofs follow that construction.
"""

from __future__ import annotations

import hashlib

from .errors import ValidationFailure

LEAF_PREFIX = b"\x00"
INTERIOR_PREFIX = b"\x01"


def leaf_hash(data: bytes) -> bytes:
    return hashlib.sha256(LEAF_PREFIX + data).digest()


def interior_hash(left: bytes, right: bytes) -> bytes:
    return hashlib.sha256(INTERIOR_PREFIX + left + right).digest()


def root_from_leaf_hashes(hashes: list[bytes]) -> bytes:
    """Root over already-hashed leaves; empty input hashes nothing."""
    if not hashes:
        return hashlib.sha256(b"").digest()
    level = list(hashes)
    while len(level) > 1:
        paired = [
            interior_hash(level[i], level[i + 1])
            for i in range(0, len(level) - 1, 2)
        ]
        if len(level) % 2 == 1:
            paired.append(level[-1])
        level = paired
    return level[0]


def _split_point(count: int) -> int:
    """Largest power of two strictly below count (count >= 2)."""
    return 1 << ((count - 1).bit_length() - 1)


def subtree_hash(hashes: list[bytes], lo: int, hi: int) -> bytes:
    """Root of the subtree over hashes[lo:hi] via the recursive split."""
    count = hi - lo
    if count == 1:
        return hashes[lo]
    k = _split_point(count)
    return interior_hash(
        subtree_hash(hashes, lo, lo + k), subtree_hash(hashes, lo + k, hi)
    )


def inclusion_path(index: int, hashes: list[bytes]) -> list[bytes]:
    """Audit path for the leaf at index within the full tree."""
    if not 0 <= index < len(hashes):
        raise ValidationFailure(
            f"inclusion index {index} out of range for tree of {len(hashes)}"
        )

    def walk(m: int, lo: int, hi: int) -> list[bytes]:
        count = hi - lo
        if count == 1:
            return []
        k = _split_point(count)
        if m < k:
            return walk(m, lo, lo + k) + [subtree_hash(hashes, lo + k, hi)]
        return walk(m - k, lo + k, hi) + [subtree_hash(hashes, lo, lo + k)]

    return walk(index, 0, len(hashes))


def verify_inclusion_path(
    leaf: bytes, index: int, tree_size: int, path: list[bytes], root: bytes
) -> bool:
    """Check an audit path against a root, without the full tree."""
    if index < 0 or tree_size <= 0 or index >= tree_size:
        return False
    node_index, last_index = index, tree_size - 1
    current = leaf
    for sibling in path:
        if last_index == 0:
            return False
        if node_index % 2 == 1 or node_index == last_index:
            current = interior_hash(sibling, current)
            if node_index % 2 == 0:
                while node_index % 2 == 0 and node_index != 0:
                    node_index >>= 1
                    last_index >>= 1
        else:
            current = interior_hash(current, sibling)
        node_index >>= 1
        last_index >>= 1
    return last_index == 0 and current == root

def consistency_path(old_size: int, hashes: list[bytes]) -> list[bytes]:
    """Proof that the tree over hashes extends the old_size-entry prefix."""
    new_size = len(hashes)
    if not 0 < old_size <= new_size:
        raise ValidationFailure(
            f"consistency sizes out of range: {old_size} -> {new_size}"
        )
    if old_size == new_size:
        return []

    def walk(m: int, lo: int, hi: int, complete: bool) -> list[bytes]:
        count = hi - lo
        if m == count:
            return [] if complete else [subtree_hash(hashes, lo, hi)]
        k = _split_point(count)
        if m <= k:
            return walk(m, lo, lo + k, complete) + [
                subtree_hash(hashes, lo + k, hi)
            ]
        return walk(m - k, lo + k, hi, False) + [subtree_hash(hashes, lo, lo + k)]

    return walk(old_size, 0, new_size, True)


def verify_consistency_path(
    old_size: int,
    new_size: int,
    old_root: bytes,
    new_root: bytes,
    path: list[bytes],
) -> bool:
    """Check that the new tree is an append-only extension of the old one."""
    if old_size <= 0 or new_size < old_size:
        return False
    if old_size == new_size:
        return not path and old_root == new_root
    if not path:
        return False
    steps = list(path)
    if old_size & (old_size - 1) == 0:  # old tree was a complete power of two
        steps = [old_root] + steps
    node_index, last_index = old_size - 1, new_size - 1
    while node_index % 2 == 1:
        node_index >>= 1
        last_index >>= 1
    old_current = new_current = steps[0]
    for sibling in steps[1:]:
        if last_index == 0:
            return False
        if node_index % 2 == 1 or node_index == last_index:
            old_current = interior_hash(sibling, old_current)
            new_current = interior_hash(sibling, new_current)
            if node_index % 2 == 0:
                while node_index % 2 == 0 and node_index != 0:
                    node_index >>= 1
                    last_index >>= 1
        else:
            new_current = interior_hash(new_current, sibling)
        node_index >>= 1
        last_index >>= 1
    return old_current == old_root and new_current == new_root and last_index == 0
