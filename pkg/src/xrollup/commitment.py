"""Hashing, append-only Merkle trees, and a key-value state trie.

Commitment rules (fixed project-wide):

- Hash function: SHA-256. All digests are 32 bytes.
- Tuple hashing: every field is length-prefixed (u64 big-endian) before
  concatenation, so field boundaries are never ambiguous.
- Append-only tree (``AppendTree``): binary Merkle tree over the leaf
  sequence, odd node duplicated at each level. The root additionally
  commits to the leaf count, so sequences like ``[a, b, c]`` and
  ``[a, b, c, c]`` cannot collide. Empty tree root is ``sha256(b"")``.
- State trie (``StateTrie``): binary Merkle tree over entries sorted by
  key. The root depends only on the set of ``(key, value)`` pairs, never
  on insertion order. Membership proofs carry the sibling path plus the
  entry count and fold back to the root.

Domain separation: ``0x00`` leaf, ``0x01`` interior node, ``0x02`` root
tag for AppendTree, ``0x03`` root tag for StateTrie.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

DIGEST_SIZE = 32

_LEAF_TAG = b"\x00"
_NODE_TAG = b"\x01"
_TREE_ROOT_TAG = b"\x02"
_TRIE_ROOT_TAG = b"\x03"


def sha256(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


EMPTY_ROOT: bytes = sha256(b"")


def _u64(n: int) -> bytes:
    return n.to_bytes(8, "big")


def hash_tuple(fields: Sequence[bytes]) -> bytes:
    """Hash an ordered sequence of byte strings with unambiguous boundaries."""
    h = hashlib.sha256()
    for field in fields:
        h.update(_u64(len(field)))
        h.update(field)
    return h.digest()


def _merkle_levels(leaves: Sequence[bytes]) -> list[list[bytes]]:
    """All tree levels bottom-up; duplicate-last padding at odd levels."""
    levels = [list(leaves)]
    while len(levels[-1]) > 1:
        cur = levels[-1]
        nxt = []
        for i in range(0, len(cur), 2):
            left = cur[i]
            right = cur[i + 1] if i + 1 < len(cur) else cur[i]
            nxt.append(sha256(_NODE_TAG + left + right))
        levels.append(nxt)
    return levels


def _merkle_root(leaves: Sequence[bytes], root_tag: bytes) -> bytes:
    if not leaves:
        return EMPTY_ROOT
    top = _merkle_levels(leaves)[-1][0]
    return sha256(root_tag + _u64(len(leaves)) + top)


def _merkle_path(leaves: Sequence[bytes], index: int) -> tuple[tuple[bytes, bool], ...]:
    """Sibling path for ``leaves[index]``; each step is (sibling, sibling_is_left)."""
    path = []
    levels = _merkle_levels(leaves)
    pos = index
    for level in levels[:-1]:
        if pos % 2 == 0:
            sibling = level[pos + 1] if pos + 1 < len(level) else level[pos]
            path.append((sibling, False))
        else:
            path.append((level[pos - 1], True))
        pos //= 2
    return tuple(path)


def _fold_path(leaf: bytes, path: Sequence[tuple[bytes, bool]]) -> bytes:
    node = leaf
    for sibling, sibling_is_left in path:
        if sibling_is_left:
            node = sha256(_NODE_TAG + sibling + node)
        else:
            node = sha256(_NODE_TAG + node + sibling)
    return node


class AppendTree:
    """Insert-only Merkle tree over an ordered digest sequence.

    Two trees have equal roots iff they were built from the same leaf
    sequence (up to hash collisions); the root is order-sensitive.
    """

    __slots__ = ("_leaves", "_root")

    def __init__(self, leaves: Iterable[bytes] = ()):
        self._leaves: list[bytes] = list(leaves)
        self._root: bytes | None = None

    @property
    def leaves(self) -> tuple[bytes, ...]:
        return tuple(self._leaves)

    def __len__(self) -> int:
        return len(self._leaves)

    def insert(self, leaf: bytes) -> None:
        if len(leaf) != DIGEST_SIZE:
            raise ValueError("leaf must be a 32-byte digest")
        self._leaves.append(leaf)
        self._root = None

    @property
    def root(self) -> bytes:
        if self._root is None:
            self._root = _merkle_root(self._leaves, _TREE_ROOT_TAG)
        return self._root

    def copy(self) -> "AppendTree":
        t = AppendTree()
        t._leaves = list(self._leaves)
        t._root = self._root
        return t

    def __eq__(self, other: object) -> bool:
        return isinstance(other, AppendTree) and self._leaves == other._leaves


@dataclass(frozen=True)
class MembershipProof:
    """Proof that ``key -> value`` is an entry of the trie with a given root.

    ``entry_count`` is committed inside the root, so a proof carries it.
    Verification is total: any malformed field yields ``False``, never an
    exception.
    """

    key: bytes
    value: bytes
    entry_count: int
    path: tuple[tuple[bytes, bool], ...]


def _trie_leaf(key: bytes, value: bytes) -> bytes:
    return sha256(_LEAF_TAG + _u64(len(key)) + key + _u64(len(value)) + value)


class StateTrie:
    """Key-value commitment with order-independent root and membership proofs."""

    __slots__ = ("_entries",)

    def __init__(self, entries: Mapping[bytes, bytes] | None = None):
        self._entries: dict[bytes, bytes] = dict(entries) if entries else {}

    def set(self, key: bytes, value: bytes) -> None:
        self._entries[key] = value

    def get(self, key: bytes) -> bytes | None:
        return self._entries.get(key)

    def __len__(self) -> int:
        return len(self._entries)

    def _sorted_items(self) -> list[tuple[bytes, bytes]]:
        return sorted(self._entries.items())

    def root(self) -> bytes:
        leaves = [_trie_leaf(k, v) for k, v in self._sorted_items()]
        return _merkle_root(leaves, _TRIE_ROOT_TAG)

    def prove(self, key: bytes) -> MembershipProof:
        """Membership proof for a present key; raises KeyError if absent."""
        items = self._sorted_items()
        keys = [k for k, _ in items]
        try:
            index = keys.index(key)
        except ValueError:
            raise KeyError(key) from None
        leaves = [_trie_leaf(k, v) for k, v in items]
        return MembershipProof(
            key=key,
            value=items[index][1],
            entry_count=len(items),
            path=_merkle_path(leaves, index),
        )


def verify_member(root: bytes, proof: MembershipProof) -> bool:
    """Check a membership proof against a trie root. Deterministic and total."""
    try:
        if proof.entry_count <= 0:
            return False
        leaf = _trie_leaf(proof.key, proof.value)
        top = _fold_path(leaf, proof.path)
        return sha256(_TRIE_ROOT_TAG + _u64(proof.entry_count) + top) == root
    except Exception:
        return False
