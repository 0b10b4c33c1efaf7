"""Timestampable artifacts: combined hashes, Merkle trees, inclusion proofs.

The unit that gets anchored at a timestamp provider is never a raw file hash.
For a single file it is the combined hash binding the plaintext digest to the
ciphertext digest; for a batch it is either one combined hash over all pairs
in sequence, or the root of a Merkle tree whose leaves are the per-file
combined hashes.

Combined-hash recipe (reproducible by hand, e.g. with ``sha512sum``)::

    h = SHA512( hex(H(m1)) + "||" + hex(H(c1)) + "||" + hex(H(m2)) + ... )

where every digest is rendered as 128 lowercase hex characters and the
two-character ASCII delimiter ``||`` separates each rendering.

Merkle node rules: leaf nodes are ``SHA512(0x00 || leaf)``, internal nodes
``SHA512(0x01 || left || right)``; an unpaired node at any level is promoted
unchanged to the next level. The prefixes domain-separate leaves from
internal nodes so no tree root can be confused with a leaf value.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

from .crypto import Digest, hash_bytes
from .errors import FormatError, ValidationError

COMBINED_HASH_DELIMITER = "||"
LEAF_PREFIX = b"\x00"
NODE_PREFIX = b"\x01"

SIDE_LEFT = "L"
SIDE_RIGHT = "R"


@dataclass(frozen=True)
class CombinedHash:
    """A combined hash plus the ordered digest pairs it was computed from."""

    value: Digest
    parts: tuple[tuple[Digest, Digest], ...]


def combined_hash(pairs: Iterable[tuple[bytes, bytes]]) -> CombinedHash:
    """Hash an ordered sequence of (plaintext digest, ciphertext digest) pairs.

    A single pair reduces to the per-file form ``SHA512(hex(Hm) || hex(Hc))``
    with the literal two-character delimiter between the hex renderings.
    """
    normalized = tuple((Digest(m), Digest(c)) for m, c in pairs)
    if not normalized:
        raise ValidationError("combined_hash requires at least one digest pair")
    rendering = COMBINED_HASH_DELIMITER.join(
        d.hex() for pair in normalized for d in pair
    )
    return CombinedHash(value=hash_bytes(rendering.encode("ascii")), parts=normalized)


def file_combined_hash(plaintext_digest: bytes, ciphertext_digest: bytes) -> Digest:
    """The single-file combined hash, the per-file anchoring unit."""
    return combined_hash([(plaintext_digest, ciphertext_digest)]).value


@dataclass(frozen=True)
class MerkleProof:
    """Sibling path authenticating one leaf of an anchored tree.

    ``siblings`` is ordered bottom-up; each entry carries the sibling digest
    and which side of the current node it sits on (``"L"`` or ``"R"``).
    """

    leaf_index: int
    siblings: tuple[tuple[Digest, str], ...]

    def to_text(self) -> str:
        """Canonical auditable rendering, one entry per line."""
        lines = [f"index {self.leaf_index}"]
        lines.extend(f"{side} {digest.hex()}" for digest, side in self.siblings)
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "MerkleProof":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if not lines or not lines[0].startswith("index "):
            raise FormatError("proof text must start with an 'index N' line")
        try:
            leaf_index = int(lines[0].split(" ", 1)[1])
        except ValueError as exc:
            raise FormatError(f"bad proof index line: {lines[0]!r}") from exc
        siblings = []
        for line in lines[1:]:
            try:
                side, hexdigest = line.split(" ", 1)
            except ValueError as exc:
                raise FormatError(f"bad proof line: {line!r}") from exc
            if side not in (SIDE_LEFT, SIDE_RIGHT):
                raise FormatError(f"bad proof side {side!r}")
            siblings.append((Digest.from_hex(hexdigest), side))
        return cls(leaf_index=leaf_index, siblings=tuple(siblings))


class MerkleTree:
    """Immutable hash tree over an ordered sequence of digests."""

    def __init__(self, leaves: Sequence[bytes]):
        if not leaves:
            raise ValidationError("merkle tree requires at least one leaf")
        self.leaves: tuple[Digest, ...] = tuple(Digest(leaf) for leaf in leaves)
        level = [hash_bytes(LEAF_PREFIX + leaf) for leaf in self.leaves]
        levels = [level]
        while len(level) > 1:
            nxt = []
            for i in range(0, len(level) - 1, 2):
                nxt.append(hash_bytes(NODE_PREFIX + level[i] + level[i + 1]))
            if len(level) % 2:
                nxt.append(level[-1])  # unpaired node promoted, never duplicated
            levels.append(nxt)
            level = nxt
        self.levels: tuple[tuple[Digest, ...], ...] = tuple(tuple(lv) for lv in levels)
        self.root: Digest = level[0]

    def __len__(self) -> int:
        return len(self.leaves)

    def prove(self, leaf_index: int) -> MerkleProof:
        """Inclusion proof for the leaf at ``leaf_index``."""
        if not 0 <= leaf_index < len(self.leaves):
            raise ValidationError(
                f"leaf index {leaf_index} out of range for {len(self.leaves)} leaves"
            )
        siblings = []
        index = leaf_index
        for level in self.levels[:-1]:
            sibling_index = index ^ 1
            if sibling_index < len(level):
                side = SIDE_LEFT if sibling_index < index else SIDE_RIGHT
                siblings.append((level[sibling_index], side))
            # else: node was promoted at this level, no sibling to record
            index //= 2
        return MerkleProof(leaf_index=leaf_index, siblings=tuple(siblings))


def merkle_build(leaves: Sequence[bytes]) -> MerkleTree:
    return MerkleTree(leaves)


def merkle_prove(tree: MerkleTree, leaf_index: int) -> MerkleProof:
    return tree.prove(leaf_index)


def merkle_verify(leaf: bytes, proof: MerkleProof, root: bytes) -> bool:
    """True iff folding the leaf through the proof reproduces ``root``.

    Never raises on mismatch; malformed inputs simply verify false.
    """
    try:
        node = hash_bytes(LEAF_PREFIX + Digest(leaf))
        expected = Digest(root)
    except ValidationError:
        return False
    for sibling, side in proof.siblings:
        if side == SIDE_LEFT:
            node = hash_bytes(NODE_PREFIX + sibling + node)
        elif side == SIDE_RIGHT:
            node = hash_bytes(NODE_PREFIX + node + sibling)
        else:
            return False
    return node == expected
