"""Circular atom-environment fingerprints and Tanimoto similarity.

Each atom starts from the invariant (element, aromatic, charge, degree,
hydrogens, in-ring) hashed with a fixed 64-bit mixer; environments grow by
hashing the sorted (bond order, neighbor hash) list for the requested number
of iterations. Every environment hash is folded modulo the bit width, so the
result depends only on the abstract graph, never on atom input order.
"""

from __future__ import annotations

from dataclasses import dataclass

from ._hashing import mix64 as _mix
from .smiles import MolGraph, VALENCE

_ELEMENT_CODE = {el: i for i, el in enumerate(VALENCE)}


class WidthMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class Fingerprint:
    bits: int
    nbits: int
    radius: int

    def bit_count(self) -> int:
        return self.bits.bit_count()

    def to_hex(self) -> str:
        return format(self.bits, f"0{self.nbits // 4}x")

    @classmethod
    def from_hex(cls, text: str, radius: int = 2) -> "Fingerprint":
        nbits = len(text) * 4
        return cls(int(text, 16), nbits, radius)


def atom_environment_hashes(g: MolGraph, radius: int) -> list[list[int]]:
    """Per-radius environment hashes: result[r][i] for atom i at radius r."""
    ring = g.ring_atom_flags()
    current = [
        _mix((_ELEMENT_CODE[a.element], int(a.aromatic), a.charge,
              g.degree(i), g.hydrogen_count(i), int(ring[i])))
        for i, a in enumerate(g.atoms)
    ]
    layers = [current]
    for _ in range(radius):
        nxt = []
        for i in range(len(g)):
            parts = sorted((int(order), current[j]) for j, order in g.neighbors(i))
            flat = [current[i]]
            for order, h in parts:
                flat.extend((order, h))
            nxt.append(_mix(flat))
        current = nxt
        layers.append(current)
    return layers


def morgan_fingerprint(g: MolGraph, radius: int = 2, nbits: int = 2048) -> Fingerprint:
    """Hash circular environments of every atom into a fixed-width bitset."""
    if radius < 0:
        raise ValueError("radius must be nonnegative")
    if nbits < 1 or nbits & (nbits - 1):
        raise ValueError("nbits must be a power of two")
    bits = 0
    for layer in atom_environment_hashes(g, radius):
        for h in layer:
            bits |= 1 << (h % nbits)
    return Fingerprint(bits, nbits, radius)


def tanimoto(a: Fingerprint, b: Fingerprint) -> float:
    """|a AND b| / |a OR b| over the fingerprint bitsets, in [0, 1]."""
    if a.nbits != b.nbits:
        raise WidthMismatchError(f"fingerprint widths differ: {a.nbits} vs {b.nbits}")
    union = (a.bits | b.bits).bit_count()
    if union == 0:
        return 0.0
    return (a.bits & b.bits).bit_count() / union
