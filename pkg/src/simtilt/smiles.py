"""SMILES tokenization, parsing, canonicalization and formula analysis.

Supported subset: organic-subset elements (B, C, N, O, P, S, F, Cl, Br, I),
aromatic lowercase atoms (b, c, n, o, p, s), bracket atoms with charge and
explicit hydrogen counts, branches, and ring closures (1-9 and %nn).
Stereo markers are accepted by the lexer but stripped with a warning;
isotopes and multi-fragment input ('.') are rejected.
"""

from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass


class SmilesError(ValueError):
    """Base class for all SMILES lexing/parsing failures."""


class EmptyInputError(SmilesError):
    pass


class UnknownElementError(SmilesError):
    pass


class UnbalancedParenthesisError(SmilesError):
    pass


class UnmatchedRingClosureError(SmilesError):
    pass


class RingBondError(SmilesError):
    """Self-bonds, duplicate ring bonds, or conflicting ring-bond orders."""


class MultiFragmentError(SmilesError):
    pass


class UnsupportedFeatureError(SmilesError):
    pass


class UnknownTokenError(SmilesError):
    """Raised by ``tokenize`` when no vocabulary entry matches.

    ``offset`` is the byte offset of the first unmatchable character.
    """

    def __init__(self, message: str, offset: int):
        super().__init__(message)
        self.offset = offset


class SmilesWarning(UserWarning):
    pass


# Default valences used for implicit hydrogen counts on bare atoms.
VALENCE = {
    "B": 3, "C": 4, "N": 3, "O": 2, "P": 3, "S": 2,
    "F": 1, "Cl": 1, "Br": 1, "I": 1,
}

ORGANIC_ELEMENTS = tuple(VALENCE)
AROMATIC_ELEMENTS = ("b", "c", "n", "o", "p", "s")

BOS_TEXT = "<bos>"
EOS_TEXT = "<eos>"


class BondOrder(enum.IntEnum):
    SINGLE = 1
    DOUBLE = 2
    TRIPLE = 3
    AROMATIC = 4


# Valence consumed per bond; an aromatic atom additionally consumes one
# unit for its delocalized pi contribution.
_BOND_VALENCE = {
    BondOrder.SINGLE: 1,
    BondOrder.DOUBLE: 2,
    BondOrder.TRIPLE: 3,
    BondOrder.AROMATIC: 1,
}

_BOND_CHARS = {"-": BondOrder.SINGLE, "=": BondOrder.DOUBLE,
               "#": BondOrder.TRIPLE, ":": BondOrder.AROMATIC}

_BOND_SYMBOL = {BondOrder.SINGLE: "-", BondOrder.DOUBLE: "=",
                BondOrder.TRIPLE: "#", BondOrder.AROMATIC: ":"}


@dataclass(frozen=True)
class Atom:
    element: str
    aromatic: bool = False
    charge: int = 0
    explicit_h: int = 0
    bracket: bool = False


@dataclass(frozen=True)
class Bond:
    a: int
    b: int
    order: BondOrder

    def other(self, i: int) -> int:
        return self.b if i == self.a else self.a


class MolGraph:
    """A connected molecular graph: heavy atoms plus typed bonds."""

    def __init__(self, atoms: list[Atom], bonds: list[Bond]):
        self.atoms = list(atoms)
        self.bonds = list(bonds)
        self._adj: list[list[tuple[int, BondOrder]]] | None = None
        self._validate()

    def _validate(self) -> None:
        n = len(self.atoms)
        seen_pairs = set()
        for bond in self.bonds:
            if bond.a == bond.b:
                raise RingBondError("bond endpoints must be distinct")
            if not (0 <= bond.a < n and 0 <= bond.b < n):
                raise SmilesError("bond references a missing atom")
            key = (min(bond.a, bond.b), max(bond.a, bond.b))
            if key in seen_pairs:
                raise RingBondError(f"duplicate bond between atoms {key}")
            seen_pairs.add(key)
        for atom in self.atoms:
            if atom.element not in VALENCE:
                raise UnknownElementError(f"unsupported element {atom.element!r}")
            if atom.explicit_h < 0:
                raise SmilesError("negative explicit hydrogen count")
        if n > 1 and len(self._components()) != 1:
            raise MultiFragmentError("graph must be a single connected fragment")

    def _components(self) -> list[set[int]]:
        unseen = set(range(len(self.atoms)))
        comps = []
        while unseen:
            stack = [unseen.pop()]
            comp = set(stack)
            while stack:
                i = stack.pop()
                for j, _ in self.neighbors(i):
                    if j not in comp:
                        comp.add(j)
                        unseen.discard(j)
                        stack.append(j)
            comps.append(comp)
        return comps

    def neighbors(self, i: int) -> list[tuple[int, BondOrder]]:
        if self._adj is None:
            adj: list[list[tuple[int, BondOrder]]] = [[] for _ in self.atoms]
            for bond in self.bonds:
                adj[bond.a].append((bond.b, bond.order))
                adj[bond.b].append((bond.a, bond.order))
            self._adj = adj
        return self._adj[i]

    def degree(self, i: int) -> int:
        return len(self.neighbors(i))

    def bare_hydrogens(self, i: int) -> int:
        """Hydrogens this atom would carry if written without brackets."""
        atom = self.atoms[i]
        consumed = sum(_BOND_VALENCE[order] for _, order in self.neighbors(i))
        if atom.aromatic:
            consumed += 1
        return max(0, VALENCE[atom.element] - consumed)

    def hydrogen_count(self, i: int) -> int:
        atom = self.atoms[i]
        return atom.explicit_h if atom.bracket else self.bare_hydrogens(i)

    def ring_bond_flags(self) -> list[bool]:
        """True per bond when the bond lies on a cycle (is not a bridge)."""
        n = len(self.atoms)
        index_of = {}
        adj: list[list[tuple[int, int]]] = [[] for _ in range(n)]
        for k, bond in enumerate(self.bonds):
            adj[bond.a].append((bond.b, k))
            adj[bond.b].append((bond.a, k))
            index_of[k] = bond
        disc = [-1] * n
        low = [0] * n
        is_bridge = [False] * len(self.bonds)
        timer = 0
        for root in range(n):
            if disc[root] != -1:
                continue
            stack: list[tuple[int, int, int]] = [(root, -1, 0)]
            while stack:
                node, via, ptr = stack.pop()
                if ptr == 0:
                    disc[node] = low[node] = timer
                    timer += 1
                if ptr < len(adj[node]):
                    stack.append((node, via, ptr + 1))
                    nxt, edge = adj[node][ptr]
                    if edge == via:
                        continue
                    if disc[nxt] == -1:
                        stack.append((nxt, edge, 0))
                    else:
                        low[node] = min(low[node], disc[nxt])
                else:
                    if via >= 0:
                        bond = index_of[via]
                        parent = bond.other(node)
                        low[parent] = min(low[parent], low[node])
                        if low[node] > disc[parent]:
                            is_bridge[via] = True
        return [not b for b in is_bridge]

    def ring_atom_flags(self) -> list[bool]:
        flags = [False] * len(self.atoms)
        for bond, in_ring in zip(self.bonds, self.ring_bond_flags()):
            if in_ring:
                flags[bond.a] = flags[bond.b] = True
        return flags

    def __len__(self) -> int:
        return len(self.atoms)


@dataclass(frozen=True)
class Token:
    text: str
    id: int


class Vocab:
    """Ordered token table with distinguished BOS/EOS entries."""

    def __init__(self, texts: list[str]):
        uniq = []
        seen = set()
        for t in texts:
            if not t:
                raise ValueError("token texts must be nonempty")
            if t not in seen:
                seen.add(t)
                uniq.append(t)
        self._texts = [BOS_TEXT, EOS_TEXT] + [t for t in uniq
                                              if t not in (BOS_TEXT, EOS_TEXT)]
        self.bos_id = 0
        self.eos_id = 1
        self._ids = {t: i for i, t in enumerate(self._texts)}
        self._maxlen = max(len(t) for t in self._texts)

    @classmethod
    def from_wire(cls, texts: list[str], bos_id: int, eos_id: int) -> "Vocab":
        """Build a vocab preserving a remote model's token ordering."""
        if len(set(texts)) != len(texts):
            raise ValueError("token texts must be pairwise distinct")
        if not all(texts):
            raise ValueError("token texts must be nonempty")
        n = len(texts)
        if not (0 <= bos_id < n and 0 <= eos_id < n) or bos_id == eos_id:
            raise ValueError("bos/eos must be distinct valid indices")
        vocab = cls.__new__(cls)
        vocab._texts = list(texts)
        vocab.bos_id = bos_id
        vocab.eos_id = eos_id
        vocab._ids = {t: i for i, t in enumerate(texts)}
        vocab._maxlen = max(len(t) for t in texts)
        return vocab

    def __len__(self) -> int:
        return len(self._texts)

    def __contains__(self, text: str) -> bool:
        return text in self._ids

    def id_of(self, text: str) -> int:
        return self._ids[text]

    def text_of(self, token_id: int) -> str:
        return self._texts[token_id]

    @property
    def tokens(self) -> list[Token]:
        return [Token(t, i) for i, t in enumerate(self._texts)]

    @property
    def texts(self) -> list[str]:
        return list(self._texts)


# Always-available tokens, so canonical forms of recombined molecules stay
# tokenizable even when the training corpus never used some of them.
BASE_TOKENS = (
    list(ORGANIC_ELEMENTS) + list(AROMATIC_ELEMENTS)
    + ["(", ")", "=", "#", "-", ":"]
    + [str(d) for d in range(1, 10)] + ["%10", "%11", "%12"]
)


def build_vocab(corpus: list[str], include_base: bool = True) -> Vocab:
    """Collect the distinct lexical units of a corpus into a Vocab."""
    texts = set(BASE_TOKENS) if include_base else set()
    for line in corpus:
        texts.update(_lex(line))
    return Vocab(sorted(texts))


def tokenize(smiles: str, vocab: Vocab) -> list[Token]:
    """Split a SMILES string by longest match against the vocabulary.

    The concatenation of the returned token texts equals the input.
    Raises ``UnknownTokenError`` (with the failing byte offset) when no
    vocabulary entry matches at some position.
    """
    if not smiles:
        raise EmptyInputError("empty SMILES string")
    out = []
    i = 0
    n = len(smiles)
    maxlen = vocab._maxlen
    while i < n:
        for width in range(min(maxlen, n - i), 0, -1):
            piece = smiles[i:i + width]
            if piece in vocab:
                out.append(Token(piece, vocab.id_of(piece)))
                i += width
                break
        else:
            raise UnknownTokenError(
                f"no vocabulary token matches {smiles[i:]!r} at offset {i}", i)
    return out


_SINGLE_CHARS = set("BCNOPSFIbcnops123456789()=#-:./\\")


def _lex(smiles: str) -> list[str]:
    """Grammar-based lexer: returns the lexical units of a SMILES string."""
    out = []
    i = 0
    n = len(smiles)
    while i < n:
        ch = smiles[i]
        if ch == "[":
            j = smiles.find("]", i)
            if j < 0:
                raise SmilesError(f"unclosed bracket atom at offset {i}")
            out.append(smiles[i:j + 1])
            i = j + 1
        elif smiles[i:i + 2] in ("Cl", "Br"):
            out.append(smiles[i:i + 2])
            i += 2
        elif ch == "%":
            digits = smiles[i + 1:i + 3]
            if len(digits) != 2 or not digits.isdigit():
                raise SmilesError(f"malformed ring closure {smiles[i:i+3]!r}")
            out.append(smiles[i:i + 3])
            i += 3
        elif ch in _SINGLE_CHARS:
            out.append(ch)
            i += 1
        elif ch.isalpha():
            raise UnknownElementError(f"unsupported element {ch!r} at offset {i}")
        else:
            raise SmilesError(f"unexpected character {ch!r} at offset {i}")
    return out


def _parse_bracket(lexeme: str) -> Atom:
    body = lexeme[1:-1]
    if not body:
        raise SmilesError("empty bracket atom")
    i = 0
    if body[0].isdigit():
        raise UnsupportedFeatureError(f"isotope labels not supported: {lexeme}")
    element = None
    aromatic = False
    if body[:2] in ("Cl", "Br"):
        element = body[:2]
        i = 2
    elif body[0] in "BCNOPSFI":
        element = body[0]
        i = 1
    elif body[0] in AROMATIC_ELEMENTS:
        element = body[0].upper()
        aromatic = True
        i = 1
    else:
        raise UnknownElementError(f"unsupported element in {lexeme}")
    while i < len(body) and body[i] == "@":
        warnings.warn(f"stereo marker ignored in {lexeme}", SmilesWarning,
                      stacklevel=3)
        i += 1
    hcount = 0
    if i < len(body) and body[i] == "H":
        i += 1
        j = i
        while j < len(body) and body[j].isdigit():
            j += 1
        hcount = int(body[i:j]) if j > i else 1
        i = j
    charge = 0
    if i < len(body) and body[i] in "+-":
        sign = 1 if body[i] == "+" else -1
        mark = body[i]
        i += 1
        j = i
        while j < len(body) and body[j].isdigit():
            j += 1
        if j > i:
            charge = sign * int(body[i:j])
            i = j
        else:
            charge = sign
            while i < len(body) and body[i] == mark:
                charge += sign
                i += 1
    if i != len(body):
        raise SmilesError(f"trailing characters in bracket atom {lexeme}")
    return Atom(element, aromatic=aromatic, charge=charge,
                explicit_h=hcount, bracket=True)


def _bare_atom(lexeme: str) -> Atom:
    if lexeme in ("Cl", "Br") or lexeme in "BCNOPSFI":
        return Atom(lexeme)
    if lexeme in AROMATIC_ELEMENTS:
        return Atom(lexeme.upper(), aromatic=True)
    raise UnknownElementError(f"unsupported element {lexeme!r}")


def parse(smiles: str) -> MolGraph:
    """Parse a single-fragment SMILES string into a molecular graph."""
    if smiles is None or not smiles.strip():
        raise EmptyInputError("empty SMILES string")
    atoms: list[Atom] = []
    bonds: list[Bond] = []
    bond_pairs: set[tuple[int, int]] = set()
    prev: int | None = None
    pending: BondOrder | None = None
    stack: list[int] = []
    ring_open: dict[int, tuple[int, BondOrder | None]] = {}

    def add_bond(a: int, b: int, order: BondOrder) -> None:
        key = (min(a, b), max(a, b))
        if a == b:
            raise RingBondError("ring closure bonds an atom to itself")
        if key in bond_pairs:
            raise RingBondError(f"duplicate bond between atoms {key}")
        bond_pairs.add(key)
        bonds.append(Bond(a, b, order))

    def close_ring(number: int) -> None:
        nonlocal pending
        if prev is None:
            raise SmilesError("ring closure digit before any atom")
        if number in ring_open:
            other, other_bond = ring_open.pop(number)
            if pending is not None and other_bond is not None \
                    and pending != other_bond:
                raise RingBondError(
                    f"conflicting bond orders on ring closure {number}")
            order = pending if pending is not None else other_bond
            if order is None:
                if atoms[prev].aromatic and atoms[other].aromatic:
                    order = BondOrder.AROMATIC
                else:
                    order = BondOrder.SINGLE
            add_bond(other, prev, order)
        else:
            ring_open[number] = (prev, pending)
        pending = None

    for lexeme in _lex(smiles):
        if lexeme == ".":
            raise MultiFragmentError("multi-fragment SMILES are not supported")
        if lexeme in ("/", "\\"):
            warnings.warn(f"stereo bond {lexeme!r} treated as single",
                          SmilesWarning, stacklevel=2)
            lexeme = "-"
        if lexeme in _BOND_CHARS:
            if pending is not None:
                raise SmilesError("two consecutive bond symbols")
            pending = _BOND_CHARS[lexeme]
        elif lexeme == "(":
            if prev is None:
                raise UnbalancedParenthesisError("branch opened before any atom")
            if pending is not None:
                raise SmilesError("bond symbol before branch open")
            stack.append(prev)
        elif lexeme == ")":
            if not stack:
                raise UnbalancedParenthesisError("unmatched ')'")
            if pending is not None:
                raise SmilesError("dangling bond symbol before ')'")
            prev = stack.pop()
        elif lexeme.isdigit():
            close_ring(int(lexeme))
        elif lexeme.startswith("%"):
            close_ring(int(lexeme[1:]))
        else:
            atom = _parse_bracket(lexeme) if lexeme.startswith("[") \
                else _bare_atom(lexeme)
            atoms.append(atom)
            idx = len(atoms) - 1
            if prev is not None:
                order = pending
                if order is None:
                    if atoms[prev].aromatic and atom.aromatic:
                        order = BondOrder.AROMATIC
                    else:
                        order = BondOrder.SINGLE
                add_bond(prev, idx, order)
            pending = None
            prev = idx

    if ring_open:
        raise UnmatchedRingClosureError(
            f"unmatched ring closure digits: {sorted(ring_open)}")
    if stack:
        raise UnbalancedParenthesisError("unclosed '('")
    if pending is not None:
        raise SmilesError("dangling bond symbol at end of input")
    if not atoms:
        raise EmptyInputError("no atoms in SMILES string")
    return MolGraph(atoms, bonds)


def _initial_invariants(g: MolGraph) -> list[tuple]:
    return [
        (a.element, a.aromatic, a.charge, g.degree(i), g.hydrogen_count(i))
        for i, a in enumerate(g.atoms)
    ]


def _dense_ranks(keys: list) -> list[int]:
    order = {k: r for r, k in enumerate(sorted(set(keys)))}
    return [order[k] for k in keys]


def _refine(g: MolGraph, ranks: list[int]) -> list[int]:
    """Neighborhood refinement of atom ranks to a fixed partition."""
    nclasses = len(set(ranks))
    while True:
        keys = [
            (ranks[i],
             tuple(sorted((int(order), ranks[j]) for j, order in g.neighbors(i))))
            for i in range(len(g))
        ]
        ranks = _dense_ranks(keys)
        new_classes = len(set(ranks))
        if new_classes == nclasses:
            return ranks
        nclasses = new_classes


def _canonical_ranks_options(g: MolGraph, ranks: list[int]):
    """Yield fully-resolved rank assignments, tie-breaking one class at a time."""
    ranks = _refine(g, ranks)
    n = len(g)
    if len(set(ranks)) == n:
        yield ranks
        return
    counts: dict[int, int] = {}
    for r in ranks:
        counts[r] = counts.get(r, 0) + 1
    tied = min(r for r, c in counts.items() if c > 1)
    for i in range(n):
        if ranks[i] != tied:
            continue
        forced = [(ranks[j], 0 if j == i else 1) for j in range(n)]
        yield from _canonical_ranks_options(g, _dense_ranks(forced))


def write_canonical(g: MolGraph) -> str:
    """Write the canonical SMILES of a molecular graph.

    Atom ranks come from iterative neighborhood refinement of the invariant
    (element, aromatic, charge, degree, hydrogens); remaining ties are broken
    by exploring each choice and keeping the lexicographically smallest
    string, which makes the result independent of input atom order.
    """
    initial = _dense_ranks(_initial_invariants(g))
    best = None
    for ranks in _canonical_ranks_options(g, initial):
        s = _write_with_ranks(g, ranks)
        if best is None or s < best:
            best = s
    assert best is not None
    return best


def _atom_token(g: MolGraph, i: int) -> str:
    atom = g.atoms[i]
    sym = atom.element.lower() if atom.aromatic else atom.element
    h = g.hydrogen_count(i)
    if atom.charge == 0 and h == g.bare_hydrogens(i):
        return sym
    parts = [sym]
    if h == 1:
        parts.append("H")
    elif h > 1:
        parts.append(f"H{h}")
    if atom.charge == 1:
        parts.append("+")
    elif atom.charge == -1:
        parts.append("-")
    elif atom.charge > 1:
        parts.append(f"+{atom.charge}")
    elif atom.charge < -1:
        parts.append(f"-{-atom.charge}")
    return "[" + "".join(parts) + "]"


def _bond_token(g: MolGraph, a: int, b: int, order: BondOrder) -> str:
    both_aromatic = g.atoms[a].aromatic and g.atoms[b].aromatic
    if order == BondOrder.SINGLE:
        return "-" if both_aromatic else ""
    if order == BondOrder.AROMATIC:
        return "" if both_aromatic else ":"
    return _BOND_SYMBOL[order]


def _write_with_ranks(g: MolGraph, ranks: list[int]) -> str:
    n = len(g)
    start = ranks.index(min(ranks))
    sorted_nbrs = [sorted(g.neighbors(i), key=lambda jo: ranks[jo[0]])
                   for i in range(n)]

    # Pre-pass: classify edges into tree edges and ring closures with the
    # same deterministic traversal order the emitter will follow.
    visited = [False] * n
    ring_partner: list[list[tuple[int, BondOrder]]] = [[] for _ in range(n)]
    ring_pairs: set[tuple[int, int]] = set()
    scanned: set[tuple[int, int]] = set()

    def scan(node: int) -> None:
        visited[node] = True
        for j, order in sorted_nbrs[node]:
            key = (min(node, j), max(node, j))
            if key in scanned:
                continue
            scanned.add(key)
            if visited[j]:
                ring_partner[node].append((j, order))
                ring_partner[j].append((node, order))
                ring_pairs.add(key)
            else:
                scan(j)

    scan(start)

    ring_digit: dict[tuple[int, int], int] = {}
    free_digits: list[int] = []
    next_digit = [1]

    def alloc_digit() -> int:
        if free_digits:
            free_digits.sort()
            return free_digits.pop(0)
        d = next_digit[0]
        next_digit[0] += 1
        return d

    def digit_token(d: int) -> str:
        return str(d) if d < 10 else f"%{d:02d}"

    emitted = [False] * n
    out: list[str] = []

    def emit(node: int, parent: int, in_order: BondOrder | None) -> None:
        emitted[node] = True
        if in_order is not None:
            out.append(_bond_token(g, parent, node, in_order))
        out.append(_atom_token(g, node))
        for j, order in sorted(ring_partner[node], key=lambda jo: ranks[jo[0]]):
            key = (min(node, j), max(node, j))
            if key in ring_digit:
                d = ring_digit.pop(key)
                out.append(digit_token(d))
                free_digits.append(d)
            else:
                d = alloc_digit()
                ring_digit[key] = d
                out.append(_bond_token(g, node, j, order))
                out.append(digit_token(d))
        children = [(j, order) for j, order in sorted_nbrs[node]
                    if not emitted[j]
                    and (min(node, j), max(node, j)) not in ring_pairs]
        for k, (j, order) in enumerate(children):
            last = k == len(children) - 1
            if not last:
                out.append("(")
            emit(j, node, order)
            if not last:
                out.append(")")

    emit(start, -1, None)
    return "".join(out)


def molecular_formula(g: MolGraph) -> dict[str, int]:
    """Heavy-atom counts by element plus total hydrogens under key 'H'."""
    counts: dict[str, int] = {}
    hydrogens = 0
    for i, atom in enumerate(g.atoms):
        counts[atom.element] = counts.get(atom.element, 0) + 1
        hydrogens += g.hydrogen_count(i)
    if hydrogens:
        counts["H"] = hydrogens
    return counts


def read_corpus(path) -> list[str]:
    """Read a corpus file: one SMILES per line, '#' comment lines ignored."""
    lines = []
    with open(path, "r", encoding="utf-8") as fh:
        for raw in fh:
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            lines.append(line)
    return lines
