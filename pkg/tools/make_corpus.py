"""Generate the bundled corpus and held-out target files.

Molecules are assembled as valence-tracked graphs (chains, rings, fused
aromatics, decorations) and written in canonical form, so every line is
guaranteed to parse. A combinatorial amide "lead series" is woven into the
corpus; the rediscovery target is one series member held out together with
its near misses, which leaves scaffold relatives in the corpus without any
close analog. Rerunning this script reproduces the shipped files byte for
byte.
"""

from __future__ import annotations

import os

import numpy as np

from simtilt.fingerprint import morgan_fingerprint, tanimoto
from simtilt.smiles import Atom, Bond, BondOrder, MolGraph, VALENCE, parse, write_canonical

SEED = 20250810
CORPUS_SIZE = 10_000
OUT_DIR = os.path.join(os.path.dirname(__file__), "..", "src", "simtilt", "data")


class Builder:
    """Grow a molecule while tracking spare valence per atom."""

    def __init__(self):
        self.atoms: list[Atom] = []
        self.bonds: list[Bond] = []
        self.free: list[int] = []

    def add(self, element: str, aromatic: bool = False, charge: int = 0,
            explicit_h: int = 0, bracket: bool = False) -> int:
        self.atoms.append(Atom(element, aromatic=aromatic, charge=charge,
                               explicit_h=explicit_h, bracket=bracket))
        capacity = VALENCE[element]
        if aromatic:
            capacity -= 1
        if bracket:
            capacity = capacity - explicit_h + max(0, charge)
        self.free.append(max(0, capacity))
        return len(self.atoms) - 1

    def bond(self, a: int, b: int, order: BondOrder = BondOrder.SINGLE) -> None:
        units = {BondOrder.SINGLE: 1, BondOrder.DOUBLE: 2,
                 BondOrder.TRIPLE: 3, BondOrder.AROMATIC: 1}[order]
        self.bonds.append(Bond(a, b, order))
        self.free[a] -= units
        self.free[b] -= units

    def graph(self) -> MolGraph:
        return MolGraph(self.atoms, self.bonds)


CHAIN_ATOMS = ["C"] * 10 + ["N", "N", "O", "O", "S"]
HALOGENS = ["F", "F", "Cl", "Cl", "Br"]


def _add_ring(m: Builder, rng: np.random.Generator) -> list[int]:
    kind = rng.random()
    if kind < 0.40:  # benzene
        idx = [m.add("C", aromatic=True) for _ in range(6)]
    elif kind < 0.55:  # pyridine-like
        pos = int(rng.integers(6))
        idx = [m.add("N" if i == pos else "C", aromatic=True) for i in range(6)]
    elif kind < 0.70:  # five-membered heteroaromatic
        het = ["O", "S", "NH"][int(rng.integers(3))]
        idx = []
        for i in range(5):
            if i == 0 and het == "NH":
                idx.append(m.add("N", aromatic=True, explicit_h=1, bracket=True))
            elif i == 0:
                idx.append(m.add(het, aromatic=True))
            else:
                idx.append(m.add("C", aromatic=True))
    elif kind < 0.88:  # cyclohexane / cyclopentane
        size = 6 if rng.random() < 0.6 else 5
        idx = [m.add("C") for _ in range(size)]
        for i in range(size):
            m.bond(idx[i], idx[(i + 1) % size])
        return idx
    else:  # naphthalene-like fused pair
        idx = [m.add("C", aromatic=True) for _ in range(10)]
        edges = [(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (5, 0),
                 (4, 6), (6, 7), (7, 8), (8, 9), (9, 5)]
        for a, b in edges:
            m.bond(idx[a], idx[b], BondOrder.AROMATIC)
        return idx
    for i in range(len(idx)):
        m.bond(idx[i], idx[(i + 1) % len(idx)], BondOrder.AROMATIC)
    return idx


def _add_chain(m: Builder, rng: np.random.Generator, length: int,
               attach: int | None = None) -> list[int]:
    idx = []
    prev = attach
    for i in range(length):
        el = CHAIN_ATOMS[int(rng.integers(len(CHAIN_ATOMS)))]
        cur = m.add(el)
        if prev is not None:
            double = (el == "C" and prev < len(m.free)
                      and m.free[prev] >= 2 and m.free[cur] >= 2
                      and m.atoms[prev].element == "C"
                      and rng.random() < 0.12)
            m.bond(prev, cur, BondOrder.DOUBLE if double else BondOrder.SINGLE)
        idx.append(cur)
        prev = cur
    return idx


def _decorate(m: Builder, rng: np.random.Generator, prob: float) -> None:
    for i in range(len(m.atoms)):
        while m.free[i] >= 1 and rng.random() < prob:
            roll = rng.random()
            if roll < 0.30:
                j = m.add("C")
                m.bond(i, j)
            elif roll < 0.45:
                j = m.add(HALOGENS[int(rng.integers(len(HALOGENS)))])
                m.bond(i, j)
            elif roll < 0.58:
                j = m.add("O")
                m.bond(i, j)
            elif roll < 0.68:
                j = m.add("N")
                m.bond(i, j)
            elif roll < 0.80 and m.free[i] >= 2 \
                    and m.atoms[i].element == "C" and not m.atoms[i].aromatic:
                j = m.add("O")
                m.bond(i, j, BondOrder.DOUBLE)
            elif roll < 0.88:
                j = m.add("C")
                k = m.add("N")
                m.bond(i, j)
                m.bond(j, k, BondOrder.TRIPLE)
            elif roll < 0.96:
                j = m.add("O")
                k = m.add("C")
                m.bond(i, j)
                m.bond(j, k)
            else:
                j = m.add("N", charge=1, explicit_h=0, bracket=True)
                o1 = m.add("O", charge=-1, explicit_h=0, bracket=True)
                o2 = m.add("O")
                m.bond(i, j)
                m.bond(j, o1)
                m.bond(j, o2, BondOrder.DOUBLE)


def random_molecule(rng: np.random.Generator) -> MolGraph:
    m = Builder()
    kind = rng.random()
    if kind < 0.30:
        _add_chain(m, rng, int(rng.integers(3, 10)))
        _decorate(m, rng, 0.25)
    elif kind < 0.62:
        ring = _add_ring(m, rng)
        tails = int(rng.integers(0, 3))
        sites = [i for i in ring if m.free[i] >= 1]
        for _ in range(tails):
            if not sites:
                break
            site = sites[int(rng.integers(len(sites)))]
            if m.free[site] < 1:
                continue
            _add_chain(m, rng, int(rng.integers(1, 5)), attach=site)
        _decorate(m, rng, 0.16)
    elif kind < 0.88:
        ring = _add_ring(m, rng)
        chain = _add_chain(m, rng, int(rng.integers(2, 6)))
        anchors = [i for i in ring if m.free[i] >= 1]
        if anchors:
            m.bond(anchors[int(rng.integers(len(anchors)))], chain[0])
        _decorate(m, rng, 0.18)
    else:
        ring_a = _add_ring(m, rng)
        ring_b = _add_ring(m, rng)
        bridge = _add_chain(m, rng, int(rng.integers(1, 4)))
        a_sites = [i for i in ring_a if m.free[i] >= 1]
        b_sites = [i for i in ring_b if m.free[i] >= 1]
        if a_sites and b_sites:
            m.bond(a_sites[int(rng.integers(len(a_sites)))], bridge[0])
            m.bond(b_sites[int(rng.integers(len(b_sites)))], bridge[-1])
        _decorate(m, rng, 0.10)
    return m.graph()


# Lead series: R2-C(=O)-NH-phenyl with para R1 and meta R3 decorations.
R1 = ["", "C", "CC", "O", "OC", "F", "Cl", "Br", "C(C)C", "N", "OCC",
      "C(F)(F)F"]
R2 = ["C", "CC", "CCC", "C(C)C", "CC(C)C", "CO", "CN", "OC", "CCO", "CCN",
      "COC", "CCl", "c8ccccc8", "c8ccncc8", "CC#N", "CS", "CCS", "CCC(C)C",
      "COCC", "CCOC"]
R3 = ["", "C", "F", "Cl", "O"]


def family_smiles(r1: str, r2: str, r3: str) -> str:
    ring = "c1ccc" + (f"({r1})" if r1 else "") + "c" \
        + (f"({r3})" if r3 else "") + "c1"
    return f"O=C({r2})N{ring}"


TARGET_COMBO = ("CC", "CCO", "F")
SIMILARITY_HOLDOUT_COMBOS = [("OC", "CN", "C"), ("Cl", "COC", "")]


def build_family() -> tuple[list[str], str, list[str]]:
    """Returns (corpus members, rediscovery target, held-out similarity targets)."""
    target = write_canonical(parse(family_smiles(*TARGET_COMBO)))
    holdouts = [write_canonical(parse(family_smiles(*combo)))
                for combo in SIMILARITY_HOLDOUT_COMBOS]
    members = []
    for r1 in R1:
        for r2 in R2:
            for r3 in R3:
                shared = sum((a == b) for a, b in
                             zip((r1, r2, r3), TARGET_COMBO))
                if shared >= 2:
                    continue  # keep close analogs of the target out
                canon = write_canonical(parse(family_smiles(r1, r2, r3)))
                if canon == target or canon in holdouts:
                    continue
                members.append(canon)
    return members, target, holdouts


def main() -> None:
    rng = np.random.default_rng(SEED)
    family, target, sim_family_holdouts = build_family()

    seen: set[str] = set()
    corpus: list[str] = []
    for smi in family:
        if smi not in seen:
            seen.add(smi)
            corpus.append(smi)

    holdout_block = {target, *sim_family_holdouts}
    generic_holdouts: list[str] = []
    while len(corpus) < CORPUS_SIZE or len(generic_holdouts) < 3:
        graph = random_molecule(rng)
        if len(graph) < 3 or len(graph) > 42:
            continue
        canon = write_canonical(graph)
        if canon in seen or canon in holdout_block:
            continue
        seen.add(canon)
        if len(generic_holdouts) < 3 and len(corpus) >= CORPUS_SIZE:
            generic_holdouts.append(canon)
            continue
        if len(corpus) < CORPUS_SIZE:
            corpus.append(canon)

    sim_targets = sim_family_holdouts + generic_holdouts

    os.makedirs(OUT_DIR, exist_ok=True)
    with open(os.path.join(OUT_DIR, "corpus_10k.smi"), "w",
              encoding="utf-8") as fh:
        fh.write("# synthetic training corpus (one canonical SMILES per line)\n")
        for smi in corpus:
            fh.write(smi + "\n")
    with open(os.path.join(OUT_DIR, "rediscovery_target.smi"), "w",
              encoding="utf-8") as fh:
        fh.write("# held-out optimization target; scaffold relatives are in the corpus\n")
        fh.write(target + "\n")
    with open(os.path.join(OUT_DIR, "similarity_targets.smi"), "w",
              encoding="utf-8") as fh:
        fh.write("# held-out targets for similarity-guided generation\n")
        for smi in sim_targets:
            fh.write(smi + "\n")

    target_fp = morgan_fingerprint(parse(target))
    sims = sorted((tanimoto(morgan_fingerprint(parse(s)), target_fp)
                   for s in corpus), reverse=True)
    print(f"corpus: {len(corpus)} molecules ({len(family)} series members)")
    print(f"rediscovery target: {target}")
    print(f"corpus similarity to target: max={sims[0]:.3f} "
          f"top10={np.mean(sims[:10]):.3f} top100={np.mean(sims[:100]):.3f}")
    print("similarity targets:")
    for smi in sim_targets:
        print(f"  {smi}")


if __name__ == "__main__":
    main()
