"""Budget-accounted evolutionary optimization driven by guided generation.

Each generation selects the best-scoring molecules as guides (optionally
augmented with diversity picks), mutates them through the tilted sampler,
prunes offspring by fingerprint similarity to the current best, optionally
adds crossover or random-corpus exploration candidates, scores everything
new against the oracle cache, and records (generation, budget spent,
average top-K score). The oracle budget is a hard cap: a batch that does
not fit in the remaining budget is discarded unscored and the run ends,
which also makes a lower-budget rerun an exact record prefix of a larger
one. All randomness flows through one generator, so identical inputs and
seed reproduce identical records bit for bit.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass

import numpy as np

from .fingerprint import Fingerprint, morgan_fingerprint, tanimoto
from .guidance import GuidanceConfig, GuidedSampler, GuideSet
from .oracles import Oracle
from .policy import PolicyModel
from .smiles import (Bond, BondOrder, MolGraph, SmilesError, VALENCE, parse,
                     write_canonical)

RECORDS_HEADER = "generation,budget_spent,avg_topk"


class CorpusTooSmallError(ValueError):
    pass


class BudgetExhaustedError(RuntimeError):
    pass


class EmptyTrajectoryError(ValueError):
    pass


@dataclass
class Individual:
    smiles: str
    score: float | None
    fingerprint: Fingerprint


@dataclass(frozen=True)
class RunRecord:
    generation: int
    budget_spent: int
    avg_topk: float


@dataclass(frozen=True)
class GAConfig:
    num_guides: int = 3
    report_k: int = 10
    budget: int = 10000
    diversity_guides: int = 1
    gen_per_guide: int = 20
    max_gen_size: int = 120
    guide_prune_pct: float = 75.0
    prune_topk: int = 10
    crossover_enabled: bool = True
    exploration_candidates: int = 40
    exploitation_trigger: float = 0.95
    exploitation_alpha: float = 0.4
    exploitation_tau: float = 0.15
    stop_no_change: int = 500
    init_pool_size: int = 100

    def __post_init__(self):
        if self.num_guides < 1 or self.budget < 1 or self.report_k < 1:
            raise ValueError("num_guides, budget and report_k must be >= 1")
        if not 0.0 <= self.guide_prune_pct <= 100.0:
            raise ValueError("guide_prune_pct must lie in [0, 100]")
        if self.init_pool_size < 0 or self.diversity_guides < 0:
            raise ValueError("init_pool_size and diversity_guides must be >= 0")


@dataclass
class RunResult:
    records: list[RunRecord]
    population: list[Individual]
    top1_trajectory: list[tuple[int, float]]
    oracle_calls: int
    cache_hits: int
    generations: int


_MISSING = object()
_CANONICAL_CACHE: dict[str, str | None] = {}


def _canonical_or_none(line: str) -> str | None:
    """Canonical form of a corpus line, memoized process-wide (None if invalid)."""
    got = _CANONICAL_CACHE.get(line, _MISSING)
    if got is _MISSING:
        try:
            got = write_canonical(parse(line))
        except SmilesError:
            got = None
        _CANONICAL_CACHE[line] = got
    return got


def _corpus_canonicals(corpus: list[str]) -> list[str]:
    """Distinct canonical molecules of a corpus, in first-seen order."""
    seen: set[str] = set()
    out: list[str] = []
    for line in corpus:
        canon = _canonical_or_none(line)
        if canon is None or canon in seen:
            continue
        seen.add(canon)
        out.append(canon)
    return out


class OracleCache:
    """Scores each canonical SMILES exactly once, within a hard call budget."""

    def __init__(self, oracle: Oracle, budget: int | None = None):
        self.oracle = oracle
        self.budget = budget
        self.scores: dict[str, float] = {}
        self.calls = 0
        self.hits = 0

    def __contains__(self, smiles: str) -> bool:
        return smiles in self.scores

    def score(self, smiles: str) -> float:
        got = self.scores.get(smiles)
        if got is not None:
            self.hits += 1
            return got
        if self.budget is not None and self.calls >= self.budget:
            raise BudgetExhaustedError("oracle budget exhausted")
        value = self.oracle.score(smiles)
        self.scores[smiles] = value
        self.calls += 1
        return value


def make_individual(canonical: str, graph: MolGraph | None = None) -> Individual:
    if graph is None:
        graph = parse(canonical)
    return Individual(canonical, None, morgan_fingerprint(graph))


def init_population(corpus: list[str], size: int, cache: OracleCache,
                    rng: np.random.Generator) -> list[Individual]:
    """Sample ``size`` distinct corpus molecules uniformly and score them."""
    keys = _corpus_canonicals(corpus)
    if len(keys) < size:
        raise CorpusTooSmallError(
            f"corpus holds {len(keys)} distinct molecules, need {size}")
    if cache.budget is not None and cache.calls + size > cache.budget:
        raise BudgetExhaustedError("initial pool exceeds the oracle budget")
    chosen = rng.choice(len(keys), size=size, replace=False) if size else []
    population = []
    for idx in chosen:
        canon = keys[int(idx)]
        ind = make_individual(canon)
        ind.score = cache.score(canon)
        population.append(ind)
    return population


def _ranked(population: list[Individual]) -> list[Individual]:
    return sorted(population, key=lambda ind: (-ind.score, ind.smiles))


def select_guides(population: list[Individual], cfg: GAConfig) -> list[Individual]:
    """Top-G by score, pruned below a fraction of the leader, plus diverse picks.

    Diversity guides greedily maximize the minimum Tanimoto distance to the
    already selected guides, ties broken by score then canonical SMILES.
    """
    ranked = _ranked(population)
    top = ranked[:cfg.num_guides]
    threshold = cfg.guide_prune_pct / 100.0 * top[0].score
    guides = [top[0]] + [ind for ind in top[1:] if ind.score >= threshold]
    chosen = {ind.smiles for ind in guides}
    for _ in range(cfg.diversity_guides):
        candidates = [ind for ind in ranked if ind.smiles not in chosen]
        if not candidates:
            break
        best = max(
            candidates,
            key=lambda ind: (
                min(1.0 - tanimoto(ind.fingerprint, g.fingerprint)
                    for g in guides),
                ind.score,
                ind.smiles,
            ))
        guides.append(best)
        chosen.add(best.smiles)
    return guides


def mutate_via_guidance(guides: list[Individual], model: PolicyModel,
                        guidance_cfg: GuidanceConfig, cfg: GAConfig,
                        rng: np.random.Generator,
                        cache: OracleCache | None = None) -> list[Individual]:
    """Guided generations around each guide as a single-target sampler.

    Nonparseable outputs and duplicates (within the batch or already scored)
    are discarded; the result is truncated to ``max_gen_size``.
    """
    seen: set[str] = set()
    out: list[Individual] = []
    for guide in guides:
        guide_set = GuideSet.from_smiles([guide.smiles], model.vocab)
        sampler = GuidedSampler(model, guide_set, guidance_cfg)
        for _ in range(cfg.gen_per_guide):
            result = sampler.generate(rng)
            if not result.parseable:
                continue
            graph = parse(result.smiles)
            canon = write_canonical(graph)
            if canon in seen or (cache is not None and canon in cache):
                continue
            seen.add(canon)
            out.append(make_individual(canon, parse(canon)))
    return out[:cfg.max_gen_size]


def prune_offspring(offspring: list[Individual], population: list[Individual],
                    cfg: GAConfig) -> list[Individual]:
    """Keep offspring strictly more similar to the leader than the K-th best is."""
    ranked = _ranked(population)
    top1 = ranked[0]
    if len(ranked) < cfg.prune_topk:
        theta = 0.0
    else:
        theta = tanimoto(ranked[cfg.prune_topk - 1].fingerprint, top1.fingerprint)
    return [o for o in offspring
            if tanimoto(o.fingerprint, top1.fingerprint) > theta]


def _cuttable_bonds(g: MolGraph) -> list[int]:
    ring = g.ring_bond_flags()
    return [k for k, bond in enumerate(g.bonds)
            if bond.order == BondOrder.SINGLE and not ring[k]]


def _fragment(g: MolGraph, cut: int, keep_end: int) -> tuple[list[int], int]:
    """Atom indices of the fragment containing ``keep_end`` after the cut."""
    cut_bond = g.bonds[cut]
    seen = {keep_end}
    stack = [keep_end]
    while stack:
        i = stack.pop()
        for j, _ in g.neighbors(i):
            if {i, j} == {cut_bond.a, cut_bond.b}:
                continue
            if j not in seen:
                seen.add(j)
                stack.append(j)
    return sorted(seen), keep_end


def crossover(parent_a: MolGraph, parent_b: MolGraph,
              rng: np.random.Generator) -> MolGraph | None:
    """Cut one non-ring single bond in each parent and join two fragments.

    Returns None when either parent has no cuttable bond or the join would
    push an attachment atom past its valence.
    """
    cuts_a = _cuttable_bonds(parent_a)
    cuts_b = _cuttable_bonds(parent_b)
    if not cuts_a or not cuts_b:
        return None
    cut_a = cuts_a[int(rng.integers(len(cuts_a)))]
    cut_b = cuts_b[int(rng.integers(len(cuts_b)))]
    bond_a = parent_a.bonds[cut_a]
    bond_b = parent_b.bonds[cut_b]
    end_a = bond_a.a if rng.integers(2) == 0 else bond_a.b
    end_b = bond_b.a if rng.integers(2) == 0 else bond_b.b
    atoms_a, attach_a = _fragment(parent_a, cut_a, end_a)
    atoms_b, attach_b = _fragment(parent_b, cut_b, end_b)

    def consumed(g: MolGraph, i: int, kept: set[int]) -> int:
        total = sum({BondOrder.SINGLE: 1, BondOrder.DOUBLE: 2,
                     BondOrder.TRIPLE: 3, BondOrder.AROMATIC: 1}[order]
                    for j, order in g.neighbors(i) if j in kept)
        return total + (1 if g.atoms[i].aromatic else 0)

    # After cutting, each attachment atom has one free valence unit; the new
    # single bond consumes exactly that, but verify against the table anyway.
    for g, atoms, attach in ((parent_a, atoms_a, attach_a),
                             (parent_b, atoms_b, attach_b)):
        kept = set(atoms)
        after = consumed(g, attach, kept) + 1
        before = consumed(g, attach, set(range(len(g))))
        if after > VALENCE[g.atoms[attach].element] and after > before:
            return None

    mapping: dict[tuple[str, int], int] = {}
    atoms = []
    bonds = []
    for old in atoms_a:
        mapping[("a", old)] = len(atoms)
        atoms.append(parent_a.atoms[old])
    kept_a = set(atoms_a)
    for bond in parent_a.bonds:
        if bond.a in kept_a and bond.b in kept_a:
            bonds.append(Bond(mapping[("a", bond.a)], mapping[("a", bond.b)],
                              bond.order))
    for old in atoms_b:
        mapping[("b", old)] = len(atoms)
        atoms.append(parent_b.atoms[old])
    kept_b = set(atoms_b)
    for bond in parent_b.bonds:
        if bond.a in kept_b and bond.b in kept_b:
            bonds.append(Bond(mapping[("b", bond.a)], mapping[("b", bond.b)],
                              bond.order))
    bonds.append(Bond(mapping[("a", attach_a)], mapping[("b", attach_b)],
                      BondOrder.SINGLE))
    return MolGraph(atoms, bonds)


def run(model: PolicyModel, corpus: list[str], oracle: Oracle, cfg: GAConfig,
        guidance_cfg: GuidanceConfig, rng: np.random.Generator,
        seed_molecules: list[str] | None = None,
        record_sink=None) -> RunResult:
    """Full optimization loop; see the module docstring for the schedule."""
    if cfg.init_pool_size > cfg.budget:
        raise BudgetExhaustedError("initial pool size exceeds the budget")
    cache = OracleCache(oracle, cfg.budget)
    by_smiles: dict[str, Individual] = {}

    def absorb(ind: Individual) -> None:
        by_smiles[ind.smiles] = ind

    for s in seed_molecules or []:
        canon = write_canonical(parse(s))
        if canon in by_smiles:
            continue
        ind = make_individual(canon)
        ind.score = cache.score(canon)
        absorb(ind)

    # Pre-shuffle the corpus order once so random-exploration draws are
    # reproducible and independent of the budget.
    pool_keys = _corpus_canonicals(corpus)
    explore_order = [pool_keys[int(i)]
                     for i in rng.permutation(len(pool_keys))]
    explore_ptr = 0

    if cfg.init_pool_size:
        if len(pool_keys) < cfg.init_pool_size:
            raise CorpusTooSmallError(
                f"corpus holds {len(pool_keys)} molecules, "
                f"need {cfg.init_pool_size}")
        chosen = rng.choice(len(pool_keys), size=cfg.init_pool_size,
                            replace=False)
        for idx in chosen:
            canon = pool_keys[int(idx)]
            if canon in by_smiles:
                continue
            ind = make_individual(canon)
            ind.score = cache.score(canon)
            absorb(ind)
    if not by_smiles:
        raise CorpusTooSmallError("empty initial population")

    def avg_topk() -> float:
        scores = sorted((ind.score for ind in by_smiles.values()), reverse=True)
        top = scores[:cfg.report_k]
        return float(sum(top) / len(top))

    def top1() -> Individual:
        return _ranked(list(by_smiles.values()))[0]

    records: list[RunRecord] = []
    top1_trajectory: list[tuple[int, float]] = []

    def emit(generation: int) -> None:
        rec = RunRecord(generation, cache.calls, avg_topk())
        records.append(rec)
        top1_trajectory.append((cache.calls, top1().score))
        if record_sink is not None:
            record_sink(rec)

    emit(0)
    best_avg = records[-1].avg_topk
    no_change = 0
    generation = 0

    while cache.calls < cfg.budget and no_change < cfg.stop_no_change:
        population = list(by_smiles.values())
        guides = select_guides(population, cfg)
        leader = top1()
        if leader.score >= cfg.exploitation_trigger:
            eff = dataclasses.replace(guidance_cfg,
                                      alpha=cfg.exploitation_alpha,
                                      tau=cfg.exploitation_tau)
        else:
            eff = guidance_cfg
        offspring = mutate_via_guidance(guides, model, eff, cfg, rng,
                                        cache=cache)
        batch = prune_offspring(offspring, population, cfg)
        seen = {ind.smiles for ind in batch}

        if cfg.exploration_candidates > 0:
            if cfg.crossover_enabled:
                parents = [parse(g.smiles) for g in guides]
                attempts = 0
                added = 0
                while added < cfg.exploration_candidates \
                        and attempts < cfg.exploration_candidates * 4:
                    attempts += 1
                    pa = parents[int(rng.integers(len(parents)))]
                    pb = parents[int(rng.integers(len(parents)))]
                    child = crossover(pa, pb, rng)
                    if child is None:
                        continue
                    canon = write_canonical(child)
                    if canon in seen or canon in cache or canon in by_smiles:
                        continue
                    seen.add(canon)
                    batch.append(make_individual(canon, child))
                    added += 1
            else:
                added = 0
                while added < cfg.exploration_candidates \
                        and explore_ptr < len(explore_order):
                    canon = explore_order[explore_ptr]
                    explore_ptr += 1
                    if canon in seen or canon in cache or canon in by_smiles:
                        continue
                    seen.add(canon)
                    batch.append(make_individual(canon))
                    added += 1

        if batch and cache.calls + len(batch) > cfg.budget:
            # The whole batch no longer fits; stop without scoring so the
            # record list is a prefix of any larger-budget rerun.
            break
        for ind in batch:
            ind.score = cache.score(ind.smiles)
            absorb(ind)
        generation += 1
        emit(generation)
        if records[-1].avg_topk > best_avg:
            best_avg = records[-1].avg_topk
            no_change = 0
        else:
            no_change += 1

    return RunResult(records, _ranked(list(by_smiles.values())),
                     top1_trajectory, cache.calls, cache.hits, generation)


def random_baseline(corpus: list[str], oracle: Oracle, cfg: GAConfig,
                    rng: np.random.Generator) -> RunResult:
    """Score uniformly drawn corpus molecules under the same budget/records."""
    cache = OracleCache(oracle, cfg.budget)
    keys = _corpus_canonicals(corpus)
    order = [keys[int(i)] for i in rng.permutation(len(keys))]
    by_smiles: dict[str, Individual] = {}
    records: list[RunRecord] = []
    top1_trajectory: list[tuple[int, float]] = []

    def avg_topk() -> float:
        scores = sorted((ind.score for ind in by_smiles.values()), reverse=True)
        top = scores[:cfg.report_k]
        return float(sum(top) / len(top))

    def emit(generation: int) -> None:
        records.append(RunRecord(generation, cache.calls, avg_topk()))
        best = _ranked(list(by_smiles.values()))[0]
        top1_trajectory.append((cache.calls, best.score))

    ptr = 0
    generation = 0
    batch_size = cfg.init_pool_size or cfg.max_gen_size
    while ptr < len(order) and cache.calls < cfg.budget:
        remaining = cfg.budget - cache.calls
        size = min(batch_size, remaining, len(order) - ptr)
        for canon in order[ptr:ptr + size]:
            ind = make_individual(canon, pool[canon])
            ind.score = cache.score(canon)
            by_smiles[ind.smiles] = ind
        ptr += size
        emit(generation)
        generation += 1
        batch_size = cfg.max_gen_size
    return RunResult(records, _ranked(list(by_smiles.values())),
                     top1_trajectory, cache.calls, cache.hits, generation)


def auc_topk(records: list[RunRecord], budget: int) -> float:
    """Normalized step integral of avg_topk against budget, extended to B.

    Each record's value covers the calls since the previous record; the last
    value extends flat to the full budget.
    """
    if not records:
        raise EmptyTrajectoryError("no records to integrate")
    prev = 0
    total = 0.0
    for rec in records:
        if rec.budget_spent < prev:
            raise ValueError("budget_spent must be non-decreasing")
        total += rec.avg_topk * (rec.budget_spent - prev)
        prev = rec.budget_spent
    if budget < prev:
        raise ValueError("budget smaller than recorded spend")
    total += records[-1].avg_topk * (budget - prev)
    return total / budget


def write_records_csv(records: list[RunRecord], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(RECORDS_HEADER + "\n")
        for rec in records:
            fh.write(f"{rec.generation},{rec.budget_spent},{rec.avg_topk!r}\n")


def read_records_csv(path) -> list[RunRecord]:
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != RECORDS_HEADER:
            raise ValueError(f"unexpected records header {header!r}")
        for line in fh:
            gen, spent, avg = line.strip().split(",")
            records.append(RunRecord(int(gen), int(spent), float(avg)))
    return records


def write_topk_json(population: list[Individual], k: int, path) -> None:
    top = _ranked(population)[:k]
    payload = [{"smiles": ind.smiles, "score": ind.score} for ind in top]
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2)


_BOOL_WORDS = {"true": True, "1": True, "on": True, "yes": True,
               "false": False, "0": False, "off": False, "no": False}


def load_ga_config(path) -> GAConfig:
    """Read a flat key=value file whose keys mirror GAConfig field names."""
    fields = {f.name: f.type for f in dataclasses.fields(GAConfig)}
    values = {}
    with open(path, "r", encoding="utf-8") as fh:
        for raw in fh:
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"expected key=value, got {line!r}")
            key, _, text = line.partition("=")
            key = key.strip()
            text = text.strip()
            if key not in fields:
                raise ValueError(f"unknown GA config key {key!r}")
            kind = fields[key]
            if kind in ("bool", bool):
                values[key] = _BOOL_WORDS[text.lower()]
            elif kind in ("int", int):
                values[key] = int(text)
            else:
                values[key] = float(text)
    return GAConfig(**values)


def ga_config_text(cfg: GAConfig) -> str:
    lines = [f"{f.name}={getattr(cfg, f.name)}"
             for f in dataclasses.fields(GAConfig)]
    return "\n".join(lines) + "\n"
