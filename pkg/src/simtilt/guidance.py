"""Similarity-tilted autoregressive decoding.

At each step every candidate continuation is embedded, its cosine similarity
to the guide prefixes (optionally through a random-feature kernel map) is
averaged into a per-token signal s_bar, and sampling proceeds from
softmax(((1 - alpha) * u + alpha * s_bar) / tau) over the base logits u.
alpha = 0 recovers unconditional sampling; alpha = 1 ignores the base model.

``tilt_objective`` is the matching variational view: the sampler's tilted
distribution maximizes similarity minus a generalized KL to the smoothed
base distribution. Note the convention flip: the sampler weights similarity
by alpha, the objective weights it by (1 - alpha), so sampler alpha
corresponds to objective (1 - alpha).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .policy import PolicyModel, detokenize, softmax
from .rff import RFFProjection
from .smiles import SmilesError, Vocab, parse, tokenize, write_canonical


class EmptyGuideSetError(ValueError):
    pass


class LengthMismatchError(ValueError):
    pass


class NonFiniteInputError(ValueError):
    pass


class NotADistributionError(ValueError):
    pass


@dataclass(frozen=True)
class GuidanceConfig:
    """Knobs of the tilted sampler.

    ``rff`` is (num_features, kernel_temperature, seed); None disables the
    kernel map. ``top_k`` restricts sampling to the top-k base logits (applied
    before standardization); None disables truncation.
    """

    alpha: float = 0.4
    tau: float = 0.25
    rff: tuple[int, float, int] | None = None
    standardize: bool = True
    top_k: int | None = None
    max_len: int = 100

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if self.max_len < 1:
            raise ValueError("max_len must be at least 1")
        if self.top_k is not None and self.top_k < 1:
            raise ValueError("top_k must be at least 1 when set")


class GuideSet:
    """Nonempty set of guide molecules as canonical token sequences."""

    def __init__(self, smiles: list[str], ids: list[tuple[int, ...]]):
        if not ids:
            raise EmptyGuideSetError("at least one guide is required")
        self.smiles = list(smiles)
        self.ids = [tuple(seq) for seq in ids]
        self.max_len = max(len(seq) for seq in self.ids)

    def __len__(self) -> int:
        return len(self.ids)

    @classmethod
    def from_smiles(cls, smiles_list: list[str], vocab: Vocab) -> "GuideSet":
        if not smiles_list:
            raise EmptyGuideSetError("at least one guide is required")
        canon = [write_canonical(parse(s)) for s in smiles_list]
        ids = [tuple(t.id for t in tokenize(s, vocab)) for s in canon]
        return cls(canon, ids)

    @classmethod
    def from_token_ids(cls, ids_list: list, labels: list[str] | None = None) -> "GuideSet":
        labels = labels or ["" for _ in ids_list]
        return cls(labels, [tuple(seq) for seq in ids_list])


@dataclass
class StepTrace:
    t: int
    base_logits: np.ndarray
    mean_similarity: np.ndarray
    probabilities: np.ndarray
    sampled_id: int


@dataclass
class GenerationResult:
    """A generated molecule; ``parseable`` flags invalid strings instead of
    raising, so callers decide whether to discard them."""

    smiles: str
    token_ids: list[int]
    parseable: bool
    trace: list[StepTrace] | None = None


def _standardize(v: np.ndarray) -> np.ndarray:
    # The guard keeps a constant vector (zero spread) at exactly zero
    # contribution instead of NaN.
    return (v - v.mean()) / max(float(v.std()), 1e-6)


def _normalize_rows(m: np.ndarray) -> np.ndarray:
    norms = np.sqrt(np.einsum("ij,ij->i", m, m))
    return m / np.maximum(norms, 1e-12)[:, None]


def tilt(u: np.ndarray, s_bar: np.ndarray, cfg: GuidanceConfig) -> np.ndarray:
    """Mix base logits with the similarity signal into a probability vector."""
    u = np.asarray(u, dtype=np.float64)
    s_bar = np.asarray(s_bar, dtype=np.float64)
    if u.shape != s_bar.shape:
        raise LengthMismatchError(
            f"logits length {u.shape} != similarity length {s_bar.shape}")
    if not (np.isfinite(u).all() and np.isfinite(s_bar).all()):
        raise NonFiniteInputError("logits and similarities must be finite")

    full_len = len(u)
    keep = None
    if cfg.top_k is not None and cfg.top_k < full_len:
        keep = np.sort(np.argpartition(u, full_len - cfg.top_k)[-cfg.top_k:])
        u = u[keep]
        s_bar = s_bar[keep]

    if cfg.standardize:
        u = _standardize(u)
        s_bar = _standardize(s_bar)
    # Exact passthrough at the endpoints keeps alpha=0 bitwise equal to
    # unconditional sampling.
    if cfg.alpha == 0.0:
        mixed = u
    elif cfg.alpha == 1.0:
        mixed = s_bar
    else:
        mixed = (1.0 - cfg.alpha) * u + cfg.alpha * s_bar
    p = softmax(mixed / cfg.tau)
    if keep is None:
        return p
    out = np.zeros(full_len)
    out[keep] = p
    return out


def guide_rows(model: PolicyModel, guides: GuideSet, t: int,
               proj: RFFProjection | None) -> np.ndarray:
    """Normalized guide-prefix embeddings at step t, one row per guide."""
    bos = model.vocab.bos_id
    rows = []
    for seq in guides.ids:
        prefix = (bos,) + seq[:min(t, len(seq))]
        rows.append(model.embed(prefix))
    y = np.stack(rows)
    if proj is not None:
        y = proj.transform(y)
    return _normalize_rows(y)


def step_similarity(model: PolicyModel, prefix_ids, guides: GuideSet, t: int,
                    proj: RFFProjection | None = None) -> np.ndarray:
    """Mean cosine of every candidate continuation to the guide prefixes."""
    if t < 1:
        raise ValueError("step index t starts at 1")
    if len(guides) == 0:
        raise EmptyGuideSetError("at least one guide is required")
    x = model.candidate_embeddings(prefix_ids)
    if proj is not None:
        x = proj.transform(x)
    xn = _normalize_rows(x)
    y = guide_rows(model, guides, t, proj)
    return (xn @ y.T).mean(axis=1)


class GuidedSampler:
    """Reusable tilted sampler bound to (model, guides, config).

    Guide-prefix embeddings are cached per step index, so repeated
    generations against the same guides are cheap. Instances hold no
    generation state; concurrent ``generate`` calls with separate rngs are
    safe.
    """

    def __init__(self, model: PolicyModel, guides: GuideSet,
                 cfg: GuidanceConfig):
        self.model = model
        self.guides = guides
        self.cfg = cfg
        self.proj = None
        if cfg.rff is not None:
            num_features, temperature, seed = cfg.rff
            self.proj = RFFProjection(model.embed_dim, num_features,
                                      temperature, seed)
        self._guide_cache: dict[int, np.ndarray] = {}

    def _guide_matrix(self, t: int) -> np.ndarray:
        key = min(t, self.guides.max_len)
        got = self._guide_cache.get(key)
        if got is None:
            got = guide_rows(self.model, self.guides, key, self.proj)
            self._guide_cache[key] = got
        return got

    def generate(self, rng: np.random.Generator, trace_sink=None,
                 collect_trace: bool = False) -> GenerationResult:
        model = self.model
        cfg = self.cfg
        vocab = model.vocab
        nvocab = len(vocab)
        prefix = [vocab.bos_id]
        need_similarity = cfg.alpha > 0.0 or collect_trace or trace_sink
        base_emb = model.embed(prefix) if need_similarity else None
        out: list[int] = []
        trace: list[StepTrace] | None = [] if collect_trace else None

        for t in range(1, cfg.max_len + 1):
            if need_similarity:
                x = model.candidate_embeddings(prefix, base=base_emb)
                xf = self.proj.transform(x) if self.proj is not None else x
                xn = _normalize_rows(xf)
                y = self._guide_matrix(t)
                s_bar = (xn @ y.T).mean(axis=1)
            else:
                x = None
                s_bar = np.zeros(nvocab)
            u = model.logits(prefix)
            p = tilt(u, s_bar, cfg)
            idx = int(np.searchsorted(np.cumsum(p), rng.random(), side="right"))
            idx = min(idx, nvocab - 1)
            if trace is not None:
                trace.append(StepTrace(t, u, s_bar, p, idx))
            if trace_sink is not None:
                top = np.argsort(p)[::-1][:10]
                trace_sink({
                    "t": t,
                    "top10": [[vocab.text_of(int(i)), float(p[i])] for i in top],
                    "chosen": vocab.text_of(idx),
                })
            out.append(idx)
            prefix.append(idx)
            if idx == vocab.eos_id:
                break
            if need_similarity:
                base_emb = x[idx].copy() if x is not None \
                    else model.embed(prefix)

        text = detokenize(out, vocab)
        parseable = True
        try:
            parse(text)
        except SmilesError:
            parseable = False
        return GenerationResult(text, out, parseable, trace)


def generate_guided(model: PolicyModel, guides: GuideSet, cfg: GuidanceConfig,
                    rng: np.random.Generator, trace_sink=None,
                    collect_trace: bool = False) -> GenerationResult:
    """One tilted generation starting from BOS, ending at EOS or max_len."""
    sampler = GuidedSampler(model, guides, cfg)
    return sampler.generate(rng, trace_sink=trace_sink,
                            collect_trace=collect_trace)


def tilt_objective(p: np.ndarray, similarity: np.ndarray, u: np.ndarray,
                   alpha: float) -> float:
    """(1 - alpha) * <p, similarity> - KL_gen(p || softmax(u)^alpha).

    KL_gen is the generalized KL divergence sum(p log(p/q)) + sum(q) - 1,
    defined for the unnormalized reference q = softmax(u)**alpha.
    """
    p = np.asarray(p, dtype=np.float64)
    similarity = np.asarray(similarity, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    if not (p.shape == similarity.shape == u.shape):
        raise LengthMismatchError("p, similarity and u must share a length")
    if p.min() < -1e-12 or abs(float(p.sum()) - 1.0) > 1e-9:
        raise NotADistributionError("p must lie on the probability simplex")
    p = np.clip(p, 0.0, None)
    q = softmax(u) ** alpha
    mask = p > 0
    kl_gen = float(np.sum(p[mask] * np.log(p[mask] / q[mask]))
                   + q.sum() - 1.0)
    return float((1.0 - alpha) * (p @ similarity) - kl_gen)


def tilt_objective_optimum(similarity: np.ndarray, u: np.ndarray,
                           alpha: float) -> np.ndarray:
    """Closed-form maximizer: p* proportional to exp((1-alpha) K + alpha log softmax(u))."""
    pi_ref = softmax(np.asarray(u, dtype=np.float64))
    return softmax((1.0 - alpha) * np.asarray(similarity, dtype=np.float64)
                   + alpha * np.log(pi_ref))
