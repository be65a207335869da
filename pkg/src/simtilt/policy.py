"""Autoregressive token policies over SMILES vocabularies.

The abstract interface exposes next-token logits and prefix embeddings.
The bundled implementation pairs an additively smoothed n-gram model with a
deterministic hashed bag-of-ngrams sequence embedder, so the guided sampler
runs at desk scale without any pretrained weights; a remote neural model can
be dropped in through the wire adapter instead.
"""

from __future__ import annotations

import abc
import gzip
import json

import numpy as np

from ._hashing import mix64
from .smiles import Vocab, build_vocab, tokenize

MODEL_FORMAT = "simtilt-ngram"
MODEL_VERSION = 1


class EmptyCorpusError(ValueError):
    pass


class InvalidSmoothingError(ValueError):
    pass


class ModelFormatError(ValueError):
    pass


def softmax(x: np.ndarray) -> np.ndarray:
    z = x - np.max(x)
    e = np.exp(z)
    return e / e.sum()


def detokenize(ids, vocab: Vocab) -> str:
    return "".join(vocab.text_of(i) for i in ids
                   if i not in (vocab.bos_id, vocab.eos_id))


class HashedEmbedder:
    """Signed hashed bag of token n-grams folded into ``dim`` buckets.

    Deterministic given (dim, ngram_max, seed); embeddings of two prefixes
    agree exactly iff their n-gram bags collide, which makes prefix cosine a
    usable locality signal for guidance.
    """

    def __init__(self, dim: int = 256, ngram_max: int = 3, seed: int = 0):
        if dim < 8:
            raise ValueError("embedding dim must be at least 8")
        if ngram_max < 1:
            raise ValueError("ngram_max must be at least 1")
        self.dim = dim
        self.ngram_max = ngram_max
        self.seed = seed
        self._ngram_memo: dict[tuple[int, ...], tuple[int, float]] = {}
        self._delta_cache: dict[tuple, tuple] = {}
        self._rows_cache: dict[tuple[int, int], np.ndarray] = {}

    def _bucket_sign(self, ids: tuple[int, ...]) -> tuple[int, float]:
        got = self._ngram_memo.get(ids)
        if got is None:
            h = mix64((self.seed, len(ids)) + ids)
            got = (h % self.dim, 1.0 if (h >> 62) & 1 else -1.0)
            self._ngram_memo[ids] = got
        return got

    def _fallback_bucket(self, ids: tuple[int, ...]) -> int:
        return mix64((self.seed, 0xFA11BAC) + ids) % self.dim

    def embed(self, prefix_ids) -> np.ndarray:
        ids = tuple(prefix_ids)
        if not ids:
            raise ValueError("cannot embed an empty prefix")
        v = np.zeros(self.dim)
        top = min(self.ngram_max, len(ids))
        for n in range(1, top + 1):
            for start in range(len(ids) - n + 1):
                b, s = self._bucket_sign(ids[start:start + n])
                v[b] += s
        if not v.any():
            # All contributions cancelled (astronomically rare); keep the
            # norm strictly positive with a sequence-determined unit bit.
            v[self._fallback_bucket(ids)] = 1.0
        return v

    def append_deltas(self, context: tuple[int, ...], vocab_size: int):
        """Sparse updates turning embed(p) into embed(p + [i]) for every i.

        ``context`` is the last (ngram_max - 1) tokens of the prefix (or the
        whole prefix when shorter). Returns (rows, cols, signs) suitable for
        ``np.add.at`` on a (vocab_size, dim) candidate matrix.
        """
        key = (vocab_size, context)
        got = self._delta_cache.get(key)
        if got is not None:
            return got
        m = min(self.ngram_max, len(context) + 1)
        cols = np.empty(vocab_size * m, dtype=np.int64)
        signs = np.empty(vocab_size * m)
        k = 0
        for i in range(vocab_size):
            for n in range(1, m + 1):
                window = context[len(context) - (n - 1):] + (i,)
                b, s = self._bucket_sign(window)
                cols[k] = b
                signs[k] = s
                k += 1
        rows_key = (vocab_size, m)
        rows = self._rows_cache.get(rows_key)
        if rows is None:
            rows = np.repeat(np.arange(vocab_size), m)
            self._rows_cache[rows_key] = rows
        got = (rows, cols, signs)
        self._delta_cache[key] = got
        return got

    def params(self) -> dict:
        return {"dim": self.dim, "ngram_max": self.ngram_max, "seed": self.seed}


class PolicyModel(abc.ABC):
    """Next-token logits plus prefix embeddings over a shared vocabulary."""

    vocab: Vocab
    embed_dim: int

    @abc.abstractmethod
    def logits(self, prefix_ids) -> np.ndarray:
        """Finite vector of length len(vocab) for the given prefix."""

    @abc.abstractmethod
    def embed(self, prefix_ids) -> np.ndarray:
        """Deterministic vector of length embed_dim for a nonempty prefix."""

    def candidate_embeddings(self, prefix_ids,
                             base: np.ndarray | None = None) -> np.ndarray:
        """Matrix of embed(prefix + [i]) for every vocabulary token i."""
        prefix = list(prefix_ids)
        return np.stack([self.embed(prefix + [i]) for i in range(len(self.vocab))])


class NGramModel(PolicyModel):
    """Additively smoothed fixed-order n-gram policy.

    logit_i = log((count(ctx, i) + delta) / (total(ctx) + delta * V)), with
    ctx the last (order - 1) prefix tokens. Smoothing keeps every token
    reachable in every context. Instances are immutable after construction;
    logits/embed are read-only and safe to call concurrently.
    """

    def __init__(self, order: int, smoothing: float, vocab: Vocab,
                 counts: dict[tuple[int, ...], dict[int, int]],
                 embedder: HashedEmbedder):
        if order < 1:
            raise ValueError("order must be at least 1")
        if smoothing <= 0:
            raise InvalidSmoothingError("smoothing must be positive")
        self.order = order
        self.smoothing = smoothing
        self.vocab = vocab
        self.counts = counts
        self.embedder = embedder
        self.embed_dim = embedder.dim
        self._nvocab = len(vocab)
        self._log_delta = float(np.log(smoothing))
        self._frozen: dict[tuple[int, ...], tuple] = {}

    def _context(self, prefix_ids) -> tuple[int, ...]:
        if self.order == 1:
            return ()
        return tuple(prefix_ids[-(self.order - 1):])

    def _frozen_context(self, ctx: tuple[int, ...]):
        got = self._frozen.get(ctx)
        if got is None:
            table = self.counts.get(ctx)
            v = self._nvocab
            if table:
                ids = np.array(sorted(table), dtype=np.int64)
                cnts = np.array([table[i] for i in ids], dtype=np.float64)
                total = float(cnts.sum())
                log_denom = float(np.log(total + self.smoothing * v))
                log_num = np.log(cnts + self.smoothing)
                got = (ids, log_num - log_denom, self._log_delta - log_denom)
            else:
                fill = self._log_delta - float(np.log(self.smoothing * v))
                got = (None, None, fill)
            self._frozen[ctx] = got
        return got

    def logits(self, prefix_ids) -> np.ndarray:
        for i in prefix_ids:
            if not 0 <= i < self._nvocab:
                raise ValueError(f"token id {i} outside vocabulary")
        ids, vals, fill = self._frozen_context(self._context(prefix_ids))
        out = np.full(self._nvocab, fill)
        if ids is not None:
            out[ids] = vals
        return out

    def embed(self, prefix_ids) -> np.ndarray:
        return self.embedder.embed(prefix_ids)

    def candidate_embeddings(self, prefix_ids,
                             base: np.ndarray | None = None) -> np.ndarray:
        prefix = tuple(prefix_ids)
        if base is None:
            base = self.embed(prefix)
        ctx = prefix[-(self.embedder.ngram_max - 1):] \
            if self.embedder.ngram_max > 1 else ()
        rows, cols, signs = self.embedder.append_deltas(ctx, self._nvocab)
        x = np.repeat(base[None, :], self._nvocab, axis=0)
        np.add.at(x, (rows, cols), signs)
        # Mirror embed()'s cancellation guard so the incremental path stays
        # bit-identical to embedding each candidate from scratch.
        norms = np.einsum("ij,ij->i", x, x)
        if not norms.all():
            for i in np.flatnonzero(norms == 0.0):
                x[i, self.embedder._fallback_bucket(prefix + (int(i),))] = 1.0
        return x


def train_ngram(corpus: list[str], order: int = 6, smoothing: float = 0.01,
                vocab: Vocab | None = None, embed_dim: int = 256,
                embed_seed: int = 0) -> NGramModel:
    """Count n-gram transitions over a SMILES corpus.

    Every line is tokenized, wrapped in BOS/EOS, and counted under contexts
    of up to (order - 1) tokens. The vocabulary defaults to the corpus
    tokens plus the standard base set.
    """
    if not corpus:
        raise EmptyCorpusError("training corpus is empty")
    if smoothing <= 0:
        raise InvalidSmoothingError("smoothing must be positive")
    if order < 1:
        raise ValueError("order must be at least 1")
    if vocab is None:
        vocab = build_vocab(corpus)
    counts: dict[tuple[int, ...], dict[int, int]] = {}
    for line in corpus:
        ids = [t.id for t in tokenize(line, vocab)]
        seq = [vocab.bos_id] + ids + [vocab.eos_id]
        for t in range(1, len(seq)):
            ctx = tuple(seq[max(0, t - order + 1):t])
            table = counts.setdefault(ctx, {})
            table[seq[t]] = table.get(seq[t], 0) + 1
    embedder = HashedEmbedder(dim=embed_dim, seed=embed_seed)
    return NGramModel(order, smoothing, vocab, counts, embedder)


def sample_unconditional(model: PolicyModel, tau: float, max_len: int,
                         rng: np.random.Generator) -> list[int]:
    """Temperature-sample token ids until EOS or max_len tokens."""
    if tau <= 0:
        raise ValueError("tau must be positive")
    if max_len < 1:
        raise ValueError("max_len must be at least 1")
    prefix = [model.vocab.bos_id]
    out: list[int] = []
    for _ in range(max_len):
        p = softmax(model.logits(prefix) / tau)
        idx = int(np.searchsorted(np.cumsum(p), rng.random(), side="right"))
        idx = min(idx, len(p) - 1)
        out.append(idx)
        prefix.append(idx)
        if idx == model.vocab.eos_id:
            break
    return out


def save_model(model: NGramModel, path) -> None:
    """Persist the model as versioned gzipped JSON."""
    payload = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "order": model.order,
        "smoothing": model.smoothing,
        "tokens": model.vocab.texts[2:],
        "embedder": model.embedder.params(),
        "counts": [
            [list(ctx), sorted(table.items())]
            for ctx, table in sorted(model.counts.items())
        ],
    }
    with gzip.open(path, "wt", encoding="utf-8") as fh:
        json.dump(payload, fh)


def load_model(path) -> NGramModel:
    try:
        with gzip.open(path, "rt", encoding="utf-8") as fh:
            payload = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ModelFormatError(f"unreadable model file {path}: {exc}") from exc
    if payload.get("format") != MODEL_FORMAT:
        raise ModelFormatError(f"not a {MODEL_FORMAT} file: {path}")
    if payload.get("version") != MODEL_VERSION:
        raise ModelFormatError(
            f"unsupported model version {payload.get('version')} "
            f"(expected {MODEL_VERSION})")
    vocab = Vocab(payload["tokens"])
    counts = {
        tuple(ctx): {int(tok): int(cnt) for tok, cnt in table}
        for ctx, table in payload["counts"]
    }
    emb = payload["embedder"]
    embedder = HashedEmbedder(dim=emb["dim"], ngram_max=emb["ngram_max"],
                              seed=emb["seed"])
    return NGramModel(payload["order"], payload["smoothing"], vocab, counts,
                      embedder)
