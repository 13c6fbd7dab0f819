"""Word embedding strategies: random init, domain skip-gram with negative
sampling, and a character-trigram hashing embedder for spelling-variant
robustness.

The trigram embedder stands in for a pretrained character-compositional
model: words sharing most trigrams (common for Roman Urdu spelling
variants) land near each other, with the conventional d=1024 interface.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .tensor import Tensor, gather_rows

PAD_ID = 0
UNK_ID = 1


@dataclass
class EmbeddingTable:
    """Token-id -> vector table. Row 0 is padding: all-zero and never updated."""

    vocab_size: int
    dim: int
    vectors: Tensor  # (vocab_size, dim)
    trainable: bool = True

    def tensors(self):
        return [("vectors", self.vectors)]


@dataclass
class SkipGramConfig:
    dim: int = 300
    window: int = 5
    negative_samples: int = 5
    epochs: int = 5
    learning_rate: float = 0.025

    def __post_init__(self):
        if self.dim <= 0 or self.window < 1 or self.negative_samples < 1:
            raise ValueError("invalid skip-gram configuration")
        if self.epochs < 0 or self.learning_rate <= 0:
            raise ValueError("invalid skip-gram configuration")


def init_random(vocab_size: int, dim: int, rng: np.random.Generator,
                trainable: bool = True) -> EmbeddingTable:
    """Uniform(-0.05, 0.05) rows; the pad row stays zero."""
    if vocab_size < 2:
        raise ValueError("vocab_size must be >= 2 (pad and unk are reserved)")
    vecs = rng.uniform(-0.05, 0.05, size=(vocab_size, dim))
    vecs[PAD_ID] = 0.0
    return EmbeddingTable(vocab_size, dim, Tensor(vecs, requires_grad=trainable), trainable)


def lookup(table: EmbeddingTable, ids) -> Tensor:
    """Gather rows for a flat id sequence: (l,) -> (l, dim).

    The gradient scatter-adds back to the looked-up rows only; the pad row
    is excluded so it stays zero for the lifetime of the table.
    """
    idx = np.asarray(ids, dtype=np.intp)
    if idx.size and (idx.min() < 0 or idx.max() >= table.vocab_size):
        raise ValueError(f"token id out of range for vocab of {table.vocab_size}")
    return gather_rows(table.vectors, idx, skip_row=PAD_ID)


# ---------------------------------------------------------------------------
# character-compositional embedding


def _trigrams(word: str):
    padded = "^" + word + "$"
    return [padded[i:i + 3] for i in range(len(padded) - 2)]


def char_compose(word: str, dim: int) -> np.ndarray:
    """Deterministic signed-hash composition of boundary-padded character
    trigrams, scaled by 1/sqrt(#trigrams).

    Pure function of the word alone; the same word always maps to the same
    vector, independent of vocabulary order or process.
    """
    if not word:
        raise ValueError("cannot embed an empty word")
    if dim <= 0:
        raise ValueError("dim must be positive")
    vec = np.zeros(dim)
    grams = _trigrams(word)
    for gram in grams:
        digest = hashlib.blake2b(gram.encode("utf-8"), digest_size=8).digest()
        h = int.from_bytes(digest, "little")
        sign = 1.0 if h & 1 else -1.0
        vec[(h >> 1) % dim] += sign
    return vec / np.sqrt(len(grams))


def char_compose_table(tokens: list[str], dim: int, rng: np.random.Generator,
                       trainable: bool = True) -> EmbeddingTable:
    """Fill a table from ``char_compose`` of each non-special token.

    ``tokens`` is the full id->token list; rows 0 and 1 are treated as pad
    (zero) and unk (small random, since it has no spelling to compose).
    """
    vecs = np.zeros((len(tokens), dim))
    vecs[UNK_ID] = rng.uniform(-0.05, 0.05, size=dim)
    for i, tok in enumerate(tokens[2:], start=2):
        vecs[i] = char_compose(tok, dim)
    return EmbeddingTable(len(tokens), dim, Tensor(vecs, requires_grad=trainable), trainable)


# ---------------------------------------------------------------------------
# skip-gram with negative sampling


def train_skipgram(corpus: list, vocab_size: int, cfg: SkipGramConfig,
                   rng: np.random.Generator, trainable: bool = True) -> EmbeddingTable:
    """Train input vectors on (center, context) pairs within the window.

    Each pair gets one positive update and ``negative_samples`` negative
    updates on the sigmoid dot-product loss, with negatives drawn from the
    unigram^0.75 distribution. With epochs=0 the returned table is exactly
    its random initialization. Single-threaded and deterministic.
    """
    if not corpus or all(len(s) == 0 for s in corpus):
        raise ValueError("skip-gram corpus is empty")
    table = init_random(vocab_size, cfg.dim, rng, trainable=trainable)
    w_in = table.vectors.data
    w_out = np.zeros_like(w_in)

    counts = np.zeros(vocab_size)
    sentences = []
    for sent in corpus:
        ids = np.asarray([i for i in sent if i != PAD_ID], dtype=np.intp)
        if ids.size and (ids.min() < 0 or ids.max() >= vocab_size):
            raise ValueError("token id out of range in skip-gram corpus")
        if ids.size:
            sentences.append(ids)
            np.add.at(counts, ids, 1.0)
    if not sentences:
        raise ValueError("skip-gram corpus is empty")

    noise = counts ** 0.75
    noise[PAD_ID] = 0.0
    noise_cdf = np.cumsum(noise / noise.sum())

    total_pairs = sum(
        min(c + cfg.window + 1, len(s)) - max(c - cfg.window, 0) - 1
        for s in sentences for c in range(len(s))
    ) * max(cfg.epochs, 1)
    seen = 0
    for _ in range(cfg.epochs):
        for sent in sentences:
            for c in range(len(sent)):
                center = sent[c]
                lo, hi = max(c - cfg.window, 0), min(c + cfg.window + 1, len(sent))
                for o in range(lo, hi):
                    if o == c:
                        continue
                    lr = cfg.learning_rate * max(1.0 - seen / total_pairs, 1e-4)
                    seen += 1
                    negs = np.searchsorted(noise_cdf, rng.random(cfg.negative_samples))
                    rows = np.concatenate(([sent[o]], negs))
                    labels = np.zeros(len(rows))
                    labels[0] = 1.0
                    v = w_in[center]
                    outs = w_out[rows]
                    err = labels - 1.0 / (1.0 + np.exp(-outs @ v))  # label - sigmoid(score)
                    grad_in = err @ outs
                    np.add.at(w_out, rows, np.outer(err, v) * lr)
                    w_in[center] += lr * grad_in
    w_in[PAD_ID] = 0.0
    return table


def export_text(table: EmbeddingTable, tokens: list[str], path) -> None:
    """Write the conventional text format: one "word v1 v2 ... vd" per line,
    special rows skipped."""
    with open(path, "w", encoding="utf-8") as fh:
        for i, tok in enumerate(tokens):
            if i in (PAD_ID, UNK_ID):
                continue
            values = " ".join(format(v, ".6g") for v in table.vectors.data[i])
            fh.write(f"{tok} {values}\n")
