"""Synthetic token-to-frames task standing in for a speech corpus.

Labels come from a fixed sparse Markov chain with no self-loops, so an
autoregressive decoder has context to exploit and CTC never has to separate
identical neighbours.  Each label becomes ``f`` frames of its embedding plus
Gaussian noise.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Dict, List, Tuple

import numpy as np

from .core import ConfigError, EncoderOutput, Vocab

SPLITS = ("train", "dev", "test")


@dataclass(frozen=True)
class SyntheticTaskSpec:
    n_symbols: int = 10
    len_lo: int = 24
    len_hi: int = 42
    frames_lo: int = 1
    frames_hi: int = 1
    feat_dim: int = 16
    noise: float = 0.4
    frame_period_s: float = 0.04
    n_train: int = 2000
    n_dev: int = 50
    n_test: int = 200
    successors: int = 3
    seed: int = 7

    def __post_init__(self):
        if self.n_symbols < 2:
            raise ConfigError("need at least 2 symbols (no self-loops)")
        if not 1 <= self.len_lo <= self.len_hi:
            raise ConfigError("need 1 <= len_lo <= len_hi")
        if not 1 <= self.frames_lo <= self.frames_hi:
            raise ConfigError("need 1 <= frames_lo <= frames_hi")
        if self.noise < 0 or self.feat_dim < 1 or self.frame_period_s <= 0:
            raise ConfigError("noise >= 0, feat_dim >= 1, frame_period_s > 0 required")
        if min(self.n_train, self.n_dev, self.n_test) < 0:
            raise ConfigError("split sizes must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True, eq=False)
class Utterance:
    id: int
    ref: Tuple[int, ...]
    enc: EncoderOutput


@dataclass(frozen=True, eq=False)
class Corpus:
    vocab: Vocab
    splits: Dict[str, List[Utterance]]
    transitions: np.ndarray
    embeddings: np.ndarray

    def __getitem__(self, split):
        return self.splits[split]


def symbol_names(n: int) -> List[str]:
    letters = "abcdefghijklmnopqrstuvwxyz"
    if n <= len(letters):
        return list(letters[:n])
    return [f"w{i}" for i in range(n)]


def _rng(spec: SyntheticTaskSpec, stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([spec.seed, stream]))


def build_chain(spec: SyntheticTaskSpec) -> Tuple[np.ndarray, np.ndarray]:
    """Transition matrix (n x n) and per-symbol frame embeddings (n x D)."""
    rng = _rng(spec, 99)
    n = spec.n_symbols
    k = min(spec.successors, n - 1)
    trans = np.zeros((n, n))
    for a in range(n):
        others = [b for b in range(n) if b != a]
        succ = rng.choice(others, size=k, replace=False)
        w = rng.dirichlet(np.full(k, 2.0))
        trans[a, succ] = w
        # small floor so every non-self transition is possible
        trans[a, others] += 0.02
        trans[a] /= trans[a].sum()
    if n <= spec.feat_dim:
        q, _ = np.linalg.qr(rng.normal(size=(spec.feat_dim, spec.feat_dim)))
        emb = q[:n]
    else:
        emb = rng.normal(size=(n, spec.feat_dim))
        emb /= np.linalg.norm(emb, axis=1, keepdims=True)
    return trans, emb


def _utterance(spec, trans, emb, rng, uid: int, first_id: int) -> Utterance:
    n = spec.n_symbols
    L = int(rng.integers(spec.len_lo, spec.len_hi + 1))
    labels = [int(rng.integers(n))]
    for _ in range(L - 1):
        labels.append(int(rng.choice(n, p=trans[labels[-1]])))
    counts = rng.integers(spec.frames_lo, spec.frames_hi + 1, size=L)
    frames = np.repeat(emb[labels], counts, axis=0)
    frames = frames + spec.noise * rng.normal(size=frames.shape)
    enc = EncoderOutput(frames.astype(np.float32), spec.frame_period_s)
    return Utterance(uid, tuple(first_id + s for s in labels), enc)


def generate(spec: SyntheticTaskSpec) -> Corpus:
    """Deterministic corpus for ``spec``; each split has its own RNG stream."""
    vocab = Vocab.from_symbols(symbol_names(spec.n_symbols))
    first = vocab.regular_ids[0]
    trans, emb = build_chain(spec)
    sizes = {"train": spec.n_train, "dev": spec.n_dev, "test": spec.n_test}
    splits = {}
    for k, name in enumerate(SPLITS):
        rng = _rng(spec, k)
        splits[name] = [_utterance(spec, trans, emb, rng, i, first) for i in range(sizes[name])]
    return Corpus(vocab, splits, trans, emb)


def corpus_stats(utts: List[Utterance], vocab_size: int) -> dict:
    """Length histogram and unigram counts, for seed-stability checks."""
    lengths = np.bincount([len(u.ref) for u in utts]) if utts else np.zeros(0, int)
    unigram = np.zeros(vocab_size, dtype=int)
    for u in utts:
        np.add.at(unigram, list(u.ref), 1)
    return {"length_hist": lengths.tolist(), "unigram": unigram.tolist()}
