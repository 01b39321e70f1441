"""One-pass label-synchronous decoding.

``decode_baseline`` is the classic hybrid CTC + AR beam search.
``decode_tripartite`` walks a block schedule: for every block it scores all
slots with one masked AMD call per surviving hypothesis (left context from
the hypothesis, right context from the CTC greedy output), grows an in-block
beam slot by slot under CTC + AMD scores, then re-ranks the block-final
hypotheses after adding AR scores.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
import torch

from .core import (
    BlockScheduleSpec,
    ConfigError,
    Hypothesis,
    NBestList,
    SearchConfig,
    fused_score,
    rank_key,
)
from .ctc import CtcPrefixScorer, ctc_greedy
from .model import (
    AttentionMaskPlan,
    EncodedBatch,
    ToyDecoderParams,
    ctc_log_probs_batch,
    encode,
    run_plans,
)


@dataclass(frozen=True)
class BlockSchedule:
    """Contiguous ``(start, size)`` blocks covering slots 1..l_max."""

    blocks: Tuple[Tuple[int, int], ...]

    def __post_init__(self):
        pos = 1
        for start, size in self.blocks:
            if start != pos or size < 1:
                raise ConfigError(f"blocks must tile contiguously, got {self.blocks}")
            pos += size

    @property
    def sizes(self) -> List[int]:
        return [b for _, b in self.blocks]

    @property
    def starts(self) -> List[int]:
        return [s for s, _ in self.blocks]

    @property
    def l_max(self) -> int:
        return sum(self.sizes)


def make_schedule(spec: BlockScheduleSpec, l_max: int) -> BlockSchedule:
    """``n_leading`` blocks of size 1, then blocks of ``spec.block``, truncated at l_max."""
    if l_max < 1:
        raise ConfigError("l_max must be >= 1")
    blocks = []
    pos = 1
    while pos <= l_max:
        size = 1 if pos <= spec.n_leading else spec.block
        size = min(size, l_max - pos + 1)
        blocks.append((pos, size))
        pos += size
    return BlockSchedule(tuple(blocks))


@dataclass
class DecodeStats:
    amd_calls: int = 0
    ar_calls: int = 0
    ctc_extensions: int = 0
    block_steps: int = 0
    wall_s: float = 0.0

    def as_dict(self) -> dict:
        return {"amd_calls": self.amd_calls, "ar_calls": self.ar_calls,
                "ctc_extensions": self.ctc_extensions, "block_steps": self.block_steps}


@dataclass
class DecodeResult:
    nbest: NBestList
    stats: DecodeStats
    ctc_greedy: Tuple[int, ...] = ()


def count_decoder_calls(trace) -> Tuple[int, int, int]:
    """``(amd_calls, ar_calls, ctc_extensions)`` from a result or its stats."""
    stats = trace.stats if isinstance(trace, DecodeResult) else trace
    return stats.amd_calls, stats.ar_calls, stats.ctc_extensions


class _Utt:
    """Per-utterance decoding context: encoder output, CTC posteriors, scorer."""

    def __init__(self, P: ToyDecoderParams, enc, log_probs: Optional[np.ndarray] = None):
        self.P = P
        hp = P.hp
        self.eb: EncodedBatch = enc if isinstance(enc, EncodedBatch) else encode(P, enc)
        if log_probs is None:
            with torch.no_grad():
                log_probs = ctc_log_probs_batch(P, self.eb)[0].numpy()
        self.log_probs = log_probs
        self.scorer = CtcPrefixScorer(log_probs, hp.blank_id, hp.eos_id)
        special = {hp.blank_id, hp.sos_id}
        self.cands = np.array([t for t in range(hp.vocab_size) if t not in special])
        self.sos, self.eos = hp.sos_id, hp.eos_id

    def ar_rows(self, hyps: Sequence[Tuple[int, ...]]) -> np.ndarray:
        """AR log-probs for each hypothesis, teacher-forced in one batched call."""
        inputs = [[self.sos] + list(t) for t in hyps]
        plans = [AttentionMaskPlan.causal_plan(len(s)) for s in inputs]
        with torch.no_grad():
            return run_plans(self.P, "ar", self.eb, inputs, plans, [0] * len(inputs),
                             pad_to=self.P.hp.max_len).numpy()

    def amd_rows(self, inputs, plans) -> np.ndarray:
        with torch.no_grad():
            return run_plans(self.P, "amd", self.eb, inputs, plans, [0] * len(inputs),
                             pad_to=self.P.hp.max_len).numpy()


def _check(cfg: SearchConfig, P: ToyDecoderParams):
    if cfg.l_max + 1 > P.hp.max_len:
        raise ConfigError(f"l_max {cfg.l_max} needs decoder max_len > {cfg.l_max}")


def _topk(hyps, key_score, k):
    return sorted(hyps, key=lambda h: rank_key(key_score(h), h.tokens))[:k]


def decode_baseline(P: ToyDecoderParams, enc, cfg: SearchConfig,
                    log_probs: Optional[np.ndarray] = None) -> DecodeResult:
    """Hybrid CTC + AR beam search; the AMD weight must be zero."""
    if cfg.weights.lambda3 != 0:
        raise ConfigError("baseline decoding requires lambda3 = 0")
    _check(cfg, P)
    t0 = time.perf_counter()
    u = _Utt(P, enc, log_probs)
    w = cfg.weights
    stats = DecodeStats()
    beam = [Hypothesis((), 0.0, 0.0, 0.0, u.scorer.initial_state(), False)]
    for _ in range(cfg.l_max):
        live = [h for h in beam if not h.finished]
        if not live:
            break
        stats.block_steps += 1
        rows = u.ar_rows([h.tokens for h in live])
        stats.ar_calls += len(live)
        pool = [h for h in beam if h.finished]
        for h, row in zip(live, rows):
            lp = row[len(h.tokens)]
            states, ctc = u.scorer.extend_many(h.ctc_state, u.cands)
            for c, st, sc in zip(u.cands.tolist(), states, ctc.tolist()):
                pool.append(Hypothesis(h.tokens + (c,), sc, h.alpha_ar + float(lp[c]), 0.0,
                                       st, c == u.eos))
        beam = _topk(pool, lambda h: fused_score(h, w), cfg.k_main)
    stats.ctc_extensions = u.scorer.num_extensions
    stats.wall_s = time.perf_counter() - t0
    nb = NBestList.from_hyps(beam, w, cfg.k_main, cfg.length_norm)
    return DecodeResult(nb, stats, ctc_greedy(u.log_probs, P.hp.blank_id))


def amd_input(prefix: Sequence[int], start: int, size: int, future: Sequence[int], sos: int,
              max_len: int) -> Tuple[List[int], AttentionMaskPlan]:
    """Decoder input for one block: sos, left context, masked slots, future context.

    ``future[k]`` is the label proposed for slot ``k + 1``; slots past its end
    are simply absent.  Masked slots hold sos as a placeholder that the mask
    makes invisible.
    """
    assert len(prefix) == start - 1
    right = list(future[start + size - 1:])
    inp = [sos] + list(prefix) + [sos] * size + right
    inp = inp[:max_len]
    return inp, AttentionMaskPlan.block(len(inp), start, size)


def _slot_candidates(row: np.ndarray, allowed: np.ndarray, k1: int, extra: Optional[int]):
    scores = row[allowed]
    order = np.lexsort((allowed, -scores))[:k1]
    picked = allowed[order].tolist()
    if extra is not None and extra not in picked:
        picked.append(extra)
    return picked


def decode_tripartite(P: ToyDecoderParams, enc, cfg: SearchConfig,
                      log_probs: Optional[np.ndarray] = None) -> DecodeResult:
    """Block-wise CTC + AMD search with AR re-ranking at block ends."""
    _check(cfg, P)
    t0 = time.perf_counter()
    u = _Utt(P, enc, log_probs)
    w = cfg.weights
    stats = DecodeStats()
    hctc = ctc_greedy(u.log_probs, P.hp.blank_id)
    future = list(hctc) + [u.eos]
    schedule = make_schedule(cfg.schedule, cfg.l_max)

    def cm_score(h):
        return fused_score(Hypothesis(h.tokens, h.alpha_ctc, 0.0, h.alpha_amd), w)

    main = [Hypothesis((), 0.0, 0.0, 0.0, u.scorer.initial_state(), False)]
    for start, size in schedule.blocks:
        live = [h for h in main if not h.finished]
        if not live:
            break
        stats.block_steps += 1
        built = [amd_input(h.tokens, start, size, future, u.sos, P.hp.max_len) for h in live]
        rows = u.amd_rows([b[0] for b in built], [b[1] for b in built])
        stats.amd_calls += len(live)

        block_final = []
        for h, row in zip(live, rows):
            slot_lp = row[start: start + size]
            cand_sets = []
            for s in range(size):
                j = start + s
                extra = future[j - 1] if j - 1 < len(future) else None
                cand_sets.append(_slot_candidates(slot_lp[s], u.cands, cfg.k1, extra))
            cm = [h]
            for s in range(size):
                grown = []
                for g in cm:
                    if g.finished:
                        grown.append(g)
                        continue
                    cands = cand_sets[s]
                    states, ctc = u.scorer.extend_many(g.ctc_state, cands)
                    for c, st, sc in zip(cands, states, ctc.tolist()):
                        grown.append(Hypothesis(g.tokens + (c,), sc, 0.0,
                                                g.alpha_amd + float(slot_lp[s][c]), st, c == u.eos))
                cm = _topk(grown, cm_score, cfg.k2)
                if all(g.finished for g in cm):
                    break
            block_final.extend(cm)

        ar = u.ar_rows([g.tokens for g in block_final])
        stats.ar_calls += len(block_final)
        rescored = []
        for g, row in zip(block_final, ar):
            alpha_ar = float(sum(row[j, t] for j, t in enumerate(g.tokens)))
            rescored.append(Hypothesis(g.tokens, g.alpha_ctc, alpha_ar, g.alpha_amd,
                                       g.ctc_state, g.finished))
        pool = [h for h in main if h.finished] + rescored
        main = _topk(pool, lambda h: fused_score(h, w), cfg.k_main)
    stats.ctc_extensions = u.scorer.num_extensions
    stats.wall_s = time.perf_counter() - t0
    nb = NBestList.from_hyps(main, w, cfg.k_main, cfg.length_norm)
    return DecodeResult(nb, stats, hctc)


def decode(P: ToyDecoderParams, enc, cfg: SearchConfig, method: str = "tripartite",
           log_probs: Optional[np.ndarray] = None) -> DecodeResult:
    if method == "baseline":
        return decode_baseline(P, enc, cfg, log_probs)
    if method == "tripartite":
        return decode_tripartite(P, enc, cfg, log_probs)
    raise ConfigError(f"unknown decoding method {method!r}")
