"""Staged training: CTC + AR on the backbone first, then the AMD delta alone."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
import torch

from .core import TrainWeights
from .model import (
    BlockSampling,
    ToyDecoderParams,
    amd_loss_batch,
    ar_loss_batch,
    ctc_loss_batch,
    encode_batch,
    is_lora,
    sample_blocks,
)

logger = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    steps_ctc_ar: int = 3000
    steps_amd: int = 1500
    batch_size: int = 16
    amd_batch_size: int = 8
    lr: float = 0.0025
    weights: TrainWeights = field(default_factory=TrainWeights)
    sampling: str = "uni"
    seed: int = 0
    log_every: int = 50

    def to_dict(self):
        return asdict(self)


def trainable_names(P: ToyDecoderParams, stage: str) -> List[str]:
    """``"ctc_ar"``: backbone, CTC head and AR delta.  ``"amd"``: AMD delta only."""
    if stage == "ctc_ar":
        return [n for n in P.names() if not is_lora(n) or is_lora(n, "ar")]
    if stage == "amd":
        return [n for n in P.names() if is_lora(n, "amd")]
    raise ValueError(f"unknown stage {stage!r}")


def _targets(refs, eos):
    return [tuple(r) + (eos,) for r in refs]


def stage_loss(P: ToyDecoderParams, stage: str, batch, weights: TrainWeights,
               sampling: Optional[BlockSampling] = None, epoch: int = 0, seed: int = 0):
    """Summed loss of one batch of utterances and the number of target tokens."""
    eb = encode_batch(P, [u.enc.frames for u in batch])
    targets = _targets([u.ref for u in batch], P.hp.eos_id)
    ntok = sum(len(t) for t in targets)
    if stage == "ctc_ar":
        loss = weights.gamma1 * ctc_loss_batch(P, eb, [u.ref for u in batch])
        loss = loss + weights.gamma2 * ar_loss_batch(P, eb, targets)
        return loss, ntok
    s = sampling or BlockSampling()
    tilings = []
    for u, t in zip(batch, targets):
        rng = np.random.default_rng([s.seed + seed, u.id, epoch])
        tilings.append(sample_blocks(len(t), s, rng))
    return amd_loss_batch(P, eb, targets, tilings), ntok * s.passes


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    epoch = 0
    while True:
        order = rng.permutation(n)
        for i in range(0, n, batch_size):
            yield epoch, order[i: i + batch_size]
        epoch += 1


def run_stage(P: ToyDecoderParams, corpus: Sequence, stage: str, steps: int, cfg: TrainConfig,
              trace: Optional[List[dict]] = None,
              callback: Optional[Callable[[int, float], None]] = None) -> List[dict]:
    """Adam on the stage's trainable tensors, in place.  Returns the loss trace."""
    if not corpus:
        raise ValueError("training corpus is empty")
    trace = [] if trace is None else trace
    names = trainable_names(P, stage)
    for n, v in P.tensors.items():
        v.requires_grad_(n in names)
    opt = torch.optim.Adam([P.tensors[n] for n in names], lr=cfg.lr)
    rng = np.random.default_rng([cfg.seed, 0 if stage == "ctc_ar" else 1])
    sampling = BlockSampling(cfg.sampling, 4, 0)
    bs = cfg.batch_size if stage == "ctc_ar" else cfg.amd_batch_size
    batches = _batches(len(corpus), bs, rng)
    try:
        for step in range(steps):
            epoch, idx = next(batches)
            batch = [corpus[i] for i in idx]
            opt.zero_grad()
            loss, ntok = stage_loss(P, stage, batch, cfg.weights, sampling, epoch, cfg.seed)
            (loss / ntok).backward()
            value = float(loss.detach()) / ntok
            if not math.isfinite(value):
                raise TrainingDiverged(f"{stage} loss became {value} at step {step}")
            opt.step()
            trace.append({"stage": stage, "step": step, "loss": value})
            if callback is not None:
                callback(step, value)
            if cfg.log_every and step % cfg.log_every == 0:
                logger.info("%s step %d loss %.4f", stage, step, value)
    finally:
        for v in P.tensors.values():
            v.requires_grad_(False)
    return trace


def train(P: ToyDecoderParams, corpus: Sequence, cfg: TrainConfig) -> tuple:
    """Both stages on a copy of ``P``; returns ``(trained_params, loss_trace)``."""
    torch.manual_seed(cfg.seed)
    Q = P.clone()
    trace: List[dict] = []
    run_stage(Q, corpus, "ctc_ar", cfg.steps_ctc_ar, cfg, trace)
    run_stage(Q, corpus, "amd", cfg.steps_amd, cfg, trace)
    return Q, trace
