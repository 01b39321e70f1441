"""Block attention-mask decoding with tripartite CTC + AR + AMD beam search."""

import torch

from .core import (
    BlockScheduleSpec,
    ConfigError,
    EncoderOutput,
    FusionWeights,
    Hypothesis,
    NBestList,
    SearchConfig,
    TrainWeights,
    Vocab,
)
from .ctc import CtcPosteriors, CtcPrefixScorer, ctc_greedy, ctc_loss
from .model import AttentionMaskPlan, ModelHParams, forward_amd, forward_ar, init_params
from .search import decode, decode_baseline, decode_tripartite, make_schedule
from .synth import SyntheticTaskSpec, generate

# single-threaded GEMMs keep results reproducible across machines and worker counts
torch.set_num_threads(1)

__all__ = [
    "AttentionMaskPlan", "BlockScheduleSpec", "ConfigError", "CtcPosteriors", "CtcPrefixScorer",
    "EncoderOutput", "FusionWeights", "Hypothesis", "ModelHParams", "NBestList", "SearchConfig",
    "SyntheticTaskSpec", "TrainWeights", "Vocab", "ctc_greedy", "ctc_loss", "decode",
    "decode_baseline", "decode_tripartite", "forward_amd", "forward_ar", "generate",
    "init_params", "make_schedule",
]
