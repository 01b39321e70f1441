import math

import numpy as np
import pytest

from amdecode.core import (
    BlockScheduleSpec,
    ConfigError,
    EncoderOutput,
    FusionWeights,
    Hypothesis,
    NBestList,
    SearchConfig,
    TrainWeights,
    Vocab,
    fused_score,
)


def test_vocab_layout_and_codec():
    v = Vocab.from_symbols(["a", "b"])
    assert v.tokens[:3] == ("<blank>", "<sos>", "<eos>")
    assert v.regular_ids == (3, 4) and v.size == 5
    assert v.encode(["b", "a"]) == (4, 3)
    assert v.decode((4, 3, 2)) == ("b", "a")
    with pytest.raises(ConfigError):
        Vocab(("x", "x", "y"), 0, 1, 2)
    with pytest.raises(ConfigError):
        Vocab(("x", "y", "z"), 0, 0, 2)


def test_encoder_output_is_frozen():
    f = np.zeros((3, 2))
    enc = EncoderOutput(f, 0.04)
    f[0, 0] = 1.0
    assert enc.frames[0, 0] == 0.0 and enc.audio_duration == pytest.approx(0.12)
    with pytest.raises(ValueError):
        enc.frames[0, 0] = 2.0
    with pytest.raises(ConfigError):
        EncoderOutput(np.array([[np.nan]]))


def test_weights_parse():
    w = FusionWeights.parse("0.3:0.6:0.1")
    assert (w.lambda1, w.lambda2, w.lambda3) == (0.3, 0.6, 0.1)
    assert FusionWeights.parse("0.3:0.7").lambda3 == 0.0
    for bad in ("0.3", "a:b", "-1:1:1", "0:0:0"):
        with pytest.raises(ConfigError):
            FusionWeights.parse(bad)
    assert TrainWeights().gamma1 == 0.3 and TrainWeights().gamma2 == 0.7
    with pytest.raises(ConfigError):
        TrainWeights(-0.1, 1.0)


def test_schedule_spec_parse():
    assert BlockScheduleSpec.parse("4") == BlockScheduleSpec.fixed(4)
    assert BlockScheduleSpec.parse("1-20-4") == BlockScheduleSpec.mixed(20, 4)
    assert str(BlockScheduleSpec.mixed(20, 4)) == "1-20-4" and str(BlockScheduleSpec(8)) == "8"
    for bad in ("0", "2-3-4", "x", "1-2"):
        with pytest.raises(ConfigError):
            BlockScheduleSpec.parse(bad)


def test_search_config_defaults_and_validation():
    c = SearchConfig()
    assert (c.k_main, c.k1, c.k2) == (1, 2, 2)
    assert c.with_(k1=5).k1 == 5
    with pytest.raises(ConfigError):
        SearchConfig(k2=0)


def test_fused_score_handles_zero_weight_infinities():
    h = Hypothesis((3,), alpha_ctc=-math.inf, alpha_ar=-1.0, alpha_amd=-2.0)
    assert fused_score(h, FusionWeights(0.0, 1.0, 0.0)) == -1.0
    assert fused_score(h, FusionWeights(0.3, 0.7, 0.0)) == -math.inf


def test_nbest_ranking():
    w = FusionWeights(0.0, 1.0, 0.0)
    hs = [Hypothesis((3, 2), alpha_ar=-1.0, finished=True),
          Hypothesis((3, 4), alpha_ar=-0.5, finished=False),
          Hypothesis((4, 2), alpha_ar=-1.0, finished=True),
          Hypothesis((2,), alpha_ar=-1.0, finished=True)]
    nb = NBestList.from_hyps(hs, w, 3)
    # ended first, then by score, then shorter, then lexicographic
    assert [e.tokens for e in nb] == [(2,), (3, 2), (4, 2)]
    assert not nb.truncated
    nb = NBestList.from_hyps(hs, w, 3, length_norm=True)
    assert nb[0].tokens == (3, 2) and nb[0].score == -0.5
