import math

import numpy as np
import pytest
import torch

from amdecode.ctc import (
    CtcInputError,
    CtcPosteriors,
    CtcPrefixScorer,
    ctc_greedy,
    ctc_loss,
    ctc_prefix_extend,
    ctc_prefix_init,
)
from oracles import (
    brute_prefix_prob,
    enumerate_ctc,
    finite_difference,
    log,
    max_rel_err,
    random_log_probs,
)

A, B, BLANK = 1, 2, 0


def onehot_path(path, V=3):
    lp = np.full((len(path), V), math.log(0.1 / (V - 1)))
    for t, k in enumerate(path):
        lp[t, k] = math.log(0.9)
    return lp


@pytest.mark.parametrize("path,expected", [
    ([BLANK, A, A, BLANK, B], (A, B)),
    ([BLANK, BLANK], ()),
    ([A, BLANK, A], (A, A)),
])
def test_greedy_collapse(path, expected):
    assert ctc_greedy(onehot_path(path), blank_id=BLANK) == expected


def test_greedy_empty_and_ties():
    assert ctc_greedy(np.zeros((0, 3)), blank_id=0) == ()
    lp = np.log(np.full((2, 3), 1 / 3))
    assert ctc_greedy(lp, blank_id=2) == (0,)


def test_greedy_length_bounded():
    rng = np.random.default_rng(0)
    for _ in range(50):
        T = int(rng.integers(0, 8))
        lp = random_log_probs(rng, T, 4)
        assert len(ctc_greedy(lp, blank_id=0)) <= T


def test_posteriors_validate_rows():
    with pytest.raises(CtcInputError):
        CtcPosteriors(np.zeros((2, 3)))
    CtcPosteriors(np.log(np.full((2, 3), 1 / 3)))


def test_empty_prefix_scores_zero():
    rng = np.random.default_rng(1)
    scorer, st = ctc_prefix_init(random_log_probs(rng, 4, 3), blank_id=0)
    assert st.score == 0.0
    assert st.complete_score() == pytest.approx(np.sum(scorer.log_probs[:, 0]))


def test_zero_frames():
    scorer, st = ctc_prefix_init(np.zeros((0, 3)), blank_id=0, eos_id=2)
    assert st.score == 0.0
    _, s = ctc_prefix_extend(scorer, st, 1)
    assert s == -math.inf
    _, s = ctc_prefix_extend(scorer, st, 2)
    assert s == 0.0


def test_single_frame_extend():
    # labels a, b; blank last
    lp = np.log(np.array([[0.6, 0.3, 0.1]]))
    scorer, st = ctc_prefix_init(lp, blank_id=2)
    _, s = ctc_prefix_extend(scorer, st, 0)
    assert s == pytest.approx(math.log(0.6), abs=1e-12)


def test_uniform_two_frames():
    # 9 paths; label sequences starting with a: "a" (3 paths), "a b" (1 path)
    lp = np.log(np.full((2, 3), 1 / 3))
    scorer, st = ctc_prefix_init(lp, blank_id=2)
    _, s = ctc_prefix_extend(scorer, st, 0)
    assert s == pytest.approx(math.log(4 / 9), abs=1e-12)
    seqs = enumerate_ctc(lp, 2)
    assert brute_prefix_prob(seqs, (0,)) == pytest.approx(4 / 9)


def test_reject_blank_extension():
    scorer, st = ctc_prefix_init(np.log(np.full((2, 3), 1 / 3)), blank_id=2)
    with pytest.raises(CtcInputError):
        scorer.extend(st, 2)


def test_dead_prefix_stays_dead():
    with np.errstate(divide="ignore"):
        lp = np.log(np.array([[1.0, 0.0, 0.0]]))
    scorer, st = ctc_prefix_init(lp, blank_id=0)
    st1, s1 = scorer.extend(st, 1)
    assert s1 == -math.inf
    _, s2 = scorer.extend(st1, 2)
    assert s2 == -math.inf


def _all_prefixes(max_len, labels):
    out = [()]
    frontier = [()]
    for _ in range(max_len):
        frontier = [p + (l,) for p in frontier for l in labels]
        out.extend(frontier)
    return out


@pytest.mark.parametrize("seed", range(12))
def test_prefix_scores_match_enumeration(seed):
    rng = np.random.default_rng(seed)
    T = int(rng.integers(1, 6))
    V = int(rng.integers(2, 5))
    blank = int(rng.integers(0, V))
    lp = random_log_probs(rng, T, V)
    seqs = enumerate_ctc(lp, blank)
    labels = [k for k in range(V) if k != blank]
    scorer = CtcPrefixScorer(lp, blank_id=blank)
    for prefix in _all_prefixes(min(T, 3), labels):
        st = scorer.initial_state()
        score = 0.0
        for tok in prefix:
            st, score = scorer.extend(st, tok)
        assert score == pytest.approx(log(brute_prefix_prob(seqs, prefix)), abs=1e-9)
        assert st.complete_score() == pytest.approx(log(seqs.get(prefix, 0.0)), abs=1e-9)
        res = ctc_loss(lp, prefix, blank_id=blank)
        expected = seqs.get(prefix, 0.0)
        if expected > 0:
            assert -res.loss == pytest.approx(math.log(expected), abs=1e-9)


def test_eos_extension_gives_complete_probability():
    rng = np.random.default_rng(5)
    lp = random_log_probs(rng, 4, 4)
    # column 3 stands in for eos; the CTC head never emits it as a label here
    scorer = CtcPrefixScorer(lp[:, :3] - np.logaddexp.reduce(lp[:, :3], axis=1, keepdims=True),
                             blank_id=0, eos_id=3)
    st, _ = scorer.extend(scorer.initial_state(), 1)
    nxt, s = scorer.extend(st, 3)
    assert nxt is None
    assert s == pytest.approx(-ctc_loss(scorer.log_probs, [1], blank_id=0).loss, abs=1e-12)


def test_probabilities_sum_to_one():
    rng = np.random.default_rng(9)
    lp = random_log_probs(rng, 4, 3)
    scorer = CtcPrefixScorer(lp, blank_id=0)
    total = 0.0
    for seq in _all_prefixes(4, [1, 2]):
        total += math.exp(-ctc_loss(lp, seq, blank_id=0).loss)
    assert total == pytest.approx(1.0, abs=1e-9)
    assert scorer.initial_state().score == 0.0


def test_prefix_monotone():
    rng = np.random.default_rng(11)
    lp = random_log_probs(rng, 6, 4)
    scorer = CtcPrefixScorer(lp, blank_id=0)
    for prefix in _all_prefixes(3, [1, 2, 3]):
        st = scorer.initial_state()
        prev = 0.0
        for tok in prefix:
            st, s = scorer.extend(st, tok)
            assert s <= prev + 1e-12
            prev = s


def test_extend_many_matches_single():
    rng = np.random.default_rng(2)
    lp = random_log_probs(rng, 7, 5)
    scorer = CtcPrefixScorer(lp, blank_id=0, eos_id=4)
    st, _ = scorer.extend(scorer.initial_state(), 2)
    states, scores = scorer.extend_many(st, [1, 2, 3, 4])
    for tok, s in zip([1, 2, 3, 4], scores):
        assert scorer.extend(st, tok)[1] == s


def test_loss_single_frame():
    lp = np.log(np.array([[0.6, 0.3, 0.1]]))
    assert ctc_loss(lp, [0], blank_id=2).loss == pytest.approx(-math.log(0.6))


def test_loss_empty_reference():
    rng = np.random.default_rng(3)
    lp = random_log_probs(rng, 5, 3)
    assert ctc_loss(lp, [], blank_id=0).loss == pytest.approx(-lp[:, 0].sum(), abs=1e-12)


def test_loss_infeasible_signal():
    lp = np.log(np.full((2, 3), 1 / 3))
    res = ctc_loss(lp, [1, 1], blank_id=0)  # needs 3 frames
    assert not res.feasible and res.loss == math.inf
    assert not np.any(res.grad)
    res = ctc_loss(np.zeros((0, 3)), [1], blank_id=0)
    assert not res.feasible


@pytest.mark.parametrize("seed", range(5))
def test_loss_gradient_finite_differences(seed):
    rng = np.random.default_rng(seed)
    lp = random_log_probs(rng, 4, 3)
    ref = [1, 2] if seed % 2 else [1, 1] if seed == 2 else [2, 1]
    res = ctc_loss(lp, ref, blank_id=0)
    fd = finite_difference(lambda x: ctc_loss(x, ref, blank_id=0).loss, lp.copy())
    assert max_rel_err(res.grad, fd) <= 1e-4


def test_loss_matches_torch():
    rng = np.random.default_rng(4)
    lp = random_log_probs(rng, 9, 5)
    ref = [1, 3, 3, 2]
    ours = ctc_loss(lp, ref, blank_id=0).loss
    theirs = torch.nn.functional.ctc_loss(
        torch.tensor(lp).unsqueeze(1), torch.tensor([ref]), [9], [4],
        blank=0, reduction="sum")
    assert ours == pytest.approx(float(theirs), abs=1e-9)
