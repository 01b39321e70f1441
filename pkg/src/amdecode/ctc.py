"""CTC greedy decoding, label-synchronous prefix scoring and the CTC loss.

All quantities are natural logs.  The inner recurrences are compiled with
numba; they are sequential in time so vectorizing with numpy does not help.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numba
import numpy as np
from scipy.special import logsumexp

NEG_INF = -np.inf


class CtcInputError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class CtcPosteriors:
    """Row-normalized frame log-probabilities, shape (T', V)."""

    log_probs: np.ndarray
    blank_id: int = 0

    def __post_init__(self):
        lp = np.ascontiguousarray(self.log_probs, dtype=np.float64)
        if lp.ndim != 2:
            raise CtcInputError(f"expected T' x V matrix, got shape {lp.shape}")
        if lp.shape[0] and np.max(np.abs(logsumexp(lp, axis=1))) > 1e-9:
            raise CtcInputError("rows of log_probs must log-sum-exp to 0")
        if not 0 <= self.blank_id < lp.shape[1]:
            raise CtcInputError("blank_id out of range")
        lp.setflags(write=False)
        object.__setattr__(self, "log_probs", lp)

    @property
    def num_frames(self) -> int:
        return self.log_probs.shape[0]


def _as_log_probs(post) -> Tuple[np.ndarray, Optional[int]]:
    if isinstance(post, CtcPosteriors):
        return post.log_probs, post.blank_id
    return np.ascontiguousarray(post, dtype=np.float64), None


def ctc_greedy(post, blank_id: Optional[int] = None) -> Tuple[int, ...]:
    """Best-path decode: per-frame argmax, merge repeats, drop blanks.

    Frame ties go to the lowest token id.
    """
    lp, b = _as_log_probs(post)
    blank = b if blank_id is None else blank_id
    if blank is None:
        raise CtcInputError("blank_id required")
    if lp.shape[0] == 0:
        return ()
    path = np.argmax(lp, axis=1)
    out = []
    prev = -1
    for k in path.tolist():
        if k != prev and k != blank:
            out.append(k)
        prev = k
    return tuple(out)


# ---------------------------------------------------------------------------
# prefix scoring

@numba.njit(cache=True)
def _lae(a, b):
    if a == -np.inf:
        return b
    if b == -np.inf:
        return a
    if a > b:
        return a + math.log1p(math.exp(b - a))
    return b + math.log1p(math.exp(a - b))


@numba.njit(cache=True)
def _extend_kernel(lp, blank, r_n, r_b, last, is_empty, cands):
    T = lp.shape[0]
    C = cands.shape[0]
    new_n = np.full((C, T), -np.inf)
    new_b = np.full((C, T), -np.inf)
    psi = np.full(C, -np.inf)
    for ci in range(C):
        c = cands[ci]
        if T == 0:
            continue
        if is_empty:
            new_n[ci, 0] = lp[0, c]
            psi[ci] = lp[0, c]
        for t in range(1, T):
            if c == last:
                phi = r_b[t - 1]
            else:
                phi = _lae(r_b[t - 1], r_n[t - 1])
            new_n[ci, t] = _lae(new_n[ci, t - 1], phi) + lp[t, c]
            new_b[ci, t] = _lae(new_b[ci, t - 1], new_n[ci, t - 1]) + lp[t, blank]
            psi[ci] = _lae(psi[ci], phi + lp[t, c])
    return new_n, new_b, psi


@dataclass(frozen=True, eq=False)
class CtcPrefixState:
    """Forward variables of one prefix over all frames.

    ``r_n[t]`` / ``r_b[t]``: log-prob of emitting exactly the prefix in frames
    0..t with the last frame non-blank / blank.
    """

    r_n: np.ndarray
    r_b: np.ndarray
    last: int
    length: int
    score: float

    def complete_score(self) -> float:
        """Log-prob of the prefix as a whole label sequence."""
        T = self.r_n.shape[0]
        if T == 0:
            return 0.0 if self.length == 0 else NEG_INF
        return float(np.logaddexp(self.r_n[-1], self.r_b[-1]))


class CtcPrefixScorer:
    """Incremental CTC prefix scorer bound to one posterior matrix.

    Args:
        post: ``CtcPosteriors`` or a (T', V) log-prob array.
        blank_id: blank index (taken from ``post`` when it is a CtcPosteriors).
        eos_id: if given, extending with it returns the complete-sequence
            log-prob of the current prefix instead of a prefix score.
    """

    def __init__(self, post, blank_id: Optional[int] = None, eos_id: Optional[int] = None):
        lp, b = _as_log_probs(post)
        self.log_probs = lp
        self.blank_id = b if blank_id is None else blank_id
        if self.blank_id is None:
            raise CtcInputError("blank_id required")
        self.eos_id = eos_id
        self.num_extensions = 0

    def initial_state(self) -> CtcPrefixState:
        T = self.log_probs.shape[0]
        r_b = np.cumsum(self.log_probs[:, self.blank_id]) if T else np.zeros(0)
        return CtcPrefixState(np.full(T, NEG_INF), r_b, -1, 0, 0.0)

    def extend(self, state: CtcPrefixState, tok: int) -> Tuple[CtcPrefixState, float]:
        """Extend ``state`` by one token, returning ``(new_state, alpha_ctc)``."""
        states, scores = self.extend_many(state, [tok])
        return states[0], float(scores[0])

    def extend_many(self, state: CtcPrefixState, toks: Sequence[int]):
        """Extend one prefix by each of ``toks`` in a single pass.

        Returns a list of states (None for eos) and an array of scores.
        """
        toks = [int(t) for t in toks]
        if self.blank_id in toks:
            raise CtcInputError("cannot extend a prefix with the blank token")
        self.num_extensions += len(toks)
        reg = [t for t in toks if t != self.eos_id]
        out_states = {}
        scores = np.empty(len(toks))
        if reg:
            cands = np.asarray(reg, dtype=np.int64)
            new_n, new_b, psi = _extend_kernel(
                self.log_probs, self.blank_id, state.r_n, state.r_b,
                state.last, state.length == 0, cands)
            for k, c in enumerate(reg):
                out_states[c] = CtcPrefixState(new_n[k], new_b[k], c, state.length + 1,
                                               float(psi[k]))
        states = []
        for i, t in enumerate(toks):
            if t == self.eos_id:
                states.append(None)
                scores[i] = state.complete_score()
            else:
                st = out_states[t]
                states.append(st)
                scores[i] = st.score
        return states, scores

    def score_prefix(self, tokens: Sequence[int]) -> float:
        """Prefix score of a full token sequence, built incrementally from scratch."""
        st = self.initial_state()
        score = 0.0
        for t in tokens:
            nxt, score = self.extend(st, t)
            if nxt is None:
                break
            st = nxt
        return score


def ctc_prefix_init(post, blank_id=None, eos_id=None):
    """Scorer plus empty-prefix state; the empty prefix scores 0."""
    scorer = CtcPrefixScorer(post, blank_id, eos_id)
    return scorer, scorer.initial_state()


def ctc_prefix_extend(scorer: CtcPrefixScorer, state: CtcPrefixState, tok: int):
    return scorer.extend(state, tok)


# ---------------------------------------------------------------------------
# loss

@numba.njit(cache=True)
def _forward_backward(lp, labels, blank):
    T = lp.shape[0]
    S = 2 * labels.shape[0] + 1
    ext = np.full(S, blank)
    for u in range(labels.shape[0]):
        ext[2 * u + 1] = labels[u]
    alpha = np.full((T, S), -np.inf)
    beta = np.full((T, S), -np.inf)
    alpha[0, 0] = lp[0, ext[0]]
    if S > 1:
        alpha[0, 1] = lp[0, ext[1]]
    for t in range(1, T):
        for s in range(S):
            a = alpha[t - 1, s]
            if s >= 1:
                a = _lae(a, alpha[t - 1, s - 1])
            if s >= 2 and ext[s] != blank and ext[s] != ext[s - 2]:
                a = _lae(a, alpha[t - 1, s - 2])
            if a != -np.inf:
                alpha[t, s] = a + lp[t, ext[s]]
    beta[T - 1, S - 1] = lp[T - 1, ext[S - 1]]
    if S > 1:
        beta[T - 1, S - 2] = lp[T - 1, ext[S - 2]]
    for t in range(T - 2, -1, -1):
        for s in range(S):
            b = beta[t + 1, s]
            if s + 1 < S:
                b = _lae(b, beta[t + 1, s + 1])
            if s + 2 < S and ext[s] != blank and ext[s] != ext[s + 2]:
                b = _lae(b, beta[t + 1, s + 2])
            if b != -np.inf:
                beta[t, s] = b + lp[t, ext[s]]
    if S > 1:
        logp = _lae(alpha[T - 1, S - 1], alpha[T - 1, S - 2])
    else:
        logp = alpha[T - 1, S - 1]
    grad = np.zeros_like(lp)
    if logp == -np.inf:
        return logp, grad
    for t in range(T):
        for s in range(S):
            v = alpha[t, s] + beta[t, s]
            if v != -np.inf:
                grad[t, ext[s]] -= math.exp(v - lp[t, ext[s]] - logp)
    return logp, grad


@dataclass(frozen=True, eq=False)
class CtcLoss:
    """Negative log-likelihood and its gradient w.r.t. the log-prob matrix.

    ``feasible`` is False when no alignment exists; then ``loss`` is +inf and
    ``grad`` is all zeros so callers can skip the example.
    """

    loss: float
    grad: np.ndarray
    feasible: bool


def ctc_loss(post, ref: Sequence[int], blank_id: Optional[int] = None) -> CtcLoss:
    """``-log P_CTC(ref | post)`` via forward-backward, with exact gradient."""
    lp, b = _as_log_probs(post)
    blank = b if blank_id is None else blank_id
    labels = np.asarray(ref, dtype=np.int64)
    if np.any(labels == blank):
        raise CtcInputError("reference must not contain blank")
    T = lp.shape[0]
    if T == 0:
        ok = labels.size == 0
        return CtcLoss(0.0 if ok else math.inf, np.zeros_like(lp), ok)
    logp, grad = _forward_backward(lp, labels, blank)
    if logp == -np.inf:
        return CtcLoss(math.inf, grad, False)
    return CtcLoss(-float(logp), grad, True)


def ctc_sequence_logprob(post, ref: Sequence[int], blank_id: Optional[int] = None) -> float:
    res = ctc_loss(post, ref, blank_id)
    return -res.loss
