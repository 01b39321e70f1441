"""Shared vocabulary, configuration and score records."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Any, Optional, Sequence, Tuple

import numpy as np


class ConfigError(ValueError):
    """Raised when a configuration value violates its contract."""


BLANK = "<blank>"
SOS = "<sos>"
EOS = "<eos>"


@dataclass(frozen=True)
class Vocab:
    """Token inventory with reserved blank / sos / eos ids.

    Args:
        tokens: ordered token strings; index is the token id.
        blank_id: CTC blank.
        sos_id: start-of-sequence id fed to the attention decoders.
        eos_id: end-of-sequence id.
    """

    tokens: Tuple[str, ...]
    blank_id: int
    sos_id: int
    eos_id: int

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))
        V = len(self.tokens)
        ids = (self.blank_id, self.sos_id, self.eos_id)
        if len(set(ids)) != 3:
            raise ConfigError(f"special ids must be distinct, got {ids}")
        if any(not 0 <= i < V for i in ids):
            raise ConfigError(f"special ids {ids} out of range for V={V}")
        if len(set(self.tokens)) != V:
            raise ConfigError("token strings must be unique")

    @classmethod
    def from_symbols(cls, symbols: Sequence[str]) -> "Vocab":
        """Build a vocab as ``[blank, sos, eos, *symbols]``."""
        return cls((BLANK, SOS, EOS, *symbols), blank_id=0, sos_id=1, eos_id=2)

    @property
    def size(self) -> int:
        return len(self.tokens)

    @property
    def specials(self) -> frozenset:
        return frozenset((self.blank_id, self.sos_id, self.eos_id))

    @property
    def regular_ids(self) -> Tuple[int, ...]:
        """Ids of ordinary label tokens (no specials)."""
        sp = self.specials
        return tuple(i for i in range(self.size) if i not in sp)

    def encode(self, symbols: Sequence[str]) -> Tuple[int, ...]:
        index = {t: i for i, t in enumerate(self.tokens)}
        return tuple(index[s] for s in symbols)

    def decode(self, ids: Sequence[int], strip_eos: bool = True) -> Tuple[str, ...]:
        if strip_eos and ids and ids[-1] == self.eos_id:
            ids = ids[:-1]
        return tuple(self.tokens[i] for i in ids)


@dataclass(frozen=True, eq=False)
class EncoderOutput:
    """Frame-synchronous feature matrix (T' x D) plus its frame period."""

    frames: np.ndarray
    frame_period_s: float = 0.04

    def __post_init__(self):
        frames = np.asarray(self.frames)
        if frames.ndim != 2 or frames.shape[1] < 1:
            raise ConfigError(f"frames must be T' x D with D >= 1, got {frames.shape}")
        if not np.all(np.isfinite(frames)):
            raise ConfigError("frames contain non-finite values")
        if not self.frame_period_s >= 0:
            raise ConfigError("frame_period_s must be >= 0")
        frames = frames.copy()
        frames.setflags(write=False)
        object.__setattr__(self, "frames", frames)

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def dim(self) -> int:
        return self.frames.shape[1]

    @property
    def audio_duration(self) -> float:
        return self.num_frames * self.frame_period_s


def _check_weights(values, names):
    for n, v in zip(names, values):
        if not math.isfinite(v) or v < 0:
            raise ConfigError(f"{n} must be finite and >= 0, got {v}")


@dataclass(frozen=True)
class FusionWeights:
    """Decode-time weights for CTC, AR and AMD scores."""

    lambda1: float = 0.3
    lambda2: float = 0.6
    lambda3: float = 0.1

    def __post_init__(self):
        vals = (self.lambda1, self.lambda2, self.lambda3)
        _check_weights(vals, ("lambda1", "lambda2", "lambda3"))
        if max(vals) <= 0:
            raise ConfigError("at least one fusion weight must be positive")

    @classmethod
    def parse(cls, text: str) -> "FusionWeights":
        """Parse colon notation: ``"0.3:0.6:0.1"`` or ``"0.3:0.7"`` (no AMD)."""
        try:
            parts = [float(p) for p in text.split(":")]
        except ValueError:
            raise ConfigError(f"weights must be numeric, got {text!r}") from None
        if len(parts) == 2:
            parts.append(0.0)
        if len(parts) != 3:
            raise ConfigError(f"weights must be l1:l2[:l3], got {text!r}")
        return cls(*parts)

    def __str__(self):
        return f"{self.lambda1:g}:{self.lambda2:g}:{self.lambda3:g}"


@dataclass(frozen=True)
class TrainWeights:
    """Training weights of the CTC and AR objectives."""

    gamma1: float = 0.3
    gamma2: float = 0.7

    def __post_init__(self):
        _check_weights((self.gamma1, self.gamma2), ("gamma1", "gamma2"))
        if self.gamma1 + self.gamma2 <= 0:
            raise ConfigError("gamma1 + gamma2 must be > 0")


@dataclass(frozen=True)
class BlockScheduleSpec:
    """Decoding block-size plan: ``n_leading`` size-1 blocks, then size-``block``.

    ``Fixed(B)`` is ``n_leading == 0``.
    """

    block: int = 1
    n_leading: int = 0

    def __post_init__(self):
        if self.block < 1:
            raise ConfigError(f"block size must be >= 1, got {self.block}")
        if self.n_leading < 0:
            raise ConfigError(f"N must be >= 0, got {self.n_leading}")

    @classmethod
    def fixed(cls, block: int) -> "BlockScheduleSpec":
        return cls(block=block, n_leading=0)

    @classmethod
    def mixed(cls, n_leading: int, block: int) -> "BlockScheduleSpec":
        return cls(block=block, n_leading=n_leading)

    @classmethod
    def parse(cls, text: str) -> "BlockScheduleSpec":
        """Parse compact notation: ``"4"`` -> Fixed(4), ``"1-20-4"`` -> Mixed(20, 4)."""
        parts = text.strip().split("-")
        try:
            nums = [int(p) for p in parts]
        except ValueError:
            raise ConfigError(f"bad schedule {text!r}") from None
        if len(nums) == 1:
            return cls.fixed(nums[0])
        if len(nums) == 3 and nums[0] == 1:
            return cls.mixed(nums[1], nums[2])
        raise ConfigError(f"schedule must be 'B' or '1-N-B', got {text!r}")

    def __str__(self):
        if self.n_leading == 0:
            return str(self.block)
        return f"1-{self.n_leading}-{self.block}"


@dataclass(frozen=True)
class SearchConfig:
    """Beam widths, length cap, fusion weights and block schedule for one decode.

    Defaults are the greedy setting (k_main=1, k1=k2=2).
    """

    k_main: int = 1
    k1: int = 2
    k2: int = 2
    l_max: int = 64
    weights: FusionWeights = field(default_factory=FusionWeights)
    schedule: BlockScheduleSpec = field(default_factory=BlockScheduleSpec)
    length_norm: bool = False

    def __post_init__(self):
        for name in ("k_main", "k1", "k2", "l_max"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or v < 1:
                raise ConfigError(f"{name} must be an integer >= 1, got {v!r}")

    def with_(self, **kw: Any) -> "SearchConfig":
        return replace(self, **kw)


BEAM_SEARCH = dict(k_main=60, k1=75, k2=75)
GREEDY_SEARCH = dict(k_main=1, k1=2, k2=2)


@dataclass(frozen=True, eq=False)
class Hypothesis:
    """Partial label sequence with its per-component log scores.

    ``tokens`` excludes sos. ``ctc_state`` is the incremental prefix-scorer
    state (see :mod:`amdecode.ctc`) and is None once the hypothesis has ended.
    """

    tokens: Tuple[int, ...]
    alpha_ctc: float = 0.0
    alpha_ar: float = 0.0
    alpha_amd: float = 0.0
    ctc_state: Optional[Any] = None
    finished: bool = False

    def fused(self, w: FusionWeights) -> float:
        return fused_score(self, w)


def _wmul(w: float, a: float) -> float:
    # 0 * -inf must not poison the sum with nan
    if w == 0.0:
        return 0.0
    return w * a


def fused_score(h: Hypothesis, w: FusionWeights) -> float:
    """Weighted sum of the three component log scores; -inf propagates."""
    return (_wmul(w.lambda1, h.alpha_ctc) + _wmul(w.lambda2, h.alpha_ar)
            + _wmul(w.lambda3, h.alpha_amd))


def rank_key(score: float, tokens: Sequence[int]):
    """Sort key: higher score first, then shorter, then lexicographically smaller."""
    return (-score, len(tokens), tuple(tokens))


@dataclass(frozen=True)
class NBestEntry:
    hyp: Hypothesis
    score: float

    @property
    def tokens(self) -> Tuple[int, ...]:
        return self.hyp.tokens

    def labels(self, eos_id: int) -> Tuple[int, ...]:
        """Tokens with a trailing eos removed."""
        t = self.hyp.tokens
        return t[:-1] if t and t[-1] == eos_id else t


@dataclass(frozen=True)
class NBestList:
    """Final ranked hypotheses, best first."""

    entries: Tuple[NBestEntry, ...]
    truncated: bool = False

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def __getitem__(self, i):
        return self.entries[i]

    @property
    def best(self) -> NBestEntry:
        return self.entries[0]

    def signature(self) -> tuple:
        """Value view of the list (tokens, component scores, fused score, ended flag)."""
        return tuple((e.hyp.tokens, e.hyp.alpha_ctc, e.hyp.alpha_ar, e.hyp.alpha_amd, e.score,
                      e.hyp.finished) for e in self.entries) + (self.truncated,)

    @classmethod
    def from_hyps(cls, hyps, w: FusionWeights, limit: int, length_norm: bool = False):
        """Rank hypotheses; ended ones come before truncated ones."""
        scored = []
        for h in hyps:
            s = fused_score(h, w)
            if length_norm and h.tokens:
                s = s / len(h.tokens)
            scored.append((h, s))
        scored.sort(key=lambda hs: (not hs[0].finished,) + rank_key(hs[1], hs[0].tokens))
        entries = tuple(NBestEntry(h, s) for h, s in scored[:limit])
        return cls(entries, truncated=any(not e.hyp.finished for e in entries))
