"""Toy attention decoder with one frozen backbone and two low-rank deltas.

The same transformer weights serve two modes.  ``"ar"`` runs left-to-right
with a causal mask and the AR delta; ``"amd"`` hides one contiguous block of
label slots, attends to everything else, and uses the AMD delta.  Every
adapted projection computes ``x @ (W + B @ A).T`` as
``x @ W.T + (x @ A.T) @ B.T``.

Position 0 of every decoder input is sos.  In AR mode row ``p`` of the output
predicts the token after ``tokens[:p+1]``; in AMD mode the row of a masked
slot predicts that slot's own token.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn.functional as F

from .core import ConfigError, EncoderOutput, Vocab
from .ctc import ctc_loss

DTYPE = torch.float64
MODES = ("ar", "amd")

_ADAPTED = ("self_q", "self_k", "self_v", "self_o",
            "cross_q", "cross_k", "cross_v", "cross_o", "ff1", "ff2")


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class ModelHParams:
    vocab_size: int
    feat_dim: int
    d: int = 16
    layers: int = 2
    heads: int = 2
    ff: int = 64
    rank: int = 4
    max_len: int = 128
    conv_width: int = 3
    blank_id: int = 0
    sos_id: int = 1
    eos_id: int = 2

    def __post_init__(self):
        if self.d % self.heads:
            raise ConfigError("d must be divisible by heads")
        if not 0 <= self.rank <= min(self.d, self.ff):
            raise ConfigError("LoRA rank must not exceed projection dims")
        if self.conv_width % 2 != 1:
            raise ConfigError("conv_width must be odd")

    @classmethod
    def for_vocab(cls, vocab: Vocab, feat_dim: int, **kw) -> "ModelHParams":
        return cls(vocab_size=vocab.size, feat_dim=feat_dim, blank_id=vocab.blank_id,
                   sos_id=vocab.sos_id, eos_id=vocab.eos_id, **kw)


def _proj_shape(hp: ModelHParams, name: str) -> Tuple[int, int]:
    """(d_out, d_in) of an adapted projection."""
    if name == "ff1":
        return hp.ff, hp.d
    if name == "ff2":
        return hp.d, hp.ff
    return hp.d, hp.d


def param_shapes(hp: ModelHParams) -> List[Tuple[str, Tuple[int, ...]]]:
    """All tensor names and shapes, in checkpoint order."""
    d, V = hp.d, hp.vocab_size
    out = [
        ("embed", (V, d)),
        ("enc_conv.w", (d, hp.feat_dim, hp.conv_width)),
        ("enc_conv.b", (d,)),
        ("ctc.w", (V, d)),
        ("ctc.b", (V,)),
    ]
    for l in range(hp.layers):
        for ln in ("ln1", "ln2", "ln3"):
            out += [(f"l{l}.{ln}.g", (d,)), (f"l{l}.{ln}.b", (d,))]
        for p in _ADAPTED:
            o, i = _proj_shape(hp, p)
            out += [(f"l{l}.{p}.w", (o, i)), (f"l{l}.{p}.b", (o,))]
    out += [("ln_f.g", (d,)), ("ln_f.b", (d,)), ("out.w", (V, d)), ("out.b", (V,))]
    for mode in MODES:
        for l in range(hp.layers):
            for p in _ADAPTED:
                o, i = _proj_shape(hp, p)
                out += [(f"lora_{mode}.l{l}.{p}.A", (hp.rank, i)),
                        (f"lora_{mode}.l{l}.{p}.B", (o, hp.rank))]
    return out


def is_lora(name: str, mode: Optional[str] = None) -> bool:
    if mode is None:
        return name.startswith("lora_")
    return name.startswith(f"lora_{mode}.")


@dataclass
class ToyDecoderParams:
    """Hyperparameters plus a name -> float64 tensor map.

    The object is treated as immutable during inference; training replaces
    tensor values in place under a single writer.
    """

    hp: ModelHParams
    tensors: Dict[str, torch.Tensor] = field(default_factory=dict)

    def __getitem__(self, name):
        return self.tensors[name]

    def names(self) -> List[str]:
        return [n for n, _ in param_shapes(self.hp)]

    def clone(self) -> "ToyDecoderParams":
        return ToyDecoderParams(self.hp, {k: v.detach().clone() for k, v in self.tensors.items()})

    def zero_delta(self, mode: str) -> "ToyDecoderParams":
        """Copy with B_lora of ``mode`` set to zero."""
        p = self.clone()
        for n in p.names():
            if is_lora(n, mode) and n.endswith(".B"):
                p.tensors[n].zero_()
        return p

    def merged(self, mode: str) -> "ToyDecoderParams":
        """Copy whose backbone holds W + B @ A for ``mode`` and both deltas are zero."""
        p = self.clone()
        for l in range(self.hp.layers):
            for proj in _ADAPTED:
                A = self.tensors[f"lora_{mode}.l{l}.{proj}.A"]
                B = self.tensors[f"lora_{mode}.l{l}.{proj}.B"]
                p.tensors[f"l{l}.{proj}.w"] = self.tensors[f"l{l}.{proj}.w"] + B @ A
        for m in MODES:
            for n in p.names():
                if is_lora(n, m) and n.endswith(".B"):
                    p.tensors[n].zero_()
        return p

    def backbone_only(self) -> "ToyDecoderParams":
        """Copy without any LoRA tensors; projections then use the bare backbone."""
        return ToyDecoderParams(self.hp, {k: v.detach().clone() for k, v in self.tensors.items()
                                          if not is_lora(k)})

    def effective_weight(self, mode: str, layer: int, proj: str) -> torch.Tensor:
        W = self.tensors[f"l{layer}.{proj}.w"]
        A = self.tensors[f"lora_{mode}.l{layer}.{proj}.A"]
        B = self.tensors[f"lora_{mode}.l{layer}.{proj}.B"]
        return W + B @ A

    def equal(self, other: "ToyDecoderParams") -> bool:
        return self.hp == other.hp and all(
            torch.equal(self.tensors[n], other.tensors[n]) for n in self.names())


def init_params(hp: ModelHParams, seed: int = 0, lora_b_scale: float = 0.0) -> ToyDecoderParams:
    """Random initialization.  LoRA ``B`` factors start at zero unless ``lora_b_scale`` > 0."""
    g = torch.Generator().manual_seed(seed)
    t = {}
    for name, shape in param_shapes(hp):
        if name.endswith(".g"):
            v = torch.ones(shape, dtype=DTYPE)
        elif name.endswith(".b"):
            v = torch.zeros(shape, dtype=DTYPE)
        elif is_lora(name) and name.endswith(".B"):
            v = torch.randn(shape, generator=g, dtype=DTYPE) * lora_b_scale
        elif name == "embed":
            v = torch.randn(shape, generator=g, dtype=DTYPE)
        else:
            fan_in = int(np.prod(shape[1:]))
            v = torch.randn(shape, generator=g, dtype=DTYPE) / math.sqrt(fan_in)
        t[name] = v
    return ToyDecoderParams(hp, t)


# ---------------------------------------------------------------------------
# attention plans

@dataclass(frozen=True)
class AttentionMaskPlan:
    """Which decoder inputs are hidden, and who may attend to whom.

    ``length`` counts the sos at position 0.  A causal plan lets query ``j``
    see keys ``<= j``.  A block plan hides ``masked`` from every query
    (itself included), zeroes their input embeddings and lets every query
    see all remaining positions.
    """

    length: int
    masked: Tuple[int, ...] = ()
    causal: bool = False

    def __post_init__(self):
        object.__setattr__(self, "masked", tuple(sorted(set(self.masked))))
        if self.causal and self.masked:
            raise ModelError("a causal plan has no masked slots")
        if not self.causal:
            if not self.masked:
                raise ModelError("block plan needs at least one masked slot")
            if self.masked[0] < 1 or self.masked[-1] >= self.length:
                raise ModelError(f"masked slots must lie in [1, {self.length - 1}]")

    @classmethod
    def causal_plan(cls, length: int) -> "AttentionMaskPlan":
        return cls(length, (), True)

    @classmethod
    def block(cls, length: int, start: int, size: int) -> "AttentionMaskPlan":
        return cls(length, tuple(range(start, min(start + size, length))), False)

    def allowed_keys(self, query: int) -> Tuple[int, ...]:
        if self.causal:
            return tuple(range(query + 1))
        hidden = set(self.masked)
        return tuple(k for k in range(self.length) if k not in hidden)

    def key_mask(self, pad_to: Optional[int] = None) -> np.ndarray:
        """Boolean (L, L) matrix, True where query row may attend key column."""
        L = self.length if pad_to is None else pad_to
        m = np.zeros((L, L), dtype=bool)
        if self.causal:
            m[: self.length, : self.length] = np.tril(np.ones((self.length, self.length), bool))
        else:
            keys = np.zeros(L, dtype=bool)
            keys[: self.length] = True
            keys[list(self.masked)] = False
            m[:, :] = keys[None, :]
        m[self.length:, 0] = True  # padding rows keep one key
        return m


@dataclass(frozen=True)
class BlockSampling:
    """Training-time block size sampling: ``"uni"`` or ``"var"``."""

    strategy: str = "uni"
    passes: int = 4
    seed: int = 0

    def __post_init__(self):
        if self.strategy not in ("uni", "var"):
            raise ConfigError(f"strategy must be 'uni' or 'var', got {self.strategy!r}")
        if self.passes < 1:
            raise ConfigError("passes must be >= 1")


def tile(L: int, sizes: Iterable[int]) -> List[Tuple[int, int]]:
    """(start, size) blocks covering slots 1..L; the last one is truncated."""
    out = []
    pos = 1
    for b in sizes:
        if pos > L:
            break
        b = min(int(b), L - pos + 1)
        out.append((pos, b))
        pos += b
    return out


def sample_blocks(L: int, s: BlockSampling, rng: Optional[np.random.Generator] = None
                  ) -> List[List[Tuple[int, int]]]:
    """Block tilings of slots 1..L, one per training pass.

    UNI draws one size per pass from [1, L]; VAR draws a fresh size for each
    block.  Returns ``s.passes`` lists of ``(start, size)``.
    """
    if L < 1:
        raise ConfigError("L must be >= 1")
    if rng is None:
        rng = np.random.default_rng(s.seed)
    passes = []
    for _ in range(s.passes):
        if s.strategy == "uni":
            b = int(rng.integers(1, L + 1))
            passes.append(tile(L, [b] * L))
        else:
            blocks = []
            pos = 1
            while pos <= L:
                b = min(int(rng.integers(1, L + 1)), L - pos + 1)
                blocks.append((pos, b))
                pos += b
            passes.append(blocks)
    return passes


# ---------------------------------------------------------------------------
# forward

def _sinusoid(n: int, d: int) -> torch.Tensor:
    pos = torch.arange(n, dtype=DTYPE)[:, None]
    i = torch.arange(0, d, 2, dtype=DTYPE)
    ang = pos / torch.pow(torch.tensor(10000.0, dtype=DTYPE), i / d)
    pe = torch.zeros(n, d, dtype=DTYPE)
    pe[:, 0::2] = torch.sin(ang)
    pe[:, 1::2] = torch.cos(ang)
    return pe


def _layer_norm(x, g, b):
    return F.layer_norm(x, (x.shape[-1],), g, b, eps=1e-5)


def _proj(P: ToyDecoderParams, mode: str, layer: int, name: str, x):
    W = P.tensors[f"l{layer}.{name}.w"]
    b = P.tensors[f"l{layer}.{name}.b"]
    A = P.tensors.get(f"lora_{mode}.l{layer}.{name}.A")
    if A is None:
        return x @ W.T + b
    B = P.tensors[f"lora_{mode}.l{layer}.{name}.B"]
    return x @ W.T + b + (x @ A.T) @ B.T


def _attend(q, k, v, bias, heads, dead_rows=None):
    """q (N,Lq,d), k/v (N,Lk,d); ``bias`` is 0 / -inf, broadcastable to (N,1,Lq,Lk)."""
    N, Lq, d = q.shape
    Lk = k.shape[1]
    dh = d // heads
    q = q.view(N, Lq, heads, dh).transpose(1, 2)
    k = k.view(N, Lk, heads, dh).transpose(1, 2)
    v = v.view(N, Lk, heads, dh).transpose(1, 2)
    scores = q @ k.transpose(-1, -2) / math.sqrt(dh) + bias
    w = torch.softmax(scores, dim=-1)
    if dead_rows is not None:
        # items with no encoder frames: nothing to attend to
        w = w.masked_fill(dead_rows[:, None, None, None], 0.0)
    ctx = w @ v
    return ctx.transpose(1, 2).reshape(N, Lq, d), w


def _bias(allowed: torch.Tensor) -> torch.Tensor:
    return torch.zeros(allowed.shape, dtype=DTYPE).masked_fill(~allowed, -math.inf)


@dataclass(frozen=True, eq=False)
class EncodedBatch:
    """Frontend output shared by the CTC head and both decoder modes."""

    hidden: torch.Tensor      # (N, T, d) without positions
    memory: torch.Tensor      # (N, T, d) with positions, attended by the decoder
    valid: torch.Tensor       # (N, T) bool
    lengths: Tuple[int, ...]


def encode_batch(P: ToyDecoderParams, frames: Sequence[np.ndarray]) -> EncodedBatch:
    hp = P.hp
    lengths = tuple(int(f.shape[0]) for f in frames)
    N, T = len(frames), max(lengths, default=0)
    x = torch.zeros(N, T, hp.feat_dim, dtype=DTYPE)
    for n, f in enumerate(frames):
        if f.shape[1] != hp.feat_dim:
            raise ModelError(f"feature dim {f.shape[1]} != {hp.feat_dim}")
        x[n, : f.shape[0]] = torch.as_tensor(np.asarray(f, dtype=np.float64))
    valid = torch.zeros(N, T, dtype=torch.bool)
    for n, t in enumerate(lengths):
        valid[n, :t] = True
    if T == 0:
        h = torch.zeros(N, 0, hp.d, dtype=DTYPE)
    else:
        h = F.conv1d(x.transpose(1, 2), P.tensors["enc_conv.w"], P.tensors["enc_conv.b"],
                     padding=hp.conv_width // 2).transpose(1, 2)
        h = torch.tanh(h)
        h = h * valid[..., None]
    memory = h + _sinusoid(T, hp.d)[None] if T else h
    return EncodedBatch(h, memory, valid, lengths)


def encode(P: ToyDecoderParams, enc) -> EncodedBatch:
    frames = enc.frames if isinstance(enc, EncoderOutput) else np.asarray(enc)
    return encode_batch(P, [frames])


def ctc_log_probs_batch(P: ToyDecoderParams, eb: EncodedBatch) -> torch.Tensor:
    """(N, T, V) CTC log-posteriors; sos and eos are never emitted."""
    hp = P.hp
    logits = eb.hidden @ P.tensors["ctc.w"].T + P.tensors["ctc.b"]
    never = torch.zeros(hp.vocab_size, dtype=torch.bool)
    never[[hp.sos_id, hp.eos_id]] = True
    logits = logits.masked_fill(never, -math.inf)
    return torch.log_softmax(logits, dim=-1)


def ctc_log_probs(P: ToyDecoderParams, enc) -> np.ndarray:
    eb = enc if isinstance(enc, EncodedBatch) else encode(P, enc)
    with torch.no_grad():
        return ctc_log_probs_batch(P, eb)[0].numpy()


def decoder_forward(P: ToyDecoderParams, mode: str, eb: EncodedBatch, tokens: torch.Tensor,
                    allowed: torch.Tensor, hidden_in: torch.Tensor,
                    utt_index: Optional[torch.Tensor] = None) -> torch.Tensor:
    """Batched decoder pass.

    Args:
        tokens: (N, L) int64 decoder inputs, sos at column 0.
        allowed: (N, L, L) bool self-attention key masks.
        hidden_in: (N, L) bool; True zeroes that input embedding.
        utt_index: (N,) rows of ``eb`` to attend to (default ``arange(N)``).
    Returns:
        (N, L, V) log-probabilities.
    """
    hp = P.hp
    if mode not in MODES:
        raise ModelError(f"unknown mode {mode!r}")
    N, L = tokens.shape
    if L > hp.max_len:
        raise ModelError(f"input length {L} exceeds max_len {hp.max_len}")
    mem, mem_valid = eb.memory, eb.valid
    if utt_index is not None:
        mem_valid = mem_valid[utt_index]
    emb = P.tensors["embed"][tokens]
    emb = torch.where(hidden_in[..., None], torch.zeros_like(emb), emb)
    x = emb + _sinusoid(L, hp.d)[None]
    self_bias = _bias(allowed)[:, None]
    cross_bias = _bias(mem_valid)[:, None, None, :]
    dead = ~mem_valid.any(-1)
    dead = dead if bool(dead.any()) else None
    for l in range(hp.layers):
        h = _layer_norm(x, P[f"l{l}.ln1.g"], P[f"l{l}.ln1.b"])
        q = _proj(P, mode, l, "self_q", h)
        k = _proj(P, mode, l, "self_k", h)
        v = _proj(P, mode, l, "self_v", h)
        ctx, _ = _attend(q, k, v, self_bias, hp.heads)
        x = x + _proj(P, mode, l, "self_o", ctx)
        h = _layer_norm(x, P[f"l{l}.ln2.g"], P[f"l{l}.ln2.b"])
        q = _proj(P, mode, l, "cross_q", h)
        # project each utterance's memory once, then fan out to its items
        k = _proj(P, mode, l, "cross_k", mem)
        v = _proj(P, mode, l, "cross_v", mem)
        if utt_index is not None:
            k, v = k[utt_index], v[utt_index]
        ctx, _ = _attend(q, k, v, cross_bias, hp.heads, dead)
        x = x + _proj(P, mode, l, "cross_o", ctx)
        h = _layer_norm(x, P[f"l{l}.ln3.g"], P[f"l{l}.ln3.b"])
        x = x + _proj(P, mode, l, "ff2", torch.relu(_proj(P, mode, l, "ff1", h)))
    x = _layer_norm(x, P["ln_f.g"], P["ln_f.b"])
    logits = x @ P["out.w"].T + P["out.b"]
    return torch.log_softmax(logits, dim=-1)


def _pad_tokens(seqs: Sequence[Sequence[int]], pad: int, pad_to: Optional[int] = None
                ) -> torch.Tensor:
    L = max(len(s) for s in seqs) if pad_to is None else pad_to
    out = torch.full((len(seqs), L), pad, dtype=torch.long)
    for n, s in enumerate(seqs):
        out[n, : len(s)] = torch.as_tensor(list(s), dtype=torch.long)
    return out


def run_plans(P: ToyDecoderParams, mode: str, eb: EncodedBatch, inputs: Sequence[Sequence[int]],
              plans: Sequence[AttentionMaskPlan], utt_index: Optional[Sequence[int]] = None,
              pad_to: Optional[int] = None) -> torch.Tensor:
    """Evaluate a batch of (input, plan) pairs; returns (N, L, V) log-probs.

    GEMM results depend on matrix shape in the last bits, so inference pads
    every input to ``max_len``: a row's output then depends only on what it
    is allowed to see.  Training leaves ``pad_to`` unset.
    """
    hp = P.hp
    toks = _pad_tokens(inputs, hp.sos_id, pad_to)
    L = toks.shape[1]
    for s, p in zip(inputs, plans):
        if p.length != len(s):
            raise ModelError("plan length does not match input length")
    allowed = torch.as_tensor(np.stack([p.key_mask(L) for p in plans]))
    hidden = torch.zeros(len(inputs), L, dtype=torch.bool)
    for n, p in enumerate(plans):
        if p.masked:
            hidden[n, list(p.masked)] = True
    idx = None if utt_index is None else torch.as_tensor(list(utt_index), dtype=torch.long)
    return decoder_forward(P, mode, eb, toks, allowed, hidden, idx)


def _check_tokens(P, tokens):
    tokens = [int(t) for t in tokens]
    if not tokens or tokens[0] != P.hp.sos_id:
        raise ModelError("decoder input must start with sos")
    if len(tokens) > P.hp.max_len:
        raise ModelError(f"input length {len(tokens)} exceeds max_len {P.hp.max_len}")
    return tokens


def forward_ar(P: ToyDecoderParams, enc, tokens: Sequence[int]) -> np.ndarray:
    """Next-token log-distributions, one row per input position (sos-prefixed input)."""
    tokens = _check_tokens(P, tokens)
    eb = enc if isinstance(enc, EncodedBatch) else encode(P, enc)
    with torch.no_grad():
        out = run_plans(P, "ar", eb, [tokens], [AttentionMaskPlan.causal_plan(len(tokens))],
                        pad_to=P.hp.max_len)
    return out[0, : len(tokens)].numpy()


def forward_amd(P: ToyDecoderParams, enc, tokens: Sequence[int], plan: AttentionMaskPlan
                ) -> np.ndarray:
    """Log-distributions at the masked slots of ``plan``, in slot order."""
    tokens = _check_tokens(P, tokens)
    if plan.causal:
        raise ModelError("forward_amd needs a block plan")
    eb = enc if isinstance(enc, EncodedBatch) else encode(P, enc)
    with torch.no_grad():
        out = run_plans(P, "amd", eb, [tokens], [plan], pad_to=P.hp.max_len)
    return out[0, list(plan.masked)].numpy()


# ---------------------------------------------------------------------------
# losses

class _CtcLossFn(torch.autograd.Function):
    @staticmethod
    def forward(ctx, log_probs, ref, blank):
        res = ctc_loss(log_probs.detach().numpy(), ref, blank_id=blank)
        ctx.save_for_backward(torch.as_tensor(res.grad))
        ctx.feasible = res.feasible
        return log_probs.new_tensor(res.loss if res.feasible else 0.0)

    @staticmethod
    def backward(ctx, g):
        (grad,) = ctx.saved_tensors
        return g * grad, None, None


def ctc_loss_torch(log_probs: torch.Tensor, ref: Sequence[int], blank: int) -> torch.Tensor:
    """Differentiable CTC NLL; infeasible alignments contribute 0 (skipped)."""
    return _CtcLossFn.apply(log_probs, tuple(int(t) for t in ref), blank)


def ar_loss_batch(P, eb: EncodedBatch, targets: Sequence[Sequence[int]]) -> torch.Tensor:
    """Teacher-forced NLL summed over all target tokens of all utterances."""
    sos = P.hp.sos_id
    inputs = [[sos] + list(t[:-1]) for t in targets]
    plans = [AttentionMaskPlan.causal_plan(len(s)) for s in inputs]
    lp = run_plans(P, "ar", eb, inputs, plans)
    tgt = _pad_tokens(targets, 0)
    valid = torch.zeros_like(tgt, dtype=torch.bool)
    for n, t in enumerate(targets):
        valid[n, : len(t)] = True
    picked = lp.gather(-1, tgt[..., None])[..., 0]
    return -(picked * valid).sum()


def amd_items(targets: Sequence[Sequence[int]], tilings: Sequence[Sequence[Sequence[Tuple[int, int]]]],
              sos: int):
    """Flatten per-utterance pass tilings into (utt, input, plan) triples."""
    items = []
    for n, (t, passes) in enumerate(zip(targets, tilings)):
        inp = [sos] + list(t)
        for blocks in passes:
            for start, size in blocks:
                items.append((n, inp, AttentionMaskPlan.block(len(inp), start, size)))
    return items


def amd_loss_batch(P, eb: EncodedBatch, targets: Sequence[Sequence[int]],
                   tilings) -> torch.Tensor:
    """Masked-block NLL: every slot of every pass, predicted under its own block."""
    items = amd_items(targets, tilings, P.hp.sos_id)
    lp = run_plans(P, "amd", eb, [i for _, i, _ in items], [p for _, _, p in items],
                   utt_index=[n for n, _, _ in items])
    rows, cols, toks = [], [], []
    for r, (_, inp, plan) in enumerate(items):
        for j in plan.masked:
            rows.append(r)
            cols.append(j)
            toks.append(inp[j])
    return -lp[rows, cols, toks].sum()


def ctc_loss_batch(P, eb: EncodedBatch, refs: Sequence[Sequence[int]]) -> torch.Tensor:
    lp = ctc_log_probs_batch(P, eb)
    total = lp.new_zeros(())
    for n, ref in enumerate(refs):
        total = total + ctc_loss_torch(lp[n, : eb.lengths[n]], ref, P.hp.blank_id)
    return total


def _loss_and_grads(P: ToyDecoderParams, fn):
    Q = P.clone()
    for v in Q.tensors.values():
        v.requires_grad_(True)
    loss = fn(Q)
    loss.backward()
    grads = {k: (v.grad if v.grad is not None else torch.zeros_like(v))
             for k, v in Q.tensors.items()}
    return float(loss.detach()), grads


def ar_loss(P: ToyDecoderParams, enc, target: Sequence[int]):
    """Teacher-forced NLL of ``target`` (eos included by the caller) and gradients."""
    frames = enc.frames if isinstance(enc, EncoderOutput) else enc
    return _loss_and_grads(P, lambda Q: ar_loss_batch(Q, encode_batch(Q, [frames]), [target]))


def amd_loss(P: ToyDecoderParams, enc, target: Sequence[int], s: BlockSampling,
             rng: Optional[np.random.Generator] = None):
    """Sum over the sampled passes of the masked-block NLL, plus gradients."""
    frames = enc.frames if isinstance(enc, EncoderOutput) else enc
    tiling = sample_blocks(len(target), s, rng)
    return _loss_and_grads(
        P, lambda Q: amd_loss_batch(Q, encode_batch(Q, [frames]), [target], [tiling]))


def hybrid_loss(P: ToyDecoderParams, enc, ref: Sequence[int], target: Sequence[int],
                gamma1: float, gamma2: float):
    """``gamma1 * CTC + gamma2 * AR`` for one utterance, with gradients."""
    frames = enc.frames if isinstance(enc, EncoderOutput) else enc

    def fn(Q):
        eb = encode_batch(Q, [frames])
        return gamma1 * ctc_loss_batch(Q, eb, [ref]) + gamma2 * ar_loss_batch(Q, eb, [target])

    return _loss_and_grads(P, fn)
