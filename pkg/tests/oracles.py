"""Independent reference computations used by the tests."""

import itertools
import math
from collections import defaultdict
from functools import lru_cache

import numpy as np


def random_log_probs(rng, T, V, peaky=1.0):
    logits = rng.normal(size=(T, V)) * peaky
    return logits - np.logaddexp.reduce(logits, axis=1, keepdims=True)


def collapse(path, blank):
    out = []
    prev = None
    for k in path:
        if k != prev and k != blank:
            out.append(k)
        prev = k
    return tuple(out)


def enumerate_ctc(lp, blank):
    """Probability of every label sequence, by summing all V^T alignment paths."""
    T, V = lp.shape
    p = np.exp(lp)
    seqs = defaultdict(float)
    for path in itertools.product(range(V), repeat=T):
        prob = 1.0
        for t, k in enumerate(path):
            prob *= p[t, k]
        seqs[collapse(path, blank)] += prob
    return dict(seqs)


def brute_prefix_prob(seqs, prefix):
    prefix = tuple(prefix)
    n = len(prefix)
    return sum(v for s, v in seqs.items() if s[:n] == prefix)


def edit_ops_memo(ref, hyp):
    """Minimal (total, S, D, I) by top-down recursion; prefers fewer substitutions last."""
    ref, hyp = tuple(ref), tuple(hyp)

    @lru_cache(maxsize=None)
    def go(i, j):
        if i == len(ref):
            return (len(hyp) - j, 0, 0, len(hyp) - j)
        if j == len(hyp):
            return (len(ref) - i, 0, len(ref) - i, 0)
        opts = []
        tot, s, d, ins = go(i + 1, j + 1)
        cost = 0 if ref[i] == hyp[j] else 1
        opts.append((tot + cost, s + cost, d, ins))
        tot, s, d, ins = go(i + 1, j)
        opts.append((tot + 1, s, d + 1, ins))
        tot, s, d, ins = go(i, j + 1)
        opts.append((tot + 1, s, d, ins + 1))
        return min(opts, key=lambda o: o[0])

    return go(0, 0)


def finite_difference(f, x, eps=1e-6):
    """Central differences of scalar f at every entry of array x."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        orig = x[idx]
        x[idx] = orig + eps
        fp = f(x)
        x[idx] = orig - eps
        fm = f(x)
        x[idx] = orig
        g[idx] = (fp - fm) / (2 * eps)
    return g


def max_rel_err(a, b, floor=1e-6):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)))


def log(x):
    return math.log(x) if x > 0 else -math.inf


# ---------------------------------------------------------------------------
# plain numpy re-implementation of the toy model, written from the
# architecture description rather than from the torch code

def _np_sinusoid(n, d):
    pe = np.zeros((n, d))
    for p in range(n):
        for i in range(0, d, 2):
            ang = p / (10000.0 ** (i / d))
            pe[p, i] = math.sin(ang)
            pe[p, i + 1] = math.cos(ang)
    return pe


def _np_ln(x, g, b, eps=1e-5):
    mu = x.mean(-1, keepdims=True)
    var = ((x - mu) ** 2).mean(-1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps) * g + b


def _np_softmax(z):
    z = z - z.max(-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(-1, keepdims=True)


def np_encode(W, frames, width):
    T, F = frames.shape
    pad = width // 2
    xp = np.vstack([np.zeros((pad, F)), frames, np.zeros((pad, F))])
    w, b = W["enc_conv.w"], W["enc_conv.b"]
    h = np.zeros((T, w.shape[0]))
    for t in range(T):
        h[t] = b + np.einsum("ofk,kf->o", w, xp[t: t + width])
    return np.tanh(h)


def np_decoder(W, hp, mode, frames, tokens, allowed, hidden=()):
    """Log-probs (L, V).  ``allowed[q][k]`` says whether query q sees key k."""
    d, H = hp.d, hp.heads
    dh = d // H
    h_enc = np_encode(W, np.asarray(frames, dtype=float), hp.conv_width)
    mem = h_enc + _np_sinusoid(len(h_enc), d)
    L = len(tokens)
    x = np.array([W["embed"][t] for t in tokens])
    for j in hidden:
        x[j] = 0.0
    x = x + _np_sinusoid(L, d)

    def proj(l, name, v):
        Wt = W[f"l{l}.{name}.w"] + W[f"lora_{mode}.l{l}.{name}.B"] @ W[f"lora_{mode}.l{l}.{name}.A"]
        return v @ Wt.T + W[f"l{l}.{name}.b"]

    def attn(q, k, v, mask):
        out = np.zeros_like(q)
        for hh in range(H):
            sl = slice(hh * dh, (hh + 1) * dh)
            s = q[:, sl] @ k[:, sl].T / math.sqrt(dh)
            s = np.where(mask, s, -np.inf)
            out[:, sl] = _np_softmax(s) @ v[:, sl]
        return out

    self_mask = np.array(allowed, dtype=bool)
    cross_mask = np.ones((L, len(mem)), dtype=bool)
    for l in range(hp.layers):
        h = _np_ln(x, W[f"l{l}.ln1.g"], W[f"l{l}.ln1.b"])
        a = attn(proj(l, "self_q", h), proj(l, "self_k", h), proj(l, "self_v", h), self_mask)
        x = x + proj(l, "self_o", a)
        h = _np_ln(x, W[f"l{l}.ln2.g"], W[f"l{l}.ln2.b"])
        a = attn(proj(l, "cross_q", h), proj(l, "cross_k", mem), proj(l, "cross_v", mem),
                 cross_mask)
        x = x + proj(l, "cross_o", a)
        h = _np_ln(x, W[f"l{l}.ln3.g"], W[f"l{l}.ln3.b"])
        x = x + proj(l, "ff2", np.maximum(proj(l, "ff1", h), 0.0))
    x = _np_ln(x, W["ln_f.g"], W["ln_f.b"])
    z = x @ W["out.w"].T + W["out.b"]
    return z - np.logaddexp.reduce(z, axis=-1, keepdims=True)


def np_ctc_log_probs(W, hp, frames):
    h = np_encode(W, np.asarray(frames, dtype=float), hp.conv_width)
    z = h @ W["ctc.w"].T + W["ctc.b"]
    z[:, [hp.sos_id, hp.eos_id]] = -np.inf
    return z - np.logaddexp.reduce(z, axis=-1, keepdims=True)


# ---------------------------------------------------------------------------
# exhaustive search oracles

def ctc_complete_logprob(seqs, labels):
    """log P_CTC(labels) from an ``enumerate_ctc`` table."""
    return log(seqs.get(tuple(labels), 0.0))


def ar_logprob(P, frames, seq, sos):
    from amdecode.model import forward_ar
    lp = forward_ar(P, frames, [sos] + list(seq[:-1]))
    return float(sum(lp[j, t] for j, t in enumerate(seq)))


def amd_logprob(P, frames, seq, blocks, future, sos):
    """Block-by-block AMD score of a complete sequence under a schedule.

    ``seq`` ends with eos; ``future[k]`` is the right-context label for slot k+1.
    """
    from amdecode.model import AttentionMaskPlan, forward_amd
    total = 0.0
    for start, size in blocks:
        if start > len(seq):
            break
        inp = [sos] + list(seq[: start - 1]) + [sos] * size + list(future[start + size - 1:])
        inp = inp[: P.hp.max_len]
        plan = AttentionMaskPlan.block(len(inp), start, size)
        lp = forward_amd(P, frames, inp, plan)
        for k, j in enumerate(range(start, start + size)):
            if j > len(seq):
                break
            total += float(lp[k, seq[j - 1]])
    return total


def weighted(ws, parts):
    return sum(0.0 if w == 0 else w * a for w, a in zip(ws, parts))


def all_sequences(regular, l_max, eos):
    """Every complete sequence (labels + eos) of at most l_max tokens."""
    out = []
    for n in range(l_max):
        for body in itertools.product(regular, repeat=n):
            out.append(tuple(body) + (eos,))
    return out


def fd_check(P, loss_fn, names, rng, n_entries=6, eps=1e-6):
    """Analytic gradient of ``loss_fn(params)`` vs central differences on sampled entries."""
    import torch
    Q = P.clone()
    for v in Q.tensors.values():
        v.requires_grad_(True)
    loss_fn(Q).backward()
    worst = 0.0
    for name in names:
        g = Q.tensors[name].grad
        g = np.zeros(Q[name].shape) if g is None else g.numpy()
        flat = rng.choice(g.size, size=min(n_entries, g.size), replace=False)
        base = P[name].numpy().copy()
        sub = np.zeros(len(flat))

        def f(x, name=name):
            R = P.clone()
            arr = base.copy().reshape(-1)
            arr[flat] = x
            R.tensors[name] = torch.as_tensor(arr.reshape(base.shape))
            with torch.no_grad():
                return float(loss_fn(R))

        sub = base.reshape(-1)[flat].copy()
        fd = finite_difference(f, sub, eps)
        worst = max(worst, max_rel_err(g.reshape(-1)[flat], fd, floor=1e-4))
    return worst
