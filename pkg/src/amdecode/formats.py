"""On-disk formats.

Binary layouts are little-endian throughout.

Feature matrix (``.amdf``)::

    b"AMDF" | u32 rows | u32 cols | rows*cols f32, row-major

Checkpoint (``.amdp``)::

    b"AMDP" | u16 version
    u32 n_hparams, then per entry: u16 name_len | name utf-8 | i64 value
    u32 n_tensors, then per tensor (fixed order of ``model.param_shapes``):
        u16 name_len | name utf-8 | u8 ndim | ndim x u32 dims | f64 data, row-major

Vocabulary: one token per line; special tokens carry a tab and their role
(``blank``, ``sos``, ``eos``).

References: ``<id>\\t<tok> <tok> ...`` per line.

N-best lists: one JSON object per line, keys in the order of ``NBEST_FIELDS``.
"""

from __future__ import annotations

import io
import json
import os
import struct
import tempfile
from dataclasses import fields
from pathlib import Path
from typing import Dict, Iterable, List, Sequence, Tuple

import numpy as np
import torch

from .core import Vocab
from .model import ModelHParams, ToyDecoderParams, param_shapes

FEAT_MAGIC = b"AMDF"
CKPT_MAGIC = b"AMDP"
CKPT_VERSION = 1
MAX_DIM = 1 << 24


class FormatError(ValueError):
    """Malformed, truncated or mismatched file."""


def atomic_write(path, data) -> None:
    """Write bytes or text to ``path`` via a temp file and rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    mode = "wb" if isinstance(data, (bytes, bytearray)) else "w"
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, mode, **({} if mode == "wb" else {"encoding": "utf-8"})) as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class _Reader:
    def __init__(self, buf: bytes, what: str):
        self.buf = buf
        self.pos = 0
        self.what = what

    def take(self, n: int) -> bytes:
        if n < 0 or self.pos + n > len(self.buf):
            raise FormatError(f"truncated {self.what}")
        out = self.buf[self.pos: self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def done(self):
        if self.pos != len(self.buf):
            raise FormatError(f"trailing bytes in {self.what}")


# ---------------------------------------------------------------------------
# features

def features_to_bytes(mat: np.ndarray) -> bytes:
    mat = np.asarray(mat)
    if mat.ndim != 2:
        raise FormatError("feature matrix must be 2-D")
    rows, cols = mat.shape
    if rows >= 1 << 32 or cols >= 1 << 32:
        raise FormatError("dimension overflow")
    return FEAT_MAGIC + struct.pack("<II", rows, cols) + np.ascontiguousarray(
        mat, dtype="<f4").tobytes()


def features_from_bytes(buf: bytes) -> np.ndarray:
    r = _Reader(buf, "feature file")
    if r.take(4) != FEAT_MAGIC:
        raise FormatError("bad magic: not an AMDF feature file")
    rows, cols = r.unpack("<II")
    if rows * cols * 4 > len(buf) - r.pos:
        raise FormatError("truncated feature file (dimensions exceed payload)")
    data = np.frombuffer(r.take(rows * cols * 4), dtype="<f4").reshape(rows, cols)
    r.done()
    return data.astype(np.float32)


def save_features(path, mat) -> None:
    atomic_write(path, features_to_bytes(mat))


def load_features(path) -> np.ndarray:
    return features_from_bytes(Path(path).read_bytes())


# ---------------------------------------------------------------------------
# checkpoints

def checkpoint_to_bytes(P: ToyDecoderParams) -> bytes:
    out = io.BytesIO()
    out.write(CKPT_MAGIC + struct.pack("<H", CKPT_VERSION))
    hps = [(f.name, int(getattr(P.hp, f.name))) for f in fields(ModelHParams)]
    out.write(struct.pack("<I", len(hps)))
    for name, val in hps:
        b = name.encode()
        out.write(struct.pack("<H", len(b)) + b + struct.pack("<q", val))
    shapes = param_shapes(P.hp)
    out.write(struct.pack("<I", len(shapes)))
    for name, shape in shapes:
        t = P.tensors[name].detach().cpu().numpy()
        if t.shape != tuple(shape):
            raise FormatError(f"tensor {name} has shape {t.shape}, expected {shape}")
        b = name.encode()
        out.write(struct.pack("<H", len(b)) + b + struct.pack("<B", len(shape)))
        out.write(struct.pack(f"<{len(shape)}I", *shape))
        out.write(np.ascontiguousarray(t, dtype="<f8").tobytes())
    return out.getvalue()


def checkpoint_from_bytes(buf: bytes) -> ToyDecoderParams:
    r = _Reader(buf, "checkpoint")
    if r.take(4) != CKPT_MAGIC:
        raise FormatError("bad magic: not an AMDP checkpoint")
    (version,) = r.unpack("<H")
    if version != CKPT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    (n,) = r.unpack("<I")
    hp_vals = {}
    for _ in range(n):
        (ln,) = r.unpack("<H")
        name = r.take(ln).decode()
        (hp_vals[name],) = r.unpack("<q")
    try:
        hp = ModelHParams(**hp_vals)
    except TypeError as e:
        raise FormatError(f"bad hyperparameters: {e}") from None
    shapes = param_shapes(hp)
    (n,) = r.unpack("<I")
    if n != len(shapes):
        raise FormatError(f"expected {len(shapes)} tensors, found {n}")
    tensors = {}
    for name, shape in shapes:
        (ln,) = r.unpack("<H")
        got = r.take(ln).decode()
        if got != name:
            raise FormatError(f"tensor order mismatch: {got!r} where {name!r} expected")
        (nd,) = r.unpack("<B")
        dims = r.unpack(f"<{nd}I")
        if tuple(dims) != tuple(shape):
            raise FormatError(f"tensor {name} dims {dims} != {shape}")
        count = int(np.prod(dims)) if dims else 1
        data = np.frombuffer(r.take(8 * count), dtype="<f8").reshape(dims)
        tensors[name] = torch.tensor(data.astype(np.float64))
    r.done()
    return ToyDecoderParams(hp, tensors)


def save_checkpoint(path, P: ToyDecoderParams) -> None:
    atomic_write(path, checkpoint_to_bytes(P))


def load_checkpoint(path) -> ToyDecoderParams:
    return checkpoint_from_bytes(Path(path).read_bytes())


# ---------------------------------------------------------------------------
# text formats

_ROLES = ("blank", "sos", "eos")


def vocab_to_text(v: Vocab) -> str:
    roles = {v.blank_id: "blank", v.sos_id: "sos", v.eos_id: "eos"}
    lines = []
    for i, tok in enumerate(v.tokens):
        if any(c in tok for c in "\t\n"):
            raise FormatError(f"token {tok!r} contains a tab or newline")
        lines.append(f"{tok}\t{roles[i]}" if i in roles else tok)
    return "\n".join(lines) + "\n"


def vocab_from_text(text: str) -> Vocab:
    tokens, ids = [], {}
    for i, line in enumerate(text.splitlines()):
        tok, _, role = line.partition("\t")
        if role:
            if role not in _ROLES or role in ids:
                raise FormatError(f"bad special annotation {role!r} on line {i + 1}")
            ids[role] = i
        tokens.append(tok)
    if set(ids) != set(_ROLES):
        raise FormatError("vocab must annotate blank, sos and eos")
    return Vocab(tuple(tokens), ids["blank"], ids["sos"], ids["eos"])


def save_vocab(path, v: Vocab) -> None:
    atomic_write(path, vocab_to_text(v))


def load_vocab(path) -> Vocab:
    return vocab_from_text(Path(path).read_text(encoding="utf-8"))


def refs_to_text(refs: Dict[int, Sequence[str]]) -> str:
    lines = []
    for uid in sorted(refs):
        toks = list(refs[uid])
        if any(not t or any(c.isspace() for c in t) for t in toks):
            raise FormatError("reference tokens must be non-empty and whitespace-free")
        lines.append(f"{uid}\t{' '.join(toks)}")
    return "".join(line + "\n" for line in lines)


def refs_from_text(text: str) -> Dict[int, Tuple[str, ...]]:
    out = {}
    for i, line in enumerate(text.splitlines()):
        uid, sep, rest = line.partition("\t")
        if not sep:
            raise FormatError(f"line {i + 1}: expected '<id>\\t<tokens>'")
        try:
            out[int(uid)] = tuple(rest.split())
        except ValueError:
            raise FormatError(f"line {i + 1}: bad utterance id {uid!r}") from None
    return out


def save_refs(path, refs) -> None:
    atomic_write(path, refs_to_text(refs))


def load_refs(path) -> Dict[int, Tuple[str, ...]]:
    return refs_from_text(Path(path).read_text(encoding="utf-8"))


NBEST_FIELDS = ("utt_id", "hyps", "calls", "wall_s")
HYP_FIELDS = ("tokens", "alpha_ctc", "alpha_ar", "alpha_amd", "score", "finished")


def _float(x: float):
    # JSON has no infinities; keep them readable and exact on reload
    if x == float("inf"):
        return "inf"
    if x == float("-inf"):
        return "-inf"
    return x


def _unfloat(x):
    return float(x) if isinstance(x, str) else x


def nbest_record_to_line(rec: dict) -> str:
    hyps = [{k: (_float(h[k]) if isinstance(h[k], float) else h[k]) for k in HYP_FIELDS}
            for h in rec["hyps"]]
    ordered = {"utt_id": rec["utt_id"], "hyps": hyps, "calls": dict(rec.get("calls", {})),
               "wall_s": rec.get("wall_s")}
    return json.dumps(ordered, separators=(",", ":"))


def nbest_record_from_line(line: str) -> dict:
    try:
        rec = json.loads(line)
    except json.JSONDecodeError as e:
        raise FormatError(f"bad n-best record: {e}") from None
    if list(rec) != list(NBEST_FIELDS):
        raise FormatError(f"n-best record fields {list(rec)} != {list(NBEST_FIELDS)}")
    for h in rec["hyps"]:
        if list(h) != list(HYP_FIELDS):
            raise FormatError("bad hypothesis fields")
        for k in ("alpha_ctc", "alpha_ar", "alpha_amd", "score"):
            h[k] = _unfloat(h[k])
        h["tokens"] = list(h["tokens"])
    return rec


def save_nbest(path, records: Iterable[dict]) -> None:
    atomic_write(path, "".join(nbest_record_to_line(r) + "\n" for r in records))


def load_nbest(path) -> List[dict]:
    text = Path(path).read_text(encoding="utf-8")
    return [nbest_record_from_line(line) for line in text.splitlines() if line.strip()]
