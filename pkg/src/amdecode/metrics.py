"""WER, oracle WER, lattice density, RTF and the MAPSSWE paired test."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np


class MetricError(ValueError):
    pass


@dataclass(frozen=True)
class EditOps:
    sub: int
    dele: int
    ins: int
    n_ref: int

    @property
    def errors(self) -> int:
        return self.sub + self.dele + self.ins


def edit_distance(ref: Sequence, hyp: Sequence) -> Tuple[int, int, int]:
    """Minimal Levenshtein alignment as ``(S, D, I)``.

    Among minimal alignments, a substitution is preferred over a
    deletion + insertion pair, then deletions over insertions.
    """
    n, m = len(ref), len(hyp)
    # cost[i][j] = (total, S, D, I) for ref[:i] vs hyp[:j]
    prev = [(j, 0, 0, j) for j in range(m + 1)]
    for i in range(1, n + 1):
        cur = [(i, 0, i, 0)]
        for j in range(1, m + 1):
            t, s, d, ins = prev[j - 1]
            if ref[i - 1] == hyp[j - 1]:
                best = (t, s, d, ins)
            else:
                best = (t + 1, s + 1, d, ins)
            t, s, d, ins = prev[j]
            cand = (t + 1, s, d + 1, ins)
            if cand[0] < best[0]:
                best = cand
            t, s, d, ins = cur[j - 1]
            cand = (t + 1, s, d, ins + 1)
            if cand[0] < best[0]:
                best = cand
            cur.append(best)
        prev = cur
    _, s, d, ins = prev[m]
    return s, d, ins


def edit_ops(ref, hyp) -> EditOps:
    s, d, i = edit_distance(ref, hyp)
    return EditOps(s, d, i, len(ref))


def wer(refs: Sequence[Sequence], hyps: Sequence[Sequence]) -> float:
    """Corpus WER in percent."""
    if len(refs) != len(hyps):
        raise MetricError("refs and hyps differ in length")
    n_ref = sum(len(r) for r in refs)
    if n_ref == 0:
        raise MetricError("reference corpus has no tokens")
    errs = sum(sum(edit_distance(r, h)) for r, h in zip(refs, hyps))
    return 100.0 * errs / n_ref


def oracle_wer(nbests: Sequence[Sequence[Sequence]], refs: Sequence[Sequence]) -> float:
    """WER (percent) when each utterance keeps its closest hypothesis."""
    if len(nbests) != len(refs):
        raise MetricError("one n-best list per reference required")
    best = []
    for i, (lst, ref) in enumerate(zip(nbests, refs)):
        if not lst:
            raise MetricError(f"empty n-best list for utterance {i}")
        best.append(min(lst, key=lambda h: sum(edit_distance(ref, h))))
    return wer(refs, best)


def lattice_density(nbests: Sequence[Sequence[Sequence]], refs: Sequence[Sequence]) -> float:
    """Distinct token types per reference token.

    For each utterance, count the distinct token types appearing anywhere in
    its n-best list; sum over the corpus and divide by the total number of
    reference tokens.
    """
    if len(nbests) != len(refs):
        raise MetricError("one n-best list per reference required")
    n_ref = sum(len(r) for r in refs)
    if n_ref == 0:
        raise MetricError("reference corpus has no tokens")
    distinct = 0
    for i, lst in enumerate(nbests):
        if not lst:
            raise MetricError(f"empty n-best list for utterance {i}")
        distinct += len({t for h in lst for t in h})
    return distinct / n_ref


@dataclass(frozen=True)
class SignificanceResult:
    z: float
    significant: bool
    n: int
    mean_diff: float


def mapsswe(errors_a: Sequence[float], errors_b: Sequence[float],
            critical: float = 1.96) -> SignificanceResult:
    """Matched-pairs segment word-error test, two-sided at alpha = 0.05.

    ``d_i = errors_a[i] - errors_b[i]`` and ``z = mean(d) / (sd(d) / sqrt(n))``
    with the sample standard deviation.  All-zero differences give ``z = 0``;
    zero spread with a nonzero mean gives ``z = +-inf`` (significant).
    """
    a = np.asarray(errors_a, dtype=float)
    b = np.asarray(errors_b, dtype=float)
    if a.shape != b.shape:
        raise MetricError("systems must be scored on the same segments")
    n = a.size
    if n < 2:
        raise MetricError("need at least 2 segments")
    d = a - b
    mean = float(d.mean())
    sd = float(d.std(ddof=1))
    if sd == 0.0:
        if mean == 0.0:
            return SignificanceResult(0.0, False, n, 0.0)
        return SignificanceResult(math.copysign(math.inf, mean), True, n, mean)
    z = mean / (sd / math.sqrt(n))
    return SignificanceResult(z, abs(z) > critical, n, mean)


def rtf(decode_seconds: float, audio_seconds: float) -> float:
    if not audio_seconds > 0:
        raise MetricError("audio duration must be > 0")
    return decode_seconds / audio_seconds


def rtf_and_speedup(decode_seconds: float, audio_seconds: float,
                    baseline_rtf: Optional[float] = None) -> Tuple[float, Optional[float]]:
    """Real-time factor and, if a baseline RTF is given, the speedup over it."""
    r = rtf(decode_seconds, audio_seconds)
    return r, (None if baseline_rtf is None else speedup(baseline_rtf, r))


def speedup(baseline_rtf: float, system_rtf: float) -> float:
    if not system_rtf > 0:
        raise MetricError("system RTF must be > 0")
    return baseline_rtf / system_rtf


@dataclass
class EvalReport:
    """Per-utterance edit operations plus corpus-level figures."""

    utt_ids: List[int]
    ops: List[EditOps]
    wer: float
    oracle_wer: Optional[float] = None
    lattice_density: Optional[float] = None
    rtf: Optional[float] = None
    extra: dict = field(default_factory=dict)

    @property
    def segment_errors(self) -> List[int]:
        return [o.errors for o in self.ops]

    def to_dict(self) -> dict:
        return {
            "wer": self.wer,
            "oracle_wer": self.oracle_wer,
            "lattice_density": self.lattice_density,
            "rtf": self.rtf,
            "n_ref": sum(o.n_ref for o in self.ops),
            "segments": [
                {"utt_id": u, "sub": o.sub, "del": o.dele, "ins": o.ins, "n_ref": o.n_ref}
                for u, o in zip(self.utt_ids, self.ops)
            ],
            **self.extra,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        segs = d["segments"]
        known = {"wer", "oracle_wer", "lattice_density", "rtf", "n_ref", "segments"}
        return cls([s["utt_id"] for s in segs],
                   [EditOps(s["sub"], s["del"], s["ins"], s["n_ref"]) for s in segs],
                   d["wer"], d.get("oracle_wer"), d.get("lattice_density"), d.get("rtf"),
                   {k: v for k, v in d.items() if k not in known})


def evaluate(utt_ids: Sequence[int], refs: Sequence[Sequence], nbests: Sequence[Sequence[Sequence]],
             rtf_value: Optional[float] = None) -> EvalReport:
    """Score 1-best WER, oracle WER and lattice density of ranked n-best lists."""
    ones = [lst[0] if lst else () for lst in nbests]
    ops = [edit_ops(r, h) for r, h in zip(refs, ones)]
    return EvalReport(list(utt_ids), ops, wer(refs, ones), oracle_wer(nbests, refs),
                      lattice_density(nbests, refs), rtf_value)


def tradeoff_svg(points: Sequence[Tuple[str, float, float]], title: str = "WER vs RTF") -> str:
    """Static scatter plot of (label, rtf, wer) points as an SVG string."""
    W, H, pad = 480, 320, 50
    if not points:
        return f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}"></svg>\n'
    xs = [p[1] for p in points]
    ys = [p[2] for p in points]
    x0, x1 = min(xs), max(xs)
    y0, y1 = min(ys), max(ys)
    x1 = x1 if x1 > x0 else x0 + 1e-9
    y1 = y1 if y1 > y0 else y0 + 1e-9

    def sx(x):
        return pad + (x - x0) / (x1 - x0) * (W - 2 * pad)

    def sy(y):
        return H - pad - (y - y0) / (y1 - y0) * (H - 2 * pad)

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" '
             f'font-family="sans-serif" font-size="11">',
             f'<text x="{W / 2}" y="20" text-anchor="middle">{title}</text>',
             f'<line x1="{pad}" y1="{H - pad}" x2="{W - pad}" y2="{H - pad}" stroke="black"/>',
             f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{H - pad}" stroke="black"/>',
             f'<text x="{W / 2}" y="{H - 12}" text-anchor="middle">RTF</text>',
             f'<text x="14" y="{H / 2}" transform="rotate(-90 14 {H / 2})" '
             f'text-anchor="middle">WER (%)</text>',
             f'<text x="{pad}" y="{H - pad + 14}" text-anchor="middle">{x0:.4g}</text>',
             f'<text x="{W - pad}" y="{H - pad + 14}" text-anchor="middle">{x1:.4g}</text>',
             f'<text x="{pad - 4}" y="{H - pad}" text-anchor="end">{y0:.3g}</text>',
             f'<text x="{pad - 4}" y="{pad}" text-anchor="end">{y1:.3g}</text>']
    pts = " ".join(f"{sx(x):.1f},{sy(y):.1f}" for _, x, y in sorted(points, key=lambda p: p[1]))
    parts.append(f'<polyline points="{pts}" fill="none" stroke="steelblue"/>')
    for label, x, y in points:
        parts.append(f'<circle cx="{sx(x):.1f}" cy="{sy(y):.1f}" r="3" fill="steelblue"/>')
        parts.append(f'<text x="{sx(x) + 5:.1f}" y="{sy(y) - 5:.1f}">{label}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
