"""Command-line front end: ``amdecode {gen,train,decode,bench,analyze,sig}``.

Every run writes into its own directory (``--out``, default
``$AMDECODE_OUT/<command>``, falling back to ``./runs/<command>``) and
leaves the merged effective configuration there as ``config.json``.
Wall-clock figures go to ``timing.json`` so the remaining artifacts are
byte-identical across reruns with the same config and seed.

Exit codes:
    0  success
    2  invalid configuration or arguments
    3  missing input file
    4  malformed input file
    5  training diverged
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import multiprocessing as mp
import os
import sys
import time
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import torch

from . import formats
from .core import (
    BlockScheduleSpec,
    ConfigError,
    EncoderOutput,
    FusionWeights,
    SearchConfig,
    TrainWeights,
    Vocab,
)
from .formats import FormatError
from .metrics import EvalReport, MetricError, evaluate, mapsswe, rtf, speedup, tradeoff_svg
from .model import ModelHParams, init_params
from .search import decode
from .synth import SPLITS, SyntheticTaskSpec, Utterance, generate
from .train import TrainConfig, TrainingDiverged, train

logger = logging.getLogger("amdecode")

EXIT_OK, EXIT_CONFIG, EXIT_MISSING, EXIT_FORMAT, EXIT_DIVERGED = 0, 2, 3, 4, 5
OUT_ENV = "AMDECODE_OUT"
BENCH_SCHEDULES = ("1", "2", "4", "8", "16", "1-8-4", "1-8-8")


class MissingInput(FileNotFoundError):
    pass


# ---------------------------------------------------------------------------
# configuration

@dataclasses.dataclass(frozen=True)
class SearchSection:
    method: str = "tripartite"
    k_main: int = 1
    k1: int = 2
    k2: int = 2
    l_max: int = 64
    weights: str = "0.3:0.6:0.1"
    schedule: str = "1"
    length_norm: bool = False

    def to_search_config(self) -> SearchConfig:
        if self.method not in ("baseline", "tripartite"):
            raise ConfigError(f"method must be 'baseline' or 'tripartite', got {self.method!r}")
        w = FusionWeights.parse(self.weights)
        if self.method == "baseline" and w.lambda3 != 0:
            raise ConfigError("baseline decoding needs two weights 'l1:l2' (lambda3 = 0)")
        return SearchConfig(self.k_main, self.k1, self.k2, self.l_max, w,
                            BlockScheduleSpec.parse(self.schedule), self.length_norm)


@dataclasses.dataclass(frozen=True)
class TrainSection:
    steps_ctc_ar: int = 3000
    steps_amd: int = 1500
    batch_size: int = 16
    amd_batch_size: int = 8
    lr: float = 0.0025
    gamma1: float = 0.3
    gamma2: float = 0.7
    sampling: str = "uni"
    lora_rank: int = 4

    def to_train_config(self, seed: int) -> TrainConfig:
        if self.sampling not in ("uni", "var"):
            raise ConfigError(f"sampling must be 'uni' or 'var', got {self.sampling!r}")
        for name in ("steps_ctc_ar", "steps_amd"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if self.batch_size < 1 or self.amd_batch_size < 1 or not self.lr > 0:
            raise ConfigError("batch sizes must be >= 1 and lr > 0")
        return TrainConfig(self.steps_ctc_ar, self.steps_amd, self.batch_size,
                           self.amd_batch_size, self.lr, TrainWeights(self.gamma1, self.gamma2),
                           self.sampling, seed, log_every=0)


@dataclasses.dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    workers: int = 1
    data: SyntheticTaskSpec = dataclasses.field(default_factory=SyntheticTaskSpec)
    train: TrainSection = dataclasses.field(default_factory=TrainSection)
    search: SearchSection = dataclasses.field(default_factory=SearchSection)

    def __post_init__(self):
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        # fail early on anything that would only surface mid-run
        self.search.to_search_config()
        self.train.to_train_config(self.seed)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _section(cls, raw: dict, where: str):
    if not isinstance(raw, dict):
        raise ConfigError(f"config section {where!r} must be an object")
    names = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(raw) - set(names)
    if unknown:
        raise ConfigError(f"unknown keys in {where!r}: {sorted(unknown)}")
    for k, v in raw.items():
        want = type(getattr(cls(), k))
        ok = isinstance(v, want) or (want is float and isinstance(v, int))
        if not ok or (want is int and isinstance(v, bool)):
            raise ConfigError(f"{where}.{k} must be {want.__name__}, got {v!r}")
    try:
        return cls(**raw)
    except TypeError as e:
        raise ConfigError(str(e)) from None


def load_config(path: Optional[str]) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.is_file():
        raise MissingInput(f"config file not found: {path}")
    try:
        raw = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ConfigError(f"config {path} is not valid JSON: {e}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config root must be an object")
    return raw


def build_config(args) -> RunConfig:
    """Config file values, then command-line overrides, validated as a whole."""
    raw = load_config(getattr(args, "config", None))
    unknown = set(raw) - {"seed", "workers", "data", "train", "search"}
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    data = dict(raw.get("data", {}))
    tr = dict(raw.get("train", {}))
    se = dict(raw.get("search", {}))
    seed = raw.get("seed", 0)
    workers = raw.get("workers", 1)
    if getattr(args, "seed", None) is not None:
        seed = args.seed
    if getattr(args, "workers", None) is not None:
        workers = args.workers
    for flag, key in (("kmain", "k_main"), ("k1", "k1"), ("k2", "k2"), ("l_max", "l_max"),
                      ("weights", "weights"), ("schedule", "schedule"), ("method", "method")):
        v = getattr(args, flag, None)
        if v is not None:
            se[key] = v
    for flag, key in (("steps_ctc_ar", "steps_ctc_ar"), ("steps_amd", "steps_amd")):
        v = getattr(args, flag, None)
        if v is not None:
            tr[key] = v
    if getattr(args, "num_utts", None) is not None:
        data["n_train"] = data["n_dev"] = data["n_test"] = args.num_utts
    if getattr(args, "command", None) == "gen" and getattr(args, "seed", None) is not None:
        data["seed"] = args.seed
    if not isinstance(seed, int) or not isinstance(workers, int):
        raise ConfigError("seed and workers must be integers")
    return RunConfig(seed, workers, _section(SyntheticTaskSpec, data, "data"),
                     _section(TrainSection, tr, "train"), _section(SearchSection, se, "search"))


def out_dir(args) -> Path:
    if args.out:
        return Path(args.out)
    return Path(os.environ.get(OUT_ENV, "runs")) / args.command


def _json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def write_config(out: Path, cfg: RunConfig, extra: Optional[dict] = None):
    d = cfg.to_dict()
    if extra:
        d["inputs"] = extra
    formats.atomic_write(out / "config.json", _json(d))


# ---------------------------------------------------------------------------
# corpus on disk

def save_corpus(root: Path, corpus, spec: SyntheticTaskSpec):
    formats.save_vocab(root / "vocab.txt", corpus.vocab)
    for split in SPLITS:
        utts = corpus[split]
        refs = {u.id: corpus.vocab.decode(u.ref) for u in utts}
        formats.save_refs(root / split / "refs.txt", refs)
        for u in utts:
            formats.save_features(root / split / "feats" / f"{u.id}.amdf", u.enc.frames)
    formats.atomic_write(root / "spec.json", _json(spec.to_dict()))


def _need(path: Path) -> Path:
    if not path.exists():
        raise MissingInput(f"missing input: {path}")
    return path


def load_split(root: Path, split: str):
    """``(vocab, utterances)`` of one split, ordered by utterance id."""
    root = Path(root)
    vocab = formats.load_vocab(_need(root / "vocab.txt"))
    spec = json.loads(_need(root / "spec.json").read_text(encoding="utf-8"))
    refs = formats.load_refs(_need(root / split / "refs.txt"))
    utts = []
    for uid in sorted(refs):
        try:
            ref = vocab.encode(refs[uid])
        except (KeyError, ValueError) as e:
            raise FormatError(f"utterance {uid}: unknown token {e}") from None
        frames = formats.load_features(_need(root / split / "feats" / f"{uid}.amdf"))
        utts.append(Utterance(uid, ref, EncoderOutput(frames, spec["frame_period_s"])))
    return vocab, utts


# ---------------------------------------------------------------------------
# decoding workers

_WORKER = {}


def _init_worker(ckpt_path: str, search_cfg: SearchConfig, method: str):
    torch.set_num_threads(1)
    _WORKER["P"] = formats.load_checkpoint(ckpt_path)
    _WORKER["cfg"] = search_cfg
    _WORKER["method"] = method


def _decode_one(item):
    uid, frames, period = item
    r = decode(_WORKER["P"], EncoderOutput(frames, period), _WORKER["cfg"], _WORKER["method"])
    return uid, r


def decode_utterances(ckpt_path, utts: Sequence[Utterance], cfg: SearchConfig, method: str,
                      workers: int = 1):
    """Decode in parallel; results come back ordered by utterance id."""
    items = [(u.id, u.enc.frames, u.enc.frame_period_s) for u in sorted(utts, key=lambda u: u.id)]
    if workers == 1:
        _init_worker(str(ckpt_path), cfg, method)
        return [_decode_one(it) for it in items]
    ctx = mp.get_context("fork")
    with ctx.Pool(workers, _init_worker, (str(ckpt_path), cfg, method)) as pool:
        out = pool.map(_decode_one, items, chunksize=max(1, len(items) // (4 * workers)))
    return sorted(out, key=lambda x: x[0])


def nbest_record(uid: int, result, vocab: Vocab) -> dict:
    hyps = []
    for e in result.nbest:
        h = e.hyp
        hyps.append({"tokens": [vocab.tokens[t] for t in h.tokens], "alpha_ctc": h.alpha_ctc,
                     "alpha_ar": h.alpha_ar, "alpha_amd": h.alpha_amd, "score": e.score,
                     "finished": h.finished})
    return {"utt_id": uid, "hyps": hyps, "calls": result.stats.as_dict(), "wall_s": None}


def _record_labels(rec: dict, vocab: Vocab) -> List[List[str]]:
    eos = vocab.tokens[vocab.eos_id]
    return [[t for t in h["tokens"] if t != eos] for h in rec["hyps"]]


# ---------------------------------------------------------------------------
# commands

def cmd_gen(args) -> int:
    cfg = build_config(args)
    out = out_dir(args)
    corpus = generate(cfg.data)
    save_corpus(out, corpus, cfg.data)
    write_config(out, cfg)
    print(f"wrote corpus to {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = build_config(args)
    out = out_dir(args)
    vocab, utts = load_split(Path(args.corpus), "train")
    if not utts:
        raise ConfigError("training split is empty")
    feat_dim = utts[0].enc.dim
    hp = ModelHParams.for_vocab(vocab, feat_dim, rank=cfg.train.lora_rank)
    tcfg = cfg.train.to_train_config(cfg.seed)
    t0 = time.perf_counter()
    P, trace = train(init_params(hp, cfg.seed), utts, tcfg)
    wall = time.perf_counter() - t0
    formats.save_checkpoint(out / "model.amdp", P)
    formats.atomic_write(out / "trace.jsonl", "".join(json.dumps(t) + "\n" for t in trace))
    write_config(out, cfg, {"corpus": str(args.corpus)})
    formats.atomic_write(out / "timing.json", _json({"train_wall_s": wall}))
    print(f"trained in {wall:.1f} s; checkpoint {out / 'model.amdp'}")
    return EXIT_OK


def _limit(utts, n):
    return utts if n is None else utts[:n]


def cmd_decode(args) -> int:
    cfg = build_config(args)
    out = out_dir(args)
    scfg = cfg.search.to_search_config()
    ckpt = _need(Path(args.ckpt))
    formats.load_checkpoint(ckpt)  # validate before fanning out
    vocab, utts = load_split(Path(args.corpus), args.split)
    utts = _limit(utts, args.limit)
    t0 = time.perf_counter()
    results = decode_utterances(ckpt, utts, scfg, cfg.search.method, cfg.workers)
    wall = time.perf_counter() - t0
    formats.save_nbest(out / "nbest.jsonl", [nbest_record(uid, r, vocab) for uid, r in results])
    audio = sum(u.enc.audio_duration for u in utts)
    per_utt = {str(uid): r.stats.wall_s for uid, r in results}
    decode_s = sum(per_utt.values())
    timing = {"wall_s": wall, "decode_s": decode_s, "audio_s": audio,
              "rtf": rtf(decode_s, audio) if audio > 0 else None, "per_utt_s": per_utt}
    formats.atomic_write(out / "timing.json", _json(timing))
    write_config(out, cfg, {"corpus": str(args.corpus), "split": args.split,
                            "ckpt": str(args.ckpt), "limit": args.limit})
    print(f"decoded {len(utts)} utterances -> {out / 'nbest.jsonl'}")
    return EXIT_OK


def analyze_records(records: List[dict], vocab: Vocab, refs: Dict[int, Sequence[str]],
                    rtf_value: Optional[float] = None) -> EvalReport:
    ids = [r["utt_id"] for r in records]
    missing = [i for i in ids if i not in refs]
    if missing:
        raise FormatError(f"n-best utterances without references: {missing[:5]}")
    nbests = [_record_labels(r, vocab) for r in records]
    return evaluate(ids, [list(refs[i]) for i in ids], nbests, rtf_value)


def cmd_analyze(args) -> int:
    out = out_dir(args)
    records = formats.load_nbest(_need(Path(args.nbest)))
    vocab = formats.load_vocab(_need(Path(args.vocab)))
    refs = formats.load_refs(_need(Path(args.refs)))
    rtf_value = None
    if args.timing:
        rtf_value = json.loads(_need(Path(args.timing)).read_text(encoding="utf-8")).get("rtf")
    report = analyze_records(records, vocab, refs, rtf_value)
    formats.atomic_write(out / "report.json", _json(report.to_dict()))
    formats.atomic_write(out / "config.json", _json({"nbest": args.nbest, "refs": args.refs,
                                                     "vocab": args.vocab, "timing": args.timing}))
    print(f"WER {report.wer:.2f}%  oracle WER {report.oracle_wer:.2f}%  "
          f"lattice density {report.lattice_density:.3f}")
    return EXIT_OK


def _load_report(path) -> EvalReport:
    try:
        return EvalReport.from_dict(json.loads(_need(Path(path)).read_text(encoding="utf-8")))
    except (json.JSONDecodeError, KeyError, TypeError) as e:
        raise FormatError(f"bad report {path}: {e}") from None


def cmd_sig(args) -> int:
    out = out_dir(args)
    a, b = _load_report(args.report_a), _load_report(args.report_b)
    ea = dict(zip(a.utt_ids, a.segment_errors))
    eb = dict(zip(b.utt_ids, b.segment_errors))
    if set(ea) != set(eb):
        raise FormatError("reports cover different utterances")
    ids = sorted(ea)
    res = mapsswe([ea[i] for i in ids], [eb[i] for i in ids])
    verdict = {"z": res.z if abs(res.z) != float("inf") else str(res.z),
               "significant": res.significant, "n": res.n, "mean_diff": res.mean_diff,
               "alpha": 0.05}
    formats.atomic_write(out / "sig.json", _json(verdict))
    print(f"MAPSSWE z = {res.z:.4f} over {res.n} segments: "
          f"{'significant' if res.significant else 'not significant'} at alpha = 0.05")
    return EXIT_OK


def cmd_bench(args) -> int:
    cfg = build_config(args)
    out = out_dir(args)
    ckpt = _need(Path(args.ckpt))
    formats.load_checkpoint(ckpt)
    vocab, utts = load_split(Path(args.corpus), args.split)
    utts = _limit(utts, args.limit)
    refs = {u.id: vocab.decode(u.ref) for u in utts}
    audio = sum(u.enc.audio_duration for u in utts)
    base = cfg.search
    w = FusionWeights.parse(base.weights)
    runs = [("baseline", dataclasses.replace(base, method="baseline",
                                             weights=f"{w.lambda1}:{w.lambda2}"))]
    for s in args.schedules.split(","):
        runs.append((s, dataclasses.replace(base, method="tripartite", schedule=s)))
    rows, timing = [], {}
    for label, sec in runs:
        results = decode_utterances(ckpt, utts, sec.to_search_config(), sec.method, cfg.workers)
        records = [nbest_record(uid, r, vocab) for uid, r in results]
        rep = analyze_records(records, vocab, refs)
        calls = {k: sum(r.stats.as_dict()[k] for _, r in results)
                 for k in ("amd_calls", "ar_calls", "ctc_extensions")}
        rows.append({"system": label, "wer": rep.wer, "oracle_wer": rep.oracle_wer, **calls})
        timing[label] = rtf(sum(r.stats.wall_s for _, r in results), audio)
    base_rtf = timing["baseline"]
    formats.atomic_write(out / "bench.json", _json({"rows": rows}))
    formats.atomic_write(out / "timing.json", _json(
        {"rtf": timing, "speedup": {k: speedup(base_rtf, v) for k, v in timing.items()}}))
    lines = ["system\twer\trtf\tspeedup\tamd_calls\tar_calls\tctc_extensions"]
    for r in rows:
        t = timing[r["system"]]
        lines.append(f"{r['system']}\t{r['wer']:.2f}\t{t:.4f}\t{speedup(base_rtf, t):.2f}\t"
                     f"{r['amd_calls']}\t{r['ar_calls']}\t{r['ctc_extensions']}")
    table = "\n".join(lines) + "\n"
    formats.atomic_write(out / "tradeoff.tsv", table)
    formats.atomic_write(out / "tradeoff.svg", tradeoff_svg(
        [(r["system"], timing[r["system"]], r["wer"]) for r in rows]))
    write_config(out, cfg, {"corpus": str(args.corpus), "split": args.split,
                            "ckpt": str(args.ckpt), "limit": args.limit,
                            "schedules": args.schedules})
    print(table, end="")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing

def _common(p: argparse.ArgumentParser, search: bool = False):
    p.add_argument("--config", help="JSON config file (sections: data, train, search)")
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--out", help=f"output directory (default ${OUT_ENV}/<command>)")
    if search:
        p.add_argument("--method", choices=("baseline", "tripartite"))
        p.add_argument("--schedule", help='block schedule: "B" or "1-N-B"')
        p.add_argument("--kmain", type=int)
        p.add_argument("--k1", type=int)
        p.add_argument("--k2", type=int)
        p.add_argument("--l-max", dest="l_max", type=int)
        p.add_argument("--weights", help='fusion weights "l1:l2:l3" (or "l1:l2" for baseline)')
        p.add_argument("--corpus", required=True)
        p.add_argument("--split", default="test", choices=SPLITS)
        p.add_argument("--ckpt", required=True)
        p.add_argument("--limit", type=int, help="decode only the first N utterances")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="amdecode", description=__doc__.split("\n")[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic corpus")
    _common(p)
    p.add_argument("--num-utts", dest="num_utts", type=int, help="utterances per split")

    p = sub.add_parser("train", help="staged CTC+AR then AMD training")
    _common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--steps-ctc-ar", dest="steps_ctc_ar", type=int)
    p.add_argument("--steps-amd", dest="steps_amd", type=int)

    p = sub.add_parser("decode", help="decode a split to n-best lists")
    _common(p, search=True)

    p = sub.add_parser("bench", help="WER / RTF / call-count sweep over block schedules")
    _common(p, search=True)
    p.add_argument("--schedules", default=",".join(BENCH_SCHEDULES))

    p = sub.add_parser("analyze", help="WER, oracle WER and lattice density of n-best lists")
    p.add_argument("--nbest", required=True)
    p.add_argument("--refs", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--timing", help="timing.json of the decode run, for RTF")
    p.add_argument("--out")

    p = sub.add_parser("sig", help="MAPSSWE test between two analyze reports")
    p.add_argument("report_a")
    p.add_argument("report_b")
    p.add_argument("--out")
    return ap


COMMANDS = {"gen": cmd_gen, "train": cmd_train, "decode": cmd_decode, "bench": cmd_bench,
            "analyze": cmd_analyze, "sig": cmd_sig}


def main(argv: Optional[Sequence[str]] = None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    torch.set_num_threads(1)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (MissingInput, FileNotFoundError) as e:
        print(f"missing input: {e}", file=sys.stderr)
        return EXIT_MISSING
    except (FormatError, MetricError) as e:
        print(f"format error: {e}", file=sys.stderr)
        return EXIT_FORMAT
    except TrainingDiverged as e:
        print(f"training diverged: {e}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
