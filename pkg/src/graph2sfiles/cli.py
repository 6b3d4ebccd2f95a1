"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 runtime error.
"""
from __future__ import annotations

import argparse
import itertools
import json
import math
import sys
from pathlib import Path

from . import config as rc
from .datagen import VARIANTS, generate, split
from .dataset import DatasetError, build_vocab, load_splits, prepare, write_pairs
from .encoder import ARCHS, ConfigError
from .flowgraph import GraphError, NodeDictionary
from .metrics import evaluate
from .model import Graph2Sfiles
from .numerics import CheckpointError
from .sfiles import SfilesError, canonicalize, parse
from .train import TrainingError, fit

HISTORY_FILE = "history.jsonl"
RUNTIME_ERRORS = (ConfigError, DatasetError, GraphError, SfilesError, CheckpointError, TrainingError,
                  OSError, ValueError, KeyError)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _lines(path):
    fh = sys.stdin if path in (None, "-") else open(path, encoding="utf-8")
    try:
        for line in fh:
            line = line.strip()
            if line:
                yield line
    finally:
        if fh is not sys.stdin:
            fh.close()


def _err(msg: str) -> None:
    print(msg, file=sys.stderr)


# ---------------------------------------------------------------- subcommands

def cmd_gen_data(a) -> int:
    cfg = rc.resolve(a.config, {"data.n": a.n, "data.seed": a.seed, "data.variant": a.variant,
                                "data.fractions": a.fractions})
    d = cfg.data
    pairs = generate(d.n, d.seed, d.variant)
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    for name, part in zip(("train", "val", "test"), split(pairs, d.fractions, d.seed)):
        write_pairs(out / f"{name}.tsv", part)
    cfg.save(out)
    print(f"wrote {len(pairs)} pairs to {out}")
    return 0


def _train_overrides(a) -> dict:
    return {"encoder.arch": a.arch, "encoder.layers": a.enc_layers, "decoder.layers": a.dec_layers,
            "train.epochs": a.epochs, "train.batch_size": a.batch_size, "train.learning_rate": a.lr,
            "train.seed": a.seed}


def _prepared(cfg: rc.RunConfig, data_dir):
    splits = load_splits(data_dir, cfg.data.variant)
    vocab = build_vocab([p.cef for p in splits["train"]])
    nd = NodeDictionary()
    enc = cfg.encoder
    max_len = cfg.decoder.max_len
    trx = prepare(splits["train"], vocab, nd, enc, max_len=max_len)
    vax = prepare(splits["val"], vocab, nd, enc, strict=False, max_len=max_len)
    return splits, vocab, nd, trx, vax


def _train_one(cfg: rc.RunConfig, prepared, out: Path, quiet: bool):
    _, vocab, nd, trx, vax = prepared
    model = Graph2Sfiles.initialize(cfg.model, vocab, nd, cfg.train.seed)
    out.mkdir(parents=True, exist_ok=True)
    cfg.save(out)
    log = None if quiet else (lambda r: _err(json.dumps(r, sort_keys=True)))
    hist = fit(model, trx, vax, cfg.train, log)
    model.save(out)
    (out / HISTORY_FILE).write_text(hist.to_jsonl())
    return model, hist


def cmd_train(a) -> int:
    cfg = rc.resolve(a.config, _train_overrides(a), a.preset)
    out = Path(a.out)
    _, hist = _train_one(cfg, _prepared(cfg, a.data), out, a.quiet)
    best = hist.val_loss[hist.best_epoch - 1] if hist.best_epoch > 0 else float("nan")
    print(json.dumps({"out": str(out), "epochs": len(hist), "best_epoch": hist.best_epoch,
                      "best_val_loss": best}, sort_keys=True))
    return 0


def cmd_predict(a) -> int:
    model = Graph2Sfiles.load(a.checkpoint)
    for line in _lines(a.input):
        for rank, p in enumerate(model.predict(line, a.beams, a.max_len), 1):
            print(f"{rank}\t{p.logprob:.6f}\t{p.text}")
    return 0


def cmd_eval(a) -> int:
    model = Graph2Sfiles.load(a.checkpoint)
    ckpt_dir = Path(a.checkpoint)
    ckpt_dir = ckpt_dir.parent if ckpt_dir.is_file() else ckpt_dir
    cfg_file = ckpt_dir / rc.RUN_CONFIG_FILE
    cfg = rc.resolve(cfg_file if cfg_file.exists() else None, {"decode.k": a.beams, "decode.max_len": a.max_len})
    splits = load_splits(a.data, cfg.data.variant)
    report = evaluate(model, splits[a.split], cfg.decode.k, cfg.decode.max_len, train_pairs=splits["train"],
                      windows=a.windows)
    out = Path(a.out) if a.out else ckpt_dir / f"eval_{a.split}"
    out.mkdir(parents=True, exist_ok=True)
    cfg.save(out)
    with open(out / "samples.jsonl", "w", encoding="utf-8") as fh:
        for s in report.samples:
            fh.write(json.dumps(s, sort_keys=True) + "\n")
    summary = json.dumps(report.summary(), sort_keys=True)
    (out / "report.json").write_text(summary + "\n")
    print(summary)
    return 0


def cmd_canonicalize(a) -> int:
    status = 0
    for i, line in enumerate(_lines(a.input), 1):
        try:
            print(canonicalize(line))
        except (SfilesError, GraphError) as e:
            _err(f"line {i}: {e}")
            print()
            status = 2
    return status


def cmd_to_graph(a) -> int:
    status = 0
    for i, line in enumerate(_lines(a.input), 1):
        try:
            print(parse(line).to_json())
        except (SfilesError, GraphError) as e:
            _err(f"line {i}: {e}")
            print("null")
            status = 2
    return status


def cmd_grid(a) -> int:
    base = rc.resolve(a.config, {"train.epochs": a.epochs, "train.seed": a.seed, "encoder.arch": a.arch},
                      a.preset)
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    prepared = _prepared(base, a.data)
    results = []
    with open(out / "grid.jsonl", "w", encoding="utf-8") as fh:
        for bs, lr, el, dl in itertools.product(a.batch_sizes, a.lrs, a.enc_layers, a.dec_layers):
            cfg = rc.merge(base, {"train.batch_size": bs, "train.learning_rate": lr,
                                  "encoder.layers": el, "decoder.layers": dl})
            name = f"bs{bs}_lr{lr:g}_enc{el}_dec{dl}"
            _, hist = _train_one(cfg, prepared, out / name, True)
            best = min(hist.val_loss) if len(hist) else math.inf
            rec = {"run": name, "batch_size": bs, "learning_rate": lr, "encoder_layers": el,
                   "decoder_layers": dl, "best_val_loss": best, "best_epoch": hist.best_epoch}
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
            fh.flush()
            _err(json.dumps(rec, sort_keys=True))
            results.append(rec)
    winner = min(results, key=lambda r: (r["best_val_loss"], r["run"]))
    (out / "best.json").write_text(json.dumps(winner, sort_keys=True) + "\n")
    print(json.dumps(winner, sort_keys=True))
    return 0


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="graph2sfiles", description="Predict control structures for process flow diagrams.")
    sub = p.add_subparsers(dest="command", parser_class=_Parser, required=True)

    g = sub.add_parser("gen-data", help="generate PFD/CEF pairs and split them")
    g.add_argument("--n", type=int)
    g.add_argument("--seed", type=int)
    g.add_argument("--variant", choices=VARIANTS)
    g.add_argument("--fractions", type=float, nargs=3, metavar=("TRAIN", "VAL", "TEST"))
    g.add_argument("--config")
    g.add_argument("--out", required=True)
    g.set_defaults(fn=cmd_gen_data)

    def model_flags(s):
        s.add_argument("--config", help="JSON run configuration")
        s.add_argument("--preset", choices=rc.PRESETS, default="desk")
        s.add_argument("--arch", choices=ARCHS)
        s.add_argument("--epochs", type=int)
        s.add_argument("--seed", type=int)
        s.add_argument("--data", required=True)
        s.add_argument("--out", required=True)

    t = sub.add_parser("train", help="train a model")
    model_flags(t)
    t.add_argument("--enc-layers", type=int)
    t.add_argument("--dec-layers", type=int)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--quiet", action="store_true")
    t.set_defaults(fn=cmd_train)

    pr = sub.add_parser("predict", help="rank CEF predictions for PFD strings")
    pr.add_argument("--checkpoint", required=True)
    pr.add_argument("--beams", type=int, default=5)
    pr.add_argument("--max-len", type=int)
    pr.add_argument("input", nargs="?", help="file with one PFD per line (default: stdin)")
    pr.set_defaults(fn=cmd_predict)

    e = sub.add_parser("eval", help="score a model on a data split")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--split", choices=("train", "val", "test"), default="test")
    e.add_argument("--beams", type=int)
    e.add_argument("--max-len", type=int)
    e.add_argument("--windows", action="store_true", help="score segments as fixed 10-token windows")
    e.add_argument("--out")
    e.set_defaults(fn=cmd_eval)

    for name, fn, text in (("canonicalize", cmd_canonicalize, "rewrite SFILES in canonical form"),
                           ("to-graph", cmd_to_graph, "print SFILES as JSON graph records")):
        c = sub.add_parser(name, help=text)
        c.add_argument("input", nargs="?", help="file with one SFILES per line (default: stdin)")
        c.set_defaults(fn=fn)

    gr = sub.add_parser("grid", help="grid search over batch size, learning rate and depths")
    model_flags(gr)
    gr.add_argument("--batch-sizes", type=int, nargs="+", default=[64, 128])
    gr.add_argument("--lrs", type=float, nargs="+", default=[5e-4, 1e-3, 1.5e-3, 2e-3])
    gr.add_argument("--enc-layers", type=int, nargs="+", default=[2, 4, 6])
    gr.add_argument("--dec-layers", type=int, nargs="+", default=[2, 4, 6])
    gr.set_defaults(fn=cmd_grid)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as e:
        _err(str(e))
        return 1
    except SystemExit as e:  # --help
        return 0 if e.code in (0, None) else 1
    try:
        return args.fn(args)
    except RUNTIME_ERRORS as e:
        _err(f"error: {e}")
        return 2


if __name__ == "__main__":
    sys.exit(main())
