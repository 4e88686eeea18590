"""Command-line interface.

Subcommands: ingest, synth, split, train, eval, ablate, explain. Settings come
from flags, then an optional JSON ``--config`` file, then the built-in
defaults (n_layers=3, h=8, d=128, lr=0.001, batch 64, top-300).

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from dataclasses import asdict
from typing import Optional

import numpy as np

from . import baselines, checkpoint
from .data import (
    TOP_N,
    DataError,
    Dataset,
    SynthConfig,
    build_dataset,
    load_dataset,
    parse_qrels,
    parse_trec_run,
    save_dataset,
    split_train_test,
    synth_generate,
)
from .metrics import METRIC_KINDS
from .model import ModelConfig, predict_many
from .train import NumericError, TrainConfig, train

logger = logging.getLogger("choppy")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

DEFAULTS = {
    "metric": "f1",
    "top_n": TOP_N,
    "d": 128,
    "heads": 8,
    "layers": 3,
    "lr": 0.001,
    "batch_size": 64,
    "epochs": 100,
    "seed": 0,
    "standardize_scores": False,
    "fraction": 0.8,
    "val_fraction": 0.0,
    "grid_d": "16,32,64,128",
    "grid_h": "1,2,4,8",
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

def _resolve(args: argparse.Namespace) -> argparse.Namespace:
    """Fill unset flags from --config, then from DEFAULTS."""
    file_cfg = {}
    if getattr(args, "config", None):
        path = args.config
        if not os.path.exists(path):
            raise UsageError(f"config file not found: {path}")
        with open(path, encoding="utf-8") as fh:
            try:
                file_cfg = json.load(fh)
            except json.JSONDecodeError as exc:
                raise UsageError(f"{path}: invalid JSON: {exc}") from exc
        file_cfg = {k.replace("-", "_"): v for k, v in file_cfg.items()}
    for key, default in DEFAULTS.items():
        if hasattr(args, key) and getattr(args, key) is None:
            setattr(args, key, file_cfg.get(key, default))
    return args


def _need_file(path: Optional[str], flag: str) -> str:
    if not path:
        raise UsageError(f"{flag} is required")
    if not os.path.exists(path):
        raise FileNotFoundError(f"{flag}: no such file: {path}")
    return path


def _out_dir(args) -> str:
    if not args.out:
        raise UsageError("--out is required")
    os.makedirs(args.out, exist_ok=True)
    return args.out


def _model_config(args, n: int) -> ModelConfig:
    try:
        return ModelConfig(n=n, d=args.d, h=args.heads, n_layers=args.layers,
                           seed=args.seed, standardize_scores=bool(args.standardize_scores))
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _train_config(args) -> TrainConfig:
    try:
        return TrainConfig(learning_rate=args.lr, batch_size=args.batch_size,
                           epochs=args.epochs, seed=args.seed, metric=args.metric,
                           val_fraction=args.val_fraction)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _load(path: str, flag: str = "--dataset") -> Dataset:
    return load_dataset(_need_file(path, flag))


def _write_jsonl(path: str, rows) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row) + "\n")


def _summary(ds: Dataset) -> dict:
    rel = [ex.n_relevant for ex in ds]
    return {
        "queries": len(ds),
        "mean_relevant": float(np.mean(rel)),
        "mean_length": float(np.mean([len(ex) for ex in ds])),
    }


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_ingest(args) -> int:
    run = parse_trec_run(_need_file(args.run, "--run"))
    qrels = parse_qrels(_need_file(args.qrels, "--qrels"))
    ds = build_dataset(run, qrels, top_n=args.top_n, qrels_recall=args.qrels_recall)
    out = _out_dir(args)
    save_dataset(ds, os.path.join(out, "dataset.jsonl"))
    summary = _summary(ds)
    with open(os.path.join(out, "summary.json"), "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2)
    print(f"ingested {summary['queries']} queries, "
          f"mean relevant per query {summary['mean_relevant']:.2f}")
    return EXIT_OK


def cmd_synth(args) -> int:
    try:
        cfg = SynthConfig(n_queries=args.queries, list_length=args.top_n,
                          rel_loc=args.rel_loc, rel_spread=args.rel_spread,
                          nonrel_loc=args.nonrel_loc, nonrel_spread=args.nonrel_spread,
                          min_relevant=args.min_relevant, max_relevant=args.max_relevant,
                          seed=args.seed, id_prefix=args.id_prefix)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    ds = synth_generate(cfg)
    out = _out_dir(args)
    save_dataset(ds, os.path.join(out, "dataset.jsonl"))
    with open(os.path.join(out, "summary.json"), "w", encoding="utf-8") as fh:
        json.dump({**_summary(ds), "config": asdict(cfg)}, fh, indent=2)
    print(f"generated {len(ds)} synthetic queries")
    return EXIT_OK


def cmd_split(args) -> int:
    ds = _load(args.dataset)
    try:
        train_ds, test_ds = split_train_test(ds, args.fraction, args.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    out = _out_dir(args)
    save_dataset(train_ds, os.path.join(out, "train.jsonl"))
    save_dataset(test_ds, os.path.join(out, "test.jsonl"))
    print(f"split {len(ds)} queries into {len(train_ds)} train / {len(test_ds)} test")
    return EXIT_OK


def _max_len(*datasets) -> int:
    return max(len(ex) for ds in datasets if ds is not None for ex in ds)


def _fit(train_ds: Dataset, args, n: int, log_path: Optional[str] = None):
    mcfg = _model_config(args, n)
    tcfg = _train_config(args)
    fh = open(log_path, "w", encoding="utf-8") if log_path else None
    try:
        def on_epoch(rec):
            if fh:
                fh.write(rec.to_json() + "\n")
                fh.flush()
        result = train(train_ds.examples, mcfg, tcfg, on_epoch=on_epoch)
    finally:
        if fh:
            fh.close()
    return mcfg, result


def cmd_train(args) -> int:
    ds = _load(args.dataset)
    n = args.top_n
    if _max_len(ds) > n:
        raise UsageError(f"dataset has lists longer than --top-n {n}")
    out = _out_dir(args)
    t0 = time.time()
    mcfg, result = _fit(ds, args, n, os.path.join(out, "train_log.jsonl"))
    ckpt = args.checkpoint or os.path.join(out, "model.ckpt")
    checkpoint.save(ckpt, mcfg, result.params)
    last = result.log[-1]
    print(f"trained {result.steps} steps in {time.time() - t0:.1f}s; "
          f"final loss {last.loss:.6f}, train {args.metric} {last.train_metric:.4f}; "
          f"checkpoint {ckpt}")
    return EXIT_OK


def _check_against(mcfg: ModelConfig, args, ds: Dataset) -> None:
    """Reject explicit flags that contradict the checkpoint."""
    pairs = [("--d", args.d_flag, mcfg.d), ("--heads", args.heads_flag, mcfg.h),
             ("--layers", args.layers_flag, mcfg.n_layers), ("--top-n", args.top_n_flag, mcfg.n)]
    for flag, given, actual in pairs:
        if given is not None and given != actual:
            raise UsageError(f"checkpoint has {flag.lstrip('-')}={actual} but {flag} {given} was given")
    if _max_len(ds) > mcfg.n:
        raise UsageError(f"dataset has lists longer than the checkpoint's n={mcfg.n}")


def _baseline_report(choice: str, ds: Dataset, train_ds: Optional[Dataset], metric: str):
    if choice == "oracle":
        return baselines.oracle_eval(ds, metric)
    if choice == "greedy":
        if train_ds is None:
            raise UsageError("--baseline greedy needs --train-dataset")
        return baselines.greedy_eval(train_ds, ds, metric)
    if choice.startswith("fixed:"):
        try:
            k = int(choice.split(":", 1)[1])
        except ValueError:
            raise UsageError(f"bad baseline {choice!r}; use fixed:K") from None
        if k < 1:
            raise UsageError("fixed-k needs k >= 1")
        return baselines.fixed_k_eval(k, ds, metric)
    raise UsageError(f"unknown baseline {choice!r}; use fixed:K, greedy or oracle")


def cmd_eval(args) -> int:
    ds = _load(args.dataset)
    train_ds = _load(args.train_dataset, "--train-dataset") if args.train_dataset else None
    if not args.checkpoint and not args.baseline:
        raise UsageError("give --checkpoint and/or --baseline")
    reports = []
    for choice in args.baseline or []:
        if choice == "table":
            for k in (5, 10, 50):
                reports.append(baselines.fixed_k_eval(k, ds, args.metric))
            if train_ds is not None:
                reports.append(baselines.greedy_eval(train_ds, ds, args.metric))
            reports.append(baselines.oracle_eval(ds, args.metric))
        else:
            reports.append(_baseline_report(choice, ds, train_ds, args.metric))
    if args.checkpoint:
        mcfg, params = checkpoint.load(_need_file(args.checkpoint, "--checkpoint"))
        _check_against(mcfg, args, ds)
        reports.append(baselines.model_eval(ds, mcfg, params, args.metric))
    table = baselines.format_table(reports)
    for r in reports:
        if r.policy == "Greedy-k":
            table += f"Greedy-k chose k={r.chosen_k}\n"
    print(table, end="")
    if args.out:
        out = _out_dir(args)
        with open(os.path.join(out, "report.txt"), "w", encoding="utf-8") as fh:
            fh.write(table)
        with open(os.path.join(out, "report.jsonl"), "w", encoding="utf-8") as fh:
            for r in reports:
                fh.write(r.to_jsonl())
    return EXIT_OK


def cmd_ablate(args) -> int:
    train_ds = _load(args.dataset)
    test_ds = _load(args.test_dataset, "--test-dataset") if args.test_dataset else None
    try:
        grid_d = [int(x) for x in str(args.grid_d).split(",")]
        grid_h = [int(x) for x in str(args.grid_h).split(",")]
    except ValueError:
        raise UsageError("--grid-d/--grid-h take comma-separated integers") from None
    out = _out_dir(args)
    n = args.top_n
    eval_ds = test_ds or train_ds
    oracle = baselines.oracle_eval(eval_ds, args.metric).mean
    rows = []
    for d in grid_d:
        for h in grid_h:
            cell = argparse.Namespace(**{**vars(args), "d": d, "heads": h})
            t0 = time.time()
            mcfg, result = _fit(train_ds, cell, n)
            value = baselines.model_eval(eval_ds, mcfg, result.params, args.metric).mean
            row = {"d": d, "h": h, "metric": args.metric, "value": value,
                   "oracle": oracle, "seconds": time.time() - t0}
            rows.append(row)
            print(f"d={d:<4d} h={h:<2d} {args.metric}={value:.4f}", flush=True)
    _write_jsonl(os.path.join(out, "ablation.jsonl"), rows)
    return EXIT_OK


def cmd_explain(args) -> int:
    ds = _load(args.dataset)
    mcfg, params = checkpoint.load(_need_file(args.checkpoint, "--checkpoint"))
    _check_against(mcfg, args, ds)
    wanted = [q for q in (args.query_ids or "").split(",") if q]
    if not wanted:
        raise UsageError("--query-ids is required")
    known = set(ds.query_ids())
    unknown = [q for q in wanted if q not in known]
    if unknown:
        raise DataError(f"unknown query ids {unknown}; available: {sorted(known)}")
    examples = [ds.by_id(q) for q in wanted]
    dists = predict_many([ex.scores for ex in examples], mcfg, params)
    rows = []
    for ex, dist in zip(examples, dists):
        c = ex.metric(args.metric)
        k = dist.argmax()
        for i in range(len(ex)):
            rows.append({"query_id": ex.query_id, "position": i + 1, "C": float(c[i]),
                         "o": float(dist.o[i]), "argmax": k})
    out = _out_dir(args)
    _write_jsonl(os.path.join(out, "explain.jsonl"), rows)
    for ex, dist in zip(examples, dists):
        print(f"{ex.query_id}: cut at {dist.argmax()} of {len(ex)}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="choppy", description="Ranked list truncation with a cut transformer.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, model=False, training=False):
        sp.add_argument("--config", help="JSON file of default settings")
        sp.add_argument("--out")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--metric", choices=METRIC_KINDS)
        sp.add_argument("--top-n", dest="top_n", type=int)
        if model:
            sp.add_argument("--d", type=int)
            sp.add_argument("--heads", type=int)
            sp.add_argument("--layers", type=int)
            sp.add_argument("--standardize-scores", dest="standardize_scores",
                            action="store_true", default=None)
        if training:
            sp.add_argument("--lr", type=float)
            sp.add_argument("--batch-size", dest="batch_size", type=int)
            sp.add_argument("--epochs", type=int)
            sp.add_argument("--val-fraction", dest="val_fraction", type=float)

    sp = sub.add_parser("ingest", help="build a dataset cache from TREC run + qrels")
    common(sp)
    sp.add_argument("--run")
    sp.add_argument("--qrels")
    sp.add_argument("--qrels-recall", action="store_true",
                    help="F1 recall against all relevant judgments of the query")
    sp.set_defaults(func=cmd_ingest)

    sp = sub.add_parser("synth", help="generate a two-Gaussian synthetic dataset")
    common(sp)
    sp.add_argument("--queries", type=int, default=100)
    sp.add_argument("--rel-loc", type=float, default=2.0)
    sp.add_argument("--rel-spread", type=float, default=1.0)
    sp.add_argument("--nonrel-loc", type=float, default=0.0)
    sp.add_argument("--nonrel-spread", type=float, default=1.0)
    sp.add_argument("--min-relevant", type=int, default=5)
    sp.add_argument("--max-relevant", type=int, default=50)
    sp.add_argument("--id-prefix", default="q")
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("split", help="random query-level train/test split")
    common(sp)
    sp.add_argument("--dataset")
    sp.add_argument("--fraction", type=float)
    sp.set_defaults(func=cmd_split)

    sp = sub.add_parser("train", help="train a model and write a checkpoint")
    common(sp, model=True, training=True)
    sp.add_argument("--dataset")
    sp.add_argument("--checkpoint", help="checkpoint path (default OUT/model.ckpt)")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="evaluate a checkpoint and/or baselines")
    common(sp, model=True)
    sp.add_argument("--dataset")
    sp.add_argument("--train-dataset", help="training queries, for greedy-k")
    sp.add_argument("--checkpoint")
    sp.add_argument("--baseline", action="append",
                    help="fixed:K, greedy, oracle or table (repeatable)")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("ablate", help="train over a grid of d and h")
    common(sp, model=True, training=True)
    sp.add_argument("--dataset")
    sp.add_argument("--test-dataset")
    sp.add_argument("--grid-d", dest="grid_d")
    sp.add_argument("--grid-h", dest="grid_h")
    sp.set_defaults(func=cmd_ablate)

    sp = sub.add_parser("explain", help="per-position metric and cut distribution")
    common(sp, model=True)
    sp.add_argument("--dataset")
    sp.add_argument("--checkpoint")
    sp.add_argument("--query-ids", help="comma-separated query ids")
    sp.set_defaults(func=cmd_explain)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    # remember which model flags were given explicitly, before defaults fill them in
    for key in ("d", "heads", "layers", "top_n"):
        setattr(args, key + "_flag", getattr(args, key, None))
    try:
        _resolve(args)
        return args.func(args)
    except UsageError as exc:
        print(f"choppy: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FileNotFoundError, DataError, checkpoint.CheckpointError) as exc:
        print(f"choppy: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericError, FloatingPointError) as exc:
        print(f"choppy: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
