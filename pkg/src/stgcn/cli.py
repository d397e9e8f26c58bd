"""Command-line entry point: ``stgcn <subcommand> [flags]``.

Exit codes: 0 success, 1 usage error, 2 validation or data error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import data as datamod
from .config import (
    CheckpointError,
    RunConfig,
    config_from_dict,
    load_checkpoint,
    load_config,
    save_checkpoint,
)
from .evaluation import compare_models, evaluate, roc_to_csv
from .gradcheck import DEFAULT_TOLERANCE, run_suite
from .model import MODEL_KINDS, ConfigError, ModelConfig, fit, predict_batch
from .numerics import ShapeError
from .simulator import LayoutError, generate_dataset

log = logging.getLogger("stgcn")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


# flag name -> RunConfig field
_RUN_FLAGS = {
    "model": "model_kind",
    "seed": "seed",
    "lr": "lr",
    "batch": "batch",
    "iters": "iterations",
    "hidden": "hidden_dim",
    "segment_len": "segment_len_s",
    "interval": "window_interval_s",
    "features": "features",
    "threshold": "threshold_points",
    "split": "split_ratio",
    "gcn_act": "gcn_output_activation",
    "distance_scale": "distance_scale",
}


def _add_pipeline_flags(p):
    p.add_argument("--segment-len", type=float, metavar="S", help="segment length in seconds (30)")
    p.add_argument("--interval", type=float, metavar="S", help="window interval in seconds (2)")
    p.add_argument("--features", choices=sorted(datamod.FEATURE_MODES), help="node feature groups (both)")
    p.add_argument("--threshold", type=float, metavar="N", help="points per segment for label 1 (10)")
    p.add_argument("--split", type=float, metavar="F", help="train fraction (0.8)")
    p.add_argument("--distance-scale", type=float, metavar="F", help="multiplier on distances in the adjacency (1.0)")


def _add_train_flags(p, with_model=True):
    p.add_argument("--config", metavar="PATH", help="JSON run config; flags override it")
    if with_model:
        p.add_argument("--model", choices=MODEL_KINDS, help="model kind (stgcn)")
    p.add_argument("--seed", type=int, metavar="N")
    p.add_argument("--lr", type=float, metavar="F", help="Adam learning rate (0.0001)")
    p.add_argument("--batch", type=int, metavar="N", help="minibatch size (64)")
    p.add_argument("--iters", type=int, metavar="N", help="training iterations (1000)")
    p.add_argument("--hidden", type=int, metavar="N", help="hidden units (32)")
    p.add_argument("--gcn-act", choices=("sigmoid", "relu"), help="GCN output activation (sigmoid)")
    _add_pipeline_flags(p)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="stgcn", description="Team performance prediction with ST-GCN.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("simulate", help="generate synthetic mission traces and a manifest")
    p.add_argument("--out", required=True, metavar="DIR")
    p.add_argument("--teams", type=int, default=60, metavar="N")
    p.add_argument("--seed", type=int, default=0, metavar="N")
    p.add_argument("--duration", type=float, default=900, metavar="S")

    p = sub.add_parser("prepare", help="segment traces from a manifest and split train/test")
    p.add_argument("--config", metavar="PATH")
    p.add_argument("--data", required=True, metavar="MANIFEST")
    p.add_argument("--out", required=True, metavar="PATH", help="prepared dataset (.npz)")
    p.add_argument("--seed", type=int, metavar="N")
    _add_pipeline_flags(p)

    p = sub.add_parser("train", help="train a model and write a checkpoint and loss history")
    _add_train_flags(p)
    p.add_argument("--data", metavar="PATH", help="prepared dataset (.npz) or manifest (.csv)")
    p.add_argument("--out", metavar="PATH", help="checkpoint path")

    p = sub.add_parser("eval", help="evaluate a checkpoint on the test split")
    p.add_argument("--checkpoint", required=True, metavar="PATH")
    p.add_argument("--data", required=True, metavar="PATH", help="prepared dataset (.npz)")
    p.add_argument("--out", metavar="PATH", help="report path (text); ROC CSV is written alongside")

    p = sub.add_parser("predict", help="per-segment predictions for one trace file")
    p.add_argument("--checkpoint", required=True, metavar="PATH")
    p.add_argument("--trace", required=True, metavar="PATH")
    p.add_argument("--out", metavar="PATH", help="CSV output (stdout if omitted)")

    p = sub.add_parser("gradcheck", help="compare backward passes with finite differences")
    p.add_argument("--seed", type=int, default=7, metavar="N", help="first seed")
    p.add_argument("--seeds", type=int, default=5, metavar="N", help="number of consecutive seeds")
    p.add_argument("--hidden", type=int, default=8, metavar="N")
    p.add_argument("--windows", type=int, default=15, metavar="K")
    p.add_argument("--eps", type=float, default=1e-5)
    p.add_argument("--models", nargs="+", choices=MODEL_KINDS, default=list(MODEL_KINDS))
    p.add_argument("--gcn-act", choices=("sigmoid", "relu"), default="sigmoid")

    p = sub.add_parser("bench", help="simulate, prepare, train ST-GCN and the baselines, compare")
    _add_train_flags(p, with_model=False)
    p.add_argument("--teams", type=int, default=60, metavar="N")
    p.add_argument("--out", metavar="DIR", help="output directory (bench_out)")
    return parser


def resolve_config(args) -> RunConfig:
    """Defaults < config file < explicit flags."""
    base = load_config(args.config).to_dict() if getattr(args, "config", None) else RunConfig().to_dict()
    base.pop("num_windows", None)
    for flag, fld in _RUN_FLAGS.items():
        v = getattr(args, flag, None)
        if v is not None:
            base[fld] = v
    if getattr(args, "data", None) is not None:
        base["data"] = args.data
    return config_from_dict(base)


def _load_splits(path: str, cfg: RunConfig):
    if path is None:
        raise datamod.DataError("--data is required")
    if path.endswith(".csv"):
        pipe = cfg.pipeline_config()
        ds = datamod.build_dataset(path, pipe)
        train, test = datamod.split_dataset(ds, pipe.split_ratio, pipe.seed)
        return train, test, pipe
    train, test, pipe = datamod.load_prepared(path)
    return train, test, pipe


def _progress(kind):
    def report(it, value):
        print(f"[{kind}] iter {it:5d}  batch loss {value:.6f}", flush=True)

    return report


def _model_config(cfg: RunConfig, pipe: datamod.PipelineConfig) -> ModelConfig:
    return ModelConfig(
        input_dim=pipe.feature_dim,
        hidden_dim=cfg.hidden_dim,
        num_nodes=3,
        num_windows=pipe.num_windows,
        gcn_output_activation=cfg.gcn_output_activation,
        seed=cfg.seed,
    )


def train_and_save(kind: str, cfg: RunConfig, train, pipe, out: Path):
    model_cfg = _model_config(cfg, pipe)
    params, history, grad_norms = fit(
        kind, train.features, train.laplacians, train.labels, model_cfg, cfg.hyper(), progress=_progress(kind)
    )
    save_checkpoint(out, kind, params, model_cfg, pipe, cfg.seed, cfg.iterations)
    hist_path = out.with_name(out.stem + ".history.csv")
    with open(hist_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration", "loss", "grad_norm"])
        for i, (l, g) in enumerate(zip(history, grad_norms), start=1):
            w.writerow([i, repr(float(l)), repr(float(g))])
    return params, model_cfg, history


def cmd_simulate(args) -> int:
    manifest = generate_dataset(args.teams, args.out, seed=args.seed, duration_s=args.duration)
    print(f"wrote {args.teams} traces and {manifest}")
    return 0


def cmd_prepare(args) -> int:
    cfg = resolve_config(args)
    pipe = cfg.pipeline_config()
    ds = datamod.build_dataset(args.data, pipe)
    train, test = datamod.split_dataset(ds, pipe.split_ratio, pipe.seed)
    datamod.save_prepared(args.out, train, test, pipe)
    print(f"{len(ds)} samples ({int(ds.labels.sum())} high) -> train {len(train)} / test {len(test)}: {args.out}")
    return 0


def cmd_train(args) -> int:
    cfg = resolve_config(args)
    train, _, pipe = _load_splits(cfg.data, cfg)
    out = Path(args.out or "checkpoint.json")
    train_and_save(cfg.model_kind, cfg, train, pipe, out)
    print(f"checkpoint: {out}")
    return 0


def _report_text(name: str, metrics) -> str:
    cm = metrics.confusion
    lines = [
        compare_models([(name, metrics)]).rstrip("\n"),
        "",
        f"precision {metrics.precision:.6f}  recall {metrics.recall:.6f}"
        + ("  (F1 undefined, reported as 0)" if metrics.f1_undefined else ""),
        f"confusion [[TN FP] [FN TP]] = [[{cm[0, 0]} {cm[0, 1]}] [{cm[1, 0]} {cm[1, 1]}]]",
    ]
    return "\n".join(lines) + "\n"


def cmd_eval(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    _, test, pipe = datamod.load_prepared(args.data)
    if dataclasses.replace(pipe, seed=0, split_ratio=0.8) != dataclasses.replace(ckpt.pipeline, seed=0, split_ratio=0.8):
        log.warning("dataset pipeline settings differ from the checkpoint's")
    labels, probs = predict_batch(test.features, test.laplacians, ckpt.params, ckpt.model_config, ckpt.model_kind)
    metrics = evaluate(labels, probs, test.labels)
    text = _report_text(ckpt.model_kind, metrics)
    print(text, end="")
    if args.out:
        out = Path(args.out)
        out.write_text(text, encoding="utf-8")
        out.with_name(out.stem + ".roc.csv").write_text(roc_to_csv(metrics.roc), encoding="utf-8")
    return 0


def cmd_predict(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    trace = datamod.read_trace(args.trace)
    samples = datamod.segment_and_window(trace, ckpt.pipeline)
    rows = [["segment_start", "label", "prob_high"]]
    if samples:
        ds = datamod.Dataset.from_samples(samples)
        labels, probs = predict_batch(ds.features, ds.laplacians, ckpt.params, ckpt.model_config, ckpt.model_kind)
        rows += [[repr(float(s.segment_start)), int(l), repr(float(p))] for s, l, p in zip(samples, labels, probs)]
    fh = open(args.out, "w", newline="", encoding="utf-8") if args.out else sys.stdout
    try:
        csv.writer(fh, lineterminator="\n").writerows(rows)
    finally:
        if args.out:
            fh.close()
    return 0


def cmd_gradcheck(args) -> int:
    cfg = ModelConfig(hidden_dim=args.hidden, num_windows=args.windows, gcn_output_activation=args.gcn_act)
    seeds = list(range(args.seed, args.seed + args.seeds))
    results = run_suite(seeds, cfg, args.models, args.eps)
    ok = True
    for kind, blocks in results.items():
        for name, err in blocks.items():
            flag = "ok" if err < DEFAULT_TOLERANCE else "FAIL"
            ok &= err < DEFAULT_TOLERANCE
            print(f"{kind:9s} {name:8s} max rel err {err:.3e}  {flag}")
    print("all blocks within 1e-4" if ok else "gradient check FAILED")
    return 0 if ok else 2


def cmd_bench(args) -> int:
    cfg = resolve_config(args)
    out = Path(args.out or "bench_out")
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.time()
    pipe = cfg.pipeline_config()
    manifest = generate_dataset(args.teams, out / "traces", seed=cfg.seed, check_cfg=pipe)
    ds = datamod.build_dataset(manifest, pipe)
    train, test = datamod.split_dataset(ds, pipe.split_ratio, pipe.seed)
    datamod.save_prepared(out / "prepared.npz", train, test, pipe)
    print(
        f"simulated {args.teams} teams: {len(ds)} samples, {ds.labels.mean():.3f} high; "
        f"train {len(train)} / test {len(test)} ({time.time() - t0:.1f}s)"
    )
    results = []
    for kind in MODEL_KINDS:
        params, model_cfg, _ = train_and_save(kind, cfg, train, pipe, out / f"{kind}.json")
        labels, probs = predict_batch(test.features, test.laplacians, params, model_cfg, kind)
        results.append((kind, evaluate(labels, probs, test.labels)))
    table = compare_models(results)
    (out / "comparison.txt").write_text(table, encoding="utf-8")
    (out / "comparison.csv").write_text(compare_models(results, fmt="csv"), encoding="utf-8")
    print(table, end="")
    print(f"total {time.time() - t0:.1f}s")
    return 0


COMMANDS = {
    "simulate": cmd_simulate,
    "prepare": cmd_prepare,
    "train": cmd_train,
    "eval": cmd_eval,
    "predict": cmd_predict,
    "gradcheck": cmd_gradcheck,
    "bench": cmd_bench,
}


def dispatch(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    if args.command is None:
        parser.print_help(sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (datamod.DataError, ConfigError, CheckpointError, ShapeError, LayoutError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (FileNotFoundError, IsADirectoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
