"""Command-line entry points: train, evaluate, ablate, gap-report.

Configs are YAML. Top-level keys: ``run`` (RunConfig fields, nested
``backbone`` and ``loss``), ``dataset`` and ``val_dataset`` (either
{kind: synth, seed, n, image_side} or {kind: sherlock, path}). ``ablate``
additionally reads a grid file: a YAML list of dotted-path override maps.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import yaml

from . import data, training
from .training import Checkpoint, RunConfig


def load_dataset(spec: dict, default_split: str = "train") -> data.DatasetSplit:
    kind = spec.get("kind", "synth")
    if kind == "synth":
        return data.synth_corpus(seed=spec.get("seed", 0), n=spec.get("n", 256),
                                 image_side=spec.get("image_side", 32),
                                 split=spec.get("split", default_split))
    if kind == "sherlock":
        return data.load_sherlock(spec["path"], split=spec.get("split", default_split))
    raise ValueError(f"unknown dataset kind {kind!r}")


def load_config(path) -> dict:
    with open(path) as fh:
        return yaml.safe_load(fh) or {}


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    run_cfg = RunConfig(**cfg.get("run", {}))
    train_split = load_dataset(cfg.get("dataset", {}), "train")
    run_dir = args.run_dir or "runs/train"
    ckpt = training.train(run_cfg, train_split, run_dir=run_dir)
    ckpt_path = os.path.join(run_dir, "final.pt")
    ckpt.save(ckpt_path)
    print(f"trained {ckpt.step} steps; checkpoint at {ckpt_path}")
    if "val_dataset" in cfg:
        val = load_dataset(cfg["val_dataset"], "val")
        report = training.evaluate(ckpt.build_bundle(), val,
                                   metadata={"seed": run_cfg.seed, "checkpoint": ckpt_path})
        _emit_report(report, run_dir)
    return 0


def cmd_evaluate(args) -> int:
    ckpt = Checkpoint.load(args.checkpoint)
    cfg = load_config(args.config) if args.config else {}
    spec = cfg.get("val_dataset") or cfg.get("dataset") or {"kind": "synth", "split": args.split}
    split = load_dataset(spec, args.split)
    report = training.evaluate(ckpt.build_bundle(), split,
                               metadata={"seed": ckpt.config.seed,
                                         "checkpoint": args.checkpoint})
    _emit_report(report, args.run_dir)
    return 0


def cmd_ablate(args) -> int:
    cfg = load_config(args.config)
    with open(args.grid) as fh:
        deltas = yaml.safe_load(fh) or []
    run_cfg = RunConfig(**cfg.get("run", {}))
    train_split = load_dataset(cfg.get("dataset", {}), "train")
    val_split = load_dataset(cfg.get("val_dataset", cfg.get("dataset", {})), "val")
    rows = training.ablate(run_cfg, deltas, train_split, val_split,
                           run_dir=args.run_dir)
    print(training.format_ablation_table(rows))
    if args.run_dir:
        os.makedirs(args.run_dir, exist_ok=True)
        with open(os.path.join(args.run_dir, "ablation.json"), "w") as fh:
            json.dump([{"delta": r["delta"],
                        "report": json.loads(r["report"].to_json()) if "report" in r
                        else None,
                        "error": r.get("error")} for r in rows], fh, indent=2)
    return 0


def cmd_gap_report(args) -> int:
    ckpt = Checkpoint.load(args.checkpoint)
    cfg = load_config(args.config) if args.config else {}
    spec = cfg.get("val_dataset") or cfg.get("dataset") or {"kind": "synth", "split": "val"}
    split = load_dataset(spec, "val")
    gaps = training.gap_report(ckpt.build_bundle(), split)
    print(json.dumps(gaps, indent=2))
    return 0


def _emit_report(report, run_dir) -> None:
    print(report.format_table())
    if run_dir:
        os.makedirs(run_dir, exist_ok=True)
        with open(os.path.join(run_dir, "eval_report.json"), "w") as fh:
            fh.write(report.to_json())


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="regionprompt")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="fine-tune a model from a YAML config")
    p.add_argument("--config", required=True)
    p.add_argument("--run-dir", default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="evaluate a checkpoint on a split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", default="val")
    p.add_argument("--config", default=None)
    p.add_argument("--run-dir", default=None)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate", help="run a grid of config deltas")
    p.add_argument("--config", required=True)
    p.add_argument("--grid", required=True, help="YAML list of dotted-path overrides")
    p.add_argument("--run-dir", default=None)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("gap-report", help="modality-gap triplet for a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--config", default=None)
    p.set_defaults(func=cmd_gap_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
