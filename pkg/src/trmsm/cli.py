"""Command-line entry point: ``trmsm {train,eval,probe,gen-synth,sweep}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import config as cfg
from .data import DataError, generate_synthetic, load_jsonl, synthetic_label_map, SYNTHETIC_RULES
from .experiments import (
    SWEEP_AXES,
    find_conversation,
    load_data_dir,
    load_model,
    parse_sweep_values,
    probe,
    save_data_dir,
    sweep,
    train_seeds,
    write_json,
)
from .trainer import evaluate

logger = logging.getLogger("trmsm")


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--preset", choices=sorted(cfg.PRESETS), help="baked-in hyperparameters")
    p.add_argument("--config", help="flat 'key = value' config file (applied after the preset)")
    p.add_argument("--data", help="data directory (labels.json, train/dev/test.jsonl)")
    p.add_argument("--out", help="output directory")
    p.add_argument("--seed", type=int, help="single seed (shorthand for --seeds N)")
    p.add_argument("--seeds", help="comma-separated seeds; metrics are averaged over them")
    p.add_argument("--blocks", help="enabled blocks, e.g. conventional,intra,inter or C,RA,ER")
    p.add_argument("--fusion", choices=("add", "cat", "att"))
    p.add_argument("--window", help="context window '-x,y' (use --window=-10,10) or 'all'")
    p.add_argument("--layers", type=int)
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override any config key; repeatable")


def resolve_run_config(args: argparse.Namespace) -> cfg.RunConfig:
    run = cfg.preset(args.preset) if args.preset else cfg.RunConfig()
    if args.config:
        run = cfg.load(args.config, run)
    overrides = {}
    for key in ("data", "out", "blocks", "fusion", "window", "layers"):
        value = getattr(args, key, None)
        if value is not None:
            overrides[key] = str(value)
    if args.seeds:
        overrides["seeds"] = args.seeds
    elif args.seed is not None:
        overrides["seeds"] = str(args.seed)
    for item in args.set:
        if "=" not in item:
            raise cfg.ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        overrides[key.strip()] = value.strip()
    return run.with_values(overrides).validate()


def _require(value, flag: str):
    if not value:
        raise cfg.ConfigError(f"{flag} is required")
    return value


def cmd_train(args) -> int:
    run = resolve_run_config(args)
    split, labels = load_data_dir(_require(run.data, "--data"), run.dev_ratio, run.split_seed)
    out = Path(_require(run.out, "--out"))
    summary = train_seeds(run, split, labels, out)
    logger.info("mean test metrics: %s", summary["mean"]["test"])
    return 0


def cmd_eval(args) -> int:
    model, run, labels = load_model(args.checkpoint)
    window = cfg.parse_window(args.window) if args.window else None
    if args.file:
        convs = load_jsonl(args.file, labels)
        source = args.file
    else:
        split, _ = load_data_dir(_require(args.data or run.data, "--data"), run.dev_ratio, run.split_seed)
        convs = getattr(split, args.split)
        source = f"the {args.split} split"
    if not convs:
        raise DataError(f"nothing to evaluate in {source}")
    metrics = evaluate(model, convs, labels.K, window)[0]
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        write_json(args.out, metrics)
    else:
        print(json.dumps(metrics, indent=2, sort_keys=True))
    return 0


def cmd_probe(args) -> int:
    model, run, labels = load_model(args.checkpoint)
    split, _ = load_data_dir(_require(args.data or run.data, "--data"), run.dev_ratio, run.split_seed)
    conv = find_conversation(split, args.conversation)
    window = cfg.parse_window(args.window) if args.window else None
    files = probe(model, conv, labels, args.out, per_head=args.per_head, window=window)
    for name, path in files.items():
        logger.info("%s -> %s", name, path)
    return 0


def cmd_gen_synth(args) -> int:
    split = generate_synthetic((args.train, args.dev, args.test), args.speakers, args.utterances,
                               args.classes, args.rule, args.seed)
    save_data_dir(args.out, split, synthetic_label_map(args.classes))
    logger.info("wrote %d/%d/%d conversations to %s", len(split.train), len(split.dev), len(split.test), args.out)
    return 0


def cmd_sweep(args) -> int:
    run = resolve_run_config(args)
    split, labels = load_data_dir(_require(run.data, "--data"), run.dev_ratio, run.split_seed)
    values = parse_sweep_values(args.axis, args.values)
    rows = sweep(run, split, labels, args.axis, values, _require(run.out, "--out"))
    for row in rows:
        logger.info("%s=%s test_weighted_f1=%s", args.axis, row["value"], row.get("test_weighted_f1"))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="trmsm", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one or more seeds and report dev/test metrics")
    _add_run_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint (dropout off)")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", help="data directory; defaults to the one recorded in the checkpoint")
    p.add_argument("--split", choices=("train", "dev", "test"), default="test")
    p.add_argument("--file", help="score this JSONL file instead of a split")
    p.add_argument("--window", help="context window '-x,y' or 'all'")
    p.add_argument("--out", help="metrics JSON path (default: stdout)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("probe", help="export attention, fusion weights and predictions for one conversation")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data")
    p.add_argument("--conversation", required=True, help="conversation id")
    p.add_argument("--out", required=True)
    p.add_argument("--window")
    p.add_argument("--per-head", action="store_true", help="also export every head of every layer")
    p.set_defaults(func=cmd_probe)

    p = sub.add_parser("gen-synth", help="write a synthetic speaker-dependency corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--rule", choices=SYNTHETIC_RULES, default="same-speaker-previous")
    p.add_argument("--train", type=int, default=200)
    p.add_argument("--dev", type=int, default=50)
    p.add_argument("--test", type=int, default=50)
    p.add_argument("--speakers", type=int, default=3)
    p.add_argument("--utterances", type=int, default=12)
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gen_synth)

    p = sub.add_parser("sweep", help="train/evaluate along one axis: window, layers or blocks")
    _add_run_flags(p)
    p.add_argument("--axis", required=True, choices=SWEEP_AXES)
    p.add_argument("--values", required=True,
                   help="';'-separated values, e.g. '0,0;1,1;5,5;10,10;all' or 'C;RA,ER;C,RA,ER' or '1,2,3'")
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    logger.setLevel(logging.INFO)
    try:
        return args.func(args)
    except (cfg.ConfigError, DataError, FileNotFoundError, KeyError, ValueError) as exc:
        print(f"trmsm {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
