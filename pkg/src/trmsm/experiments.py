"""Run orchestration shared by the CLI and the acceptance suite: data dirs, seeds, sweeps, probes."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from . import autograd as ag
from . import checkpoint as ckpt_io
from .config import RunConfig, format_value, parse_blocks, parse_window
from .data import Conversation, DataError, DatasetSplit, LabelMap, load_jsonl, save_jsonl, split_train_dev
from .encoder import read_vectors
from .masks import write_mask_csv
from .model import ModelConfig, TRMSM
from .trainer import evaluate, train

logger = logging.getLogger(__name__)

SCALAR_METRICS = ("accuracy", "weighted_f1", "macro_f1", "micro_f1", "m_f1")
SWEEP_AXES = ("window", "layers", "blocks")


def write_json(path: Union[str, Path], obj) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# data directories
# ---------------------------------------------------------------------------

def load_data_dir(path: Union[str, Path], dev_ratio: float = 0.8,
                  split_seed: int = 0) -> tuple[DatasetSplit, LabelMap]:
    """Read ``labels.json``, ``train.jsonl`` and optional ``dev.jsonl`` / ``test.jsonl``.

    Without a dev file the training file is split ``dev_ratio : 1 - dev_ratio``.
    """
    root = Path(path)
    if not (root / "labels.json").exists():
        raise DataError(f"{root}: missing labels.json")
    labels = LabelMap.load(root / "labels.json")
    parts = {}
    for name in ("train", "dev", "test"):
        f = root / f"{name}.jsonl"
        parts[name] = load_jsonl(f, labels) if f.exists() else []
    if not parts["dev"] and len(parts["train"]) >= 2:
        parts["train"], parts["dev"] = split_train_dev(parts["train"], dev_ratio, split_seed)
    return DatasetSplit(parts["train"], parts["dev"], parts["test"]), labels


def save_data_dir(path: Union[str, Path], split: DatasetSplit, labels: LabelMap) -> None:
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    labels.save(root / "labels.json")
    for name in ("train", "dev", "test"):
        convs = getattr(split, name)
        if convs:
            save_jsonl(root / f"{name}.jsonl", convs, labels)


# ---------------------------------------------------------------------------
# training runs
# ---------------------------------------------------------------------------

def build(run: RunConfig, num_classes: int, seed: int) -> TRMSM:
    vectors = read_vectors(run.vectors) if run.provider == "precomputed" else None
    return TRMSM(run.model_config(num_classes), seed=seed, vectors=vectors)


def snapshot(run: RunConfig, labels: LabelMap, model_cfg: ModelConfig) -> dict:
    return {"run": run.to_dict(), "labels": list(labels.names), "model": model_cfg.to_dict()}


@dataclass
class SeedResult:
    seed: int
    best_step: int
    dev: Optional[dict]
    test: Optional[dict]
    losses: list[float]

    def to_dict(self) -> dict:
        return {"seed": self.seed, "best_step": self.best_step, "dev": self.dev, "test": self.test}


def train_seed(run: RunConfig, split: DatasetSplit, labels: LabelMap, seed: int,
               out_dir: Union[str, Path, None] = None) -> SeedResult:
    """Train one seed, then score the selected (float32) weights on the test set."""
    model = build(run, labels.K, seed)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.txt").write_text(run.replace(seeds=(seed,)).dumps(), encoding="utf-8")
    rep = train(model, split, run.train_config(seed), out_dir=out,
                config_snapshot=snapshot(run, labels, model.config))
    model.load_state_dict(rep.best_state)
    test = evaluate(model, split.test, labels.K)[0] if split.test else None
    result = SeedResult(seed, rep.best_step, rep.best_dev, test, rep.losses)
    if out is not None:
        write_json(out / "metrics.json", result.to_dict())
    return result


def mean_metrics(reports: Sequence[Optional[dict]]) -> Optional[dict]:
    reports = [r for r in reports if r is not None]
    if not reports:
        return None
    return {k: float(np.mean([r[k] for r in reports])) for k in SCALAR_METRICS}


def train_seeds(run: RunConfig, split: DatasetSplit, labels: LabelMap,
                out_dir: Union[str, Path, None] = None) -> dict:
    """Per-seed runs plus the mean of their dev/test metrics."""
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.txt").write_text(run.dumps(), encoding="utf-8")
    results = []
    for seed in run.seeds:
        sub = out / f"seed_{seed}" if out is not None else None
        results.append(train_seed(run, split, labels, seed, sub))
    summary = {
        "seeds": [r.to_dict() for r in results],
        "mean": {"dev": mean_metrics([r.dev for r in results]),
                 "test": mean_metrics([r.test for r in results])},
    }
    if out is not None:
        write_json(out / "summary.json", summary)
    return summary


def parse_sweep_values(axis: str, text: str) -> list:
    """``window``: ``0,0;1,1;all``; ``layers``: ``1,2,3``; ``blocks``: ``C;RA,ER;C,RA,ER``."""
    if axis == "window":
        return [parse_window(v) for v in text.split(";")]
    if axis == "layers":
        return [int(v) for v in text.replace(";", ",").split(",") if v.strip()]
    if axis == "blocks":
        return [parse_blocks(v) for v in text.split(";")]
    raise ValueError(f"unknown sweep axis {axis!r}; expected one of {SWEEP_AXES}")


def sweep(run: RunConfig, split: DatasetSplit, labels: LabelMap, axis: str, values: Sequence,
          out_dir: Union[str, Path, None] = None) -> list[dict]:
    """Train/evaluate once per value (all seeds shared) and tabulate mean metrics."""
    if axis not in SWEEP_AXES:
        raise ValueError(f"unknown sweep axis {axis!r}; expected one of {SWEEP_AXES}")
    out = Path(out_dir) if out_dir is not None else None
    rows = []
    for value in values:
        label = "all" if value is None else format_value(value)
        sub = out / f"{axis}_{label.replace(',', '_')}" if out is not None else None
        summary = train_seeds(run.replace(**{axis: value}), split, labels, sub)
        row = {"axis": axis, "value": label}
        for part in ("dev", "test"):
            for k, v in (summary["mean"][part] or {}).items():
                row[f"{part}_{k}"] = v
        rows.append(row)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        write_json(out / "sweep.json", rows)
        with open(out / "sweep.csv", "w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, fieldnames=sorted({k for r in rows for k in r}, key=_col_order))
            writer.writeheader()
            writer.writerows(rows)
    return rows


def _col_order(name: str):
    return (name not in ("axis", "value"), name != "axis", name)


# ---------------------------------------------------------------------------
# checkpoints -> models
# ---------------------------------------------------------------------------

def load_model(path: Union[str, Path]) -> tuple[TRMSM, RunConfig, LabelMap]:
    ck = ckpt_io.load(path)
    snap = ck.config
    run = RunConfig.from_dict(snap["run"])
    labels = LabelMap(tuple(snap["labels"]))
    cfg = ModelConfig.from_dict(snap["model"])
    vectors = read_vectors(run.vectors) if cfg.provider == "precomputed" else None
    model = TRMSM(cfg, vectors=vectors)
    model.load_state_dict(ck.params)
    return model, run, labels


def evaluate_checkpoint(path: Union[str, Path], conversations: Sequence[Conversation],
                        window: Optional[tuple[int, int]] = None) -> dict:
    if not conversations:
        raise DataError("no conversations to evaluate")
    model, _, labels = load_model(path)
    return evaluate(model, conversations, labels.K, window)[0]


# ---------------------------------------------------------------------------
# probing
# ---------------------------------------------------------------------------

def probe(model: TRMSM, conv: Conversation, labels: LabelMap, out_dir: Union[str, Path],
          per_head: bool = False, window: Optional[tuple[int, int]] = None) -> dict[str, Path]:
    """Write the attention / fusion-weight / prediction CSVs for one conversation.

    ``attention.csv`` holds the head-averaged top-layer weights of every
    block; ``attention_heads.csv`` (with ``per_head``) every layer and head.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with ag.no_grad():
        res = model(conv, train=False, window=window, probe=True)
    files = {}
    columns = ["block", "layer", "head", "query_index", "key_index", "weight"]

    files["attention"] = out / "attention.csv"
    with open(files["attention"], "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        for block, layers in res.attention_records.items():
            top = len(layers) - 1
            avg = layers[top].mean(axis=0)
            for i, j in np.ndindex(avg.shape):
                w.writerow([block, top, "mean", i, j, repr(float(avg[i, j]))])
    if per_head:
        files["attention_heads"] = out / "attention_heads.csv"
        with open(files["attention_heads"], "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(columns)
            for block, layers in res.attention_records.items():
                for li, heads in enumerate(layers):
                    for h, i, j in np.ndindex(heads.shape):
                        w.writerow([block, li, h, i, j, repr(float(heads[h, i, j]))])
    if res.fusion_weights is not None:
        files["fusion"] = out / "fusion.csv"
        with open(files["fusion"], "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["utterance_index"] + [f"alpha_{b}" for b in model.config.blocks])
            for i, row in enumerate(res.fusion_weights):
                w.writerow([i] + [repr(float(a)) for a in row])
    files["predictions"] = out / "predictions.csv"
    with open(files["predictions"], "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["utterance_index", "speaker", "gold", "pred"])
        for i, (u, p) in enumerate(zip(conv.utterances, res.predictions)):
            w.writerow([i, u.speaker, "" if u.label is None else labels.name(u.label), labels.name(int(p))])
    for block in model.config.blocks:
        files[f"mask_{block}"] = out / f"mask_{block}.csv"
        write_mask_csv(files[f"mask_{block}"], res.masks[block])
    return files


def find_conversation(split: DatasetSplit, conv_id: str) -> Conversation:
    for conv in split.test + split.dev + split.train:
        if conv.id == conv_id:
            return conv
    raise DataError(f"unknown conversation id {conv_id!r}")

