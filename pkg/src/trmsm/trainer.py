"""AdamW, the warmup/linear-decay schedule and the training loop."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence, Union

import numpy as np

from . import autograd as ag
from . import checkpoint as ckpt_io
from .data import Conversation, DatasetSplit
from .fusion import loss as fusion_loss
from .metrics import report as metrics_report

logger = logging.getLogger(__name__)

SELECT_METRICS = ("weighted_f1", "m_f1", "macro_f1", "accuracy")


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    total_steps: int = 10000
    warmup_steps: int = 1000
    peak_lr: float = 1e-5
    weight_decay: float = 0.01
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    seed: int = 0
    eval_every: int = 500
    select_metric: str = "weighted_f1"
    max_grad_norm: Optional[float] = None
    checkpoint_every: int = 0

    def __post_init__(self):
        if not 0 <= self.warmup_steps < self.total_steps:
            raise ValueError(f"need 0 <= warmup_steps < total_steps, got {self.warmup_steps}/{self.total_steps}")
        if self.peak_lr <= 0:
            raise ValueError("peak_lr must be positive")
        if self.select_metric not in SELECT_METRICS:
            raise ValueError(f"select_metric must be one of {SELECT_METRICS}")
        object.__setattr__(self, "betas", tuple(self.betas))


def lr_at(step: int, config: TrainConfig) -> float:
    """Linear warmup to ``peak_lr`` at ``warmup_steps``, then linear decay to 0 at ``total_steps``."""
    total, warm, peak = config.total_steps, config.warmup_steps, config.peak_lr
    if not 0 <= step <= total:
        raise ValueError(f"step {step} outside 0..{total}")
    if step <= warm:
        return peak * (step / warm) if warm else peak
    return peak * ((total - step) / (total - warm))


class AdamW:
    """Adam with decoupled weight decay; decay applies to parameters of rank >= 2 only."""

    def __init__(self, params: dict[str, ag.Parameter], betas=(0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 0.0):
        self.params = params
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = {n: np.zeros_like(p.data) for n, p in params.items()}
        self.v = {n: np.zeros_like(p.data) for n, p in params.items()}

    def step(self, lr: float) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for name, p in self.params.items():
            if not p.trainable:
                continue
            if self.weight_decay and p.ndim >= 2:
                p.data -= lr * self.weight_decay * p.data
            if p.grad is None:
                g = np.zeros_like(p.data)
            else:
                g = p.grad
            m, v = self.m[name], self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            p.data -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state(self) -> dict[str, np.ndarray]:
        out = {}
        for name in self.params:
            out[f"adam_m/{name}"] = self.m[name]
            out[f"adam_v/{name}"] = self.v[name]
        return out

    def load_state(self, state: dict[str, np.ndarray], t: int) -> None:
        for name in self.params:
            self.m[name] = np.array(state[f"adam_m/{name}"], dtype=np.float64)
            self.v[name] = np.array(state[f"adam_v/{name}"], dtype=np.float64)
        self.t = t


def clip_grad_norm(params: Sequence[ag.Parameter], max_norm: float) -> float:
    grads = [p.grad for p in params if p.grad is not None]
    norm = math.sqrt(sum(float((g * g).sum()) for g in grads))
    if norm > max_norm:
        for g in grads:
            g *= max_norm / (norm + 1e-12)
    return norm


def evaluate(model, conversations: Sequence[Conversation], num_classes: int,
             window: Optional[tuple[int, int]] = None) -> tuple[dict, list[list[int]]]:
    """Metrics over all labelled utterances with dropout off; also returns per-conversation predictions."""
    gold, pred, per_conv = [], [], []
    with ag.no_grad():
        for conv in conversations:
            p = model(conv, train=False, window=window).predictions.tolist()
            per_conv.append(p)
            for y, yhat in zip(conv.labels, p):
                if y is not None:
                    gold.append(y)
                    pred.append(yhat)
    return metrics_report(gold, pred, num_classes), per_conv


def conversation_for_step(step: int, n: int, seed: int) -> int:
    """Index of the conversation used at (1-based) ``step``; a fresh permutation per pass."""
    epoch, pos = divmod(step - 1, n)
    return int(np.random.default_rng([seed, epoch]).permutation(n)[pos])


@dataclass
class TrainReport:
    losses: list[float] = field(default_factory=list)
    log: list[dict] = field(default_factory=list)
    best_step: int = 0
    best_metric: float = -math.inf
    best_dev: Optional[dict] = None
    best_state: Optional[dict[str, np.ndarray]] = None
    final_step: int = 0


def _snapshot_eval(model, conversations, num_classes, window=None):
    # evaluate exactly what a checkpoint would hold (float32-rounded copy)
    live = model.state_dict()
    snapshot = ckpt_io.round_to_f32(live)
    model.load_state_dict(snapshot)
    try:
        metrics, _ = evaluate(model, conversations, num_classes, window)
    finally:
        model.load_state_dict(live)
    return metrics, snapshot


def train(model, split: DatasetSplit, config: TrainConfig, out_dir: Union[str, Path, None] = None,
          resume: Optional[ckpt_io.Checkpoint] = None, config_snapshot: Optional[dict] = None,
          stop_at: Optional[int] = None, on_step: Optional[Callable[[int, float], None]] = None) -> TrainReport:
    """Optimise ``model`` one conversation per step for ``config.total_steps`` steps.

    Dev evaluation runs every ``eval_every`` steps (and at the end) on a
    float32 snapshot; the best snapshot by ``select_metric`` is kept in the
    report and written to ``out_dir/best.ckpt``. ``stop_at`` halts early
    after that step (the schedule still spans ``total_steps``), which is how
    interrupted runs are produced.
    """
    train_set = list(split.train)
    if not train_set:
        raise TrainingError("training set is empty")
    num_classes = model.config.num_classes
    params = model.named_parameters()
    opt = AdamW(params, config.betas, config.eps, config.weight_decay)
    snapshot_cfg = config_snapshot or {"model": model.config.to_dict(), "train": asdict(config)}
    report = TrainReport()
    start = 0
    if resume is not None:
        if resume.resume is None:
            raise TrainingError("checkpoint carries no resume state")
        model.load_state_dict({n: resume.resume[f"param/{n}"] for n in params})
        opt.load_state(resume.resume, resume.step)
        start = resume.step
        report.best_step = resume.trainer_state.get("best_step", 0)
        best = resume.trainer_state.get("best_metric")
        report.best_metric = -math.inf if best is None else best
    out = Path(out_dir) if out_dir is not None else None
    log_fh = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        log_fh = open(out / "train_log.jsonl", "a" if resume else "w", encoding="utf-8")

    def emit(entry: dict) -> None:
        report.log.append(entry)
        if log_fh is not None:
            log_fh.write(json.dumps(entry, sort_keys=True) + "\n")

    def checkpoint(step: int, state: dict, with_resume: bool) -> ckpt_io.Checkpoint:
        resume_state = None
        if with_resume:
            resume_state = {f"param/{n}": p.data for n, p in params.items()}
            resume_state.update(opt.state())
        return ckpt_io.Checkpoint(
            params=state, config=snapshot_cfg, step=step,
            rng_state={"scheme": "counter", "seed": config.seed, "step": step},
            trainer_state={"best_step": report.best_step,
                           "best_metric": None if report.best_metric == -math.inf else report.best_metric},
            resume=resume_state,
        )

    last = min(config.total_steps, stop_at) if stop_at is not None else config.total_steps
    try:
        for step in range(start + 1, last + 1):
            conv = train_set[conversation_for_step(step, len(train_set), config.seed)]
            model.zero_grad()
            out_step = model(conv, train=True, rng_key=(config.seed, step))
            loss = fusion_loss([out_step.logits], [conv.labels])
            value = float(loss.data)
            if not math.isfinite(value):
                raise TrainingError(f"non-finite loss {value} at step {step} on conversation {conv.id!r}")
            loss.backward()
            if config.max_grad_norm is not None:
                clip_grad_norm(list(params.values()), config.max_grad_norm)
            lr = lr_at(step, config)
            opt.step(lr)
            report.losses.append(value)
            emit({"step": step, "lr": lr, "loss": value})
            if on_step is not None:
                on_step(step, value)

            if step % config.eval_every == 0 or step == config.total_steps:
                if split.dev:
                    dev, snapshot = _snapshot_eval(model, split.dev, num_classes, model.config.window)
                    metric = dev[config.select_metric]
                    emit({"step": step, "lr": lr, "loss": value, "dev": dev})
                    logger.info("step %d loss %.4f dev %s %.4f", step, value, config.select_metric, metric)
                    if metric > report.best_metric:
                        report.best_metric, report.best_step, report.best_dev = metric, step, dev
                        report.best_state = snapshot
                        if out is not None:
                            ckpt_io.save(out / "best.ckpt", checkpoint(step, snapshot, False))
            if config.checkpoint_every and step % config.checkpoint_every == 0 and out is not None:
                ckpt_io.save(out / "last.ckpt", checkpoint(step, model.state_dict(), True))
        report.final_step = last
        if out is not None:
            ckpt_io.save(out / "last.ckpt", checkpoint(last, model.state_dict(), True))
        if report.best_state is None:
            # no dev set: the final weights are the selection
            report.best_state = ckpt_io.round_to_f32(model.state_dict())
            report.best_step = last
            if out is not None:
                ckpt_io.save(out / "best.ckpt", checkpoint(last, report.best_state, False))
    finally:
        if log_fh is not None:
            log_fh.close()
    return report

