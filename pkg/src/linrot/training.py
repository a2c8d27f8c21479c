"""AdamW training loop with warmup plus cosine decay, and length-extrapolation evaluation."""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import model as M
from .numerics import autodiff as ad
from .tasks import LabeledBatch, TaskSpec, generate, train_batch

log = logging.getLogger(__name__)

CSV_HEADER = ("run_id", "seed", "step", "split", "length", "loss", "accuracy")


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    lr_end: float = 0.0
    betas: tuple[float, float] = (0.9, 0.999)
    weight_decay: float = 1e-6
    eps: float = 1e-8
    clip_norm: float = 1.0
    warmup_fraction: float = 0.1
    steps: int = 1000
    batch_size: int = 64
    eval_every: int = 100
    eval_samples: int = 256
    eval_lengths: tuple[int, ...] = (64, 256)
    seeds: tuple[int, ...] = (0,)
    # fraction of steps after which every batch uses train_max_len (1.0: lengths mixed throughout)
    full_length_after: float = 1.0

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if not 0.0 <= self.warmup_fraction < 1.0:
            raise ValueError("warmup_fraction must lie in [0, 1)")
        if self.clip_norm <= 0:
            raise ValueError("clip_norm must be positive")
        if self.steps < 0:
            raise ValueError("steps must be >= 0")
        if not 0.0 <= self.full_length_after <= 1.0:
            raise ValueError("full_length_after must lie in [0, 1]")


@dataclass(frozen=True)
class MetricRecord:
    run_id: str
    seed: int
    step: int
    split: str
    length: int
    loss: float
    accuracy: float

    def row(self) -> tuple:
        return (self.run_id, self.seed, self.step, self.split, self.length, f"{self.loss:.6g}", f"{self.accuracy:.6g}")


# --------------------------------------------------------------- optimizer


@dataclass
class AdamState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    skipped: int = 0


def global_norm(grads: dict[str, np.ndarray]) -> float:
    return math.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads.values()))


def clip_grads(grads: dict[str, np.ndarray], clip_norm: float) -> tuple[dict, float]:
    norm = global_norm(grads)
    if norm > clip_norm:
        scale = clip_norm / (norm + 1e-12)
        grads = {k: g * scale for k, g in grads.items()}
    return grads, norm


def adamw_step(params: dict, grads: dict, state: AdamState, lr_t: float, config: TrainConfig, decay_mask=None):
    """One decoupled-weight-decay Adam update.

    Gradients are clipped to ``config.clip_norm`` by global norm first. If any
    gradient is non-finite the step is skipped and counted in ``state.skipped``.
    ``decay_mask(name)`` selects the parameters that receive weight decay
    (default: all). Returns ``(new_params, state, skipped)``.
    """
    if not all(np.all(np.isfinite(g)) for g in grads.values()):
        state.skipped += 1
        log.warning("non-finite gradient; skipping step %d", state.step + 1)
        return params, state, True
    grads, _ = clip_grads(grads, config.clip_norm)
    b1, b2 = config.betas
    state.step += 1
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    out = dict(params)
    for name, g in grads.items():
        p = params[name]
        m = state.m.get(name)
        v = state.v.get(name)
        m = (1 - b1) * g if m is None else b1 * m + (1 - b1) * g
        v = (1 - b2) * g * g if v is None else b2 * v + (1 - b2) * g * g
        state.m[name], state.v[name] = m, v
        update = (m / c1) / (np.sqrt(v / c2) + config.eps)
        wd = config.weight_decay if decay_mask is None or decay_mask(name) else 0.0
        out[name] = (p * (1.0 - lr_t * wd) - lr_t * update).astype(p.dtype)
    return out, state, False


def lr_at(step: int, total: int, config: TrainConfig) -> float:
    """Linear warmup from 0 to ``lr``, then cosine decay to ``lr_end`` at ``total``."""
    if total <= 0:
        return config.lr
    step = min(max(step, 0), total)
    warm = config.warmup_fraction * total
    if warm > 0 and step < warm:
        return config.lr * step / warm
    span = total - warm
    frac = (step - warm) / span if span > 0 else 1.0
    return config.lr_end + 0.5 * (config.lr - config.lr_end) * (1.0 + math.cos(math.pi * frac))


def _decays(name: str) -> bool:
    # matrices only; norms, biases, embeddings-as-lookup keep their scale
    return not (name.endswith(("norm1", "norm2", "norm_f", "bg", "bbeta", "gate_b", "bias", "scale", "temps")) or name == "embed")


# --------------------------------------------------------------- evaluation


def batch_metrics(model: M.Model, batch: LabeledBatch, kind: str) -> tuple[float, float]:
    """(loss, accuracy) with the task's accuracy rule.

    Per-token accuracy for state tracking, per-answer accuracy for recall and
    whole-sequence accuracy for copying.
    """
    logits = model.forward(batch.inputs)
    loss = float(M.loss(logits, batch.targets, batch.mask))
    correct = (np.argmax(logits, axis=-1) == batch.targets) | ~batch.mask
    if kind == "copy":
        acc = float(np.mean(np.all(correct, axis=1)))
    else:
        acc = float(np.sum(correct & batch.mask) / np.sum(batch.mask))
    return loss, acc


def evaluate(model: M.Model, spec: TaskSpec, length: int, samples: int, seed: int, chunk: int = 64) -> tuple[float, float]:
    losses, accs, weights = [], [], []
    for start in range(0, samples, chunk):
        n = min(chunk, samples - start)
        batch = generate(spec, n, length, seed * 7919 + start)
        l, a = batch_metrics(model, batch, spec.kind)
        losses.append(l)
        accs.append(a)
        weights.append(n)
    w = np.asarray(weights, dtype=np.float64)
    return float(np.average(losses, weights=w)), float(np.average(accs, weights=w))


def eval_lengths(model: M.Model, spec: TaskSpec, lengths, samples: int = 256, seed: int = 12345, run_id: str = "", step: int = 0):
    """Accuracy at each length, generated fresh (never cut from training sequences)."""
    records = []
    for L in lengths:
        if L < 2 and spec.kind != "copy":
            raise ValueError("evaluation lengths must be >= 2")
        loss, acc = evaluate(model, spec, int(L), samples, seed)
        records.append(MetricRecord(run_id, seed, step, "eval", int(L), loss, acc))
    return records


# ------------------------------------------------------------------- train


@dataclass
class TrainResult:
    model: M.Model
    records: list
    best_accuracy: float
    best_step: int
    aborted: bool = False
    skipped_steps: int = 0
    final_loss: float = float("nan")


def train(
    model_config: M.ModelConfig,
    spec: TaskSpec,
    config: TrainConfig,
    seed: int = 0,
    run_id: str = "run",
    out_dir: str | Path | None = None,
    progress=None,
) -> TrainResult:
    """Train one model on fresh batches each step.

    Validation runs every ``eval_every`` steps at the training length; the best
    parameters by validation accuracy (ties broken by loss) are kept (and written to ``out_dir`` as
    ``best.ckpt``). Training aborts if validation loss exceeds ten times the
    initial value on three consecutive evaluations.
    """
    model = M.Model(model_config, seed=seed)
    state = AdamState()
    records: list[MetricRecord] = []
    val_len = spec.train_max_len
    val_seed = 10_000 + seed

    def validate(step):
        loss, acc = evaluate(model, spec, val_len, config.eval_samples, val_seed)
        rec = MetricRecord(run_id, seed, step, "val", val_len, loss, acc)
        records.append(rec)
        if progress:
            progress(rec)
        return loss, acc

    init_loss, best_acc = validate(0)
    best_loss = init_loss
    best_params = dict(model.params)
    best_step = 0
    strikes = 0
    aborted = False
    last_loss = init_loss
    for step in range(1, config.steps + 1):
        batch = train_batch(spec, config.batch_size, step, seed, mixed=step <= config.full_length_after * config.steps)
        tp = model.tape_params()
        loss = M.loss(model.forward(batch.inputs, tp), batch.targets, batch.mask)
        grads = ad.backward(loss)
        named = {v.name: g for v, g in grads.items()}
        for n in model.trainable_names():
            named.setdefault(n, np.zeros_like(model.params[n]))
        lr_t = lr_at(step, config.steps, config)
        model.params, state, _ = adamw_step(model.params, named, state, lr_t, config, _decays)
        records.append(MetricRecord(run_id, seed, step, "train", batch.inputs.shape[1], float(ad.value(loss)), float("nan")))
        if step % config.eval_every == 0 or step == config.steps:
            vloss, vacc = validate(step)
            last_loss = vloss
            if (vacc, -vloss) > (best_acc, -best_loss):
                best_acc, best_loss, best_params, best_step = vacc, vloss, dict(model.params), step
            strikes = strikes + 1 if vloss > 10 * init_loss else 0
            if strikes >= 3:
                log.warning("run %s diverged at step %d; aborting", run_id, step)
                aborted = True
                break
    model.params = best_params
    result = TrainResult(model, records, best_acc, best_step, aborted, state.skipped, last_loss)
    if out_dir is not None:
        write_run(result, model_config, spec, config, Path(out_dir))
    return result


def write_metrics_csv(path: Path, records) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_HEADER)
        for r in records:
            w.writerow(r.row())


def write_run(result: TrainResult, model_config, spec, config, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    M.save_checkpoint(out / "best.ckpt", result.model.params, model_config)
    write_metrics_csv(out / "metrics.csv", [r for r in result.records if r.split != "train" or r.step % 10 == 0])
    summary = {
        "best_val_accuracy": result.best_accuracy,
        "best_step": result.best_step,
        "aborted": result.aborted,
        "skipped_steps": result.skipped_steps,
        "final_val_loss": result.final_loss,
        "parameters": result.model.num_parameters(),
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2))
