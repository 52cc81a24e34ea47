"""Mini-batch training loop, evaluation and autoregressive generation."""
from __future__ import annotations

import csv
import math
import time
from dataclasses import asdict, dataclass

import numpy as np

from rftraffic.errors import Diverged
from rftraffic.neural.checkpoint import Checkpoint
from rftraffic.neural.model import forward, init_params, loss_and_grads, loss_mse
from rftraffic.neural.optim import AdamState, adam_step, clip_by_global_norm

METRIC_FIELDS = ("epoch", "train_loss", "val_loss", "val_acc", "seconds")


@dataclass(frozen=True)
class Hyper:
    epochs: int = 20
    batch_size: int = 32
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_norm: float | None = 5.0
    patience: int | None = None
    dtype: str = "float32"
    eval_batch: int = 256

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def _batch(data, idx, kind, dtype):
    if kind == "classifier":
        return data.batch(idx, dtype), data.labels[idx]
    return data.batch(idx, dtype)


def evaluate(arch, params, data, batch_size=256):
    """Mean loss, accuracy (classifier only) and predictions over a whole set."""
    dtype = params["out.W"].dtype
    n = len(data)
    losses, preds = [], []
    for lo in range(0, n, batch_size):
        idx = np.arange(lo, min(lo + batch_size, n))
        x, y = _batch(data, idx, arch.kind, dtype)
        out, _ = forward(arch, params, x)
        if arch.kind == "classifier":
            p = np.clip(out[np.arange(idx.size), y].astype(np.float64), 1e-12, 1.0)
            losses.append(-np.log(p).sum())
            preds.append(out.argmax(axis=1))
        else:
            losses.append(loss_mse(out, y) * idx.size)
    loss = float(np.sum(losses) / max(n, 1))
    if arch.kind == "classifier":
        pred = np.concatenate(preds) if preds else np.zeros(0, dtype=np.int64)
        acc = float(np.mean(pred == data.labels)) if n else math.nan
        return loss, acc, pred
    return loss, math.nan, None


def train(train_set, val_set, arch, hyper=Hyper(), seed=0, resume=None, on_epoch=None, meta=None):
    """Train from scratch (or continue ``resume``) and return (checkpoint, metrics).

    Deterministic for a fixed seed: initialization, shuffling and dropout masks
    all come from one seeded generator whose state is saved per epoch, so a run
    resumed from an epoch checkpoint matches an uninterrupted one. Stops early
    after ``patience`` epochs without a lower validation loss.
    """
    dtype = np.dtype(hyper.dtype)
    if resume is None:
        params = init_params(arch, seed, dtype)
        adam = AdamState.zeros_like(params)
        rng = np.random.default_rng(seed)
        start_epoch = 0
        best, bad = math.inf, 0
    else:
        params = {k: v.copy() for k, v in resume.params.items()}
        adam = AdamState({k: v.copy() for k, v in resume.adam.m.items()},
                         {k: v.copy() for k, v in resume.adam.v.items()}, resume.adam.step)
        rng = np.random.default_rng()
        rng.bit_generator.state = resume.rng_state
        start_epoch = resume.epoch
        best = resume.meta.get("best_val_loss", math.inf)
        bad = resume.meta.get("bad_epochs", 0)

    metrics = []
    ckpt = resume
    n = len(train_set)
    for epoch in range(start_epoch, hyper.epochs):
        t0 = time.perf_counter()
        order = rng.permutation(n)
        total = 0.0
        for lo in range(0, n, hyper.batch_size):
            idx = order[lo:lo + hyper.batch_size]
            x, y = _batch(train_set, idx, arch.kind, dtype)
            loss, grads, _ = loss_and_grads(arch, params, x, y, train=True,
                                            dropout_seed=int(rng.integers(2**63)))
            if not math.isfinite(loss):
                raise Diverged(f"loss became {loss} at epoch {epoch + 1}, step {adam.step + 1}")
            clip_by_global_norm(grads, hyper.clip_norm)
            adam_step(params, grads, adam, hyper.lr, hyper.beta1, hyper.beta2, hyper.eps)
            total += loss * idx.size
        val_loss, val_acc, _ = evaluate(arch, params, val_set, hyper.eval_batch)
        if not math.isfinite(val_loss):
            raise Diverged(f"validation loss became {val_loss} at epoch {epoch + 1}")
        if val_loss < best:
            best, bad = val_loss, 0
        else:
            bad += 1
        row = {"epoch": epoch + 1, "train_loss": total / n, "val_loss": val_loss,
               "val_acc": val_acc, "seconds": time.perf_counter() - t0}
        metrics.append(row)
        ckpt = Checkpoint(arch, {k: v.copy() for k, v in params.items()},
                          AdamState({k: v.copy() for k, v in adam.m.items()},
                                    {k: v.copy() for k, v in adam.v.items()}, adam.step),
                          epoch + 1, rng.bit_generator.state,
                          {**(meta or {}), "seed": seed, "hyper": hyper.to_dict(),
                           "best_val_loss": best, "bad_epochs": bad})
        if on_epoch is not None:
            on_epoch(row, ckpt)
        if hyper.patience is not None and bad >= hyper.patience:
            break
    return ckpt, metrics


def write_metrics(path, metrics):
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=METRIC_FIELDS, lineterminator="\n")
        w.writeheader()
        for row in metrics:
            w.writerow({k: ("" if isinstance(row[k], float) and math.isnan(row[k]) else
                            (f"{row[k]:.9g}" if isinstance(row[k], float) else row[k]))
                        for k in METRIC_FIELDS})


def free_run_generate(seed_windows, steps, checkpoint):
    """Autoregressive continuation: predict the next window, append it, slide, repeat.

    ``seed_windows`` is (N, C, L); returns ``steps`` generated windows (steps, C, L)
    using a context of N windows throughout.
    """
    arch, params = checkpoint.arch, checkpoint.params
    seed_windows = np.asarray(seed_windows, dtype=params["out.W"].dtype)
    if seed_windows.ndim != 3 or seed_windows.shape[0] < 1:
        raise ValueError("seed_windows must be a non-empty (N, C, L) array")
    context = seed_windows.copy()
    out = np.empty((steps,) + seed_windows.shape[1:], dtype=seed_windows.dtype)
    for s in range(steps):
        pred, _ = forward(arch, params, context[None])
        out[s] = pred.reshape(seed_windows.shape[1:])
        context = np.concatenate([context[1:], out[s:s + 1]])
    return out
