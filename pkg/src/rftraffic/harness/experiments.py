"""The experiments behind each CLI subcommand.

Every ``cmd_*`` takes a resolved config (see :mod:`rftraffic.harness.config`),
the run seed and an output directory, writes its artifacts there and returns
a small summary dict. All randomness flows from the run seed, so rerunning a
command reproduces its files exactly; the only exception is the wall-clock
``seconds`` column of loss-curve CSVs.
"""
from __future__ import annotations

import copy
import csv
import itertools
import json
import logging
import os
import shutil
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from rftraffic.channel import ChannelConfig
from rftraffic.dataset import (
    SliceSpec,
    build_classification_dataset,
    build_generative_dataset,
    draw_starts,
    span_bookkeeping,
    write_dataset,
    write_iq,
)
from rftraffic.errors import ConfigError
from rftraffic.harness import pipeline
from rftraffic.harness.config import axis_path, derive_seed, digest, dumps, get_path, merge, set_path
from rftraffic.harness.pipeline import stage
from rftraffic.modem import ModemConfig
from rftraffic.neural.checkpoint import Checkpoint
from rftraffic.neural.model import ModelArch
from rftraffic.neural.training import Hyper, evaluate, free_run_generate, train, write_metrics

log = logging.getLogger("rftraffic")

CHECKPOINT = "checkpoint.rftc"


def _write_text(path, text):
    tmp = Path(str(path) + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def _write_config(out, cfg, seed, command):
    _write_text(Path(out) / "config.json", dumps({"command": command, "seed": seed, "config": cfg}))


def _run_digest(cfg, seed):
    return digest({"config": cfg, "seed": seed})


# -- generate ------------------------------------------------------------------

def _manifest(ds_cfg, seed, regime, info):
    channel = (ChannelConfig.clean() if regime == "clean"
               else ChannelConfig.from_dict({**ds_cfg["channel"], "seed": 0})).to_dict()
    channel.pop("seed")
    return {
        "seed": seed,
        "regime": regime,
        "sample_rate": pipeline.sample_rate(ds_cfg),
        "duration": ds_cfg["duration"],
        "class_names": [pipeline.class_name(c) for c in ds_cfg["classes"]],
        "profiles": ds_cfg["classes"],
        "framer": ds_cfg["framer"],
        "modem": ModemConfig.from_dict(ds_cfg["modem"]).to_dict(),
        "channel": channel,
        "classes": info["classes"],
    }


def cmd_generate(cfg, seed, out):
    """Synthesize and write one dataset per configured regime.

    A single regime writes straight into ``out``; several regimes write one
    sub-directory each, all built from the same traces and bit streams.
    """
    ds_cfg = cfg["dataset"]
    regimes = list(dict.fromkeys(ds_cfg["regimes"]))
    recordings, info = pipeline.synthesize(ds_cfg, seed, regimes)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    paths = {}
    for regime in regimes:
        path = out if len(regimes) == 1 else out / regime
        draws = [json.dumps(d, sort_keys=True) for d in info["draws"][regime]]
        with stage("dataset"):
            write_dataset(path, recordings[regime], _manifest(ds_cfg, seed, regime, info), draws)
        paths[regime] = str(path)
        log.info("wrote %s dataset to %s", regime, path)
    _write_config(out, cfg, seed, "generate")
    return {"datasets": paths,
            "n_samples": {r: {k: int(v.size) for k, v in recordings[r].items()} for r in regimes}}


# -- classifier ----------------------------------------------------------------

def confusion_matrix(labels, pred, n_classes):
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (np.asarray(labels, dtype=np.int64), np.asarray(pred, dtype=np.int64)), 1)
    return cm


def confusion_json(cm, class_names):
    total = int(cm.sum())
    return {
        "class_names": list(class_names),
        "matrix": cm.tolist(),
        "row_sums": cm.sum(axis=1).tolist(),
        "total": total,
        "accuracy": float(np.trace(cm) / total) if total else float("nan"),
    }


def classifier_data(cfg, seed, recordings):
    """(train set, test set) for a classifier run over ``recordings``."""
    recordings = pipeline.select_classes(recordings, cfg["labels"])
    spec = pipeline.slice_spec(cfg["slice"])
    total = min(int(x.size) for x in recordings.values())
    partition = pipeline.make_partition(cfg["partition"], total, seed)
    ex = cfg["examples"]
    with stage("dataset"):
        return build_classification_dataset(recordings, spec, partition, ex["per_class"],
                                            derive_seed(seed, "examples"), ex["test_per_class"])


def classifier_arch(cfg, spec, n_classes):
    m = cfg["model"]
    return ModelArch.classifier(spec.step_size, n_classes, hidden=m["hidden"],
                                fc_hidden=m["fc_hidden"], dropout=m["dropout"],
                                readout=m["readout"], n_layers=m["n_layers"])


def _read_metrics(path, upto):
    if not Path(path).exists():
        return []
    with open(path, newline="") as f:
        rows = list(csv.DictReader(f))[:upto]
    conv = {"epoch": int}
    return [{k: conv.get(k, float)(v) if v != "" else float("nan") for k, v in r.items()}
            for r in rows]


def run_classifier(cfg, seed, recordings, out=None, resume=False):
    """Train and evaluate one classifier; writes curves, confusion and checkpoint if ``out``."""
    tr, te = classifier_data(cfg, seed, recordings)
    arch = classifier_arch(cfg, tr.spec, tr.n_classes)
    hyper = Hyper.from_dict(cfg["train"])
    run_id = _run_digest(cfg, seed)
    ckpt_path = Path(out) / CHECKPOINT if out else None

    start, history = None, []
    if resume and ckpt_path is not None and ckpt_path.exists():
        with stage("neural"):
            start = Checkpoint.load(ckpt_path)
        if start.meta.get("run") != run_id:
            raise ConfigError(f"{ckpt_path} belongs to a different config or seed")
        history = _read_metrics(Path(out) / "metrics.csv", start.epoch)
        log.info("resuming from epoch %d", start.epoch)

    def on_epoch(row, ckpt):
        history.append(row)
        log.info("epoch %d: train %.4f val %.4f acc %.4f (%.1fs)", row["epoch"], row["train_loss"],
                 row["val_loss"], row["val_acc"], row["seconds"])
        if out:
            ckpt.save(ckpt_path)
            write_metrics(Path(out) / "metrics.csv", history)

    with stage("neural"):
        ckpt, _ = train(tr, te, arch, hyper, derive_seed(seed, "train"), resume=start,
                        on_epoch=on_epoch, meta={"run": run_id, "class_names": tr.class_names,
                                                 "slice": tr.spec.to_dict()})
        val_loss, val_acc, pred = evaluate(arch, ckpt.params, te, hyper.eval_batch)
    cm = confusion_matrix(te.labels, pred, tr.n_classes)
    result = {
        "val_loss": val_loss,
        "val_acc": val_acc,
        "epochs": ckpt.epoch,
        "sec_per_epoch": float(np.mean([r["seconds"] for r in history])) if history else 0.0,
        "confusion": confusion_json(cm, tr.class_names),
        "metrics": history,
        "checkpoint": ckpt,
    }
    if out:
        _write_text(Path(out) / "confusion.json", dumps(result["confusion"]))
    return result


def cmd_train_classifier(cfg, seed, out, resume=False):
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    _write_config(out, cfg, seed, "train-classifier")
    recordings = pipeline.load_recordings(cfg, seed)
    res = run_classifier(cfg, seed, recordings, out, resume)
    return {k: res[k] for k in ("val_loss", "val_acc", "epochs", "confusion")}


def evaluate_checkpoint(cfg, seed, checkpoint, recordings=None):
    """Confusion matrix of a saved classifier on the run's test split."""
    if recordings is None:
        recordings = pipeline.load_recordings(cfg, seed)
    _, te = classifier_data(cfg, seed, recordings)
    with stage("neural"):
        _, _, pred = evaluate(checkpoint.arch, checkpoint.params, te)
    return confusion_json(confusion_matrix(te.labels, pred, te.n_classes), te.class_names)


# -- trade studies ---------------------------------------------------------------

SEQLEN_FIELDS = ("n_steps", "window_len", "stride", "n_samples", "n_symbols", "n_bits",
                 "val_loss", "val_acc", "epochs", "sec_per_epoch")


def _fmt(v):
    return f"{v:.9g}" if isinstance(v, float) else v


def _write_csv(path, fields, rows):
    tmp = Path(str(path) + ".tmp")
    with open(tmp, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=fields, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: _fmt(r[k]) for k in fields})
    os.replace(tmp, path)


def cmd_trade_seqlen(cfg, seed, out):
    """Train one classifier per sequence length; one summary row per N, ascending."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    _write_config(out, cfg, seed, "trade-seqlen")
    n_values = sorted(set(cfg["trade"]["n_steps"]))
    sps = cfg["trade"]["bookkeeping_sps"] or ModemConfig.from_dict(
        cfg["dataset"]["modem"]).samples_per_symbol
    recordings = pipeline.load_recordings(cfg, seed)
    rows = []
    for n in n_values:
        cell = merge(cfg, {"slice": {"n_steps": n}})
        sub = out / f"n{n}"
        sub.mkdir(exist_ok=True)
        log.info("sequence length %d", n)
        res = run_classifier(cell, seed, recordings, sub)
        L, M = cell["slice"]["window_len"], cell["slice"]["stride"]
        rows.append({"n_steps": n, "window_len": L, "stride": M,
                     **span_bookkeeping(n, L, M, sps),
                     **{k: res[k] for k in ("val_loss", "val_acc", "epochs", "sec_per_epoch")}})
        _write_csv(out / "seqlen.csv", SEQLEN_FIELDS, rows)
    return {"rows": rows}


def grid_cells(cfg):
    """Every (axis values, cell config) pair of the configured grid, in axis order."""
    axes = cfg["grid"]["axes"]
    names = list(axes)
    for name in names:
        if not isinstance(axes[name], list) or not axes[name]:
            raise ConfigError(f"grid axis {name!r} needs a non-empty list of values")
        try:
            get_path(cfg, axis_path(name))
        except (KeyError, TypeError):
            raise ConfigError(f"grid axis {name!r} does not name a config key") from None
    cells = []
    for values in itertools.product(*(axes[n] for n in names)):
        cell = copy.deepcopy(cfg)
        for name, v in zip(names, values):
            set_path(cell, axis_path(name), v)
        cells.append((dict(zip(names, values)), cell))
    return names, cells


def _run_cell(cell_cfg, seed, recordings, final_dir):
    tmp = final_dir.parent / f".{final_dir.name}.partial"
    if tmp.exists():
        shutil.rmtree(tmp)
    tmp.mkdir(parents=True)
    _write_config(tmp, cell_cfg, seed, "trade-grid cell")
    res = run_classifier(cell_cfg, seed, recordings, tmp)
    summary = {k: res[k] for k in ("val_loss", "val_acc", "epochs")}
    _write_text(tmp / "result.json", dumps(summary))
    os.replace(tmp, final_dir)
    return summary


def _dataset_key(cell):
    return digest({k: v for k, v in cell["dataset"].items() if k not in ("regime", "regimes")})


def cmd_trade_grid(cfg, seed, out, workers=None):
    """Sequential (or threaded) grid over config axes, resumable by cell hash.

    A cell whose directory already holds ``result.json`` is read back rather
    than retrained, so an interrupted grid picks up where it stopped.
    """
    out = Path(out)
    (out / "cells").mkdir(parents=True, exist_ok=True)
    _write_config(out, cfg, seed, "trade-grid")
    names, cells = grid_cells(cfg)
    log.info("grid of %d cells over %s", len(cells), ", ".join(names))
    plan = []
    for values, cell in cells:
        plan.append({"axes": values, "cell": _run_digest(cell, seed)[:16]})
    _write_text(out / "plan.json", dumps({"n_cells": len(cells), "cells": plan}))

    # recordings are built once per distinct dataset config, with every regime
    # the cells need coming from the same traces
    cache = {}
    if not cfg["dataset"]["path"]:
        groups = {}
        for (_, cell), entry in zip(cells, plan):
            if (out / "cells" / entry["cell"] / "result.json").exists():
                continue
            key = _dataset_key(cell)
            groups.setdefault(key, (cell["dataset"], set()))[1].add(cell["dataset"]["regime"])
        for key, (ds_cfg, regimes) in groups.items():
            recs, _ = pipeline.synthesize(ds_cfg, seed, sorted(regimes))
            cache[key] = recs

    def recordings_for(cell):
        if cfg["dataset"]["path"]:
            return pipeline.load_recordings(cell, seed)
        return cache[_dataset_key(cell)][cell["dataset"]["regime"]]

    def job(item):
        (values, cell), entry = item
        final = out / "cells" / entry["cell"]
        if (final / "result.json").exists():
            log.info("cell %s done, skipping", entry["cell"])
            return json.loads((final / "result.json").read_text())
        log.info("cell %s: %s", entry["cell"], values)
        return _run_cell(cell, seed, recordings_for(cell), final)

    items = list(zip(cells, plan))
    workers = workers or cfg["grid"]["workers"]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(job, items))
    else:
        results = [job(it) for it in items]

    fields = ["cell", *names, "val_loss", "val_acc", "epochs", "curve"]
    rows = []
    for ((values, _), entry), res in zip(items, results):
        rows.append({"cell": entry["cell"],
                     **{n: json.dumps(values[n]) if not isinstance(values[n], str) else values[n]
                        for n in names},
                     **res, "curve": f"cells/{entry['cell']}/metrics.csv"})
    _write_csv(out / "results.csv", fields, rows)
    return {"rows": rows}


# -- generator -----------------------------------------------------------------

def _generator_signal(cfg, seed):
    g = cfg["generator"]
    ds_cfg = merge(cfg["dataset"], {"duration": g["duration"]})
    _, _, sig = pipeline.synth_class(g["source"], ds_cfg, seed, 0)
    x, _ = pipeline.impair(sig, ds_cfg["regime"], ds_cfg, seed, 0)
    return x


def _generator_spec(g):
    with stage("dataset"):
        return SliceSpec(n_steps=g["n_steps"], window_len=g["window_len"], stride=g["window_len"])


def cmd_train_generator(cfg, seed, out):
    """Next-window regressor on one recording with contiguous (stride = length) windows."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    _write_config(out, cfg, seed, "train-generator")
    g = cfg["generator"]
    x = _generator_signal(cfg, seed)
    spec = _generator_spec(g)
    partition = pipeline.make_partition(cfg["partition"], x.size, seed)
    with stage("dataset"):
        tr = build_generative_dataset(x, spec, partition, g["examples"],
                                      derive_seed(seed, "gen-train"), "train")
        va = build_generative_dataset(x, spec, partition, g["val_examples"],
                                      derive_seed(seed, "gen-val"),
                                      "train" if partition.leaky else "test")
    arch = ModelArch.generator(spec.step_size, hidden=g["hidden"], n_layers=g["n_layers"])
    hyper = Hyper.from_dict(merge(cfg["train"], g["train"]))
    history = []

    def on_epoch(row, ckpt):
        history.append(row)
        log.info("epoch %d: train %.5f val %.5f", row["epoch"], row["train_loss"], row["val_loss"])
        ckpt.save(out / CHECKPOINT)
        write_metrics(out / "metrics.csv", history)

    with stage("neural"):
        ckpt, _ = train(tr, va, arch, hyper, derive_seed(seed, "train"), on_epoch=on_epoch,
                        meta={"run": _run_digest(cfg, seed), "slice": spec.to_dict(),
                              "partition": partition.to_dict()})
    return {"val_loss": history[-1]["val_loss"] if history else float("nan"),
            "epochs": ckpt.epoch if ckpt else 0, "checkpoint": str(out / CHECKPOINT)}


def dominant_period(samples, max_lag=64):
    """Smallest lag at a local autocorrelation maximum above half the zero-lag value."""
    s = np.asarray(samples, dtype=np.complex128)
    s = s - s.mean()
    energy = np.vdot(s, s).real
    if s.size < 3 or energy == 0:
        return None
    max_lag = min(max_lag, s.size - 2)
    r = np.array([np.vdot(s[:-k], s[k:]).real / energy for k in range(1, max_lag + 1)])
    for k in range(1, r.size - 1):
        if r[k] >= r[k - 1] and r[k] >= r[k + 1] and r[k] > 0.5:
            return k + 1
    return None


def _to_complex(windows):
    return (windows[:, 0, :] + 1j * windows[:, 1, :]).ravel().astype(np.complex64)


CONTINUATION_FIELDS = ("sample", "segment", "true_i", "true_q", "pred_i", "pred_q")


def cmd_continue(cfg, seed, out):
    """Free-run a trained generator from seed windows of the held-out signal.

    Writes ``continuation.iq`` (seed samples then generated samples) and
    ``continuation.csv`` pairing every output sample with the true signal.
    """
    g = cfg["generator"]
    if not g["checkpoint"]:
        raise ConfigError("generator.checkpoint must name a trained generator")
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    _write_config(out, cfg, seed, "continue")
    with stage("neural"):
        ckpt = Checkpoint.load(g["checkpoint"])
    if ckpt.arch.kind != "generator":
        raise ConfigError(f"{g['checkpoint']} holds a {ckpt.arch.kind}, not a generator")
    spec = SliceSpec(**ckpt.meta["slice"])
    if spec.representation != "cartesian_iq":
        raise ConfigError("continuation needs a generator trained on cartesian I/Q windows")
    L = spec.window_len
    n_seed = g["seed_windows"] or spec.n_steps
    steps = g["steps"]
    if n_seed < 1 or steps < 0:
        raise ConfigError("seed_windows must be >= 1 and steps >= 0")

    x = _generator_signal(cfg, seed)
    partition = pipeline.make_partition(cfg["partition"], x.size, seed)
    span = (n_seed + steps) * L
    with stage("dataset"):
        split = "train" if partition.leaky else "test"
        start = int(draw_starts(np.random.default_rng(derive_seed(seed, "continue")), partition,
                                split, span, 1, x.size, 1)[0])
    truth = x[start:start + span]
    seed_w = np.stack([truth[:n_seed * L].real, truth[:n_seed * L].imag]).reshape(2, n_seed, L)
    seed_w = seed_w.transpose(1, 0, 2)
    with stage("neural"):
        gen = free_run_generate(seed_w, steps, ckpt) if steps else np.zeros((0, 2, L))
    produced = np.concatenate([truth[:n_seed * L], _to_complex(gen)]).astype(np.complex64)

    write_iq(out / "continuation.iq", produced)
    rows = []
    for n in range(produced.size):
        rows.append({"sample": n, "segment": "seed" if n < n_seed * L else "generated",
                     "true_i": float(truth[n].real), "true_q": float(truth[n].imag),
                     "pred_i": float(produced[n].real), "pred_q": float(produced[n].imag)})
    _write_csv(out / "continuation.csv", CONTINUATION_FIELDS, rows)
    generated = produced[n_seed * L:]
    err = generated - truth[n_seed * L:]
    summary = {
        "start": start,
        "seed_windows": n_seed,
        "steps": steps,
        "window_len": L,
        "n_rows": len(rows),
        "generated_mse": float(np.mean(np.abs(err) ** 2)) if err.size else None,
        "generated_period": dominant_period(generated) if generated.size else None,
        "true_period": dominant_period(truth[n_seed * L:]) if steps else None,
    }
    _write_text(out / "summary.json", dumps(summary))
    return summary
