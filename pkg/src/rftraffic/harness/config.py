"""Experiment configuration: JSON file merged over desk-scale defaults.

Every command reads the same document; each uses only the sections it needs.
Unknown keys are rejected so a typo cannot silently fall back to a default.
"""
from __future__ import annotations

import copy
import hashlib
import json
import zlib
from pathlib import Path

import jsonschema
import numpy as np

from rftraffic.channel import ChannelConfig
from rftraffic.errors import ConfigError
from rftraffic.framing import FramerConfig
from rftraffic.modem import ModemConfig

DEFAULTS = {
    "dataset": {
        "path": None,
        "classes": ["chat", "ping", "streaming", "download"],
        "duration": 2.0,
        "background_fraction": 0.05,
        "regime": "clean",
        "regimes": ["clean"],
        "framer": {k: v for k, v in FramerConfig().to_dict().items()},
        "modem": {k: v for k, v in ModemConfig().to_dict().items() if k != "gray_map"},
        "channel": {k: v for k, v in ChannelConfig().to_dict().items() if k != "seed"},
    },
    "slice": {"n_steps": 32, "window_len": 128, "stride": 32, "offset_modulo": 1,
              "representation": "cartesian_iq"},
    "partition": {"train_fraction": 0.5, "block_len": 250_000, "leaky": False},
    "model": {"hidden": 64, "fc_hidden": 64, "dropout": 0.5, "readout": "last", "n_layers": 2},
    "train": {"epochs": 10, "batch_size": 32, "lr": 1e-3, "beta1": 0.9, "beta2": 0.999,
              "eps": 1e-8, "clip_norm": 5.0, "patience": None, "dtype": "float32",
              "eval_batch": 256},
    "examples": {"per_class": 2000, "test_per_class": None},
    "labels": None,
    "trade": {"n_steps": [32, 64, 128, 256, 512, 768], "bookkeeping_sps": None},
    "grid": {"axes": {"representation": ["cartesian_iq", "polar_r_theta"],
                      "regime": ["clean", "channel"]},
             "workers": 1},
    "generator": {
        "source": "idle",
        "duration": 0.5,
        "window_len": 32,
        "n_steps": 8,
        "examples": 2000,
        "val_examples": 500,
        "hidden": 64,
        "n_layers": 2,
        "train": {"epochs": 5},
        "checkpoint": None,
        "seed_windows": None,
        "steps": 64,
    },
}

_num = {"type": "number"}
_int = {"type": "integer"}
_opt_int = {"type": ["integer", "null"]}


def _obj(props, extra=False):
    return {"type": "object", "properties": props, "additionalProperties": extra}


SCHEMA = _obj({
    "dataset": _obj({
        "path": {"type": ["string", "null"]},
        "classes": {"type": "array", "minItems": 1,
                    "items": {"type": ["string", "object"]}},
        "duration": {"type": "number", "exclusiveMinimum": 0},
        "background_fraction": _num,
        "regime": {"enum": ["clean", "channel"]},
        "regimes": {"type": "array", "minItems": 1, "items": {"enum": ["clean", "channel"]}},
        "framer": {"type": "object"},
        "modem": {"type": "object"},
        "channel": {"type": "object"},
    }),
    "slice": _obj({"n_steps": _int, "window_len": _int, "stride": _int, "offset_modulo": _int,
                   "representation": {"type": "string"}}),
    "partition": _obj({"train_fraction": _num, "block_len": _int, "leaky": {"type": "boolean"}}),
    "model": _obj({"hidden": _int, "fc_hidden": _opt_int, "dropout": _num,
                   "readout": {"enum": ["last", "mean"]}, "n_layers": _int}),
    "train": _obj({"epochs": _int, "batch_size": _int, "lr": _num, "beta1": _num, "beta2": _num,
                   "eps": _num, "clip_norm": {"type": ["number", "null"]}, "patience": _opt_int,
                   "dtype": {"enum": ["float32", "float64"]}, "eval_batch": _int}),
    "examples": _obj({"per_class": _int, "test_per_class": _opt_int}),
    "labels": {"type": ["array", "null"], "items": {"type": "string"}},
    "trade": _obj({"n_steps": {"type": "array", "minItems": 1, "items": _int},
                   "bookkeeping_sps": _opt_int}),
    "grid": _obj({"axes": {"type": "object", "minProperties": 1,
                           "additionalProperties": {"type": "array", "minItems": 1}},
                  "workers": _int}),
    "generator": _obj({
        "source": {"type": ["string", "object"]}, "duration": _num, "window_len": _int,
        "n_steps": _int, "examples": _int, "val_examples": _int, "hidden": _int,
        "n_layers": _int, "train": {"type": "object"}, "checkpoint": {"type": ["string", "null"]},
        "seed_windows": _opt_int, "steps": _int,
    }),
})


def merge(base, override):
    """Recursive dict merge; lists and scalars in ``override`` replace those in ``base``."""
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k != "axes":
            out[k] = merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def resolve(user=None):
    """Defaults overlaid with ``user``, validated."""
    cfg = merge(DEFAULTS, user or {})
    try:
        jsonschema.validate(cfg, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"{where}: {exc.message}") from None
    return cfg


def load_config(path):
    try:
        user = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file {path} not found") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is not valid JSON: {exc}") from None
    if not isinstance(user, dict):
        raise ConfigError(f"{path} must hold a JSON object")
    return resolve(user)


def dumps(obj):
    """Canonical JSON used for every file the harness writes."""
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n"


def digest(obj):
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()


def derive_seed(seed, *keys):
    """Independent 63-bit seed for a named sub-stream of the run seed."""
    words = [int(seed) & 0xFFFFFFFF, (int(seed) >> 32) & 0xFFFFFFFF]
    words += [zlib.crc32(str(k).encode()) for k in keys]
    return int(np.random.SeedSequence(words).generate_state(1, np.uint64)[0] >> np.uint64(1))


def get_path(cfg, dotted):
    node = cfg
    for part in dotted.split("."):
        node = node[part]
    return node


def set_path(cfg, dotted, value):
    parts = dotted.split(".")
    node = cfg
    for part in parts[:-1]:
        node = node[part]
    if parts[-1] not in node:
        raise ConfigError(f"unknown config key {dotted!r}")
    node[parts[-1]] = value


# Short grid-axis names for the knobs the trade studies vary.
AXIS_ALIASES = {
    "representation": "slice.representation",
    "regime": "dataset.regime",
    "offset_modulo": "slice.offset_modulo",
    "window_len": "slice.window_len",
    "stride": "slice.stride",
    "n_steps": "slice.n_steps",
    "hidden": "model.hidden",
    "readout": "model.readout",
}


def axis_path(name):
    return AXIS_ALIASES.get(name, name)
