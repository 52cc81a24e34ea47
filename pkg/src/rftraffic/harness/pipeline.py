"""The signal chain behind every command: trace -> framing -> modem -> channel -> dataset.

Each step runs inside :func:`stage`, so any failure reaches the user tagged
with the stage that produced it.
"""
from __future__ import annotations

import contextlib
import hashlib
import logging

import numpy as np

from rftraffic import trace as trace_mod
from rftraffic.channel import ChannelConfig, apply_channel
from rftraffic.dataset import (
    SliceSpec,
    leaky_partition,
    partition_blocks,
    read_dataset,
)
from rftraffic.errors import ConfigError, InsufficientClasses, RfTrafficError, StageError
from rftraffic.framing import FramerConfig, schedule_bitstream
from rftraffic.harness.config import derive_seed
from rftraffic.modem import ModemConfig, modulate

log = logging.getLogger("rftraffic")

IDLE = "idle"


@contextlib.contextmanager
def stage(name):
    """Tag exceptions escaping the block with pipeline stage ``name``."""
    try:
        yield
    except RfTrafficError:
        raise
    except (KeyboardInterrupt, SystemExit):
        raise
    except Exception as exc:
        raise StageError(name, exc) from exc


def resolve_profile(entry):
    """Catalog name, ``"idle"`` (no packets at all) or an inline profile dict."""
    if isinstance(entry, dict):
        return trace_mod.ClassProfile.from_dict(entry)
    if entry == IDLE:
        return None
    if entry not in trace_mod.CATALOG:
        raise ConfigError(f"unknown traffic class {entry!r}; "
                          f"choose from {sorted(trace_mod.CATALOG) + [IDLE]} or give a profile")
    return trace_mod.CATALOG[entry]


def class_name(entry):
    return entry["name"] if isinstance(entry, dict) else entry


def synth_class(entry, ds_cfg, seed, index):
    """Trace, bit stream and clean baseband signal for one class."""
    framer = FramerConfig.from_dict(ds_cfg["framer"])
    modem = ModemConfig.from_dict(ds_cfg["modem"])
    name = class_name(entry)
    with stage("trace"):
        profile = resolve_profile(entry)
        if profile is None:
            tr = trace_mod.TrafficTrace([], name, float(ds_cfg["duration"]))
        else:
            tr = trace_mod.synth_trace(profile, ds_cfg["duration"], derive_seed(seed, "trace", index),
                                       background_fraction=ds_cfg["background_fraction"])
    with stage("framing"):
        bits = schedule_bitstream(tr, framer)
    with stage("modem"):
        sig = modulate(bits.bits, modem, framer.bit_rate)
    return tr, bits, sig


def impair(sig, regime, ds_cfg, seed, index):
    """Apply the regime's channel; returns (complex64 samples, draw record or None)."""
    with stage("channel"):
        if regime == "clean":
            return sig.samples.astype(np.complex64), None
        cfg = ChannelConfig.from_dict({**ds_cfg["channel"], "seed": derive_seed(seed, "channel", index)})
        out = apply_channel(sig, cfg)
        return out.samples.astype(np.complex64), out.meta["channel"]


def synthesize(ds_cfg, seed, regimes):
    """Recordings for every class under each requested regime from one set of traces.

    Returns ``(recordings, info)`` where ``recordings[regime][class]`` is a
    complex64 array and ``info`` holds per-class bookkeeping for manifests.
    """
    recordings = {r: {} for r in regimes}
    info = {"classes": {}, "draws": {r: [] for r in regimes}}
    for k, entry in enumerate(ds_cfg["classes"]):
        name = class_name(entry)
        if name in info["classes"]:
            raise ConfigError(f"class {name!r} listed twice")
        tr, bits, sig = synth_class(entry, ds_cfg, seed, k)
        info["classes"][name] = {
            "packets": len(tr),
            "payload_bytes": int(sum(len(r.payload) for r in tr.records)),
            "bits": int(bits.bits.size),
            "bits_sha256": hashlib.sha256(bits.to_bytes()).hexdigest(),
        }
        for regime in regimes:
            x, draw = impair(sig, regime, ds_cfg, seed, k)
            recordings[regime][name] = x
            if draw is not None:
                info["draws"][regime].append({"class": name, **draw})
        log.info("synthesized %s: %d packets, %d bits", name, len(tr), bits.bits.size)
    return recordings, info


def sample_rate(ds_cfg):
    modem = ModemConfig.from_dict(ds_cfg["modem"])
    return FramerConfig.from_dict(ds_cfg["framer"]).bit_rate / 2 * modem.samples_per_symbol


def load_recordings(cfg, seed, regime=None):
    """Class recordings for training: read from ``dataset.path`` or synthesized."""
    ds_cfg = cfg["dataset"]
    if ds_cfg["path"]:
        if regime is not None and regime != ds_cfg["regime"]:
            raise ConfigError("the regime of an on-disk dataset cannot be changed")
        with stage("dataset"):
            rs = read_dataset(ds_cfg["path"])
        return dict(rs.recordings)
    regime = regime or ds_cfg["regime"]
    recordings, _ = synthesize(ds_cfg, seed, [regime])
    return recordings[regime]


def select_classes(recordings, labels):
    """Order recordings by the configured label list, requiring every label to be populated."""
    labels = list(labels) if labels else list(recordings)
    missing = [n for n in labels if n not in recordings or len(recordings[n]) == 0]
    if missing:
        raise InsufficientClasses(
            f"{len(labels)} labels configured but {len(labels) - len(missing)} have recordings; "
            f"missing: {', '.join(missing)}")
    if len(labels) < 2:
        raise InsufficientClasses("a classifier needs at least two classes")
    return {n: recordings[n] for n in labels}


def slice_spec(slice_cfg):
    with stage("dataset"):
        return SliceSpec(**slice_cfg)


def make_partition(part_cfg, total, seed):
    with stage("dataset"):
        if part_cfg["leaky"]:
            return leaky_partition(total, part_cfg["train_fraction"], derive_seed(seed, "partition"))
        return partition_blocks(total, part_cfg["train_fraction"], derive_seed(seed, "partition"),
                                part_cfg["block_len"])
