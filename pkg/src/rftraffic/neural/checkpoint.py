"""Model checkpoint: parameters, Adam moments, step/epoch and RNG state.

File layout (all integers little-endian)::

    8 bytes   magic b"RFTCKPT1"
    8 bytes   u64 header length H
    H bytes   UTF-8 JSON header (sorted keys)
    ...       raw tensor blobs, in header order, at the offsets it lists

Each header tensor entry has ``name``, ``dtype`` (numpy string such as
``<f4``), ``shape``, ``offset`` (from the start of the blob area) and
``nbytes``. Tensor names are ``param/<p>``, ``adam_m/<p>`` and ``adam_v/<p>``.
"""
from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from rftraffic.errors import SchemaMismatch
from rftraffic.neural.model import ModelArch
from rftraffic.neural.optim import AdamState

MAGIC = b"RFTCKPT1"
CHECKPOINT_VERSION = 1


@dataclass
class Checkpoint:
    arch: ModelArch
    params: dict
    adam: AdamState = field(default_factory=AdamState)
    epoch: int = 0
    rng_state: dict | None = None
    meta: dict = field(default_factory=dict)

    def to_bytes(self):
        tensors = [("param/" + k, v) for k, v in self.params.items()]
        tensors += [("adam_m/" + k, v) for k, v in self.adam.m.items()]
        tensors += [("adam_v/" + k, v) for k, v in self.adam.v.items()]
        entries, blobs, offset = [], [], 0
        for name, arr in tensors:
            arr = np.ascontiguousarray(arr)
            le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
            raw = le.tobytes()
            entries.append({"name": name, "dtype": le.dtype.str, "shape": list(arr.shape),
                            "offset": offset, "nbytes": len(raw)})
            blobs.append(raw)
            offset += len(raw)
        header = {
            "version": CHECKPOINT_VERSION,
            "arch": self.arch.to_dict(),
            "arch_hash": self.arch.digest(),
            "epoch": self.epoch,
            "step": self.adam.step,
            "rng_state": self.rng_state,
            "meta": self.meta,
            "tensors": entries,
        }
        hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
        return MAGIC + struct.pack("<Q", len(hbytes)) + hbytes + b"".join(blobs)

    @classmethod
    def from_bytes(cls, data):
        if data[:8] != MAGIC:
            raise SchemaMismatch("not a checkpoint file (bad magic)")
        (hlen,) = struct.unpack_from("<Q", data, 8)
        header = json.loads(data[16:16 + hlen])
        if header.get("version") != CHECKPOINT_VERSION:
            raise SchemaMismatch(f"unsupported checkpoint version {header.get('version')}")
        arch = ModelArch.from_dict(header["arch"])
        if arch.digest() != header["arch_hash"]:
            raise SchemaMismatch("architecture hash mismatch")
        base = 16 + hlen
        groups = {"param": {}, "adam_m": {}, "adam_v": {}}
        for e in header["tensors"]:
            start = base + e["offset"]
            if start + e["nbytes"] > len(data):
                raise SchemaMismatch(f"tensor {e['name']} runs past end of file")
            arr = np.frombuffer(data, dtype=e["dtype"], count=e["nbytes"] // np.dtype(e["dtype"]).itemsize,
                                offset=start).reshape(e["shape"])
            group, name = e["name"].split("/", 1)
            groups[group][name] = arr.astype(arr.dtype.newbyteorder("="), copy=True)
        adam = AdamState(groups["adam_m"], groups["adam_v"], header["step"])
        return cls(arch, groups["param"], adam, header["epoch"], header["rng_state"], header["meta"])

    def save(self, path):
        path = Path(path)
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_bytes(self.to_bytes())
        os.replace(tmp, path)
        return path

    @classmethod
    def load(cls, path):
        return cls.from_bytes(Path(path).read_bytes())
