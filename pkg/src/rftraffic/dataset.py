"""Slicing recordings into N x C x L example tensors, partitioning, and on-disk IO.

An example starting at sample ``s`` stacks windows ``[s + i*M, s + i*M + L)``
for ``i < N`` and so consumes ``L + (N-1)*M`` complex samples. Recordings are
cut into hard blocks (250,000 samples by default) assigned wholly to train or
test, and no example crosses a block edge.
"""
from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import jsonschema
import numpy as np

from rftraffic.errors import (
    CorruptLength,
    DatasetError,
    InsufficientData,
    MisalignedStart,
    OutOfBounds,
    SchemaMismatch,
    TooShort,
)
from rftraffic.modem import IqSignal, samples_of

BLOCK_LEN = 250_000
REPRESENTATIONS = ("cartesian_iq", "polar_r_theta", "r_only", "theta_only")
SCHEMA_VERSION = 1


@dataclass(frozen=True)
class SliceSpec:
    n_steps: int = 32
    window_len: int = 128
    stride: int = 32
    offset_modulo: int = 1
    representation: str = "cartesian_iq"

    def __post_init__(self):
        if min(self.n_steps, self.window_len, self.stride, self.offset_modulo) < 1:
            raise DatasetError("n_steps, window_len, stride and offset_modulo must be >= 1")
        if self.representation not in REPRESENTATIONS:
            raise DatasetError(f"unknown representation {self.representation!r}")

    @property
    def span(self):
        """Complex samples consumed by one example."""
        return self.window_len + (self.n_steps - 1) * self.stride

    @property
    def generative_span(self):
        """Samples for N input windows plus the target window."""
        return self.window_len + self.n_steps * self.stride

    @property
    def channels(self):
        return 2 if self.representation in ("cartesian_iq", "polar_r_theta") else 1

    @property
    def step_size(self):
        """Real values fed to the model per time step."""
        return self.channels * self.window_len

    def to_dict(self):
        return asdict(self)


def span_bookkeeping(n_steps, window_len=128, stride=32, samples_per_symbol=2, bits_per_symbol=2):
    """Samples, symbols and bits behind one example."""
    samples = window_len + (n_steps - 1) * stride
    symbols = samples // samples_per_symbol
    return {"n_samples": samples, "n_symbols": symbols, "n_bits": symbols * bits_per_symbol}


def to_representation(window, representation):
    """Complex samples (..., L) -> real channels (..., C, L).

    Polar angles lie in (-π, π]; the origin maps to (0, 0).
    """
    z = np.asarray(window)
    if representation == "cartesian_iq":
        return np.stack([z.real, z.imag], axis=-2)
    r = np.abs(z)
    theta = np.angle(z)
    theta = np.where(r == 0, 0.0, np.where(theta <= -np.pi, np.pi, theta))
    if representation == "polar_r_theta":
        return np.stack([r, theta], axis=-2)
    if representation == "r_only":
        return r[..., None, :]
    if representation == "theta_only":
        return theta[..., None, :]
    raise DatasetError(f"unknown representation {representation!r}")


def from_representation(channels, representation):
    """Inverse of :func:`to_representation` for the two-channel forms."""
    c = np.asarray(channels)
    if representation == "cartesian_iq":
        return c[..., 0, :] + 1j * c[..., 1, :]
    if representation == "polar_r_theta":
        return c[..., 0, :] * np.exp(1j * c[..., 1, :])
    raise DatasetError(f"{representation} cannot be inverted to complex samples")


def one_hot(labels, n_classes):
    labels = np.asarray(labels, dtype=np.int64)
    out = np.zeros(labels.shape + (n_classes,), dtype=np.float32)
    np.put_along_axis(out, labels[..., None], 1.0, axis=-1)
    return out


@dataclass(frozen=True)
class PartitionMap:
    block_len: int
    assignment: tuple  # "train" / "test" per full block
    train_fraction: float
    seed: int
    leaky: bool = False
    total_samples: int = 0

    def blocks(self, split):
        """(start, stop) sample ranges of the blocks assigned to ``split``."""
        if self.leaky:
            return [(0, self.total_samples)]
        return [(i * self.block_len, (i + 1) * self.block_len)
                for i, a in enumerate(self.assignment) if a == split]

    def block_of(self, start):
        return start // self.block_len

    def to_dict(self):
        return {"block_len": self.block_len, "assignment": list(self.assignment),
                "train_fraction": self.train_fraction, "seed": self.seed,
                "leaky": self.leaky, "total_samples": self.total_samples}

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["assignment"] = tuple(d["assignment"])
        return cls(**d)


def partition_blocks(total_samples, train_fraction=0.5, seed=0, block_len=BLOCK_LEN):
    """Assign each full block to train or test.

    Exactly ``floor(train_fraction * n_blocks)`` blocks go to train, chosen by
    a seeded shuffle; the trailing partial block is discarded.
    """
    n_blocks = total_samples // block_len
    if n_blocks < 2:
        raise TooShort(f"{total_samples} samples hold fewer than two {block_len}-sample blocks")
    if not 0.0 <= train_fraction <= 1.0:
        raise DatasetError("train_fraction must lie in [0, 1]")
    n_train = int(math.floor(train_fraction * n_blocks + 1e-9))
    order = np.random.default_rng(seed).permutation(n_blocks)
    assignment = ["test"] * n_blocks
    for i in order[:n_train]:
        assignment[int(i)] = "train"
    return PartitionMap(block_len, tuple(assignment), train_fraction, seed,
                        total_samples=total_samples)


def leaky_partition(total_samples, train_fraction=0.5, seed=0):
    """Whole-recording "partition": splits share the signal, never the same start."""
    return PartitionMap(total_samples, (), train_fraction, seed, leaky=True,
                        total_samples=total_samples)


@dataclass
class ExampleTensor:
    values: np.ndarray  # (N, C, L)
    source_offset: int
    label: int | None = None
    target: np.ndarray | None = None


def _window_stack(x, starts, spec, n_windows):
    view = np.lib.stride_tricks.sliding_window_view(x, spec.window_len)
    idx = np.asarray(starts)[:, None] + spec.stride * np.arange(n_windows)[None, :]
    return view[idx]


def slice_windows(x, starts, spec, n_windows=None, dtype=np.float32):
    """Batch of examples (B, n_windows, C, L) beginning at ``starts``."""
    n_windows = spec.n_steps if n_windows is None else n_windows
    w = _window_stack(x, starts, spec, n_windows)
    return to_representation(w, spec.representation).astype(dtype, copy=False)


def _check_start(n, start, span, spec, partition):
    if start % spec.offset_modulo:
        raise MisalignedStart(f"start {start} is not a multiple of {spec.offset_modulo}")
    if start < 0 or start + span > n:
        raise OutOfBounds(f"example [{start}, {start + span}) outside signal of {n} samples")
    if partition is not None and not partition.leaky:
        if partition.block_of(start) != partition.block_of(start + span - 1):
            raise OutOfBounds(f"example [{start}, {start + span}) crosses a partition block edge")


def slice_example(signal, start, spec, partition=None, label=None):
    x = samples_of(signal)
    _check_start(x.size, start, spec.span, spec, partition)
    values = slice_windows(x, [start], spec)[0]
    return ExampleTensor(values, int(start), label)


def slice_target(signal, start, spec):
    """Flattened window N (the one right after the inputs) of the example at ``start``."""
    x = samples_of(signal)
    _check_start(x.size, start, spec.generative_span, spec, None)
    t0 = start + spec.n_steps * spec.stride
    return to_representation(x[t0:t0 + spec.window_len], spec.representation).reshape(-1)


def valid_starts(partition, split, span, modulo, n_samples):
    """Per-block (first_start, count) of aligned starts that fit entirely in a block."""
    out = []
    for b0, b1 in partition.blocks(split):
        b1 = min(b1, n_samples)
        first = -(-b0 // modulo) * modulo
        last = b1 - span
        count = (last - first) // modulo + 1 if last >= first else 0
        out.append((first, count))
    return out


def draw_starts(rng, partition, split, span, modulo, n_samples, count):
    ranges = valid_starts(partition, split, span, modulo, n_samples)
    total = sum(c for _, c in ranges)
    if count > total:
        raise InsufficientData(
            f"requested {count} {split} examples but only {total} valid starts exist",
            achievable=total,
        )
    picks = rng.choice(total, size=count, replace=False)
    firsts = np.array([f for f, _ in ranges], dtype=np.int64)
    cum = np.cumsum([0] + [c for _, c in ranges])
    block = np.searchsorted(cum, picks, side="right") - 1
    return firsts[block] + (picks - cum[block]) * modulo


@dataclass
class ExampleSet:
    """Examples referenced by (recording, start) over shared recordings; sliced on demand.

    ``sources`` names the recording each example is cut from and defaults to
    ``labels``. The two only differ after :meth:`with_labels`, which relabels
    examples without moving them.
    """

    recordings: list
    labels: np.ndarray
    starts: np.ndarray
    spec: SliceSpec
    class_names: list = field(default_factory=list)
    sources: np.ndarray = None

    def __post_init__(self):
        if self.sources is None:
            self.sources = self.labels

    def __len__(self):
        return int(self.labels.size)

    @property
    def n_classes(self):
        return len(self.class_names) if self.class_names else len(self.recordings)

    def batch(self, indices, dtype=np.float32):
        indices = np.asarray(indices, dtype=np.int64)
        out = np.empty((indices.size, self.spec.n_steps, self.spec.channels, self.spec.window_len),
                       dtype=dtype)
        src = self.sources[indices]
        for k in np.unique(src):
            sel = np.flatnonzero(src == k)
            out[sel] = slice_windows(self.recordings[k], self.starts[indices[sel]], self.spec, dtype=dtype)
        return out

    def tensors(self, dtype=np.float32):
        return self.batch(np.arange(len(self)), dtype)

    def one_hot(self):
        return one_hot(self.labels, self.n_classes)

    def sample_ranges(self):
        """(recording, first, stop) sample interval covered by each example."""
        return np.stack([self.sources, self.starts, self.starts + self.spec.span], axis=1)

    def subset(self, indices):
        indices = np.asarray(indices, dtype=np.int64)
        return ExampleSet(self.recordings, self.labels[indices], self.starts[indices], self.spec,
                          self.class_names, self.sources[indices])

    def with_labels(self, labels):
        """Same windows under new labels (e.g. a shuffled-label control)."""
        labels = np.asarray(labels, dtype=np.int64)
        if labels.shape != self.labels.shape:
            raise DatasetError("need one label per example")
        return ExampleSet(self.recordings, labels, self.starts, self.spec, self.class_names,
                          self.sources)

    def digest(self):
        h = hashlib.sha256()
        h.update(json.dumps(self.spec.to_dict(), sort_keys=True).encode())
        h.update(self.labels.astype("<i8").tobytes())
        h.update(self.sources.astype("<i8").tobytes())
        h.update(self.starts.astype("<i8").tobytes())
        return h.hexdigest()


def _signals(recordings):
    if isinstance(recordings, dict):
        names = list(recordings)
        sigs = [samples_of(recordings[n]) for n in names]
    else:
        sigs = [samples_of(r) for r in recordings]
        names = [str(i) for i in range(len(sigs))]
    return names, sigs


def split_counts(partition, examples_per_class):
    if partition.leaky:
        n_train = int(math.floor(examples_per_class * partition.train_fraction + 1e-9))
    else:
        n_blocks = len(partition.assignment)
        n_tr_blocks = partition.assignment.count("train")
        n_train = int(round(examples_per_class * n_tr_blocks / n_blocks))
    return n_train, examples_per_class - n_train


def build_classification_dataset(recordings, spec, partition, examples_per_class, seed,
                                 test_per_class=None):
    """Balanced train/test example sets drawn from each class recording.

    ``examples_per_class`` is split between train and test in proportion to
    the partition's train blocks unless ``test_per_class`` is given, in which
    case ``examples_per_class`` counts train examples only.
    """
    names, sigs = _signals(recordings)
    rng = np.random.default_rng(seed)
    if test_per_class is None:
        n_train, n_test = split_counts(partition, examples_per_class)
    else:
        n_train, n_test = examples_per_class, test_per_class

    out = {}
    labels = {"train": [], "test": []}
    starts = {"train": [], "test": []}
    for k, x in enumerate(sigs):
        if partition.leaky:
            both = draw_starts(rng, partition, "train", spec.span, spec.offset_modulo, x.size,
                               n_train + n_test)
            drawn = {"train": both[:n_train], "test": both[n_train:]}
        else:
            drawn = {split: draw_starts(rng, partition, split, spec.span, spec.offset_modulo,
                                        x.size, n)
                     for split, n in (("train", n_train), ("test", n_test))}
        for split in ("train", "test"):
            starts[split].append(drawn[split])
            labels[split].append(np.full(drawn[split].size, k, dtype=np.int64))
    for split in ("train", "test"):
        out[split] = ExampleSet(sigs, np.concatenate(labels[split]), np.concatenate(starts[split]),
                                spec, names)
    return out["train"], out["test"]


@dataclass
class GenerativeSet:
    recording: np.ndarray
    starts: np.ndarray
    spec: SliceSpec

    def __len__(self):
        return int(self.starts.size)

    def batch(self, indices, dtype=np.float32):
        s = self.starts[np.asarray(indices, dtype=np.int64)]
        w = slice_windows(self.recording, s, self.spec, self.spec.n_steps + 1, dtype)
        return w[:, :-1], w[:, -1].reshape(len(s), -1)

    def tensors(self, dtype=np.float32):
        return self.batch(np.arange(len(self)), dtype)


def build_generative_dataset(signal, spec, partition, count, seed, split="train"):
    """(N input windows, flattened window N) pairs from one recording."""
    x = samples_of(signal)
    rng = np.random.default_rng(seed)
    starts = draw_starts(rng, partition, split, spec.generative_span, spec.offset_modulo, x.size,
                         count)
    return GenerativeSet(x, starts, spec)


# -- on-disk recordings --------------------------------------------------------

MANIFEST_SCHEMA = {
    "type": "object",
    "required": ["schema_version", "seed", "sample_rate", "class_names", "files",
                 "framer", "modem", "channel"],
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "seed": {"type": "integer"},
        "sample_rate": {"type": "number", "exclusiveMinimum": 0},
        "class_names": {"type": "array", "items": {"type": "string"}, "minItems": 1},
        "files": {
            "type": "object",
            "additionalProperties": {
                "type": "object",
                "required": ["path", "n_samples"],
                "properties": {"path": {"type": "string"},
                               "n_samples": {"type": "integer", "minimum": 0}},
            },
        },
        "framer": {"type": "object"},
        "modem": {"type": "object"},
        "channel": {"type": "object"},
    },
}

IQ_RECORD_BYTES = 8  # float32 I + float32 Q


def write_iq(path, samples):
    """Raw interleaved little-endian float32 I/Q, no header."""
    data = np.ascontiguousarray(np.asarray(samples).astype("<c8"))
    with open(path, "wb") as f:
        f.write(data.tobytes())


def read_iq(path):
    raw = Path(path).read_bytes()
    if len(raw) % IQ_RECORD_BYTES:
        raise CorruptLength(f"{path}: {len(raw)} bytes is not a whole number of I/Q records")
    return np.frombuffer(raw, dtype="<c8").astype(np.complex64)


@dataclass
class RecordingSet:
    """Per-class IQ recordings plus the manifest that produced them."""

    recordings: dict
    manifest: dict

    @property
    def class_names(self):
        return list(self.manifest["class_names"])

    def signals(self):
        return [self.recordings[n] for n in self.class_names]


def write_dataset(path, recordings, manifest, channel_draws=()):
    """Write one ``<class>.iq`` file per class, ``manifest.json`` and the draw log.

    Files are staged under a temporary name and renamed into place.
    """
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    manifest = dict(manifest)
    manifest.setdefault("schema_version", SCHEMA_VERSION)
    files = {}
    for name, sig in recordings.items():
        x = samples_of(sig)
        fname = f"{name}.iq"
        tmp = path / (fname + ".tmp")
        write_iq(tmp, x)
        os.replace(tmp, path / fname)
        files[name] = {"path": fname, "n_samples": int(x.size),
                       "sha256": hashlib.sha256((path / fname).read_bytes()).hexdigest()}
    manifest["files"] = files
    manifest.setdefault("class_names", list(recordings))
    try:
        jsonschema.validate(manifest, MANIFEST_SCHEMA)
    except jsonschema.ValidationError as exc:
        raise SchemaMismatch(f"manifest invalid: {exc.message}") from None
    if channel_draws:
        with open(path / "channel_draws.jsonl", "w") as f:
            for line in channel_draws:
                f.write(line + "\n")
    tmp = path / "manifest.json.tmp"
    tmp.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    os.replace(tmp, path / "manifest.json")
    return path


def read_manifest(path):
    path = Path(path)
    try:
        manifest = json.loads((path / "manifest.json").read_text())
    except FileNotFoundError:
        raise SchemaMismatch(f"{path} has no manifest.json") from None
    except json.JSONDecodeError as exc:
        raise SchemaMismatch(f"manifest is not valid JSON: {exc}") from None
    try:
        jsonschema.validate(manifest, MANIFEST_SCHEMA)
    except jsonschema.ValidationError as exc:
        raise SchemaMismatch(f"manifest invalid: {exc.message}") from None
    return manifest


def read_dataset(path):
    path = Path(path)
    manifest = read_manifest(path)
    recordings = {}
    for name in manifest["class_names"]:
        if name not in manifest["files"]:
            raise SchemaMismatch(f"class {name!r} has no file entry")
        entry = manifest["files"][name]
        x = read_iq(path / entry["path"])
        if x.size != entry["n_samples"]:
            raise CorruptLength(
                f"{entry['path']}: {x.size} samples on disk, manifest says {entry['n_samples']}"
            )
        recordings[name] = x
    return RecordingSet(recordings, manifest)

