"""Stacked-LSTM classifier and next-window generator.

Both models read a batch of examples shaped (B, N, C, L); every time step sees
one flattened C*L window. The classifier head is
``dropout -> dense(ReLU) -> dropout -> dense -> softmax`` on the read-out
hidden state; the generator head is a single linear layer of width C*L.
Dropout is inverted (scaled at train time) and sits between every pair of
layers, never on recurrent connections.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass

import numpy as np

from rftraffic.errors import ShapeMismatch
from rftraffic.neural.lstm import init_lstm, lstm_layer_backward, lstm_layer_forward


@dataclass(frozen=True)
class ModelArch:
    kind: str  # "classifier" | "generator"
    input_size: int
    n_outputs: int
    hidden: int = 256
    n_layers: int = 2
    fc_hidden: int | None = 256
    dropout: float = 0.5
    readout: str = "last"  # "last" | "mean"

    def __post_init__(self):
        if self.kind not in ("classifier", "generator"):
            raise ValueError(f"unknown model kind {self.kind!r}")
        if self.readout not in ("last", "mean"):
            raise ValueError(f"unknown readout {self.readout!r}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")

    @classmethod
    def classifier(cls, input_size, n_classes, hidden=256, fc_hidden=256, dropout=0.5,
                   readout="last", n_layers=2):
        return cls("classifier", input_size, n_classes, hidden, n_layers, fc_hidden, dropout, readout)

    @classmethod
    def generator(cls, input_size, hidden=256, dropout=0.0, readout="last", n_layers=2):
        return cls("generator", input_size, input_size, hidden, n_layers, None, dropout, readout)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)

    def digest(self):
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()


def init_params(arch, seed, dtype=np.float32):
    rng = np.random.default_rng(seed)
    params = {}
    n_in = arch.input_size
    for layer in range(arch.n_layers):
        for k, v in init_lstm(rng, n_in, arch.hidden, dtype).items():
            params[f"lstm{layer}.{k}"] = v
        n_in = arch.hidden
    if arch.fc_hidden:
        params["fc.W"] = (rng.uniform(-1, 1, (arch.fc_hidden, n_in)) / np.sqrt(n_in)).astype(dtype)
        params["fc.b"] = np.zeros(arch.fc_hidden, dtype=dtype)
        n_in = arch.fc_hidden
    params["out.W"] = (rng.uniform(-1, 1, (arch.n_outputs, n_in)) / np.sqrt(n_in)).astype(dtype)
    params["out.b"] = np.zeros(arch.n_outputs, dtype=dtype)
    return params


def _layer(params, i):
    return {k: params[f"lstm{i}.{k}"] for k in ("W", "U", "b")}


def softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


class _Dropout:
    def __init__(self, p, rng, dtype):
        self.p = p
        self.rng = rng
        self.dtype = dtype

    def mask(self, shape):
        if self.rng is None or self.p == 0.0:
            return None
        keep = self.rng.random(shape) >= self.p
        return (keep / (1.0 - self.p)).astype(self.dtype)


def _apply(x, mask):
    return x if mask is None else x * mask


def forward(arch, params, x, train=False, dropout_seed=None):
    """Model output for a batch (probabilities or predicted window) and a backward cache."""
    x = np.asarray(x)
    if x.ndim == 4:
        x = x.reshape(x.shape[0], x.shape[1], -1)
    if x.ndim != 3 or x.shape[2] != arch.input_size:
        raise ShapeMismatch(f"expected (B, N, {arch.input_size}) input, got {np.shape(x)}")
    dtype = params["out.W"].dtype
    drop = _Dropout(arch.dropout, np.random.default_rng(dropout_seed) if train else None, dtype)

    seq = np.ascontiguousarray(x.transpose(1, 0, 2), dtype=dtype)
    layer_caches, masks = [], []
    for i in range(arch.n_layers):
        if i > 0:
            m = drop.mask(seq.shape)
            masks.append(m)
            seq = _apply(seq, m)
        seq, cache = lstm_layer_forward(seq, _layer(params, i))
        layer_caches.append(cache)

    r = seq[-1] if arch.readout == "last" else seq.mean(axis=0)
    m_r = drop.mask(r.shape)
    r_d = _apply(r, m_r)
    cache = {"layers": layer_caches, "masks": masks, "m_r": m_r, "r_d": r_d, "n_steps": seq.shape[0]}

    h = r_d
    if arch.fc_hidden:
        pre = h @ params["fc.W"].T + params["fc.b"]
        a = np.maximum(pre, 0)
        m_f = drop.mask(a.shape)
        h = _apply(a, m_f)
        cache.update(fc_pre=pre, m_f=m_f, fc_out=h)
    out = h @ params["out.W"].T + params["out.b"]
    cache["head_in"] = h
    if arch.kind == "classifier":
        return softmax(out), cache
    return out, cache


def backward(arch, params, cache, dout):
    """Gradients of every parameter given d(loss)/d(pre-activation output)."""
    grads = {}
    h = cache["head_in"]
    grads["out.W"] = dout.T @ h
    grads["out.b"] = dout.sum(axis=0)
    dh = dout @ params["out.W"]
    if arch.fc_hidden:
        dh = _apply(dh, cache["m_f"]) * (cache["fc_pre"] > 0)
        grads["fc.W"] = dh.T @ cache["r_d"]
        grads["fc.b"] = dh.sum(axis=0)
        dh = dh @ params["fc.W"]
    dr = _apply(dh, cache["m_r"])

    top = cache["layers"][-1]["hs"]
    dseq = np.zeros_like(top)
    if arch.readout == "last":
        dseq[-1] = dr
    else:
        dseq[:] = dr / cache["n_steps"]
    for i in range(arch.n_layers - 1, -1, -1):
        dx, g = lstm_layer_backward(dseq, cache["layers"][i], _layer(params, i))
        for k, v in g.items():
            grads[f"lstm{i}.{k}"] = v
        if i > 0:
            dseq = _apply(dx, cache["masks"][i - 1])
    return {k: grads[k] for k in params}


def loss_crossentropy(probs, one_hot, eps=1e-12):
    """Mean categorical cross-entropy; probabilities are clamped at ``eps``."""
    probs = np.asarray(probs, dtype=np.float64)
    return float(-np.mean(np.sum(one_hot * np.log(np.clip(probs, eps, 1.0)), axis=-1)))


def loss_mse(pred, target):
    """Mean squared error over every output value."""
    d = np.asarray(pred, dtype=np.float64) - np.asarray(target, dtype=np.float64)
    return float(np.mean(d * d))


def loss_and_grads(arch, params, x, y, train=True, dropout_seed=None):
    """Mean batch loss, gradients and model output.

    ``y`` is integer labels for the classifier and target windows (B, C*L) for
    the generator.
    """
    out, cache = forward(arch, params, x, train, dropout_seed)
    B = out.shape[0]
    if arch.kind == "classifier":
        y = np.asarray(y, dtype=np.int64)
        onehot = np.zeros_like(out)
        onehot[np.arange(B), y] = 1
        loss = loss_crossentropy(out, onehot)
        dout = (out - onehot) / B
    else:
        y = np.asarray(y, dtype=out.dtype).reshape(out.shape)
        loss = loss_mse(out, y)
        dout = 2.0 * (out - y) / out.size
    return loss, backward(arch, params, cache, dout.astype(out.dtype)), out


def forward_classifier(tensor, arch, params, train_mode=False, dropout_seed=None):
    """Class probabilities for one example (N, C, L) or a batch (B, N, C, L)."""
    x = np.asarray(tensor)
    single = x.ndim == 3
    probs, _ = forward(arch, params, x[None] if single else x, train_mode, dropout_seed)
    return probs[0] if single else probs


def predict(arch, params, x, batch_size=256):
    """Eval-mode outputs for a large array, in batches."""
    outs = [forward(arch, params, x[i:i + batch_size])[0] for i in range(0, len(x), batch_size)]
    return np.concatenate(outs) if outs else np.zeros((0, arch.n_outputs))
