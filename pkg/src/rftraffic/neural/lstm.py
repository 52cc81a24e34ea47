"""LSTM cell and layer with exact backpropagation through time.

Gate order inside the stacked 4H axis is input, forget, cell, output:

    z = W x + U h_prev + b
    i, f, o = sigmoid(z_i), sigmoid(z_f), sigmoid(z_o);  g = tanh(z_g)
    c = f * c_prev + i * g
    h = o * tanh(c)

Sequences are time-major: ``(N, B, D)``.
"""
import numpy as np

from rftraffic._core import kernels
from rftraffic.errors import ShapeMismatch


def init_lstm(rng, n_in, n_hidden, dtype=np.float32):
    """Uniform ±1/sqrt(fan_in) weights, zero biases except forget gate = 1."""
    W = rng.uniform(-1, 1, size=(4 * n_hidden, n_in)) / np.sqrt(n_in)
    U = rng.uniform(-1, 1, size=(4 * n_hidden, n_hidden)) / np.sqrt(n_hidden)
    b = np.zeros(4 * n_hidden)
    b[n_hidden:2 * n_hidden] = 1.0
    return {"W": W.astype(dtype), "U": U.astype(dtype), "b": b.astype(dtype)}


def _check_params(params, n_in=None):
    W, U, b = params["W"], params["U"], params["b"]
    H = U.shape[1]
    if W.shape[0] != 4 * H or U.shape != (4 * H, H) or b.shape != (4 * H,):
        raise ShapeMismatch(f"inconsistent LSTM parameter shapes {W.shape} {U.shape} {b.shape}")
    if n_in is not None and W.shape[1] != n_in:
        raise ShapeMismatch(f"input size {n_in} does not match W of shape {W.shape}")
    return H


def lstm_cell_forward(x_t, h_prev, c_prev, params):
    """One step for a batch: x_t (B, D), h_prev/c_prev (B, H)."""
    x_t = np.atleast_2d(x_t)
    H = _check_params(params, x_t.shape[1])
    dtype = params["W"].dtype
    h_prev = np.ascontiguousarray(np.atleast_2d(h_prev), dtype=dtype)
    c_prev = np.ascontiguousarray(np.atleast_2d(c_prev), dtype=dtype)
    if h_prev.shape != (x_t.shape[0], H) or c_prev.shape != h_prev.shape:
        raise ShapeMismatch("state shape does not match batch and hidden size")
    z = np.ascontiguousarray(x_t.astype(dtype, copy=False) @ params["W"].T
                             + h_prev @ params["U"].T + params["b"])
    B = x_t.shape[0]
    gates = np.empty((B, 4 * H), dtype=dtype)
    c = np.empty((B, H), dtype=dtype)
    tanh_c = np.empty((B, H), dtype=dtype)
    h = np.empty((B, H), dtype=dtype)
    kernels.lstm_pointwise_forward(z, c_prev, gates, c, tanh_c, h)
    cache = {"x": x_t, "h_prev": h_prev, "c_prev": c_prev, "z": z, "gates": gates, "tanh_c": tanh_c}
    return h, c, cache


def lstm_cell_backward(dh, dc, cache, params):
    """Gradients of one step; returns (dx, dh_prev, dc_prev, grads)."""
    dtype = params["W"].dtype
    gates = cache["gates"]
    dz = np.empty_like(gates)
    dc_prev = np.empty_like(cache["c_prev"])
    kernels.lstm_pointwise_backward(np.ascontiguousarray(dh, dtype=dtype),
                                    np.ascontiguousarray(dc, dtype=dtype),
                                    gates, cache["c_prev"], cache["tanh_c"], dz, dc_prev)
    grads = {"W": dz.T @ cache["x"], "U": dz.T @ cache["h_prev"], "b": dz.sum(axis=0)}
    return dz @ params["W"], dz @ params["U"], dc_prev, grads


def lstm_layer_forward(xs, params, h0=None, c0=None):
    """Run the cell over a (N, B, D) sequence; returns hidden states (N, B, H) and a cache."""
    if xs.ndim != 3:
        raise ShapeMismatch(f"expected (N, B, D) input, got shape {xs.shape}")
    N, B, D = xs.shape
    H = _check_params(params, D)
    dtype = params["W"].dtype
    xs = np.ascontiguousarray(xs, dtype=dtype)
    h = np.zeros((B, H), dtype=dtype) if h0 is None else np.ascontiguousarray(h0, dtype=dtype)
    c0 = np.zeros((B, H), dtype=dtype) if c0 is None else np.ascontiguousarray(c0, dtype=dtype)
    h0 = h

    xp = (xs.reshape(N * B, D) @ params["W"].T + params["b"]).reshape(N, B, 4 * H)
    gates = np.empty((N, B, 4 * H), dtype=dtype)
    cs = np.empty((N, B, H), dtype=dtype)
    tcs = np.empty((N, B, H), dtype=dtype)
    hs = np.empty((N, B, H), dtype=dtype)
    UT = np.ascontiguousarray(params["U"].T)
    c = c0
    for t in range(N):
        z = xp[t] + h @ UT
        kernels.lstm_pointwise_forward(z, c, gates[t], cs[t], tcs[t], hs[t])
        h, c = hs[t], cs[t]
    cache = {"xs": xs, "h0": h0, "c0": c0, "gates": gates, "cs": cs, "tcs": tcs, "hs": hs}
    return hs, cache


def lstm_layer_backward(dhs, cache, params):
    """BPTT for :func:`lstm_layer_forward`; returns (dxs, grads)."""
    xs, gates, cs, tcs, hs = cache["xs"], cache["gates"], cache["cs"], cache["tcs"], cache["hs"]
    N, B, D = xs.shape
    H = cs.shape[2]
    dtype = gates.dtype
    U = params["U"]
    dz = np.empty_like(gates)
    dh_next = np.zeros((B, H), dtype=dtype)
    dc_next = np.zeros((B, H), dtype=dtype)
    dc_prev = np.empty((B, H), dtype=dtype)
    for t in range(N - 1, -1, -1):
        dh = np.ascontiguousarray(dhs[t] + dh_next, dtype=dtype)
        c_prev = cs[t - 1] if t > 0 else cache["c0"]
        kernels.lstm_pointwise_backward(dh, dc_next, gates[t], c_prev, tcs[t], dz[t], dc_prev)
        dh_next = dz[t] @ U
        dc_next, dc_prev = dc_prev, dc_next

    dz2 = dz.reshape(N * B, 4 * H)
    grads = {
        "W": dz2.T @ xs.reshape(N * B, D),
        "U": dz[0].T @ cache["h0"],
        "b": dz2.sum(axis=0),
    }
    if N > 1:
        grads["U"] += dz[1:].reshape((N - 1) * B, 4 * H).T @ hs[:-1].reshape((N - 1) * B, H)
    dxs = (dz2 @ params["W"]).reshape(N, B, D)
    return dxs, grads
