"""Pure-Python/numpy versions of the compiled kernels.

Same signatures and semantics as ``_kernels.pyx``. Used when the extension
is not built or when ``RFTRAFFIC_PURE_PYTHON=1`` is set.
"""
import numpy as np

from rftraffic.errors import StuffingViolation


def _make_crc_table():
    table = []
    for b in range(256):
        v = b
        for _ in range(8):
            v = (v >> 1) ^ 0x8408 if v & 1 else v >> 1
        table.append(v & 0xFFFF)
    return tuple(table)


_CRC_TABLE = _make_crc_table()


def crc16_x25(data):
    crc = 0xFFFF
    for byte in bytes(data):
        crc = (crc >> 8) ^ _CRC_TABLE[(crc ^ byte) & 0xFF]
    return crc ^ 0xFFFF


def _run_position(bits):
    # 1-based position of each 1 inside its run of ones; 0 where the bit is 0
    ones = bits.astype(np.int64)
    csum = np.cumsum(ones)
    reset = np.maximum.accumulate(np.where(ones == 0, csum, 0))
    return np.where(ones == 1, csum - reset, 0)


def bit_stuff(bits):
    bits = np.ascontiguousarray(bits, dtype=np.uint8)
    if bits.size == 0:
        return bits.copy()
    # run positions restart after each inserted zero, so count in blocks of 5
    pos = _run_position(bits)
    after = np.flatnonzero((pos > 0) & (pos % 5 == 0)) + 1
    return np.insert(bits, after, np.uint8(0))


def bit_unstuff(bits):
    bits = np.ascontiguousarray(bits, dtype=np.uint8)
    if bits.size == 0:
        return bits.copy()
    pos = _run_position(bits)
    bad = np.flatnonzero(pos > 5)
    if bad.size:
        raise StuffingViolation(f"run of six 1s at bit {bad[0]}")
    drop = np.flatnonzero(pos == 5) + 1
    drop = drop[drop < bits.size]
    return np.delete(bits, drop)


def flag_segments(bits):
    """(start, stop) of every non-empty bit run between consecutive flags."""
    bits = np.ascontiguousarray(bits, dtype=np.uint8)
    n = bits.size
    if n < 8:
        empty = np.zeros(0, dtype=np.int64)
        return empty, empty.copy()
    weights = 1 << np.arange(7, -1, -1)
    values = np.convolve(bits.astype(np.int64), weights[::-1], mode="valid")
    hits = np.flatnonzero(values == 0x7E)
    starts, stops = [], []
    last_end = -1
    for h in hits.tolist():
        if last_end >= 0 and h < last_end:
            continue
        if last_end >= 0 and h > last_end:
            starts.append(last_end)
            stops.append(h)
        last_end = h + 8
    return np.array(starts, dtype=np.int64), np.array(stops, dtype=np.int64)


def _sinc_weights(mu):
    d = np.arange(-3, 5)[None, :] - mu[:, None]
    w = np.sinc(d) * np.cos(np.pi * d / 8.0) ** 2
    return w / w.sum(axis=1, keepdims=True)


def sinc_resample(x, ratio, delay, n_out, chunk=1 << 16):
    x = np.ascontiguousarray(x, dtype=np.complex128)
    out = np.empty(n_out, dtype=np.complex128)
    taps = np.arange(-3, 5)
    for lo in range(0, n_out, chunk):
        n = np.arange(lo, min(lo + chunk, n_out))
        pos = n * ratio + delay + 3.0
        i0 = np.floor(pos).astype(np.int64)
        w = _sinc_weights(pos - i0)
        out[lo:lo + n.size] = np.einsum("ij,ij->i", x[i0[:, None] + taps[None, :]], w)
    return out


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def lstm_pointwise_forward(z, c_prev, gates, c, tanh_c, h):
    H = c_prev.shape[1]
    gates[:, :2 * H] = _sigmoid(z[:, :2 * H])
    gates[:, 2 * H:3 * H] = np.tanh(z[:, 2 * H:3 * H])
    gates[:, 3 * H:] = _sigmoid(z[:, 3 * H:])
    i, f, g, o = gates[:, :H], gates[:, H:2 * H], gates[:, 2 * H:3 * H], gates[:, 3 * H:]
    np.multiply(f, c_prev, out=c)
    c += i * g
    np.tanh(c, out=tanh_c)
    np.multiply(o, tanh_c, out=h)


def lstm_pointwise_backward(dh, dc_next, gates, c_prev, tanh_c, dz, dc_prev):
    H = dh.shape[1]
    i, f, g, o = gates[:, :H], gates[:, H:2 * H], gates[:, 2 * H:3 * H], gates[:, 3 * H:]
    dc = dc_next + dh * o * (1 - tanh_c * tanh_c)
    dz[:, :H] = dc * g * i * (1 - i)
    dz[:, H:2 * H] = dc * c_prev * f * (1 - f)
    dz[:, 2 * H:3 * H] = dc * i * (1 - g * g)
    dz[:, 3 * H:] = dh * tanh_c * o * (1 - o)
    np.multiply(dc, f, out=dc_prev)
