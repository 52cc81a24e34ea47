# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot loops: HDLC bit handling, CRC, resampling, LSTM gate gradients.

Every function here has a drop-in twin in ``_fallback.py``; the two are
checked against each other in the test suite.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport sin, cos, floor, M_PI, fabs

from rftraffic._core import _fallback
from rftraffic.errors import StuffingViolation

cnp.import_array()

ctypedef fused real:
    float
    double


cdef unsigned short _CRC_TABLE[256]


cdef void _build_crc_table():
    cdef unsigned int b, v, k
    for b in range(256):
        v = b
        for k in range(8):
            if v & 1:
                v = (v >> 1) ^ 0x8408
            else:
                v >>= 1
        _CRC_TABLE[b] = v & 0xFFFF


_build_crc_table()


def crc16_x25(const unsigned char[::1] data):
    cdef unsigned int crc = 0xFFFF
    cdef Py_ssize_t i
    for i in range(data.shape[0]):
        crc = (crc >> 8) ^ _CRC_TABLE[(crc ^ data[i]) & 0xFF]
    return crc ^ 0xFFFF


def bit_stuff(bits):
    cdef const unsigned char[::1] src = np.ascontiguousarray(bits, dtype=np.uint8)
    cdef Py_ssize_t n = src.shape[0], i, j = 0
    cdef int run = 0
    out = np.empty(n + n // 5 + 1, dtype=np.uint8)
    cdef unsigned char[::1] dst = out
    for i in range(n):
        dst[j] = src[i]
        j += 1
        if src[i]:
            run += 1
            if run == 5:
                dst[j] = 0
                j += 1
                run = 0
        else:
            run = 0
    return out[:j]


def bit_unstuff(bits):
    cdef const unsigned char[::1] src = np.ascontiguousarray(bits, dtype=np.uint8)
    cdef Py_ssize_t n = src.shape[0], i, j = 0
    cdef int run = 0
    out = np.empty(n, dtype=np.uint8)
    cdef unsigned char[::1] dst = out
    i = 0
    while i < n:
        if src[i]:
            run += 1
            if run > 5:
                raise StuffingViolation(f"run of six 1s at bit {i}")
            dst[j] = 1
            j += 1
            if run == 5 and i + 1 < n:
                if src[i + 1]:
                    raise StuffingViolation(f"run of six 1s at bit {i + 1}")
                i += 1
                run = 0
        else:
            run = 0
            dst[j] = 0
            j += 1
        i += 1
    return out[:j]


def flag_segments(bits):
    """(start, stop) of every non-empty bit run between consecutive flags."""
    cdef const unsigned char[::1] src = np.ascontiguousarray(bits, dtype=np.uint8)
    cdef Py_ssize_t n = src.shape[0], i, last_end = -1, since = 0
    cdef unsigned int reg = 0
    starts = []
    stops = []
    for i in range(n):
        reg = ((reg << 1) | src[i]) & 0xFF
        since += 1
        if since >= 8 and reg == 0x7E:
            if last_end >= 0 and i - 7 > last_end:
                starts.append(last_end)
                stops.append(i - 7)
            last_end = i + 1
            since = 0
            reg = 0
    return np.array(starts, dtype=np.int64), np.array(stops, dtype=np.int64)


def sinc_resample(x, double ratio, double delay, Py_ssize_t n_out):
    cdef const double complex[::1] src = np.ascontiguousarray(x, dtype=np.complex128)
    out = np.empty(n_out, dtype=np.complex128)
    cdef double complex[::1] dst = out
    cdef Py_ssize_t n, k, i0
    cdef double pos, mu, d, w, wsum, s_mu
    cdef double wts[8]
    cdef double complex acc
    for n in range(n_out):
        pos = n * ratio + delay + 3.0
        i0 = <Py_ssize_t>floor(pos)
        mu = pos - i0
        wsum = 0.0
        s_mu = sin(M_PI * mu)
        for k in range(8):
            d = (k - 3) - mu
            if fabs(d) < 1e-12:
                w = 1.0
            else:
                # sin(pi*(k-3-mu)) == (-1)^k sin(pi*mu)
                w = (s_mu if (k & 1) == 0 else -s_mu) / (M_PI * d)
            w *= cos(M_PI * d / 8.0) ** 2
            wts[k] = w
            wsum += w
        acc = 0.0
        for k in range(8):
            acc = acc + src[i0 - 3 + k] * (wts[k] / wsum)
        dst[n] = acc
    return out


cdef void _pw_backward(real[:, ::1] dh, real[:, ::1] dc_next, real[:, ::1] gates,
                       real[:, ::1] c_prev, real[:, ::1] tanh_c,
                       real[:, ::1] dz, real[:, ::1] dc_prev) noexcept nogil:
    cdef Py_ssize_t B = dh.shape[0], H = dh.shape[1], b, j
    cdef real ig, fg, gg, og, tc, dc
    for b in range(B):
        for j in range(H):
            ig = gates[b, j]
            fg = gates[b, H + j]
            gg = gates[b, 2 * H + j]
            og = gates[b, 3 * H + j]
            tc = tanh_c[b, j]
            dc = dc_next[b, j] + dh[b, j] * og * (1 - tc * tc)
            dz[b, j] = dc * gg * ig * (1 - ig)
            dz[b, H + j] = dc * c_prev[b, j] * fg * (1 - fg)
            dz[b, 2 * H + j] = dc * ig * (1 - gg * gg)
            dz[b, 3 * H + j] = dh[b, j] * tc * og * (1 - og)
            dc_prev[b, j] = dc * fg


# The forward pointwise step is dominated by tanh, where numpy's vectorized
# float loops beat scalar libm calls, so it is shared with the fallback.
lstm_pointwise_forward = _fallback.lstm_pointwise_forward

# Fused-type dispatch on a def signature inspects every buffer in Python on
# each call, which costs more than the loop itself at LSTM batch sizes; the
# public entry point picks the specialization from one dtype check instead.

def _backward_f32(float[:, ::1] dh, float[:, ::1] dc_next, float[:, ::1] gates,
                  float[:, ::1] c_prev, float[:, ::1] tanh_c,
                  float[:, ::1] dz, float[:, ::1] dc_prev):
    with nogil:
        _pw_backward(dh, dc_next, gates, c_prev, tanh_c, dz, dc_prev)


def _backward_f64(double[:, ::1] dh, double[:, ::1] dc_next, double[:, ::1] gates,
                  double[:, ::1] c_prev, double[:, ::1] tanh_c,
                  double[:, ::1] dz, double[:, ::1] dc_prev):
    with nogil:
        _pw_backward(dh, dc_next, gates, c_prev, tanh_c, dz, dc_prev)


def lstm_pointwise_backward(dh, dc_next, gates, c_prev, tanh_c, dz, dc_prev):
    """Gradients through the gates for one step, written into ``dz`` and ``dc_prev``."""
    if dh.dtype == np.float32:
        _backward_f32(dh, dc_next, gates, c_prev, tanh_c, dz, dc_prev)
    else:
        _backward_f64(dh, dc_next, gates, c_prev, tanh_c, dz, dc_prev)
