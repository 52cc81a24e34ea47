"""HDLC-style framing of a packet trace into a constant-rate bit stream.

Frames are ``flag | bit_stuff(payload | fcs) | flag`` with payload bytes sent
LSB first. Between frames the line carries back-to-back 0x7E idle flags.
A fixed preamble is inserted (not overwritten) every ``preamble_period_bits``
stream bits, counted over non-preamble bits from the start of the stream.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from rftraffic._core import kernels
from rftraffic.errors import FcsMismatch, FramingError, Overrun, StuffingViolation

FLAG_BITS = np.array([0, 1, 1, 1, 1, 1, 1, 0], dtype=np.uint8)
BARKER13 = (1, 1, 1, 1, 1, 0, 0, 1, 1, 0, 1, 0, 1)
DEFAULT_PREAMBLE = (1, 0) * 16 + BARKER13
CRC_RESIDUE = 0x0F47


def crc16_ccitt(payload):
    """CRC-16/X.25: reflected poly 0x1021, init 0xFFFF, final xor 0xFFFF."""
    return kernels.crc16_x25(bytes(payload))


def fcs_bytes(payload):
    crc = crc16_ccitt(payload)
    return bytes((crc & 0xFF, crc >> 8))


def bytes_to_bits(data):
    return np.unpackbits(np.frombuffer(bytes(data), dtype=np.uint8), bitorder="little")


def bits_to_bytes(bits):
    bits = np.asarray(bits, dtype=np.uint8)
    if bits.size % 8:
        raise FramingError(f"{bits.size} bits is not a whole number of bytes")
    return np.packbits(bits, bitorder="little").tobytes()


def bit_stuff(bits):
    """Insert a 0 after every run of five consecutive 1s."""
    return kernels.bit_stuff(np.asarray(bits, dtype=np.uint8))


def bit_unstuff(bits):
    """Inverse of :func:`bit_stuff`; raises StuffingViolation on six 1s in a row."""
    return kernels.bit_unstuff(np.asarray(bits, dtype=np.uint8))


@dataclass(frozen=True)
class FramerConfig:
    bit_rate: float = 1_000_000.0
    preamble_period_bits: int = 1744
    preamble_pattern: tuple = DEFAULT_PREAMBLE
    fcs_enabled: bool = True
    # longest a packet may wait behind earlier frames before it counts as overrun
    max_queue_delay: float = 0.05

    def __post_init__(self):
        object.__setattr__(self, "preamble_pattern", tuple(int(b) for b in self.preamble_pattern))
        if self.bit_rate <= 0:
            raise FramingError("bit_rate must be positive")
        if any(b not in (0, 1) for b in self.preamble_pattern):
            raise FramingError("preamble pattern must be bits")
        if self.preamble_period_bits <= len(self.preamble_pattern):
            raise FramingError("preamble period must exceed the preamble length")

    @property
    def preamble(self):
        return np.array(self.preamble_pattern, dtype=np.uint8)

    def to_dict(self):
        return {
            "bit_rate": self.bit_rate,
            "preamble_period_bits": self.preamble_period_bits,
            "preamble_pattern": list(self.preamble_pattern),
            "fcs_enabled": self.fcs_enabled,
            "max_queue_delay": self.max_queue_delay,
        }

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "preamble_pattern" in d:
            d["preamble_pattern"] = tuple(d["preamble_pattern"])
        return cls(**d)


def frame_packet(payload, config=FramerConfig()):
    """Bits of one complete frame including both delimiting flags."""
    payload = bytes(payload)
    if not payload:
        raise FramingError("cannot frame an empty payload")
    body = payload + fcs_bytes(payload) if config.fcs_enabled else payload
    return np.concatenate([FLAG_BITS, bit_stuff(bytes_to_bits(body)), FLAG_BITS])


@dataclass
class BitStream:
    bits: np.ndarray
    bit_rate: float
    body_len: int  # non-preamble bits, == ceil(duration * bit_rate)
    preamble_period_bits: int
    preamble_len: int
    frame_starts: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def __len__(self):
        return int(self.bits.size)

    @property
    def n_preambles(self):
        return -(-self.body_len // self.preamble_period_bits)

    def preamble_offsets(self):
        """Positions of each preamble in the emitted stream."""
        i = np.arange(self.n_preambles, dtype=np.int64)
        return i * (self.preamble_period_bits + self.preamble_len)

    def body(self):
        """The stream with every preamble removed."""
        return strip_preambles(self.bits, self.preamble_period_bits, self.preamble_len)

    def to_bytes(self):
        """Packed bytes, MSB first within each byte, zero-padded at the end."""
        return np.packbits(self.bits, bitorder="big").tobytes()

    @staticmethod
    def bits_from_bytes(data, n_bits):
        bits = np.unpackbits(np.frombuffer(data, dtype=np.uint8), bitorder="big")
        return bits[:n_bits]


def strip_preambles(bits, period, preamble_len):
    bits = np.asarray(bits, dtype=np.uint8)
    if preamble_len == 0:
        return bits
    block = period + preamble_len
    keep = (np.arange(bits.size) % block) >= preamble_len
    return bits[keep]


def _insert_preambles(body, period, preamble):
    n = -(-body.size // period)
    out = np.empty(body.size + n * preamble.size, dtype=np.uint8)
    block = period + preamble.size
    for i in range(n):
        o = i * block
        out[o:o + preamble.size] = preamble
        chunk = body[i * period:(i + 1) * period]
        out[o + preamble.size:o + preamble.size + chunk.size] = chunk
    return out


def schedule_bitstream(trace, config=FramerConfig()):
    """Serialize ``trace`` onto a constant-rate line.

    Each frame starts at the first idle-flag boundary at or after
    ``timestamp * bit_rate``; frames that cannot start within
    ``max_queue_delay`` of their arrival, or that would not finish before the
    end of the trace, raise :class:`Overrun` with the offending arrival time.
    """
    rate = config.bit_rate
    body_len = int(math.ceil(trace.duration * rate - 1e-9))
    max_wait = config.max_queue_delay * rate

    pieces = []
    starts = []
    pos = 0
    for rec in trace.records:
        target = rec.timestamp * rate
        if pos < target:
            n_idle = int(math.ceil((target - pos) / 8 - 1e-9))
            pieces.append(np.tile(FLAG_BITS, n_idle))
            pos += 8 * n_idle
        elif pos - target > max_wait:
            raise Overrun(
                f"packet at t={rec.timestamp:.6f}s waited {(pos - target) / rate:.6f}s "
                f"behind earlier frames (limit {config.max_queue_delay}s)",
                time=rec.timestamp,
            )
        frame = frame_packet(rec.payload, config)
        starts.append(pos)
        pieces.append(frame)
        pos += frame.size
        if pos > body_len:
            raise Overrun(
                f"frame for packet at t={rec.timestamp:.6f}s ends past the trace duration",
                time=rec.timestamp,
            )
    if pos < body_len:
        n_idle = -(-(body_len - pos) // 8)
        pieces.append(np.tile(FLAG_BITS, n_idle))
    body = np.concatenate(pieces)[:body_len] if pieces else np.zeros(0, dtype=np.uint8)

    preamble = config.preamble
    bits = _insert_preambles(body, config.preamble_period_bits, preamble)
    return BitStream(
        bits=bits,
        bit_rate=rate,
        body_len=body_len,
        preamble_period_bits=config.preamble_period_bits,
        preamble_len=preamble.size,
        frame_starts=np.array(starts, dtype=np.int64),
    )


@dataclass
class DeframeStats:
    frames: int = 0
    fcs_errors: int = 0
    aborted: int = 0


def check_fcs(frame_bytes):
    """Split a received frame into payload, raising FcsMismatch on a bad CRC."""
    if len(frame_bytes) < 3 or crc16_ccitt(frame_bytes) != CRC_RESIDUE:
        raise FcsMismatch("frame check sequence mismatch")
    return frame_bytes[:-2]


def deframe(bits, config=FramerConfig(), stats=None):
    """Recover payloads from a stream produced by :func:`schedule_bitstream`.

    Preambles are removed at their known positions first. Segments that fail
    unstuffing, byte alignment or the FCS are dropped and tallied in ``stats``.
    """
    if stats is None:
        stats = DeframeStats()
    body = strip_preambles(bits, config.preamble_period_bits, len(config.preamble_pattern))
    return deframe_body(body, config.fcs_enabled, stats)


def deframe_body(body, fcs_enabled=True, stats=None):
    if stats is None:
        stats = DeframeStats()
    body = np.asarray(body, dtype=np.uint8)
    starts, stops = kernels.flag_segments(body)
    payloads = []
    for a, b in zip(starts.tolist(), stops.tolist()):
        try:
            raw = bit_unstuff(body[a:b])
            frame = bits_to_bytes(raw)
        except (StuffingViolation, FramingError):
            stats.aborted += 1
            continue
        if fcs_enabled:
            try:
                frame = check_fcs(frame)
            except FcsMismatch:
                stats.fcs_errors += 1
                continue
        payloads.append(frame)
        stats.frames += 1
    return payloads
