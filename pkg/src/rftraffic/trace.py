"""Packet traces: classic-pcap parsing and synthetic per-class traffic.

A :class:`TrafficTrace` is the time-ordered list of packets that the framer
turns into a constant-rate bit stream. Traces come either from a capture file
(:func:`parse_pcap`) or from a :class:`ClassProfile` (:func:`synth_trace`).
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np

from rftraffic.errors import BadMagic, DegenerateProfile, TraceError, Truncated

DEFAULT_MTU = 1500

# magic -> (struct byte order, fractional-timestamp units per second)
_PCAP_MAGICS = {
    b"\xd4\xc3\xb2\xa1": ("<", 1_000_000),
    b"\xa1\xb2\xc3\xd4": (">", 1_000_000),
    b"\x4d\x3c\xb2\xa1": ("<", 1_000_000_000),
    b"\xa1\xb2\x3c\x4d": (">", 1_000_000_000),
}
_PCAPNG_MAGIC = b"\x0a\x0d\x0d\x0a"


@dataclass(frozen=True)
class PacketRecord:
    timestamp: float  # seconds since trace start
    payload: bytes

    def __post_init__(self):
        if len(self.payload) < 1:
            raise TraceError("packet payload must be at least one byte")


@dataclass(frozen=True)
class TrafficTrace:
    records: tuple
    class_label: str
    duration: float

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))
        prev = 0.0
        for rec in self.records:
            if rec.timestamp < prev:
                raise TraceError("record timestamps must be non-decreasing")
            prev = rec.timestamp
        if self.records and self.records[-1].timestamp > self.duration:
            raise TraceError("record timestamp past trace duration")

    def __len__(self):
        return len(self.records)

    def with_duration(self, duration):
        """Same packets, longer observation window (e.g. to let the last frame drain)."""
        return TrafficTrace(self.records, self.class_label, duration)

    def check_mtu(self, mtu=DEFAULT_MTU):
        for rec in self.records:
            if len(rec.payload) > mtu:
                raise TraceError(f"payload of {len(rec.payload)} bytes exceeds MTU {mtu}")
        return self


def parse_pcap(data, class_label="unknown", duration=None):
    """Parse a classic pcap byte string into a trace rebased to t=0.

    Link-layer bytes are kept verbatim as the payload. ``duration`` defaults to
    the last record's timestamp.
    """
    data = bytes(data)
    if len(data) < 24:
        if data[:4] == _PCAPNG_MAGIC:
            raise BadMagic("pcapng is not supported; convert to classic pcap")
        raise Truncated("input shorter than the 24-byte pcap global header")
    magic = data[:4]
    if magic not in _PCAP_MAGICS:
        if magic == _PCAPNG_MAGIC:
            raise BadMagic("pcapng is not supported; convert to classic pcap")
        raise BadMagic(f"unrecognized pcap magic {magic.hex()}")
    order, frac_per_sec = _PCAP_MAGICS[magic]
    rec_header = struct.Struct(order + "IIII")

    stamps = []
    payloads = []
    offset = 24
    while offset < len(data):
        if offset + 16 > len(data):
            raise Truncated(f"record header at byte {offset} runs past end of input")
        ts_sec, ts_frac, incl_len, _orig_len = rec_header.unpack_from(data, offset)
        offset += 16
        if offset + incl_len > len(data):
            raise Truncated(f"record body at byte {offset} runs past end of input")
        # integer nanoseconds until the final rebase keeps microsecond stamps exact
        stamps.append(ts_sec * 1_000_000_000 + ts_frac * (1_000_000_000 // frac_per_sec))
        payloads.append(data[offset:offset + incl_len])
        offset += incl_len

    t0 = stamps[0] if stamps else 0
    records = [PacketRecord((ns - t0) / 1e9, p) for ns, p in zip(stamps, payloads)]
    if duration is None:
        duration = records[-1].timestamp if records else 0.0
    return TrafficTrace(records, class_label, duration)


@dataclass(frozen=True)
class SizeDistribution:
    """Packet sizes in bytes: ``fixed`` (size), ``uniform`` (low..high) or
    ``bimodal`` (small/large with probability ``p_large`` of large)."""

    kind: str = "fixed"
    size: int = 64
    low: int = 64
    high: int = 1500
    small: int = 64
    large: int = 1500
    p_large: float = 0.5

    def __post_init__(self):
        if self.kind not in ("fixed", "uniform", "bimodal"):
            raise DegenerateProfile(f"unknown size distribution {self.kind!r}")
        if min(self.size, self.low, self.high, self.small, self.large) <= 0:
            raise DegenerateProfile("packet sizes must be strictly positive")
        if self.low > self.high:
            raise DegenerateProfile("uniform size range is empty")
        if not 0.0 <= self.p_large <= 1.0:
            raise DegenerateProfile("p_large must lie in [0, 1]")

    def mean(self):
        if self.kind == "fixed":
            return float(self.size)
        if self.kind == "uniform":
            return (self.low + self.high) / 2
        return self.p_large * self.large + (1 - self.p_large) * self.small

    def sample(self, rng, n):
        if self.kind == "fixed":
            return np.full(n, self.size, dtype=np.int64)
        if self.kind == "uniform":
            return rng.integers(self.low, self.high + 1, size=n)
        big = rng.random(n) < self.p_large
        return np.where(big, self.large, self.small).astype(np.int64)


@dataclass(frozen=True)
class ArrivalDistribution:
    """Packet inter-arrival process.

    ``periodic``: every ``period`` s, each arrival delayed by U[0, jitter*period).
    ``exponential``: Poisson arrivals with mean gap ``mean`` s.
    ``onoff``: bursts of ``burst_duration`` s with Poisson arrivals (mean gap
    ``mean``) separated by silent ``idle_duration`` s gaps.
    """

    kind: str = "periodic"
    period: float = 1.0
    jitter: float = 0.0
    mean: float = 1.0
    burst_duration: float = 1.0
    idle_duration: float = 1.0

    def __post_init__(self):
        if self.kind not in ("periodic", "exponential", "onoff"):
            raise DegenerateProfile(f"unknown arrival distribution {self.kind!r}")
        if min(self.period, self.mean, self.burst_duration, self.idle_duration) <= 0:
            raise DegenerateProfile("arrival parameters must be strictly positive")
        if not 0.0 <= self.jitter < 1.0:
            raise DegenerateProfile("jitter must lie in [0, 1)")

    def mean_rate(self):
        """Long-run arrivals per second."""
        if self.kind == "periodic":
            return 1.0 / self.period
        if self.kind == "exponential":
            return 1.0 / self.mean
        on = self.burst_duration / (self.burst_duration + self.idle_duration)
        return on / self.mean

    def sample_times(self, rng, duration):
        if self.kind == "periodic":
            base = np.arange(0.0, duration, self.period)
            if self.jitter > 0:
                base = base + rng.random(base.size) * self.jitter * self.period
            return base[base < duration]
        if self.kind == "exponential":
            return _poisson_times(rng, 0.0, duration, self.mean)
        chunks = []
        t = 0.0
        cycle = self.burst_duration + self.idle_duration
        while t < duration:
            end = min(t + self.burst_duration, duration)
            chunks.append(_poisson_times(rng, t, end, self.mean))
            t += cycle
        return np.concatenate(chunks) if chunks else np.zeros(0)


def _poisson_times(rng, start, stop, mean_gap):
    span = stop - start
    if span <= 0:
        return np.zeros(0)
    expected = span / mean_gap
    n = int(expected + 6 * math.sqrt(expected) + 16)
    times = start + np.cumsum(rng.exponential(mean_gap, size=n))
    while times[-1] < stop:
        more = times[-1] + np.cumsum(rng.exponential(mean_gap, size=n))
        times = np.concatenate([times, more])
    return times[times < stop]


@dataclass(frozen=True)
class ClassProfile:
    """Timing/size statistics standing in for one application's capture.

    ``duty_cycle`` is the fraction of arrival events that actually transmit
    (seeded Bernoulli thinning), so the long-run packet rate is
    ``duty_cycle * arrivals.mean_rate()``.
    """

    name: str
    sizes: SizeDistribution = field(default_factory=SizeDistribution)
    arrivals: ArrivalDistribution = field(default_factory=ArrivalDistribution)
    duty_cycle: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.duty_cycle <= 1.0:
            raise DegenerateProfile("duty_cycle must lie in [0, 1]")
        if self.duty_cycle == 0.0 and self.arrivals.kind == "periodic":
            raise DegenerateProfile(
                f"profile {self.name!r}: periodic arrivals with duty_cycle 0 never transmit"
            )

    def mean_rate(self):
        return self.duty_cycle * self.arrivals.mean_rate()

    def to_dict(self):
        return {
            "name": self.name,
            "sizes": dict(vars(self.sizes)),
            "arrivals": dict(vars(self.arrivals)),
            "duty_cycle": self.duty_cycle,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            name=d["name"],
            sizes=SizeDistribution(**d.get("sizes", {})),
            arrivals=ArrivalDistribution(**d.get("arrivals", {})),
            duty_cycle=d.get("duty_cycle", 1.0),
        )


# background look-ups mixed into every synthetic trace
_BACKGROUND_SIZES = SizeDistribution("uniform", low=60, high=120)


def synth_trace(profile, duration, seed, background_fraction=0.05, mtu=DEFAULT_MTU, drain=0.02):
    """Draw a deterministic synthetic trace for ``profile``.

    ``background_fraction`` of the packets (floor-rounded) are small, uniformly
    timed "look-up" packets independent of the profile. Arrivals stop ``drain``
    seconds before ``duration`` so the final frame fits on the line. Timestamps
    are quantized to whole microseconds so traces survive a pcap round trip.
    """
    if duration <= 0:
        raise TraceError("duration must be positive")
    if not 0.0 <= background_fraction < 1.0:
        raise TraceError("background_fraction must lie in [0, 1)")
    rng = np.random.default_rng(seed)
    horizon = duration - drain if duration > 2 * drain else duration

    times = profile.arrivals.sample_times(rng, horizon)
    if profile.duty_cycle < 1.0:
        times = times[rng.random(times.size) < profile.duty_cycle]
    sizes = profile.sizes.sample(rng, times.size)

    n_bg = int(math.floor(times.size * background_fraction / (1.0 - background_fraction)))
    if n_bg:
        times = np.concatenate([times, rng.random(n_bg) * horizon])
        sizes = np.concatenate([sizes, _BACKGROUND_SIZES.sample(rng, n_bg)])

    micros = np.floor(times * 1e6).astype(np.int64)
    order = np.argsort(micros, kind="stable")
    micros, sizes = micros[order], np.minimum(sizes[order], mtu)
    payload = rng.integers(0, 256, size=int(sizes.sum()), dtype=np.uint8).tobytes()

    records = []
    pos = 0
    for us, size in zip(micros.tolist(), sizes.tolist()):
        records.append(PacketRecord(us / 1e6, payload[pos:pos + size]))
        pos += size
    return TrafficTrace(records, profile.name, float(duration))


def _profile(name, sizes, arrivals, duty_cycle=1.0):
    return ClassProfile(name, SizeDistribution(**sizes), ArrivalDistribution(**arrivals), duty_cycle)


# Desk-scale stand-ins for the captured applications. At 1 Mbit/s the rates
# below put the link near 2%, 20%, 45% and 95% utilization, with packets short
# enough that every ~1 ms example window sees the class's typical mix. Ping
# and streaming also differ in frame length (about 100 vs 400 bits on air).
CATALOG = {
    p.name: p
    for p in (
        _profile("chat", {"kind": "uniform", "low": 20, "high": 80},
                 {"kind": "onoff", "mean": 0.004, "burst_duration": 0.05, "idle_duration": 0.25}),
        _profile("ping", {"kind": "fixed", "size": 8},
                 {"kind": "periodic", "period": 0.0005, "jitter": 0.2}),
        _profile("streaming", {"kind": "uniform", "low": 36, "high": 52},
                 {"kind": "periodic", "period": 0.0009, "jitter": 0.1}),
        _profile("download", {"kind": "fixed", "size": 1500},
                 {"kind": "periodic", "period": 0.0123}),
    )
}
