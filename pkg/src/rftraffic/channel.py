"""Channel impairments: timing drift/delay, carrier offset, then AWGN."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from rftraffic._core import kernels
from rftraffic.errors import ChannelError, SignalTooShort
from rftraffic.modem import IqSignal

CLEAN = math.inf
INTERP_TAPS = 8


@dataclass(frozen=True)
class ChannelConfig:
    """Impairment ranges. ``snr_db = CLEAN`` (inf) disables the noise.

    Offsets are drawn uniformly: frequency in ``±max_freq_offset`` cycles per
    sample, resampling ratio in ``1 ± max_timing_offset`` and initial fractional
    delay in ``[0, max_frac_delay)`` samples. Carrier phase is uniform in
    ``[0, 2π)`` whenever a frequency offset range is set.
    """

    snr_db: float = 20.0
    max_freq_offset: float = 1e-4
    max_timing_offset: float = 1e-4
    max_frac_delay: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if math.isnan(self.snr_db) or self.snr_db == -math.inf:
            raise ChannelError("snr_db must be finite or the CLEAN sentinel")
        if min(self.max_freq_offset, self.max_timing_offset, self.max_frac_delay) < 0:
            raise ChannelError("impairment ranges must be non-negative")
        if self.max_freq_offset >= 0.5 or self.max_timing_offset > 1e-2 or self.max_frac_delay > 1:
            raise ChannelError("impairment range outside supported bounds")

    @classmethod
    def clean(cls, seed=0):
        return cls(snr_db=CLEAN, max_freq_offset=0.0, max_timing_offset=0.0, max_frac_delay=0.0, seed=seed)

    @property
    def is_clean(self):
        return math.isinf(self.snr_db) and self.max_freq_offset == 0 and self.max_timing_offset == 0 \
            and self.max_frac_delay == 0

    def to_dict(self):
        d = asdict(self)
        d["snr_db"] = "clean" if math.isinf(self.snr_db) else self.snr_db
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if d.get("snr_db") in ("clean", None):
            d["snr_db"] = CLEAN
        return cls(**d)


@dataclass(frozen=True)
class ChannelDraw:
    seed: int
    freq_offset: float
    phase: float
    ratio: float
    delay: float
    snr_db: float
    noise_seed: int

    def to_json(self, **extra):
        d = asdict(self)
        if math.isinf(self.snr_db):
            d["snr_db"] = "clean"
        d.update(extra)
        return json.dumps(d, sort_keys=True)


def _with(signal, samples, **meta):
    return IqSignal(samples, signal.sample_rate, {**signal.meta, **meta})


def awgn(signal, snr_db, seed):
    """Add complex white Gaussian noise at ``snr_db`` relative to measured power."""
    if math.isinf(snr_db) and snr_db > 0:
        return _with(signal, signal.samples.copy())
    x = signal.samples
    if x.size == 0:
        raise ChannelError("cannot add noise to an empty signal")
    power = float(np.mean(np.abs(x) ** 2))
    if power <= 0:
        raise ChannelError("signal has zero power; SNR undefined")
    sigma = math.sqrt(power / 10 ** (snr_db / 10) / 2)
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal((2, x.size))
    return _with(signal, x + sigma * (noise[0] + 1j * noise[1]))


def freq_offset(signal, normalized_offset, initial_phase=0.0):
    """Rotate sample k by ``2π·offset·k + phase`` radians."""
    if abs(normalized_offset) >= 0.5:
        raise ChannelError("normalized frequency offset must satisfy |f| < 0.5")
    k = np.arange(signal.samples.size, dtype=np.float64)
    rot = np.exp(1j * (2 * np.pi * normalized_offset * k + initial_phase))
    return _with(signal, signal.samples * rot)


def timing_offset(signal, resample_ratio, initial_frac_delay=0.0):
    """Resample so output n reads input position ``n*ratio + delay`` (plus a 3-sample trim).

    Interpolation is an 8-tap Hann-windowed sinc normalized to unit DC gain;
    output length is ``floor((len - 8) / ratio)``.
    """
    if not 1 - 1e-2 <= resample_ratio <= 1 + 1e-2:
        raise ChannelError("resample ratio must lie within 1 ± 1e-2")
    if not 0.0 <= initial_frac_delay < 1.0:
        raise ChannelError("fractional delay must lie in [0, 1)")
    x = signal.samples
    if x.size < INTERP_TAPS + 1:
        raise SignalTooShort(f"need more than {INTERP_TAPS} samples, got {x.size}")
    n_out = int(math.floor((x.size - INTERP_TAPS) / resample_ratio))
    y = kernels.sinc_resample(x, float(resample_ratio), float(initial_frac_delay), n_out)
    return _with(signal, y)


def draw_channel(config):
    rng = np.random.default_rng(config.seed)
    f = rng.uniform(-config.max_freq_offset, config.max_freq_offset) if config.max_freq_offset else 0.0
    phase = rng.uniform(0.0, 2 * math.pi) if config.max_freq_offset else 0.0
    ratio = 1.0 + rng.uniform(-config.max_timing_offset, config.max_timing_offset) \
        if config.max_timing_offset else 1.0
    delay = rng.uniform(0.0, config.max_frac_delay) if config.max_frac_delay else 0.0
    noise_seed = int(rng.integers(0, 2**63 - 1))
    return ChannelDraw(config.seed, float(f), float(phase), float(ratio), float(delay),
                       config.snr_db, noise_seed)


def apply_draw(signal, draw, noise=True):
    """Apply one recorded draw: timing, then frequency, then noise."""
    out = timing_offset(signal, draw.ratio, draw.delay)
    if draw.freq_offset or draw.phase:
        out = freq_offset(out, draw.freq_offset, draw.phase)
    if noise:
        out = awgn(out, draw.snr_db, draw.noise_seed)
    return out


def apply_channel(signal, config=ChannelConfig()):
    """Impair ``signal`` with random draws from ``config``; the draws land in ``meta["channel"]``."""
    if not isinstance(signal, IqSignal):
        signal = IqSignal(signal)
    draw = draw_channel(config)
    out = apply_draw(signal, draw)
    out.meta["channel"] = json.loads(draw.to_json())
    return out
