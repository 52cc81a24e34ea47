"""Time every hot kernel under each available backend.

    python benchmarks/bench_kernels.py [--repeat 5] [--json out.json]

Inputs are sized like one desk-scale recording (about 2 s at 1 Mbit/s) or one
LSTM step at the default batch and hidden size.
"""
import argparse
import json
import timeit

import numpy as np

from rftraffic._core import available_backends
from rftraffic.framing import FramerConfig, schedule_bitstream
from rftraffic.trace import CATALOG, synth_trace


def workloads():
    rng = np.random.default_rng(0)
    trace = synth_trace(CATALOG["streaming"], 0.5, seed=0)
    stream = schedule_bitstream(trace, FramerConfig()).body()
    payload = rng.integers(0, 256, 1500, dtype=np.uint8).tobytes()
    bits = rng.integers(0, 2, 200_000).astype(np.uint8)
    x = (rng.standard_normal(500_000) + 1j * rng.standard_normal(500_000)).astype(np.complex128)
    B, H = 32, 64
    z = rng.standard_normal((B, 4 * H)).astype(np.float32)
    c = rng.standard_normal((B, H)).astype(np.float32)
    gates = rng.random((B, 4 * H)).astype(np.float32)

    def lstm_fwd(k):
        out = [np.empty((B, 4 * H), np.float32)] + [np.empty((B, H), np.float32) for _ in range(3)]
        return lambda: k.lstm_pointwise_forward(z, c, *out)

    def lstm_bwd(k):
        dz, dc = np.empty((B, 4 * H), np.float32), np.empty((B, H), np.float32)
        return lambda: k.lstm_pointwise_backward(c, c, gates, c, c, dz, dc)

    def resample(k):
        n_out = int((x.size - 8) / 1.0001)
        return lambda: k.sinc_resample(x, 1.0001, 0.37, n_out)

    return {
        "crc16_x25 (1500 B)": lambda k: (lambda: k.crc16_x25(payload)),
        "bit_stuff (200 kbit)": lambda k: (lambda: k.bit_stuff(bits)),
        "bit_unstuff (200 kbit)": lambda k: (lambda s=k.bit_stuff(bits): k.bit_unstuff(s)),
        "flag_segments (0.5 s stream)": lambda k: (lambda: k.flag_segments(stream)),
        "sinc_resample (500 k samples)": resample,
        "lstm_pointwise_forward (32x64)": lstm_fwd,
        "lstm_pointwise_backward (32x64)": lstm_bwd,
    }


def run(repeat=5):
    backends = available_backends()
    results = {}
    for name, make in workloads().items():
        row = {}
        for bname, kernels in backends.items():
            fn = make(kernels)
            fn()
            n, _ = timeit.Timer(fn).autorange()
            row[bname] = min(timeit.repeat(fn, number=n, repeat=repeat)) / n
        results[name] = row
    return results


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json", help="also write the timings here")
    args = ap.parse_args()
    results = run(args.repeat)
    names = list(next(iter(results.values())))
    print(f"{'kernel':34s}" + "".join(f"{n:>14s}" for n in names) + "   speedup")
    for kernel, row in results.items():
        cells = "".join(f"{row[n] * 1e6:12.1f}us" for n in names)
        speed = f"{row['python'] / row['compiled']:8.1f}x" if "compiled" in row else ""
        print(f"{kernel:34s}{cells}{speed}")
    if args.json:
        with open(args.json, "w") as f:
            json.dump(results, f, indent=2)


if __name__ == "__main__":
    main()
