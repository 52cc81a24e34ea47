import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rftraffic._core import BACKEND, KERNEL_NAMES, _fallback, available_backends
from rftraffic.errors import StuffingViolation

BACKENDS = available_backends()
compiled = BACKENDS.get("compiled")
needs_compiled = pytest.mark.skipif(compiled is None, reason="compiled extension not built")


def test_every_backend_exports_all_kernels():
    for mod in BACKENDS.values():
        for name in KERNEL_NAMES:
            assert callable(getattr(mod, name))


def test_env_var_forces_python_backend():
    env = dict(os.environ, RFTRAFFIC_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "from rftraffic._core import BACKEND; print(BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"


@needs_compiled
def test_compiled_is_default_when_built():
    if os.environ.get("RFTRAFFIC_PURE_PYTHON") != "1":
        assert BACKEND == "compiled"


@needs_compiled
@given(st.binary(max_size=2000))
def test_crc_equal(data):
    assert compiled.crc16_x25(data) == _fallback.crc16_x25(data)


@needs_compiled
@given(st.lists(st.integers(0, 1), max_size=2000))
def test_stuffing_equal(bits):
    b = np.array(bits, dtype=np.uint8)
    s = _fallback.bit_stuff(b)
    np.testing.assert_array_equal(compiled.bit_stuff(b), s)
    np.testing.assert_array_equal(compiled.bit_unstuff(s), _fallback.bit_unstuff(s))


@needs_compiled
def test_unstuff_violation_both():
    bad = np.array([0, 1, 1, 1, 1, 1, 1, 0], dtype=np.uint8)
    for mod in (compiled, _fallback):
        with pytest.raises(StuffingViolation):
            mod.bit_unstuff(bad)


@needs_compiled
@given(st.lists(st.integers(0, 1), max_size=3000))
def test_flag_segments_equal(bits):
    b = np.array(bits, dtype=np.uint8)
    for a, c in zip(compiled.flag_segments(b), _fallback.flag_segments(b)):
        np.testing.assert_array_equal(a, c)


@needs_compiled
def test_flag_segments_on_real_stream():
    from rftraffic.framing import schedule_bitstream
    from rftraffic.trace import CATALOG, synth_trace
    body = schedule_bitstream(synth_trace(CATALOG["chat"], 0.2, seed=1)).body()
    for a, c in zip(compiled.flag_segments(body), _fallback.flag_segments(body)):
        np.testing.assert_array_equal(a, c)


@needs_compiled
@pytest.mark.parametrize("ratio,delay", [(1.0, 0.0), (1.0001, 0.37), (0.99, 0.9), (1.01, 0.5)])
def test_resample_equal(ratio, delay):
    rng = np.random.default_rng(0)
    x = rng.standard_normal(5000) + 1j * rng.standard_normal(5000)
    n_out = int((x.size - 8) / ratio)
    np.testing.assert_allclose(compiled.sinc_resample(x, ratio, delay, n_out),
                               _fallback.sinc_resample(x, ratio, delay, n_out), atol=1e-12)


@needs_compiled
@pytest.mark.parametrize("dtype,tol", [(np.float32, 1e-6), (np.float64, 1e-13)])
def test_lstm_pointwise_equal(dtype, tol):
    rng = np.random.default_rng(1)
    B, H = 5, 7
    z = rng.standard_normal((B, 4 * H)).astype(dtype)
    c_prev = rng.standard_normal((B, H)).astype(dtype)
    outs = {}
    for name, mod in (("c", compiled), ("p", _fallback)):
        gates, c, tc, h = (np.empty((B, 4 * H), dtype), np.empty((B, H), dtype),
                           np.empty((B, H), dtype), np.empty((B, H), dtype))
        mod.lstm_pointwise_forward(z, c_prev, gates, c, tc, h)
        dh = np.linspace(-1, 1, B * H).reshape(B, H).astype(dtype)
        dc = np.full((B, H), -0.25, dtype)
        dz, dcp = np.empty((B, 4 * H), dtype), np.empty((B, H), dtype)
        mod.lstm_pointwise_backward(dh, dc, gates, c_prev, tc, dz, dcp)
        outs[name] = (gates, c, tc, h, dz, dcp)
    for a, b in zip(outs["c"], outs["p"]):
        np.testing.assert_allclose(a, b, atol=tol, rtol=tol)


def test_training_identical_under_both_backends(tmp_path):
    """A short training run gives the same checkpoint with either backend."""
    if compiled is None:
        pytest.skip("compiled extension not built")
    script = (
        "import numpy as np, sys\n"
        "from rftraffic.neural.model import ModelArch\n"
        "from rftraffic.neural.training import Hyper, train\n"
        "class S:\n"
        "    def __init__(s, x, y): s.x, s.labels = x, y\n"
        "    def __len__(s): return len(s.labels)\n"
        "    def batch(s, i, dtype): return s.x[i].astype(dtype)\n"
        "rng = np.random.default_rng(0)\n"
        "d = S(rng.standard_normal((64, 3, 2, 4)), rng.integers(0, 2, 64))\n"
        "arch = ModelArch.classifier(8, 2, hidden=6, fc_hidden=6)\n"
        "ck, _ = train(d, d, arch, Hyper(epochs=2, dtype='float64'), seed=0)\n"
        "sys.stdout.buffer.write(np.concatenate([p.ravel() for p in ck.params.values()]).tobytes())\n"
    )
    res = {}
    for flag in ("0", "1"):
        env = dict(os.environ, RFTRAFFIC_PURE_PYTHON=flag)
        res[flag] = np.frombuffer(subprocess.run([sys.executable, "-c", script], env=env,
                                                 capture_output=True, check=True).stdout)
    np.testing.assert_allclose(res["0"], res["1"], atol=1e-10)
