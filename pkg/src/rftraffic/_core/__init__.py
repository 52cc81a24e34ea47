"""Kernel backend selection.

The compiled extension is used when importable; set ``RFTRAFFIC_PURE_PYTHON=1``
to force the numpy fallback. ``BACKEND`` names the active one.
"""
import os

from . import _fallback

KERNEL_NAMES = (
    "crc16_x25",
    "bit_stuff",
    "bit_unstuff",
    "flag_segments",
    "sinc_resample",
    "lstm_pointwise_forward",
    "lstm_pointwise_backward",
)


def _load_compiled():
    try:
        from . import _kernels
    except ImportError:
        return None
    return _kernels


_compiled = None if os.environ.get("RFTRAFFIC_PURE_PYTHON") == "1" else _load_compiled()
kernels = _compiled if _compiled is not None else _fallback
BACKEND = "compiled" if _compiled is not None else "python"


def available_backends():
    """Map backend name -> kernel module for every importable backend."""
    out = {"python": _fallback}
    compiled = _load_compiled()
    if compiled is not None:
        out["compiled"] = compiled
    return out
