"""Backend selection for the hot loops.

The compiled extension is used when importable; otherwise (or when the
``MDST_PURE_PYTHON`` environment variable is set) the numpy fallback runs.
"""
import os

import numpy as np

from . import _kernels_py

SURROGATE_KINDS = {"sigmoid": _kernels_py.SURROGATE_SIGMOID, "atan": _kernels_py.SURROGATE_ATAN}

_compiled = None
if not os.environ.get("MDST_PURE_PYTHON"):
    try:
        from . import _kernels as _compiled
    except ImportError:
        _compiled = None

BACKEND = "compiled" if _compiled is not None else "python"


def get_backend(name=None):
    """Return the kernel module for ``name`` ('compiled', 'python' or None for active)."""
    if name is None:
        name = BACKEND
    if name == "compiled":
        if _compiled is None:
            raise ImportError("compiled kernels are not built")
        return _compiled
    if name == "python":
        return _kernels_py
    raise ValueError(f"unknown kernel backend {name!r}")


def lif_forward(current, theta, decay, gain, v_reset, v0, soft=False, alpha=4.0, kind=0, backend=None):
    k = get_backend(backend)
    return k.lif_forward(
        np.ascontiguousarray(current, dtype=np.float64),
        np.ascontiguousarray(theta, dtype=np.float64),
        float(decay), float(gain), float(v_reset),
        np.ascontiguousarray(v0, dtype=np.float64),
        bool(soft), float(alpha), int(kind),
    )


def lif_backward(grad_spikes, grad_vlast, upre, spikes, theta, decay, gain, v_reset,
                 alpha=4.0, kind=0, backend=None):
    k = get_backend(backend)
    return k.lif_backward(
        np.ascontiguousarray(grad_spikes, dtype=np.float64),
        np.ascontiguousarray(grad_vlast, dtype=np.float64),
        np.ascontiguousarray(upre, dtype=np.float64),
        np.ascontiguousarray(spikes, dtype=np.float64),
        np.ascontiguousarray(theta, dtype=np.float64),
        float(decay), float(gain), float(v_reset), float(alpha), int(kind),
    )


def egm_emit(log_frames, threshold, backend=None):
    k = get_backend(backend)
    return k.egm_emit(np.ascontiguousarray(log_frames, dtype=np.float64), float(threshold))
