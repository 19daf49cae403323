"""Attention kernel backend selection.

The compiled Cython kernel is used when the extension built; otherwise the
NumPy reference takes over. Set SEQFUSE_PURE_PYTHON=1 to force the fallback
(used by the benchmark and the kernel-equivalence tests).
"""

from __future__ import annotations

import os

import numpy as np

from . import numpy_ref

if os.environ.get("SEQFUSE_PURE_PYTHON"):
    _backend = numpy_ref
else:
    try:
        from . import _attn as _backend  # type: ignore[no-redef]
    except ImportError:
        _backend = numpy_ref

_COMPILED_AVAILABLE = _backend is not numpy_ref


def backend_name() -> str:
    return _backend.NAME


def compiled_available() -> bool:
    return _COMPILED_AVAILABLE


def use(name: str) -> None:
    """Switch backend at runtime ('numpy' or 'cython'); mainly for tests."""
    global _backend
    if name == "numpy":
        _backend = numpy_ref
    elif name == "cython":
        from . import _attn  # raises ImportError if the extension is absent

        _backend = _attn
    else:
        raise ValueError(f"unknown kernel backend {name!r}")


def pointwise_attn_forward(q, k, v, bias, lens):
    if _backend is not numpy_ref:
        q, k, v, bias = (np.ascontiguousarray(a) for a in (q, k, v, bias))
        lens = np.ascontiguousarray(lens, dtype=np.int64)
    return _backend.pointwise_attn_forward(q, k, v, bias, lens)


def pointwise_attn_backward(d_out, q, k, v, scores, lens):
    if _backend is not numpy_ref:
        d_out, q, k, v, scores = (np.ascontiguousarray(a) for a in (d_out, q, k, v, scores))
        lens = np.ascontiguousarray(lens, dtype=np.int64)
    return _backend.pointwise_attn_backward(d_out, q, k, v, scores, lens)
