"""Pure-NumPy attention kernels; the reference the compiled extension must match.

Shapes: q, k, v are (B, H, T, Dh); bias is (H, T, T); lens gives each
sequence's true length. Attention weights are
    silu(q·kᵀ/sqrt(Dh) + bias) · causal_mask / len
(pointwise aggregation, no softmax); keys and queries at padded positions
are masked out, so padded output rows are exactly zero.
"""

from __future__ import annotations

from typing import Tuple

import numpy as np

from ..ops import silu, silu_grad

NAME = "numpy"


def _mask(lens: np.ndarray, T: int, dtype) -> np.ndarray:
    """(B,1,T,T) multiplicative mask: [s<=t][t<len][s<len] / len."""
    pos = np.arange(T)
    causal = pos[None, :] <= pos[:, None]  # [t, s] -> s <= t
    valid = pos[None, :] < lens[:, None]  # (B, T)
    m = causal[None] & valid[:, None, :] & valid[:, :, None]
    return (m[:, None].astype(dtype)) / lens.astype(dtype)[:, None, None, None]


def pointwise_attn_forward(
    q: np.ndarray, k: np.ndarray, v: np.ndarray, bias: np.ndarray, lens: np.ndarray
) -> Tuple[np.ndarray, np.ndarray]:
    """Returns (out, scores); `scores` is the pre-activation cache for backward."""
    dh = q.shape[-1]
    scale = 1.0 / np.sqrt(np.asarray(dh, dtype=q.dtype))
    scores = np.matmul(q, k.transpose(0, 1, 3, 2)) * scale + bias[None]
    p = silu(scores) * _mask(lens, q.shape[2], q.dtype)
    out = np.matmul(p, v)
    return out, scores


def pointwise_attn_backward(
    d_out: np.ndarray,
    q: np.ndarray,
    k: np.ndarray,
    v: np.ndarray,
    scores: np.ndarray,
    lens: np.ndarray,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    dh = q.shape[-1]
    scale = 1.0 / np.sqrt(np.asarray(dh, dtype=q.dtype))
    mask = _mask(lens, q.shape[2], q.dtype)
    p = silu(scores) * mask
    dp = np.matmul(d_out, v.transpose(0, 1, 3, 2))
    dv = np.matmul(p.transpose(0, 1, 3, 2), d_out)
    dscores = dp * mask * silu_grad(scores)
    dq = np.matmul(dscores, k) * scale
    dk = np.matmul(dscores.transpose(0, 1, 3, 2), q) * scale
    dbias = dscores.sum(axis=0)
    return dq, dk, dv, dbias
