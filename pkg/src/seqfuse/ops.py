"""Differentiable primitives: each forward has a matching closed-form backward.

All functions are pure and dtype-preserving; gradients were validated against
central finite differences (see tests/test_model.py and the acceptance suite).
"""

from __future__ import annotations

from typing import Tuple

import numpy as np

LAYERNORM_EPS = 1e-6


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def silu(x: np.ndarray) -> np.ndarray:
    return x * sigmoid(x)


def silu_grad(x: np.ndarray) -> np.ndarray:
    s = sigmoid(x)
    return s * (1.0 + x * (1.0 - s))


def layernorm(x: np.ndarray) -> Tuple[np.ndarray, Tuple[np.ndarray, np.ndarray]]:
    """Normalize the last axis to zero mean, unit variance (no affine params)."""
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    inv_sigma = 1.0 / np.sqrt(np.mean(xc * xc, axis=-1, keepdims=True) + LAYERNORM_EPS)
    y = xc * inv_sigma
    return y, (y, inv_sigma)


def layernorm_backward(dy: np.ndarray, cache: Tuple[np.ndarray, np.ndarray]) -> np.ndarray:
    y, inv_sigma = cache
    mean_dy = dy.mean(axis=-1, keepdims=True)
    mean_dyy = (dy * y).mean(axis=-1, keepdims=True)
    return inv_sigma * (dy - mean_dy - y * mean_dyy)


def normalize_rows(x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """L2-normalize the last axis; an exactly zero vector maps to zero
    (no division), with zero gradient."""
    norms = np.linalg.norm(x, axis=-1, keepdims=True)
    safe = np.where(norms == 0.0, 1.0, norms)
    return x / safe, norms


def normalize_rows_backward(dy: np.ndarray, y: np.ndarray, norms: np.ndarray) -> np.ndarray:
    safe = np.where(norms == 0.0, 1.0, norms)
    dx = (dy - y * np.sum(y * dy, axis=-1, keepdims=True)) / safe
    return np.where(norms == 0.0, 0.0, dx)


class Param:
    """A named trainable tensor with an accumulated gradient buffer."""

    __slots__ = ("name", "value", "grad", "decay")

    def __init__(self, name: str, value: np.ndarray, decay: bool = False):
        self.name = name
        self.value = value
        self.grad = np.zeros_like(value)
        self.decay = decay

    def zero_grad(self) -> None:
        self.grad[...] = 0.0

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        return f"Param({self.name}, shape={self.value.shape}, decay={self.decay})"
