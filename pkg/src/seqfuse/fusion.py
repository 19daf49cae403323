"""Fused item-embedding space: trainable ID vectors plus frozen text vectors.

The unified representation is e_id + W_text·e_text (additive mode), or a
per-dimension learned blend sigma(g)·e_id + (1-sigma(g))·W_text·e_text
(gated mode). W_neg is the sampler's dedicated projection and never touches
the scoring path. The frozen text matrix is data, not a parameter: no
optimizer step may change it.

W_text and W_neg start at zero so that an untrained text path is exactly
the ID-only model, and so that parameter initialization consumes identical
RNG draws in every fusion mode.
"""

from __future__ import annotations

from typing import List, Optional, Tuple

import numpy as np

from .errors import DataError
from .ops import Param, sigmoid

FUSION_MODES = ("none", "add", "gate")

INIT_STD = 0.02


class FusedItemSpace:
    def __init__(
        self,
        e_id: Param,
        e_text: Optional[np.ndarray],
        w_text: Optional[Param],
        w_neg: Optional[Param],
        gate: Optional[Param],
        mode: str,
    ):
        self.e_id = e_id
        self.e_text = e_text
        self.w_text = w_text
        self.w_neg = w_neg
        self.gate = gate
        self.mode = mode

    @classmethod
    def create(
        cls,
        n_items: int,
        d: int,
        mode: str,
        e_text: Optional[np.ndarray],
        rng: np.random.Generator,
        dtype=np.float32,
    ) -> "FusedItemSpace":
        if mode not in FUSION_MODES:
            raise DataError(f"unknown fusion mode {mode!r}")
        if mode != "none" and e_text is None:
            raise DataError(f"fusion mode {mode!r} requires a text embedding table")
        e_id = Param("space.e_id", (rng.standard_normal((n_items, d)) * INIT_STD).astype(dtype))
        w_text = w_neg = gate = None
        if e_text is not None:
            e_text = np.asarray(e_text, dtype=dtype)
            d_t = e_text.shape[1]
            w_text = Param("space.w_text", np.zeros((d, d_t), dtype=dtype), decay=True)
            w_neg = Param("space.w_neg", np.zeros((d, d_t), dtype=dtype), decay=True)
        if mode == "gate":
            gate = Param("space.gate", np.zeros(d, dtype=dtype))
        return cls(e_id, e_text, w_text, w_neg, gate, mode)

    @property
    def n_items(self) -> int:
        return int(self.e_id.value.shape[0])

    @property
    def d(self) -> int:
        return int(self.e_id.value.shape[1])

    def trainable(self) -> List[Param]:
        """Parameters the optimizer may touch under the active fusion mode."""
        if self.mode == "none":
            return [self.e_id]
        params = [self.e_id, self.w_text, self.w_neg]
        if self.mode == "gate":
            params.append(self.gate)
        return params

    def _check_index(self, item_index: int) -> None:
        if not 0 <= item_index < self.n_items:
            raise DataError(f"item index {item_index} out of range [0, {self.n_items})")


def fuse_add(item_index: int, space: FusedItemSpace) -> np.ndarray:
    """e_id + W_text·e_text (or plain e_id when the space has no text path)."""
    space._check_index(item_index)
    if space.mode == "gate":
        raise DataError("fuse_add is undefined in gate mode; use fuse_gate")
    base = space.e_id.value[item_index]
    if space.mode == "none":
        return base.copy()
    return base + space.w_text.value @ space.e_text[item_index]


def fuse_gate(item_index: int, space: FusedItemSpace) -> np.ndarray:
    """sigma(g) ⊙ e_id + (1 - sigma(g)) ⊙ W_text·e_text, elementwise."""
    space._check_index(item_index)
    if space.mode != "gate":
        raise DataError("fuse_gate requires fusion mode 'gate'")
    s = sigmoid(space.gate.value)
    proj = space.w_text.value @ space.e_text[item_index]
    return s * space.e_id.value[item_index] + (1.0 - s) * proj


def fuse_forward(space: FusedItemSpace, items: np.ndarray) -> Tuple[np.ndarray, tuple]:
    """Batched fusion for any index tensor shape; returns (..., d) and a cache."""
    ids = space.e_id.value[items]
    if space.mode == "none":
        return ids.copy(), (items, None, None)
    x_text = space.e_text[items]
    proj = x_text @ space.w_text.value.T
    if space.mode == "add":
        return ids + proj, (items, x_text, None)
    s = sigmoid(space.gate.value)
    return s * ids + (1.0 - s) * proj, (items, x_text, (s, ids, proj))


def fuse_backward(d_out: np.ndarray, cache: tuple, space: FusedItemSpace) -> None:
    """Accumulate gradients into e_id, w_text, and the gate."""
    items, x_text, gate_cache = cache
    flat_items = items.reshape(-1)
    if space.mode == "none":
        np.add.at(space.e_id.grad, flat_items, d_out.reshape(-1, space.d))
        return
    x_flat = x_text.reshape(-1, x_text.shape[-1])
    if space.mode == "add":
        d_flat = d_out.reshape(-1, space.d)
        np.add.at(space.e_id.grad, flat_items, d_flat)
        space.w_text.grad += d_flat.T @ x_flat
        return
    s, ids, proj = gate_cache
    d_flat = d_out.reshape(-1, space.d)
    np.add.at(space.e_id.grad, flat_items, d_flat * s)
    dproj = d_flat * (1.0 - s)
    space.w_text.grad += dproj.T @ x_flat
    dgate = ((ids - proj) * d_out).reshape(-1, space.d).sum(axis=0)
    space.gate.grad += dgate * s * (1.0 - s)


def fused_matrix(space: FusedItemSpace) -> np.ndarray:
    """All items fused at once: the candidate side of the scoring dot product."""
    if space.mode == "none":
        return space.e_id.value.copy()
    proj = space.e_text @ space.w_text.value.T
    if space.mode == "add":
        return space.e_id.value + proj
    s = sigmoid(space.gate.value)
    return s * space.e_id.value + (1.0 - s) * proj
