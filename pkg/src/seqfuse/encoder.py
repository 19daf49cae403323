"""Stacked gated-attention encoder producing autoregressive hidden states.

Each block maps its input X (one linear layer, SiLU) to four tensors
U, V, Q, K; per-head attention weights are silu(QKᵀ/sqrt(d/h) + B_rel)
under the causal mask, divided by the sequence's true length (pointwise
aggregation; `attn_kind="softmax"` switches to conventional softmax rows
for ablation). The block output is X + linear(LayerNorm(attn·V) ⊙ U).
B_rel is a learnable per-head bucket table indexed by clip(t-s, ±clip),
one table per block.

Because attention weights are scaled by 1/length, hidden states depend on
the sequence's total length through that scalar; causality still holds:
h_t never reads values at positions > t.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from . import kernels
from .errors import DataError
from .fusion import INIT_STD, FusedItemSpace, fuse_backward, fuse_forward, fused_matrix
from .ops import Param, layernorm, layernorm_backward, normalize_rows, silu, silu_grad

ATTN_KINDS = ("pointwise", "softmax")


@dataclass
class EncoderConfig:
    d: int = 64
    n_blocks: int = 4
    n_heads: int = 4
    max_len: int = 200
    rel_clip: int = 64
    attn_kind: str = "pointwise"
    absolute_positions: bool = True

    def validate(self) -> None:
        if self.d % self.n_heads != 0:
            raise DataError(f"model dim {self.d} not divisible by n_heads {self.n_heads}")
        if self.attn_kind not in ATTN_KINDS:
            raise DataError(f"unknown attn_kind {self.attn_kind!r}")
        if min(self.d, self.n_blocks, self.n_heads, self.max_len, self.rel_clip) < 1:
            raise DataError("encoder dimensions must be positive")


class Block:
    def __init__(self, idx: int, cfg: EncoderConfig, rng: np.random.Generator, dtype):
        d = cfg.d
        prefix = f"enc.b{idx}"
        self.w_in = Param(f"{prefix}.w_in", (rng.standard_normal((d, 4 * d)) * INIT_STD).astype(dtype), decay=True)
        self.b_in = Param(f"{prefix}.b_in", np.zeros(4 * d, dtype=dtype))
        limit = np.sqrt(6.0 / (2 * d))
        self.w_out = Param(f"{prefix}.w_out", rng.uniform(-limit, limit, size=(d, d)).astype(dtype), decay=True)
        self.b_out = Param(f"{prefix}.b_out", np.zeros(d, dtype=dtype))
        self.rel_bias = Param(
            f"{prefix}.rel_bias",
            (rng.standard_normal((cfg.n_heads, 2 * cfg.rel_clip + 1)) * INIT_STD).astype(dtype),
        )

    def params(self) -> List[Param]:
        return [self.w_in, self.b_in, self.w_out, self.b_out, self.rel_bias]


class Encoder:
    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator, dtype=np.float32):
        cfg.validate()
        self.cfg = cfg
        self.pos = Param("enc.pos", (rng.standard_normal((cfg.max_len, cfg.d)) * INIT_STD).astype(dtype))
        self.blocks = [Block(i, cfg, rng, dtype) for i in range(cfg.n_blocks)]

    def params(self) -> List[Param]:
        out = [self.pos]
        for block in self.blocks:
            out.extend(block.params())
        return out


def _rel_bucket_index(T: int, clip: int) -> np.ndarray:
    pos = np.arange(T)
    delta = pos[:, None] - pos[None, :]
    return np.clip(delta, -clip, clip) + clip  # (T, T) into [0, 2*clip]


def _split_heads(x: np.ndarray, n_heads: int) -> np.ndarray:
    B, T, d = x.shape
    return x.reshape(B, T, n_heads, d // n_heads).transpose(0, 2, 1, 3)


def _merge_heads(x: np.ndarray) -> np.ndarray:
    B, H, T, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(B, T, H * dh)


def _softmax_attn_forward(q, k, v, bias, lens):
    T = q.shape[2]
    scale = 1.0 / np.sqrt(np.asarray(q.shape[-1], dtype=q.dtype))
    scores = np.matmul(q, k.transpose(0, 1, 3, 2)) * scale + bias[None]
    pos = np.arange(T)
    allowed = (pos[None, :] <= pos[:, None])[None, None] & (pos[None, :] < lens[:, None])[:, None, None, :]
    scores = np.where(allowed, scores, -np.inf)
    m = scores.max(axis=-1, keepdims=True)
    e = np.exp(scores - m)
    p = e / e.sum(axis=-1, keepdims=True)
    return np.matmul(p, v), p


def _softmax_attn_backward(d_out, q, k, v, p, lens):
    scale = 1.0 / np.sqrt(np.asarray(q.shape[-1], dtype=q.dtype))
    dp = np.matmul(d_out, v.transpose(0, 1, 3, 2))
    dv = np.matmul(p.transpose(0, 1, 3, 2), d_out)
    dscores = p * (dp - np.sum(dp * p, axis=-1, keepdims=True))
    dq = np.matmul(dscores, k) * scale
    dk = np.matmul(dscores.transpose(0, 1, 3, 2), q) * scale
    return dq, dk, dv, dscores.sum(axis=0)


def encoder_forward(
    X: np.ndarray, lens: np.ndarray, enc: Encoder, need_cache: bool = False
) -> Tuple[np.ndarray, Optional[list]]:
    """Run all blocks over a padded batch. X is (B, T, d); lens holds each
    row's true length. Returns hidden states and, on request, the caches
    needed by encoder_backward."""
    cfg = enc.cfg
    B, T, d = X.shape
    if T > cfg.max_len:
        raise DataError(f"sequence length {T} exceeds max_len {cfg.max_len}")
    lens = np.asarray(lens, dtype=np.int64)
    bucket = _rel_bucket_index(T, cfg.rel_clip)
    caches = [] if need_cache else None
    for block in enc.blocks:
        bias = block.rel_bias.value[:, bucket]  # (H, T, T)
        Y = X @ block.w_in.value + block.b_in.value
        S = silu(Y)
        U, Vl, Q, K = np.split(S, 4, axis=-1)
        qh = _split_heads(Q, cfg.n_heads)
        kh = _split_heads(K, cfg.n_heads)
        vh = _split_heads(Vl, cfg.n_heads)
        if cfg.attn_kind == "pointwise":
            A_h, attn_cache = kernels.pointwise_attn_forward(qh, kh, vh, bias, lens)
        else:
            A_h, attn_cache = _softmax_attn_forward(qh, kh, vh, bias, lens)
        A = _merge_heads(A_h)
        LN, ln_cache = layernorm(A)
        G = LN * U
        O = G @ block.w_out.value + block.b_out.value
        X_next = X + O
        if need_cache:
            caches.append((X, Y, U, LN, ln_cache, qh, kh, vh, attn_cache, G, bucket))
        X = X_next
    return X, caches


def encoder_backward(dH: np.ndarray, caches: list, lens: np.ndarray, enc: Encoder) -> np.ndarray:
    """Backpropagate through all blocks, accumulating parameter gradients;
    returns the gradient with respect to the embedded input."""
    cfg = enc.cfg
    lens = np.asarray(lens, dtype=np.int64)
    dX = dH
    for block, cache in zip(reversed(enc.blocks), reversed(caches)):
        X, Y, U, LN, ln_cache, qh, kh, vh, attn_cache, G, bucket = cache
        dO = dX
        B, T, d = X.shape
        dO_flat = dO.reshape(-1, d)
        block.w_out.grad += G.reshape(-1, d).T @ dO_flat
        block.b_out.grad += dO_flat.sum(axis=0)
        dG = dO @ block.w_out.value.T
        dLN = dG * U
        dU = dG * LN
        dA = layernorm_backward(dLN, ln_cache)
        dA_h = _split_heads(dA, cfg.n_heads)
        if cfg.attn_kind == "pointwise":
            dq, dk, dv, dbias = kernels.pointwise_attn_backward(dA_h, qh, kh, vh, attn_cache, lens)
        else:
            dq, dk, dv, dbias = _softmax_attn_backward(dA_h, qh, kh, vh, attn_cache, lens)
        flat_bucket = bucket.reshape(-1)
        for h in range(cfg.n_heads):
            np.add.at(block.rel_bias.grad[h], flat_bucket, dbias[h].reshape(-1))
        dS = np.concatenate([dU, _merge_heads(dv), _merge_heads(dq), _merge_heads(dk)], axis=-1)
        dY = silu_grad(Y) * dS
        dY_flat = dY.reshape(-1, 4 * d)
        block.w_in.grad += X.reshape(-1, d).T @ dY_flat
        block.b_in.grad += dY_flat.sum(axis=0)
        dX = dX + dY @ block.w_in.value.T
    return dX


def embed_batch(
    items: np.ndarray,
    lens: np.ndarray,
    space: FusedItemSpace,
    enc: Encoder,
    dropout_rate: float,
    rng: Optional[np.random.Generator],
    train: bool,
) -> Tuple[np.ndarray, tuple]:
    """Fuse + absolute positions + (train-only) inverted dropout for a padded
    batch; padded rows come out exactly zero."""
    B, T = items.shape
    fused, fuse_cache = fuse_forward(space, items)
    X = fused
    if enc.cfg.absolute_positions:
        X = X + enc.pos.value[:T]
    valid = (np.arange(T)[None, :] < np.asarray(lens)[:, None]).astype(X.dtype)[:, :, None]
    X = X * valid
    drop_mask = None
    if train and dropout_rate > 0.0:
        if dropout_rate >= 1.0:
            keep = np.zeros_like(X)  # degenerate rate: everything dropped
        else:
            keep = (rng.random(size=X.shape) >= dropout_rate).astype(X.dtype) / (1.0 - dropout_rate)
        X = X * keep
        drop_mask = keep
    return X, (fuse_cache, valid, drop_mask, T)


def embed_batch_backward(dX: np.ndarray, cache: tuple, space: FusedItemSpace, enc: Encoder) -> None:
    fuse_cache, valid, drop_mask, T = cache
    if drop_mask is not None:
        dX = dX * drop_mask
    dX = dX * valid
    if enc.cfg.absolute_positions:
        enc.pos.grad[:T] += dX.sum(axis=0)
    fuse_backward(dX, fuse_cache, space)


def embed_sequence(
    items: np.ndarray,
    space: FusedItemSpace,
    dropout_rate: float,
    enc: Encoder,
    rng: Optional[np.random.Generator] = None,
    train: bool = False,
) -> np.ndarray:
    """Single-sequence embedding: rows are dropout(fuse(item) + pos). Inputs
    longer than max_len keep only the most recent max_len items. Eval mode
    never consumes the rng (dropout is forced off)."""
    items = np.asarray(items, dtype=np.int64)
    if items.size > enc.cfg.max_len:
        items = items[-enc.cfg.max_len:]
    X, _ = embed_batch(
        items[None, :], np.asarray([items.size]), space, enc, dropout_rate, rng, train
    )
    return X[0]


def encode(X: np.ndarray, enc: Encoder) -> np.ndarray:
    """Spec-level single-sequence forward: (T, d) -> (T, d) hidden states."""
    H, _ = encoder_forward(X[None, :, :], np.asarray([X.shape[0]]), enc)
    return H[0]


def score(
    h: np.ndarray,
    candidate_indices: np.ndarray,
    space: FusedItemSpace,
    temperature: float,
) -> np.ndarray:
    """Cosine logits: <h/|h|, fused_candidate/|fused_candidate|> / temperature.
    A zero-norm vector on either side contributes a zero logit."""
    candidate_indices = np.asarray(candidate_indices, dtype=np.int64)
    if candidate_indices.size and (
        candidate_indices.min() < 0 or candidate_indices.max() >= space.n_items
    ):
        raise DataError("candidate index out of range")
    hn, _ = normalize_rows(h)
    cand, _ = fuse_forward(space, candidate_indices)
    cn, _ = normalize_rows(cand)
    return cn @ hn / temperature
