"""Text-aware local negative sampling.

Selection is plain uniform over the catalog (one draw per negative, with
replacement) in every fusion mode; only the *returned embedding* changes:
the unit-normalized sum e_id + W_neg·e_text, so the sampling distribution
is untouched while negatives carry semantic structure. In fusion mode
"none" the embedding degrades to e_id/|e_id|.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from .errors import DataError
from .fusion import FusedItemSpace
from .ops import normalize_rows, normalize_rows_backward

logger = logging.getLogger("seqfuse.sampler")


@dataclass
class NegativeBatch:
    ids: np.ndarray  # (n,) sampled item indices
    embeddings: np.ndarray  # (n, d) unit-norm fused vectors


def sample_ids(n: int, catalog_size: int, rng: np.random.Generator) -> np.ndarray:
    """n i.i.d. uniform draws over [0, catalog_size), with replacement.

    Exactly one generator call; positives are not excluded (collisions are
    masked downstream in the loss)."""
    if catalog_size < 1:
        raise DataError(f"catalog_size must be >= 1, got {catalog_size}")
    return rng.integers(0, catalog_size, size=n, dtype=np.int64)


def negative_embeddings(ids: np.ndarray, space: FusedItemSpace) -> Tuple[np.ndarray, tuple]:
    """Unit-norm fused embeddings for sampled ids, plus a backward cache.

    A pre-normalization zero vector (possible only at pathological
    initialization) is replaced by the first standard basis vector and
    logged; such rows carry no gradient."""
    pre = space.e_id.value[ids]
    x_text = None
    if space.mode != "none":
        x_text = space.e_text[ids]
        pre = pre + x_text @ space.w_neg.value.T
    emb, norms = normalize_rows(pre)
    zero_rows = np.flatnonzero(norms[..., 0] == 0.0)
    if zero_rows.size:
        logger.warning(
            "replacing %d zero-norm sampled embedding(s) with the first basis vector (item ids %s)",
            zero_rows.size,
            ids[zero_rows][:5].tolist(),
        )
        emb[zero_rows] = 0.0
        emb[zero_rows, 0] = 1.0
    return emb, (ids, x_text, emb, norms)


def negative_embeddings_backward(d_emb: np.ndarray, cache: tuple, space: FusedItemSpace) -> None:
    """Push gradients through the normalization into e_id and w_neg."""
    ids, x_text, emb, norms = cache
    dpre = normalize_rows_backward(d_emb, emb, norms)
    np.add.at(space.e_id.grad, ids, dpre)
    if space.mode != "none":
        space.w_neg.grad += dpre.T @ x_text


def fused_negative_embedding(item_id: int, space: FusedItemSpace) -> np.ndarray:
    """(e_id + W_neg·e_text) / |e_id + W_neg·e_text|  for one item."""
    if not 0 <= item_id < space.n_items:
        raise DataError(f"item index {item_id} out of range [0, {space.n_items})")
    emb, _ = negative_embeddings(np.asarray([item_id], dtype=np.int64), space)
    return emb[0]


def sample_batch(n: int, space: FusedItemSpace, rng: np.random.Generator) -> NegativeBatch:
    ids = sample_ids(n, space.n_items, rng)
    emb, _ = negative_embeddings(ids, space)
    return NegativeBatch(ids=ids, embeddings=emb)
