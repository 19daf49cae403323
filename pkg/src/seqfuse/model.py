"""Model assembly: fused item space + encoder + scoring head, and the
mapping between live parameters and named checkpoint tensors."""

from __future__ import annotations

from typing import Dict, List, Optional, Tuple

import numpy as np

from .config import TrainConfig
from .encoder import Encoder, EncoderConfig, embed_batch, embed_batch_backward, encoder_backward, encoder_forward
from .errors import CheckpointError
from .fusion import FusedItemSpace
from .ops import Param, normalize_rows


class Model:
    def __init__(self, space: FusedItemSpace, enc: Encoder, config: TrainConfig):
        self.space = space
        self.enc = enc
        self.config = config

    @property
    def dtype(self):
        return self.space.e_id.value.dtype

    def params(self) -> List[Param]:
        return self.space.trainable() + self.enc.params()

    def zero_grad(self) -> None:
        for p in self.params():
            p.zero_grad()

    def hidden_batch(
        self,
        items: np.ndarray,
        lens: np.ndarray,
        rng: Optional[np.random.Generator] = None,
        train: bool = False,
        need_cache: bool = False,
    ) -> Tuple[np.ndarray, Optional[tuple]]:
        """Embed + encode a padded index batch; returns (B, T, d) hidden states."""
        X, embed_cache = embed_batch(
            items, lens, self.space, self.enc, self.config.dropout, rng, train
        )
        H, enc_caches = encoder_forward(X, lens, self.enc, need_cache=need_cache)
        return H, ((embed_cache, enc_caches, lens) if need_cache else None)

    def hidden_batch_backward(self, dH: np.ndarray, cache: tuple) -> None:
        embed_cache, enc_caches, lens = cache
        dX = encoder_backward(dH, enc_caches, lens, self.enc)
        embed_batch_backward(dX, embed_cache, self.space, self.enc)

    def candidate_matrix(self) -> np.ndarray:
        """Unit-normalized fused embedding per catalog item, (I, d)."""
        from .fusion import fused_matrix

        m, _ = normalize_rows(fused_matrix(self.space))
        return m


def build_model(config: TrainConfig, n_items: int, e_text: Optional[np.ndarray]) -> Model:
    """Fresh model; RNG draw order is fixed and fusion-mode independent."""
    config.validate()
    dtype = config.np_dtype()
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0]))
    space = FusedItemSpace.create(n_items, config.d, config.fusion_mode, e_text, rng, dtype)
    enc = Encoder(config.encoder_config(), rng, dtype)
    return Model(space, enc, config)


def model_tensors(model: Model) -> Dict[str, np.ndarray]:
    tensors = {p.name: p.value for p in model.space.trainable() + model.enc.params()}
    # fusion-mode "none" leaves w_text/w_neg out of trainable(); persist them anyway
    for extra in (model.space.w_text, model.space.w_neg, model.space.gate):
        if extra is not None:
            tensors.setdefault(extra.name, extra.value)
    if model.space.e_text is not None:
        tensors["space.e_text"] = model.space.e_text
    return tensors


def model_from_tensors(config: TrainConfig, tensors: Dict[str, np.ndarray]) -> Model:
    """Rebuild a model from checkpoint tensors, rejecting dimension mismatches."""
    config.validate()
    dtype = config.np_dtype()

    def take(name: str, shape: tuple) -> np.ndarray:
        if name not in tensors:
            raise CheckpointError(f"checkpoint is missing tensor {name!r}")
        arr = tensors[name]
        if tuple(arr.shape) != shape:
            raise CheckpointError(f"tensor {name!r} has shape {tuple(arr.shape)}, expected {shape}")
        return np.asarray(arr, dtype=dtype)

    if "space.e_id" not in tensors:
        raise CheckpointError("checkpoint is missing tensor 'space.e_id'")
    n_items, d = tensors["space.e_id"].shape
    if d != config.d:
        raise CheckpointError(f"checkpoint model dim {d} != config dim {config.d}")

    e_text = None
    w_text = w_neg = gate = None
    e_id = Param("space.e_id", take("space.e_id", (n_items, d)))
    if "space.e_text" in tensors:
        e_text = np.asarray(tensors["space.e_text"], dtype=dtype)
        d_t = e_text.shape[1]
        w_text = Param("space.w_text", take("space.w_text", (d, d_t)), decay=True)
        w_neg = Param("space.w_neg", take("space.w_neg", (d, d_t)), decay=True)
    elif config.fusion_mode != "none":
        raise CheckpointError(f"fusion mode {config.fusion_mode!r} needs space.e_text in the checkpoint")
    if config.fusion_mode == "gate":
        gate = Param("space.gate", take("space.gate", (d,)))
    space = FusedItemSpace(e_id, e_text, w_text, w_neg, gate, config.fusion_mode)

    enc_cfg = config.encoder_config()
    rng = np.random.default_rng(0)  # values are overwritten below
    enc = Encoder(enc_cfg, rng, dtype)
    enc.pos.value = take("enc.pos", (enc_cfg.max_len, enc_cfg.d))
    enc.pos.grad = np.zeros_like(enc.pos.value)
    for block in enc.blocks:
        for p in block.params():
            p.value = take(p.name, p.value.shape)
            p.grad = np.zeros_like(p.value)
    return Model(space, enc, config)
