"""Autoregressive next-item training with sampled-softmax over text-aware negatives.

Every position of each training sequence contributes (position t predicts
item t+1); negatives are shared across a batch (one NegativeBatch per step)
unless per_position_negatives is set. The per-epoch data RNG is derived
from the seed alone, so epochs redraw identical shuffles and negatives
(set vary_sampling_across_epochs for conventional behavior); this makes
resume trivially bit-exact and keeps frozen-parameter runs at constant loss.
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .config import TrainConfig
from .corpus import SplitDataset
from .errors import CheckpointError, ConfigError, DataError
from .fusion import FusedItemSpace, fuse_forward, fuse_backward
from .model import Model, build_model, model_from_tensors, model_tensors
from .ops import Param, normalize_rows, normalize_rows_backward
from .sampler import NegativeBatch, negative_embeddings, negative_embeddings_backward, sample_ids


class AdamW:
    """Decoupled-weight-decay adaptive-moment optimizer; moments keyed by
    parameter name so they serialize into checkpoints."""

    def __init__(
        self,
        params: List[Param],
        lr: float,
        betas: Tuple[float, float] = (0.9, 0.98),
        eps: float = 1e-8,
        weight_decay: float = 0.01,
    ):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = {p.name: np.zeros_like(p.value) for p in self.params}
        self.v = {p.name: np.zeros_like(p.value) for p in self.params}

    def step(self) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for p in self.params:
            g = p.grad
            m = self.m[p.name]
            v = self.v[p.name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            if p.decay and self.weight_decay:
                update = update + self.weight_decay * p.value
            p.value -= self.lr * update


@dataclass
class TrainState:
    model: Model
    optimizer: AdamW
    epoch: int = 0  # completed epochs
    step: int = 0
    running_loss: float = 0.0


def sampled_softmax_loss(
    h: np.ndarray,
    positive_index: int,
    negatives: NegativeBatch,
    space: FusedItemSpace,
    temperature: float,
) -> float:
    """-log( exp(s+) / (exp(s+) + sum_j exp(s_j-)) ) for one position.

    s+ uses the W_text-fused, unit-normalized positive embedding; negatives
    arrive already unit-normalized from the sampler. Negatives whose id
    equals the positive are masked out of the partition function.
    """
    if temperature <= 0:
        raise DataError(f"temperature must be > 0, got {temperature}")
    hn, _ = normalize_rows(h)
    pos, _ = fuse_forward(space, np.asarray(positive_index, dtype=np.int64))
    pos_unit, _ = normalize_rows(pos)
    s_pos = float(hn @ pos_unit) / temperature
    s_neg = (negatives.embeddings @ hn) / temperature
    active = negatives.ids != positive_index
    m = s_pos if not active.any() else max(s_pos, float(s_neg[active].max()))
    z = np.exp(s_pos - m) + np.exp(np.where(active, s_neg - m, -np.inf)).sum()
    return float(-s_pos + m + np.log(z))


def _loss_forward_backward(hn, pos_unit, neg_unit, neg_ids, pos_ids, weights, temperature):
    """Batched loss over N positions. neg_unit is (n, d) for shared negatives
    or (N, n, d) per-position; returns (loss, dhn, dpos_unit, dneg_unit)."""
    tau = temperature
    shared = neg_unit.ndim == 2
    s_pos = np.sum(hn * pos_unit, axis=-1) / tau  # (N,)
    if shared:
        s_neg = hn @ neg_unit.T / tau  # (N, n)
        active = neg_ids[None, :] != pos_ids[:, None]
    else:
        s_neg = np.einsum("nd,nkd->nk", hn, neg_unit) / tau
        active = neg_ids != pos_ids[:, None]
    s_neg_eff = np.where(active, s_neg, -np.inf)
    m = np.maximum(s_pos, s_neg_eff.max(axis=1))
    e_pos = np.exp(s_pos - m)
    e_neg = np.exp(s_neg_eff - m[:, None])  # exactly 0 at masked entries
    z = e_pos + e_neg.sum(axis=1)
    losses = -s_pos + m + np.log(z)
    loss = float(np.sum((weights * losses).astype(np.float64)))

    d_pos = weights * (e_pos / z - 1.0)  # (N,)
    d_neg = (weights / z)[:, None] * e_neg  # (N, n), zero where masked
    if shared:
        dhn = (d_pos[:, None] * pos_unit + d_neg @ neg_unit) / tau
        dneg_unit = (d_neg.T @ hn) / tau
    else:
        dhn = (d_pos[:, None] * pos_unit + np.einsum("nk,nkd->nd", d_neg, neg_unit)) / tau
        dneg_unit = d_neg[:, :, None] * hn[:, None, :] / tau
    dpos_unit = d_pos[:, None] * hn / tau
    return loss, dhn, dpos_unit, dneg_unit


def _pad_batch(seqs: List[np.ndarray], max_len: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Truncate to the most recent max_len transitions, pad with item 0."""
    inputs = [s[:-1][-max_len:] for s in seqs]
    targets = [s[1:][-max_len:] for s in seqs]
    lens = np.asarray([len(x) for x in inputs], dtype=np.int64)
    T = int(lens.max())
    items = np.zeros((len(seqs), T), dtype=np.int64)
    targ = np.zeros((len(seqs), T), dtype=np.int64)
    for i, (inp, tgt) in enumerate(zip(inputs, targets)):
        items[i, : len(inp)] = inp
        targ[i, : len(tgt)] = tgt
    return items, targ, lens


def _train_step(
    model: Model, seqs: List[np.ndarray], rng: np.random.Generator, config: TrainConfig, optimizer: AdamW
) -> float:
    space = model.space
    items, targets, lens = _pad_batch(seqs, config.max_len)
    B = items.shape[0]
    dtype = model.dtype

    if config.per_position_negatives:
        n_positions = int(lens.sum())
        neg_ids = sample_ids(n_positions * config.n_negatives, space.n_items, rng).reshape(
            n_positions, config.n_negatives
        )
    else:
        neg_ids = sample_ids(config.n_negatives, space.n_items, rng)
    neg_unit, neg_cache = negative_embeddings(neg_ids, space)

    H, cache = model.hidden_batch(items, lens, rng=rng, train=True, need_cache=True)
    bidx, tidx = np.nonzero(np.arange(items.shape[1])[None, :] < lens[:, None])
    h = H[bidx, tidx]
    hn, h_norms = normalize_rows(h)
    pos_ids = targets[bidx, tidx]
    pos_fused, pos_cache = fuse_forward(space, pos_ids)
    pos_unit, pos_norms = normalize_rows(pos_fused)

    # mean over positions within a user, then mean over users in the batch
    weights = (1.0 / (B * lens[bidx])).astype(dtype)

    loss, dhn, dpos_unit, dneg_unit = _loss_forward_backward(
        hn, pos_unit, neg_unit, neg_ids, pos_ids, weights, config.temperature
    )

    model.zero_grad()
    dpos = normalize_rows_backward(dpos_unit, pos_unit, pos_norms)
    fuse_backward(dpos, pos_cache, space)
    negative_embeddings_backward(dneg_unit, neg_cache, space)
    dh = normalize_rows_backward(dhn, hn, h_norms)
    dH = np.zeros_like(H)
    dH[bidx, tidx] = dh
    model.hidden_batch_backward(dH, cache)
    optimizer.step()
    return loss


def _epoch_rng(config: TrainConfig, epoch_index: int) -> np.random.Generator:
    salt = epoch_index if config.vary_sampling_across_epochs else 0
    return np.random.default_rng(np.random.SeedSequence([config.seed, 1, salt]))


def train_epoch(dataset: SplitDataset, state: TrainState, config: TrainConfig) -> float:
    """One pass over all users; returns the mean per-batch loss."""
    if dataset.n_users == 0:
        raise DataError("empty dataset")
    rng = _epoch_rng(config, state.epoch)
    order = rng.permutation(dataset.n_users)
    losses: List[float] = []
    for start in range(0, len(order), config.batch_size):
        batch_users = order[start : start + config.batch_size]
        seqs = [dataset.train_sequences[u] for u in batch_users]
        seqs = [s for s in seqs if len(s) >= 2]  # length-1 histories have no transition
        if not seqs:
            continue
        loss = _train_step(state.model, seqs, rng, config, state.optimizer)
        state.step += 1
        losses.append(loss)
    if not losses:
        raise DataError("no trainable sequence has >= 2 items")
    state.epoch += 1
    state.running_loss = float(np.mean(losses))
    return state.running_loss


@dataclass
class FitResult:
    best_path: str
    last_path: str
    log_path: str
    history: List[Dict] = field(default_factory=list)


def _state_tensors(state: TrainState) -> Dict[str, np.ndarray]:
    tensors = model_tensors(state.model)
    for p in state.optimizer.params:
        tensors[f"opt.m.{p.name}"] = state.optimizer.m[p.name]
        tensors[f"opt.v.{p.name}"] = state.optimizer.v[p.name]
    return tensors


def _save_state(path: str, state: TrainState, config: TrainConfig, best_ndcg10: Optional[float]) -> None:
    meta = {
        "epoch": state.epoch,
        "step": state.step,
        "running_loss": state.running_loss,
        "opt_t": state.optimizer.t,
        "best_ndcg10": best_ndcg10,
        "rng": {"kind": "per-epoch", "seed": config.seed, "vary": config.vary_sampling_across_epochs},
    }
    save_checkpoint(path, config.to_dict(), meta, _state_tensors(state))


def _make_optimizer(model: Model, config: TrainConfig) -> AdamW:
    frozen = config.frozen_names()
    all_names = {p.name for p in model.params()}
    unknown = frozen - all_names
    if unknown:
        raise ConfigError(f"freeze lists unknown parameter(s): {sorted(unknown)}")
    params = [p for p in model.params() if p.name not in frozen]
    return AdamW(params, lr=config.learning_rate, weight_decay=config.weight_decay)


def _restore_state(path: str, config: TrainConfig) -> Tuple[TrainState, Optional[float]]:
    ckpt_config_dict, meta, tensors = load_checkpoint(path)
    ckpt_config = TrainConfig.from_dict(ckpt_config_dict)
    differing = [
        key
        for key in ckpt_config_dict
        if key != "epochs" and getattr(ckpt_config, key) != getattr(config, key)
    ]
    if differing:
        raise ConfigError(f"resume config differs from checkpoint on: {', '.join(sorted(differing))}")
    model = model_from_tensors(config, tensors)
    optimizer = _make_optimizer(model, config)
    optimizer.t = int(meta["opt_t"])
    for p in optimizer.params:
        for prefix, store in (("opt.m.", optimizer.m), ("opt.v.", optimizer.v)):
            key = prefix + p.name
            if key not in tensors:
                raise CheckpointError(f"checkpoint {path} is missing optimizer tensor {key!r}")
            store[p.name] = np.asarray(tensors[key], dtype=p.value.dtype)
    state = TrainState(
        model=model,
        optimizer=optimizer,
        epoch=int(meta["epoch"]),
        step=int(meta["step"]),
        running_loss=float(meta["running_loss"]),
    )
    best = meta.get("best_ndcg10")
    return state, (float(best) if best is not None else None)


def fit(
    dataset: SplitDataset,
    config: TrainConfig,
    e_text: Optional[np.ndarray] = None,
    out_dir: str = "run",
    resume_from: Optional[str] = None,
) -> FitResult:
    """Train for config.epochs epochs, evaluating every eval_every epochs on
    the held-out items; writes best-by-NDCG@10 and last checkpoints plus a
    JSONL log line per epoch."""
    from .evaluate import evaluate_model  # local import: evaluate depends on model only

    config.validate()
    os.makedirs(out_dir, exist_ok=True)
    best_path = os.path.join(out_dir, "best.ckpt")
    last_path = os.path.join(out_dir, "last.ckpt")
    log_path = os.path.join(out_dir, "train_log.jsonl")

    best_ndcg10: Optional[float] = None
    if resume_from is not None:
        state, best_ndcg10 = _restore_state(resume_from, config)
        if e_text is not None and state.model.space.e_text is not None:
            if not np.array_equal(np.asarray(e_text, dtype=state.model.dtype), state.model.space.e_text):
                raise ConfigError("provided embedding table differs from the checkpoint's frozen table")
    else:
        model = build_model(config, dataset.n_items, e_text)
        state = TrainState(model=model, optimizer=_make_optimizer(model, config))

    if state.model.space.n_items != dataset.n_items:
        raise DataError(
            f"model catalog size {state.model.space.n_items} != dataset items {dataset.n_items}"
        )

    history: List[Dict] = []
    mode = "a" if resume_from is not None else "w"
    with open(log_path, mode, encoding="utf-8") as log_fh:
        for epoch in range(state.epoch, config.epochs):
            t0 = time.perf_counter()
            mean_loss = train_epoch(dataset, state, config)
            hr10 = ndcg10 = mrr_val = None
            if (epoch + 1) % config.eval_every == 0 or (epoch + 1) == config.epochs:
                report = evaluate_model(
                    state.model, dataset, hr_ks=(10,), ndcg_ks=(10,), filter_seen=False
                )
                hr10, ndcg10, mrr_val = report.hr[10], report.ndcg[10], report.mrr
                if best_ndcg10 is None or ndcg10 > best_ndcg10:
                    best_ndcg10 = ndcg10
                    try:
                        _save_state(best_path, state, config, best_ndcg10)
                    except CheckpointError as exc:
                        raise CheckpointError(f"epoch {epoch + 1}: {exc}") from exc
            entry = {
                "epoch": epoch + 1,
                "loss": mean_loss,
                "hr10": hr10,
                "ndcg10": ndcg10,
                "mrr": mrr_val,
                "wall_s": time.perf_counter() - t0,
            }
            log_fh.write(json.dumps(entry) + "\n")
            log_fh.flush()
            history.append(entry)
            try:
                _save_state(last_path, state, config, best_ndcg10)
            except CheckpointError as exc:
                raise CheckpointError(f"epoch {epoch + 1}: {exc}") from exc
    if not os.path.exists(best_path):
        _save_state(best_path, state, config, best_ndcg10)
    return FitResult(best_path=best_path, last_path=last_path, log_path=log_path, history=history)
