"""Leave-one-out ranking evaluation: full-catalog scoring, ranks, HR/NDCG/MRR.

Ranks are deterministic: score ties are broken by ascending item index.
Metrics are accumulated in float64 in ascending user order, and per-user
work is split into fixed-size chunks regardless of worker count, so the
report is bit-identical for any number of workers.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .config import TrainConfig
from .checkpoint import load_checkpoint
from .corpus import SplitDataset
from .errors import DataError
from .model import Model, model_from_tensors
from .ops import normalize_rows

_CHUNK = 256  # users per work unit; fixed so worker count cannot change batching


@dataclass
class EvalReport:
    n_users: int
    hr: Dict[int, float]
    ndcg: Dict[int, float]
    mrr: float
    filter_seen: bool
    checkpoint: str

    def to_json(self) -> str:
        obj = {
            "n_users": self.n_users,
            "hr": {str(k): self.hr[k] for k in sorted(self.hr)},
            "ndcg": {str(k): self.ndcg[k] for k in sorted(self.ndcg)},
            "mrr": self.mrr,
            "filter_seen": self.filter_seen,
            "checkpoint": self.checkpoint,
        }
        return json.dumps(obj)


def rank_of_target(scores: np.ndarray, target: int, exclude: Optional[Iterable[int]] = None) -> int:
    """1-based rank of `target` in `scores`, ties broken by ascending index."""
    scores = np.asarray(scores)
    n = scores.shape[0]
    if not 0 <= target < n:
        raise DataError(f"target index {target} out of range [0, {n})")
    include = np.ones(n, dtype=bool)
    if exclude is not None:
        excl = np.asarray(sorted(set(int(e) for e in exclude)), dtype=np.int64)
        if excl.size:
            if excl.min() < 0 or excl.max() >= n:
                raise DataError("exclude index out of range")
            if bool(np.isin(target, excl)):
                raise DataError(f"target {target} is in the exclude set")
            include[excl] = False
    include[target] = False
    s_t = scores[target]
    greater = int(np.count_nonzero(include & (scores > s_t)))
    ties_before = int(np.count_nonzero(include & (scores == s_t) & (np.arange(n) < target)))
    return 1 + greater + ties_before


def hr_at_k(rank: int, k: int) -> int:
    if rank < 1 or k < 1:
        raise DataError(f"rank and K must be >= 1, got rank={rank}, K={k}")
    return 1 if rank <= k else 0


def ndcg_at_k(rank: int, k: int) -> float:
    """Single-ground-truth NDCG: IDCG is 1, so 1/log2(rank+1) inside the top K."""
    if rank < 1 or k < 1:
        raise DataError(f"rank and K must be >= 1, got rank={rank}, K={k}")
    if rank > k:
        return 0.0
    return 1.0 / float(np.log2(rank + 1.0))


def mrr(ranks: Sequence[int]) -> float:
    """Mean reciprocal rank over the full catalog (no K truncation)."""
    ranks = np.asarray(ranks, dtype=np.float64)
    if ranks.size == 0:
        raise DataError("mrr over an empty rank list")
    if (ranks < 1).any():
        raise DataError("ranks must be >= 1")
    return float(np.mean(1.0 / ranks))


def _rank_chunk(
    model: Model,
    dataset: SplitDataset,
    users: np.ndarray,
    candidates: np.ndarray,
    filter_seen: bool,
) -> Tuple[np.ndarray, np.ndarray]:
    max_len = model.enc.cfg.max_len
    seqs = [dataset.train_sequences[u][-max_len:] for u in users]
    lens = np.asarray([len(s) for s in seqs], dtype=np.int64)
    T = int(lens.max())
    items = np.zeros((len(users), T), dtype=np.int64)
    for i, s in enumerate(seqs):
        items[i, : len(s)] = s
    H, _ = model.hidden_batch(items, lens, train=False)
    h_last = H[np.arange(len(users)), lens - 1]
    hn, _ = normalize_rows(h_last)
    scores = hn @ candidates.T / model.config.temperature
    ranks = np.empty(len(users), dtype=np.int64)
    for i, u in enumerate(users):
        target = int(dataset.test_items[u])
        exclude = None
        if filter_seen:
            exclude = set(int(x) for x in dataset.train_sequences[u]) - {target}
        ranks[i] = rank_of_target(scores[i], target, exclude)
    return users, ranks


def evaluate_model(
    model: Model,
    dataset: SplitDataset,
    hr_ks: Sequence[int] = (10, 50, 200),
    ndcg_ks: Sequence[int] = (10, 200),
    filter_seen: bool = False,
    workers: int = 1,
    checkpoint_label: str = "",
) -> EvalReport:
    if dataset.n_users == 0:
        raise DataError("empty dataset")
    if model.space.n_items != dataset.n_items:
        raise DataError(
            f"vocab size mismatch: model has {model.space.n_items} items, dataset has {dataset.n_items}"
        )
    candidates = model.candidate_matrix()
    user_chunks = [
        np.arange(start, min(start + _CHUNK, dataset.n_users), dtype=np.int64)
        for start in range(0, dataset.n_users, _CHUNK)
    ]
    all_ranks = np.empty(dataset.n_users, dtype=np.int64)
    if workers <= 1:
        results = (_rank_chunk(model, dataset, c, candidates, filter_seen) for c in user_chunks)
    else:
        pool = ThreadPoolExecutor(max_workers=workers)
        results = pool.map(
            lambda c: _rank_chunk(model, dataset, c, candidates, filter_seen), user_chunks
        )
    for users, ranks in results:
        all_ranks[users] = ranks
    if workers > 1:
        pool.shutdown()

    hr = {int(k): float(np.mean((all_ranks <= k).astype(np.float64))) for k in hr_ks}
    ndcg = {
        int(k): float(
            np.mean(np.where(all_ranks <= k, 1.0 / np.log2(all_ranks + 1.0), 0.0).astype(np.float64))
        )
        for k in ndcg_ks
    }
    return EvalReport(
        n_users=dataset.n_users,
        hr=hr,
        ndcg=ndcg,
        mrr=mrr(all_ranks),
        filter_seen=filter_seen,
        checkpoint=checkpoint_label,
    )


def evaluate(
    checkpoint_path: str,
    dataset: SplitDataset,
    hr_ks: Sequence[int] = (10, 50, 200),
    ndcg_ks: Sequence[int] = (10, 200),
    filter_seen: bool = False,
    workers: int = 1,
) -> EvalReport:
    config_dict, _meta, tensors = load_checkpoint(checkpoint_path)
    config = TrainConfig.from_dict(config_dict)
    model = model_from_tensors(config, tensors)
    return evaluate_model(
        model,
        dataset,
        hr_ks=hr_ks,
        ndcg_ks=ndcg_ks,
        filter_seen=filter_seen,
        workers=workers,
        checkpoint_label=checkpoint_path,
    )


def write_report(report: EvalReport, path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(report.to_json())
        fh.write("\n")
