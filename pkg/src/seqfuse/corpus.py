"""Interaction-log ingestion, k-core filtering, vocabularies, splits, synthesis.

The pipeline here is pure and deterministic: the prepared dataset written to
disk is a function of the input file bytes (plus the seed, for synthetic
data). All randomness flows through an explicit numpy Generator.
"""

from __future__ import annotations

import os
from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, List, NamedTuple, Tuple

import numpy as np

from .errors import DataError, ParseError


class Interaction(NamedTuple):
    user: str
    item: str
    timestamp: int


@dataclass
class InteractionLog:
    """Ordered event list; input-file order is preserved end to end."""

    events: List[Interaction] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.events)

    def __iter__(self):
        return iter(self.events)


@dataclass
class Vocab:
    """Bijections between opaque string ids and dense indices.

    Indices are assigned by first appearance in the (filtered) log, so the
    mapping is deterministic given the event order.
    """

    item_to_index: Dict[str, int]
    user_to_index: Dict[str, int]
    items: List[str]
    users: List[str]

    @property
    def n_items(self) -> int:
        return len(self.items)

    @property
    def n_users(self) -> int:
        return len(self.users)


@dataclass
class SplitDataset:
    """Per-user chronological leave-one-out split over dense indices."""

    train_sequences: List[np.ndarray]  # user index -> int64 item indices, time-ascending
    test_items: np.ndarray  # user index -> held-out item index
    n_items: int

    @property
    def n_users(self) -> int:
        return len(self.train_sequences)


@dataclass
class SynthConfig:
    n_users: int
    n_items: int
    n_clusters: int
    seq_len_range: Tuple[int, int]
    intra_cluster_prob: float
    seed: int

    def validate(self) -> None:
        if self.n_users < 1 or self.n_items < 1 or self.n_clusters < 1:
            raise DataError("n_users, n_items, n_clusters must be positive")
        if self.n_items % self.n_clusters != 0:
            raise DataError(
                f"n_clusters ({self.n_clusters}) must divide n_items ({self.n_items}) evenly"
            )
        lo, hi = self.seq_len_range
        if not (1 <= lo <= hi):
            raise DataError(f"bad seq_len_range {self.seq_len_range}")
        if not (0.0 <= self.intra_cluster_prob <= 1.0):
            raise DataError(f"intra_cluster_prob must be in [0,1], got {self.intra_cluster_prob}")


def ingest_interactions(path: str) -> InteractionLog:
    """Read a `user<TAB>item<TAB>timestamp` file, preserving line order.

    An empty file yields an empty log; any malformed line raises ParseError
    naming the 1-based line number.
    """
    events: List[Interaction] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if line == "":
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ParseError(f"{path}: line {lineno}: expected 3 tab-separated fields, got {len(parts)}")
            user, item, ts_str = parts
            if not user or not item:
                raise ParseError(f"{path}: line {lineno}: empty user or item id")
            try:
                ts = int(ts_str)
            except ValueError:
                raise ParseError(f"{path}: line {lineno}: non-integer timestamp {ts_str!r}") from None
            if ts < 0:
                raise ParseError(f"{path}: line {lineno}: negative timestamp {ts}")
            events.append(Interaction(user, item, ts))
    return InteractionLog(events)


def write_interactions(log: InteractionLog, path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for ev in log.events:
            fh.write(f"{ev.user}\t{ev.item}\t{ev.timestamp}\n")


def kcore_filter(log: InteractionLog, k: int) -> InteractionLog:
    """Iterate user/item removal to fixpoint: the unique maximal k-core.

    Counts are per interaction (multigraph degrees), so repeat purchases
    count toward the threshold. Event order is preserved.
    """
    if k < 1:
        raise DataError(f"k must be >= 1, got {k}")
    events = log.events
    while True:
        user_counts = Counter(ev.user for ev in events)
        item_counts = Counter(ev.item for ev in events)
        kept = [ev for ev in events if user_counts[ev.user] >= k and item_counts[ev.item] >= k]
        if len(kept) == len(events):
            return InteractionLog(kept)
        events = kept


def build_vocab(log: InteractionLog) -> Vocab:
    """Assign dense indices by first appearance in the log."""
    if len(log) == 0:
        raise DataError("empty corpus")
    item_to_index: Dict[str, int] = {}
    user_to_index: Dict[str, int] = {}
    items: List[str] = []
    users: List[str] = []
    for ev in log.events:
        if ev.user not in user_to_index:
            user_to_index[ev.user] = len(users)
            users.append(ev.user)
        if ev.item not in item_to_index:
            item_to_index[ev.item] = len(items)
            items.append(ev.item)
    return Vocab(item_to_index, user_to_index, items, users)


def chronological_split(log: InteractionLog, vocab: Vocab) -> SplitDataset:
    """Stable-sort each user's events by timestamp; hold the last one out.

    Ties keep input-file order (stable sort), so the split is reproducible.
    """
    per_user_items: List[List[int]] = [[] for _ in range(vocab.n_users)]
    per_user_ts: List[List[int]] = [[] for _ in range(vocab.n_users)]
    for ev in log.events:
        u = vocab.user_to_index[ev.user]
        per_user_items[u].append(vocab.item_to_index[ev.item])
        per_user_ts[u].append(ev.timestamp)

    train_sequences: List[np.ndarray] = []
    test_items = np.empty(vocab.n_users, dtype=np.int64)
    for u in range(vocab.n_users):
        items = per_user_items[u]
        if len(items) < 2:
            raise DataError(f"user {vocab.users[u]!r} has {len(items)} interaction(s); need >= 2 to split")
        order = np.argsort(np.asarray(per_user_ts[u]), kind="stable")
        ordered = np.asarray(items, dtype=np.int64)[order]
        train_sequences.append(ordered[:-1])
        test_items[u] = ordered[-1]
    return SplitDataset(train_sequences, test_items, n_items=vocab.n_items)


def synth_markov(cfg: SynthConfig) -> Tuple[InteractionLog, np.ndarray]:
    """Generate a cluster-Markov interaction log.

    Items are partitioned into equal contiguous clusters. Each user draws a
    sequence length uniformly from seq_len_range; the first item is uniform
    over the catalog, and each following item stays inside the current
    item's cluster with probability intra_cluster_prob, otherwise it is
    uniform over all items. Timestamps count 0,1,2,... per user. The draw
    sequence is fixed, so output is fully determined by cfg.seed.

    Returns the log and the item-index -> cluster-index assignment.
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    cluster_size = cfg.n_items // cfg.n_clusters
    clusters = np.arange(cfg.n_items, dtype=np.int64) // cluster_size

    id_width = max(4, len(str(cfg.n_items - 1)))
    user_width = max(4, len(str(cfg.n_users - 1)))
    events: List[Interaction] = []
    lo, hi = cfg.seq_len_range
    for u in range(cfg.n_users):
        user_id = f"u{u:0{user_width}d}"
        length = int(rng.integers(lo, hi + 1))
        current = int(rng.integers(0, cfg.n_items))
        events.append(Interaction(user_id, f"i{current:0{id_width}d}", 0))
        for t in range(1, length):
            if rng.random() < cfg.intra_cluster_prob:
                base = int(clusters[current]) * cluster_size
                current = base + int(rng.integers(0, cluster_size))
            else:
                current = int(rng.integers(0, cfg.n_items))
            events.append(Interaction(user_id, f"i{current:0{id_width}d}", t))
    return InteractionLog(events), clusters


def item_id_for_synth(index: int, n_items: int) -> str:
    """Opaque id used by synth_markov for generator-space item `index`."""
    width = max(4, len(str(n_items - 1)))
    return f"i{index:0{width}d}"


# --- prepared-dataset directory layout -------------------------------------

VOCAB_ITEMS_FILE = "vocab_items.tsv"
VOCAB_USERS_FILE = "vocab_users.tsv"
TRAIN_FILE = "train.tsv"
TEST_FILE = "test.tsv"
CLUSTERS_FILE = "clusters.tsv"


def write_dataset(out_dir: str, vocab: Vocab, split: SplitDataset) -> None:
    os.makedirs(out_dir, exist_ok=True)
    _write_vocab(os.path.join(out_dir, VOCAB_ITEMS_FILE), vocab.items)
    _write_vocab(os.path.join(out_dir, VOCAB_USERS_FILE), vocab.users)
    with open(os.path.join(out_dir, TRAIN_FILE), "w", encoding="utf-8", newline="\n") as fh:
        for u, seq in enumerate(split.train_sequences):
            fh.write(f"{u}\t{' '.join(str(int(i)) for i in seq)}\n")
    with open(os.path.join(out_dir, TEST_FILE), "w", encoding="utf-8", newline="\n") as fh:
        for u in range(split.n_users):
            fh.write(f"{u}\t{int(split.test_items[u])}\n")


def _write_vocab(path: str, ids: List[str]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for index, opaque in enumerate(ids):
            fh.write(f"{opaque}\t{index}\n")


def write_clusters(out_dir: str, vocab_like_ids: List[str], clusters: np.ndarray) -> None:
    """clusters.tsv rows are `opaque_item_id<TAB>cluster_index`."""
    with open(os.path.join(out_dir, CLUSTERS_FILE), "w", encoding="utf-8", newline="\n") as fh:
        for opaque, c in zip(vocab_like_ids, clusters):
            fh.write(f"{opaque}\t{int(c)}\n")


def load_dataset(data_dir: str) -> Tuple[Vocab, SplitDataset]:
    vocab = Vocab(
        item_to_index={}, user_to_index={}, items=[], users=[]
    )
    vocab.items = _read_vocab(os.path.join(data_dir, VOCAB_ITEMS_FILE))
    vocab.users = _read_vocab(os.path.join(data_dir, VOCAB_USERS_FILE))
    vocab.item_to_index = {s: i for i, s in enumerate(vocab.items)}
    vocab.user_to_index = {s: i for i, s in enumerate(vocab.users)}
    if len(vocab.item_to_index) != len(vocab.items):
        raise DataError(f"{data_dir}: duplicate item id in {VOCAB_ITEMS_FILE}")
    if len(vocab.user_to_index) != len(vocab.users):
        raise DataError(f"{data_dir}: duplicate user id in {VOCAB_USERS_FILE}")

    train_path = os.path.join(data_dir, TRAIN_FILE)
    sequences: List[np.ndarray] = [np.empty(0, dtype=np.int64)] * len(vocab.users)
    seen = np.zeros(len(vocab.users), dtype=bool)
    with open(train_path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            try:
                user_str, items_str = line.split("\t")
                u = int(user_str)
                seq = np.asarray([int(x) for x in items_str.split()], dtype=np.int64)
            except ValueError:
                raise ParseError(f"{train_path}: line {lineno}: malformed row") from None
            if not 0 <= u < len(vocab.users):
                raise DataError(f"{train_path}: line {lineno}: user index {u} out of range")
            sequences[u] = seq
            seen[u] = True
    if not seen.all():
        raise DataError(f"{train_path}: missing train row for user index {int(np.flatnonzero(~seen)[0])}")

    test_path = os.path.join(data_dir, TEST_FILE)
    test_items = np.full(len(vocab.users), -1, dtype=np.int64)
    with open(test_path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            try:
                user_str, item_str = line.split("\t")
                test_items[int(user_str)] = int(item_str)
            except (ValueError, IndexError):
                raise ParseError(f"{test_path}: line {lineno}: malformed row") from None
    if (test_items < 0).any():
        raise DataError(f"{test_path}: missing test row for user index {int(np.flatnonzero(test_items < 0)[0])}")

    n_items = len(vocab.items)
    for u, seq in enumerate(sequences):
        if seq.size and (seq.min() < 0 or seq.max() >= n_items):
            raise DataError(f"{train_path}: user {u} references item index outside [0, {n_items})")
    if test_items.max(initial=-1) >= n_items:
        raise DataError(f"{test_path}: item index outside [0, {n_items})")
    return vocab, SplitDataset(sequences, test_items, n_items=n_items)


def _read_vocab(path: str) -> List[str]:
    ids: List[str] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2 or int(parts[1]) != len(ids):
                raise ParseError(f"{path}: line {lineno}: expected `id<TAB>{len(ids)}`")
            ids.append(parts[0])
    return ids
