"""Single executable for the full pipeline.

Subcommands: prepare, synth, table (random|validate), train, eval.
Exit codes: 0 success, 1 usage error, 2 runtime error. Progress and
summaries go to stderr; machine-readable artifacts go to files only.
"""

from __future__ import annotations

import argparse
import os
import sys
from typing import List, Optional

import numpy as np

from . import corpus, embedtable
from .config import TrainConfig, load_config_file
from .errors import ConfigError, DataError, EngineError
from .evaluate import evaluate, write_report
from .trainer import fit


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on usage errors; the CLI contract wants 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _log(msg: str) -> None:
    print(msg, file=sys.stderr)


def build_parser() -> _Parser:
    parser = _Parser(prog="seqfuse", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("prepare", help="ingest + k-core filter + vocab + leave-one-out split")
    p.add_argument("--interactions", required=True, help="user<TAB>item<TAB>timestamp file")
    p.add_argument("--k", type=int, default=5, help="k-core threshold (default 5)")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.set_defaults(func=_cmd_prepare)

    p = sub.add_parser("synth", help="generate a cluster-Markov synthetic dataset")
    p.add_argument("--users", type=int, required=True)
    p.add_argument("--items", type=int, required=True)
    p.add_argument("--clusters", type=int, required=True)
    p.add_argument("--seq-len", default="10:20", help="MIN:MAX sequence length")
    p.add_argument("--intra-p", type=float, default=0.8, help="probability of staying in-cluster")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument(
        "--emit-cluster-table",
        type=int,
        metavar="DIM",
        default=None,
        help="also write a cluster-one-hot-plus-noise embedding table of this dimension",
    )
    p.add_argument("--noise-sigma", type=float, default=0.1, help="noise level for the cluster table")
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("table", help="embedding-table utilities")
    tsub = p.add_subparsers(dest="table_command", required=True, parser_class=_Parser)
    tr = tsub.add_parser("random", help="write a random Gaussian table")
    tr.add_argument("--ids", required=True, help="file with one item id per line")
    tr.add_argument("--dim", type=int, required=True)
    tr.add_argument("--seed", type=int, default=0)
    tr.add_argument("--normalized", action="store_true", help="L2-normalize rows and set the flag")
    tr.add_argument("--out", required=True, help="output path prefix (.bin/.ids.tsv appended)")
    tr.set_defaults(func=_cmd_table_random)
    tv = tsub.add_parser("validate", help="check a table's structure and norms")
    tv.add_argument("path", help="table path prefix (without .bin)")
    tv.set_defaults(func=_cmd_table_validate)

    p = sub.add_parser("train", help="train a model on a prepared dataset")
    p.add_argument("--data", required=True, help="prepared dataset directory")
    p.add_argument("--embeddings", default=None, help="text embedding table path prefix")
    p.add_argument("--fusion", choices=["none", "add", "gate"], default=None)
    p.add_argument("--config", default=None, help="key = value config file")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--deterministic", action="store_true", help="64-bit bit-exact mode")
    p.add_argument("--resume", default=None, help="checkpoint to continue from")
    p.add_argument("--out", required=True, help="run directory for checkpoints and the log")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="rank the held-out item for every user")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--k", default="10,50,200", help="comma-separated HR cutoffs")
    p.add_argument("--ndcg-k", default="10,200", help="comma-separated NDCG cutoffs")
    p.add_argument("--filter-seen", action="store_true", help="exclude train-history items from candidates")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--report", required=True, help="output JSON report path")
    p.set_defaults(func=_cmd_eval)
    return parser


def _cmd_prepare(args) -> int:
    log = corpus.ingest_interactions(args.interactions)
    _log(f"read {len(log)} events from {args.interactions}")
    filtered = corpus.kcore_filter(log, args.k)
    _log(f"{args.k}-core kept {len(filtered)} events")
    vocab = corpus.build_vocab(filtered)
    split = corpus.chronological_split(filtered, vocab)
    corpus.write_dataset(args.out, vocab, split)
    _log(f"wrote {vocab.n_users} users, {vocab.n_items} items to {args.out}")
    return 0


def _parse_seq_len(text: str):
    try:
        lo, _, hi = text.partition(":")
        return int(lo), int(hi if hi else lo)
    except ValueError:
        raise ConfigError(f"--seq-len expects MIN:MAX, got {text!r}") from None


def _cmd_synth(args) -> int:
    cfg = corpus.SynthConfig(
        n_users=args.users,
        n_items=args.items,
        n_clusters=args.clusters,
        seq_len_range=_parse_seq_len(args.seq_len),
        intra_cluster_prob=args.intra_p,
        seed=args.seed,
    )
    log, clusters = corpus.synth_markov(cfg)
    vocab = corpus.build_vocab(log)
    split = corpus.chronological_split(log, vocab)
    corpus.write_dataset(args.out, vocab, split)
    all_ids = [corpus.item_id_for_synth(i, cfg.n_items) for i in range(cfg.n_items)]
    corpus.write_clusters(args.out, all_ids, clusters)
    _log(f"synthesized {len(log)} events, {vocab.n_users} users, {vocab.n_items} items -> {args.out}")
    if args.emit_cluster_table is not None:
        table = embedtable.cluster_onehot_table(
            all_ids, clusters, args.emit_cluster_table, args.noise_sigma, args.seed
        )
        prefix = os.path.join(args.out, "text_embeddings")
        embedtable.write_table(table, prefix)
        _log(f"wrote cluster embedding table to {prefix}.bin")
    return 0


def _cmd_table_random(args) -> int:
    with open(args.ids, "r", encoding="utf-8") as fh:
        ids = [line.rstrip("\n") for line in fh if line.rstrip("\n")]
    table = embedtable.random_table(ids, args.dim, args.seed, normalized=args.normalized)
    embedtable.write_table(table, args.out)
    _log(f"wrote {table.count} x {table.dim} table to {args.out}.bin")
    return 0


def _cmd_table_validate(args) -> int:
    table = embedtable.load_table(args.path)
    _log(
        f"{args.path}: OK (count={table.count}, dim={table.dim}, "
        f"normalized={'true' if table.normalized else 'false'})"
    )
    return 0


def _cmd_train(args) -> int:
    config = TrainConfig()
    if args.config:
        config = load_config_file(args.config, base=config)
    if args.fusion is not None:
        config.fusion_mode = args.fusion
    if args.seed is not None:
        config.seed = args.seed
    if args.epochs is not None:
        config.epochs = args.epochs
    if args.deterministic:
        config.deterministic = True
    config.validate()

    vocab, split = corpus.load_dataset(args.data)
    e_text = None
    if args.embeddings:
        table = embedtable.load_table(args.embeddings)
        e_text = embedtable.align(table, vocab)
    if config.fusion_mode != "none" and e_text is None:
        raise ConfigError(f"fusion mode {config.fusion_mode!r} requires --embeddings")

    result = fit(split, config, e_text=e_text, out_dir=args.out, resume_from=args.resume)
    if result.history:
        last = result.history[-1]
        _log(f"finished epoch {last['epoch']}: loss={last['loss']:.4f}")
    _log(f"checkpoints: {result.best_path} (best), {result.last_path} (last)")
    return 0


def _parse_ks(text: str) -> List[int]:
    try:
        ks = [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"bad K list {text!r}") from None
    if not ks or min(ks) < 1:
        raise ConfigError(f"bad K list {text!r}")
    return ks


def _cmd_eval(args) -> int:
    _vocab, split = corpus.load_dataset(args.data)
    report = evaluate(
        args.ckpt,
        split,
        hr_ks=_parse_ks(args.k),
        ndcg_ks=_parse_ks(args.ndcg_k),
        filter_seen=args.filter_seen,
        workers=args.workers,
    )
    write_report(report, args.report)
    _log(report.to_json())
    return 0


def run(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except EngineError as exc:
        print(f"seqfuse: error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"seqfuse: error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
