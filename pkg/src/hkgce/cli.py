"""Command-line entry point: ``hkgce <subcommand> ...``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from typing import Optional, Sequence

import numpy as np

from .cvae import Cvae, CvaeConfig, build_training_pairs, train_cvae
from .embeddings import EmbeddingTable
from .evaluate import (GROUP_CRITERIA, constant_estimator, evaluate, geometric_mean_card,
                       hrqe_estimator, sampling_estimator)
from .exact import brute_force_cardinality, exact_cardinality
from .hrqe import Hrqe, ModelConfig
from .query import read_queryset, serialize, write_queryset
from .sampling import estimate_sampling
from .store import load_hkg, save_snapshot, stats, write_fact_lines
from .synthetic import community_hkg
from .training import TrainConfig, train
from .workload import WorkloadSpec, generate_queryset

log = logging.getLogger("hkgce")


def _store(path):
    return load_hkg(path, format="auto")


def _table(args, dim: int) -> EmbeddingTable:
    if getattr(args, "embeddings", None):
        table = EmbeddingTable.from_word2vec(args.embeddings, seed=args.embedding_seed, fallback=True)
        if table.dim != dim:
            raise SystemExit(f"embedding file has dim {table.dim}, --dim is {dim}")
        return table
    return EmbeddingTable(dim, seed=args.embedding_seed)


def cmd_ingest(args) -> int:
    hkg = load_hkg(args.facts)
    save_snapshot(hkg, args.out)
    st = stats(hkg)
    print(json.dumps(st.__dict__))
    return 0


def cmd_synth(args) -> int:
    hkg = community_hkg(seed=args.seed, n_facts=args.facts)
    write_fact_lines(hkg, args.out)
    print(json.dumps(stats(hkg).__dict__))
    return 0


def cmd_gen(args) -> int:
    hkg = _store(args.store)
    spec = WorkloadSpec.from_json(args.spec)
    seed = spec.seed if args.seed is None else args.seed
    queries, report = generate_queryset(hkg, spec, np.random.default_rng(seed))
    write_queryset(args.out, queries)
    if args.report:
        report.to_csv(args.report)
    if report.exhausted:
        log.warning("strata not filled: %s", ", ".join(report.exhausted))
    print(f"{len(queries)} queries written to {args.out}")
    return 0


def cmd_card(args) -> int:
    hkg = _store(args.store)
    count = exact_cardinality if args.mode == "exact" else brute_force_cardinality
    lines = [serialize(q.with_card(count(hkg, q))) for q in read_queryset(args.queries)]
    out = open(args.out, "w", encoding="utf-8") if args.out else sys.stdout
    try:
        for line in lines:
            out.write(line + "\n")
    finally:
        if args.out:
            out.close()
    return 0


def cmd_train_cvae(args) -> int:
    hkg = _store(args.store)
    table = _table(args, args.dim)
    rng = np.random.default_rng(args.seed)
    pairs = build_training_pairs(hkg, table, rng, args.scheme, args.layer_feature)
    model = Cvae.init(CvaeConfig(args.dim, args.latent, args.hidden, args.layer_feature), rng)
    hist = train_cvae(model, pairs, args.epochs, rng, lr=args.lr, batch_size=args.batch)
    model.save(args.out)
    print(json.dumps({"pairs": len(pairs), "initial_loss": hist.initial, "final_loss": hist.final}))
    return 0


def cmd_train(args) -> int:
    hkg = _store(args.store)
    queries = read_queryset(args.queries)
    config = ModelConfig(dim=args.dim, layers=args.layers, lam=args.lam, mlp_hidden=args.hidden,
                         decoder_hidden=args.hidden, gate=args.gate,
                         embedding_seed=args.embedding_seed)
    cvae = Cvae.load(args.cvae) if args.cvae else None
    if config.lam > 0 and cvae is None:
        raise SystemExit("--lambda > 0 needs --cvae (train one with train-cvae)")
    rng = np.random.default_rng(args.seed)
    model = Hrqe.init(config, rng, _table(args, args.dim), cvae)
    tconf = TrainConfig(epochs=args.epochs, batch_size=args.batch, lr=args.lr,
                        n_add=args.n_add, n_remove=args.n_remove)
    result = train(model, queries, hkg, tconf, rng)
    model.save(args.out, embeddings_path=args.embeddings)
    if args.history:
        with open(args.history, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "train_loss", "test_mean_q_error"])
            for i, (a, b) in enumerate(zip(result.history.train_loss, result.history.test_q_error), 1):
                w.writerow([i, f"{a:.6g}", f"{b:.6g}"])
    if args.split_out:
        write_queryset(args.split_out + ".train.jsonl", result.train)
        write_queryset(args.split_out + ".test.jsonl", result.test)
    last = result.history.test_q_error[-1] if result.history.test_q_error else float("nan")
    print(json.dumps({"train": len(result.train), "test": len(result.test),
                      "steps": result.history.steps, "test_mean_q_error": last}))
    return 0


def _estimator(args, hkg, queries):
    if args.method == "sampling":
        return sampling_estimator(hkg, args.samples, args.seed)
    if args.method == "hrqe":
        if not args.model:
            raise SystemExit("--method hrqe needs --model")
        return hrqe_estimator(Hrqe.load(args.model), queries)
    if args.method == "constant":
        if not args.train_queries:
            raise SystemExit("--method constant needs --train-queries")
        return constant_estimator(geometric_mean_card(read_queryset(args.train_queries)))
    raise SystemExit(f"unknown method {args.method}")


def cmd_estimate(args) -> int:
    hkg = _store(args.store)
    queries = read_queryset(args.queries)
    if args.method == "sampling":
        rng = np.random.default_rng(args.seed)
        values = [estimate_sampling(hkg, q, args.samples, rng) for q in queries]
    else:
        est = _estimator(args, hkg, queries)
        values = [float(est(q)) for q in queries]
    out = open(args.out, "w", encoding="utf-8") if args.out else sys.stdout
    try:
        for q, v in zip(queries, values):
            out.write(json.dumps({"id": q.id, "estimate": v, "card": q.card}) + "\n")
    finally:
        if args.out:
            out.close()
    return 0


def cmd_eval(args) -> int:
    hkg = _store(args.store)
    queries = read_queryset(args.queries)
    groups = [g for g in args.group_by.split(",") if g] if args.group_by else []
    bad = set(groups) - set(GROUP_CRITERIA)
    if bad:
        raise SystemExit(f"unknown group criteria {sorted(bad)}; choose from {GROUP_CRITERIA}")
    report = evaluate(queries, _estimator(args, hkg, queries), groups, hkg)
    if args.out:
        report.to_csv(args.out)
    print(json.dumps({"n": len(queries), "mean_q_error": report.mean_q_error}))
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    model = Hrqe.load(args.model) if args.model else None
    uvicorn.run(create_app(_store(args.store), model), host=args.host, port=args.port)
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hkgce", description="Cardinality estimation over hyper-relational KGs.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="parse a fact file and write a JSON snapshot")
    p.add_argument("--facts", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("synth", help="write a seeded synthetic fact file")
    p.add_argument("--facts", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("gen", help="generate a labeled queryset")
    p.add_argument("--store", required=True)
    p.add_argument("--spec", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--report", help="stratification CSV")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("card", help="fill in cardinalities")
    p.add_argument("--store", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--mode", choices=("exact", "brute"), default="exact")
    p.add_argument("--out")
    p.set_defaults(func=cmd_card)

    def embedding_flags(p):
        p.add_argument("--embeddings", help="word2vec-style text file")
        p.add_argument("--embedding-seed", type=int, default=0)

    p = sub.add_parser("train-cvae", help="pretrain the qualifier completer")
    p.add_argument("--store", required=True)
    p.add_argument("--scheme", choices=("split", "mask", "both"), default="both")
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--dim", type=int, default=32)
    p.add_argument("--latent", type=int, default=8)
    p.add_argument("--hidden", type=int, default=64)
    p.add_argument("--layer-feature", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    embedding_flags(p)
    p.set_defaults(func=cmd_train_cvae)

    p = sub.add_parser("train", help="train the HRQE estimator")
    p.add_argument("--store", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--layers", type=int, default=2)
    p.add_argument("--lambda", dest="lam", type=float, default=0.5)
    p.add_argument("--dim", type=int, default=32)
    p.add_argument("--hidden", type=int, default=32)
    p.add_argument("--gate", choices=("sigmoid", "relu"), default="sigmoid")
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--n-add", type=int, default=2)
    p.add_argument("--n-remove", type=int, default=2)
    p.add_argument("--cvae")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--history", help="per-epoch CSV")
    p.add_argument("--split-out", help="prefix for the train/test query files")
    embedding_flags(p)
    p.set_defaults(func=cmd_train)

    def estimator_flags(p):
        p.add_argument("--store", required=True)
        p.add_argument("--queries", required=True)
        p.add_argument("--method", choices=("sampling", "hrqe", "constant"), default="sampling")
        p.add_argument("--samples", type=int, default=100)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--model")
        p.add_argument("--train-queries", help="for --method constant")
        p.add_argument("--out")

    p = sub.add_parser("estimate", help="estimate cardinalities")
    estimator_flags(p)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("eval", help="q-error report")
    estimator_flags(p)
    p.add_argument("--group-by", default="pattern,size,range,bounded,incomplete")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--store", required=True)
    p.add_argument("--model")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.set_defaults(func=cmd_serve)
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
