"""Command-line entry point: ``icd train``, ``icd eval`` and ``icd bench``.

All commands are deterministic given their inputs, flags and seed. Errors
are written to stderr with an ``error:`` prefix and a nonzero exit status.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from .bench import run_benchmark, rows_to_csv
from .core import SolverConfig
from .data import (
    FeatureMatrix,
    assemble_dataset,
    feature_matrix_for,
    read_features,
    read_interactions,
)
from .evaluation import SPLIT_METHODS, coview_scorer, evaluate, split_events
from .feature import fm_representation, mfsi_representation, train_feature_model
from .mf import train_mf
from .persist import load_model, save_model
from .tensor import train_tensor_model

MODELS = ("mf", "mfsi", "fm", "parafac", "tucker")


def _add_solver_flags(parser):
    parser.add_argument("--k", type=int, default=8, help="embedding dimension")
    parser.add_argument("--k1", type=int, help="Tucker mode-1 dimension")
    parser.add_argument("--k2", type=int, help="Tucker mode-2 dimension")
    parser.add_argument("--k3", type=int, help="Tucker item dimension")
    parser.add_argument("--alpha0", type=float, default=1.0,
                        help="confidence of unobserved cells")
    parser.add_argument("--eta", type=float, default=1.0,
                        help="Newton step size in (0, 1]")
    parser.add_argument("--lambda", dest="lam", type=float, default=0.0,
                        help="L2 regularization constant")
    parser.add_argument("--sigma", type=float, default=0.1,
                        help="initialization standard deviation")
    parser.add_argument("--tol", type=float, default=1e-9,
                        help="relative objective change for early stopping")
    parser.add_argument("--max-epochs", "--epochs", type=int, default=20)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--dense-context", action="store_true",
                        help="regularize over the full context grid "
                             "(tensor models)")
    parser.add_argument("--threads", type=int, default=0,
                        help="worker threads for compiled reductions; "
                             "values > 1 give up bit-reproducibility")
    parser.add_argument("--default-alpha", type=float, default=2.0,
                        help="confidence for interaction lines without one")


def _config_from(args):
    return SolverConfig(
        k=args.k, k1=args.k1, k2=args.k2, k3=args.k3, alpha0=args.alpha0,
        eta=args.eta, lam=args.lam, sigma=args.sigma, seed=args.seed,
        max_epochs=args.max_epochs, tol=args.tol,
        dense_context=args.dense_context,
    )


def _apply_threads(n):
    if n and n > 0:
        import numba

        numba.set_num_threads(max(1, min(n, numba.config.NUMBA_NUM_THREADS)))


def _load_feature_matrices(args, dataset):
    if not args.context_features or not args.item_features:
        raise ValueError(
            f"model {args.model!r} requires --context-features and "
            "--item-features"
        )
    feats_x, px = read_features(args.context_features)
    feats_z, pz = read_features(args.item_features)
    p = max(px, pz)
    x = feature_matrix_for(dataset.context_ids, feats_x, p)
    z = feature_matrix_for(dataset.item_ids, feats_z, p)
    return x, z


def train_cmd(args):
    _apply_threads(args.threads)
    raw = read_interactions(args.interactions)
    dataset = assemble_dataset(raw, alpha0=args.alpha0,
                               default_alpha=args.default_alpha)
    config = _config_from(args)
    if args.model in ("mfsi", "fm"):
        x, z = _load_feature_matrices(args, dataset)
        params, history = train_feature_model(args.model, dataset, x, z, config)
    elif args.model == "mf":
        params, history = train_mf(dataset, config)
    else:
        params, history = train_tensor_model(args.model, dataset, config)
    for rec in history:
        print(f"epoch={rec['epoch']} objective={rec['objective']:.10g} "
              f"seconds={rec['seconds']:.4f} skipped={rec['skipped']}")
    save_model(args.output, args.model, params,
               context_ids=dataset.context_ids, item_ids=dataset.item_ids)
    print(f"model written to {args.output}")
    return 0


def _mode_maps(context_keys):
    """Per-mode first-seen index maps, rebuilt from saved tuple keys."""
    maps = None
    for key in context_keys:
        parts = key.split(",")
        if maps is None:
            maps = [{} for _ in parts]
        for m, part in enumerate(parts):
            if part not in maps[m]:
                maps[m][part] = len(maps[m])
    return maps or []


def make_model_scorer(kind, params, ids, feats_x=None, feats_z=None):
    """Scorer(context_key, item_keys) for a loaded model.

    Unknown context keys (cold start for the id-based models) score zero
    everywhere; items unknown to the model score zero.
    """
    if ids is None:
        raise ValueError("model file has no .ids sidecar; cannot map raw keys")
    itm_pos = {key: r for r, key in enumerate(ids["item"])}
    cache = {}

    def item_matrix(item_keys, table):
        token = id(item_keys)
        if token not in cache:
            m = np.zeros((len(item_keys), table.shape[1]))
            for j, key in enumerate(item_keys):
                if key in itm_pos:
                    m[j] = table[itm_pos[key]]
            cache[token] = m
        return cache[token]

    if kind == "mf":
        ctx_pos = {key: r for r, key in enumerate(ids["context"])}

        def scorer(context_key, item_keys):
            m = item_matrix(item_keys, params.H)
            r = ctx_pos.get(context_key)
            if r is None:
                return np.zeros(len(item_keys))
            return m @ params.W[r]

        return scorer
    if kind in ("parafac", "tucker"):
        maps = _mode_maps(ids["context"])

        def scorer(context_key, item_keys):
            m = item_matrix(item_keys, params.W)
            parts = context_key.split(",")
            if len(parts) != len(maps) or any(
                    part not in maps[i] for i, part in enumerate(parts)):
                return np.zeros(len(item_keys))
            a = maps[0][parts[0]]
            b = maps[1][parts[1]]
            if kind == "parafac":
                phi = params.U[a] * params.V[b]
            else:
                phi = np.einsum("a,b,abf->f", params.U[a], params.V[b], params.B)
            return m @ phi

        return scorer
    if feats_x is None or feats_z is None:
        raise ValueError(f"scoring a {kind} model requires feature files")
    p = params.W.shape[0]
    represent = mfsi_representation if kind == "mfsi" else fm_representation
    z_cache = {}

    def scorer(context_key, item_keys):
        token = id(item_keys)
        if token not in z_cache:
            z_cache[token] = FeatureMatrix(
                len(item_keys), p, [feats_z.get(key, []) for key in item_keys])
        x = FeatureMatrix(1, p, [feats_x.get(context_key, [])])
        state = represent(params, x, z_cache[token])
        return state.psi @ state.phi[0]

    return scorer


def eval_cmd(args):
    kind, params, ids = load_model(args.model_file)
    events = read_interactions(args.interactions)
    train, test, info = split_events(events, args.split, args.fraction,
                                     args.seed)
    feats_x = feats_z = None
    if kind in ("mfsi", "fm"):
        if not args.context_features or not args.item_features:
            raise ValueError(
                f"evaluating a {kind} model requires --context-features and "
                "--item-features"
            )
        feats_x, _ = read_features(args.context_features)
        feats_z, _ = read_features(args.item_features)
    scorers = {
        kind: make_model_scorer(kind, params, ids, feats_x, feats_z),
        "coview": coview_scorer(train),
    }
    report = evaluate(train, test, scorers, ks=(args.k,))
    header = (f"split={info['method']} train_events={info['train_events']} "
              f"test_events={info['test_events']}\n")
    text = header + report.to_text()
    if args.report:
        with open(args.report, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    if args.csv:
        with open(args.csv, "w", encoding="utf-8") as fh:
            fh.write(report.to_csv())
    return 0


def bench_cmd(args):
    _apply_threads(args.threads)
    ns = [int(tok) for tok in args.sizes.split(",") if tok]
    if not ns:
        raise ValueError("--sizes must list at least one size")
    rows, notices = run_benchmark(ns, k=args.k, repeats=args.repeats,
                                  seed=args.seed)
    for note in notices:
        print(f"notice: {note}", file=sys.stderr)
    csv_text = rows_to_csv(rows)
    if args.output:
        with open(args.output, "w", encoding="utf-8") as fh:
            fh.write(csv_text)
        for n in ns:
            times = {r["arm"]: r["epoch_seconds"] for r in rows if r["n"] == n}
            if "naive_cd" in times:
                ratio = times["naive_cd"] / times["gram_cd"]
                print(f"n={n} gram_cd={times['gram_cd']:.4g}s "
                      f"naive_cd={times['naive_cd']:.4g}s ratio={ratio:.1f}x")
            else:
                print(f"n={n} gram_cd={times['gram_cd']:.4g}s naive_cd=skipped")
    else:
        sys.stdout.write(csv_text)
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="icd",
        description="Coordinate descent for implicit-feedback factorization "
                    "models, with ranking evaluation and a cost benchmark.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train a model and save it")
    p_train.add_argument("--model", choices=MODELS, required=True)
    p_train.add_argument("--interactions", required=True,
                         help="TSV: context<TAB>item<TAB>y[<TAB>alpha]")
    p_train.add_argument("--context-features")
    p_train.add_argument("--item-features")
    p_train.add_argument("--output", required=True, help="model file path")
    _add_solver_flags(p_train)
    p_train.set_defaults(func=train_cmd)

    p_eval = sub.add_parser("eval", help="split, rank and report metrics")
    p_eval.add_argument("--model-file", required=True)
    p_eval.add_argument("--interactions", required=True)
    p_eval.add_argument("--split", choices=SPLIT_METHODS,
                        default="leave_last_out")
    p_eval.add_argument("--fraction", type=float, default=0.2,
                        help="held-out fraction for cutoff/cold-start splits")
    p_eval.add_argument("--k", type=int, default=100,
                        help="ranking cutoff for recall@K and NDCG@K")
    p_eval.add_argument("--seed", type=int, default=0)
    p_eval.add_argument("--context-features")
    p_eval.add_argument("--item-features")
    p_eval.add_argument("--report", help="write the text report here")
    p_eval.add_argument("--csv", help="write metric,model,value,ratio CSV here")
    p_eval.set_defaults(func=eval_cmd)

    p_bench = sub.add_parser(
        "bench", help="time Gram-based vs cell-enumerating CD on MF")
    p_bench.add_argument("--sizes", default="250,500,1000",
                         help="comma-separated values of n (|C| = |I| = n)")
    p_bench.add_argument("--k", type=int, default=8)
    p_bench.add_argument("--repeats", type=int, default=3)
    p_bench.add_argument("--seed", type=int, default=0)
    p_bench.add_argument("--threads", type=int, default=0)
    p_bench.add_argument("--output", help="write the CSV here (else stdout)")
    p_bench.set_defaults(func=bench_cmd)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
