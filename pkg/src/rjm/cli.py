"""Command-line interface: fit, predict, simulate, experiment, select-k.

Exit codes: 0 success, 2 usage/data error, 3 numerical failure (all EM starts
discarded). Every command is deterministic given its flags (including --seed)
and writes a run manifest next to its outputs; RJM_THREADS caps experiment
parallelism.
"""

from __future__ import annotations

import argparse
import itertools
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict

import numpy as np

from . import __version__, baselines, io, metrics, simulate
from .em import AllRunsCollapsedError, fit
from .predict import predict_batch, select_k, split_dataset
from .types import FitConfig


def _config_from_args(args, k=None):
    psi = args.psi
    if psi != "universal":
        psi = float(psi)
    return FitConfig(k=int(k if k is not None else args.k), scheme=args.scheme,
                     c=args.c, psi=psi, n_starts=args.starts,
                     max_iter=args.max_iter, tol=args.tol, seed=args.seed,
                     cv_folds=args.cv_folds)


def _out_sibling(out, suffix):
    stem, _ = os.path.splitext(out)
    return stem + suffix


# ---------------------------------------------------------------------------
# fit
# ---------------------------------------------------------------------------

def cmd_fit(args):
    t0 = time.time()
    data = io.read_dataset_csv(args.data)
    config = _config_from_args(args)
    try:
        result = fit(data, config)
    except AllRunsCollapsedError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    labels_path = _out_sibling(args.out, "_labels.csv")
    trace_path = _out_sibling(args.out, "_trace.csv")
    io.write_model_json(args.out, result, scheme=config.scheme)
    io.write_labels_csv(labels_path, result.labels)
    io.write_trace_csv(trace_path, result.objective_trace)
    io.write_manifest(_out_sibling(args.out, "_manifest.json"), "fit",
                      asdict(config), [args.data],
                      [args.out, labels_path, trace_path],
                      args.seed, time.time() - t0)
    print(f"fit: k={config.k} scheme={config.scheme} converged={result.converged} "
          f"objective={result.objective:.6g} start={result.start_index}")
    return 0


# ---------------------------------------------------------------------------
# predict
# ---------------------------------------------------------------------------

def cmd_predict(args):
    t0 = time.time()
    params, model_meta = io.read_model_json(args.model)
    x, _ = io.read_features_csv(args.data)
    if x.shape[1] != params[0].p:
        raise io.DataFormatError(
            f"model expects p={params[0].p} features but {args.data} has {x.shape[1]}")
    y_hat, probs, hard = predict_batch(x, params)
    io.write_predictions_csv(args.out, y_hat, probs, hard)
    io.write_manifest(_out_sibling(args.out, "_manifest.json"), "predict",
                      {"model": args.model, "k": len(params)},
                      [args.model, args.data], [args.out], model_meta.get("seed", 0),
                      time.time() - t0)
    print(f"predict: {len(y_hat)} rows -> {args.out}")
    return 0


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------

SCENARIO_DEFAULTS = {  # canonical sizes per generator
    "toy51": {"n_per_group": "50,50", "p": 10},
    "appendixA": {"n_per_group": "100,100", "p": 10},
    "semisynth": {"n_per_group": "125,125", "p": 100},
}


def _sim_sizes(args):
    defaults = SCENARIO_DEFAULTS[args.scenario]
    n_text = args.n_per_group or defaults["n_per_group"]
    p = args.p if args.p is not None else defaults["p"]
    return tuple(int(v) for v in n_text.split(",")), p


def _spec_from_args(args):
    n_per_group, p = _sim_sizes(args)
    base_covs = None
    if args.cov_dir:
        base_covs = []
        for k in range(len(n_per_group)):
            path = os.path.join(args.cov_dir, f"cov{k + 1}.csv")
            base_covs.append(io.read_covariance_csv(path, p))
    return simulate.SimSpec(scenario=args.scenario, case=args.case,
                            correlated=args.correlated,
                            n_per_group=n_per_group, p=p, d=args.d,
                            snr_target=args.snr, sparsity=args.sparsity,
                            seed=args.seed, base_covariances=base_covs)


def cmd_simulate(args):
    t0 = time.time()
    spec = _spec_from_args(args)
    data, labels, truth = simulate.generate(spec)
    os.makedirs(args.out_dir, exist_ok=True)
    data_path = os.path.join(args.out_dir, "dataset.csv")
    labels_path = os.path.join(args.out_dir, "labels.csv")
    truth_path = os.path.join(args.out_dir, "truth.json")
    io.write_dataset_csv(data_path, data)
    io.write_labels_csv(labels_path, labels)
    io.atomic_write_text(truth_path, io.dumps_json(truth) + "\n")
    snapshot = {k: v for k, v in asdict(spec).items() if k != "base_covariances"}
    snapshot["covariances"] = "imported" if spec.base_covariances is not None \
        else "synthetic-fallback"
    io.write_manifest(os.path.join(args.out_dir, "manifest.json"), "simulate",
                      snapshot, [args.cov_dir] if args.cov_dir else [],
                      [data_path, labels_path, truth_path], args.seed,
                      time.time() - t0)
    print(f"simulate: {spec.scenario}/{spec.case} n={data.n} p={data.p} -> {args.out_dir}")
    return 0


# ---------------------------------------------------------------------------
# experiment
# ---------------------------------------------------------------------------

def _parse_grid(text):
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise ValueError(f"grid must be start:stop:step, got {text!r}")
        start, stop, step = (float(v) for v in parts)
        count = int(np.floor((stop - start) / step + 1e-9)) + 1
        return [round(start + i * step, 10) for i in range(count)]
    return [float(text)]


def _match_groups(true_labels, fitted_labels, k):
    """Permutation of fitted group ids 1..k maximizing label agreement."""
    best, best_perm = -1, None
    for perm in itertools.permutations(range(1, k + 1)):
        mapped = np.asarray([perm[int(l) - 1] for l in fitted_labels])
        agree = int(np.sum(mapped == np.asarray(true_labels)))
        if agree > best:
            best, best_perm = agree, perm
    return best_perm


def _experiment_cell(payload):
    (scenario, case, correlated, p, n_per_group, sparsity, snr,
     d, d_idx, rep, method, seed, starts, max_iter) = payload
    base = {"scenario": scenario, "case": case, "d": d, "rep": rep, "method": method}
    try:
        spec = simulate.SimSpec(scenario=scenario, case=case, correlated=correlated,
                                n_per_group=n_per_group, p=p, d=d, snr_target=snr,
                                sparsity=sparsity, seed=int(seed + 7919 * d_idx + 104729 * rep))
        data, true_labels, truth = simulate.generate(spec)
        k = len(spec.n_per_group)
        cell_seed = int(seed + 7919 * d_idx + 104729 * rep)
        rows = []
        if method in ("nj", "flasso", "rlasso"):
            cfg = FitConfig(k=k, scheme=method, seed=cell_seed,
                            n_starts=starts, max_iter=max_iter)
            res = fit(data, cfg)
            fitted = res.labels
            rows.append(dict(base, metric="ari",
                             value=metrics.adjusted_rand(true_labels, fitted),
                             status="ok"))
            perm = _match_groups(true_labels, fitted, k)
            true_betas = [np.asarray(b) for b in truth["beta"]]
            aucs, rmses = [], []
            for kk in range(k):
                fitted_id = [i for i in range(k) if perm[i] == kk + 1][0]
                bt = true_betas[kk]
                bh = res.params[fitted_id].beta
                sel = np.asarray(true_labels) == kk + 1
                sd = data.X[sel].std(axis=0)
                support = np.abs(bt) > 0
                if support.any() and not support.all():
                    aucs.append(metrics.selection_auc(support, bh))
                rmses.append(metrics.coef_rmse_standardized(bh, bt, np.maximum(sd, 1e-12)))
                for j in range(data.p):
                    rows.append(dict(base, metric=f"inclusion_g{kk + 1}_x{j + 1}",
                                     value=float(abs(bh[j]) > 1e-8), status="ok"))
            if aucs:
                rows.append(dict(base, metric="auc", value=float(np.mean(aucs)), status="ok"))
            rows.append(dict(base, metric="rmse", value=float(np.mean(rmses)), status="ok"))
            return rows
        rng = np.random.default_rng([cell_seed, 31337])
        if method == "kmeans":
            xs = (data.X - data.X.mean(axis=0)) / np.maximum(data.X.std(axis=0), 1e-12)
            fitted, _ = baselines.kmeans(xs, k, rng)
        elif method == "gmm":
            fitted = baselines.gmm(data.X, k, rng)
        elif method == "gmm_xy":
            fitted = baselines.gmm_xy(data.X, data.y, k, rng)
        else:
            raise ValueError(f"unknown method {method!r}")
        rows.append(dict(base, metric="ari",
                         value=metrics.adjusted_rand(true_labels, fitted + 1),
                         status="ok"))
        return rows
    except Exception as exc:  # record the failing cell, keep the sweep alive
        return [dict(base, metric="ari", value=None, status=f"error:{type(exc).__name__}")]


def cmd_experiment(args):
    t0 = time.time()
    d_grid = _parse_grid(args.d_grid)
    methods = [m for m in args.schemes.split(",") if m]
    methods += [m for m in args.baselines.split(",") if m]
    n_per_group, p = _sim_sizes(args)
    cells = [(args.scenario, args.case, args.correlated, p, n_per_group,
              args.sparsity, args.snr, d, d_idx, rep, method, args.seed,
              args.starts, args.max_iter)
             for d_idx, d in enumerate(d_grid)
             for rep in range(args.reps)
             for method in methods]
    threads = int(os.environ.get("RJM_THREADS", "1"))
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_experiment_cell, cells))
    else:
        results = [_experiment_cell(c) for c in cells]
    rows = [row for cell_rows in results for row in cell_rows]
    columns = ["metric", "scenario", "case", "d", "rep", "method", "value", "status"]
    io.write_table_csv(args.out, rows, columns)
    io.write_manifest(_out_sibling(args.out, "_manifest.json"), "experiment",
                      {"scenario": args.scenario, "case": args.case,
                       "d_grid": args.d_grid, "reps": args.reps,
                       "methods": methods, "p": p,
                       "n_per_group": list(n_per_group)},
                      [], [args.out], args.seed, time.time() - t0)
    n_err = sum(1 for r in rows if r["status"] != "ok")
    print(f"experiment: {len(cells)} cells, {len(rows)} metric rows, {n_err} failures -> {args.out}")
    return 0 if n_err < len(cells) else 2


# ---------------------------------------------------------------------------
# select-k
# ---------------------------------------------------------------------------

def cmd_select_k(args):
    t0 = time.time()
    data = io.read_dataset_csv(args.data)
    candidates = [int(v) for v in args.k_candidates.split(",") if v]
    if not candidates or any(k < 1 for k in candidates):
        raise io.DataFormatError(f"invalid candidate list {args.k_candidates!r}")
    config = _config_from_args(args, k=candidates[0])
    train, test = split_dataset(data, train_frac=args.split, seed=args.seed)
    try:
        best_k, table = select_k(train, test, candidates, config)
    except AllRunsCollapsedError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    io.write_table_csv(args.out, table, ["k", "group", "n_test", "mse", "mean_mse"])
    io.write_manifest(_out_sibling(args.out, "_manifest.json"), "select-k",
                      dict(asdict(config), k_candidates=candidates,
                           best_k=best_k, n_train=train.n, n_test=test.n),
                      [args.data], [args.out], args.seed, time.time() - t0)
    print(f"select-k: best k = {best_k} (train {train.n} / test {test.n}) -> {args.out}")
    return 0


# ---------------------------------------------------------------------------
# parser / entry point
# ---------------------------------------------------------------------------

def _add_fit_flags(sp):
    sp.add_argument("--scheme", default="nj", choices=["nj", "flasso", "rlasso"])
    sp.add_argument("--c", type=float, default=0.25)
    sp.add_argument("--psi", default="universal")
    sp.add_argument("--starts", type=int, default=10)
    sp.add_argument("--max-iter", type=int, default=20)
    sp.add_argument("--tol", type=float, default=1e-6)
    sp.add_argument("--cv-folds", type=int, default=5)
    sp.add_argument("--seed", type=int, default=0)


def _add_sim_flags(sp):
    sp.add_argument("--scenario", required=True,
                    choices=["appendixA", "toy51", "semisynth"])
    sp.add_argument("--case", default="A", choices=["A", "B", "C"])
    sp.add_argument("--correlated", action="store_true")
    sp.add_argument("--d", type=float, default=0.5)
    sp.add_argument("--p", type=int, default=None)
    sp.add_argument("--snr", type=float, default=3.0)
    sp.add_argument("--sparsity", type=float, default=0.04)
    sp.add_argument("--n-per-group", default=None)
    sp.add_argument("--cov-dir", default=None)
    sp.add_argument("--seed", type=int, default=0)


def build_parser():
    parser = argparse.ArgumentParser(prog="rjm", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("fit", help="fit a regularized joint mixture")
    sp.add_argument("--data", required=True)
    sp.add_argument("--k", type=int, required=True)
    _add_fit_flags(sp)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_fit)

    sp = sub.add_parser("predict", help="allocate new rows and predict y")
    sp.add_argument("--model", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_predict)

    sp = sub.add_parser("simulate", help="generate a synthetic dataset")
    _add_sim_flags(sp)
    sp.add_argument("--out-dir", required=True)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("experiment", help="sweep (d, rep, method) and emit metrics")
    _add_sim_flags(sp)
    sp.add_argument("--d-grid", default="0.5")
    sp.add_argument("--reps", type=int, default=1)
    sp.add_argument("--schemes", default="nj")
    sp.add_argument("--baselines", default="")
    sp.add_argument("--starts", type=int, default=10)
    sp.add_argument("--max-iter", type=int, default=20)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_experiment)

    sp = sub.add_parser("select-k", help="predictive-loss cluster-count selection")
    sp.add_argument("--data", required=True)
    sp.add_argument("--k-candidates", required=True)
    sp.add_argument("--split", type=float, default=0.8)
    _add_fit_flags(sp)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_select_k)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (io.DataFormatError, FileNotFoundError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
