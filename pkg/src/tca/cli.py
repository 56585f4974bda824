"""Command-line entry point: ``python -m tca {gen,fit,eval,density,benchmark}``.

Exit codes: 0 success, 2 bad arguments or malformed input, 3 numerical failure,
4 optimizer did not converge (the result document is still written).
"""

import argparse
import json
import os
import sys
import time

import numpy as np

from .core import DataFormatError, SpanningTree, TCAError, estimate_covariance, load_dataset, save_csv
from .kde import KdeConfig
from .kgv import KgvConfig
from .optimizer import CONTRASTS, OptimizerConfig, alternate_minimize

TRUTH_VERSION = "tca-truth-1"
RESULT_VERSION = "tca-result-1"
REPORT_VERSION = "tca-report-1"

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_NONCONVERGED = 0, 2, 3, 4


class UsageError(Exception):
    pass


def _dump(path, doc):
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _load_json(path, kind, version):
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"{path}: invalid JSON ({exc.msg})", exc.lineno) from None
    if doc.get("version") != version:
        raise DataFormatError(f"{path}: expected a {kind} document with version {version!r}, "
                              f"found {doc.get('version')!r}")
    return doc


def _tree_of(doc_edges, m):
    return SpanningTree(m, [tuple(e) for e in doc_edges])


# ------------------------------------------------------------------ configs

def _optimizer_config(args) -> OptimizerConfig:
    try:
        kde = KdeConfig(bandwidth=args.bandwidth, grid_points=args.grid)
        kgv = KgvConfig(kernel_width=args.sigma, kappa=args.kappa, cholesky_tol=args.eta)
        return OptimizerConfig(lambda_c=args.lambda_c, contrast=args.contrast,
                               max_outer_iters=args.max_iters, seed=args.seed, kde=kde, kgv=kgv)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _config_echo(cfg: OptimizerConfig) -> dict:
    return {"contrast": cfg.contrast, "lambda_c": cfg.lambda_c, "seed": cfg.seed,
            "max_outer_iters": cfg.max_outer_iters, "grad_eps": cfg.grad_eps,
            "convergence_tol": cfg.convergence_tol, "init": cfg.init,
            "bandwidth": cfg.kde.bandwidth, "grid": cfg.kde.grid_points,
            "sigma": cfg.kgv.kernel_width, "kappa": cfg.kgv.kappa, "eta": cfg.kgv.cholesky_tol}


def _out_dir(path):
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {path!r}: {exc.strerror}") from None
    if not os.access(path, os.W_OK):
        raise OSError(f"output directory {path!r} is not writable")
    return path


# ------------------------------------------------------------------ commands

def cmd_gen(args):
    from .synth import GeneratorSpec, InvalidTreewidth, generate, moral_graph_edges

    try:
        spec = GeneratorSpec(args.m, args.n, treewidth=args.treewidth, seed=args.seed)
    except (InvalidTreewidth, ValueError) as exc:
        raise UsageError(str(exc)) from None
    out = _out_dir(args.out)
    inst = generate(spec)
    gen = inst.generator
    save_csv(os.path.join(out, "data.csv"), inst.x)
    truth = {
        "version": TRUTH_VERSION,
        "generator_version": gen.version,
        "catalog_version": gen.catalog_version,
        "m": spec.m, "n": spec.n, "treewidth": spec.treewidth, "seed": spec.seed,
        "w": inst.w.tolist(),
        "tree": [list(e) for e in inst.tree.edges] if inst.tree is not None else None,
        "moral_edges": [list(e) for e in sorted(moral_graph_edges(gen))],
        "generator": gen.to_dict(),
    }
    _dump(os.path.join(out, "truth.json"), truth)
    print(f"wrote {spec.n} x {spec.m} samples (treewidth {spec.treewidth}) to {out}")
    return EXIT_OK


def cmd_fit(args):
    cfg = _optimizer_config(args)
    data = load_dataset(args.data)
    if data.n <= data.m:
        raise UsageError(f"need more samples than dimensions, got N={data.n}, m={data.m}")
    start = time.perf_counter()
    stream = sys.stderr if args.verbose else None
    fit = alternate_minimize(data.samples, cfg, verbose=args.verbose, stream=stream)
    elapsed = time.perf_counter() - start
    doc = {
        "version": RESULT_VERSION,
        "data": os.path.abspath(args.data),
        "m": data.m, "n": data.n,
        "w": fit.w.tolist(),
        "tree": [list(e) for e in fit.tree.edges],
        "objective": fit.objective,
        "objective_trace": list(fit.objective_trace),
        "iterations": fit.iterations,
        "tree_switch_count": fit.tree_switch_count,
        "converged": bool(fit.converged),
        "ica_converged": bool(fit.ica_converged),
        "seconds": elapsed,
        "config": _config_echo(cfg),
    }
    out = args.out or "result.json"
    if os.path.isdir(out):
        out = os.path.join(out, "result.json")
    _dump(out, doc)
    print(f"objective {fit.objective:.6f} after {fit.iterations} iterations; wrote {out}")
    if not fit.converged:
        print("warning: optimizer did not converge", file=sys.stderr)
        return EXIT_NONCONVERGED
    return EXIT_OK


def cmd_eval(args):
    from .metrics import amari_distance, metric_report

    truth = _load_json(args.truth, "truth", TRUTH_VERSION)
    result = _load_json(args.result, "result", RESULT_VERSION)
    if truth["tree"] is None:
        raise UsageError("truth document has no tree (treewidth > 1); nothing to compare")
    m = truth["m"]
    if result["m"] != m:
        raise UsageError(f"dimension mismatch: truth m={m}, result m={result['m']}")
    data = load_dataset(args.data or result["data"])
    w_hat, w_true = np.asarray(result["w"]), np.asarray(truth["w"])
    rep = metric_report(w_hat, _tree_of(result["tree"], m), w_true, _tree_of(truth["tree"], m),
                        estimate_covariance(data.samples))
    doc = {"version": REPORT_VERSION, "e_w": rep.e_w, "e_t": rep.e_t,
           "amari": amari_distance(w_hat, w_true)}
    if args.out:
        _dump(args.out, doc)
    print(json.dumps(doc, sort_keys=True))
    return EXIT_OK


def cmd_density(args):
    from .benchmark import density_report
    from .density import fit_tree_density, save_model

    if not 0 < args.split < 1:
        raise UsageError("--split must lie strictly between 0 and 1")
    if args.kmax < 1:
        raise UsageError("--kmax must be >= 1")
    result = _load_json(args.fit, "result", RESULT_VERSION)
    truth = _load_json(args.truth, "truth", TRUTH_VERSION) if args.truth else None
    out = _out_dir(args.out)
    x = load_dataset(args.data).samples
    m = x.shape[1]
    if result["m"] != m:
        raise UsageError(f"fit result has m={result['m']} but data has {m} columns")
    perm = np.random.default_rng(args.seed).permutation(x.shape[0])
    n_train = int(round(args.split * x.shape[0]))
    train, test = x[perm[:n_train]], x[perm[n_train:]]
    if test.shape[0] == 0:
        raise UsageError("held-out split is empty")
    w, tree = np.asarray(result["w"]), _tree_of(result["tree"], m)
    model = fit_tree_density(train, w, tree, k_max=args.kmax, seed=args.seed,
                             patience=args.patience)
    save_model(os.path.join(out, "model.json"), model)
    report = density_report(train, test, k_max=args.kmax, seed=args.seed,
                            patience=args.patience,
                            include=("GAU", "IND", "CL", "GMM"))
    report["TCA"] = float(np.mean(model.logpdf(test)))
    doc = {"version": REPORT_VERSION, "n_train": int(train.shape[0]),
           "n_test": int(test.shape[0]), "seed": args.seed, "kmax": args.kmax,
           "loglik": report}
    if truth is not None:
        from .synth import SourceGenerator

        gen = SourceGenerator.from_dict(truth["generator"])
        ref = float(np.mean(gen.log_density(test)))
        doc["generator_loglik"] = ref
        doc["deficit"] = {k: ref - v for k, v in report.items()}
    _dump(os.path.join(out, "density_report.json"), doc)
    for name in ("GAU", "IND", "CL", "GMM", "TCA"):
        extra = f"  deficit {doc['deficit'][name]:.4f}" if truth is not None else ""
        print(f"{name:4s} {report[name]: .4f}{extra}")
    return EXIT_OK


def cmd_benchmark(args):
    from .benchmark import SUITES, run_suite

    if args.suite not in SUITES:
        raise UsageError(f"suite must be one of {SUITES}")
    if args.reps is not None and args.reps < 1:
        raise UsageError("--reps must be >= 1")
    cfg = _optimizer_config(args)
    out = _out_dir(args.out)
    ms = tuple(args.m) if args.m else None
    summaries = run_suite(args.suite, out, reps=args.reps, base_seed=args.seed,
                          workers=args.workers, opt=cfg, ms=ms)
    for name, rows in summaries.items():
        for row in rows:
            print(name, json.dumps(row, sort_keys=True))
    return EXIT_OK


# ------------------------------------------------------------------ parser

def _add_optimizer_flags(p):
    d_kde, d_kgv, d_opt = KdeConfig(), KgvConfig(), OptimizerConfig()
    p.add_argument("--contrast", choices=CONTRASTS, default=d_opt.contrast)
    p.add_argument("--lambda-c", type=float, default=d_opt.lambda_c,
                   help="weight of the correlation penalty")
    p.add_argument("--bandwidth", type=float, default=d_kde.bandwidth,
                   help="KDE bandwidth, relative to the sample standard deviation")
    p.add_argument("--grid", type=int, default=d_kde.grid_points, help="KDE grid size")
    p.add_argument("--sigma", type=float, default=d_kgv.kernel_width, help="KGV kernel width")
    p.add_argument("--kappa", type=float, default=d_kgv.kappa, help="KGV regularization")
    p.add_argument("--eta", type=float, default=d_kgv.cholesky_tol,
                   help="incomplete Cholesky tolerance")
    p.add_argument("--max-iters", type=int, default=d_opt.max_outer_iters)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tca", description=__doc__.splitlines()[0])
    parser.add_argument("--verbose", action="store_true", help="per-iteration JSON log on stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="sample a synthetic instance")
    p.add_argument("--m", type=int, required=True)
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--treewidth", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=".", help="output directory")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("fit", help="estimate W and the tree")
    p.add_argument("data")
    _add_optimizer_flags(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="result file or directory (default result.json)")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("eval", help="compare a fit result with the truth")
    p.add_argument("--truth", required=True)
    p.add_argument("--result", required=True)
    p.add_argument("--data", help="data used for the covariance (default: the fitted file)")
    p.add_argument("--out", help="write the metrics document here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("density", help="fit the tree density and report held-out log-likelihood")
    p.add_argument("data")
    p.add_argument("--fit", required=True, help="result document from the fit command")
    p.add_argument("--truth", help="truth document; adds deficits against the generator")
    p.add_argument("--kmax", type=int, default=8)
    p.add_argument("--split", type=float, default=0.8, help="training fraction")
    p.add_argument("--patience", type=int, default=2,
                   help="stop the K sweep after this many non-improving K (0: full sweep)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=".", help="output directory")
    p.set_defaults(func=cmd_density)

    p = sub.add_parser("benchmark", help="run a replication suite")
    p.add_argument("suite", help="table1, table2 or smoke")
    _add_optimizer_flags(p)
    p.add_argument("--reps", type=int)
    p.add_argument("--m", type=int, nargs="+", help="restrict to these dimensions")
    p.add_argument("--seed", type=int, default=0, help="base seed")
    p.add_argument("--workers", type=int, default=None,
                   help="worker processes (default: available CPUs)")
    p.add_argument("--out", default="bench", help="output directory")
    p.set_defaults(func=cmd_benchmark)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "patience", None) == 0:
        args.patience = None
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataFormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (TCAError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
