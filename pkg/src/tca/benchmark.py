"""Seeded replication suites for demixing recovery and held-out density.

Every replication draws its instance from ``GeneratorSpec(seed=base_seed + rep)``
so any single cell can be rerun in isolation.
"""

import csv
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.stats import multivariate_normal
from sklearn.mixture import GaussianMixture as SkGaussianMixture

from .core import TCAError, estimate_covariance
from .density import fit_tree_density, mdl_select
from .kde import KdeContrast
from .metrics import METRIC_COLUMNS, metric_report, write_metric_table
from .optimizer import OptimizerConfig, alternate_minimize, ica_initialize
from .synth import GeneratorSpec, generate, sample_tca_instance
from .trees import max_weight_spanning_tree

SUITES = ("table1", "table2", "smoke")
TABLE1_SIZES = {4: 1000, 6: 2000, 8: 2000, 12: 4000, 16: 4000}
DENSITY_COLUMNS = ("GAU", "GMM", "IND", "CL", "ICA", "TCA_KDE", "TCA_KGV")


@dataclass(frozen=True)
class Table1Cell:
    m: int
    contrast: str
    reps: int
    n: int = None

    @property
    def samples(self) -> int:
        return self.n or TABLE1_SIZES.get(self.m, 4000)


def table1_replicate(m, n, contrast, rep, base_seed=0, opt: OptimizerConfig = None) -> dict:
    seed = base_seed + rep
    row = {"m": m, "contrast": contrast, "replicate": rep, "seed": seed}
    start = time.perf_counter()
    try:
        inst = sample_tca_instance(GeneratorSpec(m, n, seed=seed))
        cfg = opt or OptimizerConfig()
        cfg = OptimizerConfig(**{**cfg.__dict__, "contrast": contrast, "seed": seed})
        fit = alternate_minimize(inst.x, cfg)
        rep_ = metric_report(fit.w, fit.tree, inst.w, inst.tree, estimate_covariance(inst.x))
        row.update(e_w=rep_.e_w, e_t=rep_.e_t, converged=fit.converged, status="ok")
    except (TCAError, np.linalg.LinAlgError, ValueError) as exc:
        row.update(e_w=float("nan"), e_t=float("nan"), converged=False,
                   status=f"error: {exc}")
    row["seconds"] = time.perf_counter() - start
    return row


def _run(fn, jobs, workers):
    if workers is None:
        workers = os.cpu_count() or 1
    if workers <= 1 or len(jobs) <= 1:
        return [fn(*j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, *zip(*jobs)))


def run_table1(cells, base_seed=0, workers=1, opt: OptimizerConfig = None):
    """All replications of every cell; returns the per-replication rows."""
    jobs = [(c.m, c.samples, c.contrast, r, base_seed, opt) for c in cells for r in range(c.reps)]
    return _run(table1_replicate, jobs, workers)


def summarize(rows, keys=("m", "contrast"), values=("e_w", "e_t", "seconds")):
    """Mean of ``values`` per group of ``keys`` (NaN rows from failures are skipped)."""
    groups = {}
    for r in rows:
        groups.setdefault(tuple(r[k] for k in keys), []).append(r)
    out = []
    for key, rs in groups.items():
        entry = dict(zip(keys, key))
        entry["reps"] = len(rs)
        entry["failures"] = sum(1 for r in rs if r.get("status", "ok") != "ok")
        for v in values:
            vals = np.array([r[v] for r in rs], dtype=float)
            entry[v] = float(np.nanmean(vals)) if np.isfinite(vals).any() else float("nan")
        out.append(entry)
    return out


# ------------------------------------------------------------- density

def _gau_loglik(train, test):
    mu = train.mean(axis=0)
    cov = np.cov(train, rowvar=False, bias=True)
    return float(np.mean(multivariate_normal(mu, cov).logpdf(test)))


def _gmm_loglik(train, test, k_max, seed):
    """Full-covariance Gaussian mixture with K chosen by BIC."""
    best, best_bic = None, np.inf
    for k in range(1, k_max + 1):
        g = SkGaussianMixture(k, covariance_type="full", random_state=seed, n_init=1,
                              reg_covar=1e-6).fit(train)
        bic = g.bic(train)
        if bic < best_bic:
            best, best_bic = g, bic
    return float(np.mean(best.score_samples(test)))


def _independent_loglik(train, test, w, k_max, seed, patience):
    """Independent univariate mixtures on the columns of x W^T, plus log|det W|."""
    s_tr, s_te = train @ w.T, test @ w.T
    total = np.linalg.slogdet(w)[1]
    for j in range(w.shape[0]):
        g = mdl_select(s_tr[:, j], k_max=k_max, seed=seed, patience=patience)
        total += np.mean(g.logpdf(s_te[:, j]))
    return float(total)


def _tree_loglik(train, test, w, tree, k_max, seed, patience):
    model = fit_tree_density(train, w, tree, k_max=k_max, seed=seed, patience=patience)
    return float(np.mean(model.logpdf(test)))


def chow_liu_tree(x, cfg=None):
    """Maximum spanning tree of KDE pairwise mutual information of the raw columns."""
    x = np.asarray(x, dtype=float)
    contrast = KdeContrast(x) if cfg is None else KdeContrast(x, cfg)
    return max_weight_spanning_tree(contrast.mi_matrix(np.eye(x.shape[1])))


def density_report(train, test, w_tca=None, tree_tca=None, k_max=8, seed=0, patience=2,
                   tca_fits=None, include=DENSITY_COLUMNS):
    """Held-out mean log-likelihood of every baseline and TCA model.

    ``tca_fits`` maps a column name to a ``(w, tree)`` pair; ``w_tca``/``tree_tca``
    fill the plain ``TCA`` column.
    """
    m = train.shape[1]
    eye = np.eye(m)
    out = {}
    if "GAU" in include:
        out["GAU"] = _gau_loglik(train, test)
    if "GMM" in include:
        out["GMM"] = _gmm_loglik(train, test, k_max, seed)
    if "IND" in include:
        out["IND"] = _independent_loglik(train, test, eye, k_max, seed, patience)
    if "CL" in include:
        out["CL"] = _tree_loglik(train, test, eye, chow_liu_tree(train), k_max, seed, patience)
    if "ICA" in include:
        w_ica = ica_initialize(train, seed=seed)
        out["ICA"] = _independent_loglik(train, test, w_ica, k_max, seed, patience)
    if w_tca is not None:
        out["TCA"] = _tree_loglik(train, test, w_tca, tree_tca, k_max, seed, patience)
    for name, (w, tree) in (tca_fits or {}).items():
        out[name] = _tree_loglik(train, test, w, tree, k_max, seed, patience)
    return out


def table2_replicate(m, tau, rep, n_train=1000, n_test=1000, base_seed=0, k_max=8,
                     contrasts=("kde", "kgv"), opt: OptimizerConfig = None) -> dict:
    """Deficits (generator minus model mean held-out log-likelihood) for one draw."""
    seed = base_seed + rep
    row = {"m": m, "treewidth": tau, "replicate": rep, "seed": seed}
    start = time.perf_counter()
    try:
        inst = generate(GeneratorSpec(m, n_train, treewidth=tau, seed=seed))
        x_test, _ = inst.generator.sample(n_test, np.random.default_rng([seed, 3]))
        x_train = inst.x
        fits = {}
        cfg = opt or OptimizerConfig()
        for c in contrasts:
            fit = alternate_minimize(x_train, OptimizerConfig(
                **{**cfg.__dict__, "contrast": c, "seed": seed}))
            fits[f"TCA_{c.upper()}"] = (fit.w, fit.tree)
        report = density_report(x_train, x_test, k_max=k_max, seed=seed, tca_fits=fits)
        ref = float(np.mean(inst.generator.log_density(x_test)))
        for name, ll in report.items():
            row[name] = ref - ll
        row["status"] = "ok"
    except (TCAError, np.linalg.LinAlgError, ValueError) as exc:
        row["status"] = f"error: {exc}"
    row["seconds"] = time.perf_counter() - start
    return row


def run_table2(cells, reps, base_seed=0, workers=1, n_train=1000, n_test=1000,
               contrasts=("kde", "kgv"), opt: OptimizerConfig = None):
    jobs = [(m, tau, r, n_train, n_test, base_seed, 8, contrasts, opt)
            for m, tau in cells for r in range(reps)]
    return _run(table2_replicate, jobs, workers)


def write_rows(path, rows, columns):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(columns), extrasaction="ignore")
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


def run_suite(suite, out_dir, reps=None, base_seed=0, workers=1, opt: OptimizerConfig = None,
              ms=None):
    """Run a named suite and write its CSV tables into ``out_dir``.

    Returns ``{table name: summary rows}``.
    """
    if suite not in SUITES:
        raise ValueError(f"unknown suite {suite!r}; expected one of {SUITES}")
    os.makedirs(out_dir, exist_ok=True)
    result = {}
    if suite in ("table1", "smoke"):
        contrasts = ("kgv",) if suite == "smoke" else ("kde", "kgv")
        ms = ms or ((4,) if suite == "smoke" else (4, 6, 8, 12, 16))
        n_reps = reps or (5 if suite == "smoke" else 20)
        cells = [Table1Cell(m, c, n_reps) for m in ms for c in contrasts]
        rows = run_table1(cells, base_seed, workers, opt)
        write_metric_table(os.path.join(out_dir, f"{suite}_replicates.csv"), rows)
        summary = summarize(rows)
        write_rows(os.path.join(out_dir, f"{suite}_summary.csv"), summary,
                   ("m", "contrast", "reps", "failures", "e_w", "e_t", "seconds"))
        result[suite] = summary
    if suite == "table2":
        ms = ms or (4, 6)
        cells = [(m, tau) for m in ms for tau in range(1, min(4, m - 1) + 1)]
        n_reps = reps or 20
        rows = run_table2(cells, n_reps, base_seed, workers, opt=opt)
        cols = ("m", "treewidth", "replicate", "seed") + DENSITY_COLUMNS + ("seconds", "status")
        write_rows(os.path.join(out_dir, "table2_replicates.csv"), rows, cols)
        summary = summarize(rows, ("m", "treewidth"), DENSITY_COLUMNS + ("seconds",))
        write_rows(os.path.join(out_dir, "table2_summary.csv"), summary,
                   ("m", "treewidth", "reps", "failures") + DENSITY_COLUMNS + ("seconds",))
        result[suite] = summary
    return result


__all__ = ["METRIC_COLUMNS", "DENSITY_COLUMNS", "SUITES", "Table1Cell", "table1_replicate",
           "run_table1", "summarize", "density_report", "table2_replicate", "run_table2",
           "run_suite", "chow_liu_tree"]
