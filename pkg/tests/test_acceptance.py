"""The nine acceptance criteria, each at its stated tolerance.

Every test records one PASS/FAIL line, repeated in the terminal summary.
"""

import time

import numpy as np

from tca.core import SpanningTree
from tca.density import fit_gmm, fit_moe, fit_tree_density, mdl_select
from tca.gaussian import gaussian_t_mi, sample_tree_covariance
from tca.kde import kde_entropy_1d, kde_entropy_2d
from tca.kgv import (KgvConfig, contrast_JK, incomplete_cholesky, kgv_dense_reference,
                     kgv_mutual_information)
from tca.metrics import amari_distance, e_w, tree_error, tree_error_bruteforce
from tca.optimizer import OptimizerConfig
from tca.synth import GeneratorSpec, random_spanning_tree, sample_tca_instance
from tca.trees import all_spanning_trees, max_weight_spanning_tree, tree_weight

from acceptance_log import record
from runs import ALL_FITS, fit_logged, nonincreasing, table1_runs, table2_rows
from treedata import tree_sources


def test_criterion_1_tree_selection_oracle():
    start = time.perf_counter()
    rng = np.random.default_rng(1)
    trees = {m: list(all_spanning_trees(m)) for m in (2, 3, 4, 5)}
    mismatches = 0
    for i in range(100):
        m = 2 + i % 4
        w = rng.random((m, m))
        w = w + w.T
        np.fill_diagonal(w, 0)
        weights = [tree_weight(w, t) for t in trees[m]]
        best = trees[m][int(np.argmax(weights))]
        got = max_weight_spanning_tree(w)
        if got != best or tree_weight(w, got) != max(weights):
            mismatches += 1
    secs = time.perf_counter() - start
    ok = mismatches == 0 and secs < 10
    record(1, "spanning tree vs exhaustive", ok, f"{mismatches} mismatches / 100, {secs:.2f}s")
    assert ok


def test_criterion_2_gaussian_closed_forms():
    start = time.perf_counter()
    rng = np.random.default_rng(2)
    worst_zero = 0.0
    for i in range(100):
        m = 2 + i % 5
        tree = random_spanning_tree(m, rng)
        worst_zero = max(worst_zero, abs(gaussian_t_mi(sample_tree_covariance(tree, rng).c, tree)))
    trees = list(all_spanning_trees(4))
    min_wrong = np.inf
    for tree in trees:
        c = sample_tree_covariance(tree, rng).c
        min_wrong = min(min_wrong, min(gaussian_t_mi(c, t) for t in trees if t != tree))
    secs = time.perf_counter() - start
    ok = worst_zero < 1e-8 and min_wrong > 0 and secs < 5
    record(2, "Gaussian closed forms", ok,
           f"max |I_T| on tree = {worst_zero:.1e}, min I_T on wrong tree = {min_wrong:.2e}, "
           f"{secs:.2f}s")
    assert ok


def test_criterion_3_kde_calibration():
    start = time.perf_counter()
    rng = np.random.default_rng(3)
    h1 = kde_entropy_1d(rng.standard_normal(5000)).value
    u, v = rng.standard_normal((2, 5000))
    h2 = kde_entropy_2d(u, v).value
    secs = time.perf_counter() - start
    ok = abs(h1 - 1.4189) <= 0.05 and abs(h2 - 2.8379) <= 0.1 and secs < 5
    record(3, "KDE entropy calibration", ok, f"H1 = {h1:.4f}, H2 = {h2:.4f}, {secs:.2f}s")
    assert ok


def test_criterion_4_kgv_well_posed():
    start = time.perf_counter()
    rng = np.random.default_rng(4)
    min_mi = np.inf
    for i in range(1000):
        m = 2 + i % 3
        n = int(rng.integers(20, 120))
        s = rng.standard_normal((n, m)) @ rng.standard_normal((m, m))
        if i % 2:
            s[:, 1] += s[:, 0] ** 2
        min_mi = min(min_mi, kgv_mutual_information([incomplete_cholesky(c) for c in s.T]))
    exact = KgvConfig(cholesky_tol=1e-12)
    max_gap = 0.0
    for _ in range(20):
        n = int(rng.integers(10, 51))
        s = rng.standard_normal((3, n))
        s[2] += 0.7 * s[0] ** 2
        low = kgv_mutual_information([incomplete_cholesky(c, exact) for c in s], exact)
        max_gap = max(max_gap, abs(low - kgv_dense_reference(s, exact)))
    max_two = 0.0
    tree = SpanningTree(2, [(0, 1)])
    for _ in range(20):
        x = rng.standard_normal((300, 2))
        x[:, 1] += np.sin(2 * x[:, 0])
        max_two = max(max_two, abs(contrast_JK(rng.standard_normal((2, 2)), x, tree)))
    secs = time.perf_counter() - start
    ok = min_mi >= -1e-9 and max_gap <= 1e-6 and max_two <= 1e-9 and secs < 30
    record(4, "KGV well-posedness", ok,
           f"min I_K = {min_mi:.2e}, low-rank vs dense gap = {max_gap:.1e}, "
           f"|J_K| at m=2 = {max_two:.1e}, {secs:.1f}s")
    assert ok


def test_criterion_5_table1_m4():
    start = time.perf_counter()
    parts, ok = [], True
    for contrast in ("kde", "kgv"):
        runs = table1_runs(contrast)
        ew, et = np.mean([r.e_w for r in runs]), np.mean([r.e_t for r in runs])
        ok &= bool(ew <= 10 and et <= 0.15)
        parts.append(f"{contrast}: mean e_W = {ew:.2f}, mean e_T = {100 * et:.1f}%")
    secs = time.perf_counter() - start
    ok &= secs < 30 * 60
    record(5, "Table 1 at m=4, N=1000, 20 reps", ok, "; ".join(parts) + f"; {secs / 60:.1f} min")
    assert ok


def test_criterion_6_table2_m4_tau1():
    start = time.perf_counter()
    rows = table2_rows()
    secs = time.perf_counter() - start
    mean = {c: float(np.mean([r[c] for r in rows])) for c in
            ("GAU", "GMM", "IND", "CL", "ICA", "TCA_KDE", "TCA_KGV")}
    ok = all(r["status"] == "ok" for r in rows) and secs < 45 * 60
    for c in ("TCA_KDE", "TCA_KGV"):
        ok &= mean[c] < mean["GMM"] and mean[c] < mean["CL"]
    detail = ", ".join(f"{k} {v:.3f}" for k, v in mean.items())
    record(6, "Table 2 deficits at m=4, tau=1, 10 reps", ok, f"{detail}; {secs / 60:.1f} min")
    assert ok


def test_criterion_7_metric_oracles():
    rng = np.random.default_rng(7)
    trees4 = list(all_spanning_trees(4))
    bad = sum(tree_error(a, b) != tree_error_bruteforce(a, b) for a in trees4 for b in trees4)
    for _ in range(200):
        m = int(rng.integers(2, 7))
        a, b = random_spanning_tree(m, rng), random_spanning_tree(m, rng)
        bad += tree_error(a, b) != tree_error_bruteforce(a, b)
    worst_amari = 0.0
    for _ in range(50):
        m = int(rng.integers(2, 8))
        w = rng.standard_normal((m, m))
        p = np.eye(m)[rng.permutation(m)]
        d = np.diag(rng.choice([-1, 1], m) * rng.uniform(0.1, 10, m))
        worst_amari = max(worst_amari, amari_distance(p @ d @ w, w))
    worst_leaf = 0.0
    for _ in range(50):
        m = int(rng.integers(3, 7))
        tree = random_spanning_tree(m, rng)
        a = rng.standard_normal((m, m))
        sigma = a @ a.T + np.eye(m)
        evals, evecs = np.linalg.eigh(sigma)
        q, _ = np.linalg.qr(rng.standard_normal((m, m)))
        w = q @ evecs @ np.diag(evals ** -0.5) @ evecs.T
        mixed = w.copy()
        for leaf in tree.leaves():
            mixed[leaf] += rng.normal() * w[tree.neighbors(leaf)[0]]
        worst_leaf = max(worst_leaf, e_w(mixed, tree, w, tree, sigma))
    ok = bad == 0 and worst_amari <= 1e-10 and worst_leaf <= 1e-8
    record(7, "metric oracles", ok,
           f"{bad} tree-error mismatches, max P.D Amari = {worst_amari:.1e}, "
           f"max leaf-mixed e_W = {worst_leaf:.1e}")
    assert ok


def test_criterion_8_optimizer_contract():
    table1_runs("kgv")
    for seed in range(3):
        inst = sample_tca_instance(GeneratorSpec(5, 800, seed=100 + seed))
        fit_logged(inst.x, OptimizerConfig(seed=seed, contrast=("kde", "kgv")[seed % 2]))
    inst = sample_tca_instance(GeneratorSpec(4, 1000, seed=42))
    cfg = OptimizerConfig(seed=42)
    a, b = fit_logged(inst.x, cfg), fit_logged(inst.x, cfg)
    same = (np.array_equal(a.w, b.w) and a.objective_trace == b.objective_trace
            and a.tree == b.tree)
    monotone = sum(nonincreasing(f.objective_trace) for f in ALL_FITS)
    ok = same and monotone == len(ALL_FITS)
    record(8, "optimizer contract", ok,
           f"{monotone}/{len(ALL_FITS)} traces nonincreasing, pinned rerun identical: {same}")
    assert ok


def test_criterion_9_density_stage():
    rng = np.random.default_rng(9)
    traces = []
    for seed in range(5):
        y = np.concatenate([rng.normal(-2, 0.6, 500), rng.normal(1.5, 1.0, 500)])
        traces += [fit_gmm(y, k, seed).trace for k in (1, 2, 3)]
        x = rng.standard_normal(1000)
        y2 = np.where(x > 0, 1.0, -1.0) * 0.8 + 0.5 * x + 0.4 * rng.standard_normal(1000)
        traces += [fit_moe(y2, x, k, seed).trace for k in (1, 2, 3)]
    tree = SpanningTree(3, [(0, 1), (1, 2)])
    model = fit_tree_density(tree_sources(tree, 1500, seed=9), np.eye(3), tree, k_max=4,
                             seed=0, patience=2)
    traces += [model.root_model.trace] + [m.trace for m in model.edge_models.values()]
    monotone = sum(bool(np.all(np.diff(t) >= -1e-9)) for t in traces)
    one = sum(mdl_select(np.random.default_rng(s).standard_normal(2000), k_max=4).k == 1
              for s in range(20))
    two = 0
    for s in range(20):
        r = np.random.default_rng(1000 + s)
        y = np.where(r.random(2000) < 0.5, -3.0, 3.0) + r.standard_normal(2000)
        two += mdl_select(y, k_max=4, seed=s).k == 2
    grid = np.linspace(-20, 20, 40001)
    worst = 0.0
    for u, moe in model.edge_models.items():
        for probe in (-2.0, -0.5, 0.0, 0.7, 2.0):
            dens = np.exp(moe.logpdf(grid, np.full(grid.size, probe)))
            worst = max(worst, abs(np.trapezoid(dens, grid) - 1.0))
    ok = monotone == len(traces) and one >= 18 and two >= 18 and worst <= 1e-4
    record(9, "density stage", ok,
           f"{monotone}/{len(traces)} EM traces monotone, MDL K=1 {one}/20, K=2 {two}/20, "
           f"max |integral - 1| = {worst:.1e}")
    assert ok
