"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

The lines are collected in ``ACCEPTANCE`` and echoed in pytest's terminal
summary, so they appear under ``pytest -v`` without ``-s``.
"""

import filecmp
import json
import math
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE
from skelxai import cli, gradcam, shapley
from skelxai.data import KeypointGraph, synthetic_graph
from skelxai.explanation import ExplanationMap, write_table
from skelxai.harness import (
    pgi_pgu,
    rank_keypoints,
    roc_auc,
    run_seed,
    runtime_benchmark,
    spearman,
)
from skelxai.model import CaptureRecord, GcnModel, GraphConvLayer, ModelConfig, backward_to_layer, graph_conv_forward
from skelxai.model.adjacency import NormalizedAdjacency

SEEDS = (1, 2, 3, 4, 5)
K = 3


def report(n, ok, detail):
    line = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE[n] = line
    print(line)
    assert ok, line


# -- shared oracles ----------------------------------------------------------------

def loop_graph_conv(f_in, W, E, A):
    P, O, C = W.shape
    _, T, V = f_in.shape
    out = np.zeros((O, T, V))
    for j in range(P):
        for o in range(O):
            for c in range(C):
                for t in range(T):
                    for u in range(V):
                        for w in range(V):
                            out[o, t, w] += W[j, o, c] * f_in[c, t, u] * A[j, u, w] * E[j, w]
    return out


def pairwise_auc(s, y):
    pos, neg = s[y == 1], s[y == 0]
    return float(((pos[:, None] > neg[None]) + 0.5 * (pos[:, None] == neg[None])).mean())


def average_ranks(x):
    order = sorted(range(len(x)), key=lambda i: x[i])
    ranks = np.zeros(len(x))
    i = 0
    while i < len(x):
        j = i
        while j + 1 < len(x) and x[order[j + 1]] == x[order[i]]:
            j += 1
        ranks[[order[k] for k in range(i, j + 1)]] = (i + j) / 2 + 1
        i = j + 1
    return ranks


def oracle_spearman(x, y):
    rx, ry = average_ranks(list(x)), average_ranks(list(y))
    rx, ry = rx - rx.mean(), ry - ry.mean()
    return float((rx * ry).sum() / math.sqrt((rx ** 2).sum() * (ry ** 2).sum()))


def sorted_quantile(vals, q):
    s = sorted(vals)
    pos = q * (len(s) - 1)
    lo = int(math.floor(pos))
    hi = min(lo + 1, len(s) - 1)
    return s[lo] + (s[hi] - s[lo]) * (pos - lo)


def desk_model(seed, V=11, T=8, num_classes=3):
    m = GcnModel.initialize(ModelConfig(num_classes=num_classes), synthetic_graph(V), seed)
    rng = np.random.default_rng(seed + 1)
    for _, p in m.named_parameters():
        p += rng.normal(0, 0.2, p.shape)
    return m, rng.normal(size=(4, 2, T, V))


# -- 1 --------------------------------------------------------------------------------

def test_criterion_01_graph_conv_oracle():
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(100):
        V, C, O, P, T = (int(rng.integers(1, 9)), int(rng.integers(1, 5)), int(rng.integers(1, 5)),
                         int(rng.integers(1, 4)), int(rng.integers(1, 5)))
        layer = GraphConvLayer(rng.normal(size=(P, O, C)), rng.normal(size=(P, V)))
        A = rng.normal(size=(P, V, V)) * (rng.uniform(size=(P, V, V)) < 0.5)
        f = rng.normal(size=(C, T, V))
        got = graph_conv_forward(f, layer, A)
        worst = max(worst, float(np.abs(got - loop_graph_conv(f, layer.weights, layer.edge_importance, A)).max()))
    elapsed = time.perf_counter() - t0
    report(1, worst <= 1e-10 and elapsed < 10, f"100 instances, max |diff| {worst:.2e}, {elapsed:.1f} s")


# -- 2 --------------------------------------------------------------------------------

def finite_difference(m, x, c, lid, act, eps=1e-5, chunk=512):
    """Central differences of logit_c over every entry of ``act`` via batched overrides."""
    n = act.size
    fd = np.empty(n)
    for start in range(0, n, chunk):
        idx = np.arange(start, min(n, start + chunk))
        pert = np.repeat(act[None], 2 * len(idx), axis=0).reshape(2 * len(idx), -1)
        pert[np.arange(len(idx)), idx] += eps
        pert[len(idx) + np.arange(len(idx)), idx] -= eps
        xb = np.repeat(x[None], 2 * len(idx), axis=0)
        logits, _ = m.forward(xb, overrides={lid: pert.reshape((-1,) + act.shape)})
        fd[idx] = (logits[:len(idx), c] - logits[len(idx):, c]) / (2 * eps)
    return fd.reshape(act.shape)


def test_criterion_02_gradient_correctness():
    t0 = time.perf_counter()
    worst, probes = 0.0, 0
    for probe in range(10):
        m, x = desk_model(100 + probe)
        c = probe % m.num_classes
        for lid in m.layer_ids():
            rec = backward_to_layer(m, x, c, lid)
            fd = finite_difference(m, x, c, lid, rec.activations)
            scale = max(float(np.abs(fd).max()), 1e-12)
            worst = max(worst, float(np.abs(fd - rec.gradients).max()) / scale)
        probes += 1
    elapsed = time.perf_counter() - t0
    report(2, worst < 1e-4 and probes >= 10 and elapsed < 120,
           f"{probes} probes x {len(m.layer_ids())} layers, max rel err {worst:.2e}, {elapsed:.1f} s")


# -- 3 --------------------------------------------------------------------------------

def star_model(seed):
    """Keypoints 1 and 2 are interchangeable leaves of root 0."""
    g = KeypointGraph(5, [(0, 1), (0, 2), (0, 3), (3, 4)], [0, 0, 0, 0, 3])
    m = GcnModel.initialize(ModelConfig(branch_channels=[3], main_channels=[4]), g, seed)
    return m


def test_criterion_03_shapley_axioms():
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    worst_eff = 0.0
    for i in range(50):
        V = int(rng.integers(3, 11))
        m = GcnModel.initialize(ModelConfig(branch_channels=[3], main_channels=[4]), synthetic_graph(max(V, 4)), i)
        T = 3
        x = rng.normal(size=(4, 2, T, m.graph.num_keypoints))
        bg = rng.normal(size=(int(rng.integers(1, 4)), 4, 2, T, m.graph.num_keypoints))
        scheme = shapley.make_scheme(["keypoint", "stream"][i % 2], x.shape)
        res = shapley.exact_shapley(m, x, scheme, bg, int(rng.integers(3)))
        assert scheme.F <= 10
        worst_eff = max(worst_eff, res.efficiency_gap())
    # symmetry: swap of two structurally identical leaves with symmetric inputs
    sym = 0.0
    for seed in range(3):
        m = star_model(seed)
        x = rng.normal(size=(4, 2, 3, 5))
        x[..., 2] = x[..., 1]
        bg = rng.normal(size=(2, 4, 2, 3, 5))
        bg[..., 2] = bg[..., 1]
        res = shapley.exact_shapley(m, x, shapley.make_scheme("keypoint", x.shape), bg, 0)
        sym = max(sym, abs(res.phi[1] - res.phi[2]))
    # missingness: an isolated keypoint (zero adjacency row and column) never matters
    miss = 0.0
    for seed in range(3):
        m = GcnModel.initialize(ModelConfig(branch_channels=[3], main_channels=[4]), synthetic_graph(6), seed)
        parts = m.adjacency.partitions.copy()
        parts[:, 5, :] = 0
        parts[:, :, 5] = 0
        m.adjacency = NormalizedAdjacency(parts, m.adjacency.raw, m.adjacency.strategy)
        x = rng.normal(size=(4, 2, 3, 6))
        bg = rng.normal(size=(2, 4, 2, 3, 6))
        res = shapley.exact_shapley(m, x, shapley.make_scheme("keypoint", x.shape), bg, 1)
        miss = max(miss, abs(res.phi[5]))
    elapsed = time.perf_counter() - t0
    ok = worst_eff <= 1e-6 and sym <= 1e-9 and miss <= 1e-9 and elapsed < 120
    report(3, ok, f"efficiency gap {worst_eff:.1e}, symmetry {sym:.1e}, missingness {miss:.1e}, {elapsed:.1f} s")


# -- 4 --------------------------------------------------------------------------------

def test_criterion_04_estimator_convergence():
    t0 = time.perf_counter()
    ratios = []
    for seed in range(10):
        m, x = desk_model(200 + seed, V=10, T=4)
        bg = np.random.default_rng(seed).normal(size=(2,) + x.shape)
        s = shapley.make_scheme("keypoint", x.shape)
        exact = shapley.exact_shapley(m, x, s, bg, seed % 3)
        est = shapley.sampled_shapley(m, x, s, bg, seed % 3, M=2000, seed=seed)
        ratios.append(np.mean(np.abs(est.phi - exact.phi)) / (np.abs(exact.phi).max() + 1e-12))
    elapsed = time.perf_counter() - t0
    report(4, max(ratios) < 0.05 and elapsed < 300,
           f"F=10, M=2000, worst mean|dphi| / max|phi| = {max(ratios):.4f} over 10 seeds, {elapsed:.1f} s")


# -- 5 --------------------------------------------------------------------------------

def test_criterion_05_gradcam_identities():
    t0 = time.perf_counter()
    rng = np.random.default_rng(5)
    ok = True
    for _ in range(1000):
        Kc, T, V = (int(v) for v in rng.integers(1, 7, 3))
        A, G = rng.normal(size=(Kc, T, V)), rng.normal(size=(Kc, T, V))
        rec = CaptureRecord("l", A, G, 0)
        cf = gradcam.cam(rec, -1)
        ok &= np.array_equal(cf.values, gradcam.cam(CaptureRecord("l", A, -G, 0), 1).values)
        pos = gradcam.cam(rec, 1)
        ok &= bool((pos.values >= 0).all() and (cf.values >= 0).all())
        for mp in (pos, cf):
            n = gradcam.normalize_cam(mp)
            if n.degenerate:
                ok &= not n.values.any()
            else:
                ok &= bool(n.values.max() == 1.0 and (n.values >= 0).all() and (n.values <= 1).all())
    elapsed = time.perf_counter() - t0
    report(5, bool(ok) and elapsed < 10, f"1000 random records, {elapsed:.2f} s")


# -- 6 / 7 / 8 --------------------------------------------------------------------------

@pytest.fixture(scope="module")
def faithfulness():
    t0 = time.perf_counter()
    outcomes = [run_seed(s, k=K) for s in SEEDS]
    return outcomes, time.perf_counter() - t0


def test_criterion_06_faithfulness_ordering(faithfulness):
    outcomes, elapsed = faithfulness
    ok = elapsed < 900
    parts = []
    for name in ("gradcam", "shap"):
        mean = {mode: float(np.mean([o.curves[(name, mode)][K] for o in outcomes]))
                for mode in ("important", "random", "unimportant")}
        base = float(np.mean([o.curves[(name, "important")][0] for o in outcomes]))
        ok &= mean["important"] <= mean["random"] <= mean["unimportant"]
        ok &= mean["important"] <= base - 0.05
        parts.append(f"{name}: base {base:.3f} imp {mean['important']:.3f} rand {mean['random']:.3f} "
                     f"unimp {mean['unimportant']:.3f}")
    report(6, ok, "; ".join(parts) + f"; {elapsed:.0f} s")


def test_criterion_07_pgi_pgu(faithfulness):
    outcomes, _ = faithfulness
    ok = True
    parts = []
    for name in ("gradcam", "shap"):
        pgi = float(np.mean([o.pgi[name] for o in outcomes]))
        pgu = float(np.mean([o.pgu[name] for o in outcomes]))
        ok &= pgi > pgu
        parts.append(f"{name}: PGI {pgi:.3f} > PGU {pgu:.3f}")
    o = outcomes[0]
    x, y = o.val
    identity = [pgi_pgu(o.model, xi, o.rankings[("gradcam", int(c))], K, 1.0) for xi, c in zip(x, y)]
    ok &= all(g == (0.0, 0.0) for g in identity)
    report(7, ok, "; ".join(parts) + "; factor 1 gives (0, 0)")


def test_criterion_08_runtime_ordering(faithfulness, tmp_path):
    outcomes, _ = faithfulness
    o = outcomes[0]
    x_all = np.concatenate([o.train_x, o.val[0]])
    x = x_all[np.resize(np.arange(len(x_all)), 200)]
    bg = shapley.BackgroundSet.draw(o.train_x, 20, 20, 1234)
    configs = [{"method": "gradcam", "layer": "main.tcn"},
               {"method": "shap", "scheme": "stream", "estimator": "permutation", "M": 200, "background": bg}]
    rep = runtime_benchmark(o.model, x, configs)
    header, rows = rep.to_rows()
    out = tmp_path / "runtime.csv"
    write_table(out, header, rows)
    secs = {e.explainer: e.seconds for e in rep.entries}
    report(8, secs["gradcam"] < secs["shap"] and out.exists(),
           f"200 samples: gradcam {secs['gradcam']:.2f} s < shap {secs['shap']:.2f} s (stream players, M=200, bg 20)")


# -- 9 --------------------------------------------------------------------------------

def test_criterion_09_statistics_oracles():
    rng = np.random.default_rng(9)
    worst_auc = worst_rho = worst_q = 0.0
    for i in range(100):
        n = int(rng.integers(4, 60))
        s = rng.integers(0, 6, n).astype(float) if i % 2 else rng.normal(size=n)
        y = rng.integers(0, 2, n)
        y[0], y[1] = 0, 1
        worst_auc = max(worst_auc, abs(roc_auc(s, y) - pairwise_auc(s, y)))
        a = rng.integers(0, 5, n).astype(float) if i % 2 else rng.normal(size=n)
        b = rng.integers(0, 5, n).astype(float) if i % 3 else rng.normal(size=n)
        if len(set(a)) > 1 and len(set(b)) > 1:
            worst_rho = max(worst_rho, abs(spearman(a, b) - oracle_spearman(a, b)))
    for i in range(100):
        maps = [ExplanationMap(np.round(rng.normal(size=(int(rng.integers(1, 3)), 5)), i % 3), "g", "l", 0)
                for _ in range(int(rng.integers(1, 30)))]
        table = rank_keypoints(maps)
        for r in table.rows:
            col = [abs(v) for m in maps for v in m.scores[:, r.keypoint]]
            worst_q = max(worst_q, abs(r.median - sorted_quantile(col, 0.5)),
                          abs(r.q1 - sorted_quantile(col, 0.25)), abs(r.q3 - sorted_quantile(col, 0.75)))
    ok = worst_auc <= 1e-12 and worst_rho <= 1e-12 and worst_q <= 1e-12
    report(9, ok, f"auc {worst_auc:.1e}, spearman {worst_rho:.1e}, quantiles {worst_q:.1e}")


# -- 10 -------------------------------------------------------------------------------

PIPELINE = [
    ["synth"],
    ["train"],
    ["explain"],
    ["explain", "--method", "shap"],
    ["explain", "--method", "shap", "--scheme", "stream"],
    ["explain", "--counterfactual"],
    ["perturb"],
    ["perturb", "--method", "shap"],
    ["rank"],
    ["rank", "--method", "shap"],
    ["correlate"],
    ["bench"],
]


def test_criterion_10_cli_determinism(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({
        "dataset": {"synthetic": {"per_class": 12}},
        "train": {"epochs": 10},
        "explainer": {"M": 16, "background_n": 8, "subsample": 4, "samples": "val/2"},
        "harness": {"trials": 3},
        "bench": {"samples": 10, "M": 8, "background_n": 4, "subsample": 4},
    }))
    dirs = [tmp_path / "a", tmp_path / "b"]
    for d in dirs:
        for cmd in PIPELINE:
            assert cli.main(cmd + ["--config", str(cfg), "--out", str(d), "--seed", "77"]) == 0, cmd
    # re-running every command in place must not change any CSV either
    before = {p: p.read_bytes() for p in dirs[0].rglob("*.csv")}
    for cmd in PIPELINE[1:]:
        assert cli.main(cmd + ["--config", str(cfg), "--out", str(dirs[0]), "--seed", "77"]) == 0
    csvs = sorted(p.relative_to(dirs[0]) for p in dirs[0].rglob("*.csv"))
    same = all(filecmp.cmp(dirs[0] / p, dirs[1] / p, shallow=False) for p in csvs)
    same &= all(p.read_bytes() == before[p] for p in before)
    same &= (dirs[0] / "data/manifest.json").read_bytes() == (dirs[1] / "data/manifest.json").read_bytes()
    report(10, same and len(csvs) >= 10, f"{len(csvs)} CSV artifacts byte-identical across runs")
