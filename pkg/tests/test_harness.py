import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import random_input, random_model
from skelxai import shapley
from skelxai.data import ground_truth_ranking
from skelxai.explanation import ExplanationMap
from skelxai.harness import (
    PerturbationPlan,
    UndefinedStatistic,
    correlation_report,
    perturb_model,
    perturbation_sweep,
    pgi_pgu,
    rank_keypoints,
    roc_auc,
    runtime_benchmark,
    spearman,
)
from skelxai.model import graph_conv_forward


# -- oracles ------------------------------------------------------------------------

def pairwise_auc(s, y):
    pos = [a for a, l in zip(s, y) if l]
    neg = [a for a, l in zip(s, y) if not l]
    total = 0.0
    for p in pos:
        for n in neg:
            total += 1.0 if p > n else 0.5 if p == n else 0.0
    return total / (len(pos) * len(neg))


def average_ranks(x):
    order = sorted(range(len(x)), key=lambda i: x[i])
    ranks = [0.0] * len(x)
    i = 0
    while i < len(x):
        j = i
        while j + 1 < len(x) and x[order[j + 1]] == x[order[i]]:
            j += 1
        for k in range(i, j + 1):
            ranks[order[k]] = (i + j) / 2 + 1
        i = j + 1
    return ranks


def rank_pearson(x, y):
    rx, ry = average_ranks(list(x)), average_ranks(list(y))
    mx, my = sum(rx) / len(rx), sum(ry) / len(ry)
    num = sum((a - mx) * (b - my) for a, b in zip(rx, ry))
    den = math.sqrt(sum((a - mx) ** 2 for a in rx) * sum((b - my) ** 2 for b in ry))
    return num / den


def sorted_quantile(vals, q):
    s = sorted(vals)
    pos = q * (len(s) - 1)
    lo = int(math.floor(pos))
    hi = min(lo + 1, len(s) - 1)
    return s[lo] + (s[hi] - s[lo]) * (pos - lo)


# -- roc_auc ------------------------------------------------------------------------

def test_auc_separated_and_errors():
    assert roc_auc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0
    with pytest.raises(ValueError):
        roc_auc([0.1, 0.2], [1, 1])
    with pytest.raises(ValueError):
        roc_auc([0.1, 0.2], [0, 2])


def test_auc_matches_pairwise_oracle_on_50_points():
    rng = np.random.default_rng(0)
    s = np.round(rng.normal(size=50), 1)  # rounding forces ties
    y = rng.integers(0, 2, 50)
    assert abs(roc_auc(s, y) - pairwise_auc(s, y)) <= 1e-12


@given(st.lists(st.integers(-5, 5), min_size=4, max_size=30), st.integers(0, 2**32 - 1))
def test_auc_complement(scores, seed):
    y = np.random.default_rng(seed).integers(0, 2, len(scores))
    if y.min() == y.max():
        y[0] = 1 - y[0]
    assert abs(roc_auc(scores, y) + roc_auc(scores, 1 - y) - 1) <= 1e-12


# -- spearman ------------------------------------------------------------------------

def test_spearman_extremes():
    x = [3.0, 1.0, 2.0, 5.0]
    assert spearman(x, x) == 1.0
    assert spearman(x, [-v for v in x]) == -1.0
    with pytest.raises(UndefinedStatistic):
        spearman([1, 1, 1], [1, 2, 3])
    with pytest.raises(ValueError):
        spearman([1], [1])


def test_spearman_ties_match_rank_oracle():
    rng = np.random.default_rng(1)
    x, y = rng.integers(0, 4, 40), rng.integers(0, 6, 40)
    assert abs(spearman(x, y) - rank_pearson(x, y)) <= 1e-12


@given(st.lists(st.integers(-30, 30), min_size=3, max_size=25), st.integers(0, 9999))
def test_spearman_monotone_invariance(x, seed):
    y = np.random.default_rng(seed).normal(size=len(x))
    x = np.asarray(x, dtype=np.float64)
    if x.min() == x.max():
        return
    # both maps are exactly order-preserving on small integers
    assert spearman(np.exp2(x), y) == spearman(x, y)
    assert spearman(3 * x + 7, y) == spearman(x, y)


# -- ranking -------------------------------------------------------------------------

def test_single_map_ranking():
    t = rank_keypoints([ExplanationMap([0.3, -0.9, 0.1], "shap", "input", 0)])
    assert t.order() == [1, 0, 2]
    assert all(r.q1 == r.median == r.q3 for r in t.rows)
    assert t.rows[0].median == 0.9


def test_dominant_keypoint_ranked_first():
    maps = [ExplanationMap([0.1, 0.2, 0.3, 5.0], "gradcam", "l", 0), ExplanationMap([0.4, 0.0, 0.1, 2.0], "gradcam", "l", 0)]
    assert rank_keypoints(maps).order()[0] == 3


def test_ranking_matches_sort_oracle():
    rng = np.random.default_rng(2)
    maps = [ExplanationMap(rng.normal(size=(2, 6)), "gradcam", "l", 0) for _ in range(50)]
    t = rank_keypoints(maps)
    for r in t.rows:
        col = [abs(m.scores[w, r.keypoint]) for m in maps for w in range(2)]
        assert abs(r.median - sorted_quantile(col, 0.5)) <= 1e-12
        assert abs(r.q1 - sorted_quantile(col, 0.25)) <= 1e-12
        assert abs(r.q3 - sorted_quantile(col, 0.75)) <= 1e-12
        assert r.q1 <= r.median <= r.q3
        lo, hi = r.q1 - 1.5 * r.iqr, r.q3 + 1.5 * r.iqr
        assert sorted(r.outliers) == sorted(c for c in col if c < lo or c > hi)
    meds = [r.median for r in t.rows]
    assert meds == sorted(meds, reverse=True)


def test_ranking_errors():
    with pytest.raises(ValueError):
        rank_keypoints([])
    with pytest.raises(ValueError):
        rank_keypoints([ExplanationMap([1, 2], "g", "l", 0), ExplanationMap([1, 2, 3], "g", "l", 0)])


# -- perturbation ------------------------------------------------------------------------

def test_identity_perturbation():
    m = random_model(seed=1)
    x = random_input(m, n=3)
    p = perturb_model(m, [0, 2], 1.0)
    assert np.array_equal(p.logits(x), m.logits(x))


def test_original_model_untouched():
    m = random_model(seed=2)
    before = [p.copy() for _, p in m.named_parameters()]
    perturb_model(m, [1], 0.0)
    assert all(np.array_equal(a, p) for a, (_, p) in zip(before, m.named_parameters()))


def test_total_annihilation():
    m = random_model(seed=3)
    p = perturb_model(m, range(m.graph.num_keypoints), 0.0)
    _, recs = p.forward(random_input(m), capture=["main.input", "J.input"])
    assert all(not r.activations.any() for r in recs)


def test_single_keypoint_scaling():
    m = random_model(seed=4)
    n = 2
    p = perturb_model(m, [n], 0.0035, ["J.0.gcn"])
    f = np.zeros((2, 4, m.graph.num_keypoints))
    f[:, :, n] = np.random.default_rng(0).normal(size=(2, 4))
    base = graph_conv_forward(f, m.branches["J"][0].gcn, m.adjacency)
    out = graph_conv_forward(f, p.branches["J"][0].gcn, p.adjacency)
    assert np.allclose(out[:, :, n], 0.0035 * base[:, :, n], rtol=1e-13, atol=0)
    others = [v for v in range(m.graph.num_keypoints) if v != n]
    assert np.array_equal(out[:, :, others], base[:, :, others])


def test_perturb_errors():
    m = random_model()
    with pytest.raises(ValueError):
        perturb_model(m, [0], 0.5, [])
    with pytest.raises(ValueError):
        perturb_model(m, [99], 0.5)
    with pytest.raises(ValueError):
        perturb_model(m, [0], 0.5, ["main.7.gcn"])


def test_plan_validation():
    with pytest.raises(ValueError):
        PerturbationPlan([0, 1, 1], k_max=1)
    with pytest.raises(ValueError):
        PerturbationPlan([0, 1, 2], k_max=4)
    with pytest.raises(ValueError):
        PerturbationPlan([0, 1, 2], factor=1.5)
    with pytest.raises(ValueError):
        PerturbationPlan([0, 1, 2], mode="worst")


def test_sweep_anchor_and_single_point():
    m = random_model(seed=5)
    x = random_input(m, n=6)
    y = np.arange(6) % 3
    base = float(np.mean(m.predict(x) == y))
    c0 = perturbation_sweep(m, x, y, PerturbationPlan(list(range(6)), k_max=0))
    assert c0.points == [(0, base)]
    for mode in ("important", "unimportant", "random"):
        c = perturbation_sweep(m, x, y, PerturbationPlan(list(range(6)), mode, 4, trials=3, seed=2))
        assert [k for k, _ in c.points] == [0, 1, 2, 3, 4]
        assert c.value_at(0) == base


def test_random_sweep_reproducible():
    m = random_model(seed=6)
    x = random_input(m, n=6)
    y = np.arange(6) % 3
    plan = PerturbationPlan(list(range(6)), "random", 3, trials=1, seed=4)
    assert perturbation_sweep(m, x, y, plan).points == perturbation_sweep(m, x, y, plan).points


def test_unimportant_selection_is_bottom_of_ranking():
    plan = PerturbationPlan([4, 0, 3, 1, 2], "unimportant", 2)
    assert plan.selections(2) == [[1, 2]]
    assert PerturbationPlan([4, 0, 3, 1, 2], "important", 2).selections(2) == [[4, 0]]


def test_auc_metric_needs_binary():
    m = random_model(seed=7, num_classes=2)
    x = random_input(m, n=6)
    c = perturbation_sweep(m, x, np.array([0, 1] * 3), PerturbationPlan(list(range(6)), k_max=1), metric="auc")
    assert 0 <= c.value_at(0) <= 1
    with pytest.raises(ValueError):
        perturbation_sweep(m, x, np.arange(6) % 3, PerturbationPlan(list(range(6)), k_max=1), metric="auc")


def test_ground_truth_ranking_orders_modes(trained):
    m, xv, yv = trained["model"], trained["xv"], trained["yv"]
    V = m.graph.num_keypoints
    for c, active in enumerate(trained["manifest"].active_keypoints):
        sel = yv == c
        order = ground_truth_ranking(active, V)
        imp = perturbation_sweep(m, xv[sel], yv[sel], PerturbationPlan(order, "important", V))
        uni = perturbation_sweep(m, xv[sel], yv[sel], PerturbationPlan(order, "unimportant", 3))
        for k in range(1, 4):
            assert imp.value_at(k) <= uni.value_at(k)
        assert imp.value_at(V) <= imp.value_at(1)


# -- pgi / pgu ---------------------------------------------------------------------------

def test_pgi_pgu_cases():
    m = random_model(seed=8)
    x = random_input(m)
    order = list(range(m.graph.num_keypoints))
    assert pgi_pgu(m, x, order, 2, 1.0) == (0.0, 0.0)
    a, b = pgi_pgu(m, x, order, m.graph.num_keypoints)
    assert a == b
    with pytest.raises(ValueError):
        pgi_pgu(m, x, order, 0)
    with pytest.raises(ValueError):
        pgi_pgu(m, x, order, m.graph.num_keypoints + 1)


def test_pgi_exceeds_pgu_with_ground_truth(trained):
    m, xv, yv = trained["model"], trained["xv"], trained["yv"]
    gaps = [pgi_pgu(m, x, ground_truth_ranking(trained["manifest"].active_keypoints[c], 11), 3)
            for x, c in zip(xv, yv)]
    assert np.mean([g[0] for g in gaps]) > np.mean([g[1] for g in gaps])


# -- reports ----------------------------------------------------------------------------------

def test_correlation_self_and_branch_sum():
    m = random_model(seed=9)
    x = random_input(m, n=5)
    rep = correlation_report(m, x, m.predict(x), ["main.att", "J.input", "branches.tcn"], "main.att")
    assert rep.rows[0].rho == 1.0
    assert all(r.rho is None or -1 <= r.rho <= 1 for r in rep.rows)


def test_correlation_null_distribution():
    rng = np.random.default_rng(3)
    assert abs(spearman(rng.uniform(size=1000), rng.uniform(size=1000))) < 0.1


def test_runtime_report():
    m = random_model(seed=10)
    x = random_input(m, n=4)
    assert runtime_benchmark(m, x, []).entries == []
    bg = shapley.BackgroundSet(random_input(m, n=4, seed=1), 2)
    rep = runtime_benchmark(m, x, [{"method": "gradcam", "layer": "main.tcn"},
                                   {"method": "shap", "scheme": "stream", "M": 4, "background": bg}])
    assert [e.explainer for e in rep.entries] == ["gradcam", "shap"]
    assert all(e.seconds > 0 and e.samples == 4 for e in rep.entries)
    assert rep.entries[1].config["background_n"] == 4
