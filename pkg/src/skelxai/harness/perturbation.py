"""Edge-importance perturbation: model surgery, sweeps and prediction-gap metrics."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..explanation import ExplanationMap
from ..model.network import GcnModel
from .stats import roc_auc

DEFAULT_FACTOR = 0.0035
MODES = ("important", "unimportant", "random")
METRICS = ("accuracy", "auc")


def perturb_model(model: GcnModel, keypoints, factor: float = DEFAULT_FACTOR, target_layers=None) -> GcnModel:
    """Copy of ``model`` with ``E_j[n] *= factor`` for every partition ``j`` and ``n`` in ``keypoints``.

    ``target_layers`` holds graph-conv ids such as ``"main.0.gcn"``; ``None`` means all of them.
    """
    V = model.graph.num_keypoints
    keys = sorted({int(k) for k in keypoints})
    if any(not 0 <= k < V for k in keys):
        raise ValueError(f"keypoints must lie in [0, {V})")
    layers = model.graph_conv_layers()
    targets = list(layers) if target_layers is None else list(target_layers)
    if not targets:
        raise ValueError("no target layers given")
    unknown = [t for t in targets if t not in layers]
    if unknown:
        raise ValueError(f"unknown graph-conv layers {unknown}; choose from {list(layers)}")
    out = model.copy()
    out_layers = out.graph_conv_layers()
    for t in targets:
        out_layers[t].edge_importance[:, keys] *= factor
    return out


def _ranking_of(ranking) -> list[int]:
    if isinstance(ranking, ExplanationMap):
        return ranking.ranking()
    return [int(v) for v in ranking]


@dataclass
class PerturbationPlan:
    ranking: list  # keypoints ordered from most to least important
    mode: str = "important"
    k_max: int = 10
    factor: float = DEFAULT_FACTOR
    target_layers: list | None = None
    trials: int = 10
    seed: int = 1234

    def __post_init__(self):
        self.ranking = _ranking_of(self.ranking)
        V = len(self.ranking)
        if sorted(self.ranking) != list(range(V)):
            raise ValueError("ranking must be a permutation of all keypoints")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if not 0 <= self.k_max <= V:
            raise ValueError(f"k_max must lie in [0, {V}]")
        if not 0.0 <= self.factor <= 1.0:
            raise ValueError("factor must lie in [0, 1]")
        if self.trials < 1:
            raise ValueError("trials must be positive")

    def selections(self, k: int) -> list[list[int]]:
        """Keypoint sets perturbed at step ``k`` (several for random mode)."""
        if self.mode == "important":
            return [self.ranking[:k]]
        if self.mode == "unimportant":
            return [self.ranking[len(self.ranking) - k:]] if k else [[]]
        V = len(self.ranking)
        return [sorted(np.random.default_rng([self.seed, k, t]).choice(V, size=k, replace=False).tolist())
                for t in range(self.trials)]


@dataclass
class PerturbationCurve:
    points: list  # (k, value)
    metric: str
    mode: str
    provenance: dict = field(default_factory=dict)

    def value_at(self, k: int) -> float:
        for kk, v in self.points:
            if kk == k:
                return v
        raise KeyError(k)

    def to_rows(self) -> tuple[list[str], list[list[str]]]:
        header = ["mode", "metric", "k", "value"]
        return header, [[self.mode, self.metric, str(k), repr(float(v))] for k, v in self.points]


def evaluate_metric(model: GcnModel, x, y, metric: str = "accuracy") -> float:
    if metric not in METRICS:
        raise ValueError(f"metric must be one of {METRICS}")
    y = np.asarray(y)
    z = model.logits(x)
    if metric == "accuracy":
        return float(np.mean(np.argmax(z, axis=1) == y))
    if model.num_classes != 2 or not np.all(np.isin(y, (0, 1))):
        raise ValueError("auc needs a binary task")
    return roc_auc(z[:, 1] - z[:, 0], y)


def perturbation_sweep(model: GcnModel, x, y, plan: PerturbationPlan, metric: str = "accuracy",
                       provenance: dict | None = None) -> PerturbationCurve:
    """Metric after perturbing ``k = 0..k_max`` keypoints chosen by the plan's mode."""
    if len(x) == 0:
        raise ValueError("empty evaluation split")
    if len(plan.ranking) != model.graph.num_keypoints:
        raise ValueError("ranking does not cover the model's keypoints")
    if metric == "auc" and not np.all(np.isin(np.asarray(y), (0, 1))):
        raise ValueError("auc needs binary labels")
    points = [(0, evaluate_metric(model, x, y, metric))]
    for k in range(1, plan.k_max + 1):
        vals = [evaluate_metric(perturb_model(model, sel, plan.factor, plan.target_layers), x, y, metric)
                for sel in plan.selections(k)]
        points.append((k, float(sum(vals) / len(vals))))
    prov = {"factor": plan.factor, "trials": plan.trials if plan.mode == "random" else 1, "seed": plan.seed}
    prov.update(provenance or {})
    return PerturbationCurve(points, metric, plan.mode, prov)


def pgi_pgu(model: GcnModel, x, explanation, k: int, factor: float = DEFAULT_FACTOR,
            target_layers=None) -> tuple[float, float]:
    """Logit gap of the predicted class after perturbing the top-k vs the bottom-k keypoints."""
    ranking = _ranking_of(explanation)
    V = model.graph.num_keypoints
    if len(ranking) != V:
        raise ValueError("explanation does not cover the model's keypoints")
    if k < 1:
        raise ValueError("k must be at least 1")
    if k > V:
        raise ValueError(f"k = {k} exceeds the {V} keypoints")
    z = model.logits(x)
    c = int(np.argmax(z))
    top = perturb_model(model, ranking[:k], factor, target_layers).logits(x)[c]
    bottom = perturb_model(model, ranking[V - k:], factor, target_layers).logits(x)[c]
    return float(abs(z[c] - top)), float(abs(z[c] - bottom))
