"""Cross-layer Grad-CAM correlation and explainer runtime reports."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .. import gradcam, shapley
from ..data.streams import STREAMS
from ..model.network import KINDS, GcnModel
from .stats import UndefinedStatistic, spearman

BRANCH_SUM = "branches"


@dataclass
class CorrelationRow:
    layer_id: str
    rho: float | None  # None when undefined

    @property
    def defined(self) -> bool:
        return self.rho is not None


@dataclass
class CorrelationReport:
    reference: str
    rows: list
    normalized: bool = True

    def to_rows(self):
        header = ["layer", "reference", "rho", "defined"]
        return header, [[r.layer_id, self.reference, "" if r.rho is None else repr(r.rho), str(int(r.defined))]
                        for r in self.rows]


def _normalize_rows(s: np.ndarray) -> np.ndarray:
    peak = s.max(axis=1, keepdims=True)
    return np.divide(s, peak, out=np.zeros_like(s), where=peak > 0)


def layer_scores(model: GcnModel, x, classes, layer_id: str, normalize: bool = True) -> np.ndarray:
    """``[N, V]`` whole-sequence Grad-CAM keypoint scores for one layer.

    ``branches.<kind>`` is the sum of the four input-branch maps at that kind.
    """
    head, _, kind = layer_id.partition(".")
    if head == BRANCH_SUM:
        if kind not in KINDS:
            raise ValueError(f"branch sums exist for {KINDS}, not {kind!r}")
        total = sum(layer_scores(model, x, classes, f"{s}.{kind}", normalize) for s in STREAMS)
        return _normalize_rows(total) if normalize else total
    maps = gradcam.explain_batch(model, x, classes, layer_id, normalize=normalize)
    return np.stack([m.scores[0] for m in maps])


def correlation_report(model: GcnModel, x, classes, layers, reference: str = "main.att",
                       normalize: bool = True) -> CorrelationReport:
    """Spearman correlation of flattened keypoint scores against the reference layer."""
    ref = layer_scores(model, x, classes, reference, normalize).ravel()
    rows = []
    for lid in layers:
        s = ref if lid == reference else layer_scores(model, x, classes, lid, normalize).ravel()
        try:
            rho = spearman(s, ref)
        except UndefinedStatistic:
            rho = None
        rows.append(CorrelationRow(lid, rho))
    return CorrelationReport(reference, rows, normalize)


@dataclass
class RuntimeEntry:
    explainer: str
    seconds: float
    samples: int
    config: dict = field(default_factory=dict)


@dataclass
class RuntimeReport:
    entries: list

    def to_rows(self):
        header = ["explainer", "samples", "seconds", "config"]
        return header, [[e.explainer, str(e.samples), repr(e.seconds),
                         ";".join(f"{k}={v}" for k, v in sorted(e.config.items()))] for e in self.entries]


def _run_explainer(model, x, classes, cfg):
    method = cfg["method"]
    if method == "gradcam":
        gradcam.explain_batch(model, x, classes, cfg.get("layer", "main.tcn"),
                              counterfactual=cfg.get("counterfactual", False))
    elif method == "shap":
        scheme = shapley.make_scheme(cfg.get("scheme", "keypoint"), x.shape[1:])
        bg = cfg["background"]
        for xi, c in zip(x, classes):
            shapley.explain(model, xi, int(c), scheme, bg, cfg.get("estimator", "permutation"),
                            cfg.get("M", 200), cfg.get("seed", 1234))
    else:
        raise ValueError(f"unknown explainer {method!r}")


def runtime_benchmark(model: GcnModel, x, configs, classes=None, warmup: bool = True) -> RuntimeReport:
    """Wall-clock seconds per explainer config over the same samples; one warm-up sample first."""
    x = np.asarray(x)
    if len(x) == 0:
        raise ValueError("empty benchmark split")
    classes = model.predict(x) if classes is None else np.broadcast_to(np.asarray(classes), (len(x),))
    entries = []
    for cfg in configs:
        if warmup:
            _run_explainer(model, x[:1], classes[:1], cfg)
        t0 = time.perf_counter()
        _run_explainer(model, x, classes, cfg)
        seconds = time.perf_counter() - t0
        desc = {k: v for k, v in cfg.items() if k != "background"}
        if "background" in cfg:
            desc["background_n"] = cfg["background"].n
            desc["subsample"] = cfg["background"].subsample_size
        entries.append(RuntimeEntry(cfg["method"], seconds, len(x), desc))
    return RuntimeReport(entries)
