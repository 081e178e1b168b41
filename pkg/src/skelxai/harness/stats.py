"""Rank statistics: ROC AUC, Spearman correlation, and quantile-based keypoint ranking."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from ..explanation import ExplanationMap


class UndefinedStatistic(ValueError):
    """The statistic has no value for this input (e.g. constant ranks)."""


def roc_auc(scores, labels) -> float:
    """Mann-Whitney AUC: P(pos > neg) + P(tie) / 2, via average-rank sums."""
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel()
    if s.shape != y.shape:
        raise ValueError("scores and labels differ in length")
    if not np.all(np.isin(y, (0, 1, False, True))):
        raise ValueError("labels must be binary")
    y = y.astype(bool)
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("roc_auc needs both classes present")
    r = rankdata(s, method="average")
    u = r[y].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def spearman(x, y) -> float:
    """Pearson correlation of average ranks; raises ``UndefinedStatistic`` on constant input."""
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.shape != y.shape or len(x) < 2:
        raise ValueError("spearman needs two equal-length vectors of length >= 2")
    rx = rankdata(x) - (len(x) + 1) / 2.0
    ry = rankdata(y) - (len(y) + 1) / 2.0
    den = math.sqrt(float(rx @ rx) * float(ry @ ry))
    if den == 0:
        raise UndefinedStatistic("zero rank variance")
    return float(np.clip((rx @ ry) / den, -1.0, 1.0))


def quantile(values, q: float) -> float:
    """Linear-interpolation quantile of the sorted sample."""
    return float(np.quantile(np.asarray(values, dtype=np.float64), q, method="linear"))


@dataclass
class KeypointStats:
    keypoint: int
    median: float
    q1: float
    q3: float
    outliers: list = field(default_factory=list)

    @property
    def iqr(self) -> float:
        return self.q3 - self.q1


@dataclass
class RankingTable:
    rows: list  # KeypointStats sorted by descending median

    def order(self) -> list[int]:
        return [r.keypoint for r in self.rows]

    def to_rows(self) -> tuple[list[str], list[list[str]]]:
        header = ["rank", "keypoint", "median", "q1", "q3", "n_outliers"]
        body = [[str(i), str(r.keypoint), repr(r.median), repr(r.q1), repr(r.q3), str(len(r.outliers))]
                for i, r in enumerate(self.rows)]
        return header, body


def rank_keypoints(maps: list[ExplanationMap]) -> RankingTable:
    """Median / quartiles of ``|score|`` per keypoint over every (map, window) row."""
    if not maps:
        raise ValueError("no explanation maps to rank")
    V = maps[0].num_keypoints
    if any(m.num_keypoints != V for m in maps):
        raise ValueError("maps disagree on keypoint count")
    data = np.abs(np.concatenate([m.scores for m in maps], axis=0))  # [rows, V]
    q1, med, q3 = np.quantile(data, [0.25, 0.5, 0.75], axis=0, method="linear")
    rows = []
    for v in range(V):
        lo = q1[v] - 1.5 * (q3[v] - q1[v])
        hi = q3[v] + 1.5 * (q3[v] - q1[v])
        col = data[:, v]
        rows.append(KeypointStats(v, float(med[v]), float(q1[v]), float(q3[v]),
                                  [float(a) for a in col[(col < lo) | (col > hi)]]))
    order = np.argsort(-med, kind="stable")
    return RankingTable([rows[i] for i in order])
