"""Per-keypoint explanation maps shared by both explainers, with CSV/JSON export."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

CSV_COLUMNS = ("sample_id", "method", "layer", "class", "counterfactual", "window", "keypoint", "score")
SHAP_COLUMNS = ("estimator", "M", "background_n", "seed", "scale", "phi0", "fx")


@dataclass
class ExplanationMap:
    """Importance scores ``[W windows, V keypoints]`` plus provenance.

    ``frames`` optionally keeps the full ``[T', V]`` map the scores came from;
    ``labels`` overrides the keypoint column (used for stream-level Shapley players).
    """

    scores: np.ndarray
    method: str
    layer: str
    class_index: int
    sample_id: str = ""
    counterfactual: bool = False
    normalized: bool = False
    windows: list = field(default_factory=list)
    frames: Optional[np.ndarray] = None
    labels: Optional[list] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.scores = np.atleast_2d(np.asarray(self.scores, dtype=np.float64))
        if not self.windows:
            self.windows = [(0, None)] * self.scores.shape[0]

    @property
    def num_keypoints(self) -> int:
        return self.scores.shape[1]

    def keypoint_importance(self) -> np.ndarray:
        """Mean ``|score|`` per keypoint over windows."""
        return np.abs(self.scores).mean(axis=0)

    def ranking(self) -> list[int]:
        """Keypoints by descending importance; ties keep index order."""
        return [int(v) for v in np.argsort(-self.keypoint_importance(), kind="stable")]


def _fmt(x) -> str:
    return repr(float(x))


def to_csv_rows(maps: list[ExplanationMap]) -> tuple[list[str], list[list[str]]]:
    shap = any(m.method == "shap" for m in maps)
    header = list(CSV_COLUMNS) + (list(SHAP_COLUMNS) if shap else [])
    rows = []
    for m in maps:
        extra = [str(m.meta.get(k, "")) if k not in ("phi0", "fx") else
                 (_fmt(m.meta[k]) if k in m.meta else "") for k in SHAP_COLUMNS] if shap else []
        labels = m.labels or list(range(m.num_keypoints))
        for w in range(m.scores.shape[0]):
            for v, lab in enumerate(labels):
                rows.append([m.sample_id, m.method, m.layer, str(m.class_index), str(int(m.counterfactual)),
                             str(w), str(lab), _fmt(m.scores[w, v])] + extra)
    return header, rows


def write_csv(path, maps: list[ExplanationMap], preamble: dict | None = None) -> None:
    """CSV with optional ``# key: value`` preamble lines ahead of the header."""
    header, rows = to_csv_rows(maps)
    write_table(path, header, rows, preamble)


def write_table(path, header, rows, preamble: dict | None = None) -> None:
    buf = io.StringIO()
    for k, v in (preamble or {}).items():
        buf.write(f"# {k}: {v}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(buf.getvalue())


def read_table(path) -> tuple[dict, list[dict]]:
    """Inverse of ``write_table``: ``(preamble, rows as dicts)``."""
    pre, lines = {}, []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.startswith("# ") and not lines:
                k, _, v = line[2:].rstrip("\n").partition(": ")
                pre[k] = v
            else:
                lines.append(line)
    return pre, list(csv.DictReader(lines))


def read_csv(path) -> list[ExplanationMap]:
    """Rebuild keypoint-level maps from an explanation CSV (stream-only rows are skipped)."""
    _, rows = read_table(path)
    groups: dict = {}
    for r in rows:
        try:
            v = int(r["keypoint"])
        except ValueError:
            continue
        key = (r["sample_id"], r["method"], r["layer"], int(r["class"]), r["counterfactual"] == "1")
        groups.setdefault(key, {})[(int(r["window"]), v)] = float(r["score"])
    maps = []
    for (sid, method, layer, c, cf), cells in groups.items():
        W = max(w for w, _ in cells) + 1
        V = max(v for _, v in cells) + 1
        s = np.zeros((W, V))
        for (w, v), val in cells.items():
            s[w, v] = val
        maps.append(ExplanationMap(s, method, layer, c, sid, cf))
    return maps


def to_json(maps: list[ExplanationMap], extra: dict | None = None) -> str:
    out = {"explanations": [], **(extra or {})}
    for m in maps:
        out["explanations"].append({
            "sample_id": m.sample_id,
            "method": m.method,
            "layer": m.layer,
            "class": m.class_index,
            "counterfactual": m.counterfactual,
            "normalized": m.normalized,
            "windows": [[a, b] for a, b in m.windows],
            "scores": m.scores.tolist(),
            "frames": None if m.frames is None else np.asarray(m.frames).tolist(),
            "labels": m.labels,
            "meta": m.meta,
        })
    return json.dumps(out, indent=1, sort_keys=True)
