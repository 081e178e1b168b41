"""Grad-CAM and counterfactual Grad-CAM over captured skeleton feature maps."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .explanation import ExplanationMap
from .model.network import CaptureRecord, GcnModel


@dataclass
class NeuronWeights:
    alpha: np.ndarray  # [K]
    class_index: int | None
    sign: int


@dataclass
class CamMap:
    values: np.ndarray  # [T', V], non-negative
    layer_id: str
    class_index: int | None
    counterfactual: bool = False
    normalized: bool = False
    degenerate: bool = False


def _check_sign(sign):
    if sign not in (1, -1):
        raise ValueError("sign must be +1 or -1")


def neuron_weights(record: CaptureRecord, sign: int = 1) -> NeuronWeights:
    """Gradients averaged over every (frame, keypoint) node of each channel."""
    _check_sign(sign)
    g = record.gradients
    if g is None or g.size == 0:
        raise ValueError("capture record has no gradients")
    K = g.shape[0]
    alpha = sign * g.reshape(K, -1).mean(axis=1)
    return NeuronWeights(alpha, record.class_index, sign)


def cam(record: CaptureRecord, sign: int = 1) -> CamMap:
    w = neuron_weights(record, sign)
    A = record.activations
    if A.shape[0] != w.alpha.shape[0]:
        raise ValueError(f"{w.alpha.shape[0]} weights for {A.shape[0]} feature maps")
    values = np.maximum(np.tensordot(w.alpha, A, axes=1), 0.0)
    return CamMap(values, record.layer_id, record.class_index, counterfactual=sign == -1)


def normalize_cam(m: CamMap) -> CamMap:
    """Scale to max 1; an all-zero map stays zero and is flagged degenerate."""
    if m.normalized:
        raise ValueError("map is already normalized")
    peak = m.values.max() if m.values.size else 0.0
    if peak <= 0:
        return replace(m, values=np.zeros_like(m.values), normalized=True, degenerate=True)
    return replace(m, values=m.values / peak, normalized=True)


def window_bounds(num_frames: int, size: int | None = None, stride: int | None = None) -> list[tuple[int, int]]:
    """``[(start, stop)]`` windows; ``size=None`` is one window spanning all frames."""
    if size is None:
        return [(0, num_frames)]
    stride = stride or size
    if size > num_frames or size < 1 or stride < 1:
        raise ValueError(f"window of {size} frames does not fit {num_frames} frames")
    return [(s, s + size) for s in range(0, num_frames - size + 1, stride)]


def cam_to_keypoint_scores(m: CamMap, windows=None, sample_id: str = "") -> ExplanationMap:
    """Temporal mean of the map within each window, per keypoint."""
    T = m.values.shape[0]
    windows = windows if windows is not None else window_bounds(T)
    scores = []
    for a, b in windows:
        if a < 0 or b > T or b <= a:
            raise ValueError(f"window ({a}, {b}) exceeds the {T}-frame map")
        scores.append(m.values[a:b].mean(axis=0))
    return ExplanationMap(
        np.array(scores), "gradcam", m.layer_id, -1 if m.class_index is None else m.class_index,
        sample_id, m.counterfactual, m.normalized, list(windows), frames=m.values,
        meta={"degenerate": m.degenerate},
    )


def explain_batch(model: GcnModel, x, classes, layer_id: str, counterfactual: bool = False,
                  normalize: bool = True, windows=None, sample_ids=None) -> list[ExplanationMap]:
    """Grad-CAM keypoint maps for a batch ``x [N, 4, C, T, V]``, one class per sample."""
    x = np.asarray(x)
    (acts, grads), = model.gradients_at(x, classes, [layer_id]).values()
    classes = np.broadcast_to(np.asarray(classes), (len(x),))
    out = []
    for i in range(len(x)):
        rec = CaptureRecord(layer_id, acts[i], grads[i], int(classes[i]))
        m = cam(rec, -1 if counterfactual else 1)
        peak = float(m.values.max())
        if normalize:
            m = normalize_cam(m)
        sid = sample_ids[i] if sample_ids is not None else str(i)
        em = cam_to_keypoint_scores(m, windows, sid)
        em.meta["raw_peak"] = peak  # raw map = normalized map * raw_peak
        out.append(em)
    return out
