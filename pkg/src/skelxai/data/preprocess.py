"""CP-style preprocessing: resample, filter, normalize, window."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import median_filter

from .graph import KeypointGraph
from .streams import FeatureStreams, SequenceError, SkeletonSequence, derive_streams

log = logging.getLogger(__name__)

TARGET_FPS = 30.0
WINDOW_SECONDS = 5.0
STRIDE_SECONDS = 2.5
MEDIAN_KERNEL = 5


@dataclass
class WindowSet:
    windows: list[FeatureStreams]
    stride_frames: int
    source: str
    labels: list[int]
    window_frames: int = int(TARGET_FPS * WINDOW_SECONDS)
    diagnostic: str = ""
    starts: list[int] = field(default_factory=list)

    def __len__(self):
        return len(self.windows)

    def stacked(self) -> np.ndarray:
        """``[W, 4, C, T_w, V]`` model input for all windows."""
        return np.stack([w.stacked() for w in self.windows])


def resample_linear(positions: np.ndarray, fps: float, target_fps: float = TARGET_FPS) -> np.ndarray:
    """Linearly interpolate ``[T, V, C]`` onto a uniform ``target_fps`` grid.

    The grid starts at the first frame and stops at the last sample time
    that does not exceed the source duration.
    """
    if fps <= 0:
        raise SequenceError("fps must be positive")
    T = positions.shape[0]
    duration = (T - 1) / fps
    n_out = int(math.floor(duration * target_fps + 1e-9)) + 1
    t_src = np.arange(T) / fps
    t_out = np.arange(n_out) / target_fps
    flat = positions.reshape(T, -1)
    out = np.empty((n_out, flat.shape[1]))
    for j in range(flat.shape[1]):
        out[:, j] = np.interp(t_out, t_src, flat[:, j])
    return out.reshape((n_out,) + positions.shape[1:])


def trunk_normalize(positions: np.ndarray, graph: KeypointGraph) -> np.ndarray:
    """Center at the median mid-pelvis and divide by twice the median trunk length."""
    if graph.trunk is None or graph.mid_pelvis is None:
        raise SequenceError("graph lacks trunk / mid-pelvis designations")
    a, b = graph.trunk
    trunk = np.median(np.linalg.norm(positions[:, a] - positions[:, b], axis=-1))
    if not trunk > 0:
        raise SequenceError("trunk length is zero")
    center = np.median(positions[:, graph.mid_pelvis], axis=0)
    return (positions - center) / (2.0 * trunk)


def window_starts(num_frames: int, window: int, stride: int) -> list[int]:
    if num_frames < window:
        return []
    return list(range(0, num_frames - window + 1, stride))


def preprocess_cp(seq: SkeletonSequence, graph: KeypointGraph) -> WindowSet:
    """Resample to 30 Hz, median filter, trunk-normalize, then cut 5 s windows at 2.5 s stride."""
    if seq.num_keypoints != graph.num_keypoints:
        raise SequenceError("sequence and graph disagree on keypoint count")
    window = int(TARGET_FPS * WINDOW_SECONDS)
    stride = int(TARGET_FPS * STRIDE_SECONDS)
    pos = resample_linear(np.asarray(seq.positions, dtype=np.float64), seq.fps)
    if pos.shape[0] < window:
        msg = f"resampled length {pos.shape[0]} < {window} frames; no windows"
        log.warning("%s (subject %s)", msg, seq.subject_id)
        return WindowSet([], stride, seq.subject_id, [], window, diagnostic=msg)
    pos = median_filter(pos, size=(MEDIAN_KERNEL, 1, 1), mode="nearest")
    pos = trunk_normalize(pos, graph)
    starts = window_starts(pos.shape[0], window, stride)
    windows = []
    for s in starts:
        sub = SkeletonSequence(pos[s:s + window], TARGET_FPS, seq.label, seq.subject_id)
        windows.append(derive_streams(sub, graph))
    return WindowSet(windows, stride, seq.subject_id, [seq.label] * len(windows), window, starts=starts)
