"""Skeleton sequences and the four derived input streams (J, V, B, A)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph import KeypointGraph

STREAMS = ("J", "V", "B", "A")


class SequenceError(ValueError):
    pass


@dataclass
class SkeletonSequence:
    """Keypoint positions ``[T, V, C]`` in normalized body-length units."""

    positions: np.ndarray
    fps: float
    label: int = 0
    subject_id: str = ""

    def __post_init__(self):
        p = np.asarray(self.positions)
        if p.ndim != 3:
            raise SequenceError(f"positions must be [T, V, C], got shape {p.shape}")
        T, _, C = p.shape
        if T < 2:
            raise SequenceError("a sequence needs at least 2 frames")
        if C not in (2, 3):
            raise SequenceError(f"coordinate count must be 2 or 3, got {C}")
        if not np.all(np.isfinite(p)):
            raise SequenceError("positions contain non-finite values")
        self.positions = p

    @property
    def num_frames(self) -> int:
        return self.positions.shape[0]

    @property
    def num_keypoints(self) -> int:
        return self.positions.shape[1]


@dataclass
class FeatureStreams:
    """Four ``[C, T, V]`` tensors; ``stacked()`` gives the ``[4, C, T, V]`` model input."""

    J: np.ndarray
    V: np.ndarray
    B: np.ndarray
    A: np.ndarray

    def __post_init__(self):
        shapes = {np.shape(getattr(self, s)) for s in STREAMS}
        if len(shapes) != 1:
            raise SequenceError(f"stream shapes differ: {sorted(shapes)}")
        if len(next(iter(shapes))) != 3:
            raise SequenceError("streams must be [C, T, V]")

    def stacked(self) -> np.ndarray:
        return np.stack([getattr(self, s) for s in STREAMS])

    @classmethod
    def from_stacked(cls, x: np.ndarray) -> "FeatureStreams":
        x = np.asarray(x)
        if x.shape[0] != 4:
            raise SequenceError("stacked streams need a leading axis of 4")
        return cls(*x)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.J.shape


def derive_streams(seq: SkeletonSequence, graph: KeypointGraph) -> FeatureStreams:
    """Position, velocity, bone and acceleration streams.

    Velocity and acceleration are forward differences with a zero last frame;
    bones point from the tree parent to the keypoint (zero at the root).
    """
    if seq.num_keypoints != graph.num_keypoints:
        raise SequenceError(
            f"sequence has {seq.num_keypoints} keypoints, graph has {graph.num_keypoints}"
        )
    J = np.transpose(np.asarray(seq.positions, dtype=np.float64), (2, 0, 1))
    vel = np.zeros_like(J)
    vel[:, :-1] = J[:, 1:] - J[:, :-1]
    acc = np.zeros_like(J)
    acc[:, :-1] = vel[:, 1:] - vel[:, :-1]
    bone = J - J[:, :, list(graph.parent)]
    return FeatureStreams(J=J, V=vel, B=bone, A=acc)
