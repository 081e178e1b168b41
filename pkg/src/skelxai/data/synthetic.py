"""Synthetic labeled skeleton datasets with known important keypoints.

Each class drives a disjoint set of "active" keypoints along sinusoids with a
class-specific frequency and phase; every keypoint also receives white noise.
The active sets are written to the manifest as ground-truth importance.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from .graph import rest_pose, synthetic_graph
from .storage import DatasetManifest, ManifestEntry
from .streams import SkeletonSequence


@dataclass(frozen=True)
class SyntheticConfig:
    num_classes: int = 3
    per_class: int = 40
    V: int = 11
    T: int = 32
    fps: float = 30.0
    noise_scale: float = 0.02
    coords: int = 2
    active_per_class: Optional[int] = None
    amplitude: float = 0.15
    val_fraction: float = 0.3
    partition_count: int = 3

    def validate(self) -> None:
        if self.num_classes < 2:
            raise ValueError("num_classes must be at least 2")
        if self.per_class < 1:
            raise ValueError("per_class must be positive")
        if self.V < 4:
            raise ValueError("V must be at least 4")
        if self.T < 2:
            raise ValueError("T must be at least 2")
        if self.fps <= 0 or self.noise_scale < 0:
            raise ValueError("fps must be positive and noise_scale non-negative")
        if self.coords not in (2, 3):
            raise ValueError("coords must be 2 or 3")
        if self.n_active * self.num_classes > self.V:
            raise ValueError("active keypoint sets do not fit into V keypoints")

    @property
    def n_active(self) -> int:
        if self.active_per_class is not None:
            return self.active_per_class
        return max(1, min(3, self.V // self.num_classes))


def class_active_sets(config: SyntheticConfig, seed: int) -> list[list[int]]:
    rng = np.random.default_rng([seed, 0xAC7])
    order = rng.permutation(config.V)
    k = config.n_active
    return [sorted(int(v) for v in order[c * k:(c + 1) * k]) for c in range(config.num_classes)]


def _class_motion(config: SyntheticConfig, seed: int, c: int, active: list[int]) -> np.ndarray:
    """Noise-free displacement ``[T, V, C]`` shared by every sample of class ``c``."""
    rng = np.random.default_rng([seed, 0xC1A, c])
    freq = 1.0 + 0.75 * c  # Hz, distinct per class
    phase = rng.uniform(0, 2 * np.pi)
    t = np.arange(config.T) / config.fps
    disp = np.zeros((config.T, config.V, config.coords))
    for i, v in enumerate(active):
        kp_phase = phase + 0.5 * i
        for d in range(config.coords):
            disp[:, v, d] = config.amplitude * np.sin(2 * np.pi * freq * t + kp_phase + d * np.pi / 2)
    return disp


def generate_synthetic_dataset(
    config: SyntheticConfig, seed: int
) -> tuple[DatasetManifest, list[SkeletonSequence]]:
    """Pure function of ``(config, seed)``; positions are stored as float32."""
    config.validate()
    graph = synthetic_graph(config.V, config.partition_count)
    active = class_active_sets(config, seed)
    base = rest_pose(graph, config.coords)
    n_train = int(round((1 - config.val_fraction) * config.per_class))
    entries, seqs = [], []
    for c in range(config.num_classes):
        motion = base[None] + _class_motion(config, seed, c, active[c])
        split_rng = np.random.default_rng([seed, 0x5B1, c])
        val_idx = set(split_rng.permutation(config.per_class)[n_train:].tolist())
        for i in range(config.per_class):
            rng = np.random.default_rng([seed, c, i])
            noise = rng.standard_normal(motion.shape) * config.noise_scale
            pos = (motion + noise).astype(np.float32)
            sid = f"c{c}_s{i:04d}"
            seqs.append(SkeletonSequence(pos, config.fps, c, sid))
            entries.append(ManifestEntry(f"{sid}.xgs", c, sid, "val" if i in val_idx else "train"))
    manifest = DatasetManifest(
        entries=entries,
        graph=graph,
        seed=seed,
        active_keypoints=active,
        config={"synthetic": asdict(config)},
    )
    return manifest, seqs


def ground_truth_ranking(active: list[int], num_keypoints: int) -> list[int]:
    """Active keypoints first (in index order), then the rest."""
    rest = [v for v in range(num_keypoints) if v not in set(active)]
    return list(active) + rest


__all__ = [
    "SyntheticConfig",
    "class_active_sets",
    "generate_synthetic_dataset",
    "ground_truth_ranking",
]
