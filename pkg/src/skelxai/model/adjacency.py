"""Partitioned, degree-normalized skeleton adjacency."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..data.graph import KeypointGraph

STRATEGIES = {"uniform": 1, "spatial": 3}


@dataclass(frozen=True)
class NormalizedAdjacency:
    """``partitions[j]`` is the normalized ``A_j`` with shape ``[V, V]``.

    Entry ``[u, w]`` carries signal from source keypoint ``u`` to destination ``w``.
    ``raw`` keeps the unnormalized 0/1 partitions.
    """

    partitions: np.ndarray
    raw: np.ndarray
    strategy: str

    @property
    def num_partitions(self) -> int:
        return self.partitions.shape[0]

    def permuted(self, perm) -> "NormalizedAdjacency":
        p = np.asarray(perm)
        return NormalizedAdjacency(
            self.partitions[:, p][:, :, p], self.raw[:, p][:, :, p], self.strategy
        )


def strategy_for(graph: KeypointGraph) -> str:
    return {1: "uniform", 3: "spatial"}[graph.partition_count]


def partition_adjacency(graph: KeypointGraph, strategy: str) -> np.ndarray:
    """Split ``A + I`` into partitions that sum back to it.

    ``spatial`` follows ST-GCN: partition 0 holds pairs at equal hop distance
    from the root (including self-loops), partition 1 pairs whose source is
    closer to the root than the destination (centripetal), partition 2 the rest.
    """
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown partition strategy {strategy!r}")
    A = graph.adjacency() + np.eye(graph.num_keypoints)
    if strategy == "uniform":
        return A[None]
    hop = graph.hop_distance()
    V = graph.num_keypoints
    parts = np.zeros((3, V, V))
    for u, w in zip(*np.nonzero(A)):
        if hop[u] == hop[w]:
            parts[0, u, w] = A[u, w]
        elif hop[u] < hop[w]:
            parts[1, u, w] = A[u, w]
        else:
            parts[2, u, w] = A[u, w]
    return parts


def normalize_partition(A: np.ndarray) -> np.ndarray:
    """``D_out^{-1/2} A D_in^{-1/2}``; zero-degree rows and columns stay zero.

    For symmetric ``A`` both degrees coincide and this is the usual
    ``Λ^{-1/2} A Λ^{-1/2}``.
    """
    d_out = A.sum(axis=1)
    d_in = A.sum(axis=0)
    with np.errstate(divide="ignore"):
        r = np.where(d_out > 0, 1.0 / np.sqrt(d_out), 0.0)
        c = np.where(d_in > 0, 1.0 / np.sqrt(d_in), 0.0)
    return r[:, None] * A * c[None, :]


def normalize_adjacency(graph: KeypointGraph, strategy: str | None = None) -> NormalizedAdjacency:
    strategy = strategy or strategy_for(graph)
    raw = partition_adjacency(graph, strategy)
    parts = np.stack([normalize_partition(a) for a in raw])
    return NormalizedAdjacency(parts, raw, strategy)
