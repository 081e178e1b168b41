"""Keypoint graphs: the skeleton topology shared by data and model code."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np


class GraphError(ValueError):
    pass


@dataclass(frozen=True)
class KeypointGraph:
    """Undirected skeleton graph with a bone tree rooted at ``root``.

    ``parent[root] == root``. ``trunk`` holds the two keypoints whose distance
    defines the trunk length and ``mid_pelvis`` the centering keypoint; both are
    only needed by the CP preprocessing pipeline.
    """

    num_keypoints: int
    edges: tuple[tuple[int, int], ...]
    parent: tuple[int, ...]
    partition_count: int = 3
    trunk: Optional[tuple[int, int]] = None
    mid_pelvis: Optional[int] = None
    names: tuple[str, ...] = field(default=())

    def __post_init__(self):
        V = self.num_keypoints
        if V < 1:
            raise GraphError("num_keypoints must be positive")
        norm = tuple(sorted({(min(a, b), max(a, b)) for a, b in self.edges}))
        object.__setattr__(self, "edges", norm)
        object.__setattr__(self, "parent", tuple(int(p) for p in self.parent))
        for a, b in norm:
            if not (0 <= a < V and 0 <= b < V):
                raise GraphError(f"edge ({a}, {b}) outside [0, {V})")
            if a == b:
                raise GraphError(f"self-loop edge at keypoint {a}")
        if len(self.parent) != V:
            raise GraphError("parent map must cover every keypoint")
        roots = [v for v, p in enumerate(self.parent) if p == v]
        if len(roots) != 1:
            raise GraphError(f"bone tree needs exactly one root, found {len(roots)}")
        edge_set = set(norm)
        for v, p in enumerate(self.parent):
            if not 0 <= p < V:
                raise GraphError(f"parent of {v} out of range")
            if p != v and (min(v, p), max(v, p)) not in edge_set:
                raise GraphError(f"bone ({v}, {p}) is not an edge")
        # every keypoint must reach the root without revisiting
        for v in range(V):
            seen = set()
            u = v
            while self.parent[u] != u:
                if u in seen:
                    raise GraphError("parent map contains a cycle")
                seen.add(u)
                u = self.parent[u]
        if self.partition_count not in (1, 3):
            raise GraphError("partition_count must be 1 (uniform) or 3 (spatial)")
        if self.trunk is not None:
            object.__setattr__(self, "trunk", tuple(int(t) for t in self.trunk))
            if any(not 0 <= t < V for t in self.trunk):
                raise GraphError("trunk keypoints out of range")
        if self.mid_pelvis is not None and not 0 <= self.mid_pelvis < V:
            raise GraphError("mid_pelvis keypoint out of range")

    @property
    def root(self) -> int:
        return next(v for v, p in enumerate(self.parent) if p == v)

    def adjacency(self) -> np.ndarray:
        V = self.num_keypoints
        A = np.zeros((V, V))
        for a, b in self.edges:
            A[a, b] = A[b, a] = 1.0
        return A

    def hop_distance(self) -> np.ndarray:
        """Graph hop distance of every keypoint from the root (inf if unreachable)."""
        V = self.num_keypoints
        nbrs = [[] for _ in range(V)]
        for a, b in self.edges:
            nbrs[a].append(b)
            nbrs[b].append(a)
        dist = np.full(V, np.inf)
        dist[self.root] = 0
        frontier = [self.root]
        while frontier:
            nxt = []
            for u in frontier:
                for w in nbrs[u]:
                    if dist[w] == np.inf:
                        dist[w] = dist[u] + 1
                        nxt.append(w)
            frontier = nxt
        return dist

    def permuted(self, perm: Sequence[int]) -> "KeypointGraph":
        """Relabel keypoints so that old keypoint ``perm[i]`` becomes ``i``."""
        perm = list(perm)
        inv = {old: new for new, old in enumerate(perm)}
        return KeypointGraph(
            num_keypoints=self.num_keypoints,
            edges=tuple((inv[a], inv[b]) for a, b in self.edges),
            parent=tuple(inv[self.parent[old]] for old in perm),
            partition_count=self.partition_count,
            trunk=None if self.trunk is None else tuple(inv[t] for t in self.trunk),
            mid_pelvis=None if self.mid_pelvis is None else inv[self.mid_pelvis],
            names=tuple(self.names[old] for old in perm) if self.names else (),
        )

    def to_dict(self) -> dict:
        return {
            "num_keypoints": self.num_keypoints,
            "edges": [list(e) for e in self.edges],
            "parent": list(self.parent),
            "partition_count": self.partition_count,
            "trunk": None if self.trunk is None else list(self.trunk),
            "mid_pelvis": self.mid_pelvis,
            "names": list(self.names),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "KeypointGraph":
        return cls(
            num_keypoints=int(d["num_keypoints"]),
            edges=tuple(tuple(e) for e in d["edges"]),
            parent=tuple(d["parent"]),
            partition_count=int(d.get("partition_count", 3)),
            trunk=None if d.get("trunk") is None else tuple(d["trunk"]),
            mid_pelvis=d.get("mid_pelvis"),
            names=tuple(d.get("names", ())),
        )


def synthetic_graph(num_keypoints: int, partition_count: int = 3) -> KeypointGraph:
    """A body-like tree: a pelvis root, a trunk, and limbs hanging off it.

    Keypoint 0 is the mid-pelvis and keypoint 1 the neck, so (0, 1) is the trunk.
    Remaining keypoints are attached round-robin as chains to four limb anchors.
    """
    V = num_keypoints
    if V < 2:
        parent = [0] * V
        return KeypointGraph(V, (), tuple(parent), partition_count)
    parent = [0, 0]
    anchors = [1, 1, 0, 0]  # arms from the neck, legs from the pelvis
    tips = list(anchors)
    for v in range(2, V):
        limb = (v - 2) % 4
        parent.append(tips[limb])
        tips[limb] = v
    edges = tuple((v, p) for v, p in enumerate(parent) if v != p)
    return KeypointGraph(
        V, edges, tuple(parent), partition_count, trunk=(0, 1), mid_pelvis=0
    )


def rest_pose(graph: KeypointGraph, coords: int = 2) -> np.ndarray:
    """Deterministic rest positions [V, coords] with unit trunk length."""
    V = graph.num_keypoints
    pos = np.zeros((V, coords))
    if V == 1:
        return pos
    # limb directions: up-left, up-right, down-left, down-right
    dirs = np.array([[-0.6, 0.8], [0.6, 0.8], [-0.3, -1.0], [0.3, -1.0]])
    pos[1, 1] = 1.0
    for v in range(2, V):
        p = graph.parent[v]
        limb = (v - 2) % 4
        step = dirs[limb] * 0.35
        pos[v, :2] = pos[p, :2] + step
    return pos
