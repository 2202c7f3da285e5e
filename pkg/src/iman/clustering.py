"""Pseudo-label generation from a thresholded cosine-similarity graph.

Samples become nodes; an undirected edge joins i and j when their cosine
similarity strictly exceeds lambda. Connected components with at least
`min_size` members become clusters (dense ids, largest first); everything
else is abandoned, so only high-confidence structure receives labels.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateFeatureError, DimensionError


@dataclass(frozen=True)
class ClusterConfig:
    lam: float = 0.6
    min_size: int = 3

    def __post_init__(self):
        if not -1.0 < self.lam < 1.0:
            raise ValueError("lambda must lie in (-1, 1)")
        if self.min_size < 1:
            raise ValueError("min_size must be >= 1")


@dataclass
class PseudoLabeling:
    """Cluster assignment over a sample set; unassigned indices abandoned."""

    assignment: dict[int, int]
    n_clusters: int
    abandoned: frozenset[int]
    n_samples: int

    def __post_init__(self):
        assigned = set(self.assignment)
        if assigned & self.abandoned:
            raise ValueError("a sample cannot be both assigned and abandoned")
        if assigned | self.abandoned != set(range(self.n_samples)):
            raise ValueError("assignment and abandoned must partition the samples")
        ids = set(self.assignment.values())
        if ids and ids != set(range(self.n_clusters)):
            raise ValueError("cluster ids must be dense 0..n_clusters-1")
        if not ids and self.n_clusters != 0:
            raise ValueError("n_clusters must be 0 when nothing is assigned")

    def label_vector(self) -> np.ndarray:
        """Per-sample cluster id with -1 for abandoned samples."""
        out = np.full(self.n_samples, -1, dtype=np.int64)
        for idx, cid in self.assignment.items():
            out[idx] = cid
        return out

    def save_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(["sample_index", "cluster_id"])
            labels = self.label_vector()
            for idx in range(self.n_samples):
                writer.writerow([idx, labels[idx]])


def cosine_similarity_matrix(features) -> np.ndarray:
    """Symmetric matrix of row-wise cosine similarities, unit diagonal."""
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2:
        raise DimensionError("features must be a 2-D matrix")
    norms = np.linalg.norm(x, axis=1)
    zero = np.flatnonzero(norms == 0.0)
    if zero.size:
        raise DegenerateFeatureError(f"zero-norm feature row {zero[0]}")
    unit = x / norms[:, None]
    sims = unit @ unit.T
    sims = (sims + sims.T) / 2.0
    np.clip(sims, -1.0, 1.0, out=sims)
    np.fill_diagonal(sims, 1.0)
    return sims


def build_graph(sims: np.ndarray, lam: float) -> list[tuple[int, int]]:
    """Undirected edges (i < j) where similarity strictly exceeds lambda."""
    s = np.asarray(sims, dtype=np.float64)
    if s.ndim != 2 or s.shape[0] != s.shape[1]:
        raise DimensionError("similarity matrix must be square")
    if not np.array_equal(s, s.T):
        raise DimensionError("similarity matrix must be symmetric")
    iu, ju = np.triu_indices(s.shape[0], k=1)
    keep = s[iu, ju] > lam
    return list(zip(iu[keep].tolist(), ju[keep].tolist()))


class _UnionFind:
    """Disjoint sets with path compression and union by size."""

    def __init__(self, n: int):
        self.parent = list(range(n))
        self.size = [1] * n

    def find(self, i: int) -> int:
        root = i
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[i] != root:
            self.parent[i], i = root, self.parent[i]
        return root

    def union(self, a: int, b: int) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return
        if self.size[ra] < self.size[rb]:
            ra, rb = rb, ra
        self.parent[rb] = ra
        self.size[ra] += self.size[rb]


def connected_components(
    edges: list[tuple[int, int]], n_nodes: int
) -> list[list[int]]:
    """Partition of nodes into maximal connected groups.

    Components come back sorted by smallest member, members ascending, so
    the result is independent of edge order.
    """
    uf = _UnionFind(n_nodes)
    for a, b in edges:
        if not (0 <= a < n_nodes and 0 <= b < n_nodes):
            raise DimensionError(f"edge ({a}, {b}) outside 0..{n_nodes - 1}")
        uf.union(a, b)
    groups: dict[int, list[int]] = {}
    for node in range(n_nodes):
        groups.setdefault(uf.find(node), []).append(node)
    return sorted((sorted(g) for g in groups.values()), key=lambda g: g[0])


def make_pseudolabels(
    components: list[list[int]], config: ClusterConfig
) -> PseudoLabeling:
    """Keep components of size >= min_size as clusters; abandon the rest.

    Cluster ids are assigned by descending size, ties by smallest member.
    """
    n_samples = sum(len(c) for c in components)
    kept = sorted(
        (c for c in components if len(c) >= config.min_size),
        key=lambda c: (-len(c), min(c)),
    )
    assignment: dict[int, int] = {}
    for cid, comp in enumerate(kept):
        for idx in comp:
            assignment[idx] = cid
    abandoned = frozenset(range(n_samples)) - frozenset(assignment)
    return PseudoLabeling(
        assignment=assignment,
        n_clusters=len(kept),
        abandoned=abandoned,
        n_samples=n_samples,
    )


def cluster_pipeline(features, config: ClusterConfig) -> PseudoLabeling:
    """similarity matrix -> thresholded graph -> components -> filtering."""
    sims = cosine_similarity_matrix(features)
    edges = build_graph(sims, config.lam)
    components = connected_components(edges, sims.shape[0])
    return make_pseudolabels(components, config)


def rand_index(labels_a, labels_b) -> float:
    """Pair-counting agreement between two partitions of the same set.

    Inputs are per-sample group ids (any integers; equal ids = same group).
    """
    a = np.asarray(labels_a)
    b = np.asarray(labels_b)
    if a.shape != b.shape or a.ndim != 1:
        raise DimensionError("partitions must be equal-length vectors")
    n = a.size
    if n < 2:
        return 1.0

    def pair_sum(counts: np.ndarray) -> float:
        return float((counts * (counts - 1) // 2).sum())

    _, inv_a = np.unique(a, return_inverse=True)
    _, inv_b = np.unique(b, return_inverse=True)
    joint = {}
    for ia, ib in zip(inv_a.tolist(), inv_b.tolist()):
        joint[(ia, ib)] = joint.get((ia, ib), 0) + 1
    nij = np.array(list(joint.values()))
    same_a = pair_sum(np.bincount(inv_a))
    same_b = pair_sum(np.bincount(inv_b))
    same_both = pair_sum(nij)
    total = n * (n - 1) / 2
    apart_both = total - same_a - same_b + same_both
    return (same_both + apart_both) / total
