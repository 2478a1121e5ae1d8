"""Agglomerative clustering with Ward's criterion and dendrogram reports.

The merge cost of clusters A and B is
``|A||B| / (|A|+|B|) * ||centroid(A) - centroid(B)||^2``, the increase in
total within-cluster variance caused by merging them. At every step the
minimum-cost pair merges; ties resolve to the lexicographically smallest
(cluster index, cluster index) pair. Leaves are 0..N-1 and merge k creates
cluster N+k, so the merge list doubles as a linkage table.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import DomainError, InputError


@dataclass
class Dendrogram:
    merges: List[Tuple[int, int, float, int]]  # (a, b, height, new_size)
    labels: List[str]

    @property
    def n_leaves(self) -> int:
        return len(self.labels)

    def heights(self) -> List[float]:
        return [m[2] for m in self.merges]

    def to_json(self) -> dict:
        return {
            "labels": list(self.labels),
            "merges": [[a, b, h, s] for a, b, h, s in self.merges],
        }

    def save_json(self, path: str) -> None:
        with open(path, "w") as f:
            json.dump(self.to_json(), f, indent=2)

    def to_dot(self) -> str:
        """Graphviz description: leaves plus one node per merge."""
        lines = ["graph dendrogram {", "  node [shape=box];"]
        for i, label in enumerate(self.labels):
            lines.append(f'  n{i} [label="{label}"];')
        n = self.n_leaves
        for k, (a, b, h, size) in enumerate(self.merges):
            nid = n + k
            lines.append(f'  n{nid} [label="h={h:.4g} (n={size})" shape=ellipse];')
            lines.append(f"  n{nid} -- n{a};")
            lines.append(f"  n{nid} -- n{b};")
        lines.append("}")
        return "\n".join(lines)

    def save_dot(self, path: str) -> None:
        with open(path, "w") as f:
            f.write(self.to_dot())

    def group_merge_height(self, member_indexes: Sequence[int]) -> float:
        """Height of the merge that first unites all the given leaves."""
        members = set(int(i) for i in member_indexes)
        if len(members) < 2:
            return 0.0
        cluster_members: Dict[int, set] = {i: {i} for i in range(self.n_leaves)}
        n = self.n_leaves
        for k, (a, b, h, _) in enumerate(self.merges):
            merged = cluster_members.pop(a) | cluster_members.pop(b)
            cluster_members[n + k] = merged
            if members <= merged:
                return h
        raise InputError(f"leaf indexes {sorted(members)} out of range")


def _ward_cost(size_a: float, size_b: float, cent_a: np.ndarray,
               cent_b: np.ndarray) -> float:
    diff = cent_a - cent_b
    return float(size_a * size_b / (size_a + size_b) * np.dot(diff, diff))


def ward_cluster(embeddings: np.ndarray,
                 labels: Optional[Sequence[str]] = None) -> Dendrogram:
    """Full agglomeration of N >= 2 vectors; heights are merge costs."""
    x = np.asarray(embeddings, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise DomainError(f"need an (N >= 2, d) matrix, got shape {x.shape}")
    if not np.isfinite(x).all():
        raise DomainError("embeddings contain non-finite values")
    n = x.shape[0]
    labels = list(labels) if labels is not None else [str(i) for i in range(n)]
    if len(labels) != n:
        raise InputError(f"{len(labels)} labels for {n} vectors")

    centroids: Dict[int, np.ndarray] = {i: x[i].copy() for i in range(n)}
    sizes: Dict[int, float] = {i: 1.0 for i in range(n)}
    active = sorted(centroids)
    merges: List[Tuple[int, int, float, int]] = []
    next_id = n
    prev_height = -np.inf
    for _ in range(n - 1):
        best = None
        for ia in range(len(active)):
            for ib in range(ia + 1, len(active)):
                a, b = active[ia], active[ib]
                cost = _ward_cost(sizes[a], sizes[b], centroids[a], centroids[b])
                key = (cost, a, b)
                if best is None or key < best:
                    best = key
        cost, a, b = best
        new_size = sizes[a] + sizes[b]
        centroids[next_id] = (sizes[a] * centroids[a] + sizes[b] * centroids[b]) / new_size
        sizes[next_id] = new_size
        merges.append((a, b, cost, int(new_size)))
        assert cost >= prev_height - 1e-12, "Ward merge heights must not decrease"
        prev_height = cost
        active.remove(a)
        active.remove(b)
        active.append(next_id)
        active.sort()
        next_id += 1
    return Dendrogram(merges, labels)


def mean_pairwise_distance(embeddings: np.ndarray) -> float:
    x = np.asarray(embeddings, dtype=np.float64)
    n = x.shape[0]
    if n < 2:
        return 0.0
    sq = ((x[:, None, :] - x[None, :, :]) ** 2).sum(-1)
    iu = np.triu_indices(n, 1)
    return float(np.sqrt(sq[iu]).mean())


def compare_embeddings(before: np.ndarray, after: np.ndarray,
                       labels: Sequence[str],
                       related_groups: Optional[Sequence[Sequence[str]]] = None,
                       normalize: bool = True) -> dict:
    """Dendrograms plus summary statistics for two embedding snapshots.

    For each related label group the report states whether its members
    merge at a lower height after tuning; that claim is measured, never
    assumed.
    """
    before = np.asarray(before, dtype=np.float64)
    after = np.asarray(after, dtype=np.float64)
    labels = list(labels)
    if before.shape != after.shape or before.shape[0] != len(labels):
        raise InputError(
            f"mismatched inputs: before {before.shape}, after {after.shape}, "
            f"{len(labels)} labels")
    if normalize:
        before = before / np.linalg.norm(before, axis=1, keepdims=True)
        after = after / np.linalg.norm(after, axis=1, keepdims=True)

    dg_before = ward_cluster(before, labels)
    dg_after = ward_cluster(after, labels)
    report = {
        "labels": labels,
        "normalized": normalize,
        "mean_pairwise_distance": {
            "before": mean_pairwise_distance(before),
            "after": mean_pairwise_distance(after),
        },
        "before": dg_before.to_json(),
        "after": dg_after.to_json(),
        "groups": [],
    }
    for group in related_groups or []:
        try:
            idx = [labels.index(g) for g in group]
        except ValueError as e:
            raise InputError(f"unknown label in related group {list(group)}: {e}")
        hb = dg_before.group_merge_height(idx)
        ha = dg_after.group_merge_height(idx)
        report["groups"].append({
            "labels": list(group),
            "height_before": hb,
            "height_after": ha,
            "merged_earlier_after": bool(ha < hb),
        })
    return report
