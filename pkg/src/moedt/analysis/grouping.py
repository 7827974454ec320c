"""Task grouping: random equal split and k-means over agreement vectors."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import rng as _rng
from ..errors import GroupingError
from .gradients import AgreementVector


@dataclass
class GroupAssignment:
    """A total partition of task ids into nonempty groups."""

    assignment: dict[int, int]  # task_id -> group index
    n_groups: int
    method: str  # "random" | "kmeans"

    def __post_init__(self):
        if not self.assignment:
            raise GroupingError("empty assignment")
        got = {int(g) for g in self.assignment.values()}
        want = set(range(self.n_groups))
        if got != want:
            raise GroupingError(f"groups {sorted(got)} do not cover 0..{self.n_groups - 1}")

    def group_of(self, task_id: int) -> int:
        return self.assignment[task_id]

    def tasks_in(self, group: int) -> list[int]:
        return sorted(t for t, g in self.assignment.items() if g == group)

    def __getitem__(self, task_id: int) -> int:
        return self.assignment[task_id]

    def to_json(self) -> dict:
        return {"method": self.method, "n_groups": self.n_groups,
                "assignment": {str(t): int(g) for t, g in sorted(self.assignment.items())}}

    @classmethod
    def from_json(cls, obj: dict) -> "GroupAssignment":
        return cls(assignment={int(t): int(g) for t, g in obj["assignment"].items()},
                   n_groups=int(obj["n_groups"]), method=obj["method"])


def random_grouping(task_ids, n_groups: int, seed: int) -> GroupAssignment:
    """Seeded shuffle split into groups whose sizes differ by at most one."""
    task_ids = sorted(task_ids)
    if n_groups < 1 or n_groups > len(task_ids):
        raise GroupingError(f"n_groups {n_groups} outside [1, {len(task_ids)}]")
    gen = _rng.stream(_rng.GROUPING, seed, 0)
    order = [task_ids[i] for i in gen.permutation(len(task_ids))]
    assignment = {tid: i % n_groups for i, tid in enumerate(order)}
    return GroupAssignment(assignment, n_groups, "random")


def _pairwise_sq(points: np.ndarray, centers: np.ndarray) -> np.ndarray:
    diff = points[:, None, :] - centers[None, :, :]
    return (diff * diff).sum(axis=-1)


def _plusplus_seed(points: np.ndarray, k: int, gen: np.random.Generator) -> np.ndarray:
    n = len(points)
    idx = min(int(gen.random() * n), n - 1)
    centers = [points[idx]]
    for _ in range(k - 1):
        d2 = _pairwise_sq(points, np.asarray(centers)).min(axis=1)
        total = d2.sum()
        if total <= 0.0:  # all remaining points coincide with a center
            idx = min(int(gen.random() * n), n - 1)
        else:
            cum = np.cumsum(d2 / total)
            idx = int(np.searchsorted(cum, gen.random(), side="right"))
            idx = min(idx, n - 1)
        centers.append(points[idx])
    return np.asarray(centers)


def lloyd_kmeans(points: np.ndarray, k: int, seed: int, max_iters: int = 100):
    """Lloyd's algorithm with k-means++ seeding.

    Returns (labels, centers, objective_history). Ties in assignment go to
    the lower center index; empty clusters are repaired by moving in the
    point farthest from its current centroid (among clusters that can spare
    one). The recorded objective (within-cluster sum of squares after each
    centroid update) is non-increasing across iterations absent repairs.
    """
    points = np.asarray(points, np.float64)
    if points.ndim != 2:
        raise GroupingError("points must be [n, d]")
    n = len(points)
    if not 1 <= k <= n:
        raise GroupingError(f"k {k} outside [1, {n}]")
    if not np.all(np.isfinite(points)):
        raise GroupingError("non-finite agreement vectors")
    gen = _rng.stream(_rng.GROUPING, seed, 1)
    centers = _plusplus_seed(points, k, gen)
    labels_prev = None
    history = []
    for _ in range(max_iters):
        d2 = _pairwise_sq(points, centers)
        labels = d2.argmin(axis=1)  # argmin takes the lowest index on ties
        for g in range(k):
            if np.any(labels == g):
                continue
            sizes = np.bincount(labels, minlength=k)
            movable = np.flatnonzero(sizes[labels] >= 2)
            far = movable[np.argmax(d2[movable, labels[movable]])]
            labels[far] = g
        if labels_prev is not None and np.array_equal(labels, labels_prev):
            break
        centers = np.stack([points[labels == g].mean(axis=0) for g in range(k)])
        history.append(float(_pairwise_sq(points, centers)[np.arange(n), labels].sum()))
        labels_prev = labels
    return labels, centers, history


def kmeans_grouping(vectors: list[AgreementVector], k: int, seed: int,
                    max_iters: int = 100) -> GroupAssignment:
    if not vectors:
        raise GroupingError("no agreement vectors")
    task_ids = [v.task_id for v in vectors]
    points = np.stack([v.values for v in vectors])
    labels, _, _ = lloyd_kmeans(points, k, seed, max_iters)
    # relabel groups by first appearance so output ids are deterministic
    remap, next_id = {}, 0
    assignment = {}
    for tid, lab in zip(task_ids, labels):
        lab = int(lab)
        if lab not in remap:
            remap[lab] = next_id
            next_id += 1
        assignment[tid] = remap[lab]
    return GroupAssignment(assignment, k, "kmeans")


def adjusted_rand_index(labels_a, labels_b) -> float:
    """Chance-corrected partition agreement in [-1, 1]; 1 iff identical."""
    a = np.asarray(labels_a)
    b = np.asarray(labels_b)
    if a.shape != b.shape or a.ndim != 1:
        raise GroupingError("label arrays must be 1-D and equal length")
    n = len(a)
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    table = np.zeros((ai.max() + 1, bi.max() + 1), np.int64)
    np.add.at(table, (ai, bi), 1)

    def comb2(x):
        x = np.asarray(x, np.float64)
        return (x * (x - 1.0)) / 2.0

    index = comb2(table).sum()
    sum_a = comb2(table.sum(axis=1)).sum()
    sum_b = comb2(table.sum(axis=0)).sum()
    expected = sum_a * sum_b / comb2(n)
    max_index = 0.5 * (sum_a + sum_b)
    if max_index == expected:  # both partitions trivial
        return 1.0
    return float((index - expected) / (max_index - expected))
