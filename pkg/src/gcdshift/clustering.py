"""Semi-supervised k-means, a Hungarian assignment solver, and the
permutation-matched clustering accuracy used to score discovered categories."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = ["ClusterResult", "AccReport", "ss_kmeans", "hungarian", "cluster_acc"]


@dataclass
class ClusterResult:
    assignments: np.ndarray        # (N,) int cluster index per point
    centroids: np.ndarray          # (k, d)
    inertia: float                 # sum of squared distances to assigned centroid
    iterations: int
    inertia_history: list = field(default_factory=list)


@dataclass
class AccReport:
    acc_all: float
    acc_old: float
    acc_new: float
    permutation: dict              # cluster index -> class index


def _pairwise_sq(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    # (N, k) squared Euclidean distances
    diff = points[:, None, :] - centroids[None, :, :]
    return np.einsum("nkd,nkd->nk", diff, diff)


def ss_kmeans(points, k: int, forced: dict[int, int] | None = None,
              max_iter: int = 100, tol: float = 1e-6, seed: int = 0) -> ClusterResult:
    """Lloyd iterations with some points pinned to fixed clusters.

    Forced assignments never change.  Clusters holding forced members start at
    the mean of those members; the rest start greedy farthest-point among free
    points (the first pick is random under ``seed`` when no cluster is forced).
    An emptied cluster is re-seeded at the free point farthest from its
    current centroid.  Ties always resolve to the lowest index.
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2:
        raise ValueError(f"points must be 2-d, got shape {points.shape}")
    n, d = points.shape
    if not (1 <= k <= n):
        raise ValueError(f"k={k} out of range for {n} points")
    forced = dict(forced or {})
    for i, c in forced.items():
        if not (0 <= i < n):
            raise ValueError(f"forced point index {i} out of range")
        if not (0 <= c < k):
            raise ValueError(f"forced cluster {c} out of range for k={k}")

    rng = np.random.default_rng(seed)
    forced_idx = np.fromiter(forced.keys(), dtype=np.int64) if forced else np.empty(0, np.int64)
    forced_lab = np.fromiter(forced.values(), dtype=np.int64) if forced else np.empty(0, np.int64)
    free_mask = np.ones(n, dtype=bool)
    free_mask[forced_idx] = False
    free_idx = np.flatnonzero(free_mask)

    # -- init ---------------------------------------------------------------
    centroids = np.zeros((k, d))
    have = np.zeros(k, dtype=bool)
    for c in range(k):
        members = forced_idx[forced_lab == c]
        if members.size:
            centroids[c] = points[members].mean(axis=0)
            have[c] = True
    pool = free_idx if free_idx.size else np.arange(n)
    for c in range(k):
        if have[c]:
            continue
        if not have.any():
            pick = int(rng.integers(pool.size))  # nothing to be far from yet
        else:
            dist = _pairwise_sq(points[pool], centroids[have]).min(axis=1)
            pick = int(np.argmax(dist))  # argmax -> lowest index on ties
        centroids[c] = points[pool[pick]]
        have[c] = True

    assignments = np.zeros(n, dtype=np.int64)
    assignments[forced_idx] = forced_lab
    history: list[float] = []
    iterations = 0
    for _ in range(max_iter):
        iterations += 1
        # assignment step (free points only; ties -> lowest cluster index)
        if free_idx.size:
            assignments[free_idx] = np.argmin(_pairwise_sq(points[free_idx], centroids), axis=1)

        # re-seed empty clusters at the free point farthest from its centroid;
        # a zero farthest distance means every point already sits on a
        # centroid, where moving one would be arbitrary, so the cluster may
        # stay empty
        counts = np.bincount(assignments, minlength=k)
        for c in np.flatnonzero(counts == 0):
            if not free_idx.size:
                break  # fully forced; nothing movable
            diff = points[free_idx] - centroids[assignments[free_idx]]
            own = np.einsum("nd,nd->n", diff, diff)
            far = int(np.argmax(own))
            if own[far] <= 0.0:
                continue
            j = free_idx[far]
            centroids[c] = points[j]
            assignments[j] = c
            counts = np.bincount(assignments, minlength=k)

        # mean step
        new_centroids = centroids.copy()
        for c in range(k):
            members = np.flatnonzero(assignments == c)
            if members.size:
                new_centroids[c] = points[members].mean(axis=0)
        movement = float(np.sqrt(((new_centroids - centroids) ** 2).sum(axis=1)).max())
        centroids = new_centroids

        inertia = float(np.einsum("nd,nd->n", points - centroids[assignments],
                                  points - centroids[assignments]).sum())
        history.append(inertia)
        if movement < tol:
            break

    return ClusterResult(assignments=assignments, centroids=centroids,
                         inertia=history[-1], iterations=iterations,
                         inertia_history=history)


def hungarian(cost) -> np.ndarray:
    """Minimum-cost assignment for a square or rectangular cost matrix.

    Returns col_for_row over the zero-padded square problem (length
    max(n_rows, n_cols)); entries beyond the original sizes refer to padding.
    Potentials / shortest-augmenting-path formulation, O(n^3).
    """
    a = np.asarray(cost, dtype=np.float64)
    if a.ndim != 2 or a.size == 0:
        raise ValueError(f"cost must be a non-empty 2-d matrix, got shape {a.shape}")
    if not np.isfinite(a).all():
        raise ValueError("cost matrix contains non-finite entries")
    n_r, n_c = a.shape
    s = max(n_r, n_c)
    m = np.zeros((s, s))
    m[:n_r, :n_c] = a

    INF = float("inf")
    u = np.zeros(s + 1)
    v = np.zeros(s + 1)
    p = np.zeros(s + 1, dtype=np.int64)   # p[j] = row matched to column j (1-based)
    way = np.zeros(s + 1, dtype=np.int64)
    for i in range(1, s + 1):
        p[0] = i
        j0 = 0
        minv = np.full(s + 1, INF)
        used = np.zeros(s + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = p[j0]
            delta = INF
            j1 = -1
            for j in range(1, s + 1):
                if used[j]:
                    continue
                cur = m[i0 - 1, j - 1] - u[i0] - v[j]
                if cur < minv[j]:
                    minv[j] = cur
                    way[j] = j0
                if minv[j] < delta:
                    delta = minv[j]
                    j1 = j
            for j in range(s + 1):
                if used[j]:
                    u[p[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1

    col_for_row = np.zeros(s, dtype=np.int64)
    for j in range(1, s + 1):
        col_for_row[p[j] - 1] = j - 1
    return col_for_row


def cluster_acc(y_true, y_pred, old_classes) -> AccReport:
    """Accuracy under the best cluster-to-class permutation, computed once on
    all points and then restricted to the old / new class subsets."""
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.shape != y_pred.shape or y_true.ndim != 1:
        raise ValueError(f"label arrays must be equal-length 1-d, got {y_true.shape} and {y_pred.shape}")
    if y_true.size == 0:
        raise ValueError("empty label arrays")
    if (y_true < 0).any() or (y_pred < 0).any():
        raise ValueError("labels must be non-negative integers")

    n_cluster = int(y_pred.max()) + 1
    n_class = int(y_true.max()) + 1
    conf = np.zeros((n_cluster, n_class), dtype=np.int64)
    np.add.at(conf, (y_pred, y_true), 1)
    col = hungarian(-conf.astype(np.float64))  # maximize matches
    mapping = {c: int(col[c]) for c in range(n_cluster)}
    mapped = np.array([mapping[c] for c in y_pred])
    hits = mapped == y_true

    old = np.isin(y_true, list(old_classes))
    def rate(mask):
        return float(hits[mask].mean()) if mask.any() else 0.0

    return AccReport(acc_all=float(hits.mean()), acc_old=rate(old), acc_new=rate(~old),
                     permutation=mapping)
