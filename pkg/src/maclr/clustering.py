"""K-means over instance embeddings and the coarse-to-fine cluster schedule.

The schedule starts at K_0 clusters, doubles K after every T_K steps,
recomputes assignments every T_update steps, and switches to singleton
clusters (every instance its own cluster) for the second half of training.
Callers L2-normalize embeddings first so Euclidean Lloyd iterations align
with inner-product similarity.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class _Singleton:
    """Sentinel regime: every instance is its own cluster."""

    def __repr__(self):
        return "SINGLETON"


SINGLETON = _Singleton()


@dataclass
class ScheduleConfig:
    K_0: int
    T_K: int
    T_update: int
    T_total: int

    def __post_init__(self):
        if min(self.K_0, self.T_K, self.T_update, self.T_total) < 1:
            raise ValueError("all schedule parameters must be positive")
        if self.T_K > self.T_total or self.T_update > self.T_total:
            raise ValueError("T_K and T_update must not exceed T_total")


@dataclass
class ClusterState:
    K: int
    assignment: np.ndarray      # per-instance cluster id
    centroids: np.ndarray       # (K, d)
    objective: float            # sum of squared distances
    objective_trace: list[float] = field(default_factory=list)


def _sq_dists(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    """(n, K) squared Euclidean distances, clipped at zero for roundoff."""
    d2 = (
        np.einsum("nd,nd->n", points, points)[:, None]
        - 2.0 * points @ centroids.T
        + np.einsum("kd,kd->k", centroids, centroids)[None, :]
    )
    return np.maximum(d2, 0.0)


def _kmeanspp_init(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    chosen = np.empty(k, dtype=np.int64)
    chosen[0] = rng.integers(n)
    best = _sq_dists(points, points[chosen[:1]]).ravel()
    for j in range(1, k):
        total = best.sum()
        if total <= 0.0:
            # all remaining candidates coincide with chosen centers
            remaining = np.setdiff1d(np.arange(n), chosen[:j])
            chosen[j] = rng.choice(remaining)
        else:
            chosen[j] = rng.choice(n, p=best / total)
        best = np.minimum(best, _sq_dists(points, points[chosen[j:j + 1]]).ravel())
    return points[chosen].copy()


def kmeans(embeddings: np.ndarray, K: int, seed: int, max_iters: int = 50) -> ClusterState:
    """Lloyd iterations from a k-means++ seeding until assignment fixpoint.

    Empty clusters are repaired by stealing the point farthest from its own
    centroid. The final assignment always maps every point to its nearest
    centroid (ties to the lowest cluster id).
    """
    points = np.asarray(embeddings, dtype=np.float64)
    n = points.shape[0]
    if K < 1:
        raise ValueError(f"K must be >= 1, got {K}")
    if K > n:
        raise ValueError(f"K={K} exceeds number of points {n}")
    rng = np.random.default_rng(seed)
    centroids = _kmeanspp_init(points, K, rng)
    assignment = None
    trace: list[float] = []
    for _ in range(max_iters):
        d2 = _sq_dists(points, centroids)
        new_assignment = d2.argmin(axis=1)
        trace.append(float(d2[np.arange(n), new_assignment].sum()))
        if assignment is not None and np.array_equal(new_assignment, assignment):
            assignment = new_assignment
            break
        assignment = new_assignment
        sizes = np.bincount(assignment, minlength=K)
        for c in range(K):
            if sizes[c] > 0:
                centroids[c] = points[assignment == c].mean(axis=0)
        empties = np.flatnonzero(sizes == 0)
        if empties.size:
            own = _sq_dists(points, centroids)[np.arange(n), assignment]
            for c in empties:
                # never steal a cluster's only member
                stealable = sizes[assignment] > 1
                cand = np.where(stealable, own, -np.inf)
                p = int(cand.argmax())
                sizes[assignment[p]] -= 1
                assignment[p] = c
                sizes[c] = 1
                centroids[c] = points[p]
                own[p] = 0.0
    else:
        # out of iterations: one final assignment restores the invariant
        d2 = _sq_dists(points, centroids)
        assignment = d2.argmin(axis=1)
        trace.append(float(d2[np.arange(n), assignment].sum()))
    return ClusterState(
        K=K,
        assignment=assignment.astype(np.int64),
        centroids=centroids.astype(np.float32),
        objective=trace[-1],
        objective_trace=trace,
    )


def schedule_K(config: ScheduleConfig, step: int, n_instances: int):
    """Effective cluster count at a 1-based training step, or SINGLETON.

    Steps 1..T_K run at K_0 exactly; K doubles after each full T_K block and
    clamps at n_instances; the singleton regime starts at ceil(T_total / 2).
    """
    if not 1 <= step <= config.T_total:
        raise ValueError(f"step {step} outside [1, {config.T_total}]")
    if 2 * step >= config.T_total:
        return SINGLETON
    k = config.K_0 * (2 ** ((step - 1) // config.T_K))
    return min(k, n_instances)


def dump_assignments(state: ClusterState, instance_ids, path) -> None:
    """Debug dump, one "instance_id cluster_id" line per instance."""
    with open(path, "w", encoding="utf-8") as f:
        for iid, cid in zip(instance_ids, state.assignment):
            f.write(f"{iid} {int(cid)}\n")


def positives_by_key(keys) -> list[np.ndarray]:
    """Batch positions grouped by equal key; position i always appears in P(i)."""
    keys = list(keys)
    groups: dict = {}
    for pos, key in enumerate(keys):
        groups.setdefault(key, []).append(pos)
    return [np.array(groups[key], dtype=np.int64) for key in keys]


def positives_in_batch(state, batch_instance_rows) -> list[np.ndarray]:
    """In-batch positive index sets: cluster co-members, or {i} under SINGLETON."""
    rows = list(batch_instance_rows)
    if state is SINGLETON:
        return [np.array([i], dtype=np.int64) for i in range(len(rows))]
    return positives_by_key(state.assignment[rows].tolist())
