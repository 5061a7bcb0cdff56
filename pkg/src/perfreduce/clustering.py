"""Clustering over encoded row vectors and extraction of representative points.

All three algorithms run in the standardized encoded space (runtime included
as one dimension) and are deterministic given (points, params, seed). Ties are
always broken toward the lowest index. Representatives become the reduced
training set after decoding back to records.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .dataset import CATEGORICAL, Dataset, DatasetManifest, EncodedMatrix, JobRunRecord, destandardize
from .errors import ContractError, ParameterError

KMEANS = "kmeans"
KMEDOIDS = "kmedoids"
DBSCAN = "dbscan"
METHODS = (KMEANS, KMEDOIDS, DBSCAN)

NOISE = -1

_MAX_KMEANS_ITER = 300
_KMEANS_TOL = 1e-4


@dataclass(frozen=True, eq=False)
class ClusteringResult:
    method: str
    params: dict
    labels: np.ndarray = field(repr=False)          # per-row cluster id, NOISE for dbscan noise
    representatives: np.ndarray = field(repr=False)  # r x d points in the standardized space
    seed: int | None
    sse_history: tuple[float, ...] = ()              # kmeans: within-cluster SSE per iteration

    @property
    def n_noise(self) -> int:
        return int(np.sum(self.labels == NOISE))


def _sq_distances(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # dot-product expansion keeps memory at O(|a||b|) instead of O(|a||b|d)
    d2 = ((a * a).sum(axis=1)[:, None] + (b * b).sum(axis=1)[None, :]
          - 2.0 * (a @ b.T))
    return np.maximum(d2, 0.0)


def _pairwise_distances(points: np.ndarray) -> np.ndarray:
    return np.sqrt(_sq_distances(points, points))


def _check_points(points) -> np.ndarray:
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[0] == 0:
        raise ParameterError("points must be a non-empty n x d matrix")
    if not np.all(np.isfinite(pts)):
        raise ParameterError("points contain non-finite values")
    return pts


# ---------------------------------------------------------------------------
# K-Means (Lloyd's algorithm, k-means++ initialization)
# ---------------------------------------------------------------------------

def _kmeans_pp_init(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    chosen = [int(rng.integers(n))]
    d2 = ((points - points[chosen[0]]) ** 2).sum(axis=1)
    while len(chosen) < k:
        total = float(d2.sum())
        if total > 0.0:
            cum = np.cumsum(d2)
            idx = int(np.searchsorted(cum, rng.random() * total, side="right"))
            idx = min(idx, n - 1)
        else:
            # remaining mass is zero (duplicate points): take the lowest unchosen index
            taken = set(chosen)
            idx = next(i for i in range(n) if i not in taken)
        chosen.append(idx)
        d2 = np.minimum(d2, ((points - points[idx]) ** 2).sum(axis=1))
    return points[np.array(chosen)].copy()


def kmeans(points, k: int, seed: int = 0) -> ClusteringResult:
    """Lloyd's algorithm; stops when the largest centroid displacement < 1e-4.

    Representatives are the final centroids (cluster means, generally not
    dataset members). Within-cluster SSE is recorded per iteration and must
    never increase.
    """
    pts = _check_points(points)
    n = pts.shape[0]
    if k < 1 or k > n:
        raise ParameterError(f"k={k} must be in [1, {n}]")
    rng = np.random.default_rng(seed)
    centroids = _kmeans_pp_init(pts, k, rng)

    sse_history: list[float] = []
    labels = np.zeros(n, dtype=int)
    for _ in range(_MAX_KMEANS_ITER):
        d2 = _sq_distances(pts, centroids)
        labels = np.argmin(d2, axis=1)  # ties resolve to the lowest centroid index
        sse = float(d2[np.arange(n), labels].sum())
        if sse_history and sse > sse_history[-1] + 1e-8 * (1.0 + sse_history[-1]):
            raise AssertionError("within-cluster SSE increased during Lloyd iteration")
        sse_history.append(sse)

        new_centroids = centroids.copy()  # empty clusters keep their centroid
        for j in range(k):
            members = labels == j
            if members.any():
                new_centroids[j] = pts[members].mean(axis=0)
        shift = float(np.sqrt(((new_centroids - centroids) ** 2).sum(axis=1)).max())
        centroids = new_centroids
        if shift < _KMEANS_TOL:
            break

    # final assignment against the final centroids
    labels = np.argmin(_sq_distances(pts, centroids), axis=1)
    return ClusteringResult(
        method=KMEANS,
        params={"k": k},
        labels=labels,
        representatives=centroids,
        seed=seed,
        sse_history=tuple(sse_history),
    )


# ---------------------------------------------------------------------------
# K-Medoids (PAM: greedy BUILD + best-improvement SWAP)
# ---------------------------------------------------------------------------

def _pam_build(dist: np.ndarray, k: int) -> list[int]:
    medoids = [int(np.argmin(dist.sum(axis=1)))]
    nearest = dist[medoids[0]].copy()
    while len(medoids) < k:
        costs = np.minimum(nearest[None, :], dist).sum(axis=1)
        costs[medoids] = np.inf
        c = int(np.argmin(costs))
        medoids.append(c)
        nearest = np.minimum(nearest, dist[c])
    return medoids


def _pam_swap(dist: np.ndarray, medoids: list[int]) -> list[int]:
    n = dist.shape[0]
    k = len(medoids)
    if k >= n:
        return medoids
    while True:
        med = np.array(medoids)
        dm = dist[:, med]  # n x k
        nearest_pos = np.argmin(dm, axis=1)
        d_nearest = dm[np.arange(n), nearest_pos]
        if k > 1:
            part = np.partition(dm, 1, axis=1)
            d_second = part[:, 1]
        else:
            d_second = np.full(n, np.inf)
        cost = float(d_nearest.sum())

        non_medoids = np.array([i for i in range(n) if i not in set(medoids)])
        best_delta = 0.0
        best_swap: tuple[int, int] | None = None
        for mi in range(k):
            # cost of each point once medoid mi is removed
            fallback = np.where(nearest_pos == mi, d_second, d_nearest)
            new_costs = np.minimum(fallback[None, :], dist[non_medoids]).sum(axis=1)
            deltas = new_costs - cost
            ci = int(np.argmin(deltas))
            if deltas[ci] < best_delta - 1e-12 * (1.0 + cost):
                best_delta = float(deltas[ci])
                best_swap = (mi, int(non_medoids[ci]))
        if best_swap is None:
            return medoids
        medoids[best_swap[0]] = best_swap[1]


def kmedoids(points, k: int, seed: int = 0) -> ClusteringResult:
    """PAM over Euclidean distances; representatives are actual dataset rows.

    BUILD greedily seeds the medoids, SWAP exchanges (medoid, non-medoid)
    pairs until no single exchange lowers the total assignment cost. The
    procedure is deterministic; the seed is recorded for provenance only.
    """
    pts = _check_points(points)
    n = pts.shape[0]
    if k < 1 or k > n:
        raise ParameterError(f"k={k} must be in [1, {n}]")
    dist = _pairwise_distances(pts)
    medoids = _pam_swap(dist, _pam_build(dist, k))
    medoids = sorted(medoids)
    labels = np.argmin(dist[:, medoids], axis=1)
    return ClusteringResult(
        method=KMEDOIDS,
        params={"k": k},
        labels=labels,
        representatives=pts[medoids].copy(),
        seed=seed,
    )


# ---------------------------------------------------------------------------
# DBSCAN
# ---------------------------------------------------------------------------

def dbscan(points, eps: float, min_pts: int = 2) -> ClusteringResult:
    """Density-based clustering; noise rows are kept as singleton representatives.

    A point is core iff at least min_pts points (itself included) lie within
    eps. Clusters are grown from core points in row-index order, so border
    points join the first cluster that reaches them. Representatives are the
    per-cluster means followed by every noise row verbatim.
    """
    pts = _check_points(points)
    if eps <= 0:
        raise ParameterError(f"eps={eps} must be > 0")
    if min_pts < 1:
        raise ParameterError(f"min_pts={min_pts} must be >= 1")
    n = pts.shape[0]
    dist = _pairwise_distances(pts)
    within = dist <= eps
    core = within.sum(axis=1) >= min_pts

    labels = np.full(n, NOISE, dtype=int)
    cluster = 0
    for i in range(n):
        if labels[i] != NOISE or not core[i]:
            continue
        labels[i] = cluster
        queue = deque([i])
        while queue:
            p = queue.popleft()
            for q in np.nonzero(within[p])[0]:
                if labels[q] == NOISE:
                    labels[q] = cluster
                    if core[q]:
                        queue.append(int(q))
        cluster += 1

    reps = []
    for c in range(cluster):
        reps.append(pts[labels == c].mean(axis=0))
    for i in np.nonzero(labels == NOISE)[0]:
        reps.append(pts[i].copy())
    representatives = np.array(reps) if reps else np.zeros((0, pts.shape[1]))
    return ClusteringResult(
        method=DBSCAN,
        params={"eps": float(eps), "min_pts": int(min_pts)},
        labels=labels,
        representatives=representatives,
        seed=None,
    )


# ---------------------------------------------------------------------------
# Decoding representatives back into records
# ---------------------------------------------------------------------------

def representatives_to_dataset(result: ClusteringResult, encoding: EncodedMatrix,
                               manifest: DatasetManifest) -> Dataset:
    """Turn representative points into synthetic training records.

    De-standardizes each representative, collapses one-hot blocks to the
    argmax category (ties take the first category), rounds the scale-out to
    the nearest integer >= 1 and floors the runtime above zero.
    """
    layout = encoding.layout
    if not layout.include_target:
        raise ContractError("representatives were clustered without the target column")
    raw = destandardize(result.representatives, encoding.scaling)

    records = []
    for row in raw:
        values: dict[str, float | str] = {}
        runtime = 0.0
        onehot: dict[str, list[tuple[str, float]]] = {}
        for j, col in enumerate(layout.columns):
            if col.category is not None:
                onehot.setdefault(col.source, []).append((col.category, float(row[j])))
            elif col.source == manifest.target_column:
                runtime = float(row[j])
            else:
                values[col.source] = float(row[j])
        for source, cats in onehot.items():
            best = max(range(len(cats)), key=lambda i: cats[i][1])
            # max() keeps the first index on ties, i.e. the first-seen category
            values[source] = cats[best][0]
        so = values[manifest.scaleout_column]
        values[manifest.scaleout_column] = float(max(1, int(np.floor(so + 0.5))))
        values[manifest.datasize_column] = max(0.0, values[manifest.datasize_column])
        records.append(JobRunRecord(values=values, runtime_s=max(runtime, 1e-9)))
    return Dataset(manifest=manifest, records=tuple(records))
