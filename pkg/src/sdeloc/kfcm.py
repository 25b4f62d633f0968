"""Kernel fuzzy c-means over RSS fingerprints with a Gaussian kernel.

Distances are measured in the kernel-induced feature space through the Gram
matrix, so the feature-space centroids are never formed explicitly. The
input-space centers are still tracked because the stopping rule compares
successive centers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist, pdist

from .core import ConfigError, DegenerateClusterError, SchemaError


@dataclass(frozen=True, eq=False)
class ClusterModel:
    centers: np.ndarray  # c x n
    membership: np.ndarray  # c x M
    fuzzifier_m: float
    kernel_lambda: float
    objective_trace: tuple[float, ...]
    n_iter: int
    converged: bool

    @property
    def n_clusters(self) -> int:
        return self.centers.shape[0]

    def labels(self) -> np.ndarray:
        return hard_labels(self.membership)

    def __eq__(self, other):
        if not isinstance(other, ClusterModel):
            return NotImplemented
        return (
            np.array_equal(self.centers, other.centers)
            and np.array_equal(self.membership, other.membership)
            and self.fuzzifier_m == other.fuzzifier_m
            and self.kernel_lambda == other.kernel_lambda
            and self.objective_trace == other.objective_trace
            and self.n_iter == other.n_iter
        )


def gaussian_kernel(a, b, kernel_lambda: float) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise SchemaError(f"kernel arguments differ in length: {a.shape} vs {b.shape}")
    diff = a - b
    return float(np.exp(-kernel_lambda * np.dot(diff, diff)))


def gram_matrix(samples, kernel_lambda: float, other=None) -> np.ndarray:
    """Gaussian Gram matrix ``exp(-lambda * ||x_i - y_j||^2)``."""
    x = np.atleast_2d(np.asarray(samples, dtype=float))
    y = x if other is None else np.atleast_2d(np.asarray(other, dtype=float))
    gram = np.exp(-kernel_lambda * cdist(x, y, "sqeuclidean"))
    if other is None:
        np.fill_diagonal(gram, 1.0)
    return gram


def median_heuristic_lambda(samples) -> float:
    """``1 / (2 * median squared pairwise distance)``; 1.0 when all samples coincide."""
    x = np.atleast_2d(np.asarray(samples, dtype=float))
    if x.shape[0] < 2:
        return 1.0
    med = float(np.median(pdist(x, "sqeuclidean")))
    return 1.0 / (2.0 * med) if med > 0 else 1.0


def _centroid_weights(membership: np.ndarray, m: float) -> np.ndarray:
    powered = np.asarray(membership, dtype=float) ** m
    totals = powered.sum(axis=1)
    bad = np.flatnonzero(totals <= 0)
    if bad.size:
        raise DegenerateClusterError(f"cluster {int(bad[0]) + 1} has zero total membership")
    return powered / totals[:, None]


def kernel_distance(k: int, i: int, membership, m: float, gram) -> float:
    """Squared feature-space distance of sample ``k`` to the centroid of cluster ``i``."""
    gram = np.asarray(gram, dtype=float)
    w = _centroid_weights(np.asarray(membership, dtype=float)[i : i + 1], m)[0]
    value = gram[k, k] - 2.0 * gram[k] @ w + w @ gram @ w
    return max(float(value), 0.0)


def kernel_distances(membership, m: float, gram) -> np.ndarray:
    """All squared distances at once, shape c x M."""
    gram = np.asarray(gram, dtype=float)
    w = _centroid_weights(membership, m)  # c x M
    cross = w @ gram  # c x M: sum_j w_ij K(j, k)
    self_term = np.einsum("ij,ij->i", cross, w)  # w_i^T K w_i
    d = np.diag(gram)[None, :] - 2.0 * cross + self_term[:, None]
    return np.maximum(d, 0.0)


def update_membership(distances, m: float) -> np.ndarray:
    """Fuzzy memberships from a c x M distance matrix.

    A sample at zero distance from some cluster is assigned crisply to the
    lowest-index such cluster.
    """
    d = np.asarray(distances, dtype=float)
    c, count = d.shape
    if c == 1:
        return np.ones_like(d)
    u = np.empty_like(d)
    zero = d <= 0.0
    singular = zero.any(axis=0)
    if np.any(~singular):
        dd = d[:, ~singular]
        # u_ki = 1 / sum_j (d_ki / d_kj)^(1/(m-1)); scaling by the column minimum keeps
        # every ratio in (0, 1] so tiny distances cannot overflow
        inv = (dd.min(axis=0, keepdims=True) / dd) ** (1.0 / (m - 1.0))
        u[:, ~singular] = inv / inv.sum(axis=0, keepdims=True)
    if np.any(singular):
        first = np.argmax(zero[:, singular], axis=0)
        crisp = np.zeros((c, int(singular.sum())))
        crisp[first, np.arange(crisp.shape[1])] = 1.0
        u[:, singular] = crisp
    return u


def update_centers(samples, membership, m: float) -> np.ndarray:
    x = np.asarray(samples, dtype=float)
    return _centroid_weights(membership, m) @ x


def hard_labels(membership) -> np.ndarray:
    """Cluster id (1-based) of the largest membership; ties go to the lowest index."""
    return np.argmax(np.asarray(membership), axis=0) + 1


def crisp_membership(labels, n_clusters: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=int)
    u = np.zeros((n_clusters, labels.size))
    u[labels - 1, np.arange(labels.size)] = 1.0
    return u


def objective(membership, distances, m: float) -> float:
    return float(np.sum(np.asarray(membership) ** m * np.asarray(distances)))


def farthest_point_init(samples, c: int, seed: int) -> np.ndarray:
    """Indices of ``c`` distinct samples: a seeded first pick, then greedy farthest points."""
    x = np.asarray(samples, dtype=float)
    rng = np.random.default_rng(seed)
    chosen = [int(rng.integers(x.shape[0]))]
    nearest = cdist(x, x[chosen], "sqeuclidean")[:, 0]
    for _ in range(1, c):
        nearest_masked = nearest.copy()
        nearest_masked[chosen] = -1.0
        nxt = int(np.argmax(nearest_masked))
        chosen.append(nxt)
        nearest = np.minimum(nearest, cdist(x, x[nxt : nxt + 1], "sqeuclidean")[:, 0])
    return np.array(chosen)


def run_kfcm(
    samples,
    c: int,
    fuzzifier_m: float = 2.0,
    kernel_lambda: float | None = None,
    converge_eps: float = 1e-6,
    max_iter: int = 100,
    seed: int = 0,
) -> ClusterModel:
    """Cluster the rows of ``samples`` into ``c`` fuzzy classes."""
    x = np.atleast_2d(np.asarray(samples, dtype=float))
    count = x.shape[0]
    if c < 1 or c > count:
        raise ConfigError(f"need 1 <= n_clusters <= number of samples ({count}), got {c}")
    if fuzzifier_m <= 1:
        raise ConfigError(f"fuzzifier must exceed 1, got {fuzzifier_m}")
    lam = median_heuristic_lambda(x) if kernel_lambda is None else float(kernel_lambda)
    gram = gram_matrix(x, lam)

    init = farthest_point_init(x, c, seed)
    centers = x[init].copy()
    # initial memberships from feature-space distances to the seed samples, 2 - 2 K(x, v)
    membership = update_membership(np.maximum(2.0 - 2.0 * gram[init], 0.0), fuzzifier_m)

    trace = []
    converged = False
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        dist = kernel_distances(membership, fuzzifier_m, gram)
        trace.append(objective(membership, dist, fuzzifier_m))
        membership = update_membership(dist, fuzzifier_m)
        new_centers = update_centers(x, membership, fuzzifier_m)
        shift = float(np.max(np.linalg.norm(new_centers - centers, axis=1)))
        centers = new_centers
        if shift <= converge_eps:
            converged = True
            break
    dist = kernel_distances(membership, fuzzifier_m, gram)
    trace.append(objective(membership, dist, fuzzifier_m))
    return ClusterModel(centers, membership, float(fuzzifier_m), lam, tuple(trace), n_iter, converged)


def assign_to_centers(samples, clusters: ClusterModel) -> tuple[np.ndarray, np.ndarray]:
    """Nearest center in the kernel-induced metric ``2 - 2 K(x, v)``.

    Returns 1-based labels and the matching feature-space distances.
    """
    x = np.atleast_2d(np.asarray(samples, dtype=float))
    k = gram_matrix(x, clusters.kernel_lambda, clusters.centers)
    dist = np.maximum(2.0 - 2.0 * k, 0.0)
    idx = np.argmin(dist, axis=1)
    return idx + 1, dist[np.arange(x.shape[0]), idx]
