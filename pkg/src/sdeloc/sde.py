"""Class-matching semi-supervised discriminant embedding (CM-SDE).

Labeled fingerprints are clustered with KFCM; unlabeled observations are
admitted when they match a cluster center closely enough; within-class and
between-class neighbor graphs over the amalgamated set define a generalized
eigenproblem whose leading eigenvectors form the embedding matrix.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from scipy.spatial.distance import cdist

from .core import (
    AUTO,
    ConfigError,
    EmbeddingModel,
    RadioMap,
    RssVector,
    SchemaError,
    SolverError,
    TrainParams,
)
from .kfcm import ClusterModel, assign_to_centers, run_kfcm
from .locate import fill_missing_batch, k_smallest


@dataclass(frozen=True, eq=False)
class NeighborGraphs:
    within: sp.csr_array  # boolean, symmetric
    between: sp.csr_array

    @staticmethod
    def _edges(g) -> set[tuple[int, int]]:
        coo = sp.triu(g, k=1).tocoo()
        return {(int(i), int(j)) for i, j in zip(coo.row, coo.col)}

    def within_edges(self) -> set[tuple[int, int]]:
        return self._edges(self.within)

    def between_edges(self) -> set[tuple[int, int]]:
        return self._edges(self.between)


@dataclass(frozen=True, eq=False)
class AffinityPair:
    within: sp.csr_array
    between: sp.csr_array
    heat_t: float


@dataclass(frozen=True, eq=False)
class AdmissionResult:
    accepted: tuple[tuple[RssVector, int, int], ...]  # (sample, label, similarity)
    accepted_index: tuple[int, ...]  # positions in the input list
    rejected_count: int

    @property
    def samples(self) -> list[RssVector]:
        return [a[0] for a in self.accepted]

    @property
    def labels(self) -> np.ndarray:
        return np.array([a[1] for a in self.accepted], dtype=int)


@dataclass(frozen=True, eq=False)
class EigenSolution:
    vectors: np.ndarray  # n x d, columns B-normalised
    values: np.ndarray  # descending
    scatter_between: np.ndarray  # A
    scatter_within: np.ndarray  # B, regularised


def estimate_intrinsic_dim(fingerprints, energy_threshold: float = 0.95) -> int:
    """Smallest d whose top-d covariance eigenvalues hold ``energy_threshold`` of the variance."""
    x = np.atleast_2d(np.asarray(fingerprints, dtype=float))
    if x.shape[0] < 2:
        raise ConfigError("need at least two fingerprints to estimate the intrinsic dimension")
    if not 0 < energy_threshold < 1:
        raise ConfigError(f"energy_threshold must lie in (0, 1), got {energy_threshold}")
    centered = x - x.mean(axis=0)
    eig = np.clip(np.linalg.eigvalsh(centered.T @ centered / (x.shape[0] - 1))[::-1], 0.0, None)
    total = eig.sum()
    if total <= 1e-12 * max(1.0, float(np.abs(x).max())) ** 2:
        return 1
    energy = np.cumsum(eig) / total
    # guard the comparison against round-off on exactly-met thresholds
    return int(np.searchsorted(energy, energy_threshold - 1e-12) + 1)


def curvature(x) -> np.ndarray:
    """Slope sequence ``x[j+1] - x[j]`` over the fixed AP order."""
    return np.diff(np.asarray(x, dtype=float), axis=-1)


def similarity(x, center, match_eps: float) -> np.ndarray:
    """Count of AP-to-AP slopes agreeing with the center's slopes within ``match_eps``."""
    return np.sum(np.abs(curvature(x) - curvature(center)) <= match_eps, axis=-1)


def class_match(unlabeled, clusters: ClusterModel, match_eps: float, match_threshold: int,
                fill_dbm: float = 0.0) -> AdmissionResult:
    """Label unlabeled observations by nearest center and keep the slope-consistent ones."""
    samples = list(unlabeled)
    if not samples:
        return AdmissionResult((), (), 0)
    x = fill_missing_batch(samples, fill_dbm)
    if x.shape[1] != clusters.centers.shape[1]:
        raise SchemaError(f"unlabeled samples have {x.shape[1]} APs, clusters expect {clusters.centers.shape[1]}")
    labels, _ = assign_to_centers(x, clusters)
    scores = similarity(x, clusters.centers[labels - 1], match_eps)
    keep = np.flatnonzero(scores >= match_threshold)
    accepted = tuple((samples[i], int(labels[i]), int(scores[i])) for i in keep)
    return AdmissionResult(accepted, tuple(int(i) for i in keep), len(samples) - keep.size)


def build_neighbor_graphs(fingerprints, labels, affinity_k: int) -> NeighborGraphs:
    """Within-class mutual-kNN graph and between-class union-kNN graph.

    Neighbors are found among all samples in Euclidean input space, ties to
    the lower index.
    """
    x = np.atleast_2d(np.asarray(fingerprints, dtype=float))
    labels = np.asarray(labels)
    count = x.shape[0]
    if labels.shape != (count,):
        raise SchemaError("labels must align with fingerprints")
    if not 1 <= affinity_k < count:
        raise ConfigError(f"affinity_k must lie in [1, {count - 1}], got {affinity_k}")
    dist = cdist(x, x, "sqeuclidean")
    np.fill_diagonal(dist, np.inf)
    nbrs = k_smallest(dist, affinity_k)
    rows = np.repeat(np.arange(count), affinity_k)
    knn = sp.csr_array((np.ones(rows.size, dtype=bool), (rows, nbrs.ravel())), shape=(count, count))
    knn_t = knn.T.tocsr()
    mutual = knn.multiply(knn_t).tocoo()
    union = (knn + knn_t).tocoo()

    def restrict(g, same: bool):
        keep = (labels[g.row] == labels[g.col]) == same
        return sp.csr_array((np.ones(int(keep.sum()), dtype=bool), (g.row[keep], g.col[keep])), shape=(count, count))

    return NeighborGraphs(restrict(mutual, True), restrict(union, False))


def default_heat_t(graphs: NeighborGraphs, fingerprints) -> float:
    """Mean squared length over the edges of both graphs (1.0 without edges)."""
    x = np.asarray(fingerprints, dtype=float)
    sq = []
    for g in (graphs.within, graphs.between):
        coo = sp.triu(g, k=1).tocoo()
        if coo.nnz:
            sq.append(np.sum((x[coo.row] - x[coo.col]) ** 2, axis=1))
    if not sq:
        return 1.0
    mean = float(np.mean(np.concatenate(sq)))
    return mean if mean > 0 else 1.0


def _heat_weights(graph, x: np.ndarray, heat_t: float) -> sp.csr_array:
    coo = sp.triu(graph, k=1).tocoo()
    w = np.exp(-np.sum((x[coo.row] - x[coo.col]) ** 2, axis=1) / heat_t)
    rows = np.concatenate([coo.row, coo.col])
    cols = np.concatenate([coo.col, coo.row])
    count = x.shape[0]
    return sp.csr_array((np.concatenate([w, w]), (rows, cols)), shape=(count, count))


def affinity_weights(graphs: NeighborGraphs, fingerprints, heat_t: float | None = None) -> AffinityPair:
    """Heat-kernel weights on graph edges, zero elsewhere and on the diagonal."""
    x = np.atleast_2d(np.asarray(fingerprints, dtype=float))
    t = default_heat_t(graphs, x) if heat_t is None else float(heat_t)
    if not t > 0:
        raise ConfigError(f"heat_t must be positive, got {t}")
    return AffinityPair(_heat_weights(graphs.within, x, t), _heat_weights(graphs.between, x, t), t)


def degree_matrix(w) -> sp.dia_array:
    d = np.asarray(w.sum(axis=1)).ravel()
    return sp.dia_array((d[None, :], [0]), shape=(d.size, d.size))


def _laplacian_form(x: np.ndarray, w) -> np.ndarray:
    """``X (D - W) X^T`` with X holding one sample per column."""
    w = sp.csr_array(w)
    deg = np.asarray(w.sum(axis=1)).ravel()
    form = (x * deg) @ x.T - x @ (w @ x.T)
    return 0.5 * (form + form.T)


def is_positive_definite(b: np.ndarray) -> bool:
    try:
        scipy.linalg.cholesky(b, lower=True)
    except np.linalg.LinAlgError:
        return False
    return True


def _sign_fix(vectors: np.ndarray) -> np.ndarray:
    out = vectors.copy()
    for j in range(out.shape[1]):
        col = out[:, j]
        big = np.abs(col).max()
        nz = np.flatnonzero(np.abs(col) > 1e-12 * big) if big > 0 else []
        if len(nz) and col[nz[0]] < 0:
            out[:, j] = -col
    return out


def solve_embedding(x, w_within, w_between, d: int, reg_sigma: float) -> EigenSolution:
    """Leading generalized eigenvectors of ``A v = lambda B v``.

    ``x`` is n x M (one fingerprint per column), A is the between-class
    scatter ``X (D' - W') X^T`` and B the within-class scatter
    ``X (D - W) X^T + reg_sigma I``.
    """
    x = np.asarray(x, dtype=float)
    n, count = x.shape
    if not 1 <= d <= n:
        raise ConfigError(f"embedding dimension must lie in [1, {n}], got {d}")
    if w_within.shape != (count, count) or w_between.shape != (count, count):
        raise SchemaError("affinity matrices must be M x M for M fingerprints")
    a = _laplacian_form(x, w_between)
    b = _laplacian_form(x, w_within) + reg_sigma * np.eye(n)
    try:
        values, vectors = scipy.linalg.eigh(a, b)
    except np.linalg.LinAlgError as exc:
        raise SolverError(
            f"within-class scatter is not positive definite with reg_sigma={reg_sigma:g}; "
            f"increase reg_sigma ({exc})"
        ) from None
    if not np.all(np.isfinite(values)):
        raise SolverError("eigen-solver returned non-finite values; increase reg_sigma")
    order = np.argsort(-values, kind="stable")[:d]
    values = values[order]
    vectors = vectors[:, order]
    norms = np.sqrt(np.einsum("ij,ij->j", vectors, b @ vectors))
    vectors = _sign_fix(vectors / norms)
    return EigenSolution(vectors, values, a, b)


def eigen_residuals(sol: EigenSolution) -> np.ndarray:
    """Per-pair ratio of ``||A v - lambda B v||`` to its allowed scale."""
    a, b = sol.scatter_between, sol.scatter_within
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    out = []
    for lam, v in zip(sol.values, sol.vectors.T):
        res = np.linalg.norm(a @ v - lam * (b @ v))
        out.append(res / ((na + abs(lam) * nb) * np.linalg.norm(v)))
    return np.array(out)


def fit_clusters(radio_map: RadioMap, params: TrainParams) -> ClusterModel:
    return run_kfcm(
        radio_map.fingerprints,
        params.n_clusters,
        fuzzifier_m=params.fuzzifier_m,
        kernel_lambda=params.kernel_lambda,
        converge_eps=params.converge_eps,
        max_iter=params.max_iter,
        seed=params.seed,
    )


def admission_cap(n_labeled: int, update_ratio: float) -> int:
    """Largest admitted count for a labeled share of ``update_ratio``."""
    return int(math.floor(n_labeled * (1.0 - update_ratio) / update_ratio + 1e-9))


def resolve_fill(params: TrainParams, labeled) -> float:
    """Concrete dBm value for unheard APs; ``auto`` imputes the mean labeled RSS."""
    if params.fill_dbm == AUTO:
        return float(np.mean(labeled))
    return float(params.fill_dbm)


def resolve_dim(params: TrainParams, fingerprints) -> int:
    if params.intrinsic_dim == AUTO:
        return estimate_intrinsic_dim(fingerprints, params.dim_energy)
    return int(params.intrinsic_dim)


def _fit_embedding(labeled: np.ndarray, labels: np.ndarray, admitted: np.ndarray, admitted_labels: np.ndarray,
                   d: int, params: TrainParams) -> tuple[EigenSolution, float]:
    x = np.vstack([labeled, admitted]) if admitted.size else labeled
    all_labels = np.concatenate([labels, admitted_labels]) if admitted.size else labels
    graphs = build_neighbor_graphs(x, all_labels, params.affinity_k)
    weights = affinity_weights(graphs, x, params.heat_t)
    sol = solve_embedding(x.T, weights.within, weights.between, d, params.reg_sigma)
    return sol, weights.heat_t


def _assemble(radio_map_ap_ids, labeled, coords, labels, admitted, admitted_labels, d, params, clusters,
              fill_value, provenance) -> EmbeddingModel:
    sol, heat_t = _fit_embedding(labeled, labels, admitted, admitted_labels, d, params)
    provenance = dict(provenance)
    provenance.update(
        labeled_count=int(labeled.shape[0]),
        admitted_count=int(admitted.shape[0]),
        heat_t=float(heat_t),
        kernel_lambda=float(clusters.kernel_lambda),
        dim=int(d),
        within_scatter_pd=bool(is_positive_definite(sol.scatter_within)),
        max_residual_ratio=float(np.max(eigen_residuals(sol))),
    )
    return EmbeddingModel(
        ap_ids=tuple(radio_map_ap_ids),
        embedding=sol.vectors,
        drold=sol.vectors.T @ labeled.T,
        coords=coords,
        labels=labels,
        params=params,
        labeled_rss=labeled,
        admitted_rss=admitted,
        admitted_labels=admitted_labels,
        eigenvalues=sol.values,
        fill_value=fill_value,
        provenance=provenance,
    )


def train_sde(radio_map: RadioMap, unlabeled, params: TrainParams,
              clusters: ClusterModel | None = None) -> EmbeddingModel:
    """Offline CM-SDE training on a radio map plus an unlabeled pool.

    Accepted pool samples are kept in pool order and truncated to the cap
    implied by ``update_ratio``; with nothing admitted the result is the
    plain LDE model.
    """
    if clusters is None:
        clusters = fit_clusters(radio_map, params)
    labeled = np.array(radio_map.fingerprints, dtype=float)
    labels = clusters.labels()
    n = radio_map.n_aps
    fill = resolve_fill(params, labeled)
    pool = list(unlabeled)
    cap = admission_cap(labeled.shape[0], params.update_ratio)
    if pool and cap > 0:
        result = class_match(pool, clusters, params.match_eps, params.match_threshold, fill)
        kept = result.accepted[:cap]
        rejected = result.rejected_count
        over_cap = len(result.accepted) - len(kept)
    else:
        kept, rejected, over_cap = (), 0, 0
    if kept:
        admitted = fill_missing_batch([a[0] for a in kept], fill)
        admitted_labels = np.array([a[1] for a in kept], dtype=int)
    else:
        admitted = np.zeros((0, n))
        admitted_labels = np.zeros(0, dtype=int)
    d = resolve_dim(params, labeled)
    provenance = {
        "pool_size": len(pool),
        "rejected_count": int(rejected),
        "over_cap_count": int(over_cap),
        "label_histogram": [int(v) for v in np.bincount(labels, minlength=clusters.n_clusters + 1)[1:]],
        "kfcm_iterations": int(clusters.n_iter),
    }
    return _assemble(radio_map.ap_ids, labeled, radio_map.coords, labels, admitted, admitted_labels, d, params,
                     clusters, fill, provenance)


def train_lde(radio_map: RadioMap, params: TrainParams, clusters: ClusterModel | None = None) -> EmbeddingModel:
    """Supervised LDE on the KFCM-labeled map alone."""
    return train_sde(radio_map, [], params, clusters)


def online_update(model: EmbeddingModel, sample: RssVector, clusters: ClusterModel,
                  params: TrainParams | None = None) -> EmbeddingModel:
    """Admit one observation and re-solve, or return ``model`` itself on rejection.

    The admission cap of offline training does not apply here.
    """
    params = model.params if params is None else params
    if len(sample) != model.n_aps:
        raise SchemaError(f"sample has {len(sample)} APs, model expects {model.n_aps}")
    result = class_match([sample], clusters, params.match_eps, params.match_threshold, model.fill_value)
    if not result.accepted:
        return model
    filled = fill_missing_batch([sample], model.fill_value)
    admitted = np.vstack([model.admitted_rss, filled])
    admitted_labels = np.concatenate([model.admitted_labels, [result.accepted[0][1]]])
    provenance = dict(model.provenance)
    provenance["online_admitted"] = int(provenance.get("online_admitted", 0)) + 1
    return _assemble(model.ap_ids, np.array(model.labeled_rss), model.coords, model.labels, admitted,
                     admitted_labels, model.dim, params, clusters, model.fill_value, provenance)
