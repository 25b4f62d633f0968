"""KNN fingerprint matching in raw RSS space and in the embedded space."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .core import ConfigError, EmbeddingModel, RssVector, SchemaError


@dataclass(frozen=True, eq=False)
class PositionFix:
    coord: tuple[float, float]
    neighbor_ids: tuple[int, ...]
    neighbor_distances: tuple[float, ...]


@dataclass
class OpCounter:
    """Multiply-accumulate tally; one squared difference counts as one MAC."""

    macs: int = 0
    queries: int = 0

    @property
    def per_query(self) -> float:
        return self.macs / self.queries if self.queries else 0.0


def knn_macs(n_aps: int, n_rps: int) -> int:
    return n_aps * n_rps


def sde_macs(n_aps: int, dim: int, n_rps: int) -> int:
    return n_aps * dim + dim * n_rps


def euclid(a, b) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise SchemaError(f"length mismatch: {a.shape} vs {b.shape}")
    return float(np.sqrt(np.sum((a - b) ** 2)))


def fill_missing(sample: RssVector, fill_dbm: float = 0.0) -> np.ndarray:
    return np.where(sample.missing, fill_dbm, sample.values)


def fill_missing_batch(samples, fill_dbm: float = 0.0) -> np.ndarray:
    if len(samples) == 0:
        return np.zeros((0, 0))
    return np.vstack([fill_missing(s, fill_dbm) for s in samples])


SCAN_MAX_K = 8  # up to this k, repeated argmin beats a partial sort
BLOCK_ROWS = 256  # query rows per distance block; keeps the block cache-resident


def _scan_smallest(work: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """k passes of row-wise argmin; overwrites ``work``, which must be finite.

    argmin returns the first minimum, so ties go to the lower index.
    """
    rows = np.arange(work.shape[0])
    idx = np.empty((work.shape[0], k), dtype=np.intp)
    vals = np.empty((work.shape[0], k))
    for j in range(k):
        col = np.argmin(work, axis=1)
        idx[:, j] = col
        vals[:, j] = work[rows, col]
        work[rows, col] = np.inf
    return idx, vals


def k_smallest(dist: np.ndarray, k: int) -> np.ndarray:
    """Column indices of the ``k`` smallest entries per row, ascending, ties to the lower index."""
    dist = np.atleast_2d(dist)
    rows, cols = dist.shape
    if k == cols:
        return np.argsort(dist, axis=1, kind="stable")
    if k <= SCAN_MAX_K and np.all(np.isfinite(dist)):
        return _scan_smallest(np.array(dist, dtype=float), k)[0]
    # partitioning at k also places the (k+1)-th smallest value, which exposes ties at the boundary
    part = np.argpartition(dist, k, axis=1)[:, : k + 1]
    r = np.arange(rows)[:, None]
    vals = dist[r, part]
    head, head_vals = part[:, :k], vals[:, :k]
    order = np.lexsort((head, head_vals), axis=1)
    out = np.take_along_axis(head, order, axis=1)
    tied = vals[:, k] <= head_vals.max(axis=1)
    for i in np.flatnonzero(tied):
        out[i] = np.argsort(dist[i], kind="stable")[:k]
    return out


def nearest_rows(queries: np.ndarray, fingerprints: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Indices and Euclidean distances of the ``k`` nearest fingerprints for each query row."""
    idx = np.empty((queries.shape[0], k), dtype=np.intp)
    near = np.empty((queries.shape[0], k))
    for start in range(0, queries.shape[0], BLOCK_ROWS):
        block = cdist(queries[start : start + BLOCK_ROWS], fingerprints, "sqeuclidean")
        stop = start + block.shape[0]
        if k <= SCAN_MAX_K and k < block.shape[1] and np.all(np.isfinite(block)):
            idx[start:stop], near[start:stop] = _scan_smallest(block, k)
        else:
            sel = k_smallest(block, k)
            idx[start:stop] = sel
            near[start:stop] = np.take_along_axis(block, sel, axis=1)
    return idx, np.sqrt(near)


def locate_arrays(queries, fingerprints, coords, k: int,
                  counter: OpCounter | None = None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Array form of KNN matching: estimates (Q x 2), neighbor ids and distances (Q x k)."""
    q = np.atleast_2d(np.asarray(queries, dtype=float))
    f = np.atleast_2d(np.asarray(fingerprints, dtype=float))
    coords = np.asarray(coords, dtype=float)
    n_rps = f.shape[0]
    if not 1 <= k <= n_rps:
        raise ConfigError(f"knn_k must lie in [1, {n_rps}], got {k}")
    if q.shape[1] != f.shape[1]:
        raise SchemaError(f"query length {q.shape[1]} != fingerprint length {f.shape[1]}")
    idx, near = nearest_rows(q, f, k)
    if counter is not None:
        counter.macs += q.shape[0] * knn_macs(f.shape[1], n_rps)
        counter.queries += q.shape[0]
    return coords[idx].mean(axis=1), idx, near


def _as_fixes(est, idx, near) -> list[PositionFix]:
    return [
        PositionFix((e[0], e[1]), tuple(ids), tuple(dd))
        for e, ids, dd in zip(est.tolist(), idx.tolist(), near.tolist())
    ]


def knn_locate_batch(queries, fingerprints, coords, k: int, counter: OpCounter | None = None) -> list[PositionFix]:
    return _as_fixes(*locate_arrays(queries, fingerprints, coords, k, counter))


def knn_locate(query, fingerprints, coords, k: int, counter: OpCounter | None = None) -> PositionFix:
    """Average the coordinates of the ``k`` fingerprints nearest to ``query``."""
    q = np.asarray(query, dtype=float)
    if q.ndim != 1:
        raise SchemaError("knn_locate takes a single query; use knn_locate_batch")
    return knn_locate_batch(q[None, :], fingerprints, coords, k, counter)[0]


def project(embedding, x) -> np.ndarray:
    """``M^T x`` for one vector or for each row of a batch."""
    m = np.asarray(embedding, dtype=float)
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != m.shape[0]:
        raise SchemaError(f"vector length {x.shape[-1]} != embedding rows {m.shape[0]}")
    return x @ m


def _prepare_sde(model: EmbeddingModel, queries, fill_dbm) -> np.ndarray:
    fill = model.fill_value if fill_dbm is None else fill_dbm
    if isinstance(queries, np.ndarray):
        raw = np.atleast_2d(queries)
    else:
        raw = fill_missing_batch(list(queries), fill)
    if raw.size and raw.shape[1] != model.n_aps:
        raise SchemaError(f"query has {raw.shape[1]} APs, model expects {model.n_aps}")
    return raw


def locate_sde_arrays(model: EmbeddingModel, queries, k: int | None = None, fill_dbm: float | None = None,
                      counter: OpCounter | None = None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Array form of ``locate_sde_batch``."""
    k = model.params.knn_k if k is None else k
    raw = _prepare_sde(model, queries, fill_dbm)
    if raw.size == 0:
        return np.zeros((0, 2)), np.zeros((0, k), dtype=np.intp), np.zeros((0, k))
    reduced = project(model.embedding, raw)
    out = locate_arrays(reduced, model.drold.T, model.coords, k)
    if counter is not None:
        counter.macs += raw.shape[0] * sde_macs(model.n_aps, model.dim, model.drold.shape[1])
        counter.queries += raw.shape[0]
    return out


def locate_sde_batch(
    model: EmbeddingModel,
    queries,
    k: int | None = None,
    fill_dbm: float | None = None,
    counter: OpCounter | None = None,
) -> list[PositionFix]:
    """Fill, project and match each query against the model's DROLD.

    ``queries`` is a sequence of ``RssVector`` or an already-filled 2-D array.
    """
    return _as_fixes(*locate_sde_arrays(model, queries, k, fill_dbm, counter))


def locate_sde(model: EmbeddingModel, raw_query: RssVector, k: int | None = None,
               fill_dbm: float | None = None, counter: OpCounter | None = None) -> PositionFix:
    return locate_sde_batch(model, [raw_query], k, fill_dbm, counter)[0]
