"""Accuracy-versus-error-radius evaluation, parameter sweeps and method comparison."""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from sklearn.cluster import KMeans

from .core import AUTO, ConfigError, RadioMap, SdelocError, TrainParams, ValidationError
from .locate import OpCounter, fill_missing_batch, locate_arrays, locate_sde_arrays
from .sde import fit_clusters, resolve_fill, train_lde, train_sde
from .sim import Testbed

DEFAULT_RADII = (0.5, 1.0, 1.5, 2.0)
METHODS = ("knn", "lde", "sde")
SWEEP_AXES = ("intrinsic_dim", "n_clusters", "affinity_k", "reg_sigma", "update_ratio")


def position_errors(estimates, truths) -> np.ndarray:
    est = np.asarray(estimates, dtype=float).reshape(-1, 2)
    tru = np.asarray(truths, dtype=float).reshape(-1, 2)
    if est.shape != tru.shape:
        raise ValidationError(f"{est.shape[0]} estimates for {tru.shape[0]} ground-truth points")
    if est.shape[0] == 0:
        raise ValidationError("no queries to evaluate")
    return np.sqrt(np.sum((est - tru) ** 2, axis=1))


def accuracy_at_radius(estimates, truths, r: float) -> float:
    """Share of queries whose position error is at most ``r`` meters."""
    if r < 0:
        raise ConfigError(f"error radius must be >= 0, got {r}")
    return float(np.mean(position_errors(estimates, truths) <= r))


def error_cdf(estimates, truths, radii) -> list[tuple[float, float]]:
    errors = position_errors(estimates, truths)
    out = []
    for r in sorted(float(v) for v in radii):
        if r < 0:
            raise ConfigError(f"error radius must be >= 0, got {r}")
        out.append((r, float(np.mean(errors <= r))))
    return out


def partition_subareas(radio_map: RadioMap, n_areas: int = 6, seed: int = 0) -> np.ndarray:
    """Group RP coordinates into ``n_areas`` zones numbered 1.. along x, then y."""
    if not 1 <= n_areas <= radio_map.n_rps:
        raise ConfigError(f"n_areas must lie in [1, {radio_map.n_rps}], got {n_areas}")
    coords = radio_map.coords
    if n_areas == 1:
        return np.ones(radio_map.n_rps, dtype=int)
    km = KMeans(n_clusters=n_areas, n_init=10, random_state=seed).fit(coords)
    order = np.lexsort((km.cluster_centers_[:, 1], km.cluster_centers_[:, 0]))
    rank = np.empty(n_areas, dtype=int)
    rank[order] = np.arange(1, n_areas + 1)
    return rank[km.labels_]


def subarea_testbed(testbed: Testbed, areas: np.ndarray, area: int) -> Testbed:
    """Restrict the map to one zone and keep the queries whose nearest RP lies in it.

    The unlabeled pool is left whole; class matching decides what enters.
    """
    keep = np.flatnonzero(np.asarray(areas) == area)
    if keep.size == 0:
        raise ConfigError(f"area {area} holds no reference points")
    rm = testbed.radio_map
    sub_map = RadioMap(rm.ap_ids, tuple(rm.rps[i] for i in keep), rm.grid_interval)
    d = np.linalg.norm(testbed.query_coords[:, None, :] - rm.coords[None, :, :], axis=2)
    in_area = np.asarray(areas)[np.argmin(d, axis=1)] == area
    idx = np.flatnonzero(in_area)
    return Testbed(testbed.layout, sub_map, tuple(testbed.queries[i] for i in idx),
                   testbed.query_coords[idx], testbed.unlabeled)


@dataclass
class MethodResult:
    label: str
    curve: list[tuple[float, float]] = field(default_factory=list)
    median_error: float | None = None
    mean_error: float | None = None
    macs_per_query: float | None = None
    seconds: float | None = None
    error: str | None = None
    extra: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.error is None

    def accuracy(self, radius: float) -> float:
        for r, a in self.curve:
            if r == radius:
                return a
        raise KeyError(radius)

    def to_dict(self, timing: bool = False) -> dict:
        out = {
            "label": self.label,
            "ok": self.ok,
            "accuracy": [[r, a] for r, a in self.curve],
            "median_error": self.median_error,
            "mean_error": self.mean_error,
            "macs_per_query": self.macs_per_query,
            "error": self.error,
            "extra": self.extra,
        }
        if timing:
            out["seconds"] = self.seconds
        return out


@dataclass
class EvalReport:
    kind: str
    radii: tuple[float, ...]
    query_hash: str
    n_queries: int
    params: dict
    rows: list[MethodResult]
    axis: str | None = None
    timing: bool = False

    def row(self, label: str) -> MethodResult:
        for r in self.rows:
            if r.label == label:
                return r
        raise KeyError(label)

    def best(self, radius: float) -> MethodResult:
        """Highest accuracy at ``radius``; the earliest row wins ties."""
        ok = [r for r in self.rows if r.ok]
        if not ok:
            raise SdelocError("no successful rows in report")
        return max(ok, key=lambda r: (r.accuracy(radius), -self.rows.index(r)))

    def to_dict(self) -> dict:
        out = {
            "kind": self.kind,
            "axis": self.axis,
            "radii": list(self.radii),
            "query_hash": self.query_hash,
            "n_queries": self.n_queries,
            "params": self.params,
            "rows": [r.to_dict(self.timing) for r in self.rows],
        }
        ok = [r for r in self.rows if r.ok]
        if ok:
            out["best"] = {str(rad): self.best(rad).label for rad in self.radii}
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"

    def write_json(self, path) -> None:
        Path(path).write_text(self.to_json())

    def write_csv(self, path) -> None:
        """Long-format curves: one ``label,radius,accuracy`` line per point."""
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["label", "radius", "accuracy"])
            for row in self.rows:
                for r, a in row.curve:
                    w.writerow([row.label, repr(r), repr(a)])


def _summarise(label: str, est, truths, radii, counter: OpCounter, seconds: float, extra=None) -> MethodResult:
    errors = position_errors(est, truths)
    return MethodResult(
        label=label,
        curve=error_cdf(est, truths, radii),
        median_error=float(np.median(errors)),
        mean_error=float(np.mean(errors)),
        macs_per_query=counter.per_query,
        seconds=seconds,
        extra=extra or {},
    )


def evaluate_knn(testbed: Testbed, params: TrainParams, radii=DEFAULT_RADII, label: str = "knn") -> MethodResult:
    rm = testbed.radio_map
    q = fill_missing_batch(list(testbed.queries), resolve_fill(params, rm.fingerprints))
    counter = OpCounter()
    start = time.perf_counter()
    est = locate_arrays(q, rm.fingerprints, rm.coords, params.knn_k, counter)[0]
    return _summarise(label, est, testbed.query_coords, radii, counter, time.perf_counter() - start)


def evaluate_model(model, testbed: Testbed, radii=DEFAULT_RADII, label: str = "sde") -> MethodResult:
    counter = OpCounter()
    start = time.perf_counter()
    est = locate_sde_arrays(model, list(testbed.queries), counter=counter)[0]
    extra = {
        "dim": model.dim,
        "admitted": int(model.provenance.get("admitted_count", 0)),
        "rejected": int(model.provenance.get("rejected_count", 0)),
        "within_scatter_pd": bool(model.provenance.get("within_scatter_pd", True)),
    }
    return _summarise(label, est, testbed.query_coords, radii, counter, time.perf_counter() - start, extra)


def _params_dict(params: TrainParams) -> dict:
    return {k: (v if not isinstance(v, np.generic) else v.item()) for k, v in params.to_dict().items()}


def compare_methods(testbed: Testbed, params: TrainParams, radii=DEFAULT_RADII,
                    methods: Sequence[str] = METHODS, timing: bool = False) -> EvalReport:
    """Raw KNN, LDE-KNN (nothing admitted) and SDE-KNN on one shared query set."""
    unknown = [m for m in methods if m not in METHODS]
    if unknown:
        raise ConfigError(f"unknown method(s) {unknown}; choose from {', '.join(METHODS)}")
    rows = []
    clusters = fit_clusters(testbed.radio_map, params) if {"lde", "sde"} & set(methods) else None
    for method in methods:
        if method == "knn":
            rows.append(evaluate_knn(testbed, params, radii))
            continue
        start = time.perf_counter()
        try:
            if method == "lde":
                model = train_lde(testbed.radio_map, params, clusters)
            else:
                model = train_sde(testbed.radio_map, testbed.unlabeled, params, clusters)
        except SdelocError as exc:
            rows.append(MethodResult(method, error=str(exc)))
            continue
        train_seconds = time.perf_counter() - start
        row = evaluate_model(model, testbed, radii, method)
        if timing:
            row.extra["train_seconds"] = train_seconds
        rows.append(row)
    return EvalReport("compare", tuple(sorted(radii)), testbed.query_hash(), len(testbed.queries),
                      _params_dict(params), rows, timing=timing)


def _coerce(axis: str, value):
    if axis in ("intrinsic_dim", "n_clusters", "affinity_k"):
        if axis == "intrinsic_dim" and value == AUTO:
            return AUTO
        if float(value) != int(float(value)):
            raise ConfigError(f"{axis} takes integer values, got {value!r}")
        return int(float(value))
    return float(value)


def run_sweep(testbed: Testbed, axis: str, values, base_params: TrainParams, radii=DEFAULT_RADII,
              timing: bool = False) -> EvalReport:
    """Train and evaluate one SDE-KNN model per value of ``axis``.

    Every point uses the same testbed, queries and seed; a point that fails
    to train is recorded with its error and the sweep moves on.
    """
    if axis not in SWEEP_AXES:
        raise ConfigError(f"unknown sweep axis {axis!r}; choose from {', '.join(SWEEP_AXES)}")
    values = list(values)
    if not values:
        raise ConfigError("sweep needs at least one value")
    coerced = [_coerce(axis, v) for v in values]
    for v in coerced:
        base_params.replace(**{axis: v})  # domain check before any training
    rows = []
    clusters = None if axis == "n_clusters" else fit_clusters(testbed.radio_map, base_params)
    for v in coerced:
        params = base_params.replace(**{axis: v})
        label = f"{axis}={v}"
        start = time.perf_counter()
        try:
            cl = clusters if clusters is not None else fit_clusters(testbed.radio_map, params)
            model = train_sde(testbed.radio_map, testbed.unlabeled, params, cl)
        except SdelocError as exc:
            rows.append(MethodResult(label, error=str(exc), extra={"value": v}))
            continue
        row = evaluate_model(model, testbed, radii, label)
        row.extra["value"] = v
        if timing:
            row.extra["train_seconds"] = time.perf_counter() - start
        rows.append(row)
    if axis == "reg_sigma":
        ok = [r for r in rows if r.ok]
        if len(ok) > 1:
            spread = {str(rad): float(np.var([r.accuracy(rad) for r in ok])) for rad in sorted(radii)}
            for r in ok:
                r.extra["accuracy_variance_across_sweep"] = spread
    return EvalReport("sweep", tuple(sorted(radii)), testbed.query_hash(), len(testbed.queries),
                      _params_dict(base_params), rows, axis=axis, timing=timing)


def select_intrinsic_dim(validation: Testbed, params: TrainParams, radius: float = 1.0,
                         values=None) -> int:
    """Best embedding dimension at ``radius`` on a held-out query set (smallest d on ties)."""
    n = validation.radio_map.n_aps
    values = range(1, n + 1) if values is None else values
    report = run_sweep(validation, "intrinsic_dim", values, params, (radius,))
    return int(report.best(radius).extra["value"])
