"""Data model, validation and persistence for radio maps and trained models."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Iterable, Sequence, Union

import numpy as np

RSS_MIN = -110.0
RSS_MAX = 0.0
MODEL_VERSION = "sdeloc-model/1"
AUTO = "auto"


class SdelocError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(SdelocError, ValueError):
    """A parameter lies outside its domain."""


class ParseError(SdelocError):
    """A radio-map or query file could not be parsed."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class SchemaError(SdelocError):
    """Fingerprint lengths disagree with the AP roster."""


class ValidationError(SdelocError):
    """Domain invariant violated (duplicate RP coordinates, out-of-range RSS, ...)."""


class ModelFormatError(SdelocError):
    """A model file is truncated, has the wrong version or inconsistent shapes."""


class SolverError(SdelocError):
    """The generalized eigenproblem could not be solved."""


class DegenerateClusterError(SdelocError):
    """A cluster carries zero total membership."""


@dataclass(frozen=True, eq=False)
class RssVector:
    """One fingerprint observation: per-AP dBm values plus a not-heard mask."""

    values: np.ndarray
    missing: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float).copy()
        missing = np.asarray(self.missing, dtype=bool).copy()
        if values.ndim != 1 or missing.shape != values.shape:
            raise SchemaError(
                f"values and missing mask must be 1-D of equal length, got {values.shape} and {missing.shape}"
            )
        heard = values[~missing]
        if heard.size and (np.any(heard < RSS_MIN) or np.any(heard > RSS_MAX) or not np.all(np.isfinite(heard))):
            raise ValidationError(f"RSS values must lie in [{RSS_MIN}, {RSS_MAX}] dBm")
        values[missing] = np.nan
        values.setflags(write=False)
        missing.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "missing", missing)

    @classmethod
    def complete(cls, values) -> "RssVector":
        values = np.asarray(values, dtype=float)
        return cls(values, np.zeros(values.shape, dtype=bool))

    def __len__(self) -> int:
        return self.values.shape[0]

    def __eq__(self, other) -> bool:
        if not isinstance(other, RssVector):
            return NotImplemented
        return np.array_equal(self.missing, other.missing) and np.array_equal(
            self.values, other.values, equal_nan=True
        )

    def __hash__(self):
        return hash((self.values.tobytes(), self.missing.tobytes()))


def aggregate_samples(samples: Sequence[RssVector], fill_dbm: float = 0.0) -> RssVector:
    """Per-AP mean over the samples that heard the AP; never-heard APs get ``fill_dbm``."""
    if not samples:
        raise ValidationError("cannot aggregate an empty sample list")
    values = np.vstack([s.values for s in samples])
    heard = ~np.vstack([s.missing for s in samples])
    counts = heard.sum(axis=0)
    sums = np.where(heard, values, 0.0).sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = sums / counts
    mean = np.where(counts > 0, mean, fill_dbm)
    return RssVector.complete(mean)


@dataclass(frozen=True, eq=False)
class ReferencePoint:
    coord: tuple[float, float]
    samples: tuple[RssVector, ...]
    fingerprint: RssVector

    @classmethod
    def from_samples(cls, coord, samples: Iterable[RssVector], fill_dbm: float = 0.0) -> "ReferencePoint":
        samples = tuple(samples)
        return cls((float(coord[0]), float(coord[1])), samples, aggregate_samples(samples, fill_dbm))

    def __eq__(self, other) -> bool:
        if not isinstance(other, ReferencePoint):
            return NotImplemented
        return (
            self.coord == other.coord
            and len(self.samples) == len(other.samples)
            and all(a == b for a, b in zip(self.samples, other.samples))
            and self.fingerprint == other.fingerprint
        )


@dataclass(frozen=True, eq=False)
class RadioMap:
    """Offline database: AP roster and reference points with sample sets."""

    ap_ids: tuple[str, ...]
    rps: tuple[ReferencePoint, ...]
    grid_interval: float

    def __post_init__(self):
        object.__setattr__(self, "ap_ids", tuple(str(a) for a in self.ap_ids))
        object.__setattr__(self, "rps", tuple(self.rps))
        if not self.grid_interval > 0:
            raise ValidationError(f"grid_interval must be > 0, got {self.grid_interval}")
        if len(set(self.ap_ids)) != len(self.ap_ids):
            raise ValidationError("duplicate AP identifiers")
        n = len(self.ap_ids)
        seen = set()
        for idx, rp in enumerate(self.rps):
            if not rp.samples:
                raise ValidationError(f"reference point {idx} at {rp.coord} has no samples")
            if len(rp.fingerprint) != n or any(len(s) != n for s in rp.samples):
                raise SchemaError(f"reference point {idx} has fingerprint length != {n} APs")
            if np.any(rp.fingerprint.missing):
                raise ValidationError(f"reference point {idx} fingerprint has missing entries")
            if rp.coord in seen:
                raise ValidationError(f"duplicate reference point coordinates {rp.coord}")
            seen.add(rp.coord)
        fps = np.vstack([rp.fingerprint.values for rp in self.rps]) if self.rps else np.zeros((0, n))
        crd = np.array([rp.coord for rp in self.rps], dtype=float).reshape(-1, 2)
        fps.setflags(write=False)
        crd.setflags(write=False)
        object.__setattr__(self, "_fingerprints", fps)
        object.__setattr__(self, "_coords", crd)

    @property
    def n_aps(self) -> int:
        return len(self.ap_ids)

    @property
    def n_rps(self) -> int:
        return len(self.rps)

    @property
    def fingerprints(self) -> np.ndarray:
        """N x n matrix, one aggregated fingerprint per row."""
        return self._fingerprints

    @property
    def coords(self) -> np.ndarray:
        return self._coords

    def __eq__(self, other) -> bool:
        if not isinstance(other, RadioMap):
            return NotImplemented
        return (
            self.ap_ids == other.ap_ids
            and self.grid_interval == other.grid_interval
            and len(self.rps) == len(other.rps)
            and all(a == b for a, b in zip(self.rps, other.rps))
        )


def _check_positive(name, value, integer=False):
    if integer and (isinstance(value, bool) or not isinstance(value, (int, np.integer))):
        raise ConfigError(f"{name} must be a positive integer, got {value!r}")
    if not (isinstance(value, (int, float, np.integer, np.floating)) and value > 0 and math.isfinite(value)):
        raise ConfigError(f"{name} must be positive, got {value!r}")


@dataclass(frozen=True)
class TrainParams:
    """Every knob of KFCM labelling, CM-SDE training and KNN matching.

    ``heat_t`` and ``kernel_lambda`` accept ``None`` to select the data-driven
    defaults (mean squared edge length, median heuristic).  ``fill_dbm`` is
    either a fixed dBm value for unheard APs or ``"auto"``, the mean RSS of
    the labeled fingerprints.
    """

    intrinsic_dim: Union[int, str] = AUTO
    n_clusters: int = 2
    affinity_k: int = 6
    heat_t: float | None = None
    kernel_lambda: float | None = None
    reg_sigma: float = 1e-8
    fuzzifier_m: float = 2.0
    converge_eps: float = 1e-6
    max_iter: int = 100
    match_eps: float = 6.0
    match_threshold: int = 13
    update_ratio: float = 0.2
    knn_k: int = 3
    fill_dbm: Union[float, str] = AUTO
    seed: int = 0
    dim_energy: float = 0.95

    def __post_init__(self):
        if self.intrinsic_dim != AUTO:
            _check_positive("intrinsic_dim", self.intrinsic_dim, integer=True)
        for name in ("n_clusters", "affinity_k", "max_iter", "match_threshold", "knn_k"):
            _check_positive(name, getattr(self, name), integer=True)
        for name in ("reg_sigma", "converge_eps", "match_eps"):
            _check_positive(name, getattr(self, name))
        for name in ("heat_t", "kernel_lambda"):
            if getattr(self, name) is not None:
                _check_positive(name, getattr(self, name))
        if not self.fuzzifier_m > 1:
            raise ConfigError(f"fuzzifier_m must be > 1, got {self.fuzzifier_m!r}")
        if not 0 < self.update_ratio <= 1:
            raise ConfigError(f"update_ratio must lie in (0, 1], got {self.update_ratio!r}")
        if not 0 < self.dim_energy < 1:
            raise ConfigError(f"dim_energy must lie in (0, 1), got {self.dim_energy!r}")
        if self.fill_dbm != AUTO and not (
            isinstance(self.fill_dbm, (int, float, np.integer, np.floating)) and math.isfinite(self.fill_dbm)
        ):
            raise ConfigError(f"fill_dbm must be a finite dBm value or 'auto', got {self.fill_dbm!r}")
        if isinstance(self.seed, bool) or not isinstance(self.seed, (int, np.integer)):
            raise ConfigError(f"seed must be an integer, got {self.seed!r}")

    def replace(self, **changes) -> "TrainParams":
        values = asdict(self)
        unknown = set(changes) - set(values)
        if unknown:
            raise ConfigError(f"unknown training parameter(s): {', '.join(sorted(unknown))}")
        values.update(changes)
        return TrainParams(**values)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "TrainParams":
        names = {f.name for f in fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ConfigError(f"unknown training parameter(s): {', '.join(sorted(unknown))}")
        return cls(**data)


@dataclass(frozen=True, eq=False)
class EmbeddingModel:
    """Trained CM-SDE artifact.

    ``embedding`` is n x d, ``drold`` is d x m' (one column per labeled
    fingerprint).  The training fingerprints are kept so that DROLD can be
    re-derived and online updates can re-solve the eigenproblem.
    """

    ap_ids: tuple[str, ...]
    embedding: np.ndarray
    drold: np.ndarray
    coords: np.ndarray
    labels: np.ndarray
    params: TrainParams
    labeled_rss: np.ndarray
    admitted_rss: np.ndarray
    admitted_labels: np.ndarray
    eigenvalues: np.ndarray
    fill_value: float = 0.0
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        conv = {
            "embedding": (float, 2),
            "drold": (float, 2),
            "coords": (float, 2),
            "labels": (int, 1),
            "labeled_rss": (float, 2),
            "admitted_rss": (float, 2),
            "admitted_labels": (int, 1),
            "eigenvalues": (float, 1),
        }
        for name, (dtype, ndim) in conv.items():
            arr = np.array(getattr(self, name), dtype=dtype)
            if name == "admitted_rss" and arr.size == 0:
                arr = arr.reshape(0, len(self.ap_ids))
            if arr.ndim != ndim:
                raise ModelFormatError(f"{name} must be {ndim}-D, got shape {arr.shape}")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "ap_ids", tuple(str(a) for a in self.ap_ids))
        object.__setattr__(self, "provenance", dict(self.provenance))
        object.__setattr__(self, "fill_value", float(self.fill_value))
        self.validate()

    @property
    def n_aps(self) -> int:
        return self.embedding.shape[0]

    @property
    def dim(self) -> int:
        return self.embedding.shape[1]

    def validate(self, tol: float = 1e-9) -> None:
        n, d = self.embedding.shape
        if n != len(self.ap_ids):
            raise ModelFormatError(f"embedding has {n} rows but {len(self.ap_ids)} APs")
        if not 1 <= d <= n:
            raise ModelFormatError(f"embedding dimension d={d} outside [1, {n}]")
        if self.drold.shape[0] != d:
            raise ModelFormatError(f"drold has {self.drold.shape[0]} rows, embedding has d={d}")
        m = self.drold.shape[1]
        if self.coords.shape != (m, 2) or self.labels.shape != (m,) or self.labeled_rss.shape != (m, n):
            raise ModelFormatError("drold, coords, labels and labeled_rss disagree on the labeled count")
        if self.admitted_rss.shape[1] != n or self.admitted_labels.shape[0] != self.admitted_rss.shape[0]:
            raise ModelFormatError("admitted_rss and admitted_labels disagree")
        if self.eigenvalues.shape != (d,):
            raise ModelFormatError("one eigenvalue per embedding column expected")
        rederived = self.embedding.T @ self.labeled_rss.T
        scale = max(1.0, float(np.max(np.abs(rederived), initial=0.0)))
        if m and np.max(np.abs(rederived - self.drold)) > tol * scale:
            raise ModelFormatError("drold is not the projection of the stored labeled fingerprints")

    def __eq__(self, other) -> bool:
        if not isinstance(other, EmbeddingModel):
            return NotImplemented
        arrays = ("embedding", "drold", "coords", "labels", "labeled_rss", "admitted_rss", "admitted_labels", "eigenvalues")
        return (
            self.ap_ids == other.ap_ids
            and self.params == other.params
            and self.fill_value == other.fill_value
            and self.provenance == other.provenance
            and all(
                getattr(self, a).shape == getattr(other, a).shape and np.array_equal(getattr(self, a), getattr(other, a))
                for a in arrays
            )
        )


# --- radio-map CSV ---------------------------------------------------------

def _ap_columns(header: list[str], path) -> list[str]:
    ap_ids = []
    for col in header:
        if not col.startswith("ap_") or len(col) == 3:
            raise ParseError(f"{path}: unexpected column {col!r}; expected ap_<id>", line=1)
        ap_ids.append(col[3:])
    return ap_ids


def _parse_rss_cells(cells: list[str], lineno: int) -> RssVector:
    values = np.zeros(len(cells))
    missing = np.zeros(len(cells), dtype=bool)
    for j, cell in enumerate(cells):
        cell = cell.strip()
        if cell == "":
            missing[j] = True
            continue
        try:
            values[j] = float(cell)
        except ValueError:
            raise ParseError(f"non-numeric RSS value {cell!r}", line=lineno) from None
    try:
        return RssVector(values, missing)
    except ValidationError as exc:
        raise ParseError(str(exc), line=lineno) from None


def _format_float(value: float) -> str:
    return repr(float(value))


def read_rss_table(path) -> tuple[list[str], list[tuple[float, float] | None], list[RssVector]]:
    """Read an ``[x,y,]ap_<id>...`` CSV of single observations.

    Coordinates are optional; rows without them (or with empty x/y cells)
    yield ``None``.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty file", line=1) from None
        header = [h.strip() for h in header]
        has_xy = header[:2] == ["x", "y"]
        ap_ids = _ap_columns(header[2:] if has_xy else header, path)
        if not ap_ids:
            raise ParseError(f"{path}: no AP columns", line=1)
        coords, rows = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(c.strip() == "" for c in row):
                continue
            if len(row) != len(header):
                raise SchemaError(f"{path}: line {lineno} has {len(row)} cells, header has {len(header)}")
            if has_xy:
                xs, ys = row[0].strip(), row[1].strip()
                if xs == "" and ys == "":
                    coords.append(None)
                else:
                    try:
                        coords.append((float(xs), float(ys)))
                    except ValueError:
                        raise ParseError(f"bad coordinate ({xs!r}, {ys!r})", line=lineno) from None
                row = row[2:]
            else:
                coords.append(None)
            rows.append(_parse_rss_cells(row, lineno))
    return ap_ids, coords, rows


def write_rss_table(path, ap_ids: Sequence[str], rows: Sequence[RssVector], coords=None) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        header = ([] if coords is None else ["x", "y"]) + [f"ap_{a}" for a in ap_ids]
        writer.writerow(header)
        for i, rss in enumerate(rows):
            cells = ["" if miss else _format_float(v) for v, miss in zip(rss.values, rss.missing)]
            if coords is not None:
                c = coords[i]
                cells = (["", ""] if c is None else [_format_float(c[0]), _format_float(c[1])]) + cells
            writer.writerow(cells)


def _infer_grid_interval(coords: np.ndarray) -> float:
    steps = []
    for axis in range(2):
        u = np.unique(coords[:, axis])
        if u.size > 1:
            steps.append(float(np.min(np.diff(u))))
    return min(steps) if steps else 1.0


def load_radio_map(path, fill_dbm: float = 0.0, grid_interval: float | None = None) -> RadioMap:
    """Load a per-sample radio-map CSV, grouping consecutive rows by coordinate.

    Samples of one reference point must be contiguous; a coordinate that
    reappears after another RP is reported as a duplicate.
    """
    ap_ids, coords, rows = read_rss_table(path)
    groups: list[tuple[tuple[float, float], list[RssVector]]] = []
    for i, (c, rss) in enumerate(zip(coords, rows)):
        if c is None:
            raise ParseError("radio-map rows need x and y coordinates", line=i + 2)
        if groups and groups[-1][0] == c:
            groups[-1][1].append(rss)
        else:
            groups.append((c, [rss]))
    if not groups:
        raise ValidationError(f"{path}: radio map has no reference points")
    rps = [ReferencePoint.from_samples(c, s, fill_dbm) for c, s in groups]
    if grid_interval is None:
        grid_interval = _infer_grid_interval(np.array([c for c, _ in groups], dtype=float))
    return RadioMap(tuple(ap_ids), tuple(rps), grid_interval)


def save_radio_map(radio_map: RadioMap, path) -> None:
    rows, coords = [], []
    for rp in radio_map.rps:
        for s in rp.samples:
            rows.append(s)
            coords.append(rp.coord)
    write_rss_table(path, radio_map.ap_ids, rows, coords)


# --- model JSON ---------------------------------------------------------------

def _row_major(a: np.ndarray) -> list:
    return [[float(v) for v in row] for row in a]


def model_to_dict(model: EmbeddingModel) -> dict:
    return {
        "version": MODEL_VERSION,
        "ap_ids": list(model.ap_ids),
        "embedding": _row_major(model.embedding),
        "drold": _row_major(model.drold),
        "coords": _row_major(model.coords),
        "labels": [int(v) for v in model.labels],
        "eigenvalues": [float(v) for v in model.eigenvalues],
        "labeled_rss": _row_major(model.labeled_rss),
        "admitted_rss": _row_major(model.admitted_rss),
        "admitted_labels": [int(v) for v in model.admitted_labels],
        "fill_value": float(model.fill_value),
        "params": model.params.to_dict(),
        "provenance": model.provenance,
    }


def model_from_dict(data: dict) -> EmbeddingModel:
    if not isinstance(data, dict):
        raise ModelFormatError("model file must hold a JSON object")
    if data.get("version") != MODEL_VERSION:
        raise ModelFormatError(f"unsupported model version {data.get('version')!r}, expected {MODEL_VERSION!r}")
    required = ("ap_ids", "embedding", "drold", "coords", "labels", "eigenvalues", "labeled_rss",
                "admitted_rss", "admitted_labels", "params", "provenance")
    missing = [k for k in required if k not in data]
    if missing:
        raise ModelFormatError(f"model file lacks field(s): {', '.join(missing)}")
    n = len(data["ap_ids"])
    try:
        params = TrainParams.from_dict(data["params"])
        drold = np.array(data["drold"], dtype=float)
        if drold.size == 0:
            drold = drold.reshape(len(data["embedding"][0]) if data["embedding"] else 0, 0)
        labeled = np.array(data["labeled_rss"], dtype=float).reshape(-1, n)
        admitted = np.array(data["admitted_rss"], dtype=float).reshape(-1, n)
        coords = np.array(data["coords"], dtype=float).reshape(-1, 2)
        return EmbeddingModel(
            ap_ids=tuple(data["ap_ids"]),
            embedding=np.array(data["embedding"], dtype=float),
            drold=drold,
            coords=coords,
            labels=np.array(data["labels"], dtype=int),
            params=params,
            labeled_rss=labeled,
            admitted_rss=admitted,
            admitted_labels=np.array(data["admitted_labels"], dtype=int),
            eigenvalues=np.array(data["eigenvalues"], dtype=float),
            fill_value=float(data.get("fill_value", 0.0)),
            provenance=data["provenance"],
        )
    except (TypeError, ValueError) as exc:
        raise ModelFormatError(f"malformed model field: {exc}") from None


def save_model(model: EmbeddingModel, path) -> None:
    text = json.dumps(model_to_dict(model), indent=1, sort_keys=True)
    Path(path).write_text(text + "\n")


def load_model(path) -> EmbeddingModel:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"{path}: not a complete JSON document ({exc.msg} at line {exc.lineno})") from None
    return model_from_dict(data)
