"""Synthetic hallway testbed: log-distance path loss with shadowing and AP dropout."""

from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass

import numpy as np

from .core import RSS_MAX, RSS_MIN, ConfigError, RadioMap, ReferencePoint, RssVector


@dataclass(frozen=True)
class SimConfig:
    hallway_length: float = 50.0
    hallway_width: float = 2.0
    grid_interval: float = 0.5
    n_aps: int = 27
    pathloss_exponent: float = 3.0
    tx_power_at_1m: float = -35.0
    shadowing_sigma: float = 4.0
    samples_per_rp: int = 4
    dropout_prob: float = 0.0
    # APs sit in the rooms either side of the hallway, this far from its walls
    ap_setback_min: float = 1.0
    ap_setback_max: float = 8.0
    n_queries: int = 500
    query_samples: int = 1
    n_unlabeled: int = 2020
    unlabeled_samples: int = 1
    fill_dbm: float = 0.0
    seed: int = 0
    # geometry stream, kept apart from ``seed`` so noise can vary over a fixed floor plan
    layout_seed: int = 0

    def __post_init__(self):
        for name in ("hallway_length", "hallway_width", "grid_interval", "pathloss_exponent"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be > 0, got {getattr(self, name)!r}")
        for name in ("n_aps", "samples_per_rp", "query_samples", "unlabeled_samples"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, (int, np.integer)) or v < 1:
                raise ConfigError(f"{name} must be a positive integer, got {v!r}")
        for name in ("n_queries", "n_unlabeled"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, (int, np.integer)) or v < 0:
                raise ConfigError(f"{name} must be a non-negative integer, got {v!r}")
        if self.shadowing_sigma < 0:
            raise ConfigError(f"shadowing_sigma must be >= 0, got {self.shadowing_sigma!r}")
        if not 0 <= self.dropout_prob < 1:
            raise ConfigError(f"dropout_prob must lie in [0, 1), got {self.dropout_prob!r}")
        if not 0 <= self.ap_setback_min <= self.ap_setback_max:
            raise ConfigError("need 0 <= ap_setback_min <= ap_setback_max")

    def replace(self, **changes) -> "SimConfig":
        values = asdict(self)
        unknown = set(changes) - set(values)
        if unknown:
            raise ConfigError(f"unknown simulation parameter(s): {', '.join(sorted(unknown))}")
        values.update(changes)
        return SimConfig(**values)


@dataclass(frozen=True, eq=False)
class Layout:
    config: SimConfig
    ap_positions: np.ndarray  # n_aps x 2
    rp_coords: np.ndarray  # N x 2, row-major over (x, y)

    @property
    def ap_ids(self) -> tuple[str, ...]:
        return tuple(f"{i + 1:02d}" for i in range(self.config.n_aps))

    def __eq__(self, other):
        if not isinstance(other, Layout):
            return NotImplemented
        return (
            self.config == other.config
            and np.array_equal(self.ap_positions, other.ap_positions)
            and np.array_equal(self.rp_coords, other.rp_coords)
        )


@dataclass(frozen=True, eq=False)
class Testbed:
    """A radio map plus evaluation queries and an unlabeled crowd-sourced pool."""

    layout: Layout
    radio_map: RadioMap
    queries: tuple[RssVector, ...]
    query_coords: np.ndarray
    unlabeled: tuple[RssVector, ...]

    def query_hash(self) -> str:
        h = hashlib.sha256()
        for q in self.queries:
            h.update(np.nan_to_num(q.values, nan=np.inf).tobytes())
            h.update(q.missing.tobytes())
        h.update(np.ascontiguousarray(self.query_coords).tobytes())
        return h.hexdigest()


def _grid_axis(extent: float, step: float) -> np.ndarray:
    count = int(np.floor(extent / step + 1e-9)) + 1
    return np.arange(count) * step


def generate_layout(config: SimConfig) -> Layout:
    """Place RPs on a regular grid inside the hallway and APs in rooms beside it."""
    xs = _grid_axis(config.hallway_length, config.grid_interval)
    ys = _grid_axis(config.hallway_width, config.grid_interval)
    if xs.size == 0 or ys.size == 0:
        raise ConfigError("grid produces zero reference points")
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    rp_coords = np.column_stack([gx.ravel(), gy.ravel()])

    rng = np.random.default_rng([config.layout_seed, 0])
    n = config.n_aps
    slot = config.hallway_length / n
    ap_x = (np.arange(n) + rng.uniform(0.0, 1.0, n)) * slot
    setback = rng.uniform(config.ap_setback_min, config.ap_setback_max, n)
    side = np.where(np.arange(n) % 2 == 0, -1.0, 1.0)
    ap_y = np.where(side < 0, -setback, config.hallway_width + setback)
    return Layout(config, np.column_stack([ap_x, ap_y]), rp_coords)


def mean_rss(layout: Layout, points) -> np.ndarray:
    """Noise-free received power (dBm) for each point and AP, shape (P, n)."""
    cfg = layout.config
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    dist = np.linalg.norm(pts[:, None, :] - layout.ap_positions[None, :, :], axis=2)
    return cfg.tx_power_at_1m - 10.0 * cfg.pathloss_exponent * np.log10(np.maximum(dist, 1.0))


def sample_rss_batch(layout: Layout, points, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    cfg = layout.config
    mu = mean_rss(layout, points)
    values = mu + rng.normal(0.0, cfg.shadowing_sigma, size=mu.shape) if cfg.shadowing_sigma > 0 else mu.copy()
    missing = rng.random(mu.shape) < cfg.dropout_prob
    np.clip(values, RSS_MIN, RSS_MAX, out=values)
    return values, missing


def sample_rss(layout: Layout, point, rng: np.random.Generator) -> RssVector:
    values, missing = sample_rss_batch(layout, [point], rng)
    return RssVector(values[0], missing[0])


def _average_observations(values: np.ndarray, missing: np.ndarray) -> RssVector:
    # several scans at one spot: mean over heard scans, missing only if never heard
    heard = ~missing
    counts = heard.sum(axis=0)
    sums = np.where(heard, values, 0.0).sum(axis=0)
    mean = np.divide(sums, counts, out=np.zeros_like(sums), where=counts > 0)
    return RssVector(mean, counts == 0)


def _uniform_points(cfg: SimConfig, count: int, rng: np.random.Generator, avoid: set) -> np.ndarray:
    pts = np.empty((count, 2))
    filled = 0
    while filled < count:
        p = rng.uniform((0.0, 0.0), (cfg.hallway_length, cfg.hallway_width))
        if (float(p[0]), float(p[1])) in avoid:
            continue
        pts[filled] = p
        filled += 1
    return pts


def build_synthetic_radio_map(config: SimConfig) -> Testbed:
    """Simulate the full testbed deterministically from ``config.seed``.

    Geometry comes from ``layout_seed``; sample noise, query positions and
    the unlabeled pool each draw from their own stream of ``seed``.
    """
    layout = generate_layout(config)
    cfg = config
    rp_rng = np.random.default_rng([cfg.seed, 1])
    rps = []
    for coord in layout.rp_coords:
        values, missing = sample_rss_batch(layout, np.repeat(coord[None, :], cfg.samples_per_rp, axis=0), rp_rng)
        samples = [RssVector(v, m) for v, m in zip(values, missing)]
        rps.append(ReferencePoint.from_samples(coord, samples, cfg.fill_dbm))
    radio_map = RadioMap(layout.ap_ids, tuple(rps), cfg.grid_interval)

    avoid = {(float(x), float(y)) for x, y in layout.rp_coords}
    q_rng = np.random.default_rng([cfg.seed, 2])
    q_coords = _uniform_points(cfg, cfg.n_queries, q_rng, avoid)
    queries = []
    for p in q_coords:
        values, missing = sample_rss_batch(layout, np.repeat(p[None, :], cfg.query_samples, axis=0), q_rng)
        queries.append(_average_observations(values, missing))

    u_rng = np.random.default_rng([cfg.seed, 3])
    u_coords = _uniform_points(cfg, cfg.n_unlabeled, u_rng, avoid)
    unlabeled = []
    for p in u_coords:
        values, missing = sample_rss_batch(layout, np.repeat(p[None, :], cfg.unlabeled_samples, axis=0), u_rng)
        unlabeled.append(_average_observations(values, missing))
    unlabeled = tuple(unlabeled)
    return Testbed(layout, radio_map, tuple(queries), q_coords, unlabeled)
