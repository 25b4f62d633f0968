import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial import Delaunay

from sdeloc.core import ConfigError, EmbeddingModel, RssVector, SchemaError, TrainParams
from sdeloc.locate import (
    OpCounter,
    euclid,
    fill_missing,
    k_smallest,
    knn_locate,
    knn_locate_batch,
    knn_macs,
    locate_sde,
    locate_sde_batch,
    sde_macs,
)
from sdeloc.sde import train_sde


def brute_force_fix(query, fingerprints, coords, k):
    # scalar loops and a full stable sort, independent of the vectorised path
    dists = []
    for j, f in enumerate(fingerprints):
        dists.append((math.sqrt(sum((q - v) ** 2 for q, v in zip(query, f))), j))
    dists.sort()
    chosen = [j for _, j in dists[:k]]
    return (sum(coords[j][0] for j in chosen) / k, sum(coords[j][1] for j in chosen) / k), chosen


def test_euclid():
    assert euclid([1, 2], [1, 2]) == 0.0
    assert euclid([0, 3], [4, 0]) == 5.0
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=27), rng.normal(size=27)
    assert euclid(a, b) == pytest.approx(math.sqrt(sum((x - y) ** 2 for x, y in zip(a, b))), abs=1e-12)
    with pytest.raises(SchemaError):
        euclid([1, 2], [1, 2, 3])


def test_fill_missing():
    v = RssVector.complete([-50.0, -60.0])
    np.testing.assert_array_equal(fill_missing(v), [-50.0, -60.0])
    empty = RssVector(np.zeros(3), np.ones(3, dtype=bool))
    np.testing.assert_array_equal(fill_missing(empty, 0.0), [0.0, 0.0, 0.0])
    mixed = RssVector([-40.0, -1.0, -70.0], [False, True, False])
    out = fill_missing(mixed, -100.0)
    assert out[1] == -100.0 and out[0] == -40.0


def test_knn_exact_match():
    rng = np.random.default_rng(1)
    f = rng.uniform(-90, -30, (20, 5))
    coords = rng.uniform(0, 10, (20, 2))
    fix = knn_locate(f[7], f, coords, 1)
    assert fix.coord == tuple(coords[7])
    assert fix.neighbor_ids == (7,)


def test_knn_centroid_of_two():
    f = np.array([[-50.0], [-70.0]])
    fix = knn_locate([-60.0], f, [[0.0, 0.0], [1.0, 0.0]], 2)
    assert fix.coord == (0.5, 0.0)


def test_knn_brute_force_200_queries():
    rng = np.random.default_rng(2)
    f = rng.uniform(-90, -30, (150, 27))
    coords = rng.uniform(0, 50, (150, 2))
    queries = rng.uniform(-90, -30, (200, 27))
    fixes = knn_locate_batch(queries, f, coords, 3)
    for q, fix in zip(queries, fixes):
        want, chosen = brute_force_fix(q, f, coords, 3)
        assert list(fix.neighbor_ids) == chosen
        assert fix.coord == pytest.approx(want, abs=1e-12)


def test_k_smallest_ties_lower_index():
    d = np.array([[1.0, 0.0, 1.0, 1.0, 0.0]])
    np.testing.assert_array_equal(k_smallest(d, 3), [[1, 4, 0]])
    np.testing.assert_array_equal(k_smallest(d, 5), [[1, 4, 0, 2, 3]])


@given(st.integers(0, 10_000), st.integers(1, 6))
@settings(max_examples=40, deadline=None)
def test_k_smallest_matches_stable_sort(seed, k):
    rng = np.random.default_rng(seed)
    d = rng.integers(0, 4, (5, 9)).astype(float)  # many ties
    np.testing.assert_array_equal(k_smallest(d, k), np.argsort(d, axis=1, kind="stable")[:, :k])


def test_fix_inside_hull():
    rng = np.random.default_rng(3)
    f = rng.uniform(-90, -30, (60, 6))
    coords = rng.uniform(0, 20, (60, 2))
    for q in rng.uniform(-90, -30, (30, 6)):
        fix = knn_locate(q, f, coords, 4)
        hull = Delaunay(coords[list(fix.neighbor_ids)])
        assert hull.find_simplex(np.array(fix.coord), tol=1e-9) >= 0


def test_permutation_invariance_tie_free():
    rng = np.random.default_rng(4)
    f = rng.uniform(-90, -30, (40, 5))
    coords = rng.uniform(0, 20, (40, 2))
    perm = rng.permutation(40)
    for q in rng.uniform(-90, -30, (25, 5)):
        a = knn_locate(q, f, coords, 3).coord
        b = knn_locate(q, f[perm], coords[perm], 3).coord
        assert a == pytest.approx(b, abs=1e-12)


def test_permutation_with_ties_stays_in_tied_class():
    f = np.array([[0.0], [2.0], [2.0], [-2.0]])
    coords = np.array([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0], [3.0, 0.0]])
    allowed = {(0.5, 0.0), (1.5, 0.0)}  # RP 0 plus one of the three tied at distance 2
    perm = np.array([3, 2, 1, 0])
    for ff, cc in ((f, coords), (f[perm], coords[perm])):
        assert knn_locate([0.0], ff, cc, 2).coord in allowed


def test_knn_config_errors():
    f = np.zeros((3, 2))
    with pytest.raises(ConfigError):
        knn_locate([0, 0], f, np.zeros((3, 2)), 4)
    with pytest.raises(SchemaError):
        knn_locate([0, 0, 0], f, np.zeros((3, 2)), 1)


@pytest.fixture(scope="module")
def model(small_testbed, small_params):
    return train_sde(small_testbed.radio_map, small_testbed.unlabeled, small_params.replace(fill_dbm=0.0))


def test_sde_exact_labeled_query(model, small_testbed):
    rm = small_testbed.radio_map
    for idx in (0, 10, 33):
        fix = locate_sde(model, RssVector.complete(rm.fingerprints[idx]), k=1)
        assert fix.coord == tuple(rm.coords[idx])


def test_identity_embedding_matches_raw_knn(small_testbed):
    rm = small_testbed.radio_map
    n = rm.n_aps
    ident = EmbeddingModel(
        ap_ids=rm.ap_ids, embedding=np.eye(n), drold=rm.fingerprints.T, coords=rm.coords,
        labels=np.ones(rm.n_rps, dtype=int), params=TrainParams(), labeled_rss=rm.fingerprints,
        admitted_rss=np.zeros((0, n)), admitted_labels=np.zeros(0, dtype=int), eigenvalues=np.zeros(n),
    )
    q = np.array([np.where(v.missing, 0.0, v.values) for v in small_testbed.queries])
    a = locate_sde_batch(ident, q)
    b = knn_locate_batch(q, rm.fingerprints, rm.coords, 3)
    assert [(f.coord, f.neighbor_ids) for f in a] == [(f.coord, f.neighbor_ids) for f in b]


def test_batch_equals_single(model, small_testbed):
    queries = list(small_testbed.queries[:40])
    batch = locate_sde_batch(model, queries)
    for q, fix in zip(queries, batch):
        assert locate_sde(model, q).coord == pytest.approx(fix.coord, abs=1e-8)


def test_mac_counts(model, small_testbed):
    counter = OpCounter()
    locate_sde_batch(model, list(small_testbed.queries[:17]), counter=counter)
    n, d, m = model.n_aps, model.dim, model.drold.shape[1]
    assert counter.macs == 17 * (n * d + d * m) and counter.per_query == n * d + d * m
    assert sde_macs(27, 5, 1000) == 5135
    assert knn_macs(27, 1000) / sde_macs(27, 5, 1000) >= 4.8


@given(st.lists(st.booleans(), min_size=12, max_size=12))
@settings(max_examples=40, deadline=None)
def test_any_missing_mask_is_handled(model, small_testbed, mask):
    base = small_testbed.queries[0].values
    fix = locate_sde(model, RssVector(np.nan_to_num(base, nan=-80.0), mask))
    assert all(np.isfinite(fix.coord))


def test_roster_mismatch(model):
    with pytest.raises(SchemaError):
        locate_sde(model, RssVector.complete([-50.0, -60.0]))
