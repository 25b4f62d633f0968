import json

import numpy as np
import pytest

from sdeloc.core import ConfigError, RadioMap, ReferencePoint, RssVector, TrainParams, ValidationError
from sdeloc.evaluation import (
    accuracy_at_radius,
    compare_methods,
    error_cdf,
    evaluate_model,
    partition_subareas,
    run_sweep,
    select_intrinsic_dim,
    subarea_testbed,
)
from sdeloc.sde import fit_clusters, train_lde, train_sde
from sdeloc.sim import SimConfig, build_synthetic_radio_map


def test_accuracy_exact_and_far():
    truth = np.random.default_rng(0).uniform(0, 10, (20, 2))
    for r in (0.0, 0.3, 5.0):
        assert accuracy_at_radius(truth, truth, r) == 1.0
    assert accuracy_at_radius(truth + [2.0, 0.0], truth, 1.0) == 0.0


def test_accuracy_hand_count():
    truth = np.zeros((6, 2))
    est = np.array([[0.1, 0], [0.5, 0], [0.6, 0], [0, 1.2], [3, 4], [0, 0]])
    # errors 0.1, 0.5, 0.6, 1.2, 5, 0 -> three within 0.5
    assert accuracy_at_radius(est, truth, 0.5) == 3 / 6
    assert accuracy_at_radius(est, truth, 1.2) == 5 / 6


def test_accuracy_errors():
    with pytest.raises(ValidationError):
        accuracy_at_radius(np.zeros((0, 2)), np.zeros((0, 2)), 1.0)
    with pytest.raises(ConfigError):
        accuracy_at_radius(np.zeros((1, 2)), np.zeros((1, 2)), -1.0)
    with pytest.raises(ValidationError):
        accuracy_at_radius(np.zeros((2, 2)), np.zeros((3, 2)), 1.0)


def test_cdf_examples():
    z = np.zeros((4, 2))
    assert error_cdf(z, z, [1.0, 0.5]) == [(0.5, 1.0), (1.0, 1.0)]
    assert error_cdf([[0.7, 0.0]], [[0.0, 0.0]], [1.0, 0.5]) == [(0.5, 0.0), (1.0, 1.0)]


def test_cdf_recompute_oracle():
    rng = np.random.default_rng(1)
    est, truth = rng.uniform(0, 5, (50, 2)), rng.uniform(0, 5, (50, 2))
    radii = [2.0, 0.25, 1.0, 3.5]
    curve = error_cdf(est, truth, radii)
    assert [r for r, _ in curve] == sorted(radii)
    for r, a in curve:
        assert a == accuracy_at_radius(est, truth, r)
    assert all(a <= b for (_, a), (_, b) in zip(curve, curve[1:]))


def _strip_map(xs_groups):
    rps = []
    for xs in xs_groups:
        for x in xs:
            for y in (0.0, 0.5):
                rps.append(ReferencePoint.from_samples((x, y), [RssVector.complete([-50.0])]))
    return RadioMap(("a",), tuple(rps), 0.5)


def test_partition_single_area(small_testbed):
    areas = partition_subareas(small_testbed.radio_map, 1)
    assert np.all(areas == 1)


def test_partition_two_strips():
    rm = _strip_map([np.arange(0, 3, 0.5), np.arange(20, 23, 0.5)])
    areas = partition_subareas(rm, 2, seed=3)
    left = rm.coords[:, 0] < 10
    assert np.all(areas[left] == 1) and np.all(areas[~left] == 2)


def test_partition_default_testbed(default_testbed):
    rm = default_testbed.radio_map
    areas = partition_subareas(rm)
    assert areas.shape == (rm.n_rps,)
    assert set(areas.tolist()) == set(range(1, 7))
    # numbered along the hallway
    means = [rm.coords[areas == a, 0].mean() for a in range(1, 7)]
    assert means == sorted(means)
    np.testing.assert_array_equal(areas, partition_subareas(rm))
    with pytest.raises(ConfigError):
        partition_subareas(rm, rm.n_rps + 1)


def test_subarea_testbed(default_testbed):
    areas = partition_subareas(default_testbed.radio_map)
    sub = subarea_testbed(default_testbed, areas, 2)
    assert sub.radio_map.n_rps == int(np.sum(areas == 2))
    assert 0 < len(sub.queries) < len(default_testbed.queries)


def test_single_value_sweep_equals_direct(small_testbed, small_params):
    report = run_sweep(small_testbed, "affinity_k", [5], small_params)
    model = train_sde(small_testbed.radio_map, small_testbed.unlabeled, small_params.replace(affinity_k=5))
    direct = evaluate_model(model, small_testbed)
    assert len(report.rows) == 1
    assert report.rows[0].curve == direct.curve


def test_ratio_one_curve_equals_lde(small_testbed, small_params):
    report = run_sweep(small_testbed, "update_ratio", [1, 0.5, 0.2], small_params)
    lde = evaluate_model(train_lde(small_testbed.radio_map, small_params), small_testbed)
    assert report.row("update_ratio=1.0").curve == lde.curve
    cmp = compare_methods(small_testbed, small_params.replace(update_ratio=1.0), methods=("lde", "sde"))
    assert cmp.row("lde").curve == cmp.row("sde").curve


def test_dim_sweep_full_range(default_testbed):
    report = run_sweep(default_testbed, "intrinsic_dim", range(1, 28), TrainParams(), (0.5, 1.0))
    assert len(report.rows) == 27 and all(r.ok for r in report.rows)
    best = report.to_dict()["best"]["1.0"]
    assert best.startswith("intrinsic_dim=")
    for row in report.rows:
        accs = [a for _, a in row.curve]
        assert accs == sorted(accs) and all(0 <= a <= 1 for a in accs)


def test_sweep_records_failures(small_testbed, small_params):
    report = run_sweep(small_testbed, "affinity_k", [4, 100000], small_params)
    assert report.rows[0].ok
    assert not report.rows[1].ok and "affinity_k" in report.rows[1].error


def test_reg_sigma_sweep_reports_stability(small_testbed, small_params):
    report = run_sweep(small_testbed, "reg_sigma", [1e-8, 1e-4, 1.0], small_params)
    for row in report.rows:
        assert row.extra["within_scatter_pd"] is True
        assert "accuracy_variance_across_sweep" in row.extra


def test_sweep_domain_checks(small_testbed, small_params):
    with pytest.raises(ConfigError):
        run_sweep(small_testbed, "heat_t", [1.0], small_params)
    with pytest.raises(ConfigError):
        run_sweep(small_testbed, "update_ratio", [0.5, 0.0], small_params)
    with pytest.raises(ConfigError):
        run_sweep(small_testbed, "n_clusters", [2.5], small_params)
    with pytest.raises(ConfigError):
        run_sweep(small_testbed, "n_clusters", [], small_params)


def test_zero_noise_all_methods_exact():
    tb = build_synthetic_radio_map(SimConfig(hallway_length=10, hallway_width=1, n_aps=12, shadowing_sigma=0,
                                             n_queries=200, n_unlabeled=200))
    report = compare_methods(tb, TrainParams(intrinsic_dim=12), radii=(tb.radio_map.grid_interval,))
    for row in report.rows:
        assert row.curve[0][1] == 1.0


def test_compare_shared_queries_and_determinism(small_testbed, small_params):
    a = compare_methods(small_testbed, small_params)
    b = compare_methods(small_testbed, small_params)
    assert a.to_json() == b.to_json()
    data = json.loads(a.to_json())
    assert data["query_hash"] == small_testbed.query_hash()
    assert [r["label"] for r in data["rows"]] == ["knn", "lde", "sde"]
    assert "seconds" not in data["rows"][0]
    assert data["rows"][0]["macs_per_query"] == small_testbed.radio_map.n_aps * small_testbed.radio_map.n_rps
    with pytest.raises(ConfigError):
        compare_methods(small_testbed, small_params, methods=("svm",))


def test_report_csv(tmp_path, small_testbed, small_params):
    report = compare_methods(small_testbed, small_params, radii=(1.0, 0.5))
    report.write_csv(tmp_path / "c.csv")
    lines = (tmp_path / "c.csv").read_text().splitlines()
    assert lines[0] == "label,radius,accuracy"
    assert len(lines) == 1 + 3 * 2
    assert lines[1].startswith("knn,0.5,")


def test_select_intrinsic_dim(small_testbed, small_params):
    d = select_intrinsic_dim(small_testbed, small_params, values=[2, 4, 12])
    report = run_sweep(small_testbed, "intrinsic_dim", [2, 4, 12], small_params, (1.0,))
    assert d == report.best(1.0).extra["value"]


def test_default_ordering_sde_vs_lde(default_testbed):
    params = TrainParams()
    report = compare_methods(default_testbed, params)
    assert report.row("sde").accuracy(0.5) >= report.row("lde").accuracy(0.5)
