"""Command-line driver: simulate, train, locate, evaluate, sweep.

Exit codes: 0 success, 2 configuration or schema error, 3 numerical
failure, 4 input/output failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from .core import (
    AUTO,
    ConfigError,
    DegenerateClusterError,
    ModelFormatError,
    ParseError,
    RadioMap,
    SchemaError,
    SdelocError,
    SolverError,
    TrainParams,
    ValidationError,
    load_model,
    load_radio_map,
    read_rss_table,
    save_model,
    save_radio_map,
    write_rss_table,
)
from .evaluation import DEFAULT_RADII, METHODS, SWEEP_AXES, compare_methods, run_sweep
from .locate import locate_sde_batch
from .sde import fit_clusters, train_sde
from .sim import SimConfig, Testbed, build_synthetic_radio_map, generate_layout

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4

# flag name -> (TrainParams field, parser)
TRAIN_FLAGS = {
    "dim": ("intrinsic_dim", "dim"),
    "clusters": ("n_clusters", int),
    "affinity-k": ("affinity_k", int),
    "heat-t": ("heat_t", "optional_float"),
    "kernel-lambda": ("kernel_lambda", "optional_float"),
    "reg-sigma": ("reg_sigma", float),
    "fuzzifier": ("fuzzifier_m", float),
    "converge-eps": ("converge_eps", float),
    "max-iter": ("max_iter", int),
    "match-eps": ("match_eps", float),
    "match-threshold": ("match_threshold", int),
    "ratio": ("update_ratio", float),
    "knn-k": ("knn_k", int),
    "fill-dbm": ("fill_dbm", "fill"),
    "dim-energy": ("dim_energy", float),
}

SIM_FLAGS = {
    "length": ("hallway_length", float),
    "width": ("hallway_width", float),
    "grid-interval": ("grid_interval", float),
    "n-aps": ("n_aps", int),
    "pathloss": ("pathloss_exponent", float),
    "tx-power": ("tx_power_at_1m", float),
    "sigma": ("shadowing_sigma", float),
    "samples-per-rp": ("samples_per_rp", int),
    "dropout": ("dropout_prob", float),
    "setback-min": ("ap_setback_min", float),
    "setback-max": ("ap_setback_max", float),
    "n-queries": ("n_queries", int),
    "query-samples": ("query_samples", int),
    "n-unlabeled": ("n_unlabeled", int),
    "unlabeled-samples": ("unlabeled_samples", int),
    "layout-seed": ("layout_seed", int),
}


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _convert(flag: str, kind, raw: str):
    text = str(raw).strip()
    try:
        if kind == "dim":
            return AUTO if text == AUTO else int(text)
        if kind == "fill":
            return AUTO if text == AUTO else float(text)
        if kind == "optional_float":
            return None if text.lower() in ("", "none", AUTO) else float(text)
        return kind(text)
    except ValueError:
        raise CliError(f"--{flag}: cannot parse {raw!r}", EXIT_CONFIG) from None


def read_config_file(path) -> dict[str, str]:
    """``key = value`` lines; ``#`` starts a comment. Keys may be flag or field names."""
    out = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise CliError(f"--config: {exc}", EXIT_IO) from None
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise CliError(f"--config line {lineno}: expected key=value", EXIT_CONFIG)
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = value
    return out


def _lookup(key: str, table: dict):
    """Match a config key against flag names or dataclass field names."""
    flag = key.replace("_", "-")
    if flag in table:
        return flag
    for f, (field_name, _) in table.items():
        if field_name == key:
            return f
    return None


def _collect(args, table: dict, config: dict) -> dict:
    """Field values from config then flags; flags win."""
    values = {}
    for key, raw in config.items():
        flag = _lookup(key, table)
        if flag is not None:
            field_name, kind = table[flag]
            values[field_name] = _convert(flag, kind, raw)
    for flag, (field_name, kind) in table.items():
        raw = getattr(args, flag.replace("-", "_"), None)
        if raw is not None:
            values[field_name] = _convert(flag, kind, raw)
    return values


def _check_config_keys(config: dict, tables) -> None:
    extra = {"seed", "radii", "methods", "axis", "values"}
    for key in config:
        if key in extra or any(_lookup(key, t) for t in tables):
            continue
        raise CliError(f"--config: unknown key {key!r}", EXIT_CONFIG)


def _seed(args, config) -> int:
    raw = args.seed if args.seed is not None else config.get("seed", "0")
    return _convert("seed", int, raw)


def build_train_params(args, config) -> TrainParams:
    values = _collect(args, TRAIN_FLAGS, config)
    values["seed"] = _seed(args, config)
    try:
        return TrainParams(**values)
    except ConfigError as exc:
        raise CliError(_name_flag(str(exc), TRAIN_FLAGS), EXIT_CONFIG) from None


def build_sim_config(args, config) -> SimConfig:
    values = _collect(args, SIM_FLAGS, config)
    values["seed"] = _seed(args, config)
    try:
        return SimConfig(**values)
    except ConfigError as exc:
        raise CliError(_name_flag(str(exc), SIM_FLAGS), EXIT_CONFIG) from None


def _name_flag(message: str, table: dict) -> str:
    for flag, (field_name, _) in table.items():
        if field_name in message:
            return f"--{flag}: {message}"
    return message


def _parse_floats(flag: str, text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise CliError(f"--{flag}: expected comma-separated numbers, got {text!r}", EXIT_CONFIG) from None


def parse_values(text: str) -> list[str]:
    """Comma list with optional integer ranges ``a..b`` (inclusive)."""
    out = []
    for part in (p.strip() for p in text.split(",")):
        if not part:
            continue
        if ".." in part:
            lo, hi = part.split("..", 1)
            try:
                lo_i, hi_i = int(lo), int(hi)
            except ValueError:
                raise CliError(f"--values: bad range {part!r}", EXIT_CONFIG) from None
            if hi_i < lo_i:
                raise CliError(f"--values: empty range {part!r}", EXIT_CONFIG)
            out.extend(str(v) for v in range(lo_i, hi_i + 1))
        else:
            out.append(part)
    if not out:
        raise CliError("--values: no values given", EXIT_CONFIG)
    return out


def _add_flags(p, table: dict, help_prefix: str) -> None:
    for flag, (field_name, _) in table.items():
        p.add_argument(f"--{flag}", dest=flag.replace("-", "_"), default=None, metavar="V",
                       help=f"{help_prefix} {field_name}")


def _common(p) -> None:
    p.add_argument("--config", help="key=value file; flags override it")
    p.add_argument("--seed", default=None, help="seed for every random stream of this run")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sdeloc", description="WLAN fingerprint localization toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="write a synthetic radio map and query set")
    _common(p)
    _add_flags(p, SIM_FLAGS, "simulator")
    p.add_argument("--out", required=True, help="radio-map CSV")
    p.add_argument("--queries", help="query CSV (x,y,ap_<id>...)")
    p.add_argument("--unlabeled", help="unlabeled-pool CSV")

    p = sub.add_parser("train", help="fit an embedding model")
    _common(p)
    _add_flags(p, TRAIN_FLAGS, "training")
    p.add_argument("--map", required=True, help="radio-map CSV")
    p.add_argument("--unlabeled", help="unlabeled-pool CSV")
    p.add_argument("--out", required=True, help="model JSON")
    p.add_argument("--emit-diagnostics", metavar="PATH", help="write clustering and solver diagnostics JSON")

    p = sub.add_parser("locate", help="estimate positions for query rows")
    p.add_argument("--model", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--out", required=True, help="fixes CSV (x,y,neighbors)")
    p.add_argument("--knn-k", dest="knn_k", default=None, help="override the model's k")

    for name, text in (("evaluate", "compare KNN, LDE-KNN and SDE-KNN"), ("sweep", "sweep one parameter")):
        p = sub.add_parser(name, help=text)
        _common(p)
        _add_flags(p, TRAIN_FLAGS, "training")
        _add_flags(p, SIM_FLAGS, "simulator")
        p.add_argument("--map", help="radio-map CSV instead of simulating")
        p.add_argument("--queries", help="query CSV with x,y ground truth (with --map)")
        p.add_argument("--unlabeled", help="unlabeled-pool CSV (with --map)")
        p.add_argument("--radii", default=None, help="comma list of error radii in meters")
        p.add_argument("--out", required=True, help="JSON report")
        p.add_argument("--csv", help="CDF curves CSV")
        p.add_argument("--timing", action="store_true", help="include wall-clock times in the report")
        if name == "evaluate":
            p.add_argument("--methods", default=None, help=f"comma list from {','.join(METHODS)}")
        else:
            p.add_argument("--axis", default=None, choices=SWEEP_AXES)
            p.add_argument("--values", default=None, help="comma list, integer ranges as a..b")
    return parser


def _emit(line: str) -> None:
    sys.stdout.write(line + "\n")


def _read_table(flag: str, path):
    try:
        return read_rss_table(path)
    except OSError as exc:
        raise CliError(f"--{flag}: {exc}", EXIT_IO) from None


def _load_map(path, fill) -> RadioMap:
    try:
        if fill == AUTO:
            # RPs with an AP never heard take the mean heard RSS of the file
            _, _, rows = read_rss_table(path)
            heard = np.concatenate([r.values[~r.missing] for r in rows]) if rows else np.zeros(0)
            fill = float(heard.mean()) if heard.size else 0.0
        return load_radio_map(path, fill_dbm=float(fill))
    except OSError as exc:
        raise CliError(f"--map: {exc}", EXIT_IO) from None


def _align(flag: str, ap_ids, want) -> None:
    if list(ap_ids) != list(want):
        raise CliError(f"--{flag}: AP roster {list(ap_ids)} does not match {list(want)}", EXIT_CONFIG)


def cmd_simulate(args) -> int:
    config = read_config_file(args.config) if args.config else {}
    _check_config_keys(config, (TRAIN_FLAGS, SIM_FLAGS))
    cfg = build_sim_config(args, config)
    generate_layout(cfg)  # cheap geometry check before sampling
    testbed = build_synthetic_radio_map(cfg)
    rm = testbed.radio_map
    try:
        save_radio_map(rm, args.out)
        if args.queries:
            write_rss_table(args.queries, rm.ap_ids, testbed.queries, testbed.query_coords)
        if args.unlabeled:
            write_rss_table(args.unlabeled, rm.ap_ids, testbed.unlabeled)
    except OSError as exc:
        raise CliError(str(exc), EXIT_IO) from None
    _emit(f"reference_points: {rm.n_rps}")
    _emit(f"access_points: {rm.n_aps}")
    _emit(f"grid_interval: {rm.grid_interval!r}")
    _emit(f"queries: {len(testbed.queries)}")
    _emit(f"unlabeled: {len(testbed.unlabeled)}")
    return EXIT_OK


def cmd_train(args) -> int:
    config = read_config_file(args.config) if args.config else {}
    _check_config_keys(config, (TRAIN_FLAGS, SIM_FLAGS))
    params = build_train_params(args, config)
    radio_map = _load_map(args.map, params.fill_dbm)
    pool = []
    if args.unlabeled:
        ap_ids, _, pool = _read_table("unlabeled", args.unlabeled)
        _align("unlabeled", ap_ids, radio_map.ap_ids)
    clusters = fit_clusters(radio_map, params)
    model = train_sde(radio_map, pool, params, clusters)
    try:
        save_model(model, args.out)
        if args.emit_diagnostics:
            diag = {
                "objective_trace": list(clusters.objective_trace),
                "kfcm_iterations": clusters.n_iter,
                "kfcm_converged": clusters.converged,
                "kernel_lambda": clusters.kernel_lambda,
                "label_histogram": model.provenance["label_histogram"],
                "dim": model.dim,
                "eigenvalues": [float(v) for v in model.eigenvalues],
                "admitted": model.provenance["admitted_count"],
                "rejected": model.provenance["rejected_count"],
                "over_cap": model.provenance["over_cap_count"],
                "within_scatter_pd": model.provenance["within_scatter_pd"],
                "max_residual_ratio": model.provenance["max_residual_ratio"],
            }
            Path(args.emit_diagnostics).write_text(json.dumps(diag, indent=1, sort_keys=True) + "\n")
    except OSError as exc:
        raise CliError(str(exc), EXIT_IO) from None
    _emit(f"dim: {model.dim}")
    _emit(f"admitted: {model.provenance['admitted_count']}")
    _emit(f"rejected: {model.provenance['rejected_count']}")
    _emit("eigenvalues: " + ",".join(repr(float(v)) for v in model.eigenvalues))
    return EXIT_OK


def cmd_locate(args) -> int:
    try:
        model = load_model(args.model)
    except OSError as exc:
        raise CliError(f"--model: {exc}", EXIT_IO) from None
    ap_ids, _, queries = _read_table("queries", args.queries)
    _align("queries", ap_ids, model.ap_ids)
    k = None if args.knn_k is None else _convert("knn-k", int, args.knn_k)
    fixes = locate_sde_batch(model, queries, k=k)
    try:
        with Path(args.out).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["x", "y", "neighbors"])
            for f in fixes:
                w.writerow([repr(f.coord[0]), repr(f.coord[1]), ";".join(str(i) for i in f.neighbor_ids)])
    except OSError as exc:
        raise CliError(str(exc), EXIT_IO) from None
    _emit(f"fixes: {len(fixes)}")
    return EXIT_OK


def _testbed(args, config, params: TrainParams) -> Testbed:
    if args.map is None:
        return build_synthetic_radio_map(build_sim_config(args, config))
    if args.queries is None:
        raise CliError("--queries is required with --map", EXIT_CONFIG)
    radio_map = _load_map(args.map, params.fill_dbm)
    ap_ids, coords, queries = _read_table("queries", args.queries)
    _align("queries", ap_ids, radio_map.ap_ids)
    if any(c is None for c in coords):
        raise CliError("--queries: x,y ground-truth columns are required for evaluation", EXIT_CONFIG)
    pool = []
    if args.unlabeled:
        pool_ids, _, pool = _read_table("unlabeled", args.unlabeled)
        _align("unlabeled", pool_ids, radio_map.ap_ids)
    layout = generate_layout(SimConfig(n_aps=radio_map.n_aps))  # placeholder geometry, unused by evaluation
    return Testbed(layout, radio_map, tuple(queries), np.array(coords, dtype=float), tuple(pool))


def _radii(args, config) -> tuple[float, ...]:
    text = args.radii if args.radii is not None else config.get("radii")
    radii = DEFAULT_RADII if text is None else tuple(_parse_floats("radii", text))
    if not radii or any(r < 0 for r in radii):
        raise CliError("--radii: need one or more non-negative radii", EXIT_CONFIG)
    return radii


def _write_report(report, args) -> None:
    try:
        report.write_json(args.out)
        if args.csv:
            report.write_csv(args.csv)
    except OSError as exc:
        raise CliError(str(exc), EXIT_IO) from None


def cmd_evaluate(args) -> int:
    config = read_config_file(args.config) if args.config else {}
    _check_config_keys(config, (TRAIN_FLAGS, SIM_FLAGS))
    params = build_train_params(args, config)
    radii = _radii(args, config)
    text = args.methods if args.methods is not None else config.get("methods", ",".join(METHODS))
    methods = [m.strip() for m in text.split(",") if m.strip()]
    testbed = _testbed(args, config, params)
    report = compare_methods(testbed, params, radii, methods, timing=args.timing)
    _write_report(report, args)
    for row in report.rows:
        if row.ok:
            _emit(f"{row.label}: " + " ".join(f"{r!r}:{a!r}" for r, a in row.curve))
        else:
            _emit(f"{row.label}: failed: {row.error}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    config = read_config_file(args.config) if args.config else {}
    _check_config_keys(config, (TRAIN_FLAGS, SIM_FLAGS))
    params = build_train_params(args, config)
    radii = _radii(args, config)
    axis = args.axis if args.axis is not None else config.get("axis")
    if axis is None:
        raise CliError("--axis is required", EXIT_CONFIG)
    if axis not in SWEEP_AXES:
        raise CliError(f"--axis: unknown axis {axis!r}", EXIT_CONFIG)
    text = args.values if args.values is not None else config.get("values")
    if text is None:
        raise CliError("--values is required", EXIT_CONFIG)
    values = parse_values(text)
    testbed = _testbed(args, config, params)
    try:
        report = run_sweep(testbed, axis, values, params, radii, timing=args.timing)
    except ConfigError as exc:
        raise CliError(f"--values: {exc}", EXIT_CONFIG) from None
    _write_report(report, args)
    _emit(f"points: {len(report.rows)}")
    for row in report.rows:
        _emit(f"{row.label}: " + ("ok" if row.ok else f"failed: {row.error}"))
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "train": cmd_train,
    "locate": cmd_locate,
    "evaluate": cmd_evaluate,
    "sweep": cmd_sweep,
}


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, CliError):
        return exc.code
    if isinstance(exc, (SolverError, DegenerateClusterError, np.linalg.LinAlgError, FloatingPointError)):
        return EXIT_NUMERIC
    if isinstance(exc, (OSError, ParseError, ModelFormatError)):
        return EXIT_IO
    if isinstance(exc, (ConfigError, SchemaError, ValidationError, SdelocError)):
        return EXIT_CONFIG
    raise exc


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse already printed usage; unknown flags land here
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    try:
        return COMMANDS[args.command](args)
    except (SdelocError, CliError, OSError, np.linalg.LinAlgError, FloatingPointError) as exc:
        code = exit_code_for(exc)
        sys.stderr.write(f"sdeloc {args.command}: {exc}\n")
        return code


if __name__ == "__main__":
    sys.exit(main())
