"""Config-driven command line front end.

One required flag (--config PATH) points at a flat key/value job file; all
job parameters live there so a run is reproducible from the config alone.
Each run writes <output.prefix>.csv (the table) and <output.prefix>.json
(an envelope with the config digest, seed, tables, and warnings), both
atomically: a failing run never leaves a partial report behind.

Exit codes: 0 success, 1 usage/config error, 2 data or numeric error.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import tempfile
import warnings

import numpy as np

from .data import load_dataset, parse_kv
from .errors import ConfigError, MapcalibError, SchemaError, ZeroVariance
from .glm import get_family
from .means import (
    ConfusionCounts,
    LambdaTuning,
    gt_only_mean,
    map_only_mean,
    plugin_lambda,
    post_stratified_area,
    ppi_mean,
    ppi_mean_tuned,
    ppi_post_stratified_equivalence,
    regression_mean,
    stratified_mean,
    weighted_ppi_mean,
)
from .ppi import (
    BootstrapConfig,
    classical_estimate,
    effective_sample_size,
    ppi_analytic,
    ppi_bootstrap,
)
from .simulate import ScenarioSpec, level_grid, run_scenario, summarize_sweep, write_sweep

COMMANDS = ("estimate_regression", "estimate_mean", "estimate_area",
            "simulate", "equivalence")
REGRESSION_ESTIMATORS = ("gt_only", "map_only", "ppi", "ppi_analytic")
MEAN_ESTIMATORS = ("gt_only", "map_only", "ppi", "ppi_tuned", "regression_mean",
                   "stratified", "weighted_ppi")
AREA_ESTIMATORS = ("gt_only", "map_only", "ppi", "ppi_tuned", "post_stratified",
                   "stratified", "weighted_ppi")

_REQUIRED = object()


class _Config:
    """Typed accessors over the flat key/value job file.

    Every key must be consumed exactly once; leftovers are reported as
    unknown keys so typos fail loudly instead of silently using defaults.
    """

    def __init__(self, mapping: dict):
        self._map = dict(mapping)
        self._used: set[str] = set()

    def get(self, key: str, default=_REQUIRED) -> str:
        if key in self._map:
            self._used.add(key)
            return self._map[key]
        if default is _REQUIRED:
            raise ConfigError(f"missing required config key {key!r}")
        return default

    def get_int(self, key: str, default=_REQUIRED) -> int:
        raw = self.get(key, default)
        if isinstance(raw, int) or raw is None:
            return raw
        try:
            return int(raw)
        except ValueError:
            raise ConfigError(f"config key {key!r} must be an integer, got {raw!r}")

    def get_float(self, key: str, default=_REQUIRED) -> float:
        raw = self.get(key, default)
        if isinstance(raw, float) or raw is None:
            return raw
        try:
            return float(raw)
        except ValueError:
            raise ConfigError(f"config key {key!r} must be a number, got {raw!r}")

    def get_bool(self, key: str, default=_REQUIRED) -> bool:
        raw = self.get(key, default)
        if isinstance(raw, bool):
            return raw
        lowered = raw.strip().lower()
        if lowered in ("true", "yes", "1"):
            return True
        if lowered in ("false", "no", "0"):
            return False
        raise ConfigError(f"config key {key!r} must be true/false, got {raw!r}")

    def get_list(self, key: str, default=_REQUIRED) -> tuple[str, ...] | None:
        raw = self.get(key, default)
        if not isinstance(raw, str):
            return raw  # a missing key fell back to the default as given
        items = tuple(part.strip() for part in raw.split(",") if part.strip())
        if not items:
            raise ConfigError(f"config key {key!r} must be a comma-separated list")
        return items

    def get_floats(self, key: str, default=_REQUIRED) -> tuple[float, ...] | None:
        items = self.get_list(key, default)
        if items is None:
            return None
        try:
            return tuple(float(v) for v in items)
        except ValueError:
            raise ConfigError(f"config key {key!r} must be a list of numbers")

    def has(self, key: str) -> bool:
        return key in self._map

    def check_consumed(self) -> None:
        leftover = sorted(set(self._map) - self._used)
        if leftover:
            raise ConfigError(f"unknown config key(s): {', '.join(leftover)}")


def _config_digest(path: str) -> str:
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


def _load_config(path: str) -> _Config:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            mapping = parse_kv(fh.read())
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}")
    except ValueError as exc:
        raise ConfigError(f"bad config file {path}: {exc}")
    return _Config(mapping)


def _validate_estimators(requested, valid, command: str) -> tuple[str, ...]:
    for name in requested:
        if name not in valid:
            raise ConfigError(
                f"estimator {name!r} is not valid for {command} "
                f"(choose from {', '.join(valid)})")
    return tuple(requested)


def _load_job_dataset(cfg: _Config):
    csv_path = cfg.get("data.csv")
    schema_path = cfg.get("data.schema")
    return load_dataset(csv_path, schema_path)


def _ess_or_none(n: int, gt_width, width) -> float | None:
    if gt_width is None or gt_width <= 0.0 or width is None:
        return None
    if width <= 0.0:
        return None
    return effective_sample_size(n, gt_width, width)


# --- commands -------------------------------------------------------------------

def _cmd_estimate_regression(cfg: _Config, seed: int, workers: int):
    dataset = _load_job_dataset(cfg)
    family = get_family(cfg.get("family", "linear"))
    alpha = cfg.get_float("alpha", 0.05)
    b = cfg.get_int("bootstrap.b", 2000)
    omega_mode = cfg.get("omega", "optimal")
    if omega_mode not in ("optimal", "identity", "zero"):
        raise ConfigError(f"omega must be optimal/identity/zero, got {omega_mode!r}")
    estimators = _validate_estimators(
        cfg.get_list("estimators", ("gt_only", "ppi")),
        REGRESSION_ESTIMATORS, "estimate_regression")

    names = dataset.coefficient_names()
    meta: dict = {}
    results = {}
    for estimator in estimators:
        if estimator == "gt_only":
            est = classical_estimate(dataset.calib_design_gt(),
                                     dataset.calib_response_gt(), family, alpha)
            results[estimator] = (est.beta, est.intervals)
        elif estimator == "map_only":
            est = classical_estimate(dataset.map_design_proxy(),
                                     dataset.map_response_proxy(), family, alpha)
            results[estimator] = (est.beta, est.intervals)
        elif estimator == "ppi":
            config = BootstrapConfig(b=b, alpha=alpha, seed=seed)
            est = ppi_bootstrap(dataset, family, config, omega_mode=omega_mode,
                                workers=workers)
            results[estimator] = (est.beta_ppi, est.intervals)
            meta["omega_mode"] = est.omega.mode
        else:  # ppi_analytic
            est = ppi_analytic(dataset, family, alpha=alpha, omega_mode=omega_mode)
            results[estimator] = (est.beta_ppi, est.intervals)
            meta.setdefault("omega_mode", est.omega.mode)

    gt_widths = {}
    if "gt_only" in results:
        beta, intervals = results["gt_only"]
        gt_widths = {names[j]: float(intervals[j, 1] - intervals[j, 0])
                     for j in range(len(names))}
    rows = []
    for estimator in estimators:
        beta, intervals = results[estimator]
        for j, name in enumerate(names):
            lower = float(intervals[j, 0])
            upper = float(intervals[j, 1])
            width = upper - lower
            ess = None
            if estimator != "gt_only":
                ess = _ess_or_none(dataset.n, gt_widths.get(name), width)
            rows.append({"estimator": estimator, "coefficient": name,
                         "point": float(beta[j]), "lower": lower, "upper": upper,
                         "width": width, "ess": ess})
    header = ("estimator", "coefficient", "point", "lower", "upper", "width", "ess")
    return {"estimates": rows}, (header, rows), meta


def _mean_arrays(dataset):
    calibration = dataset.calibration
    map_col = dataset.map_response_proxy()
    calib_gt = dataset.calib_response_gt()
    calib_preds = map_col[calibration]
    return map_col, calib_gt, calib_preds


def _stratum_codes(dataset):
    if dataset.stratum is None:
        raise SchemaError("this estimator needs a stratum.column in the data schema")
    values, codes = np.unique(dataset.stratum, return_inverse=True)
    return values, codes


def _shares_for(cfg: _Config, dataset, codes, k: int):
    shares = cfg.get_floats("strata.shares", None)
    if shares is None:
        counts = np.bincount(codes, minlength=k).astype(float)
        return tuple(counts / counts.sum())
    if len(shares) != k:
        raise ConfigError(
            f"strata.shares lists {len(shares)} values but the data has {k} strata")
    return shares


def _cmd_estimate_mean(cfg: _Config, seed: int, workers: int, area: bool):
    dataset = _load_job_dataset(cfg)
    alpha = cfg.get_float("alpha", 0.05)
    command = "estimate_area" if area else "estimate_mean"
    valid = AREA_ESTIMATORS if area else MEAN_ESTIMATORS
    default = ("gt_only", "map_only", "ppi", "post_stratified") if area \
        else ("gt_only", "map_only", "ppi")
    estimators = _validate_estimators(
        cfg.get_list("estimators", default), valid, command)
    map_col, calib_gt, calib_preds = _mean_arrays(dataset)

    class_j = cfg.get_int("area.class", 1) if area else None
    areas_cfg = cfg.get_floats("area.areas", None) if area else None

    meta: dict = {}
    rows = []
    for estimator in estimators:
        if estimator == "gt_only":
            est = gt_only_mean(calib_gt, alpha)
        elif estimator == "map_only":
            est = map_only_mean(map_col, alpha)
        elif estimator == "ppi":
            est = ppi_mean(map_col, calib_gt, calib_preds, alpha)
        elif estimator == "ppi_tuned":
            try:
                est = ppi_mean_tuned(map_col, calib_gt, calib_preds, alpha)
                meta["lambda"] = plugin_lambda(map_col, calib_gt, calib_preds).lam
            except ZeroVariance:
                est = ppi_mean_tuned(map_col, calib_gt, calib_preds, alpha,
                                     tuning=LambdaTuning(lam=1.0, mode="one"))
                meta["lambda"] = 1.0
                meta["lambda_fallback"] = "constant map column, used lambda=1"
        elif estimator == "regression_mean":
            x_pop = dataset.covariate_matrix_gt()
            if x_pop.shape[1] == 0:
                raise SchemaError("regression_mean needs ground-truth covariates")
            est = regression_mean(calib_gt, x_pop[dataset.calibration],
                                  x_pop.mean(axis=0), alpha)
        elif estimator == "post_stratified":
            counts = ConfusionCounts.from_labels(calib_preds, calib_gt,
                                                 num_classes=2)
            if areas_cfg is None:
                share_one = float(map_col.mean())
                areas = (1.0 - share_one, share_one)
            else:
                areas = areas_cfg
            est = post_stratified_area(counts, areas, j=class_j, alpha=alpha)
        elif estimator == "stratified":
            values, codes = _stratum_codes(dataset)
            calib_codes = codes[dataset.calibration]
            samples = [calib_gt[calib_codes == k] for k in range(len(values))]
            shares = _shares_for(cfg, dataset, codes, len(values))
            est = stratified_mean(samples, shares, alpha)
        else:  # weighted_ppi
            values, codes = _stratum_codes(dataset)
            shares = _shares_for(cfg, dataset, codes, len(values))
            est = weighted_ppi_mean(map_col, calib_gt, calib_preds,
                                    codes, codes[dataset.calibration],
                                    shares, alpha)
        lower, upper = est.interval
        rows.append({"estimator": estimator, "point": est.theta,
                     "sigma": est.sigma, "lower": lower, "upper": upper,
                     "width": upper - lower, "ess": None})

    gt_width = next((r["width"] for r in rows if r["estimator"] == "gt_only"), None)
    for row in rows:
        if row["estimator"] != "gt_only":
            row["ess"] = _ess_or_none(dataset.n, gt_width, row["width"])
    header = ("estimator", "point", "sigma", "lower", "upper", "width", "ess")
    return {"estimates": rows}, (header, rows), meta


def _cmd_equivalence(cfg: _Config, seed: int, workers: int):
    dataset = _load_job_dataset(cfg)
    alpha = cfg.get_float("alpha", 0.05)
    areas = cfg.get_floats("equivalence.areas", None)
    map_col, calib_gt, calib_preds = _mean_arrays(dataset)
    report = ppi_post_stratified_equivalence(map_col, calib_gt, calib_preds,
                                             alpha, areas=areas)
    rows = [
        {"estimator": "ppi_tuned", "point": report.ppi_point,
         "sigma": report.ppi_sigma},
        {"estimator": "post_stratified", "point": report.post_point,
         "sigma": report.post_sigma},
    ]
    meta = {"point_delta": report.point_delta,
            "sigma_delta": report.sigma_delta,
            "sigma_delta_rel": report.sigma_delta_rel}
    header = ("estimator", "point", "sigma")
    return {"equivalence": rows}, (header, rows), meta


def _scenario_from_config(cfg: _Config, seed: int) -> ScenarioSpec:
    task = cfg.get("scenario.task")
    if cfg.has("scenario.levels"):
        levels = cfg.get_floats("scenario.levels")
    else:
        levels = level_grid(cfg.get("scenario.levels.start"),
                            cfg.get("scenario.levels.stop"),
                            cfg.get("scenario.levels.step"))
    params = {}
    for name in ("a", "b", "mu", "resample_prob", "label_prob"):
        if cfg.has(f"scenario.error.{name}"):
            params[name] = cfg.get_float(f"scenario.error.{name}")
    if cfg.has("scenario.error.vary"):
        params["vary"] = cfg.get("scenario.error.vary")
    kwargs = dict(
        task=task,
        levels=levels,
        replications=cfg.get_int("scenario.replications"),
        n=cfg.get_int("scenario.n"),
        N=cfg.get_int("scenario.N"),
        estimators=cfg.get_list(
            "scenario.estimators",
            ("gt_only", "ppi") if task == "regression"
            else ("gt_only", "map_only", "ppi")),
        family=cfg.get("scenario.family", "linear"),
        mean_value=cfg.get_float("scenario.mean_value", 0.5),
        noise_sigma=cfg.get_float("scenario.noise_sigma", 1.0),
        error_kind=cfg.get("scenario.error.kind", "gaussian_noise"),
        error_targets=cfg.get_list("scenario.error.targets", ("y",)),
        error_params=params,
        b=cfg.get_int("scenario.b", 200),
        alpha=cfg.get_float("alpha", 0.05),
        base_seed=seed,
        redraw_calibration=cfg.get_bool("scenario.redraw_calibration", True),
    )
    beta = cfg.get_floats("scenario.true_beta", None)
    if beta is not None:
        kwargs["true_beta"] = beta
    try:
        return ScenarioSpec(**kwargs)
    except ValueError as exc:
        raise ConfigError(str(exc))


def _cmd_simulate(cfg: _Config, seed: int, workers: int):
    spec = _scenario_from_config(cfg, seed)
    cfg.check_consumed()  # catch config typos before a long sweep, not after
    rows = run_scenario(spec, workers=workers)
    summary = summarize_sweep(rows)
    return {"summary": summary}, rows, {"cells": len(spec.levels) * spec.replications}


# --- report writing ----------------------------------------------------------------

def _atomic_write(path: str, writer_fn) -> None:
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".mapcalib-tmp-")
    os.close(fd)
    try:
        writer_fn(tmp)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _format_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return str(int(value))
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _write_table_csv(path: str, header, rows) -> None:
    import csv as _csv

    def write(tmp):
        with open(tmp, "w", encoding="utf-8", newline="") as fh:
            writer = _csv.writer(fh)
            writer.writerow(header)
            for row in rows:
                writer.writerow([_format_cell(row[key]) for key in header])

    _atomic_write(path, write)


def _jsonable(value):
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    if isinstance(value, float) and (value != value or value in (float("inf"), float("-inf"))):
        return repr(value)
    return value


def _write_envelope(path: str, envelope: dict) -> None:
    payload = json.dumps(_jsonable(envelope), indent=2, sort_keys=True) + "\n"

    def write(tmp):
        with open(tmp, "w", encoding="utf-8") as fh:
            fh.write(payload)

    _atomic_write(path, write)


def _print_summary(command: str, tables: dict) -> None:
    if command == "simulate":
        print("level  estimator  coefficient  coverage  mean_width")
        for row in tables["summary"]:
            print(f"{row['level']:g}  {row['estimator']}  {row['coefficient']}  "
                  f"{row['coverage']:.3f}  {row['mean_width']:.6g}")
        return
    key = "equivalence" if command == "equivalence" else "estimates"
    for row in tables[key]:
        parts = [f"{k}={_format_cell(v)}" for k, v in row.items()]
        print("  ".join(parts))


def run_job(config_path: str, seed_override: int | None = None,
            workers: int = 1) -> dict:
    """Execute the job described by a config file; returns the JSON envelope."""
    cfg = _load_config(config_path)
    command = cfg.get("command")
    if command not in COMMANDS:
        raise ConfigError(f"unknown command {command!r} (choose from {', '.join(COMMANDS)})")
    prefix = cfg.get("output.prefix")
    config_seed = cfg.get_int("seed", 0)
    seed = seed_override if seed_override is not None else config_seed
    cfg_workers = cfg.get_int("workers", 1)
    if workers != 1:
        cfg_workers = workers  # the flag wins over the config key

    captured: list[str] = []
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        if command == "estimate_regression":
            tables, table_payload, meta = _cmd_estimate_regression(cfg, seed, cfg_workers)
        elif command == "estimate_mean":
            tables, table_payload, meta = _cmd_estimate_mean(cfg, seed, cfg_workers, area=False)
        elif command == "estimate_area":
            tables, table_payload, meta = _cmd_estimate_mean(cfg, seed, cfg_workers, area=True)
        elif command == "equivalence":
            tables, table_payload, meta = _cmd_equivalence(cfg, seed, cfg_workers)
        else:
            tables, table_payload, meta = _cmd_simulate(cfg, seed, cfg_workers)
    captured = sorted({f"{w.category.__name__}: {w.message}" for w in caught})
    cfg.check_consumed()

    envelope = {
        "command": command,
        "config_digest": _config_digest(config_path),
        "seed": seed,
        "tables": tables,
        "warnings": captured,
    }
    envelope.update({k: v for k, v in meta.items() if v is not None})

    csv_path = prefix + ".csv"
    json_path = prefix + ".json"
    if command == "simulate":
        _atomic_write(csv_path, lambda tmp: write_sweep(table_payload, tmp))
    else:
        header, rows = table_payload
        _write_table_csv(csv_path, header, rows)
    _write_envelope(json_path, envelope)
    _print_summary(command, tables)
    print(f"wrote {csv_path} and {json_path}")
    return envelope


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems must exit 1, not argparse's 2
        raise ConfigError(message)


def main(argv=None) -> int:
    parser = _Parser(prog="mapcalib",
                     description="Prediction-powered estimation jobs from config files.")
    parser.add_argument("--config", required=True, help="path to the job config file")
    parser.add_argument("--seed", type=int, default=None,
                        help="override the config seed")
    parser.add_argument("--workers", type=int, default=1,
                        help="worker threads for bootstrap/sweep cells")
    try:
        args = parser.parse_args(argv)
        run_job(args.config, seed_override=args.seed, workers=args.workers)
    except ConfigError as exc:
        json.dump({"error": "ConfigError", "message": str(exc)}, sys.stderr)
        sys.stderr.write("\n")
        return 1
    except MapcalibError as exc:
        json.dump({"error": type(exc).__name__, "message": str(exc)}, sys.stderr)
        sys.stderr.write("\n")
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
