"""Error-process injectors and the Monte Carlo sweep harness.

Injectors turn a ground-truth column into a degraded map column; the
harness sweeps an error level over a grid, replicating (generate
population -> inject error -> draw calibration sample -> run estimators)
per cell and recording point/interval/coverage rows. Level-0 injection is
always the bit-exact identity, and injectors never touch their input
(fresh arrays out, read-only inputs stay intact).
"""
from __future__ import annotations

import csv
import dataclasses
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from decimal import Decimal

import numpy as np
from scipy.special import expit

from .data import RngSeed, simple_random_subsample
from .errors import (
    MapcalibError,
    NegativeValues,
    NotBinary,
    ScenarioError,
    ZeroVariance,
)
from .glm import get_family
from .means import (
    ConfusionCounts,
    LambdaTuning,
    gt_only_mean,
    map_only_mean,
    post_stratified_area,
    ppi_mean,
    ppi_mean_tuned,
)
from .ppi import (
    BootstrapConfig,
    classical_estimate,
    ppi_analytic_arrays,
    ppi_bootstrap_arrays,
)

ERROR_KINDS = ("gaussian_noise", "sqrt_bias", "mean_reversion", "bernoulli")
REGRESSION_ESTIMATORS = ("gt_only", "map_only", "ppi", "ppi_analytic")
MEAN_ESTIMATORS = ("gt_only", "map_only", "ppi", "ppi_tuned", "post_stratified")
SWEEP_COLUMNS = ("level", "replication", "estimator", "coefficient",
                 "point", "lower", "upper", "width", "covered")


# --- error specs ---------------------------------------------------------------

@dataclass(frozen=True)
class NoiseSpec:
    """Additive Gaussian noise at level c: x + c * sigma_ref * z.

    sigma_ref is the standard deviation of the target column over the full
    N-row population (computed once, not per subsample). Values are not
    clipped: a noised copy of a bounded variable may leave its physical
    range.
    """

    level: float
    target: str
    sigma_ref: float

    def __post_init__(self):
        if self.level < 0.0:
            raise ValueError(f"noise level must be >= 0, got {self.level}")
        if self.sigma_ref < 0.0:
            raise ValueError(f"sigma_ref must be >= 0, got {self.sigma_ref}")


@dataclass(frozen=True)
class BiasCurve:
    """Systematic distortion interpolated between truth and a curve.

    kind "square_root": x -> c*(a*sqrt(x) + b) + (1-c)*x (x must be
    nonnegative); kind "mean_reversion": x -> c*mu + (1-c)*x.
    """

    kind: str  # "square_root" | "mean_reversion"
    a: float = 0.0
    b: float = 0.0
    mu: float = 0.0
    level: float = 1.0

    def __post_init__(self):
        if self.kind not in ("square_root", "mean_reversion"):
            raise ValueError(f"unknown bias kind {self.kind!r}")
        if not 0.0 <= self.level <= 1.0:
            raise ValueError(f"bias level must be in [0,1], got {self.level}")

    def with_level(self, level: float) -> "BiasCurve":
        return dataclasses.replace(self, level=level)


@dataclass(frozen=True)
class BernoulliErrorSpec:
    """Each entry is independently replaced by a Bernoulli(label_prob)
    draw with probability resample_prob, else kept."""

    resample_prob: float
    label_prob: float

    def __post_init__(self):
        for name in ("resample_prob", "label_prob"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must be in [0,1], got {value}")


# --- injectors -------------------------------------------------------------------

def inject_gaussian_noise(column, spec: NoiseSpec, rng: np.random.Generator) -> np.ndarray:
    column = np.asarray(column, dtype=float)
    if spec.level == 0.0 or spec.sigma_ref == 0.0:
        return column.copy()
    return column + spec.level * spec.sigma_ref * rng.standard_normal(column.shape[0])


def fit_sqrt_bias_curve(column, proxy_column) -> BiasCurve:
    """Least-squares fit of proxy ~ a*sqrt(column) + b."""
    column = np.asarray(column, dtype=float)
    proxy = np.asarray(proxy_column, dtype=float)
    if (column < 0.0).any():
        raise NegativeValues("square-root bias curve needs a nonnegative column")
    design = np.column_stack([np.sqrt(column), np.ones(column.shape[0])])
    coeffs, *_ = np.linalg.lstsq(design, proxy, rcond=None)
    return BiasCurve(kind="square_root", a=float(coeffs[0]), b=float(coeffs[1]))


def inject_bias(column, curve: BiasCurve) -> np.ndarray:
    column = np.asarray(column, dtype=float)
    c = curve.level
    if c == 0.0:
        return column.copy()
    if curve.kind == "square_root":
        if (column < 0.0).any():
            raise NegativeValues("square-root bias needs a nonnegative column")
        return c * (curve.a * np.sqrt(column) + curve.b) + (1.0 - c) * column
    return c * curve.mu + (1.0 - c) * column


def inject_bernoulli_error(column, spec: BernoulliErrorSpec,
                           rng: np.random.Generator) -> np.ndarray:
    column = np.asarray(column, dtype=float)
    if not np.all((column == 0.0) | (column == 1.0)):
        raise NotBinary("bernoulli error injection needs a 0/1 column")
    if spec.resample_prob == 0.0:
        return column.copy()
    n = column.shape[0]
    resample = rng.random(n) < spec.resample_prob
    labels = (rng.random(n) < spec.label_prob).astype(float)
    return np.where(resample, labels, column)


# --- level grids -------------------------------------------------------------------

def level_grid(start, stop, step) -> tuple[float, ...]:
    """Inclusive [start, stop] grid computed in exact decimals.

    Accepts decimal strings or numbers; avoids 0.1-accumulation drift, so
    level_grid(0, 1, "0.1") ends exactly at 1.0 with 11 points.
    """
    d_start, d_stop, d_step = (Decimal(str(v)) for v in (start, stop, step))
    if d_step <= 0:
        raise ValueError(f"step must be positive, got {step}")
    if d_stop < d_start:
        raise ValueError(f"stop {stop} is below start {start}")
    levels = []
    i = 0
    while True:
        value = d_start + i * d_step
        if value > d_stop:
            break
        levels.append(float(value))
        i += 1
    return tuple(levels)


# --- sweep harness -------------------------------------------------------------------

@dataclass(frozen=True)
class SweepRow:
    level: float
    replication: int
    estimator: str
    coefficient: str
    point: float
    lower: float
    upper: float
    width: float
    covered: bool


@dataclass(frozen=True)
class ScenarioSpec:
    """Synthetic sweep description.

    task "regression": draws X ~ N(0,1) covariates (uniform(0,10) for a
    square-root bias target), a linear or logistic response from true_beta,
    injects the error process into the target column(s) to build the map
    copy, and runs the requested estimators against true_beta.

    task "mean": draws an N-row Bernoulli(mean_value) ground truth, builds
    the map copy via the error process, and runs mean/area estimators
    against mean_value.

    The grid level is the injector's level: the noise/bias c, or for
    kind "bernoulli" the probability named by error_params["vary"]
    ("label_prob" or "resample_prob", the other one fixed in error_params).
    """

    task: str
    levels: tuple
    replications: int
    n: int
    N: int
    estimators: tuple[str, ...]
    family: str = "linear"
    true_beta: tuple[float, ...] = ()
    mean_value: float = 0.5
    noise_sigma: float = 1.0
    error_kind: str = "gaussian_noise"
    error_targets: tuple[str, ...] = ("y",)
    error_params: dict = field(default_factory=dict)
    b: int = 200
    alpha: float = 0.05
    base_seed: int = 0
    redraw_calibration: bool = True

    def __post_init__(self):
        if self.task not in ("regression", "mean"):
            raise ValueError(f"unknown task {self.task!r}")
        if not 1 <= self.n <= self.N:
            raise ValueError(f"need 1 <= n <= N, got n={self.n}, N={self.N}")
        if self.replications < 1:
            raise ValueError("need at least one replication")
        if self.error_kind not in ERROR_KINDS:
            raise ValueError(f"unknown error kind {self.error_kind!r}")
        valid = REGRESSION_ESTIMATORS if self.task == "regression" else MEAN_ESTIMATORS
        for name in self.estimators:
            if name not in valid:
                raise ValueError(f"estimator {name!r} not valid for task {self.task!r}")
        if self.task == "regression" and len(self.true_beta) < 1:
            raise ValueError("regression task needs true_beta")
        targets = tuple(self.error_targets)
        if self.task == "mean":
            if targets != ("y",):
                raise ValueError("mean task supports error target 'y' only")
        else:
            k = len(self.true_beta) - 1
            valid_targets = {"y"} | {f"x{j}" for j in range(1, k + 1)}
            for target in targets:
                if target not in valid_targets:
                    raise ValueError(f"unknown error target {target!r}")
        object.__setattr__(self, "error_targets", targets)
        levels = tuple(float(v) for v in self.levels)
        if self.error_kind != "gaussian_noise":
            bad = [v for v in levels if not 0.0 <= v <= 1.0]
        else:
            bad = [v for v in levels if v < 0.0]
        if bad:
            raise ValueError(f"levels {bad} outside the {self.error_kind} domain")
        object.__setattr__(self, "levels", levels)
        object.__setattr__(self, "estimators", tuple(self.estimators))
        object.__setattr__(self, "true_beta", tuple(float(v) for v in self.true_beta))
        get_family(self.family)


def _inject(spec: ScenarioSpec, column: np.ndarray, level: float,
            rng: np.random.Generator) -> np.ndarray:
    if spec.error_kind == "gaussian_noise":
        sigma_ref = float(np.std(column))  # full population column, computed once
        return inject_gaussian_noise(column, NoiseSpec(level, "y", sigma_ref), rng)
    if spec.error_kind == "sqrt_bias":
        curve = BiasCurve(kind="square_root", a=float(spec.error_params["a"]),
                          b=float(spec.error_params["b"]), level=level)
        return inject_bias(column, curve)
    if spec.error_kind == "mean_reversion":
        mu = spec.error_params.get("mu")
        mu = float(column.mean()) if mu is None else float(mu)
        return inject_bias(column, BiasCurve(kind="mean_reversion", mu=mu, level=level))
    params = dict(spec.error_params)
    vary = params.pop("vary", "label_prob")
    params[vary] = level
    return inject_bernoulli_error(
        column,
        BernoulliErrorSpec(resample_prob=float(params["resample_prob"]),
                           label_prob=float(params["label_prob"])),
        rng,
    )


def _calibration_indices(spec: ScenarioSpec, li: int, rep: int) -> np.ndarray:
    if spec.redraw_calibration:
        seed = RngSeed(spec.base_seed, (li, rep, 2))
    else:
        seed = RngSeed(spec.base_seed, (2,))  # one fixed index set for every cell
    return simple_random_subsample(spec.N, spec.n, seed)


def _interval_rows(level, rep, estimator, names, points, intervals, truth):
    rows = []
    for j, name in enumerate(names):
        lower = float(intervals[j, 0])
        upper = float(intervals[j, 1])
        rows.append(SweepRow(
            level=level, replication=rep, estimator=estimator, coefficient=name,
            point=float(points[j]), lower=lower, upper=upper, width=upper - lower,
            covered=bool(lower <= truth[j] <= upper),
        ))
    return rows


def _regression_cell(spec: ScenarioSpec, li: int, rep: int) -> list[SweepRow]:
    level = spec.levels[li]
    family = get_family(spec.family)
    beta = np.asarray(spec.true_beta)
    k = beta.size - 1
    rng_gen = RngSeed(spec.base_seed, (li, rep, 0)).generator()
    sqrt_target = spec.error_kind == "sqrt_bias"
    cols = []
    for j in range(k):
        if sqrt_target and f"x{j + 1}" in spec.error_targets:
            cols.append(rng_gen.uniform(0.0, 10.0, spec.N))
        else:
            cols.append(rng_gen.standard_normal(spec.N))
    Xg = np.column_stack([np.ones(spec.N)] + cols) if k else np.ones((spec.N, 1))
    eta = Xg @ beta
    if family.kind == "linear":
        y = eta + spec.noise_sigma * rng_gen.standard_normal(spec.N)
    else:
        y = (rng_gen.random(spec.N) < expit(eta)).astype(float)

    rng_err = RngSeed(spec.base_seed, (li, rep, 1)).generator()
    Xp = Xg.copy()
    yp = y
    for target in spec.error_targets:
        if target == "y":
            yp = _inject(spec, y, level, rng_err)
        else:
            j = int(target[1:])  # "x3" -> column 3 of the design
            Xp[:, j] = _inject(spec, Xg[:, j], level, rng_err)

    idx = _calibration_indices(spec, li, rep)
    names = tuple(f"beta{j}" for j in range(beta.size))
    rows: list[SweepRow] = []
    for estimator in spec.estimators:
        if estimator == "gt_only":
            est = classical_estimate(Xg[idx], y[idx], family, spec.alpha)
            rows += _interval_rows(level, rep, estimator, names, est.beta,
                                   est.intervals, beta)
        elif estimator == "map_only":
            est = classical_estimate(Xp, yp, family, spec.alpha)
            rows += _interval_rows(level, rep, estimator, names, est.beta,
                                   est.intervals, beta)
        elif estimator == "ppi":
            config = BootstrapConfig(
                b=spec.b, alpha=spec.alpha,
                seed=RngSeed(spec.base_seed, (li, rep, 3)).state(),
            )
            est = ppi_bootstrap_arrays(Xg[idx], y[idx], Xp[idx], yp[idx], Xp, yp,
                                       family, config)
            rows += _interval_rows(level, rep, estimator, names, est.beta_ppi,
                                   est.intervals, beta)
        else:  # ppi_analytic
            est = ppi_analytic_arrays(Xg[idx], y[idx], Xp[idx], yp[idx], Xp, yp,
                                      family, spec.alpha)
            rows += _interval_rows(level, rep, estimator, names, est.beta_ppi,
                                   est.intervals, beta)
    return rows


def _mean_cell(spec: ScenarioSpec, li: int, rep: int) -> list[SweepRow]:
    level = spec.levels[li]
    rng_gen = RngSeed(spec.base_seed, (li, rep, 0)).generator()
    gt = (rng_gen.random(spec.N) < spec.mean_value).astype(float)
    rng_err = RngSeed(spec.base_seed, (li, rep, 1)).generator()
    map_col = _inject(spec, gt, level, rng_err)
    idx = _calibration_indices(spec, li, rep)
    truth = (spec.mean_value,)

    rows: list[SweepRow] = []
    for estimator in spec.estimators:
        if estimator == "gt_only":
            est = gt_only_mean(gt[idx], spec.alpha)
        elif estimator == "map_only":
            est = map_only_mean(map_col, spec.alpha)
        elif estimator == "ppi":
            est = ppi_mean(map_col, gt[idx], map_col[idx], spec.alpha)
        elif estimator == "ppi_tuned":
            try:
                est = ppi_mean_tuned(map_col, gt[idx], map_col[idx], spec.alpha)
            except ZeroVariance:
                est = ppi_mean_tuned(map_col, gt[idx], map_col[idx], spec.alpha,
                                     tuning=LambdaTuning(lam=1.0, mode="one"))
        else:  # post_stratified
            counts = ConfusionCounts.from_labels(map_col[idx], gt[idx], num_classes=2)
            share_one = float(map_col.mean())
            est = post_stratified_area(counts, (1.0 - share_one, share_one), j=1,
                                       alpha=spec.alpha)
        rows += _interval_rows(level, rep, estimator, ("theta",), (est.theta,),
                               np.array([est.interval]), truth)
    return rows


def run_scenario(spec: ScenarioSpec, workers: int = 1) -> list[SweepRow]:
    """Run every (level, replication) cell and return the sweep rows.

    Cells execute independently (optionally threaded) and merge in
    deterministic (level, replication) order; output depends only on spec
    and spec.base_seed. Cell failures are collected and raised together as
    a ScenarioError naming the failing coordinates.
    """
    cells = [(li, rep) for li in range(len(spec.levels))
             for rep in range(spec.replications)]
    cell_fn = _regression_cell if spec.task == "regression" else _mean_cell

    def one(cell):
        li, rep = cell
        try:
            return cell_fn(spec, li, rep), None
        except MapcalibError as exc:
            return None, (spec.levels[li], rep, f"{type(exc).__name__}: {exc}")

    if workers <= 1:
        results = [one(cell) for cell in cells]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, cells))

    failures = [fail for _, fail in results if fail is not None]
    if failures:
        shown = "; ".join(f"level {lv}, replication {rep}: {msg}"
                          for lv, rep, msg in failures[:10])
        more = "" if len(failures) <= 10 else f" (+{len(failures) - 10} more)"
        raise ScenarioError(f"{len(failures)} cell(s) failed: {shown}{more}")
    rows: list[SweepRow] = []
    for cell_rows, _ in results:
        rows.extend(cell_rows)
    return rows


def write_sweep(rows, path) -> None:
    """Write sweep rows as CSV with the canonical column order."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SWEEP_COLUMNS)
        for row in rows:
            writer.writerow([
                repr(row.level), row.replication, row.estimator, row.coefficient,
                repr(row.point), repr(row.lower), repr(row.upper),
                repr(row.width), int(row.covered),
            ])


def summarize_sweep(rows) -> list[dict]:
    """Per (level, estimator, coefficient): coverage rate and mean width."""
    groups: dict[tuple, list[SweepRow]] = {}
    for row in rows:
        groups.setdefault((row.level, row.estimator, row.coefficient), []).append(row)
    summary = []
    for (level, estimator, coefficient), members in sorted(groups.items()):
        summary.append({
            "level": level,
            "estimator": estimator,
            "coefficient": coefficient,
            "replications": len(members),
            "coverage": sum(r.covered for r in members) / len(members),
            "mean_width": sum(r.width for r in members) / len(members),
        })
    return summary
