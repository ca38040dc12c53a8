"""Mean and area estimation.

Flavors: ground-truth-only, map-only, PPI mean (plain and lambda-tuned),
regression mean, stratified mean, post-stratified area, weighted
stratified PPI, and the PPI vs post-stratified equivalence report for
binary maps.

All variance estimators deliberately use the biased 1/n normalization
(no n-1 correction): sigma_hat for a plain mean is (1/n) sqrt(sum of
squared deviations). Intervals are theta +/- z_{alpha/2} sigma for every
method here.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

from .errors import (
    DimensionMismatch,
    EmptyMapStratum,
    NonPositiveWeight,
    NotBinary,
    TooFewPoints,
    TooFewPointsInStratum,
    ZeroVariance,
)
from .glm import fit_linear


def z_value(alpha: float) -> float:
    """Two-sided normal quantile z_{alpha/2} (1.959963984540054 at 0.05)."""
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must be in (0,1), got {alpha}")
    return float(ndtri(1.0 - alpha / 2.0))


@dataclass(frozen=True)
class MeanEstimate:
    theta: float
    sigma: float
    interval: tuple[float, float]
    method: str


def _normal_estimate(theta: float, sigma: float, alpha: float, method: str) -> MeanEstimate:
    half = z_value(alpha) * sigma
    return MeanEstimate(theta=float(theta), sigma=float(sigma),
                        interval=(float(theta - half), float(theta + half)),
                        method=method)


def _pop_var(v: np.ndarray) -> float:
    # biased 1/n variance, matching the package-wide convention
    return float(np.var(v))


def _mean_sigma(v: np.ndarray) -> float:
    theta = v.mean()
    return float(np.sqrt(((v - theta) ** 2).sum()) / v.size)


# --- single-sample means ------------------------------------------------------

def gt_only_mean(y, alpha: float = 0.05) -> MeanEstimate:
    """Sample mean of the ground-truth values with sigma = (1/n) sqrt(SSE)."""
    y = np.asarray(y, dtype=float)
    if y.size < 2:
        raise TooFewPoints(f"need at least 2 points, got {y.size}")
    return _normal_estimate(y.mean(), _mean_sigma(y), alpha, "gt_only")


def map_only_mean(preds, alpha: float = 0.05) -> MeanEstimate:
    """Sample mean of the map predictions (same formulas, no correction)."""
    preds = np.asarray(preds, dtype=float)
    if preds.size < 2:
        raise TooFewPoints(f"need at least 2 points, got {preds.size}")
    return _normal_estimate(preds.mean(), _mean_sigma(preds), alpha, "map_only")


def ppi_mean(map_preds, calib_gt, calib_preds, alpha: float = 0.05) -> MeanEstimate:
    """Bias-corrected mean: mean(map) - mean(calib_preds - calib_gt).

    sigma^2 = Var(map)/N + Var(calib_preds - calib_gt)/n with biased
    variances.
    """
    map_preds = np.asarray(map_preds, dtype=float)
    calib_gt = np.asarray(calib_gt, dtype=float)
    calib_preds = np.asarray(calib_preds, dtype=float)
    if calib_gt.shape != calib_preds.shape:
        raise DimensionMismatch(
            f"{calib_gt.size} ground-truth vs {calib_preds.size} predicted calibration values"
        )
    n = calib_gt.size
    N = map_preds.size
    if n < 2:
        raise TooFewPoints(f"need at least 2 calibration points, got {n}")
    if N < 1:
        raise TooFewPoints("need at least 1 map row")
    d = calib_preds - calib_gt
    theta = map_preds.mean() - d.mean()
    sigma = np.sqrt(_pop_var(map_preds) / N + _pop_var(d) / n)
    return _normal_estimate(theta, sigma, alpha, "ppi_mean")


@dataclass(frozen=True)
class LambdaTuning:
    """Scalar tuning for the PPI mean. mode "plugin_cov_var" means
    lam = Cov_n(Y, Yhat) / Var_N(map)."""

    lam: float
    mode: str  # "one" | "plugin_cov_var"


def plugin_lambda(map_preds, calib_gt, calib_preds) -> LambdaTuning:
    map_preds = np.asarray(map_preds, dtype=float)
    calib_gt = np.asarray(calib_gt, dtype=float)
    calib_preds = np.asarray(calib_preds, dtype=float)
    var_map = _pop_var(map_preds)
    if var_map == 0.0:
        raise ZeroVariance("map predictions are constant; fall back to lambda = 1")
    cov = float(((calib_gt - calib_gt.mean()) * (calib_preds - calib_preds.mean())).mean())
    return LambdaTuning(lam=cov / var_map, mode="plugin_cov_var")


def ppi_mean_tuned(map_preds, calib_gt, calib_preds, alpha: float = 0.05,
                   tuning: LambdaTuning | None = None) -> MeanEstimate:
    """Lambda-tuned PPI mean.

    theta = lam * mean(map) - mean(lam * calib_preds - calib_gt);
    sigma^2 = Var(calib_gt - lam*calib_preds)/n + lam^2 Var(map)/N.
    With tuning=None the plug-in lambda is computed (ZeroVariance if the
    map column is constant); lam=1 reproduces ppi_mean exactly.
    """
    map_preds = np.asarray(map_preds, dtype=float)
    calib_gt = np.asarray(calib_gt, dtype=float)
    calib_preds = np.asarray(calib_preds, dtype=float)
    if calib_gt.shape != calib_preds.shape:
        raise DimensionMismatch(
            f"{calib_gt.size} ground-truth vs {calib_preds.size} predicted calibration values"
        )
    n = calib_gt.size
    N = map_preds.size
    if n < 2:
        raise TooFewPoints(f"need at least 2 calibration points, got {n}")
    if N < 1:
        raise TooFewPoints("need at least 1 map row")
    if tuning is None:
        tuning = plugin_lambda(map_preds, calib_gt, calib_preds)
    lam = float(tuning.lam)
    theta = lam * map_preds.mean() - (lam * calib_preds - calib_gt).mean()
    sigma = np.sqrt(_pop_var(calib_gt - lam * calib_preds) / n
                    + lam * lam * _pop_var(map_preds) / N)
    return _normal_estimate(theta, sigma, alpha, "ppi_mean_tuned")


def regression_mean(y_calib, x_calib, x_pop_means, alpha: float = 0.05) -> MeanEstimate:
    """Survey regression estimator: ybar + b'(Xbar_pop - xbar_calib).

    b is the least-squares slope vector on the calibration sample
    (intercept added internally); x_pop_means are the known population
    means of the auxiliary covariates. sigma = (1/n) sqrt(sum of squared
    calibration residuals).
    """
    y = np.asarray(y_calib, dtype=float)
    X = np.atleast_2d(np.asarray(x_calib, dtype=float))
    if X.shape[0] == 1 and y.size > 1:
        X = X.T
    pop_means = np.atleast_1d(np.asarray(x_pop_means, dtype=float))
    if X.shape[0] != y.size:
        raise DimensionMismatch(f"{X.shape[0]} covariate rows vs {y.size} responses")
    if pop_means.shape != (X.shape[1],):
        raise DimensionMismatch(
            f"{pop_means.size} population means vs {X.shape[1]} covariates"
        )
    n, k = X.shape
    if n < k + 2:
        raise TooFewPoints(f"need at least {k + 2} calibration rows, got {n}")
    design = np.column_stack([np.ones(n), X])
    fit = fit_linear(design, y)
    b = fit.beta[1:]
    theta = y.mean() + b @ (pop_means - X.mean(axis=0))
    resid = y - design @ fit.beta
    sigma = np.sqrt((resid ** 2).sum()) / n
    return _normal_estimate(theta, sigma, alpha, "regression_mean")


# --- strata ---------------------------------------------------------------------

@dataclass(frozen=True)
class StratumSpec:
    """Per-stratum area shares and sample counts.

    shares must be strictly positive and sum to 1 (within 1e-9);
    calibration weights are A_k n / n_k, map weights A_k N / N_k.
    """

    shares: tuple[float, ...]
    calib_counts: tuple[int, ...]
    map_counts: tuple[int, ...] | None = None

    def __post_init__(self):
        if len(self.calib_counts) != len(self.shares):
            raise ValueError("calib_counts and shares differ in length")
        if self.map_counts is not None and len(self.map_counts) != len(self.shares):
            raise ValueError("map_counts and shares differ in length")
        for k, share in enumerate(self.shares):
            if not share > 0.0:
                raise NonPositiveWeight(f"stratum {k} share {share} is not positive")
        if abs(sum(self.shares) - 1.0) > 1e-9:
            raise ValueError(f"stratum shares sum to {sum(self.shares)!r}, expected 1")
        for k, count in enumerate(self.calib_counts):
            if count < 1:
                raise NonPositiveWeight(f"stratum {k} has no calibration rows")
        if self.map_counts is not None:
            for k, count in enumerate(self.map_counts):
                if count < 1:
                    raise NonPositiveWeight(f"stratum {k} has no map rows")


def stratified_mean(samples, shares, alpha: float = 0.05) -> MeanEstimate:
    """theta = sum A_k mean_k, sigma = sqrt(sum A_k^2 sigma_k^2).

    samples is a sequence of per-stratum ground-truth vectors aligned with
    shares; every stratum needs at least two points.
    """
    samples = [np.asarray(s, dtype=float) for s in samples]
    if len(samples) != len(shares):
        raise DimensionMismatch(f"{len(samples)} strata vs {len(shares)} shares")
    for k, s in enumerate(samples):
        if s.size < 2:
            raise TooFewPointsInStratum(f"stratum {k} has {s.size} point(s), need 2")
    spec = StratumSpec(shares=tuple(float(a) for a in shares),
                       calib_counts=tuple(s.size for s in samples))
    theta = sum(a * s.mean() for a, s in zip(spec.shares, samples))
    var = sum(a * a * _mean_sigma(s) ** 2 for a, s in zip(spec.shares, samples))
    return _normal_estimate(theta, np.sqrt(var), alpha, "stratified")


@dataclass(frozen=True)
class ConfusionCounts:
    """K x K counts, rows = map class, columns = ground-truth class."""

    counts: np.ndarray

    def __post_init__(self):
        counts = np.asarray(self.counts)
        if counts.ndim != 2 or counts.shape[0] != counts.shape[1]:
            raise DimensionMismatch(f"confusion counts must be square, got {counts.shape}")
        if np.any(counts < 0) or not np.all(counts == np.floor(counts)):
            raise ValueError("confusion counts must be nonnegative integers")
        counts = counts.astype(np.int64)
        counts.flags.writeable = False
        object.__setattr__(self, "counts", counts)

    @classmethod
    def from_labels(cls, map_labels, gt_labels, num_classes: int | None = None):
        m = np.asarray(map_labels)
        g = np.asarray(gt_labels)
        if m.shape != g.shape:
            raise DimensionMismatch(f"{m.size} map labels vs {g.size} ground-truth labels")
        mi = m.astype(np.int64)
        gi = g.astype(np.int64)
        if np.any(mi != m) or np.any(gi != g) or mi.min(initial=0) < 0 or gi.min(initial=0) < 0:
            raise ValueError("labels must be nonnegative integers")
        k = int(max(mi.max(initial=0), gi.max(initial=0))) + 1 if num_classes is None else num_classes
        counts = np.bincount(mi * k + gi, minlength=k * k).reshape(k, k)
        return cls(counts=counts)

    @property
    def k(self) -> int:
        return self.counts.shape[0]

    @property
    def n(self) -> int:
        return int(self.counts.sum())

    @property
    def row_sums(self) -> np.ndarray:  # n_i. : per map class
        return self.counts.sum(axis=1)

    @property
    def col_sums(self) -> np.ndarray:  # n_.j : per ground-truth class
        return self.counts.sum(axis=0)


def post_stratified_area(counts: ConfusionCounts, areas, j: int,
                         alpha: float = 0.05) -> MeanEstimate:
    """Area of ground-truth class j, post-stratified by map class.

    theta = sum_i A_i n_ij / n_i. ; sigma^2 = sum_i A_i^2 p_ij (1 - p_ij)
    / n_i. (n_i. in the denominator, no -1). Map classes with A_i = 0 are
    skipped; a class with A_i > 0 needs n_i. >= 2.
    """
    areas = np.asarray(areas, dtype=float)
    if areas.shape != (counts.k,):
        raise DimensionMismatch(f"{areas.size} area shares vs {counts.k} map classes")
    if np.any(areas < 0.0):
        raise NonPositiveWeight("area shares must be nonnegative")
    if abs(areas.sum() - 1.0) > 1e-9:
        raise ValueError(f"area shares sum to {areas.sum()!r}, expected 1")
    if not 0 <= j < counts.k:
        raise DimensionMismatch(f"class {j} out of range for K={counts.k}")
    row_tot = counts.row_sums
    theta = 0.0
    var = 0.0
    for i in range(counts.k):
        if areas[i] == 0.0:
            continue
        if row_tot[i] < 2:
            raise EmptyMapStratum(
                f"map class {i} has area share {areas[i]} but "
                f"{int(row_tot[i])} calibration row(s); need at least 2"
            )
        p = counts.counts[i, j] / row_tot[i]
        theta += areas[i] * p
        var += areas[i] ** 2 * p * (1.0 - p) / row_tot[i]
    return _normal_estimate(theta, np.sqrt(var), alpha, "post_stratified")


def weighted_ppi_mean(map_preds, calib_gt, calib_preds, map_strata, calib_strata,
                      shares, alpha: float = 0.05) -> MeanEstimate:
    """Stratified (weighted) PPI mean.

    Rows in stratum k get weight A_k n / n_k (calibration) or A_k N / N_k
    (map); the weighted values then go through the plain ppi_mean
    formulas unchanged: weights multiply the values before the mean and
    variance computations.
    """
    map_preds = np.asarray(map_preds, dtype=float)
    calib_gt = np.asarray(calib_gt, dtype=float)
    calib_preds = np.asarray(calib_preds, dtype=float)
    if calib_gt.shape != calib_preds.shape:
        raise DimensionMismatch("calibration arrays differ in length")
    mk = np.asarray(map_strata, dtype=np.int64)
    ck = np.asarray(calib_strata, dtype=np.int64)
    if mk.shape != map_preds.shape or ck.shape != calib_gt.shape:
        raise DimensionMismatch("stratum labels must align with their value arrays")
    K = len(shares)
    if mk.min(initial=0) < 0 or ck.min(initial=0) < 0 \
            or mk.max(initial=0) >= K or ck.max(initial=0) >= K:
        raise DimensionMismatch(f"stratum labels must lie in [0, {K})")
    n = calib_gt.size
    N = map_preds.size
    n_k = np.bincount(ck, minlength=K)
    N_k = np.bincount(mk, minlength=K)
    for k in range(K):
        if n_k[k] == 0:
            raise NonPositiveWeight(f"stratum {k} has share {shares[k]} but no calibration rows")
        if N_k[k] == 0:
            raise NonPositiveWeight(f"stratum {k} has share {shares[k]} but no map rows")
    spec = StratumSpec(shares=tuple(float(a) for a in shares),
                       calib_counts=tuple(int(c) for c in n_k),
                       map_counts=tuple(int(c) for c in N_k))
    shares_arr = np.asarray(spec.shares)
    w_calib = shares_arr[ck] * n / n_k[ck]
    w_map = shares_arr[mk] * N / N_k[mk]
    wm = w_map * map_preds
    d = w_calib * calib_preds - w_calib * calib_gt
    theta = wm.mean() - d.mean()
    sigma = np.sqrt(_pop_var(wm) / N + _pop_var(d) / n)
    return _normal_estimate(theta, sigma, alpha, "weighted_ppi")


# --- equivalence report -----------------------------------------------------------

def _require_binary(v: np.ndarray, name: str) -> None:
    if not np.all((v == 0.0) | (v == 1.0)):
        raise NotBinary(f"{name} must be coded 0/1")


@dataclass(frozen=True)
class EquivalenceReport:
    ppi_point: float
    post_point: float
    ppi_sigma: float
    post_sigma: float
    point_delta: float
    sigma_delta: float
    sigma_delta_rel: float


def ppi_post_stratified_equivalence(map_preds, calib_gt, calib_preds,
                                    alpha: float = 0.05,
                                    areas=None) -> EquivalenceReport:
    """Compare the lambda-tuned PPI mean with the post-stratified area.

    For binary data with A_i = n_i./n (the default areas) the two point
    estimates coincide and the sigmas converge as n grows. Returns both
    estimates and their absolute/relative deltas.
    """
    map_preds = np.asarray(map_preds, dtype=float)
    calib_gt = np.asarray(calib_gt, dtype=float)
    calib_preds = np.asarray(calib_preds, dtype=float)
    _require_binary(map_preds, "map predictions")
    _require_binary(calib_gt, "calibration ground truth")
    _require_binary(calib_preds, "calibration predictions")

    counts = ConfusionCounts.from_labels(calib_preds, calib_gt, num_classes=2)
    if areas is None:
        areas = counts.row_sums / counts.n
    ppi = ppi_mean_tuned(map_preds, calib_gt, calib_preds, alpha=alpha)
    post = post_stratified_area(counts, areas, j=1, alpha=alpha)
    sigma_delta = abs(ppi.sigma - post.sigma)
    return EquivalenceReport(
        ppi_point=ppi.theta,
        post_point=post.theta,
        ppi_sigma=ppi.sigma,
        post_sigma=post.sigma,
        point_delta=abs(ppi.theta - post.theta),
        sigma_delta=sigma_delta,
        sigma_delta_rel=(sigma_delta / post.sigma if post.sigma > 0
                         else (0.0 if sigma_delta == 0.0 else np.inf)),
    )
