"""Tuned prediction-powered regression coefficients.

The estimator combines three component GLM fits (ground truth on the
calibration rows, proxies on the same rows, proxies on all map rows) into
a bias-corrected coefficient vector

    beta_ppi = Omega @ gamma_map + (beta_calib - Omega @ gamma_calib),

with the tuning matrix Omega chosen from plug-in sandwich matrices.
Confidence intervals come from the prediction-powered percentile bootstrap
(calibration and map rows resampled independently, Omega recomputed in
every resample) or from the analytic covariance.
"""
from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .data import Dataset, RngSeed
from .errors import (
    DegenerateResamples,
    DimensionMismatch,
    MapcalibError,
    NoConvergence,
    NonPositiveWidth,
    RankDeficient,
    Separation,
    SingularMatrix,
    TooFewPoints,
)
from .glm import ModelFamily, fit_glm, get_family, logistic_loss_gradient_hessian
from .means import z_value

EIG_RTOL = 1e-10  # invertibility rule for the sandwich blocks
MAX_REDRAWS = 10
OMEGA_LADDER = ("optimal", "identity", "zero")


@dataclass(frozen=True)
class PpiComponents:
    """The three component coefficient vectors plus sample sizes."""

    beta_calib: np.ndarray
    gamma_calib: np.ndarray
    gamma_map: np.ndarray
    n: int
    N: int

    def __post_init__(self):
        if not 0 < self.n <= self.N:
            raise DimensionMismatch(f"need 0 < n <= N, got n={self.n}, N={self.N}")
        p = self.beta_calib.shape[0]
        if self.gamma_calib.shape != (p,) or self.gamma_map.shape != (p,):
            raise DimensionMismatch("component coefficient vectors differ in length")

    @property
    def rho(self) -> float:
        return self.n / self.N


@dataclass(frozen=True)
class SandwichMatrices:
    """Plug-in Hessian blocks (d_*) and score-covariance blocks (c_*).

    All five are p x p, computed as 1/n sums over the calibration rows;
    c12 is the only one that is not symmetric.
    """

    d_beta: np.ndarray
    d_gamma: np.ndarray
    c11: np.ndarray
    c12: np.ndarray
    c22: np.ndarray


@dataclass(frozen=True)
class TuningMatrix:
    omega: np.ndarray
    mode: str  # optimal | identity | zero | user


@dataclass(frozen=True)
class BootstrapConfig:
    """B resampling iterations at level 1-alpha, seeded."""

    b: int = 2000
    alpha: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.b < 2:
            raise ValueError(f"need at least 2 bootstrap iterations, got {self.b}")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must be in (0,1), got {self.alpha}")


@dataclass(frozen=True)
class PpiEstimate:
    """PPI point estimate with per-coefficient intervals.

    covariance holds the analytic matrix when it was computable (always for
    method="analytic_normal", best-effort for the bootstrap). For
    percentile intervals lower <= point <= upper is not guaranteed, only
    lower <= upper. draws is the (b, p) matrix of resampled points when the
    bootstrap produced the estimate, None otherwise.
    """

    beta_ppi: np.ndarray
    omega: TuningMatrix
    covariance: np.ndarray | None
    intervals: np.ndarray  # (p, 2)
    method: str  # analytic_normal | percentile_bootstrap
    components: PpiComponents
    alpha: float
    draws: np.ndarray | None = None


# --- component fits ----------------------------------------------------------

def fit_components_arrays(
    Xg, yg, Xp, yp, Xm, ym,
    family: ModelFamily,
    warm: PpiComponents | None = None,
) -> PpiComponents:
    """Fit beta_calib, gamma_calib (n rows) and gamma_map (N rows).

    Errors from the underlying GLM fits are re-raised with a tag naming
    which of the three fits failed. `warm` supplies Newton starting points
    (the bootstrap passes the plug-in fit).
    """
    family = get_family(family)
    Xg, Xp, Xm = (np.asarray(a, dtype=float) for a in (Xg, Xp, Xm))
    if Xg.shape != Xp.shape:
        raise DimensionMismatch(
            f"calibration designs disagree: {Xg.shape} vs {Xp.shape}"
        )
    if Xm.ndim != 2 or Xm.shape[1] != Xg.shape[1]:
        raise DimensionMismatch(
            f"map design has {Xm.shape[1] if Xm.ndim == 2 else '?'} columns, "
            f"calibration has {Xg.shape[1]}"
        )

    jobs = (
        ("ground-truth calibration", Xg, yg, None if warm is None else warm.beta_calib),
        ("proxy calibration", Xp, yp, None if warm is None else warm.gamma_calib),
        ("proxy map", Xm, ym, None if warm is None else warm.gamma_map),
    )
    betas = []
    for label, X, y, beta0 in jobs:
        try:
            betas.append(fit_glm(X, y, family, beta0=beta0).beta)
        except MapcalibError as exc:
            raise type(exc)(f"{label} fit: {exc}") from exc
    return PpiComponents(
        beta_calib=betas[0], gamma_calib=betas[1], gamma_map=betas[2],
        n=Xg.shape[0], N=Xm.shape[0],
    )


def fit_components(dataset: Dataset, family: ModelFamily) -> PpiComponents:
    return fit_components_arrays(*dataset.ppi_arrays(), family=family)


# --- sandwich matrices ---------------------------------------------------------

def _sym(M: np.ndarray) -> np.ndarray:
    return (M + M.T) / 2.0


def sandwich_matrices_arrays(
    Xg, yg, Xp, yp, family: ModelFamily, components: PpiComponents
) -> SandwichMatrices:
    """Plug-in sandwich blocks from the calibration rows.

    With r_i = y_i - psi_dot(beta'x_i) and rh_i = yhat_i -
    psi_dot(gamma'xhat_i):

        d_beta  = (1/n) sum psi_ddot(beta'x_i) x_i x_i'
        d_gamma = (1/n) sum psi_ddot(gamma'xhat_i) xhat_i xhat_i'
        c11     = (1/n) sum r_i^2 x_i x_i'
        c12     = (1/n) sum r_i rh_i x_i xhat_i'
        c22     = (1/n) sum rh_i^2 xhat_i xhat_i'
    """
    family = get_family(family)
    Xg = np.asarray(Xg, dtype=float)
    Xp = np.asarray(Xp, dtype=float)
    yg = np.asarray(yg, dtype=float)
    yp = np.asarray(yp, dtype=float)
    n = Xg.shape[0]
    if yg.shape != (n,) or yp.shape != (n,) or Xp.shape != Xg.shape:
        raise DimensionMismatch("calibration arrays disagree in shape")
    p = Xg.shape[1]
    if components.beta_calib.shape != (p,):
        raise DimensionMismatch("components were fitted with a different column count")

    sg = Xg @ components.beta_calib
    sp = Xp @ components.gamma_calib
    r = yg - family.psi_dot(sg)
    rh = yp - family.psi_dot(sp)
    wb = family.psi_ddot(sg)
    wg = family.psi_ddot(sp)
    return SandwichMatrices(
        d_beta=_sym((Xg * wb[:, None]).T @ Xg / n),
        d_gamma=_sym((Xp * wg[:, None]).T @ Xp / n),
        c11=_sym((Xg * (r * r)[:, None]).T @ Xg / n),
        c12=(Xg * (r * rh)[:, None]).T @ Xp / n,
        c22=_sym((Xp * (rh * rh)[:, None]).T @ Xp / n),
    )


def sandwich_matrices(
    dataset: Dataset, family: ModelFamily, components: PpiComponents
) -> SandwichMatrices:
    return sandwich_matrices_arrays(
        dataset.calib_design_gt(), dataset.calib_response_gt(),
        dataset.calib_design_proxy(), dataset.calib_response_proxy(),
        family, components,
    )


# --- tuning and covariance -----------------------------------------------------

def _check_invertible(M: np.ndarray, label: str) -> None:
    ev = np.linalg.eigvalsh(M)
    if ev[-1] <= 0.0 or ev[0] <= EIG_RTOL * ev[-1]:
        raise SingularMatrix(
            f"{label} is singular to tolerance (eigenvalue ratio "
            f"{0.0 if ev[-1] <= 0 else ev[0] / ev[-1]:.2e}); calibration sample "
            "may be too small or proxies degenerate"
        )


def optimal_omega(S: SandwichMatrices) -> TuningMatrix:
    """Omega = d_beta^-1 c12 c22^-1 d_gamma, the variance-optimal tuning."""
    _check_invertible(S.d_beta, "d_beta")
    _check_invertible(S.c22, "c22")
    omega = np.linalg.solve(S.d_beta, S.c12 @ np.linalg.solve(S.c22, S.d_gamma))
    return TuningMatrix(omega=omega, mode="optimal")


def resolve_omega(S: SandwichMatrices, mode, p: int) -> TuningMatrix:
    """Resolve an omega request, descending the fallback ladder.

    `mode` is "optimal" | "identity" | "zero", or an explicit p x p array
    (mode "user", used as given). A SingularMatrix at one rung falls
    through to the next; the landed rung is recorded in TuningMatrix.mode.
    """
    if isinstance(mode, TuningMatrix):
        return mode
    if isinstance(mode, np.ndarray):
        if mode.shape != (p, p):
            raise DimensionMismatch(f"user omega must be {p}x{p}, got {mode.shape}")
        return TuningMatrix(omega=np.array(mode, dtype=float), mode="user")
    if mode not in OMEGA_LADDER:
        raise ValueError(f"omega mode must be one of {OMEGA_LADDER}, got {mode!r}")
    for rung in OMEGA_LADDER[OMEGA_LADDER.index(mode):]:
        try:
            if rung == "optimal":
                return optimal_omega(S)
            if rung == "identity":
                return TuningMatrix(omega=np.eye(p), mode="identity")
            return TuningMatrix(omega=np.zeros((p, p)), mode="zero")
        except SingularMatrix:
            continue
    raise AssertionError("unreachable: zero rung cannot fail")


def ppi_point(components: PpiComponents, omega) -> np.ndarray:
    """Omega @ gamma_map + (beta_calib - Omega @ gamma_calib)."""
    om = omega.omega if isinstance(omega, TuningMatrix) else np.asarray(omega, dtype=float)
    p = components.beta_calib.shape[0]
    if om.shape != (p, p):
        raise DimensionMismatch(f"omega must be {p}x{p}, got {om.shape}")
    return om @ components.gamma_map + (components.beta_calib - om @ components.gamma_calib)


def analytic_covariance(S: SandwichMatrices, n: int, N: int) -> np.ndarray:
    """(1/n) (d^-1 c11 d^-1 - (1 - n/N) d^-1 c12 c22^-1 c12' d^-1).

    Symmetrized; any negative diagonal entry (possible in finite samples)
    is floored at 0 with a RuntimeWarning.
    """
    _check_invertible(S.d_beta, "d_beta")
    _check_invertible(S.c22, "c22")
    t1 = np.linalg.solve(S.d_beta, np.linalg.solve(S.d_beta, S.c11).T)
    e = np.linalg.solve(S.d_beta, S.c12)
    t2 = e @ np.linalg.solve(S.c22, e.T)
    cov = _sym((t1 - (1.0 - n / N) * t2) / n)
    diag = np.einsum("ii->i", cov)
    if (diag < 0.0).any():
        warnings.warn(
            "analytic covariance had a negative diagonal entry; floored at 0",
            RuntimeWarning,
        )
        cov = cov.copy()
        np.fill_diagonal(cov, np.maximum(np.diag(cov), 0.0))
    return cov


def effective_sample_size(n: int, w_gt: float, w_new: float) -> float:
    """n * (w_gt / w_new)^2: the GT-only count matching the new width."""
    if n < 1:
        raise ValueError(f"n must be at least 1, got {n}")
    if w_gt <= 0.0 or w_new <= 0.0:
        raise NonPositiveWidth(f"widths must be positive, got {w_gt} and {w_new}")
    return n * (w_gt / w_new) ** 2


# --- estimates ------------------------------------------------------------------

def _normal_intervals(point: np.ndarray, cov: np.ndarray, alpha: float) -> np.ndarray:
    half = z_value(alpha) * np.sqrt(np.diag(cov))
    return np.column_stack([point - half, point + half])


def ppi_analytic_arrays(
    Xg, yg, Xp, yp, Xm, ym,
    family: ModelFamily,
    alpha: float = 0.05,
    omega_mode="optimal",
) -> PpiEstimate:
    """Plug-in PPI estimate with analytic-normal intervals."""
    comp = fit_components_arrays(Xg, yg, Xp, yp, Xm, ym, family)
    S = sandwich_matrices_arrays(Xg, yg, Xp, yp, family, comp)
    tuning = resolve_omega(S, omega_mode, comp.beta_calib.shape[0])
    point = ppi_point(comp, tuning)
    cov = analytic_covariance(S, comp.n, comp.N)
    return PpiEstimate(
        beta_ppi=point, omega=tuning, covariance=cov,
        intervals=_normal_intervals(point, cov, alpha),
        method="analytic_normal", components=comp, alpha=alpha,
    )


def ppi_analytic(dataset: Dataset, family: ModelFamily,
                 alpha: float = 0.05, omega_mode="optimal") -> PpiEstimate:
    return ppi_analytic_arrays(*dataset.ppi_arrays(), family=family,
                               alpha=alpha, omega_mode=omega_mode)


def ppi_bootstrap_arrays(
    Xg, yg, Xp, yp, Xm, ym,
    family: ModelFamily,
    config: BootstrapConfig,
    omega_mode="optimal",
    workers: int = 1,
) -> PpiEstimate:
    """Prediction-powered percentile bootstrap.

    Each of the B iterations independently resamples the n calibration rows
    and the N map rows with replacement, refits all three components (warm
    started), recomputes the sandwich matrices and Omega, and records the
    resampled point estimate. The reported point is the non-resampled
    plug-in estimate; intervals are the (alpha/2, 1-alpha/2) empirical
    percentiles with linear interpolation between order statistics.

    A resample that is rank deficient, separable, or singular is redrawn
    up to 10 times before the whole call fails with DegenerateResamples.
    Output is a pure function of the inputs and config.seed: iteration b
    uses the stream keyed (seed, b, attempt), so thread count and
    scheduling cannot change the result.
    """
    Xg, yg, Xp, yp, Xm, ym = (np.asarray(a, dtype=float)
                              for a in (Xg, yg, Xp, yp, Xm, ym))
    comp = fit_components_arrays(Xg, yg, Xp, yp, Xm, ym, family)
    p = comp.beta_calib.shape[0]
    S = sandwich_matrices_arrays(Xg, yg, Xp, yp, family, comp)
    tuning = resolve_omega(S, omega_mode, p)
    point = ppi_point(comp, tuning)
    try:
        cov = analytic_covariance(S, comp.n, comp.N)
    except SingularMatrix as exc:
        warnings.warn(f"analytic covariance unavailable: {exc}", RuntimeWarning)
        cov = None

    n, N = comp.n, comp.N
    fixed_omega = isinstance(omega_mode, (TuningMatrix, np.ndarray))

    def one(b: int) -> np.ndarray:
        for attempt in range(MAX_REDRAWS):
            rng = RngSeed(config.seed, (b, attempt)).generator()
            ic = rng.integers(0, n, n)
            im = rng.integers(0, N, N)
            try:
                comp_b = fit_components_arrays(
                    Xg[ic], yg[ic], Xp[ic], yp[ic], Xm[im], ym[im],
                    family, warm=comp,
                )
                if fixed_omega:
                    tuning_b = tuning
                else:
                    S_b = sandwich_matrices_arrays(
                        Xg[ic], yg[ic], Xp[ic], yp[ic], family, comp_b
                    )
                    tuning_b = resolve_omega(S_b, omega_mode, p)
                return ppi_point(comp_b, tuning_b)
            except (RankDeficient, Separation, NoConvergence, SingularMatrix):
                continue
        raise DegenerateResamples(
            f"bootstrap iteration {b}: {MAX_REDRAWS} consecutive degenerate resamples"
        )

    draws = np.empty((config.b, p))
    if workers <= 1:
        for b in range(config.b):
            draws[b] = one(b)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            for b, result in enumerate(pool.map(one, range(config.b))):
                draws[b] = result

    lower, upper = np.quantile(
        draws, [config.alpha / 2.0, 1.0 - config.alpha / 2.0],
        axis=0, method="linear",
    )
    return PpiEstimate(
        beta_ppi=point, omega=tuning, covariance=cov,
        intervals=np.column_stack([lower, upper]),
        method="percentile_bootstrap", components=comp, alpha=config.alpha,
        draws=draws,
    )


def ppi_bootstrap(dataset: Dataset, family: ModelFamily, config: BootstrapConfig,
                  omega_mode="optimal", workers: int = 1) -> PpiEstimate:
    return ppi_bootstrap_arrays(*dataset.ppi_arrays(), family=family,
                                config=config, omega_mode=omega_mode,
                                workers=workers)


# --- classical single-sample fits -------------------------------------------------

@dataclass(frozen=True)
class ClassicalEstimate:
    """A plain GLM fit with textbook-normal intervals (no PPI correction)."""

    beta: np.ndarray
    covariance: np.ndarray
    intervals: np.ndarray
    alpha: float


def classical_estimate(X, y, family: ModelFamily, alpha: float = 0.05,
                       beta0=None) -> ClassicalEstimate:
    """GT-only / map-only style fit with classical standard errors.

    Linear: sigma^2 (X'X)^-1 with sigma^2 = RSS/(n-p). Logistic: inverse
    observed information at the MLE.
    """
    family = get_family(family)
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    fit = fit_glm(X, y, family, beta0=beta0)
    n, p = X.shape
    if family.kind == "linear":
        if n <= p:
            raise TooFewPoints(f"classical variance needs n > p, got n={n}, p={p}")
        resid = y - X @ fit.beta
        sigma2 = float(resid @ resid) / (n - p)
        cov = sigma2 * np.linalg.inv(X.T @ X)
    else:
        hess = logistic_loss_gradient_hessian(X, y, fit.beta)[2]
        _check_invertible(hess, "observed information")
        cov = np.linalg.inv(hess)
    cov = _sym(cov)
    return ClassicalEstimate(
        beta=fit.beta, covariance=cov,
        intervals=_normal_intervals(fit.beta, cov, alpha), alpha=alpha,
    )
