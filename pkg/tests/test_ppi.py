import numpy as np
import pytest
from numpy.testing import assert_allclose

from mapcalib.errors import (
    DegenerateResamples,
    DimensionMismatch,
    NonPositiveWidth,
    RankDeficient,
    TooFewPoints,
)
from mapcalib.glm import LINEAR, LOGISTIC, fit_linear, fit_logistic, logistic_loss_gradient_hessian
from mapcalib.ppi import (
    BootstrapConfig,
    PpiComponents,
    SandwichMatrices,
    TuningMatrix,
    analytic_covariance,
    classical_estimate,
    effective_sample_size,
    fit_components_arrays,
    optimal_omega,
    ppi_analytic_arrays,
    ppi_bootstrap_arrays,
    ppi_point,
    resolve_omega,
    sandwich_matrices_arrays,
)


def _linear_problem(seed, n=80, N=900, proxy_noise=0.5):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(N)
    y = 1.0 + 2.0 * x + 0.5 * rng.standard_normal(N)
    xp = x + proxy_noise * rng.standard_normal(N)
    Xg = np.column_stack([np.ones(N), x])
    Xp = np.column_stack([np.ones(N), xp])
    idx = np.sort(rng.choice(N, size=n, replace=False))
    return Xg[idx], y[idx], Xp[idx], y[idx], Xp, y


def _logistic_problem(seed, n=150, N=1500):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(N)
    p = 1.0 / (1.0 + np.exp(-(0.3 + 1.1 * x)))
    y = (rng.random(N) < p).astype(float)
    yp = y.copy()
    flip = rng.random(N) < 0.1
    yp[flip] = 1.0 - yp[flip]
    Xg = np.column_stack([np.ones(N), x])
    idx = np.sort(rng.choice(N, size=n, replace=False))
    return Xg[idx], y[idx], Xg[idx], yp[idx], Xg, yp


def test_components_with_perfect_proxy_agree():
    Xg, yg, Xp, yp, Xm, ym = _linear_problem(0, proxy_noise=0.0)
    comp = fit_components_arrays(Xg, yg, Xg, yg, Xm, ym, LINEAR)
    assert_allclose(comp.gamma_calib, comp.beta_calib, atol=1e-10)
    assert comp.n == 80 and comp.N == 900
    assert comp.rho == pytest.approx(80 / 900)


def test_component_failure_names_the_fit():
    Xg, yg, Xp, yp, Xm, ym = _linear_problem(1)
    bad_map = np.column_stack([np.ones(Xm.shape[0]), np.ones(Xm.shape[0])])
    with pytest.raises(RankDeficient, match="proxy map fit"):
        fit_components_arrays(Xg, yg, Xp, yp, bad_map, ym, LINEAR)


def _naive_sandwich(Xg, yg, Xp, yp, family, comp):
    # slow double-loop reference, deliberately different code path
    n, p = Xg.shape
    sg = Xg @ comp.beta_calib
    sp = Xp @ comp.gamma_calib
    rg = family.psi_dot(sg) - yg
    rp = family.psi_dot(sp) - yp
    d_beta = np.zeros((p, p))
    d_gamma = np.zeros((p, p))
    c11 = np.zeros((p, p))
    c12 = np.zeros((p, p))
    c22 = np.zeros((p, p))
    for i in range(n):
        d_beta += family.psi_ddot(sg[i]) * np.outer(Xg[i], Xg[i])
        d_gamma += family.psi_ddot(sp[i]) * np.outer(Xp[i], Xp[i])
        c11 += rg[i] ** 2 * np.outer(Xg[i], Xg[i])
        c22 += rp[i] ** 2 * np.outer(Xp[i], Xp[i])
        c12 += rg[i] * rp[i] * np.outer(Xg[i], Xp[i])
    return (d_beta / n, d_gamma / n, c11 / n, c12 / n, c22 / n)


@pytest.mark.parametrize("family,maker", [(LINEAR, _linear_problem),
                                          (LOGISTIC, _logistic_problem)])
def test_sandwich_matches_double_loop(family, maker):
    Xg, yg, Xp, yp, Xm, ym = maker(7)
    comp = fit_components_arrays(Xg, yg, Xp, yp, Xm, ym, family)
    S = sandwich_matrices_arrays(Xg, yg, Xp, yp, family, comp)
    d_beta, d_gamma, c11, c12, c22 = _naive_sandwich(Xg, yg, Xp, yp, family, comp)
    assert_allclose(S.d_beta, d_beta, atol=1e-12)
    assert_allclose(S.d_gamma, d_gamma, atol=1e-12)
    assert_allclose(S.c11, c11, atol=1e-12)
    assert_allclose(S.c12, c12, atol=1e-12)
    assert_allclose(S.c22, c22, atol=1e-12)


def test_optimal_omega_is_identity_for_perfect_proxy():
    Xg, yg, _, _, Xm, ym = _linear_problem(3, proxy_noise=0.0)
    comp = fit_components_arrays(Xg, yg, Xg, yg, Xm, ym, LINEAR)
    S = sandwich_matrices_arrays(Xg, yg, Xg, yg, LINEAR, comp)
    tuning = optimal_omega(S)
    assert tuning.mode == "optimal"
    assert_allclose(tuning.omega, np.eye(2), atol=1e-8)


def test_resolve_omega_falls_back_to_identity():
    eye = np.eye(2)
    S = SandwichMatrices(d_beta=eye, d_gamma=eye, c11=eye,
                         c12=eye, c22=np.zeros((2, 2)))
    tuning = resolve_omega(S, "optimal", 2)
    assert tuning.mode == "identity"
    assert_allclose(tuning.omega, eye)


def test_resolve_omega_zero_mode():
    S = SandwichMatrices(*(np.eye(2),) * 5)
    assert resolve_omega(S, "zero", 2).mode == "zero"
    with pytest.raises(ValueError):
        resolve_omega(S, "clever", 2)


def test_resolve_omega_user_matrix():
    S = SandwichMatrices(*(np.eye(2),) * 5)
    om = np.array([[0.5, 0.0], [0.0, 0.25]])
    tuning = resolve_omega(S, om, 2)
    assert tuning.mode == "user"
    assert_allclose(tuning.omega, om)


def test_ppi_point_with_identity_omega():
    comp = PpiComponents(
        beta_calib=np.array([1.0, 2.0]),
        gamma_calib=np.array([0.8, 2.5]),
        gamma_map=np.array([0.9, 2.2]),
        n=10, N=100,
    )
    point = ppi_point(comp, TuningMatrix(np.eye(2), "identity"))
    assert_allclose(point, [1.0 + 0.1, 2.0 - 0.3], atol=1e-15)
    # zero omega ignores the proxies entirely
    assert_allclose(ppi_point(comp, TuningMatrix(np.zeros((2, 2)), "zero")),
                    comp.beta_calib)


def test_components_validation():
    with pytest.raises(DimensionMismatch):
        PpiComponents(beta_calib=np.zeros(2), gamma_calib=np.zeros(2),
                      gamma_map=np.zeros(2), n=50, N=10)
    with pytest.raises(DimensionMismatch):
        PpiComponents(beta_calib=np.zeros(2), gamma_calib=np.zeros(3),
                      gamma_map=np.zeros(2), n=5, N=10)


def test_analytic_covariance_reduces_to_classical_when_everything_labeled():
    Xg, yg, Xp, yp, Xm, ym = _linear_problem(5)
    comp = fit_components_arrays(Xg, yg, Xp, yp, Xm, ym, LINEAR)
    S = sandwich_matrices_arrays(Xg, yg, Xp, yp, LINEAR, comp)
    n = Xg.shape[0]
    full = analytic_covariance(S, n, n)  # n == N: correction term drops
    d_inv = np.linalg.inv(S.d_beta)
    assert_allclose(full, d_inv @ S.c11 @ d_inv / n, atol=1e-12)


def test_perfect_proxy_ppi_equals_map_fit():
    Xg, yg, _, _, Xm, ym = _linear_problem(9, proxy_noise=0.0)
    est = ppi_analytic_arrays(Xg, yg, Xg, yg, Xm, ym, LINEAR)
    map_fit = fit_linear(Xm, ym)
    assert_allclose(est.beta_ppi, map_fit.beta, atol=1e-8)


def test_bootstrap_reports_plugin_point():
    args = _linear_problem(11)
    analytic = ppi_analytic_arrays(*args, family=LINEAR)
    boot = ppi_bootstrap_arrays(*args, family=LINEAR,
                                config=BootstrapConfig(b=50, seed=1))
    assert_allclose(boot.beta_ppi, analytic.beta_ppi, atol=1e-14)
    assert boot.method == "percentile_bootstrap"
    assert np.all(boot.intervals[:, 0] <= boot.intervals[:, 1])


def test_bootstrap_deterministic_and_thread_invariant():
    args = _linear_problem(13)
    cfg = BootstrapConfig(b=64, seed=21)
    a = ppi_bootstrap_arrays(*args, family=LINEAR, config=cfg)
    b = ppi_bootstrap_arrays(*args, family=LINEAR, config=cfg)
    c = ppi_bootstrap_arrays(*args, family=LINEAR, config=cfg, workers=5)
    assert np.array_equal(a.intervals, b.intervals)
    assert np.array_equal(a.intervals, c.intervals)
    d = ppi_bootstrap_arrays(*args, family=LINEAR,
                             config=BootstrapConfig(b=64, seed=22))
    assert not np.array_equal(a.intervals, d.intervals)


def test_bootstrap_interval_scale_tracks_analytic():
    args = _linear_problem(17, n=300, N=3000)
    analytic = ppi_analytic_arrays(*args, family=LINEAR)
    boot = ppi_bootstrap_arrays(*args, family=LINEAR,
                                config=BootstrapConfig(b=800, seed=5))
    w_a = analytic.intervals[:, 1] - analytic.intervals[:, 0]
    w_b = boot.intervals[:, 1] - boot.intervals[:, 0]
    assert np.all(np.abs(w_b / w_a - 1.0) < 0.25)


def test_bootstrap_fixed_user_omega():
    args = _linear_problem(19)
    om = np.eye(2)
    est = ppi_bootstrap_arrays(*args, family=LINEAR,
                               config=BootstrapConfig(b=30, seed=2),
                               omega_mode=om)
    assert est.omega.mode == "user"
    assert_allclose(est.omega.omega, om)


def test_degenerate_resamples():
    # n=2 with a one-hot covariate: any duplicated calibration draw is rank
    # deficient; seed 118 makes the first iteration draw duplicates on all
    # ten attempts
    Xg = np.array([[1.0, 0.0], [1.0, 1.0]])
    yg = np.array([0.5, 1.5])
    Xm = np.vstack([Xg] * 10)
    ym = np.tile(yg, 10)
    # the exact-fit fixture also has zero residuals, so the analytic
    # covariance degrades to a warning before the resampling loop gives up
    with pytest.warns(RuntimeWarning, match="covariance unavailable"):
        with pytest.raises(DegenerateResamples):
            ppi_bootstrap_arrays(Xg, yg, Xg, yg, Xm, ym, LINEAR,
                                 BootstrapConfig(b=2, seed=118))


def test_bootstrap_config_validation():
    with pytest.raises(ValueError):
        BootstrapConfig(b=1)
    with pytest.raises(ValueError):
        BootstrapConfig(b=100, alpha=1.5)


def test_classical_linear_matches_textbook_formulas():
    rng = np.random.default_rng(23)
    X = np.column_stack([np.ones(40), rng.standard_normal((40, 2))])
    y = X @ np.array([1.0, -1.0, 0.5]) + rng.standard_normal(40)
    est = classical_estimate(X, y, LINEAR)
    beta = np.linalg.lstsq(X, y, rcond=None)[0]
    resid = y - X @ beta
    sigma2 = resid @ resid / (40 - 3)
    cov = sigma2 * np.linalg.inv(X.T @ X)
    assert_allclose(est.beta, beta, atol=1e-12)
    assert_allclose(est.covariance, cov, atol=1e-12)
    z = 1.959963984540054
    half = est.intervals[:, 1] - est.beta
    assert_allclose(half, z * np.sqrt(np.diag(cov)), atol=1e-10)


def test_classical_linear_needs_degrees_of_freedom():
    X = np.column_stack([np.ones(3), np.arange(3.0), np.arange(3.0) ** 2])
    with pytest.raises(TooFewPoints):
        classical_estimate(X, np.zeros(3), LINEAR)


def test_classical_logistic_uses_inverse_information():
    Xg, yg, *_ = _logistic_problem(29)
    est = classical_estimate(Xg, yg, LOGISTIC)
    fit = fit_logistic(Xg, yg)
    _, _, hess = logistic_loss_gradient_hessian(Xg, yg, fit.beta)
    assert_allclose(est.beta, fit.beta, atol=1e-12)
    assert_allclose(est.covariance, np.linalg.inv(hess), atol=1e-10)


def test_effective_sample_size():
    assert effective_sample_size(100, 0.4, 0.4) == pytest.approx(100.0)
    assert effective_sample_size(100, 0.4, 0.2) == pytest.approx(400.0)
    assert effective_sample_size(100, 0.2, 0.4) == pytest.approx(25.0)
    with pytest.raises(NonPositiveWidth):
        effective_sample_size(100, 0.0, 0.4)
    with pytest.raises(NonPositiveWidth):
        effective_sample_size(100, 0.4, -0.1)


def test_logistic_end_to_end_bias_correction():
    # flipped labels bias the naive fit; the corrected point moves back
    Xg, yg, Xp, yp, Xm, ym = _logistic_problem(31, n=400, N=4000)
    naive = fit_logistic(Xm, ym).beta
    est = ppi_analytic_arrays(Xg, yg, Xp, yp, Xm, ym, LOGISTIC)
    truth = np.array([0.3, 1.1])
    assert np.linalg.norm(est.beta_ppi - truth) < np.linalg.norm(naive - truth)
    # interval should cover the slope
    assert est.intervals[1, 0] <= truth[1] <= est.intervals[1, 1]
