import numpy as np
import pytest
from numpy.testing import assert_allclose

from mapcalib.errors import DimensionMismatch, NoConvergence, RankDeficient, Separation
from mapcalib.glm import (
    LINEAR,
    LOGISTIC,
    fit_glm,
    fit_linear,
    fit_logistic,
    get_family,
    logistic_loss_gradient_hessian,
)


def test_linear_known_solution():
    # normal equations solved by hand: X'X=[[4,6],[6,14]], X'y=[6,12]
    X = np.array([[1.0, 0.0], [1.0, 1.0], [1.0, 2.0], [1.0, 3.0]])
    y = np.array([1.0, 0.0, 3.0, 2.0])
    fit = fit_linear(X, y)
    assert_allclose(fit.beta, [0.6, 0.6], atol=1e-14)
    assert fit.converged


def test_linear_exact_interpolation():
    rng = np.random.default_rng(0)
    X = np.column_stack([np.ones(5), rng.standard_normal(5)])
    beta = np.array([2.0, -3.0])
    fit = fit_linear(X, X @ beta)
    assert_allclose(fit.beta, beta, atol=1e-12)
    assert fit.final_gradient_norm < 1e-8


def test_linear_residual_orthogonal_to_design():
    rng = np.random.default_rng(3)
    for _ in range(20):
        X = np.column_stack([np.ones(30), rng.standard_normal((30, 3))])
        y = rng.standard_normal(30)
        fit = fit_linear(X, y)
        assert np.linalg.norm(X.T @ (y - X @ fit.beta)) < 1e-10


def test_linear_rank_deficient_duplicate_column():
    x = np.arange(6.0)
    X = np.column_stack([np.ones(6), x, x])
    with pytest.raises(RankDeficient):
        fit_linear(X, np.ones(6))


def test_linear_rank_deficient_near_zero_column():
    X = np.column_stack([np.ones(6), np.full(6, 1e-14)])
    with pytest.raises(RankDeficient):
        fit_linear(X, np.ones(6))


def test_linear_wide_design_rejected():
    X = np.ones((2, 4))
    with pytest.raises(RankDeficient):
        fit_linear(X, np.zeros(2))


def test_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        fit_linear(np.ones((4, 2)), np.ones(3))


def test_family_lookup():
    assert get_family("linear") is LINEAR
    assert get_family("logistic") is LOGISTIC
    assert get_family(LINEAR) is LINEAR
    with pytest.raises(ValueError):
        get_family("poisson")


def test_psi_derivatives_match_finite_differences():
    s = np.linspace(-4.0, 4.0, 41)
    h = 1e-6
    for fam in (LINEAR, LOGISTIC):
        fd = (fam.psi(s + h) - fam.psi(s - h)) / (2 * h)
        assert_allclose(fam.psi_dot(s), fd, atol=1e-8)
        fd2 = (fam.psi_dot(s + h) - fam.psi_dot(s - h)) / (2 * h)
        assert_allclose(fam.psi_ddot(s), fd2, atol=1e-6)


def _logistic_loss(X, y, beta):
    s = X @ beta
    return float(np.sum(np.logaddexp(0.0, s)) - y @ s)


def test_logistic_one_parameter_matches_grid_search():
    # independent oracle: brute-force scan of the 1-d objective
    rng = np.random.default_rng(5)
    x = rng.standard_normal(80)
    y = (rng.random(80) < 1.0 / (1.0 + np.exp(-1.2 * x))).astype(float)
    X = x[:, None]
    fit = fit_logistic(X, y)
    grid = np.linspace(-4.0, 4.0, 20001)
    losses = [_logistic_loss(X, y, np.array([b])) for b in grid]
    best = grid[int(np.argmin(losses))]
    assert abs(fit.beta[0] - best) < 1e-3  # grid spacing 4e-4
    assert _logistic_loss(X, y, fit.beta) <= min(losses) + 1e-10


def test_logistic_gradient_vanishes_at_solution():
    rng = np.random.default_rng(8)
    X = np.column_stack([np.ones(120), rng.standard_normal((120, 2))])
    y = (rng.random(120) < 0.5).astype(float)
    fit = fit_logistic(X, y)
    assert fit.converged
    assert fit.final_gradient_norm <= 1e-8
    _, grad, _ = logistic_loss_gradient_hessian(X, y, fit.beta)
    assert np.linalg.norm(grad) <= 1e-8


def test_logistic_loss_gradient_matches_finite_differences():
    rng = np.random.default_rng(11)
    X = np.column_stack([np.ones(40), rng.standard_normal((40, 2))])
    y = (rng.random(40) < 0.4).astype(float)
    beta = rng.standard_normal(3) * 0.5
    _, grad, hess = logistic_loss_gradient_hessian(X, y, beta)
    h = 1e-6
    for j in range(3):
        e = np.zeros(3)
        e[j] = h
        fd = (_logistic_loss(X, y, beta + e) - _logistic_loss(X, y, beta - e)) / (2 * h)
        assert abs(grad[j] - fd) < 1e-5
        _, gp, _ = logistic_loss_gradient_hessian(X, y, beta + e)
        _, gm, _ = logistic_loss_gradient_hessian(X, y, beta - e)
        assert_allclose(hess[:, j], (gp - gm) / (2 * h), atol=1e-5)


def test_logistic_warm_start_at_optimum_takes_no_steps():
    rng = np.random.default_rng(13)
    X = np.column_stack([np.ones(100), rng.standard_normal(100)])
    y = (rng.random(100) < 0.5).astype(float)
    fit = fit_logistic(X, y)
    refit = fit_logistic(X, y, beta0=fit.beta)
    assert refit.iterations == 0
    assert_allclose(refit.beta, fit.beta)


def test_logistic_separation_detected():
    x = np.array([-3.0, -2.0, -1.0, 1.0, 2.0, 3.0])
    y = (x > 0).astype(float)  # perfectly separated
    with pytest.raises(Separation):
        fit_logistic(np.column_stack([np.ones(6), x]), y)


def test_logistic_max_iter_exhaustion():
    rng = np.random.default_rng(17)
    X = np.column_stack([np.ones(200), rng.standard_normal((200, 3))])
    y = (rng.random(200) < 0.3).astype(float)
    with pytest.raises(NoConvergence):
        fit_logistic(X, y, tol=1e-14, max_iter=1)


def test_fit_glm_dispatch():
    X = np.array([[1.0, 0.0], [1.0, 1.0], [1.0, 2.0], [1.0, 3.0]])
    y = np.array([1.0, 0.0, 3.0, 2.0])
    assert_allclose(fit_glm(X, y, "linear").beta, fit_linear(X, y).beta)
    yb = np.array([0.0, 1.0, 0.0, 1.0])
    assert_allclose(fit_glm(X, yb, LOGISTIC, tol=1e-8).beta,
                    fit_logistic(X, yb).beta)
