"""Design-matrix checks and GLM fitting (linear and logistic).

Everything downstream (PPI regression, mean estimators, simulation) fits
models through the two entry points here. Fits are plain functions of
ndarrays; results are small immutable containers.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import expit

from .errors import (
    DimensionMismatch,
    NoConvergence,
    NotBinary,
    RankDeficient,
    Separation,
)

# rank rule: reject when smallest singular value < RANK_RTOL * largest
RANK_RTOL = 1e-10
GRAD_TOL = 1e-8
MAX_ITER = 100
SEPARATION_BOUND = 1e4
SEPARATION_LOSS_EPS = 1e-6  # safely below log(2), the overlap minimum  # ||beta|| beyond this means quasi-separation
MAX_HALVINGS = 40


@dataclass(frozen=True)
class ModelFamily:
    """A GLM family via its cumulant function psi and derivatives.

    psi_dot is the inverse link (mean function), psi_ddot the variance
    weight; psi_ddot >= 0 everywhere (convex loss).
    """

    kind: str  # "linear" | "logistic"
    psi: Callable[[np.ndarray], np.ndarray]
    psi_dot: Callable[[np.ndarray], np.ndarray]
    psi_ddot: Callable[[np.ndarray], np.ndarray]

    def __repr__(self) -> str:
        return f"ModelFamily({self.kind})"


LINEAR = ModelFamily(
    kind="linear",
    psi=lambda s: 0.5 * s * s,
    psi_dot=lambda s: np.asarray(s, dtype=float),
    psi_ddot=lambda s: np.ones_like(np.asarray(s, dtype=float)),
)

LOGISTIC = ModelFamily(
    kind="logistic",
    psi=lambda s: np.logaddexp(0.0, s),
    psi_dot=expit,
    # expit(s)*expit(-s) stays finite for large |s|
    psi_ddot=lambda s: expit(s) * expit(-s),
)

_FAMILIES = {"linear": LINEAR, "logistic": LOGISTIC}


def get_family(name) -> ModelFamily:
    """Look up a ModelFamily by name; passes ModelFamily instances through."""
    if isinstance(name, ModelFamily):
        return name
    try:
        return _FAMILIES[name]
    except KeyError:
        raise ValueError(
            f"unknown model family {name!r}; expected one of {sorted(_FAMILIES)}")


@dataclass(frozen=True)
class GlmFit:
    """Fitted coefficients plus convergence metadata.

    Linear fits always report converged=True, iterations=1. A returned
    logistic fit always satisfies final_gradient_norm <= tol (failures
    raise instead of returning).
    """

    beta: np.ndarray
    converged: bool
    iterations: int
    final_gradient_norm: float


def _check_design(X: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2:
        raise DimensionMismatch(f"design matrix must be 2-D, got shape {X.shape}")
    if y.ndim != 1:
        raise DimensionMismatch(f"response must be 1-D, got shape {y.shape}")
    if X.shape[0] != y.shape[0]:
        raise DimensionMismatch(f"{X.shape[0]} design rows vs {y.shape[0]} responses")
    if X.shape[0] < X.shape[1]:
        raise RankDeficient(f"fewer rows ({X.shape[0]}) than columns ({X.shape[1]})")
    return X, y


def _check_rank(X: np.ndarray) -> None:
    sv = np.linalg.svd(X, compute_uv=False)
    if sv[0] == 0.0 or sv[-1] < RANK_RTOL * sv[0]:
        raise RankDeficient(
            f"design matrix is rank deficient (singular value ratio "
            f"{0.0 if sv[0] == 0.0 else sv[-1] / sv[0]:.2e} < {RANK_RTOL:.0e})"
        )


def fit_linear(X: np.ndarray, y: np.ndarray) -> GlmFit:
    """Least-squares fit via an orthogonal decomposition (SVD lstsq).

    Parameters
    ----------
    X : (n, p) design matrix, first column the intercept.
    y : (n,) response.

    Returns
    -------
    GlmFit with beta = argmin ||y - X b||^2.

    Raises
    ------
    RankDeficient
        If the smallest singular value of X is below 1e-10 times the
        largest (explicit normal-equations inversion is never formed).
    DimensionMismatch
    """
    X, y = _check_design(X, y)
    beta, _, rank, _ = np.linalg.lstsq(X, y, rcond=RANK_RTOL)
    if rank < X.shape[1]:
        raise RankDeficient(
            f"design matrix is rank deficient (rank {rank} < {X.shape[1]} columns)"
        )
    grad = X.T @ (y - X @ beta)  # normal-equations residual, ~0 at the optimum
    return GlmFit(beta=beta, converged=True, iterations=1,
                  final_gradient_norm=float(np.linalg.norm(grad)))


def logistic_loss_gradient_hessian(
    X: np.ndarray, y: np.ndarray, beta: np.ndarray
) -> tuple[float, np.ndarray, np.ndarray]:
    """Loss, gradient and Hessian of the logistic objective at beta.

    The objective is sum_i log(1 + exp(b'x_i)) - y_i * b'x_i. The Hessian
    sum_i psi_ddot(b'x_i) x_i x_i' is positive semidefinite.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    beta = np.asarray(beta, dtype=float)
    if X.ndim != 2 or y.ndim != 1 or beta.ndim != 1:
        raise DimensionMismatch("expected 2-D X, 1-D y, 1-D beta")
    if X.shape[0] != y.shape[0] or X.shape[1] != beta.shape[0]:
        raise DimensionMismatch(
            f"shapes X{X.shape}, y{y.shape}, beta{beta.shape} are inconsistent"
        )
    s = X @ beta
    loss = float(np.logaddexp(0.0, s).sum() - y @ s)
    grad = X.T @ (expit(s) - y)
    w = expit(s) * expit(-s)
    hess = (X * w[:, None]).T @ X
    return loss, grad, hess


def fit_logistic(
    X: np.ndarray,
    y: np.ndarray,
    tol: float = GRAD_TOL,
    max_iter: int = MAX_ITER,
    beta0: np.ndarray | None = None,
) -> GlmFit:
    """Damped Newton fit of the logistic model.

    Parameters
    ----------
    X : (n, p) design matrix.
    y : (n,) response in {0, 1}.
    tol : gradient-norm stopping tolerance.
    max_iter : Newton iteration cap.
    beta0 : optional warm start (used heavily by the bootstrap).

    Raises
    ------
    Separation
        ||beta|| exceeded the divergence bound: the sample is
        (quasi-)separable and the MLE does not exist.
    NoConvergence
        Iteration cap reached, or the line search stalled, before the
        gradient tolerance was met.
    RankDeficient, DimensionMismatch, NotBinary
    """
    X, y = _check_design(X, y)
    if not np.all((y == 0.0) | (y == 1.0)):
        raise NotBinary("logistic response must be coded 0/1")
    _check_rank(X)

    beta = np.zeros(X.shape[1]) if beta0 is None else np.array(beta0, dtype=float)
    if beta.shape != (X.shape[1],):
        raise DimensionMismatch(f"beta0 shape {beta.shape} vs {X.shape[1]} columns")

    s = X @ beta
    loss = float(np.logaddexp(0.0, s).sum() - y @ s)
    for iteration in range(max_iter):
        mu = expit(s)
        grad = X.T @ (mu - y)
        gnorm = float(np.linalg.norm(grad))
        if gnorm <= tol:
            _check_separated_loss(loss)
            return GlmFit(beta=beta, converged=True, iterations=iteration,
                          final_gradient_norm=gnorm)
        w = mu * expit(-s)
        hess = (X * w[:, None]).T @ X
        try:
            direction = np.linalg.solve(hess, -grad)
        except np.linalg.LinAlgError:
            direction = np.linalg.lstsq(hess, -grad, rcond=None)[0]

        # near the optimum the true decrease sits below float rounding of the
        # loss, so accept any step inside the rounding slack and let the
        # Newton contraction finish the convergence
        slack = 1e-12 * (1.0 + abs(loss))
        step = 1.0
        for _ in range(MAX_HALVINGS):
            candidate = beta + step * direction
            s_new = X @ candidate
            loss_new = float(np.logaddexp(0.0, s_new).sum() - y @ s_new)
            if loss_new <= loss + slack:
                beta, s, loss = candidate, s_new, loss_new
                break
            step *= 0.5
        else:
            raise NoConvergence(
                f"line search stalled at gradient norm {gnorm:.3e} (tol {tol:.0e})"
            )
        if np.linalg.norm(beta) > SEPARATION_BOUND:
            raise Separation(
                f"coefficient norm exceeded {SEPARATION_BOUND:.0e}; "
                "calibration sample looks separable"
            )

    grad = X.T @ (expit(s) - y)
    gnorm = float(np.linalg.norm(grad))
    if gnorm <= tol:
        _check_separated_loss(loss)
        return GlmFit(beta=beta, converged=True, iterations=max_iter,
                      final_gradient_norm=gnorm)
    raise NoConvergence(f"no convergence in {max_iter} iterations "
                        f"(gradient norm {gnorm:.3e})")


def _check_separated_loss(loss: float) -> None:
    # any non-separated sample has a point on the wrong side of (or on) the
    # boundary contributing >= log 2 to the loss, so a vanishing loss is a
    # certificate of perfect separation
    if loss < SEPARATION_LOSS_EPS:
        raise Separation(
            "logistic loss is numerically zero: the sample is perfectly "
            "separated and the MLE does not exist"
        )


def fit_glm(
    X: np.ndarray,
    y: np.ndarray,
    family,
    tol: float = GRAD_TOL,
    max_iter: int = MAX_ITER,
    beta0: np.ndarray | None = None,
) -> GlmFit:
    """Dispatch to the family's fitter.

    family may be a ModelFamily or its name. The solver knobs (tol,
    max_iter, beta0) apply to logistic fits; linear fits are closed form.
    """
    family = get_family(family)
    if family.kind == "linear":
        return fit_linear(X, y)
    return fit_logistic(X, y, tol=tol, max_iter=max_iter, beta0=beta0)
