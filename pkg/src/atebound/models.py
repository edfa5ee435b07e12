"""Parametric model families: linear-Gaussian, logistic, and partially linear.

Parameters share one layout, ``theta = [intercept, treatment_coef,
covariate_coefs...]``. The partially linear family reads the same layout as
theta_0 = (intercept, covariate block) and theta_1 = treatment scalar.
Weighted log-likelihoods are expectations under candidate row weights, with
analytic theta-gradients used by the solver and checked against finite
differences in the tests.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

FAMILIES = ("linear", "logistic", "plm")

PROB_CLAMP = 1e-9


@dataclass(frozen=True)
class ModelParams:
    """Coefficients for one model family.

    noise_scale is the Gaussian residual scale for linear/plm outcomes; it is
    ignored by the logistic family.
    """

    theta: np.ndarray
    family: str = "linear"
    noise_scale: float = 1.0

    def __post_init__(self) -> None:
        t = np.asarray(self.theta, dtype=float)
        if t.ndim != 1 or t.size < 2:
            raise ValueError(f"theta must be 1-d with length >= 2, got shape {t.shape}")
        if self.family not in FAMILIES:
            raise ValueError(f"family must be one of {FAMILIES}, got {self.family!r}")
        if self.family in ("linear", "plm") and not self.noise_scale > 0:
            raise ValueError(f"noise_scale must be > 0, got {self.noise_scale}")
        object.__setattr__(self, "theta", t)

    @property
    def covariate_dim(self) -> int:
        return self.theta.size - 2

    @property
    def intercept(self) -> float:
        return float(self.theta[0])

    @property
    def treatment_coef(self) -> float:
        return float(self.theta[1])

    @property
    def covariate_coefs(self) -> np.ndarray:
        return self.theta[2:]

    @property
    def theta_0(self) -> np.ndarray:
        """Covariate block (intercept + covariate coefficients) of a plm."""
        return np.concatenate([[self.theta[0]], self.theta[2:]])

    @property
    def theta_1(self) -> float:
        """Treatment scalar of a plm."""
        return float(self.theta[1])

    def replace_theta(self, theta: np.ndarray) -> "ModelParams":
        return ModelParams(theta, self.family, self.noise_scale)


@dataclass(frozen=True)
class WeightedSample:
    """One dataset row together with its current candidate probability mass."""

    covariates: np.ndarray
    outcome: float
    treatment: int
    weight: float

    def __post_init__(self) -> None:
        if self.weight < 0:
            raise ValueError(f"weight must be >= 0, got {self.weight}")
        object.__setattr__(self, "covariates", np.atleast_1d(np.asarray(self.covariates, float)))


def stack_samples(samples: Sequence[WeightedSample]):
    """Column-stack a sample sequence into (X, y, z, w) arrays."""
    if len(samples) == 0:
        raise ValueError("empty sample set")
    X = np.stack([s.covariates for s in samples])
    y = np.array([s.outcome for s in samples], dtype=float)
    z = np.array([s.treatment for s in samples], dtype=np.int64)
    w = np.array([s.weight for s in samples], dtype=float)
    return X, y, z, w


def sigmoid(score: np.ndarray | float) -> np.ndarray | float:
    return 1.0 / (1.0 + np.exp(-np.asarray(score, dtype=float)))


def design_matrix(X: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Rows [1, z_i, x_i...]; z may be a scalar broadcast over rows."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n = X.shape[0]
    zcol = np.broadcast_to(np.asarray(z, dtype=float), (n,))
    return np.column_stack([np.ones(n), zcol, X])


def _check_dim(params: ModelParams, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    single = X.ndim == 1
    X2 = np.atleast_2d(X)
    if X2.shape[1] != params.covariate_dim:
        raise ValueError(
            f"covariate dimension mismatch: x has {X2.shape[1]}, params expect {params.covariate_dim}"
        )
    return X if single else X2


def affine_score(params: ModelParams, X: np.ndarray, z) -> np.ndarray | float:
    """intercept + treatment_coef * z + covariate_coefs . x (vectorized)."""
    X = np.asarray(X, dtype=float)
    single = X.ndim == 1
    _check_dim(params, X)
    F = design_matrix(X, z)
    s = F @ params.theta
    return float(s[0]) if single else s


def linear_predict(params: ModelParams, x: np.ndarray, z) -> np.ndarray | float:
    """Affine conditional-mean prediction g(x, z; theta)."""
    return affine_score(params, x, z)


def covariate_effect(params: ModelParams, x: np.ndarray) -> np.ndarray | float:
    """The covariate-only part f(x; theta_0) = intercept + covariate_coefs . x."""
    return affine_score(params, x, 0)


def logistic_predict(params: ModelParams, x: np.ndarray, z) -> np.ndarray | float:
    """Sigmoid of the affine score, strictly inside (0, 1)."""
    s = affine_score(params, x, z)
    p = np.clip(sigmoid(s), PROB_CLAMP, 1.0 - PROB_CLAMP)
    return float(p) if np.isscalar(s) else p


# ---------------------------------------------------------------------------
# Array cores (used by the estimators and the solver hot path)
# ---------------------------------------------------------------------------

def gaussian_loglik(theta: np.ndarray, sigma: float, F: np.ndarray, y: np.ndarray,
                    w: np.ndarray) -> float:
    r = y - F @ theta
    const = -0.5 * np.log(2.0 * np.pi * sigma**2)
    return float(np.sum(w * (const - r**2 / (2.0 * sigma**2))))


def gaussian_loglik_grad(theta: np.ndarray, sigma: float, F: np.ndarray, y: np.ndarray,
                         w: np.ndarray) -> np.ndarray:
    r = y - F @ theta
    return (w * r / sigma**2) @ F


def bernoulli_loglik(theta: np.ndarray, F: np.ndarray, labels: np.ndarray,
                     w: np.ndarray) -> float:
    p = np.clip(sigmoid(F @ theta), PROB_CLAMP, 1.0 - PROB_CLAMP)
    return float(np.sum(w * (labels * np.log(p) + (1.0 - labels) * np.log1p(-p))))


def bernoulli_loglik_grad(theta: np.ndarray, F: np.ndarray, labels: np.ndarray,
                          w: np.ndarray) -> np.ndarray:
    p = sigmoid(F @ theta)
    return (w * (labels - p)) @ F


def fit_linear_weighted(F: np.ndarray, y: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Weighted least squares; the weighted Gaussian MLE for any sigma."""
    Fw = F * w[:, None]
    H = F.T @ Fw
    b = Fw.T @ y
    try:
        return np.linalg.solve(H, b)
    except np.linalg.LinAlgError:
        return np.linalg.lstsq(H, b, rcond=None)[0]


def fit_logistic_weighted(
    F: np.ndarray,
    labels: np.ndarray,
    w: np.ndarray,
    theta0: np.ndarray | None = None,
    tol: float = 1e-10,
    max_iter: int = 100,
    ridge: float = 1e-10,
) -> np.ndarray:
    """Weighted Bernoulli MLE by damped Newton iterations.

    The tiny ridge keeps the Hessian invertible under separation or
    zero-weight rows; it acts far below the likelihood slack used by the
    estimators.
    """
    theta = np.zeros(F.shape[1]) if theta0 is None else np.asarray(theta0, float).copy()
    nll = -bernoulli_loglik(theta, F, labels, w)
    for _ in range(max_iter):
        p = sigmoid(F @ theta)
        grad = (w * (p - labels)) @ F
        if np.linalg.norm(grad) < tol:
            break
        h = w * p * (1.0 - p)
        H = (F * h[:, None]).T @ F + ridge * np.eye(F.shape[1])
        try:
            step = np.linalg.solve(H, grad)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(H, grad, rcond=None)[0]
        scale = 1.0
        for _ in range(40):
            cand = theta - scale * step
            cand_nll = -bernoulli_loglik(cand, F, labels, w)
            if cand_nll <= nll + 1e-15:
                break
            scale *= 0.5
        theta = theta - scale * step
        nll = cand_nll
    return theta


# ---------------------------------------------------------------------------
# Spec surface over WeightedSample sequences
# ---------------------------------------------------------------------------

def _prepare(params: ModelParams, samples: Sequence[WeightedSample], target: str):
    X, y, z, w = stack_samples(samples)
    _check_dim(params, X)
    if target == "outcome":
        F = design_matrix(X, z)
        labels = y
    elif target == "propensity":
        if params.family != "logistic":
            raise ValueError("propensity models must use the logistic family")
        F = design_matrix(X, np.zeros_like(z))
        labels = z.astype(float)
    else:
        raise ValueError(f"target must be 'outcome' or 'propensity', got {target!r}")
    return F, labels, w


def weighted_loglik(params: ModelParams, samples: Sequence[WeightedSample],
                    target: str = "outcome") -> float:
    """Weight-averaged log-likelihood sum_i w_i * log density_i.

    Gaussian density at the affine prediction for linear/plm outcomes;
    Bernoulli mass (with clamped probabilities) for logistic outcomes and
    propensity targets.
    """
    F, labels, w = _prepare(params, samples, target)
    if target == "outcome" and params.family in ("linear", "plm"):
        return gaussian_loglik(params.theta, params.noise_scale, F, labels, w)
    return bernoulli_loglik(params.theta, F, labels, w)


def loglik_grad_theta(params: ModelParams, samples: Sequence[WeightedSample],
                      target: str = "outcome") -> np.ndarray:
    """Analytic gradient of weighted_loglik in theta."""
    F, labels, w = _prepare(params, samples, target)
    if target == "outcome" and params.family in ("linear", "plm"):
        return gaussian_loglik_grad(params.theta, params.noise_scale, F, labels, w)
    return bernoulli_loglik_grad(params.theta, F, labels, w)


def mse_residual(params: ModelParams, samples: Sequence[WeightedSample]) -> float:
    """Weighted mean squared residual sum_i w_i (y_i - prediction_i)^2."""
    if params.family == "logistic":
        raise ValueError(
            "mse_residual applies to linear/plm families; use the negative "
            "weighted_loglik for logistic outcomes"
        )
    X, y, z, w = stack_samples(samples)
    _check_dim(params, X)
    r = y - design_matrix(X, z) @ params.theta
    return float(np.sum(w * r**2))
