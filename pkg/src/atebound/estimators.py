"""Causal adjustment estimators as robust-reweighting plug-ins.

Each estimator exposes the identification objective Q(theta, weights) and a
likelihood constraint v(theta, weights) = f1 - epsilon over a dataset, where
f1 is the weighted mean squared error for Gaussian outcome models and the
weighted negative log-likelihood shortfall (relative to the preliminary fit)
for Bernoulli models. Evaluations are written in terms of the joint row
masses m_i = P(Z=z_i) * w_{z_i, i}; per-arm weight gradients are the mass
gradients scaled by the empirical arm frequencies.

The constraint threshold is anchored at construction: epsilon sits `slack`
above the value attained by the unweighted maximum-likelihood fit, so the
warm start is always feasible.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .dataset import ObservedDataset
from .empirical import WeightTable
from .models import (
    ModelParams,
    design_matrix,
    fit_linear_weighted,
    fit_logistic_weighted,
    sigmoid,
    PROB_CLAMP,
)

KINDS = ("backdoor", "ipw", "frontdoor", "double_ml")

DEFAULT_FAMILY = {
    "backdoor": "linear",
    "ipw": "logistic",
    "frontdoor": "linear",
    "double_ml": "plm",
}


class PositivityError(ValueError):
    """A treatment arm required by the estimator has no samples."""


class DegenerateDataError(ValueError):
    """The data cannot support the estimator (e.g. no treated rows in the
    evaluation half of a double-ML split)."""


@dataclass(frozen=True)
class AteEstimate:
    """A point estimate of the average treatment effect."""

    value: float
    kind: str
    params: ModelParams

    def __post_init__(self) -> None:
        if not np.isfinite(self.value):
            raise ValueError(f"estimate must be finite, got {self.value}")


@dataclass(frozen=True)
class EstimatorSpec:
    """One causal adjustment method bound to a dataset's anchors.

    Built by :func:`build_estimator`; epsilon and the preliminary fit are
    data-derived, so a spec instance is tied to the dataset it was built for.
    """

    kind: str
    family: str
    sigma: float
    slack: float
    epsilon: float
    theta_init: ModelParams
    propensity_clip: tuple[float, float] = (0.01, 0.99)
    split_first: Optional[np.ndarray] = None
    split_second: Optional[np.ndarray] = None
    split_seed: int = 0

    # ----- weight plumbing -------------------------------------------------

    def masses(self, weights: WeightTable, data: ObservedDataset) -> np.ndarray:
        """Joint row masses m_i = (n_z / n) * w_{z_i, i}; they sum to 1."""
        n = data.n
        m = np.empty(n)
        for z in (0, 1):
            rows = data.arm_rows(z)
            m[rows] = (rows.size / n) * weights.arm(z).weights
        return m

    def split_masses(self, grad_m: np.ndarray, data: ObservedDataset):
        """Map a mass gradient to per-arm weight gradients (chain rule)."""
        n = data.n
        out = []
        for z in (0, 1):
            rows = data.arm_rows(z)
            out.append((rows.size / n) * grad_m[rows])
        return tuple(out)

    # ----- public spec surface --------------------------------------------

    def objective(self, theta: ModelParams, weights: WeightTable,
                  data: ObservedDataset) -> float:
        return self._q_value(theta, data, self.masses(weights, data))

    def objective_grad_theta(self, theta: ModelParams, weights: WeightTable,
                             data: ObservedDataset) -> np.ndarray:
        return self._q_grad_theta(theta, data, self.masses(weights, data))

    def objective_grad_weights(self, theta: ModelParams, weights: WeightTable,
                               data: ObservedDataset):
        gm = self._q_grad_m(theta, data, self.masses(weights, data))
        return self.split_masses(gm, data)

    def constraint(self, theta: ModelParams, weights: WeightTable,
                   data: ObservedDataset) -> float:
        """v = f1 - epsilon; v <= 0 means theta fits the reweighted data."""
        return self._f1(theta, data, self.masses(weights, data)) - self.epsilon

    def constraint_grad_theta(self, theta: ModelParams, weights: WeightTable,
                              data: ObservedDataset) -> np.ndarray:
        return self._f1_grad_theta(theta, data, self.masses(weights, data))

    def constraint_grad_weights(self, theta: ModelParams, weights: WeightTable,
                                data: ObservedDataset):
        gm = self._f1_grad_m(theta, data, self.masses(weights, data))
        return self.split_masses(gm, data)

    def refit(self, theta: ModelParams, weights: WeightTable,
              data: ObservedDataset) -> ModelParams:
        """Weighted maximum-likelihood parameters under the given weights."""
        return self.refit_masses(theta, data, self.masses(weights, data))

    # ----- mass-space cores -------------------------------------------------

    def _design(self, data: ObservedDataset) -> np.ndarray:
        if self.kind == "ipw":
            return design_matrix(data.covariates, np.zeros(data.n))
        return design_matrix(data.covariates, data.treatment)

    def _outcome_curves(self, theta: ModelParams, data: ObservedDataset):
        """Predictions g(x_i, z') for z' in {0, 1} plus their theta-Jacobians."""
        preds, jacs = [], []
        for zp in (0, 1):
            F = design_matrix(data.covariates, float(zp))
            s = F @ theta.theta
            if self.family == "logistic":
                p = sigmoid(s)
                preds.append(p)
                jacs.append(p * (1.0 - p))
            else:
                preds.append(s)
                jacs.append(np.ones(data.n))
        return preds, jacs

    def _q_value(self, theta, data, m) -> float:
        v, _, _ = self._q_bundle(theta, data, m, want=("value",))
        return v

    def _q_grad_theta(self, theta, data, m) -> np.ndarray:
        _, g, _ = self._q_bundle(theta, data, m, want=("theta",))
        return g

    def _q_grad_m(self, theta, data, m) -> np.ndarray:
        _, _, g = self._q_bundle(theta, data, m, want=("m",))
        return g

    def _q_bundle(self, theta: ModelParams, data: ObservedDataset, m: np.ndarray,
                  want=("value", "theta", "m")):
        """Objective value and requested gradients in one pass."""
        i0, i1 = data.arm_rows(0), data.arm_rows(1)
        value = grad_theta = grad_m = None
        if self.kind in ("backdoor", "frontdoor"):
            preds, jacs = self._outcome_curves(theta, data)
            M0, M1 = m[i0].sum(), m[i1].sum()
            if M0 <= 0 or M1 <= 0:
                raise PositivityError("an arm carries zero probability mass")
            w0, w1 = m[i0] / M0, m[i1] / M1
            if self.kind == "backdoor":
                g1, g0 = preds[1][i1], preds[0][i0]
                mean1, mean0 = w1 @ g1, w0 @ g0
                value = float(mean1 - mean0)
                if "theta" in want:
                    F1 = design_matrix(data.covariates[i1], 1.0)
                    F0 = design_matrix(data.covariates[i0], 0.0)
                    grad_theta = (w1 * jacs[1][i1]) @ F1 - (w0 * jacs[0][i0]) @ F0
                if "m" in want:
                    grad_m = np.empty(data.n)
                    grad_m[i1] = (g1 - mean1) / M1
                    grad_m[i0] = -(g0 - mean0) / M0
            else:
                d_terms, means1, means0 = [], [], []
                for zp in (0, 1):
                    mean1 = w1 @ preds[zp][i1]
                    mean0 = w0 @ preds[zp][i0]
                    means1.append(mean1)
                    means0.append(mean0)
                    d_terms.append(mean1 - mean0)
                value = float(M0 * d_terms[0] + M1 * d_terms[1])
                Mzp = (M0, M1)
                if "theta" in want:
                    grad_theta = np.zeros(theta.theta.size)
                    for zp in (0, 1):
                        Fz = design_matrix(data.covariates, float(zp))
                        grad_theta += Mzp[zp] * (
                            (w1 * jacs[zp][i1]) @ Fz[i1] - (w0 * jacs[zp][i0]) @ Fz[i0]
                        )
                if "m" in want:
                    grad_m = np.empty(data.n)
                    # D(z') at the row's own arm plus the within-arm mean shifts
                    grad_m[i1] = d_terms[1] + sum(
                        Mzp[zp] * (preds[zp][i1] - means1[zp]) / M1 for zp in (0, 1)
                    )
                    grad_m[i0] = d_terms[0] - sum(
                        Mzp[zp] * (preds[zp][i0] - means0[zp]) / M0 for zp in (0, 1)
                    )
        elif self.kind == "ipw":
            lo, hi = self.propensity_clip
            F = self._design(data)
            p_raw = sigmoid(F @ theta.theta)
            p = np.clip(p_raw, lo, hi)
            y = data.outcome
            score = np.empty(data.n)
            score[i1] = y[i1] / p[i1]
            score[i0] = -y[i0] / (1.0 - p[i0])
            value = float(m @ score)
            if "theta" in want:
                active = (p_raw > lo) & (p_raw < hi)
                dp = np.where(active, p_raw * (1.0 - p_raw), 0.0)
                coef = np.empty(data.n)
                coef[i1] = -m[i1] * y[i1] / p[i1] ** 2
                coef[i0] = -m[i0] * y[i0] / (1.0 - p[i0]) ** 2
                grad_theta = (coef * dp) @ F
            if "m" in want:
                grad_m = score.copy()
        elif self.kind == "double_ml":
            sec = self.split_second
            z = data.treatment[sec].astype(float)
            s_const = float(np.mean(z**2))
            if s_const <= 0:
                raise DegenerateDataError(
                    "double_ml: no treated rows in the evaluation half (E[Z^2] = 0)"
                )
            F0 = design_matrix(data.covariates[sec], 0.0)
            f0 = F0 @ theta.theta
            u = (data.outcome[sec] - f0) * z
            msec = m[sec]
            Ms = msec.sum()
            if Ms <= 0:
                raise DegenerateDataError("double_ml: evaluation half carries zero mass")
            N = float(msec @ u)
            value = N / (Ms * s_const)
            if "theta" in want:
                grad_theta = -((msec * z) @ F0) / (Ms * s_const)
            if "m" in want:
                grad_m = np.zeros(data.n)
                grad_m[sec] = (u - N / Ms) / (Ms * s_const)
        else:
            raise ValueError(f"unknown estimator kind {self.kind!r}")
        return value, grad_theta, grad_m

    # ----- likelihood constraint cores --------------------------------------

    def _row_losses(self, theta: ModelParams, data: ObservedDataset):
        """Per-row loss, its theta-Jacobian factor, and the joint design."""
        F = self._design(data)
        if self.kind == "ipw":
            labels = data.treatment.astype(float)
        else:
            labels = data.outcome
        s = F @ theta.theta
        if self.family == "logistic" or self.kind == "ipw":
            p = np.clip(sigmoid(s), PROB_CLAMP, 1.0 - PROB_CLAMP)
            loss = -(labels * np.log(p) + (1.0 - labels) * np.log1p(-p))
            dloss = sigmoid(s) - labels
        else:
            r = labels - s
            loss = r**2
            dloss = -2.0 * r
        return loss, dloss, F

    def _f1(self, theta, data, m) -> float:
        loss, _, _ = self._row_losses(theta, data)
        if self.kind == "double_ml":
            first = self.split_first
            mf = m[first]
            raw = float(mf @ loss[first]) / float(mf.sum())
        else:
            raw = float(m @ loss)
        if self._nll_constraint():
            return raw - self._anchor
        return raw

    def _f1_grad_theta(self, theta, data, m) -> np.ndarray:
        loss, dloss, F = self._row_losses(theta, data)
        if self.kind == "double_ml":
            first = self.split_first
            mf = m[first]
            return ((mf / mf.sum()) * dloss[first]) @ F[first]
        return (m * dloss) @ F

    def _f1_grad_m(self, theta, data, m) -> np.ndarray:
        loss, _, _ = self._row_losses(theta, data)
        if self.kind == "double_ml":
            first = self.split_first
            mf = m[first]
            Mf = float(mf.sum())
            raw = float(mf @ loss[first]) / Mf
            out = np.zeros(data.n)
            out[first] = (loss[first] - raw) / Mf
            return out
        return loss

    def _nll_constraint(self) -> bool:
        return self.kind == "ipw" or self.family == "logistic"

    # ----- refit ------------------------------------------------------------

    def refit_masses(self, theta: ModelParams, data: ObservedDataset,
                     m: np.ndarray) -> ModelParams:
        F = self._design(data)
        if self.kind == "double_ml":
            first = self.split_first
            new = fit_linear_weighted(F[first], data.outcome[first], m[first])
        elif self.family == "logistic" or self.kind == "ipw":
            labels = data.treatment.astype(float) if self.kind == "ipw" else data.outcome
            new = fit_logistic_weighted(F, labels, m, theta0=theta.theta)
        else:
            new = fit_linear_weighted(F, data.outcome, m)
        return theta.replace_theta(new)

    def refit_pullback(self, theta: ModelParams, data: ObservedDataset,
                       m: np.ndarray, grad_theta: np.ndarray) -> np.ndarray:
        """Per-row envelope term (d theta_hat / d m_i)^T grad_theta.

        Implicit differentiation of the weighted-MLE stationarity condition;
        theta must already be the refit for m.
        """
        F = self._design(data)
        rows = self.split_first if self.kind == "double_ml" else np.arange(data.n)
        Fr = F[rows]
        mr = m[rows]
        if self.family == "logistic" or self.kind == "ipw":
            labels = data.treatment.astype(float) if self.kind == "ipw" else data.outcome
            p = sigmoid(Fr @ theta.theta)
            resid = labels[rows] - p
            h = mr * p * (1.0 - p)
        else:
            resid = data.outcome[rows] - Fr @ theta.theta
            h = mr
        H = (Fr * h[:, None]).T @ Fr
        try:
            u = np.linalg.solve(H, grad_theta)
        except np.linalg.LinAlgError:
            u = np.linalg.lstsq(H, grad_theta, rcond=None)[0]
        out = np.zeros(data.n)
        out[rows] = resid * (Fr @ u)
        return out

    # internal anchor for NLL-shortfall constraints (set by build_estimator)
    _anchor: float = field(default=0.0, repr=False)


def _preliminary_fit(kind: str, family: str, sigma: float, data: ObservedDataset,
                     split_first: Optional[np.ndarray]) -> ModelParams:
    if kind == "ipw":
        F = design_matrix(data.covariates, np.zeros(data.n))
        theta = fit_logistic_weighted(F, data.treatment.astype(float),
                                      np.full(data.n, 1.0 / data.n))
        return ModelParams(theta, "logistic", sigma)
    if kind == "double_ml":
        F = design_matrix(data.covariates[split_first], data.treatment[split_first])
        theta = fit_linear_weighted(F, data.outcome[split_first],
                                    np.full(split_first.size, 1.0 / split_first.size))
        return ModelParams(theta, "plm", sigma)
    F = design_matrix(data.covariates, data.treatment)
    if family == "logistic":
        theta = fit_logistic_weighted(F, data.outcome, np.full(data.n, 1.0 / data.n))
    else:
        theta = fit_linear_weighted(F, data.outcome, np.full(data.n, 1.0 / data.n))
    return ModelParams(theta, family, sigma)


def build_estimator(
    kind: str,
    data: ObservedDataset,
    family: str | None = None,
    slack: float = 1e-3,
    sigma: float = 1.0,
    seed: int = 0,
    propensity_clip: tuple[float, float] = (0.01, 0.99),
    epsilon: float | None = None,
) -> EstimatorSpec:
    """Construct an EstimatorSpec anchored to a dataset.

    Fits the preliminary unweighted model, sets the constraint threshold
    epsilon = attained f1 + slack (so the warm start is feasible), and for
    double_ml draws the seeded half split.
    """
    if kind not in KINDS:
        raise ValueError(f"kind must be one of {KINDS}, got {kind!r}")
    family = family or DEFAULT_FAMILY[kind]
    if kind == "ipw" and family != "logistic":
        raise ValueError("ipw requires the logistic propensity family")
    if kind == "double_ml" and family != "plm":
        raise ValueError("double_ml requires the plm family")
    if kind in ("backdoor", "frontdoor") and family not in ("linear", "logistic"):
        raise ValueError(f"{kind} supports linear or logistic outcome families")
    if data.n_arm(0) == 0 or data.n_arm(1) == 0:
        raise PositivityError("both treatment arms must be non-empty")

    split_first = split_second = None
    if kind == "double_ml":
        perm = np.random.default_rng(seed).permutation(data.n)
        half = data.n // 2
        split_first = np.sort(perm[:half])
        split_second = np.sort(perm[half:])
        if np.sum(data.treatment[split_second]) == 0:
            raise DegenerateDataError(
                "double_ml: no treated rows in the evaluation half (E[Z^2] = 0)"
            )

    theta_init = _preliminary_fit(kind, family, sigma, data, split_first)
    provisional = EstimatorSpec(
        kind=kind,
        family=family,
        sigma=sigma,
        slack=slack,
        epsilon=0.0,
        theta_init=theta_init,
        propensity_clip=propensity_clip,
        split_first=split_first,
        split_second=split_second,
        split_seed=seed,
    )
    uniform = WeightTable.uniform(data.n_arm(0), data.n_arm(1))
    attained = provisional._f1(theta_init, data, provisional.masses(uniform, data))
    if provisional._nll_constraint():
        # f1 is the NLL shortfall relative to the preliminary fit
        final_epsilon = slack if epsilon is None else epsilon
        anchor = attained
    else:
        final_epsilon = attained + slack if epsilon is None else epsilon
        anchor = 0.0
    return replace(provisional, epsilon=final_epsilon, _anchor=anchor)


def naive_estimate(spec: EstimatorSpec, data: ObservedDataset) -> AteEstimate:
    """The estimator applied directly to the data: unweighted MLE parameters
    evaluated at uniform weights. Ignores any TV budget."""
    uniform = WeightTable.uniform(data.n_arm(0), data.n_arm(1))
    value = spec.objective(spec.theta_init, uniform, data)
    return AteEstimate(value=value, kind=spec.kind, params=spec.theta_init)
