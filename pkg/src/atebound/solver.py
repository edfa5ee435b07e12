"""Projected gradient descent-ascent over TV-constrained reweightings.

The engine solves, per direction,

    min / max over per-arm weights   Q(theta(w), w)
    subject to                       f1(theta(w), w) <= epsilon,
                                     ||w_z - uniform_z||_1 <= 2 gamma_z,
                                     w_z on the simplex,

via projected gradient steps on the weights with a Lagrange multiplier
ascending on the constraint residual v = f1 - epsilon. The model parameters
track the weighted maximum-likelihood fit at every iterate (closed-form WLS
or warm-started Newton), which keeps the likelihood constraint saturated the
way the program intends and makes the gamma = 0 interval collapse onto the
naive estimate exactly. Weight gradients include the implicit
(d theta / d w) term through the refit.

The best iterate satisfying v <= tolerance_feas with the most extreme
objective is returned; when no iterate is feasible the one with minimal v is
returned flagged infeasible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy import stats

from .dataset import ObservedDataset
from .empirical import EmpiricalDistribution, TvBudget, WeightTable, project_feasible
from .estimators import EstimatorSpec
from .models import ModelParams

DIRECTIONS = ("lower", "upper")


class NumericalFailureError(RuntimeError):
    """A non-finite value appeared during the solve."""


@dataclass(frozen=True)
class SolverConfig:
    """Hyperparameters for one bound computation."""

    budget: TvBudget
    eta_theta: float = 0.01
    eta_lambda: float = 1.0
    eta_weights: float | tuple[float, float] = 0.01
    iterations: int = 2000
    direction: str = "lower"
    tolerance_feas: float = 1e-4
    seed: int = 0
    lambda_init: float = 1.0
    inference_alpha: Optional[float] = None
    record_trace: bool = False
    projection_method: str = "auto"

    def __post_init__(self) -> None:
        if self.eta_theta <= 0 or self.eta_lambda <= 0:
            raise ValueError("learning rates must be positive")
        e0, e1 = self.eta_weights_pair
        if e0 <= 0 or e1 <= 0:
            raise ValueError("weight learning rates must be positive")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.direction not in DIRECTIONS:
            raise ValueError(f"direction must be one of {DIRECTIONS}")
        if self.tolerance_feas <= 0:
            raise ValueError("tolerance_feas must be positive")
        if self.lambda_init < 0:
            raise ValueError("lambda_init must be nonnegative")
        if self.inference_alpha is not None and not 0 < self.inference_alpha < 1:
            raise ValueError("inference_alpha must lie in (0, 1)")

    @property
    def eta_weights_pair(self) -> tuple[float, float]:
        if isinstance(self.eta_weights, (int, float)):
            return (float(self.eta_weights), float(self.eta_weights))
        e0, e1 = self.eta_weights
        return (float(e0), float(e1))


@dataclass
class LagrangeState:
    """One solver iterate: parameters, multiplier, weights."""

    params: ModelParams
    lam: float
    weights: WeightTable
    iteration: int
    objective: float = math.nan
    constraint: float = math.nan
    feasible: bool = True


@dataclass(frozen=True)
class ConfidenceLimits:
    """Sampling-uncertainty limits around the identification bounds."""

    lower_of_lower: float
    upper_of_lower: float
    lower_of_upper: float
    upper_of_upper: float
    alpha: float
    rho: float


@dataclass
class BoundResult:
    """The partial identification interval and solve diagnostics."""

    tau_lower: float
    tau_upper: float
    feasible_lower: bool
    feasible_upper: bool
    state_lower: LagrangeState
    state_upper: LagrangeState
    confidence: Optional[ConfidenceLimits] = None
    trace_lower: Optional[list[tuple[int, float, float, float]]] = None
    trace_upper: Optional[list[tuple[int, float, float, float]]] = None


def lagrangian(spec: EstimatorSpec, state: LagrangeState, data: ObservedDataset,
               direction: str) -> float:
    """sign(direction) * Q + lambda * v, with sign applied to Q only."""
    sign = _direction_sign(direction)
    q = spec.objective(state.params, state.weights, data)
    v = spec.constraint(state.params, state.weights, data)
    return sign * q + state.lam * v


def _direction_sign(direction: str) -> float:
    if direction not in DIRECTIONS:
        raise ValueError(f"direction must be one of {DIRECTIONS}")
    return 1.0 if direction == "lower" else -1.0


class _Perturbation:
    """Joint row reweighting s composed multiplicatively with arm weights."""

    def __init__(self, data: ObservedDataset, s: np.ndarray):
        self.s = s
        self.rows = (data.arm_rows(0), data.arm_rows(1))

    def masses(self, w0: np.ndarray, w1: np.ndarray, n: int) -> np.ndarray:
        m = np.empty(n)
        for z, wz in ((0, w0), (1, w1)):
            rows = self.rows[z]
            sz = self.s[rows]
            arm_mass = sz.sum()
            scale = wz * sz
            m[rows] = arm_mass * scale / scale.sum()
        return m

    def weight_grad(self, z: int, grad_m: np.ndarray, m: np.ndarray,
                    w: np.ndarray) -> np.ndarray:
        rows = self.rows[z]
        g = grad_m[rows]
        mz = m[rows]
        arm_mass = self.s[rows].sum()
        denom = float(w @ self.s[rows])
        mean_g = float(g @ mz) / arm_mass
        return (self.s[rows] * arm_mass / denom) * (g - mean_g)

    def s_grad(self, grad_m: np.ndarray, m: np.ndarray, w0: np.ndarray,
               w1: np.ndarray) -> np.ndarray:
        out = np.empty_like(self.s)
        for z, wz in ((0, w0), (1, w1)):
            rows = self.rows[z]
            g = grad_m[rows]
            mz = m[rows]
            arm_mass = self.s[rows].sum()
            denom = float(wz @ self.s[rows])
            mean_g = float(g @ mz) / arm_mass
            out[rows] = mean_g + (arm_mass * wz / denom) * (g - mean_g)
        return out


@dataclass
class _RunOutcome:
    state: LagrangeState
    trace: Optional[list[tuple[int, float, float, float]]]
    s_final: Optional[np.ndarray] = None


def _gda_run(
    spec: EstimatorSpec,
    data: ObservedDataset,
    config: SolverConfig,
    direction: str,
    s_fixed: Optional[np.ndarray] = None,
    s_adversarial: Optional[float] = None,
    s_gamma: float = 0.0,
) -> _RunOutcome:
    """One projected GDA run; optionally with the joint perturbation s active.

    s_adversarial = +1/-1 lets s ascend/descend the objective inside its own
    TV ball of radius s_gamma; s_fixed freezes a given perturbation.
    """
    sign = _direction_sign(direction)
    n = data.n
    rows = (data.arm_rows(0), data.arm_rows(1))
    uniforms = (EmpiricalDistribution.uniform(rows[0].size),
                EmpiricalDistribution.uniform(rows[1].size))
    eta_w = config.eta_weights_pair
    gammas = (config.budget.gamma_0, config.budget.gamma_1)

    w = [uniforms[0].weights.copy(), uniforms[1].weights.copy()]
    s = None
    s_uniform = None
    if s_adversarial is not None or s_fixed is not None:
        s = np.full(n, 1.0 / n) if s_fixed is None else s_fixed.copy()
        s_uniform = EmpiricalDistribution.uniform(n)
    lam = config.lambda_init
    theta = spec.theta_init

    best: Optional[LagrangeState] = None
    fallback: Optional[LagrangeState] = None
    trace: Optional[list] = [] if config.record_trace else None

    for t in range(config.iterations + 1):
        pert = _Perturbation(data, s) if s is not None else None
        if pert is not None:
            m = pert.masses(w[0], w[1], n)
        else:
            m = np.empty(n)
            for z in (0, 1):
                m[rows[z]] = (rows[z].size / n) * w[z]
        theta = spec.refit_masses(theta, data, m)
        q, q_grad_theta, q_grad_m = spec._q_bundle(theta, data, m)
        v = spec._f1(theta, data, m) - spec.epsilon
        if not (np.isfinite(q) and np.isfinite(v)):
            raise NumericalFailureError(
                f"non-finite objective or residual at iterate {t}"
            )

        snapshot = LagrangeState(
            params=theta,
            lam=lam,
            weights=WeightTable(EmpiricalDistribution(w[0].copy()),
                                EmpiricalDistribution(w[1].copy())),
            iteration=t,
            objective=q,
            constraint=v,
        )
        if trace is not None:
            trace.append((t, q, v, lam))
        if v <= config.tolerance_feas:
            if best is None or sign * q < sign * best.objective:
                best = snapshot
        if fallback is None or v < fallback.constraint:
            fallback = snapshot

        if t == config.iterations:
            break

        lam = max(0.0, lam + config.eta_lambda * v)

        envelope = spec.refit_pullback(theta, data, m, q_grad_theta)
        v_grad_m = spec._f1_grad_m(theta, data, m)
        grad_m = sign * (q_grad_m + envelope) + lam * v_grad_m
        if not np.all(np.isfinite(grad_m)):
            raise NumericalFailureError(f"non-finite gradient at iterate {t}")

        for z in (0, 1):
            if pert is not None:
                gw = pert.weight_grad(z, grad_m, m, w[z])
            else:
                gw = (rows[z].size / n) * grad_m[rows[z]]
            w[z] = project_feasible(
                w[z] - eta_w[z] * gw, uniforms[z], gammas[z],
                method=config.projection_method,
            ).weights

        if s is not None and s_adversarial is not None:
            # the perturbation chases the reported objective, not the
            # Lagrangian: feasibility is the inner variables' job
            q_total_m = q_grad_m + envelope
            gs = pert.s_grad(q_total_m, m, w[0], w[1])
            if not np.all(np.isfinite(gs)):
                raise NumericalFailureError(f"non-finite gradient at iterate {t}")
            step = s_adversarial * (eta_w[0] + eta_w[1]) / 2.0
            s = project_feasible(
                s + step * gs, s_uniform, s_gamma,
                method=config.projection_method,
            ).weights

    if best is None:
        state = fallback
        state.feasible = False
    else:
        state = best
        state.feasible = True
    return _RunOutcome(state=state, trace=trace, s_final=s)


def projected_gda(spec: EstimatorSpec, data: ObservedDataset,
                  config: SolverConfig) -> LagrangeState:
    """Run the solve in config.direction and return the selected iterate."""
    return _gda_run(spec, data, config, config.direction).state


def solve_bounds(spec: EstimatorSpec, data: ObservedDataset,
                 config: SolverConfig) -> BoundResult:
    """Solve both directions from identical starts and assemble the interval."""
    lower = _gda_run(spec, data, config, "lower")
    upper = _gda_run(spec, data, config, "upper")
    result = BoundResult(
        tau_lower=lower.state.objective,
        tau_upper=upper.state.objective,
        feasible_lower=lower.state.feasible,
        feasible_upper=upper.state.feasible,
        state_lower=lower.state,
        state_upper=upper.state,
        trace_lower=lower.trace,
        trace_upper=upper.trace,
    )
    if config.inference_alpha is not None:
        result.confidence = confidence_limits(spec, data, config, result)
    return result


def confidence_limits(
    spec: EstimatorSpec,
    data: ObservedDataset,
    config: SolverConfig,
    base: Optional[BoundResult] = None,
) -> ConfidenceLimits:
    """Sampling-uncertainty limits for both identification bounds.

    An auxiliary joint reweighting s of all n rows, constrained to a TV ball
    of radius rho / n around uniform (rho the chi-square(1) quantile at the
    requested level), composes multiplicatively with the arm weights. For
    each limit, s first moves adversarially, then the bound is re-solved at
    the frozen perturbation; the base solution acts as the s = uniform
    witness, which guarantees l <= tau <= u per pair.
    """
    alpha = config.inference_alpha
    if alpha is None:
        raise ValueError("config.inference_alpha must be set for confidence limits")
    rho = float(stats.chi2.ppf(1.0 - alpha, df=1))
    s_gamma = min(1.0, rho / data.n)
    if base is None:
        base = solve_bounds(spec, data, replace(config, inference_alpha=None))

    limits = {}
    for direction, tau in (("lower", base.tau_lower), ("upper", base.tau_upper)):
        for limit_sign, name in ((1.0, "upper"), (-1.0, "lower")):
            probe = _gda_run(spec, data, config, direction,
                             s_adversarial=limit_sign, s_gamma=s_gamma)
            witness = _gda_run(spec, data, config, direction,
                               s_fixed=probe.s_final, s_gamma=s_gamma)
            value = witness.state.objective
            if limit_sign > 0:
                limits[(direction, name)] = max(value, tau)
            else:
                limits[(direction, name)] = min(value, tau)

    return ConfidenceLimits(
        lower_of_lower=limits[("lower", "lower")],
        upper_of_lower=limits[("lower", "upper")],
        lower_of_upper=limits[("upper", "lower")],
        upper_of_upper=limits[("upper", "upper")],
        alpha=alpha,
        rho=rho,
    )
