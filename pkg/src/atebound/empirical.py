"""Reweightable empirical distributions and the geometry of TV uncertainty sets.

A candidate reweighting of the observed rows lives on the probability simplex
and, per arm, inside an l1 ball of radius 2*gamma around the uniform empirical
weights (TV distance equals half the l1 distance on a shared finite support).
This module provides the distance and the Euclidean projections used by the
solver: onto the simplex, onto an l1 ball, and onto their intersection.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_SUM_TOL = 1e-12


@dataclass(frozen=True)
class EmpiricalDistribution:
    """Probability weights over a fixed set of support rows."""

    weights: np.ndarray

    def __post_init__(self) -> None:
        w = np.asarray(self.weights, dtype=float)
        if w.ndim != 1 or w.size == 0:
            raise ValueError(f"weights must be a non-empty 1-d vector, got shape {w.shape}")
        if not np.all(np.isfinite(w)):
            raise ValueError("weights must be finite")
        if w.min() < 0:
            raise ValueError(f"weights must be nonnegative, min is {w.min()}")
        if abs(w.sum() - 1.0) > _SUM_TOL:
            raise ValueError(f"weights must sum to 1 within {_SUM_TOL}, got {w.sum()!r}")
        object.__setattr__(self, "weights", w)

    @property
    def support_size(self) -> int:
        return self.weights.size

    @classmethod
    def uniform(cls, n: int) -> "EmpiricalDistribution":
        if n < 1:
            raise ValueError("support size must be >= 1")
        return cls(np.full(n, 1.0 / n))


@dataclass(frozen=True)
class WeightTable:
    """Per-arm reweightings of the observed rows (the solver's decision variable)."""

    weights_z0: EmpiricalDistribution
    weights_z1: EmpiricalDistribution

    def arm(self, z: int) -> EmpiricalDistribution:
        return self.weights_z1 if z == 1 else self.weights_z0

    @classmethod
    def uniform(cls, n0: int, n1: int) -> "WeightTable":
        return cls(EmpiricalDistribution.uniform(n0), EmpiricalDistribution.uniform(n1))


@dataclass(frozen=True)
class TvBudget:
    """Per-arm TV budgets gamma_z in [0, 1]."""

    gamma_0: float
    gamma_1: float

    def __post_init__(self) -> None:
        for name, g in (("gamma_0", self.gamma_0), ("gamma_1", self.gamma_1)):
            if not 0.0 <= g <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {g}")

    def arm(self, z: int) -> float:
        return self.gamma_1 if z == 1 else self.gamma_0


def tv_distance(p: EmpiricalDistribution, q: EmpiricalDistribution) -> float:
    """Total variation distance between distributions on the same support rows.

    Equals half the l1 distance between the weight vectors, which is the
    coupling-mismatch infimum on a shared finite support.
    """
    if p.support_size != q.support_size:
        raise ValueError(
            f"support_size mismatch: {p.support_size} vs {q.support_size}"
        )
    return 0.5 * float(np.abs(p.weights - q.weights).sum())


def _simplex_threshold(v: np.ndarray, total: float) -> float:
    """Water-filling threshold t such that sum(max(v - t, 0)) == total (total > 0)."""
    u = np.sort(v)[::-1]
    cssv = np.cumsum(u) - total
    k = np.arange(1, v.size + 1)
    cond = u - cssv / k > 0
    rho = int(np.nonzero(cond)[0][-1])
    return float(cssv[rho] / (rho + 1))


def project_simplex(w: np.ndarray | list[float]) -> EmpiricalDistribution:
    """Euclidean projection onto {w >= 0, sum(w) = 1}."""
    v = np.asarray(w, dtype=float)
    if v.ndim != 1 or v.size == 0:
        raise ValueError(f"input must be a non-empty 1-d vector, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValueError("input must be finite")
    t = _simplex_threshold(v, 1.0)
    out = np.maximum(v - t, 0.0)
    out /= out.sum()
    return EmpiricalDistribution(out)


def _as_distribution(center) -> EmpiricalDistribution:
    if isinstance(center, EmpiricalDistribution):
        return center
    return EmpiricalDistribution(np.asarray(center, dtype=float))


def project_l1_ball(
    w: np.ndarray | list[float], center: EmpiricalDistribution, radius: float
) -> np.ndarray:
    """Euclidean projection of w onto {v : ||v - center||_1 <= radius}.

    Returns a plain vector (the result need not be a probability vector).
    """
    if radius < 0:
        raise ValueError(f"radius must be >= 0, got {radius}")
    v = np.asarray(w, dtype=float)
    c = _as_distribution(center).weights
    if v.shape != c.shape:
        raise ValueError(f"shape mismatch: {v.shape} vs center {c.shape}")
    u = v - c
    l1 = np.abs(u).sum()
    if l1 <= radius:
        return v.copy()
    if radius == 0.0:
        return c.copy()
    t = _simplex_threshold(np.abs(u), radius)
    return c + np.sign(u) * np.maximum(np.abs(u) - t, 0.0)


def _solve_capped_sum(v: np.ndarray, caps: np.ndarray, target: float) -> float:
    """Solve sum(clip(v - t, 0, caps)) == target for t.

    The left side runs from 0 (t >= max(v)) up to sum(caps) as t decreases,
    piecewise linear with breakpoints at v_i (coordinate activates) and
    v_i - caps_i (coordinate saturates). Requires 0 <= target <= sum(caps).
    """
    if target <= 0.0:
        return float(v.max())
    events = np.concatenate([v, v - caps])
    deltas = np.concatenate([np.ones(v.size), -np.ones(caps.size)])
    order = np.argsort(-events, kind="stable")
    events = events[order]
    deltas = deltas[order]
    slopes = np.cumsum(deltas)
    seg = slopes[:-1] * (events[:-1] - events[1:])
    # value[k] = sum(clip(v - events[k], 0, caps)), nondecreasing in k
    value = np.concatenate([[0.0], np.cumsum(seg)])
    k = int(np.searchsorted(value, target, side="left"))
    if k >= events.size:
        return float(events[-1])
    if k == 0:
        return float(events[0])
    slope = slopes[k - 1]
    if slope <= 0:
        return float(events[k])
    return float(events[k - 1] - (target - value[k - 1]) / slope)


def _project_intersection_exact(
    v: np.ndarray, c: np.ndarray, gamma: float
) -> np.ndarray:
    """Projection onto {w >= 0, sum w = 1, ||w - c||_1 <= 2*gamma} when the TV
    constraint is active.

    With both equality and TV constraints active the KKT system decouples:
    above-center coordinates satisfy w_i = v_i - u with
    sum(max(v - c - u, 0)) = gamma, and the remaining coordinates satisfy
    sum(clip(v - tau, 0, c)) = 1 - gamma. The TV multiplier is u - tau >= 0.
    """
    u = _simplex_threshold(v - c, gamma)
    tau = _solve_capped_sum(v, c, 1.0 - gamma)
    if u - tau < 0:
        # TV constraint inactive; caller should have used the plain simplex
        # projection, but fall back to it for robustness.
        t = _simplex_threshold(v, 1.0)
        return np.maximum(v - t, 0.0)
    return np.minimum(np.maximum(v - tau, 0.0), c) + np.maximum(v - c - u, 0.0)


def _project_intersection_dykstra(
    v: np.ndarray, center: EmpiricalDistribution, gamma: float,
    max_rounds: int = 500, tol: float = 1e-10,
) -> np.ndarray:
    """Dykstra's alternating projections between the simplex and the l1 ball."""
    x = v.copy()
    p = np.zeros_like(v)
    q = np.zeros_like(v)
    y = x
    for _ in range(max_rounds):
        y = project_simplex(x + p).weights
        p = x + p - y
        x = project_l1_ball(y + q, center, 2.0 * gamma)
        q = y + q - x
        if np.max(np.abs(y - x)) < tol:
            break
    return y


def project_feasible(
    w: np.ndarray | list[float],
    center: EmpiricalDistribution,
    gamma: float,
    method: str = "auto",
) -> EmpiricalDistribution:
    """Project onto {w >= 0, sum w = 1} intersected with the TV ball of radius gamma.

    gamma is in TV units; the l1 radius is 2*gamma. method "auto" uses an
    exact two-multiplier KKT solve; "dykstra" uses alternating projections
    (both agree to high precision, see the tests).
    """
    if not 0.0 <= gamma <= 1.0:
        raise ValueError(f"gamma must be in [0, 1], got {gamma}")
    center = _as_distribution(center)
    v = np.asarray(w, dtype=float)
    c = center.weights
    if v.shape != c.shape:
        raise ValueError(f"shape mismatch: {v.shape} vs center {c.shape}")
    if not np.all(np.isfinite(v)):
        raise ValueError("input must be finite")
    if gamma == 0.0:
        return center
    if v.min() >= 0 and abs(v.sum() - 1.0) <= _SUM_TOL and 0.5 * np.abs(v - c).sum() <= gamma:
        return EmpiricalDistribution(v.copy())
    on_simplex = project_simplex(v).weights
    if 0.5 * np.abs(on_simplex - c).sum() <= gamma + 1e-15:
        return EmpiricalDistribution(on_simplex)
    if method == "dykstra":
        out = _project_intersection_dykstra(v, center, gamma)
    elif method in ("auto", "exact"):
        out = _project_intersection_exact(v, c, gamma)
    else:
        raise ValueError(f"unknown projection method {method!r}")
    out = np.maximum(out, 0.0)
    out /= out.sum()
    return EmpiricalDistribution(out)
