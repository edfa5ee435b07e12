"""Tests for the causal adjustment estimators: objectives, constraints, gradients."""

from __future__ import annotations

import numpy as np
import pytest

from atebound.dataset import ObservedDataset
from atebound.empirical import EmpiricalDistribution, WeightTable
from atebound.estimators import (
    AteEstimate,
    DegenerateDataError,
    PositivityError,
    build_estimator,
    naive_estimate,
)
from atebound.models import ModelParams, sigmoid


def toy_dataset(rng, n=60, d=2, tau=2.0, binary=False):
    X = rng.normal(size=(n, d))
    z = (rng.uniform(size=n) < sigmoid(0.5 * X[:, 0])).astype(int)
    score = tau * z + X @ rng.normal(size=d)
    if binary:
        y = (rng.uniform(size=n) < sigmoid(score)).astype(float)
    else:
        y = score + rng.normal(size=n)
    return ObservedDataset(X, y, z)


def random_weights(rng, data):
    return WeightTable(
        EmpiricalDistribution(rng.dirichlet(np.ones(data.n_arm(0)))),
        EmpiricalDistribution(rng.dirichlet(np.ones(data.n_arm(1)))),
    )


def uniform_weights(data):
    return WeightTable.uniform(data.n_arm(0), data.n_arm(1))


class TestBackdoorObjective:
    def test_constant_treatment_effect(self):
        rng = np.random.default_rng(0)
        data = toy_dataset(rng)
        spec = build_estimator("backdoor", data)
        theta = ModelParams(np.array([0.3, 1.7] + [0.0] * data.dim))
        for _ in range(3):
            w = random_weights(rng, data)
            assert spec.objective(theta, w, data) == pytest.approx(1.7)

    def test_two_sample_hand_arithmetic(self):
        data = ObservedDataset(np.array([[1.0], [0.0]]), np.array([1.0, 0.0]),
                               np.array([1, 0]))
        spec = build_estimator("backdoor", data)
        theta = ModelParams(np.array([0.0, 1.0, 1.0]))
        w = uniform_weights(data)
        assert spec.objective(theta, w, data) == pytest.approx(2.0)

    def test_matches_naive_at_mle_uniform(self):
        rng = np.random.default_rng(1)
        data = toy_dataset(rng, n=120)
        spec = build_estimator("backdoor", data)
        got = spec.objective(spec.theta_init, uniform_weights(data), data)
        assert got == pytest.approx(naive_estimate(spec, data).value, abs=1e-8)


class TestIpwObjective:
    def test_constant_half_propensity(self):
        rng = np.random.default_rng(2)
        data = toy_dataset(rng, n=80)
        spec = build_estimator("ipw", data)
        theta = ModelParams(np.zeros(2 + data.dim), family="logistic")
        got = spec.objective(theta, uniform_weights(data), data)
        y, z = data.outcome, data.treatment
        want = 2 * np.mean(y * z) - 2 * np.mean(y * (1 - z))
        assert got == pytest.approx(want)

    def test_zero_outcome(self):
        rng = np.random.default_rng(3)
        data = toy_dataset(rng, n=40)
        data = ObservedDataset(data.covariates, np.zeros(data.n), data.treatment)
        spec = build_estimator("ipw", data)
        for _ in range(3):
            w = random_weights(rng, data)
            theta = ModelParams(rng.normal(size=2 + data.dim), family="logistic")
            assert spec.objective(theta, w, data) == pytest.approx(0.0)

    def test_four_row_toy(self):
        data = ObservedDataset(np.zeros((4, 1)), np.array([1.0, 0.0, 1.0, 0.0]),
                               np.array([1, 1, 0, 0]))
        spec = build_estimator("ipw", data)
        theta = ModelParams(np.zeros(3), family="logistic")
        # propensity 0.5 everywhere: 0.5*(1/2*1/0.5 + ...) per arm composition
        got = spec.objective(theta, uniform_weights(data), data)
        want = 2 * (1.0 + 0.0) / 4 - 2 * (1.0 + 0.0) / 4
        assert got == pytest.approx(want)

    def test_propensity_clamp_active(self):
        data = ObservedDataset(np.array([[30.0], [-30.0]]), np.array([1.0, 1.0]),
                               np.array([1, 0]))
        spec = build_estimator("ipw", data)
        theta = ModelParams(np.array([0.0, 0.0, 1.0]), family="logistic")
        got = spec.objective(theta, uniform_weights(data), data)
        # clamped to 0.99 / 0.01: 0.5*1/0.99 - 0.5*1/(1-0.01)
        assert got == pytest.approx(0.5 / 0.99 - 0.5 / 0.99)


class TestFrontdoorObjective:
    def test_mediator_independent_model_gives_zero(self):
        rng = np.random.default_rng(4)
        data = toy_dataset(rng)
        spec = build_estimator("frontdoor", data)
        theta = ModelParams(np.array([0.7, 1.3] + [0.0] * data.dim))
        for _ in range(3):
            w = random_weights(rng, data)
            assert spec.objective(theta, w, data) == pytest.approx(0.0, abs=1e-12)

    def test_unit_coefficient_reduces_to_mediator_mean_gap(self):
        rng = np.random.default_rng(5)
        data = toy_dataset(rng, d=1)
        spec = build_estimator("frontdoor", data)
        theta = ModelParams(np.array([0.0, 0.0, 1.0]))
        w = random_weights(rng, data)
        got = spec.objective(theta, w, data)
        x = data.covariates[:, 0]
        want = w.arm(1).weights @ x[data.arm_rows(1)] - w.arm(0).weights @ x[data.arm_rows(0)]
        assert got == pytest.approx(want)

    def test_coincides_with_backdoor_under_additive_model(self):
        # with g additive in z, the P(z') mixture collapses against backdoor
        rng = np.random.default_rng(6)
        data = toy_dataset(rng)
        fd = build_estimator("frontdoor", data)
        bd = build_estimator("backdoor", data)
        theta = ModelParams(np.array([0.4, 0.0, 1.1, -0.6]))
        for _ in range(3):
            w = random_weights(rng, data)
            assert fd.objective(theta, w, data) == pytest.approx(
                bd.objective(theta, w, data)
            )


class TestDoubleMlObjective:
    def test_formula_collapse_zero_model(self):
        rng = np.random.default_rng(7)
        data = toy_dataset(rng, n=100)
        spec = build_estimator("double_ml", data, seed=11)
        theta = ModelParams(np.zeros(2 + data.dim), family="plm")
        got = spec.objective(theta, uniform_weights(data), data)
        sec = spec.split_second
        y, z = data.outcome[sec], data.treatment[sec]
        assert got == pytest.approx(np.mean(y * z) / np.mean(z))

    def test_recovers_tau_with_true_nuisance(self):
        rng = np.random.default_rng(8)
        n, d = 400, 2
        X = rng.normal(size=(n, d))
        z = rng.integers(0, 2, size=n)
        theta0 = np.array([0.5, 0.0, 1.0, -1.0])
        tau = 3.0
        from atebound.models import design_matrix

        y = design_matrix(X, np.zeros(n)) @ theta0 + tau * z
        data = ObservedDataset(X, y, z)
        spec = build_estimator("double_ml", data)
        theta = ModelParams(theta0, family="plm")
        got = spec.objective(theta, uniform_weights(data), data)
        assert got == pytest.approx(tau, abs=1e-10)

    def test_zero_outcome(self):
        rng = np.random.default_rng(9)
        data = toy_dataset(rng, n=50)
        data = ObservedDataset(data.covariates, np.zeros(data.n), data.treatment)
        spec = build_estimator("double_ml", data)
        theta = ModelParams(np.zeros(2 + data.dim), family="plm")
        assert spec.objective(theta, uniform_weights(data), data) == pytest.approx(0.0)

    def test_degenerate_split_rejected(self):
        X = np.zeros((6, 1))
        y = np.zeros(6)
        z = np.array([1, 1, 1, 0, 0, 0])
        # find a seed whose evaluation half has no treated rows
        hit = None
        for seed in range(200):
            perm = np.random.default_rng(seed).permutation(6)
            if np.sum(z[np.sort(perm[3:])]) == 0:
                hit = seed
                break
        assert hit is not None
        with pytest.raises(DegenerateDataError):
            build_estimator("double_ml", ObservedDataset(X, y, z), seed=hit)


class TestLikelihoodConstraint:
    def test_feasible_at_preliminary_fit(self):
        rng = np.random.default_rng(10)
        data = toy_dataset(rng)
        for kind in ("backdoor", "ipw", "frontdoor", "double_ml"):
            spec = build_estimator(kind, data)
            v = spec.constraint(spec.theta_init, uniform_weights(data), data)
            assert v == pytest.approx(-spec.slack, abs=1e-12)

    def test_positive_away_from_minimizer(self):
        rng = np.random.default_rng(11)
        data = toy_dataset(rng)
        spec = build_estimator("backdoor", data, epsilon=0.0)
        theta = ModelParams(spec.theta_init.theta + 1.0)
        assert spec.constraint(theta, uniform_weights(data), data) > 0

    def test_linear_hand_arithmetic(self):
        # residuals (1, 1), uniform weights, epsilon = 0.5 -> v = 1 - 0.5
        data = ObservedDataset(np.array([[0.0], [0.0]]), np.array([1.0, 1.0]),
                               np.array([0, 1]))
        spec = build_estimator("backdoor", data, epsilon=0.5)
        theta = ModelParams(np.zeros(3))
        v = spec.constraint(theta, uniform_weights(data), data)
        assert v == pytest.approx(1.0 - 0.5)


class TestNaiveEstimate:
    def test_backdoor_consistency(self):
        rng = np.random.default_rng(12)
        n, d = 4000, 2
        X = rng.normal(size=(n, d))
        z = rng.integers(0, 2, size=n)
        y = 2.0 * z + X[:, 0] + rng.normal(size=n)
        data = ObservedDataset(X, y, z)
        spec = build_estimator("backdoor", data)
        est = naive_estimate(spec, data)
        se = 2.0 / np.sqrt(n)
        assert abs(est.value - 2.0) < 3 * se

    def test_ipw_randomized_matches_mean_difference(self):
        rng = np.random.default_rng(13)
        n = 5000
        X = rng.normal(size=(n, 1))
        z = rng.integers(0, 2, size=n)
        y = 1.5 * z + rng.normal(size=n)
        data = ObservedDataset(X, y, z)
        spec = build_estimator("ipw", data)
        est = naive_estimate(spec, data)
        diff = y[z == 1].mean() - y[z == 0].mean()
        assert abs(est.value - diff) < 3 * 2.0 / np.sqrt(n)

    def test_positivity_error(self):
        data = ObservedDataset(np.zeros((4, 1)), np.zeros(4), np.ones(4, dtype=int))
        with pytest.raises(PositivityError):
            build_estimator("backdoor", data)

    def test_estimate_is_finite_record(self):
        with pytest.raises(ValueError):
            AteEstimate(float("nan"), "backdoor", ModelParams(np.zeros(3)))


class TestRowSplittingInvariance:
    def test_backdoor_duplicate_row_with_halved_weight(self):
        # backdoor normalizes per arm, so literal duplication is a no-op
        rng = np.random.default_rng(14)
        data = toy_dataset(rng, n=30)
        spec = build_estimator("backdoor", data)
        theta = spec.theta_init
        w = random_weights(rng, data)
        base = spec.objective(theta, w, data)

        row = data.arm_rows(1)[0]
        X2 = np.vstack([data.covariates, data.covariates[row]])
        y2 = np.append(data.outcome, data.outcome[row])
        z2 = np.append(data.treatment, data.treatment[row])
        data2 = ObservedDataset(X2, y2, z2)
        w1 = w.arm(1).weights.copy()
        new_w1 = np.append(w1, w1[0] / 2)
        new_w1[0] /= 2
        w2 = WeightTable(w.arm(0), EmpiricalDistribution(new_w1))
        spec2 = build_estimator("backdoor", data2)
        assert spec2.objective(theta, w2, data2) == pytest.approx(base, rel=1e-10)

    @pytest.mark.parametrize("kind", ["backdoor", "ipw", "frontdoor"])
    def test_mass_measure_invariance(self, kind):
        # the evaluators depend on (data, weights) only through the row-mass
        # measure: splitting a row's mass across duplicates changes nothing
        rng = np.random.default_rng(15)
        data = toy_dataset(rng, n=30)
        spec = build_estimator(kind, data)
        theta = spec.theta_init
        w = random_weights(rng, data)
        m = spec.masses(w, data)
        base = spec._q_value(theta, data, m)

        row = data.arm_rows(1)[0]
        X2 = np.vstack([data.covariates, data.covariates[row]])
        y2 = np.append(data.outcome, data.outcome[row])
        z2 = np.append(data.treatment, data.treatment[row])
        data2 = ObservedDataset(X2, y2, z2)
        spec2 = build_estimator(kind, data2)
        m2 = np.append(m, m[row] / 2)
        m2[row] /= 2
        assert spec2._q_value(theta, data2, m2) == pytest.approx(base, rel=1e-10)


def fd_vector(fun, x0, step=1e-5):
    g = np.zeros_like(x0)
    for j in range(x0.size):
        up = x0.copy(); up[j] += step
        dn = x0.copy(); dn[j] -= step
        g[j] = (fun(up) - fun(dn)) / (2 * step)
    return g


class TestGradients:
    @pytest.mark.parametrize("kind,family", [
        ("backdoor", "linear"),
        ("backdoor", "logistic"),
        ("ipw", "logistic"),
        ("frontdoor", "linear"),
        ("frontdoor", "logistic"),
        ("double_ml", "plm"),
    ])
    def test_theta_and_weight_gradients_match_fd(self, kind, family):
        rng = np.random.default_rng(hash((kind, family)) % 2**32)
        for trial in range(25):
            data = toy_dataset(rng, n=int(rng.integers(12, 40)),
                               d=int(rng.integers(1, 4)),
                               binary=(family == "logistic"))
            spec = build_estimator(kind, data, family=family)
            theta = ModelParams(
                spec.theta_init.theta + 0.3 * rng.normal(size=spec.theta_init.theta.size),
                family=spec.theta_init.family,
            )
            w = random_weights(rng, data)

            for value_fn, grad_fn in (
                (spec.objective, spec.objective_grad_theta),
                (spec.constraint, spec.constraint_grad_theta),
            ):
                got = grad_fn(theta, w, data)
                want = fd_vector(
                    lambda th: value_fn(theta.replace_theta(th), w, data),
                    theta.theta.copy(),
                )
                scale = max(1.0, np.linalg.norm(want))
                assert np.linalg.norm(got - want) / scale < 1e-4, (kind, family, trial)

            for value_fn, grad_fn in (
                (spec.objective, spec.objective_grad_weights),
                (spec.constraint, spec.constraint_grad_weights),
            ):
                got0, got1 = grad_fn(theta, w, data)
                for z, got in ((0, got0), (1, got1)):
                    base = w.arm(z).weights.copy()

                    def value_at(wz):
                        parts = {0: w.arm(0).weights, 1: w.arm(1).weights}
                        parts[z] = wz
                        # bypass simplex validation: gradients are directional
                        table = WeightTable.__new__(WeightTable)
                        object.__setattr__(table, "weights_z0",
                                           _raw_dist(parts[0]))
                        object.__setattr__(table, "weights_z1",
                                           _raw_dist(parts[1]))
                        return value_fn(theta, table, data)

                    want = fd_vector(value_at, base)
                    scale = max(1.0, np.linalg.norm(want))
                    assert np.linalg.norm(got - want) / scale < 1e-4, (kind, family, z)


def _raw_dist(values):
    d = EmpiricalDistribution.__new__(EmpiricalDistribution)
    object.__setattr__(d, "weights", np.asarray(values, dtype=float))
    return d
