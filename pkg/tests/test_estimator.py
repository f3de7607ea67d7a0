"""Tests for regularized estimation, marginal likelihood, and tuning."""

import json
import math

import numpy as np
import pytest

from beyondnyq.errors import InvalidStartError, OracleInapplicableError
from beyondnyq.estimator import (
    FitReport,
    HyperparameterVector,
    RegularizedProblem,
    apply_hyperparameters,
    default_bounds,
    goodness_of_fit,
    load_model,
    marginal_likelihood,
    optimize_hyperparameters,
    predict_fast_output,
    primal_check,
    regularized_fir,
    save_model,
)
from beyondnyq.kernels import (
    DiagonalCorrelated,
    KernelSum,
    ResonantPole,
    StableSpline,
    Tikhonov,
    build_kernel_matrix,
)
from beyondnyq.regressor import build_regressor, least_squares_fir
from beyondnyq.signals import FastSignal, FirModel, SlowSignal, random_noise


def make_problem(seed, n=60, factor=3, order=10, gamma=1e-3, kernel=None, y=None):
    rng = np.random.default_rng(seed)
    u = FastSignal(samples=rng.normal(size=n), period=0.1)
    phi = build_regressor(u, factor, order)
    samples = rng.normal(size=phi.output_length) if y is None else y
    y_l = SlowSignal(samples=samples, period=0.1 * factor, factor=factor)
    kernel = kernel or DiagonalCorrelated(scale=1.5, decay=0.9, correlation=0.4)
    return RegularizedProblem(phi=phi, y_l=y_l, kernel=kernel, gamma=gamma)


def naive_marginal_likelihood(phi, y, kernel, gamma):
    """Dense oracle: explicit inverse and determinant."""
    k = build_kernel_matrix(kernel, phi.order).entries
    g = phi.entries @ k @ phi.entries.T + gamma * np.eye(phi.output_length)
    return float(y @ np.linalg.inv(g) @ y + math.log(np.linalg.det(g)))


class TestRegularizedFir:
    def test_zero_output_gives_zero_model(self):
        problem = make_problem(0, y=np.zeros(20))
        np.testing.assert_array_equal(regularized_fir(problem).theta, 0.0)

    def test_huge_gamma_shrinks_to_zero(self):
        problem = make_problem(1, gamma=1e12)
        theta = regularized_fir(problem).theta
        k = build_kernel_matrix(problem.kernel, problem.phi.order).entries
        bound = np.linalg.norm(k @ problem.phi.entries.T @ problem.y_l.samples) / 1e12
        assert np.linalg.norm(theta) <= bound * (1 + 1e-9)

    def test_recovers_least_squares_as_gamma_vanishes(self):
        rng = np.random.default_rng(2)
        u = FastSignal(samples=rng.normal(size=120), period=0.1)
        phi = build_regressor(u, 2, 15)  # M=60 > P=15, full rank
        clean = phi.entries @ rng.normal(size=15)
        y = SlowSignal(samples=clean + 0.01 * rng.normal(size=clean.size), period=0.2, factor=2)
        ls_theta = least_squares_fir(phi, y).theta
        reg_theta = regularized_fir(
            RegularizedProblem(phi=phi, y_l=y, kernel=Tikhonov(), gamma=1e-10)
        ).theta
        err = np.linalg.norm(reg_theta - ls_theta) / np.linalg.norm(ls_theta)
        assert err <= 1e-4

    def test_single_output_sample_still_unique(self):
        # one slow-rate sample determines a ten-coefficient model under the prior
        rng = np.random.default_rng(3)
        u = FastSignal(samples=rng.normal(size=10), period=0.1)
        phi = build_regressor(u, 1, 10, output_length=1)
        y = SlowSignal(samples=[1.3], period=0.1, factor=1)
        model = regularized_fir(
            RegularizedProblem(phi=phi, y_l=y, kernel=Tikhonov(), gamma=0.1)
        )
        assert model.order == 10
        assert np.all(np.isfinite(model.theta))

    def test_works_for_order_beyond_output_length(self):
        rng = np.random.default_rng(4)
        u = FastSignal(samples=rng.normal(size=45), period=0.1)
        phi = build_regressor(u, 3, 40)  # M=15 < P=40
        y = SlowSignal(samples=rng.normal(size=15), period=0.3, factor=3)
        for kernel in (
            Tikhonov(),
            DiagonalCorrelated(scale=1.0, decay=0.9, correlation=0.2),
            StableSpline(scale=1.0, decay=0.8),
            ResonantPole(decay=0.9, frequency=0.5),
        ):
            model = regularized_fir(RegularizedProblem(phi=phi, y_l=y, kernel=kernel, gamma=1e-4))
            assert np.all(np.isfinite(model.theta))

    def test_linear_in_output(self):
        problem = make_problem(5)
        theta = regularized_fir(problem).theta
        scaled = RegularizedProblem(
            phi=problem.phi,
            y_l=SlowSignal(samples=3.0 * problem.y_l.samples, period=problem.y_l.period, factor=problem.y_l.factor),
            kernel=problem.kernel,
            gamma=problem.gamma,
        )
        np.testing.assert_allclose(regularized_fir(scaled).theta, 3.0 * theta, rtol=1e-9, atol=1e-12)

    def test_gamma_must_be_positive(self):
        with pytest.raises(ValueError, match="gamma"):
            make_problem(6, gamma=0.0)
        with pytest.raises(ValueError, match="gamma"):
            make_problem(6, gamma=-1.0)


class TestPrimalCheck:
    def test_matches_dual_form(self):
        for seed in range(10):
            problem = make_problem(seed, n=60, factor=3, order=10)
            dual = regularized_fir(problem).theta
            primal = primal_check(problem).theta
            err = np.linalg.norm(dual - primal) / np.linalg.norm(primal)
            assert err < 1e-8

    def test_tikhonov_reduces_to_ridge(self):
        problem = make_problem(11, kernel=Tikhonov(), gamma=0.3)
        phi = problem.phi.entries
        ridge = np.linalg.solve(
            phi.T @ phi + 0.3 * np.eye(problem.phi.order), phi.T @ problem.y_l.samples
        )
        np.testing.assert_allclose(primal_check(problem).theta, ridge, rtol=1e-10)

    def test_scalar_order_closed_form(self):
        # P=1: theta = sum(phi_m y_m) / (sum(phi_m^2) + gamma / k(0,0))
        rng = np.random.default_rng(12)
        u = FastSignal(samples=rng.normal(size=30), period=0.1)
        phi = build_regressor(u, 3, 1)
        y = SlowSignal(samples=rng.normal(size=10), period=0.3, factor=3)
        kernel = DiagonalCorrelated(scale=2.0, decay=0.5, correlation=0.1)
        gamma = 0.7
        column = phi.entries[:, 0]
        expected = (column @ y.samples) / (column @ column + gamma / 2.0)
        theta = primal_check(RegularizedProblem(phi=phi, y_l=y, kernel=kernel, gamma=gamma)).theta
        assert theta[0] == pytest.approx(expected, rel=1e-12)

    def test_singular_kernel_inapplicable(self):
        # a single resonant pole gives a rank-2 matrix, singular for P > 2
        problem = make_problem(13, kernel=ResonantPole(decay=0.9, frequency=0.4))
        with pytest.raises(OracleInapplicableError):
            primal_check(problem)


class TestMarginalLikelihood:
    def test_negligible_kernel_reduces_to_energy(self):
        problem = make_problem(14, gamma=1.0)
        tiny = DiagonalCorrelated(scale=1e-30, decay=0.9, correlation=0.1)
        y = problem.y_l.samples
        value = marginal_likelihood(problem.phi, problem.y_l, tiny, 1.0)
        assert value == pytest.approx(float(y @ y), rel=1e-9)

    def test_scalar_output_closed_form(self):
        rng = np.random.default_rng(15)
        u = FastSignal(samples=rng.normal(size=8), period=0.1)
        phi = build_regressor(u, 1, 8, output_length=1)
        y = SlowSignal(samples=[0.9], period=0.1, factor=1)
        kernel = Tikhonov()
        gamma = 0.2
        row = phi.entries[0]
        denom = row @ row + gamma
        expected = 0.9**2 / denom + math.log(denom)
        assert marginal_likelihood(phi, y, kernel, gamma) == pytest.approx(expected, rel=1e-12)

    def test_matches_naive_dense(self):
        rng = np.random.default_rng(16)
        for seed in range(50):
            n = int(rng.integers(15, 90))
            factor = int(rng.integers(1, 4))
            order = int(rng.integers(2, 14))
            problem = make_problem(seed, n=max(n, order), factor=factor, order=order, gamma=10 ** rng.uniform(-6, 1))
            if problem.phi.output_length > 30:
                continue
            naive = naive_marginal_likelihood(
                problem.phi, problem.y_l.samples, problem.kernel, problem.gamma
            )
            ours = marginal_likelihood(problem.phi, problem.y_l, problem.kernel, problem.gamma)
            assert ours == pytest.approx(naive, rel=1e-8)

    def test_scale_recovered_within_decade(self):
        # self-consistency: coefficients drawn from the prior at a known scale
        rng = np.random.default_rng(17)
        true_scale = 0.05
        kernel_true = DiagonalCorrelated(scale=true_scale, decay=0.95, correlation=0.5)
        order = 25
        k = build_kernel_matrix(kernel_true, order).entries
        theta_true = np.linalg.cholesky(k + 1e-12 * np.eye(order)) @ rng.normal(size=order)
        u = FastSignal(samples=rng.normal(size=300), period=0.1)
        phi = build_regressor(u, 2, order)
        noise = 0.001 * rng.normal(size=phi.output_length)
        y = SlowSignal(samples=phi.entries @ theta_true + noise, period=0.2, factor=2)

        scales = np.geomspace(1e-5, 1e2, 40)
        values = [
            marginal_likelihood(
                phi, y, DiagonalCorrelated(scale=s, decay=0.95, correlation=0.5), 1e-6
            )
            for s in scales
        ]
        best = scales[int(np.argmin(values))]
        assert true_scale / 10 <= best <= true_scale * 10


class TestOptimizeHyperparameters:
    def setup_problem(self, seed=18):
        problem = make_problem(seed, n=90, factor=3, order=12, gamma=1e-3)
        template = DiagonalCorrelated(scale=1.0, decay=0.9, correlation=0.3)
        eta0 = HyperparameterVector(
            values={"gamma": 1e-3, "scale": 1.0, "decay": 0.9},
            bounds={"gamma": (1e-9, 1e3), "scale": (1e-2, 1e2), "decay": (0.5, 0.99)},
        )
        return problem, template, eta0

    def test_budget_one_returns_start(self):
        problem, template, eta0 = self.setup_problem()
        result = optimize_hyperparameters(
            problem.phi, problem.y_l, template, eta0, gamma=1e-3, budget=1
        )
        assert result.values == eta0.values

    def test_never_worsens(self):
        rng = np.random.default_rng(19)
        for trial in range(20):
            problem = make_problem(int(rng.integers(0, 1000)), n=45, factor=3, order=8)
            template = DiagonalCorrelated(scale=1.0, decay=0.9, correlation=0.3)
            eta0 = HyperparameterVector(
                values={"scale": 1.0, "decay": 0.9},
                bounds={"scale": (1e-2, 1e2), "decay": (0.5, 0.999)},
            )
            budget = int(rng.integers(1, 60))
            result = optimize_hyperparameters(
                problem.phi, problem.y_l, template, eta0, gamma=1e-3, budget=budget
            )
            before = marginal_likelihood(problem.phi, problem.y_l, template, 1e-3)
            tuned = apply_hyperparameters(template, result.values)
            after = marginal_likelihood(problem.phi, problem.y_l, tuned, 1e-3)
            assert after <= before * (1 + 1e-12) if before > 0 else after <= before + 1e-9

    def test_deterministic(self):
        problem, template, eta0 = self.setup_problem()
        a = optimize_hyperparameters(problem.phi, problem.y_l, template, eta0, gamma=1e-3, budget=50)
        b = optimize_hyperparameters(problem.phi, problem.y_l, template, eta0, gamma=1e-3, budget=50)
        assert a.values == b.values

    def test_trace_final_not_worse_than_first(self):
        problem, template, eta0 = self.setup_problem()
        trace = []
        optimize_hyperparameters(
            problem.phi, problem.y_l, template, eta0, gamma=1e-3, budget=40,
            on_evaluation=lambda values, ml: trace.append(ml),
        )
        assert trace[-1] <= trace[0]

    def test_nonfinite_start_rejected(self):
        # enormous outputs against a negligible covariance overflow the
        # quadratic form to inf while the factorization itself succeeds
        problem, template, _ = self.setup_problem()
        huge = SlowSignal(
            samples=np.full(problem.phi.output_length, 1e190),
            period=problem.y_l.period,
            factor=problem.y_l.factor,
        )
        eta0 = HyperparameterVector(
            values={"scale": 1e-2}, bounds={"scale": (1e-2, 1e2)}
        )
        with pytest.raises(InvalidStartError):
            optimize_hyperparameters(
                problem.phi, huge, template, eta0, gamma=1e-300, budget=5
            )

    def test_gamma_tuned_only_when_present(self):
        problem, template, _ = self.setup_problem()
        eta0 = HyperparameterVector(values={"decay": 0.9}, bounds={"decay": (0.5, 0.999)})
        result = optimize_hyperparameters(
            problem.phi, problem.y_l, template, eta0, gamma=1e-3, budget=30
        )
        assert "gamma" not in result.values


class TestApplyHyperparameters:
    def test_direct_field(self):
        spec = DiagonalCorrelated(scale=1.0, decay=0.9, correlation=0.3)
        out = apply_hyperparameters(spec, {"decay": 0.8})
        assert out.decay == 0.8
        assert out.scale == 1.0

    def test_sum_term_paths(self):
        spec = KernelSum(
            terms=(
                DiagonalCorrelated(scale=1.0, decay=0.9, correlation=0.3),
                ResonantPole(decay=0.9, frequency=0.4),
            )
        )
        out = apply_hyperparameters(spec, {"terms.1.frequency": 0.6, "terms.0.scale": 2.0})
        assert out.terms[1].frequency == 0.6
        assert out.terms[0].scale == 2.0

    def test_malformed_paths_rejected(self):
        spec = Tikhonov()
        with pytest.raises(ValueError):
            apply_hyperparameters(spec, {"terms.0": 1.0})
        with pytest.raises(ValueError):
            apply_hyperparameters(spec, {"terms.0.decay": 1.0})

    def test_out_of_range_value_propagates(self):
        spec = DiagonalCorrelated(scale=1.0, decay=0.9, correlation=0.3)
        with pytest.raises(ValueError, match="decay"):
            apply_hyperparameters(spec, {"decay": 1.5})


class TestHyperparameterVector:
    def test_values_within_bounds_enforced(self):
        with pytest.raises(ValueError):
            HyperparameterVector(values={"decay": 0.99}, bounds={"decay": (0.5, 0.9)})

    def test_names_must_match(self):
        with pytest.raises(ValueError):
            HyperparameterVector(values={"decay": 0.8}, bounds={"scale": (0.1, 1.0)})

    def test_default_bounds_respect_ranges(self):
        lo, hi = default_bounds("decay", 0.95)
        assert 0.0 < lo < hi < 1.0
        lo, hi = default_bounds("terms.2.frequency", 1.2, omega_max=2 * math.pi)
        assert hi < 2 * math.pi
        with pytest.raises(ValueError):
            default_bounds("mystery", 1.0)


class TestGoodnessOfFit:
    def test_perfect_prediction(self):
        y = random_noise(50, 0.1, 1.0, seed=20)
        assert goodness_of_fit(y, y) == pytest.approx(100.0)

    def test_mean_prediction_scores_zero(self):
        y = random_noise(50, 0.1, 1.0, seed=21)
        flat = FastSignal(samples=np.full(50, np.mean(y.samples)), period=0.1)
        assert goodness_of_fit(y, flat) == pytest.approx(0.0, abs=1e-9)

    def test_hand_computed_case(self):
        # errors (1,1) against spread (1,1): 100 * (1 - 2/2) = 0
        assert goodness_of_fit([0.0, 2.0], [1.0, 1.0]) == pytest.approx(0.0)

    def test_constant_reference_rejected(self):
        with pytest.raises(ValueError):
            goodness_of_fit([1.0, 1.0], [0.0, 2.0])

    def test_never_exceeds_100(self):
        rng = np.random.default_rng(22)
        for _ in range(20):
            y = rng.normal(size=30)
            pred = rng.normal(size=30)
            assert goodness_of_fit(y, pred) <= 100.0


class TestPredictFastOutput:
    def test_impulse_reproduces_coefficients(self):
        model = FirModel(theta=[0.5, -0.2, 0.1], period=0.1)
        u = FastSignal(samples=[1.0, 0, 0, 0, 0, 0], period=0.1)
        out = predict_fast_output(model, u)
        np.testing.assert_allclose(out.samples, [0.5, -0.2, 0.1, 0, 0, 0], atol=1e-15)

    def test_identity_model(self):
        u = random_noise(30, 0.1, 1.0, seed=23)
        out = predict_fast_output(FirModel(theta=[1.0], period=0.1), u)
        np.testing.assert_array_equal(out.samples, u.samples)

    def test_matches_double_loop_convolution(self):
        rng = np.random.default_rng(24)
        theta = rng.normal(size=7)
        u = rng.normal(size=40)
        expected = np.zeros(40)
        for t in range(40):
            for i in range(7):
                if t - i >= 0:
                    expected[t] += theta[i] * u[t - i]
        out = predict_fast_output(
            FirModel(theta=theta, period=0.1), FastSignal(samples=u, period=0.1)
        )
        np.testing.assert_allclose(out.samples, expected, atol=1e-12)


class TestFitReportAndModelIo:
    def test_gof_cap_enforced(self):
        model = FirModel(theta=[1.0], period=0.1)
        with pytest.raises(ValueError):
            FitReport(model=model, gof=101.0, rmse=0.0, marginal_likelihood=0.0)

    def test_model_json_round_trip(self, tmp_path):
        model = FirModel(theta=np.random.default_rng(25).normal(size=12), period=0.05)
        path = tmp_path / "model.json"
        save_model(model, path)
        loaded = load_model(path)
        assert np.array_equal(loaded.theta, model.theta)
        assert loaded.period == model.period
        again = tmp_path / "model2.json"
        save_model(loaded, again)
        assert path.read_bytes() == again.read_bytes()

    def test_model_schema(self, tmp_path):
        path = tmp_path / "model.json"
        save_model(FirModel(theta=[1.0, 2.0], period=0.1), path)
        payload = json.loads(path.read_text())
        assert set(payload) == {"period_s", "theta"}

    def test_malformed_model_file(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{\"theta\": [1.0]}")
        with pytest.raises(ValueError):
            load_model(path)
