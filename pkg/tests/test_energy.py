import numpy as np
import pytest
from gammalab import energy
from gammalab.core.exceptions import InvalidInputError
from gammalab.energy import (
    FunctionalSpec,
    check_oscillation_bound,
    check_truncation_monotone,
    convexity_defect,
    energy_gradient,
    eval_F_limit,
    eval_F_point,
    eval_Fk,
    evaluate,
    finite_difference_check,
    jensen_chain,
    nonlocal_energy,
    parallelogram_defect,
    strip_moment_identity,
    strip_poincare_constant,
    variance_identity,
)
from gammalab.grid import (
    Domain,
    GridFunction,
    closed_sample,
    discrete_gradient_energy,
    random_contraction,
    random_grid_function,
)
from gammalab.kernel import BallAverage, Strip, random_dense_kernel
from gammalab.represent import m_p


def _brute_force(matrix: np.ndarray, u: GridFunction, p: float) -> float:
    v, w = closed_sample(u)
    return float(np.sum(np.outer(w, w) * matrix * np.abs(v[:, None] - v[None, :]) ** p))


@pytest.fixture
def square():
    return Domain.unit(2, 20)


@pytest.fixture
def ball(square):
    return BallAverage(square, square.center, 0.2)


def _specs(square, ball, rng):
    return {
        "limit": FunctionalSpec(2.0, square),
        "ball": FunctionalSpec(2.0, square, ball),
        "strip": FunctionalSpec(2.0, square, Strip(square, 4)),
        "dense": FunctionalSpec(2.0, square, random_dense_kernel(square, rng, density=0.02)),
    }


class TestNonlocalEnergy:
    @pytest.mark.parametrize("p", [1.5, 2.0, 3.0])
    def test_ball_matches_double_sum(self, square, ball, rng, p):
        u = random_grid_function(square, rng)
        _, w = closed_sample(u)
        matrix = np.zeros((w.size, w.size))
        matrix[:, ball.ball_nodes] = 1.0 / ball.measure
        assert nonlocal_energy(ball, u, p) == pytest.approx(_brute_force(matrix, u, p), rel=1e-10)

    @pytest.mark.parametrize("p", [1.5, 2.0, 3.0])
    def test_strip_matches_double_sum(self, square, rng, p):
        kernel = Strip(square, 4)
        u = random_grid_function(square, rng)
        alpha = kernel.alpha.ravel()
        matrix = alpha[:, None] + alpha[None, :]
        assert nonlocal_energy(kernel, u, p) == pytest.approx(_brute_force(matrix, u, p), rel=1e-10)

    def test_dense_matches_double_sum(self, square, rng):
        kernel = random_dense_kernel(square, rng, density=0.05)
        u = random_grid_function(square, rng)
        x = u.flat
        diff = np.abs(x[:, None] - x[None, :]) ** 3.0
        expected = square.cell_volume**2 * float(np.sum(kernel.matrix.toarray() * diff))
        assert nonlocal_energy(kernel, u, 3.0) == pytest.approx(expected, rel=1e-10)

    def test_zero_function(self, square, ball):
        assert nonlocal_energy(ball, GridFunction.zeros(square), 3.0) == 0.0

    def test_tiles_and_workers_agree(self, square, ball, rng, env_settings, monkeypatch):
        u = random_grid_function(square, rng)
        whole = nonlocal_energy(ball, u, 3.0)
        whole_gradient = energy.nonlocal_gradient(ball, u, 3.0)
        env_settings(workers=3)
        monkeypatch.setattr(energy, "PAIRWISE_TILE", 512)
        assert nonlocal_energy(ball, u, 3.0) == pytest.approx(whole, rel=1e-12)
        assert np.allclose(energy.nonlocal_gradient(ball, u, 3.0), whole_gradient, rtol=1e-12, atol=1e-14)

    def test_strip_moment_identity(self, rng):
        domain = Domain.unit(2, 31)
        assert strip_moment_identity(Strip(domain, 8), random_grid_function(domain, rng)) <= 1e-12

    def test_variance_identity(self, square, rng):
        assert variance_identity(random_grid_function(square, rng)) <= 1e-12


class TestFunctionalSpec:
    def test_rejects_kernel_on_other_domain(self, square, ball):
        with pytest.raises(InvalidInputError):
            FunctionalSpec(2.0, Domain.unit(2, 21), ball)

    def test_rejects_small_exponent(self, square):
        with pytest.raises(InvalidInputError):
            FunctionalSpec(1.0, square)

    def test_gradient_only(self, square, rng):
        u = random_grid_function(square, rng)
        spec = FunctionalSpec.gradient_only(3.0, square)
        assert evaluate(spec, u).total == pytest.approx(discrete_gradient_energy(u, 3.0))

    def test_eval_fk_needs_kernel(self, square):
        with pytest.raises(InvalidInputError):
            eval_Fk(FunctionalSpec(2.0, square), GridFunction.zeros(square))

    def test_rejects_function_on_other_domain(self, square, ball):
        with pytest.raises(InvalidInputError):
            evaluate(FunctionalSpec(2.0, square, ball), GridFunction.zeros(Domain.unit(2, 8)))


class TestLimitEnergy:
    def test_quadratic_case_is_variance(self, square, rng):
        u = random_grid_function(square, rng)
        v, w = closed_sample(u)
        mean = float(w @ v) / float(np.sum(w))
        breakdown = eval_F_limit(2.0, u)
        assert breakdown.nonlocal_term == pytest.approx(float(w @ (v - mean) ** 2), rel=1e-12)
        assert breakdown.gradient_term == pytest.approx(discrete_gradient_energy(u, 2.0))

    def test_median_anchor_beats_any_point(self, square, rng):
        u = random_grid_function(square, rng)
        for x0 in [(0.25, 0.25), (0.5, 0.5), (0.8, 0.3)]:
            assert eval_F_limit(3.0, u).total <= eval_F_point(3.0, u, x0).total + 1e-12

    def test_point_anchor_value(self, unit_interval):
        u = GridFunction(unit_interval, np.arange(1.0, 10.0))
        v, w = closed_sample(u)
        anchored = eval_F_point(2.0, u, 0.5).nonlocal_term
        assert anchored == pytest.approx(float(w @ (v - 5.0) ** 2))


class TestStructuralChecks:
    def test_oscillation_bound(self, square, ball, rng):
        for spec in _specs(square, ball, rng).values():
            for _ in range(5):
                assert check_oscillation_bound(spec, random_grid_function(square, rng)).holds

    def test_oscillation_bound_needs_kernel_mass(self, square, ball, rng):
        with pytest.raises(InvalidInputError):
            check_oscillation_bound(FunctionalSpec(2.0, square, ball), random_grid_function(square, rng), bound=0.5)

    @pytest.mark.parametrize("p", [2.0, 3.0])
    def test_truncation_lowers_energy(self, square, ball, rng, p):
        for name, spec in _specs(square, ball, rng).items():
            spec = FunctionalSpec(p, square, spec.kernel)
            for _ in range(5):
                u = random_grid_function(square, rng, scale=2.0)
                check = check_truncation_monotone(spec, u, random_contraction(rng, scale=2.0))
                assert check.holds, name

    def test_parallelogram_vanishes_for_two(self, square, ball, rng):
        for name, spec in _specs(square, ball, rng).items():
            u, v = random_grid_function(square, rng), random_grid_function(square, rng)
            scale = evaluate(spec, u).total + evaluate(spec, v).total
            assert abs(parallelogram_defect(spec, u, v)) <= 1e-9 * scale, name

    def test_parallelogram_fails_for_three(self, square, ball, rng):
        spec = FunctionalSpec(3.0, square, ball)
        u, v = random_grid_function(square, rng), random_grid_function(square, rng)
        assert abs(parallelogram_defect(spec, u, v)) >= 1e-6

    @pytest.mark.parametrize("p", [1.5, 3.0])
    def test_convexity(self, square, ball, rng, p):
        spec = FunctionalSpec(p, square, ball)
        for lam in (0.1, 0.5, 0.9):
            u, v = random_grid_function(square, rng), random_grid_function(square, rng)
            scale = evaluate(spec, u).total + evaluate(spec, v).total
            assert convexity_defect(spec, u, v, lam) <= 1e-12 * scale

    @pytest.mark.parametrize("p", [2.0, 3.0])
    def test_gradient_matches_finite_differences(self, square, ball, rng, p):
        u = random_grid_function(square, rng)
        for name, spec in _specs(square, ball, rng).items():
            spec = FunctionalSpec(p, square, spec.kernel)
            assert finite_difference_check(spec, u, rng=rng) <= 1e-6, name

    def test_limit_gradient_shape(self, square, rng):
        grad = energy_gradient(FunctionalSpec(3.0, square), random_grid_function(square, rng))
        assert grad.shape == square.shape

    @pytest.mark.parametrize("p", [1.5, 2.0, 3.0])
    def test_jensen_chain(self, square, ball, rng, p):
        chain = jensen_chain(ball, random_grid_function(square, rng), p)
        assert chain.holds
        assert chain.nonlocal_term >= chain.median_term


class TestStripPoincare:
    def test_constant_is_moderate(self):
        domain = Domain.unit(2, 127)
        u = GridFunction.from_callable(domain, lambda x, y: np.sin(np.pi * x) * np.sin(np.pi * y))
        result = strip_poincare_constant(Strip(domain, 8), u)
        assert 0.0 < result.constant <= 1.0

    def test_zero_function(self, unit_square):
        assert strip_poincare_constant(Strip(unit_square, 2), GridFunction.zeros(unit_square)).constant == 0.0


def test_limit_median_is_stationary(square, rng):
    u = random_grid_function(square, rng)
    t = m_p(u, 3.0)
    v, w = closed_sample(u)
    for shift in (-1e-4, 1e-4):
        assert float(w @ np.abs(v - t) ** 3) <= float(w @ np.abs(v - t - shift) ** 3)
