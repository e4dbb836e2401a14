import numpy as np
import pytest
import scipy.sparse as sp
from gammalab.core.constants import KernelVariant, ScheduleDirection
from gammalab.core.exceptions import InvalidInputError, RefusalError
from gammalab.grid import Domain, quadrature
from gammalab.kernel import (
    BallAverage,
    Dense,
    KernelConfig,
    KernelFamily,
    SequenceSchedule,
    Strip,
    SubBox,
    ball_mask,
    ball_measure,
    concentration_defect,
    create_kernel,
    load_dense_csv,
    mass,
    random_dense_kernel,
    save_dense_csv,
)


class TestMass:
    def test_dense_zero(self, unit_square):
        assert mass(Dense.zeros(unit_square)) == 0.0

    @pytest.mark.parametrize("radius", [0.1, 0.2, 0.3])
    def test_ball_average_is_domain_measure(self, radius):
        domain = Domain.unit(2, 64)
        assert mass(BallAverage(domain, domain.center, radius)) == pytest.approx(1.0, rel=1e-12)

    @pytest.mark.parametrize("k", [4, 8, 16])
    def test_strip_is_about_two(self, k):
        domain = Domain.unit(2, 63)
        assert abs(mass(Strip(domain, k)) - 2.0) <= 2.0 * k * domain.h[1]

    def test_dense_is_additive_over_disjoint_supports(self, unit_square, rng):
        first = random_dense_kernel(unit_square, rng, support=SubBox((0.0, 0.0), (0.45, 1.0)))
        second = random_dense_kernel(unit_square, rng, support=SubBox((0.55, 0.0), (1.0, 1.0)))
        both = Dense(unit_square, first.matrix + second.matrix)
        assert mass(both) == pytest.approx(mass(first) + mass(second), rel=1e-12)


class TestBallAverage:
    def test_average_weights_sum_to_one(self):
        domain = Domain.unit(2, 40)
        kernel = BallAverage(domain, (0.4, 0.6), 0.15)
        assert float(np.sum(kernel.average_weights)) == pytest.approx(1.0, rel=1e-12)
        assert kernel.measure == pytest.approx(ball_measure(domain, (0.4, 0.6), 0.15))

    def test_ball_nodes_match_mask(self):
        domain = Domain.unit(2, 40)
        kernel = BallAverage(domain, domain.center, 0.2)
        assert np.array_equal(kernel.ball_nodes, np.flatnonzero(ball_mask(domain, domain.center, 0.2)))

    def test_refuses_unresolved_ball(self, unit_square):
        with pytest.raises(RefusalError):
            BallAverage(unit_square, unit_square.center, 0.05)

    def test_resolution_guard_follows_settings(self, unit_square, env_settings):
        env_settings(min_ball_nodes=2)
        assert BallAverage(unit_square, unit_square.center, 0.05).radius == 0.05

    def test_refuses_ball_leaving_domain(self, unit_square):
        with pytest.raises(RefusalError):
            BallAverage(unit_square, (0.1, 0.5), 0.25)

    @pytest.mark.parametrize("center, radius", [((0.5,), 0.2), ((0.5, 0.5), -0.1), ((0.5, np.nan), 0.2)])
    def test_invalid_parameters(self, unit_square, center, radius):
        with pytest.raises(InvalidInputError):
            BallAverage(unit_square, center, radius)


class TestStrip:
    def test_needs_two_dimensions(self):
        with pytest.raises(InvalidInputError):
            Strip(Domain.unit(1, 10), 4)

    def test_needs_positive_integer(self, unit_square):
        with pytest.raises(InvalidInputError):
            Strip(unit_square, 2.5)

    def test_alpha_lives_on_the_strip(self):
        domain = Domain.unit(2, 31)
        kernel = Strip(domain, 4)
        x2 = domain.coordinates(closed=True)[1]
        assert np.all(kernel.alpha[x2 < 0.25] == 4.0)
        assert np.all(kernel.alpha[x2 >= 0.25] == 0.0)


class TestConcentrationDefect:
    def test_dense_supported_inside(self, unit_square, rng):
        box = SubBox.shrunk(unit_square, unit_square.h[0])
        kernel = random_dense_kernel(unit_square, rng, density=0.2, support=box)
        assert concentration_defect(kernel, box) <= 1e-12 * mass(kernel)

    def test_ball_leaks_the_outer_layer(self):
        domain = Domain.unit(2, 63)
        box = SubBox.shrunk(domain, 0.1)
        kernel = BallAverage(domain, domain.center, 0.1)
        outside = 1.0 - float(np.sum(quadrature(domain).weights[box.node_mask(domain)]))
        assert concentration_defect(kernel, box) == pytest.approx(outside, rel=1e-12)
        assert concentration_defect(kernel, box) == pytest.approx(0.36, abs=4 * domain.h[0])

    def test_strip_concentrates_on_the_boundary(self):
        domain = Domain.unit(2, 63)
        box = SubBox.shrunk(domain, 0.1)
        assert concentration_defect(Strip(domain, 32), box) >= 1.0

    def test_refuses_box_outside(self, unit_square):
        with pytest.raises(RefusalError):
            concentration_defect(Dense.zeros(unit_square), SubBox((-0.1, 0.0), (0.5, 0.5)))


class TestSchedules:
    def test_epsilons_must_decrease(self):
        with pytest.raises(InvalidInputError):
            SequenceSchedule.epsilons([0.1, 0.2])

    def test_integers_must_increase(self):
        with pytest.raises(InvalidInputError):
            SequenceSchedule.integers([8, 4])

    def test_values_must_be_positive(self):
        with pytest.raises(InvalidInputError):
            SequenceSchedule.epsilons([0.1, 0.0])

    def test_direction(self):
        schedule = SequenceSchedule.integers([4, 8, 16])
        assert schedule.direction == ScheduleDirection.INCREASING
        assert len(schedule) == 3
        assert list(schedule) == [4.0, 8.0, 16.0]

    def test_ball_family(self):
        domain = Domain.unit(2, 48)
        family = KernelFamily.ball_average(domain, [0.2, 0.1])
        kernels = list(family)
        assert family.variant == KernelVariant.BALL
        assert [value for value, _ in kernels] == [0.2, 0.1]
        assert all(isinstance(kernel, BallAverage) for _, kernel in kernels)

    def test_strip_family(self, unit_square):
        kernels = [kernel for _, kernel in KernelFamily.strip(unit_square, [2, 4])]
        assert [kernel.k for kernel in kernels] == [2, 4]

    def test_constant_family(self, unit_square):
        kernel = Dense.zeros(unit_square)
        family = KernelFamily.constant(kernel, 3)
        assert [k for _, k in family] == [kernel] * 3


class TestCreateKernel:
    def test_ball_defaults_to_center(self):
        domain = Domain.unit(2, 48)
        kernel = create_kernel(domain, "ball", radius=0.2)
        assert kernel.center == domain.center

    def test_keywords_override_config(self, unit_square):
        kernel = create_kernel(unit_square, KernelVariant.STRIP, KernelConfig(k=2), k=8)
        assert kernel.k == 8

    def test_unknown_variant(self, unit_square):
        with pytest.raises(InvalidInputError):
            create_kernel(unit_square, "gaussian")

    def test_dense_from_csv(self, unit_square, tmp_path, rng):
        path = tmp_path / "kernel.csv"
        save_dense_csv(random_dense_kernel(unit_square, rng), path)
        kernel = create_kernel(unit_square, "dense", path=path)
        assert isinstance(kernel, Dense)


class TestDenseCsv:
    def test_save_and_load(self, unit_square, rng, tmp_path):
        kernel = random_dense_kernel(unit_square, rng, density=0.01)
        path = tmp_path / "kernel.csv"
        save_dense_csv(kernel, path)
        loaded = load_dense_csv(path, unit_square)
        assert abs(loaded.matrix - kernel.matrix).max() == 0.0

    def test_header_is_optional(self, unit_square, tmp_path):
        path = tmp_path / "kernel.csv"
        path.write_text("0,1,2.5\n1,0,2.5\n", encoding="UTF-8")
        kernel = load_dense_csv(path, unit_square)
        assert kernel.matrix[0, 1] == 2.5

    def test_rejects_out_of_range_index(self, unit_square, tmp_path):
        path = tmp_path / "kernel.csv"
        path.write_text("i,j,weight\n0,9999,1.0\n", encoding="UTF-8")
        with pytest.raises(InvalidInputError):
            load_dense_csv(path, unit_square)

    def test_rejects_negative_weight(self, unit_square):
        matrix = sp.csr_matrix(([-1.0], ([0], [1])), shape=(unit_square.size, unit_square.size))
        with pytest.raises(InvalidInputError):
            Dense(unit_square, matrix)
