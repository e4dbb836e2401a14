"""Minimization of the discrete energies under linear loads, and discrete p-capacitary potentials.

p = 2 problems are quadratic and go to matrix-free conjugate gradients on the
energy gradient. Everything else uses Barzilai-Borwein steps safeguarded by a
nonmonotone Armijo backtracking search, with a projection for box constraints.
"""

import logging
import math
import numpy as np
import scipy.sparse.linalg as spla
from collections import deque
from collections.abc import Callable
from dataclasses import dataclass
from gammalab.core.constants import MEDIAN_OFFSET_TOLERANCE
from gammalab.core.exceptions import InvalidInputError, RefusalError
from gammalab.core.settings import get_lab_settings
from gammalab.energy import (
    EnergyBreakdown,
    FunctionalSpec,
    energy_gradient,
    eval_F_limit,
    eval_F_point,
    eval_Fk,
    evaluate,
    point_value,
)
from gammalab.grid import (
    Domain,
    GridFunction,
    check_exponent,
    closed_sample,
    dirichlet_laplacian,
    discrete_gradient_energy,
    discrete_gradient_energy_gradient,
    nearest_node,
    power_abs,
    sample_interior,
    signed_power,
    weighted_mean,
)
from gammalab.kernel import BallAverage, ball_mask
from gammalab.represent import m_p

logger = logging.getLogger(__name__)

Vector = np.ndarray


@dataclass(frozen=True, eq=False)
class LinearLoad:
    """Load density g on the interior nodes, paired as <g, u> = h^d sum g_i u_i."""

    domain: Domain
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=float).reshape(self.domain.shape)
        if not np.all(np.isfinite(values)):
            raise InvalidInputError("Unable to build load | values must be finite")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @classmethod
    def zero(cls, domain: Domain) -> "LinearLoad":
        return cls(domain, np.zeros(domain.shape))

    @classmethod
    def from_callable(cls, domain: Domain, f: Callable) -> "LinearLoad":
        return cls(domain, sample_interior(domain, f))

    @property
    def rhs(self) -> Vector:
        """Coefficients b with <g, u> = b @ u.flat."""
        return self.domain.cell_volume * self.values.ravel()

    def pairing(self, u: GridFunction) -> float:
        return float(self.rhs @ u.flat)

    def is_zero(self) -> bool:
        return not np.any(self.values)


@dataclass(frozen=True)
class SolveReport:
    minimizer: GridFunction
    energy: float
    iterations: int
    gradient_residual: float
    converged: bool
    method: str
    breakdown: EnergyBreakdown | None = None
    offset: float | None = None
    relative_residual: float | None = None
    last_relative_decrease: float | None = None
    offset_gap: float | None = None


@dataclass(frozen=True)
class _DescentResult:
    x: Vector
    value: float
    iterations: int
    stationarity: float
    converged: bool
    last_relative_decrease: float


def _stationarity(x: Vector, g: Vector, project: Callable[[Vector], Vector] | None) -> float:
    if project is None:
        return float(np.max(np.abs(g))) if g.size else 0.0
    return float(np.max(np.abs(x - project(x - g)))) if g.size else 0.0


def _bb_descent(
    value: Callable[[Vector], float],
    gradient: Callable[[Vector], Vector],
    x0: Vector,
    project: Callable[[Vector], Vector] | None = None,
    label: str = "descent",
    accept: Callable[[Vector], bool] | None = None,
) -> _DescentResult:
    """Barzilai-Borwein descent with nonmonotone Armijo backtracking.

    Converged means stationarity <= gradient_tol, a last relative energy change
    <= energy_rtol, and ``accept(x)`` when given. A line search that can no longer
    move x counts as a zero energy change.
    """
    settings = get_lab_settings()
    x = project(x0) if project else np.array(x0, dtype=float)
    f, g = value(x), gradient(x)
    history = deque([f], maxlen=max(1, settings.nonmonotone_memory))
    g_max = float(np.max(np.abs(g))) if g.size else 0.0
    step = 1.0 / g_max if g_max > 0 else 1.0
    last_relative_decrease = 0.0

    def done(stationarity: float) -> bool:
        return (
            stationarity <= settings.gradient_tol
            and last_relative_decrease <= settings.energy_rtol
            and (accept is None or accept(x))
        )

    for iteration in range(settings.max_iterations + 1):
        stationarity = _stationarity(x, g, project)
        if done(stationarity):
            return _DescentResult(x, f, iteration, stationarity, True, last_relative_decrease)
        if iteration == settings.max_iterations:
            break

        reference = max(history)
        alpha = step
        while True:
            trial = x - alpha * g
            if project:
                trial = project(trial)
            direction = trial - x
            f_trial = value(trial)
            if f_trial <= reference + settings.armijo_c * float(g @ direction):
                break
            alpha *= settings.backtrack_factor
            if not np.any(alpha * g):
                break

        if not np.any(direction):
            last_relative_decrease = 0.0
            converged = done(stationarity)
            if not converged:
                logger.warning(
                    f"{label}: line search stalled at iteration {iteration}, stationarity {stationarity:.3e}"
                )
            return _DescentResult(x, f, iteration, stationarity, converged, last_relative_decrease)

        g_trial = gradient(trial)
        s, y = trial - x, g_trial - g
        sy = float(s @ y)
        step = float(s @ s) / sy if sy > 0 else 2.0 * alpha
        step = min(max(step, 1e-20), 1e20)
        last_relative_decrease = abs(f - f_trial) / max(abs(f), 1e-300)
        x, f, g = trial, f_trial, g_trial
        history.append(f)

        if iteration % 200 == 0:
            logger.debug(f"{label}: iteration {iteration} value {f:.12g} stationarity {stationarity:.3e}")

    stationarity = _stationarity(x, g, project)
    logger.warning(f"{label}: no convergence in {settings.max_iterations} iterations, stationarity {stationarity:.3e}")
    return _DescentResult(x, f, settings.max_iterations, stationarity, False, last_relative_decrease)


@dataclass(frozen=True)
class _CGResult:
    x: Vector
    iterations: int
    relative_residual: float
    converged: bool


def _conjugate_gradients(apply: Callable[[Vector], Vector], rhs: Vector, x0: Vector | None, label: str) -> _CGResult:
    settings = get_lab_settings()
    size = rhs.size
    if size == 0 or not np.any(rhs):
        return _CGResult(np.zeros(size), 0, 0.0, True)

    operator = spla.LinearOperator((size, size), matvec=apply, dtype=float)
    iterations = 0

    def count(_):
        nonlocal iterations
        iterations += 1

    x, info = spla.cg(
        operator,
        rhs,
        x0=x0,
        rtol=settings.cg_rtol,
        atol=0.0,
        maxiter=settings.cg_maxiter_factor * size,
        callback=count,
    )
    relative = float(np.linalg.norm(apply(x) - rhs) / np.linalg.norm(rhs))
    converged = info == 0
    if not converged:
        logger.warning(f"{label}: conjugate gradients stopped with info={info}, relative residual {relative:.3e}")
    return _CGResult(x, iterations, relative, converged)


def minimize(spec: FunctionalSpec, load: LinearLoad, warm_start: GridFunction | None = None) -> SolveReport:
    """Minimize evaluate(spec, u).total - <g, u> over zero-trace grid functions."""
    if spec.is_limit:
        return minimize_limit(spec.p, load, warm_start)
    domain = spec.domain
    if load.domain != domain:
        raise InvalidInputError("Unable to minimize | load and functional domains differ")
    b = load.rhs
    x0 = None if warm_start is None else warm_start.flat.copy()

    def as_function(x: Vector) -> GridFunction:
        return GridFunction(domain, x)

    if spec.p == 2.0:
        # For a quadratic energy Q the gradient 2Qx is the operator itself
        result = _conjugate_gradients(lambda x: energy_gradient(spec, as_function(x)).ravel(), b, x0, "minimize")
        u = as_function(result.x)
        breakdown = eval_Fk(spec, u)
        gradient = energy_gradient(spec, u).ravel() - b
        report = SolveReport(
            minimizer=u,
            energy=breakdown.total - load.pairing(u),
            iterations=result.iterations,
            gradient_residual=float(np.max(np.abs(gradient))),
            converged=result.converged,
            method="cg",
            breakdown=breakdown,
            relative_residual=result.relative_residual,
        )
    else:
        descent = _bb_descent(
            value=lambda x: eval_Fk(spec, as_function(x)).total - float(b @ x),
            gradient=lambda x: energy_gradient(spec, as_function(x)).ravel() - b,
            x0=np.zeros(domain.size) if x0 is None else x0,
            label="minimize",
        )
        u = as_function(descent.x)
        breakdown = eval_Fk(spec, u)
        report = SolveReport(
            minimizer=u,
            energy=breakdown.total - load.pairing(u),
            iterations=descent.iterations,
            gradient_residual=descent.stationarity,
            converged=descent.converged,
            method="bb",
            breakdown=breakdown,
            last_relative_decrease=descent.last_relative_decrease,
        )

    logger.info(
        f"minimize p={spec.p:g} {spec.kernel.variant}: energy {report.energy:.12g} "
        f"in {report.iterations} iterations, converged={report.converged}"
    )
    return report


def minimize_limit(p: float, load: LinearLoad, warm_start: GridFunction | None = None) -> SolveReport:
    """Jointly minimize sum w |u - t|^p + gradient energy - <g, u> over (u, t)."""
    p = check_exponent(p)
    domain = load.domain
    b = load.rhs
    weight = domain.cell_volume
    x0 = None if warm_start is None else warm_start.flat.copy()

    def as_function(x: Vector) -> GridFunction:
        return GridFunction(domain, x)

    if p == 2.0:
        laplacian = dirichlet_laplacian(domain)

        # t = mean(u) eliminated: sum w (u - mean)^2 = h^d |u|^2 - (h^d sum u)^2 / |Omega|
        def apply(x: Vector) -> Vector:
            return 2.0 * (weight * x - weight**2 * float(np.sum(x)) / domain.measure + laplacian @ x)

        result = _conjugate_gradients(apply, b, x0, "minimize_limit")
        u = as_function(result.x)
        gradient = apply(result.x) - b
        iterations, converged, method = result.iterations, result.converged, "cg"
        stationarity, relative, last_decrease = float(np.max(np.abs(gradient))), result.relative_residual, None
        offset = weighted_mean(u)
    else:
        _, closed_weights = closed_sample(GridFunction.zeros(domain))
        interior_index = _interior_flat_index(domain)

        def split(z: Vector) -> tuple[Vector, float, Vector]:
            v = np.zeros(closed_weights.size)
            v[interior_index] = z[:-1]
            return z[:-1], float(z[-1]), v

        def value(z: Vector) -> float:
            x, t, v = split(z)
            return (
                float(closed_weights @ power_abs(v - t, p))
                + discrete_gradient_energy(as_function(x), p)
                - float(b @ x)
            )

        def gradient(z: Vector) -> Vector:
            x, t, v = split(z)
            grad_x = (
                p * weight * signed_power(x - t, p)
                + discrete_gradient_energy_gradient(as_function(x), p).ravel()
                - b
            )
            grad_t = -p * float(closed_weights @ signed_power(v - t, p))
            return np.append(grad_x, grad_t)

        def offset_matches(z: Vector) -> bool:
            return abs(z[-1] - m_p(as_function(z[:-1]), p)) <= MEDIAN_OFFSET_TOLERANCE

        start = np.zeros(domain.size) if x0 is None else x0
        z0 = np.append(start, m_p(as_function(start), p))
        descent = _bb_descent(value, gradient, z0, label="minimize_limit", accept=offset_matches)
        u = as_function(descent.x[:-1])
        offset = float(descent.x[-1])
        iterations, converged, method = descent.iterations, descent.converged, "bb-joint"
        stationarity, relative, last_decrease = descent.stationarity, None, descent.last_relative_decrease

    breakdown = eval_F_limit(p, u)
    offset_gap = abs(offset - m_p(u, p))
    if offset_gap > MEDIAN_OFFSET_TOLERANCE:
        logger.warning(f"minimize_limit p={p:g}: offset {offset:.12g} is {offset_gap:.3e} away from m_p(u)")
    report = SolveReport(
        minimizer=u,
        energy=breakdown.total - load.pairing(u),
        iterations=iterations,
        gradient_residual=stationarity,
        converged=converged,
        method=method,
        breakdown=breakdown,
        offset=offset,
        relative_residual=relative,
        last_relative_decrease=last_decrease,
        offset_gap=offset_gap,
    )
    logger.info(f"minimize_limit p={p:g}: energy {report.energy:.12g} in {iterations} iterations")
    return report


def _interior_flat_index(domain: Domain) -> Vector:
    index = np.arange(int(np.prod(domain.closed_shape))).reshape(domain.closed_shape)
    return index[domain.interior].ravel()


def minimize_point_anchored(p: float, load: LinearLoad, x0) -> SolveReport:
    """Minimize sum w |u - u(x0)|^p + gradient energy - <g, u>; its minimum dominates the limit one."""
    p = check_exponent(p)
    domain = load.domain
    b = load.rhs
    node = nearest_node(domain, x0)
    # a boundary anchor pins t = 0
    on_boundary = any(i == 0 or i == count + 1 for i, count in zip(node, domain.n, strict=True))
    anchor = None if on_boundary else int(np.ravel_multi_index(tuple(i - 1 for i in node), domain.shape))
    _, closed_weights = closed_sample(GridFunction.zeros(domain))
    interior_index = _interior_flat_index(domain)
    weight = domain.cell_volume

    def as_function(x: Vector) -> GridFunction:
        return GridFunction(domain, x)

    def value(x: Vector) -> float:
        return eval_F_point(p, as_function(x), x0).total - float(b @ x)

    def gradient(x: Vector) -> Vector:
        t = 0.0 if anchor is None else float(x[anchor])
        grad = p * weight * signed_power(x - t, p) + discrete_gradient_energy_gradient(as_function(x), p).ravel() - b
        if anchor is not None:
            v = np.zeros(closed_weights.size)
            v[interior_index] = x
            grad[anchor] -= p * float(closed_weights @ signed_power(v - t, p))
        return grad

    if p == 2.0:
        result = _conjugate_gradients(lambda x: gradient(x) + b, b, None, "minimize_point_anchored")
        x, iterations, converged, method = result.x, result.iterations, result.converged, "cg"
        stationarity, last_decrease = float(np.max(np.abs(gradient(x)))), None
    else:
        descent = _bb_descent(value, gradient, np.zeros(domain.size), label="minimize_point_anchored")
        x, iterations, converged, method = descent.x, descent.iterations, descent.converged, "bb"
        stationarity, last_decrease = descent.stationarity, descent.last_relative_decrease

    u = as_function(x)
    breakdown = eval_F_point(p, u, x0)
    return SolveReport(
        minimizer=u,
        energy=breakdown.total - load.pairing(u),
        iterations=iterations,
        gradient_residual=stationarity,
        converged=converged,
        method=method,
        breakdown=breakdown,
        offset=point_value(u, x0),
        last_relative_decrease=last_decrease,
    )


def direct_gradient_solve(domain: Domain, load: LinearLoad) -> GridFunction:
    """Sparse direct solution of 2 L u = h^d g, the minimizer of the gradient-only p = 2 energy."""
    laplacian = dirichlet_laplacian(domain)
    return GridFunction(domain, spla.spsolve((2.0 * laplacian).tocsc(), load.rhs))


def radial_capacity(epsilon: float) -> float:
    """2 pi / ln(1/epsilon), the p = 2 capacity of B_epsilon in the unit disk."""
    return 2.0 * math.pi / math.log(1.0 / epsilon)


def _ball_constraint(domain: Domain, epsilon: float, center) -> np.ndarray:
    settings = get_lab_settings()
    nodes_across = math.floor(2.0 * epsilon / max(domain.h)) + 1
    if nodes_across < settings.min_ball_nodes:
        raise RefusalError(
            f"Unable to build capacitary potential | radius {epsilon} spans {nodes_across} nodes, "
            f"need {settings.min_ball_nodes}"
        )
    mask = ball_mask(domain, center, epsilon)
    boundary = mask.copy()
    boundary[domain.interior] = False
    inner = mask[domain.interior]
    if np.any(boundary) or np.all(inner):
        raise RefusalError(f"Unable to build capacitary potential | B({center}, {epsilon}) is not inside the domain")
    return inner.ravel()


def capacitary_potential(domain: Domain, p: float, epsilon: float, center=None) -> SolveReport:
    """Discrete p-capacitary potential of B_epsilon(center): v = 1 on the ball, 0 on the boundary, 0 <= v <= 1.

    The reported energy is the discrete p-capacity.
    """
    p = check_exponent(p)
    if p > domain.dim:
        raise RefusalError(f"Unable to build capacitary potential | capacity decay needs p <= dim, got p={p}")
    center = domain.center if center is None else tuple(center)
    fixed = _ball_constraint(domain, epsilon, center)
    free = ~fixed

    def lift(x: Vector) -> GridFunction:
        values = np.ones(domain.size)
        values[free] = x
        return GridFunction(domain, values)

    laplacian = dirichlet_laplacian(domain).tocsr()
    block = laplacian[free][:, free]
    rhs = -np.asarray(laplacian[free][:, fixed] @ np.ones(int(np.sum(fixed)))).ravel()
    result = _conjugate_gradients(lambda x: block @ x, rhs, None, "capacitary_potential")
    x = np.clip(result.x, 0.0, 1.0)

    if p == 2.0:
        iterations, converged, method = result.iterations, result.converged, "cg"
        stationarity = float(np.max(np.abs(2.0 * (block @ x - rhs)))) if x.size else 0.0
        last_decrease = None
    else:
        descent = _bb_descent(
            value=lambda z: discrete_gradient_energy(lift(z), p),
            gradient=lambda z: discrete_gradient_energy_gradient(lift(z), p).ravel()[free],
            x0=x,
            project=lambda z: np.clip(z, 0.0, 1.0),
            label="capacitary_potential",
        )
        x, iterations, converged, method = descent.x, descent.iterations, descent.converged, "projected-bb"
        stationarity, last_decrease = descent.stationarity, descent.last_relative_decrease

    v = lift(x)
    capacity = discrete_gradient_energy(v, p)
    logger.info(f"capacity p={p:g} eps={epsilon:g}: {capacity:.10g} ({iterations} iterations)")
    return SolveReport(
        minimizer=v,
        energy=capacity,
        iterations=iterations,
        gradient_residual=stationarity,
        converged=converged,
        method=method,
        relative_residual=result.relative_residual if p == 2.0 else None,
        last_relative_decrease=last_decrease,
    )


@dataclass(frozen=True)
class RecoveryStep:
    epsilon: float
    energy: float
    gap: float
    converged: bool


@dataclass(frozen=True)
class RecoveryReport:
    limit_energy: float
    steps: tuple[RecoveryStep, ...]

    @property
    def gaps(self) -> tuple[float, ...]:
        return tuple(step.gap for step in self.steps)


def recovery_sequence(p: float, u: GridFunction, epsilons, center=None) -> RecoveryReport:
    """F_k(u + m_p(u) v_eps) against F(u) with v_eps the capacitary potential of B_eps(center).

    u must vanish on the largest ball.
    """
    p = check_exponent(p)
    domain = u.domain
    center = domain.center if center is None else tuple(center)
    largest = ball_mask(domain, center, max(epsilons))[domain.interior]
    if np.any(u.values[largest] != 0.0):
        raise RefusalError("Unable to build recovery sequence | u does not vanish on the balls")

    limit = eval_F_limit(p, u).total
    t = m_p(u, p)
    steps = []
    for epsilon in epsilons:
        potential = capacitary_potential(domain, p, epsilon, center)
        recovered = u + t * potential.minimizer
        energy = eval_Fk(FunctionalSpec(p, domain, BallAverage(domain, center, epsilon)), recovered).total
        steps.append(RecoveryStep(float(epsilon), energy, abs(energy - limit), potential.converged))
    return RecoveryReport(limit, tuple(steps))


def objective(spec: FunctionalSpec, load: LinearLoad, u: GridFunction) -> float:
    """evaluate(spec, u).total - <g, u>."""
    return evaluate(spec, u).total - load.pairing(u)
