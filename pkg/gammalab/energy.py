"""Evaluation of the nonlocal-plus-gradient energies F_k, the limit energy F and their structural checks.

Double sums run over the closed grid with trapezoid weights (boundary values are 0).
Kernels with a cheap structure take closed forms: the ball average and the strip
both reduce to moment expansions for p = 2, and to sums restricted to the ball
columns or the strip rows otherwise.
"""

import logging
import math
import numpy as np
from collections.abc import Callable
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from gammalab.core.constants import PAIRWISE_TILE, PROPERTY_TOLERANCE, KernelVariant
from gammalab.core.exceptions import InvalidInputError
from gammalab.core.settings import get_lab_settings
from gammalab.grid import (
    Domain,
    GridFunction,
    ScalarMap,
    check_exponent,
    closed_sample,
    discrete_gradient_energy,
    discrete_gradient_energy_gradient,
    forward_differences,
    lipschitz_truncate,
    nearest_node,
    oscillation,
    power_abs,
    signed_power,
)
from gammalab.kernel import BallAverage, Dense, Kernel, Strip
from gammalab.represent import m_p

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class FunctionalSpec:
    """F_k when ``kernel`` is given, the limit energy F otherwise."""

    p: float
    domain: Domain
    kernel: Kernel | None = None

    def __post_init__(self):
        object.__setattr__(self, "p", check_exponent(self.p))
        if self.kernel is not None and self.kernel.domain != self.domain:
            raise InvalidInputError("Unable to build functional | kernel and functional domains differ")

    @classmethod
    def gradient_only(cls, p: float, domain: Domain) -> "FunctionalSpec":
        """F_k with a vanishing kernel, i.e. the plain p-Dirichlet energy."""
        return cls(p, domain, Dense.zeros(domain))

    @property
    def is_limit(self) -> bool:
        return self.kernel is None


@dataclass(frozen=True)
class EnergyBreakdown:
    nonlocal_term: float
    gradient_term: float

    @property
    def total(self) -> float:
        return self.nonlocal_term + self.gradient_term


@dataclass(frozen=True)
class PropertyCheck:
    holds: bool
    slack: float


def _tiled(count: int, width: int, body: Callable[[slice], object]) -> list:
    """Apply ``body`` to consecutive row blocks; results keep block order."""
    rows = max(1, PAIRWISE_TILE // max(width, 1))
    tiles = [slice(start, min(start + rows, count)) for start in range(0, count, rows)]
    workers = get_lab_settings().workers
    if workers > 1 and len(tiles) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(body, tiles))
    return [body(tile) for tile in tiles]


def _ball_energy(kernel: BallAverage, v: np.ndarray, w: np.ndarray, p: float) -> float:
    vb, wb = v[kernel.ball_nodes], kernel.average_weights
    if p == 2.0:
        mean = float(wb @ vb)
        return float(w @ (v - mean) ** 2) + float(np.sum(w)) * float(wb @ (vb - mean) ** 2)

    def tile(rows: slice) -> float:
        return float(w[rows] @ (power_abs(v[rows, None] - vb[None, :], p) @ wb))

    return math.fsum(_tiled(v.size, vb.size, tile))


def _ball_gradient(kernel: BallAverage, v: np.ndarray, w: np.ndarray, p: float) -> np.ndarray:
    nodes, wb = kernel.ball_nodes, kernel.average_weights
    vb = v[nodes]
    if p == 2.0:
        grad = 2.0 * w * (v - float(wb @ vb))
        grad[nodes] += 2.0 * wb * (float(np.sum(w)) * vb - float(w @ v))
        return grad

    def tile(rows: slice):
        phi = signed_power(v[rows, None] - vb[None, :], p)
        return rows, p * w[rows] * (phi @ wb), -p * wb * (w[rows] @ phi)

    grad = np.zeros_like(v)
    for rows, own, cross in _tiled(v.size, vb.size, tile):
        grad[rows] += own
        grad[nodes] += cross
    return grad


def _strip_moment_energy(kernel: Strip, v: np.ndarray, w: np.ndarray) -> float:
    wa = w * kernel.alpha.ravel()
    mean = float(w @ v) / float(np.sum(w))
    centred = (v - mean) ** 2
    return 2.0 * float(np.sum(w)) * float(wa @ centred) + 2.0 * float(np.sum(wa)) * float(w @ centred)


def _strip_pairwise_energy(kernel: Strip, v: np.ndarray, w: np.ndarray, p: float) -> float:
    rows_idx = kernel.strip_rows
    wa = w * kernel.alpha.ravel()

    def tile(sel: slice) -> float:
        idx = rows_idx[sel]
        return float(wa[idx] @ (power_abs(v[idx, None] - v[None, :], p) @ w))

    return 2.0 * math.fsum(_tiled(rows_idx.size, v.size, tile))


def _strip_energy(kernel: Strip, v: np.ndarray, w: np.ndarray, p: float) -> float:
    if p == 2.0:
        return _strip_moment_energy(kernel, v, w)
    return _strip_pairwise_energy(kernel, v, w, p)


def _strip_gradient(kernel: Strip, v: np.ndarray, w: np.ndarray, p: float) -> np.ndarray:
    alpha = kernel.alpha.ravel()
    wa = w * alpha
    if p == 2.0:
        total, strip_weight = float(np.sum(w)), float(np.sum(wa))
        first, strip_first = float(w @ v), float(wa @ v)
        return 4.0 * w * ((total * alpha + strip_weight) * v - alpha * first - strip_first)

    rows_idx = kernel.strip_rows

    def tile(sel: slice):
        idx = rows_idx[sel]
        phi = signed_power(v[idx, None] - v[None, :], p)
        return idx, 2.0 * p * wa[idx] * (phi @ w), -2.0 * p * w * (wa[idx] @ phi)

    grad = np.zeros_like(v)
    for idx, own, cross in _tiled(rows_idx.size, v.size, tile):
        grad[idx] += own
        grad += cross
    return grad


def _dense_pairs(kernel: Dense, u: GridFunction) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    coo = kernel.matrix.tocoo()
    x = u.flat
    return coo.row, coo.col, coo.data, x[coo.row] - x[coo.col]


def _dense_energy(kernel: Dense, u: GridFunction, p: float) -> float:
    _, _, a, diff = _dense_pairs(kernel, u)
    return kernel.pair_weight * math.fsum(a * power_abs(diff, p))


def _dense_gradient(kernel: Dense, u: GridFunction, p: float) -> np.ndarray:
    rows, cols, a, diff = _dense_pairs(kernel, u)
    c = p * kernel.pair_weight * a * signed_power(diff, p)
    size = u.domain.size
    grad = np.bincount(rows, weights=c, minlength=size) - np.bincount(cols, weights=c, minlength=size)
    return grad.reshape(u.domain.shape)


def _closed_energy(impl):
    def energy(kernel: Kernel, u: GridFunction, p: float) -> float:
        v, w = closed_sample(u)
        return impl(kernel, v, w, p)

    return energy


def _closed_gradient(impl):
    def gradient(kernel: Kernel, u: GridFunction, p: float) -> np.ndarray:
        v, w = closed_sample(u)
        return impl(kernel, v, w, p).reshape(u.domain.closed_shape)[u.domain.interior]

    return gradient


# Kernel variants mapped to their (energy, gradient) evaluators
_NONLOCAL_IMPL = {
    KernelVariant.BALL: (_closed_energy(_ball_energy), _closed_gradient(_ball_gradient)),
    KernelVariant.STRIP: (_closed_energy(_strip_energy), _closed_gradient(_strip_gradient)),
    KernelVariant.DENSE: (_dense_energy, _dense_gradient),
}


def _check_domain(domain: Domain, u: GridFunction) -> None:
    if u.domain != domain:
        raise InvalidInputError("Unable to evaluate energy | grid function lives on another domain")


def nonlocal_energy(kernel: Kernel, u: GridFunction, p: float) -> float:
    """sum_ij |u_i - u_j|^p a(x_i, x_j) w_i w_j."""
    p = check_exponent(p)
    _check_domain(kernel.domain, u)
    return _NONLOCAL_IMPL[kernel.variant][0](kernel, u, p)


def nonlocal_gradient(kernel: Kernel, u: GridFunction, p: float) -> np.ndarray:
    p = check_exponent(p)
    _check_domain(kernel.domain, u)
    return _NONLOCAL_IMPL[kernel.variant][1](kernel, u, p)


def eval_Fk(spec: FunctionalSpec, u: GridFunction) -> EnergyBreakdown:
    if spec.kernel is None:
        raise InvalidInputError("Unable to evaluate F_k | functional has no kernel")
    _check_domain(spec.domain, u)
    return EnergyBreakdown(nonlocal_energy(spec.kernel, u, spec.p), discrete_gradient_energy(u, spec.p))


def _anchored_term(u: GridFunction, p: float, t: float) -> float:
    v, w = closed_sample(u)
    return float(w @ power_abs(v - t, p))


def eval_F_limit(p: float, u: GridFunction) -> EnergyBreakdown:
    """sum w |u - m_p(u)|^p plus the gradient energy."""
    p = check_exponent(p)
    return EnergyBreakdown(_anchored_term(u, p, m_p(u, p)), discrete_gradient_energy(u, p))


def eval_F_point(p: float, u: GridFunction, x0) -> EnergyBreakdown:
    """sum w |u - u(x0)|^p plus the gradient energy, u(x0) taken at the nearest node."""
    p = check_exponent(p)
    return EnergyBreakdown(_anchored_term(u, p, point_value(u, x0)), discrete_gradient_energy(u, p))


def point_value(u: GridFunction, x0) -> float:
    return float(u.closed_values()[nearest_node(u.domain, x0)])


def evaluate(spec: FunctionalSpec, u: GridFunction) -> EnergyBreakdown:
    return eval_F_limit(spec.p, u) if spec.is_limit else eval_Fk(spec, u)


def energy_gradient(spec: FunctionalSpec, u: GridFunction) -> np.ndarray:
    """Derivative of ``evaluate(spec, u).total`` with respect to the interior values."""
    _check_domain(spec.domain, u)
    grad = discrete_gradient_energy_gradient(u, spec.p)
    if spec.is_limit:
        # m_p is stationary for t, so only the explicit dependence on u remains
        t = m_p(u, spec.p)
        return grad + spec.p * u.domain.cell_volume * signed_power(u.values - t, spec.p)
    return grad + nonlocal_gradient(spec.kernel, u, spec.p)


def _within(slack: float, scale: float) -> bool:
    return slack >= -PROPERTY_TOLERANCE * max(1.0, abs(scale))


def check_oscillation_bound(spec: FunctionalSpec, u: GridFunction, bound: float | None = None) -> PropertyCheck:
    """total <= M osc(u)^p + gradient energy; slack is the difference.

    For p != 2 the power-p form is a surrogate of the quadratic bound.
    """
    kernel_mass = spec.domain.measure if spec.is_limit else spec.kernel.mass()
    bound = kernel_mass if bound is None else float(bound)
    if bound < kernel_mass * (1.0 - 1e-12):
        raise InvalidInputError(f"Unable to check oscillation bound | M={bound} below kernel mass {kernel_mass}")
    breakdown = evaluate(spec, u)
    slack = bound * oscillation(u) ** spec.p + breakdown.gradient_term - breakdown.total
    return PropertyCheck(_within(slack, breakdown.total), slack)


def check_truncation_monotone(spec: FunctionalSpec, u: GridFunction, psi: ScalarMap) -> PropertyCheck:
    """evaluate(psi(u)) <= evaluate(u); slack is the energy decrease."""
    before = evaluate(spec, u).total
    after = evaluate(spec, lipschitz_truncate(u, psi)).total
    slack = before - after
    return PropertyCheck(_within(slack, before), slack)


def parallelogram_defect(spec: FunctionalSpec, u: GridFunction, v: GridFunction) -> float:
    """F(u+v) + F(u-v) - 2F(u) - 2F(v); vanishes for every pair exactly when F is quadratic."""

    def energy(x: GridFunction) -> float:
        return evaluate(spec, x).total

    return energy(u + v) + energy(u - v) - 2.0 * energy(u) - 2.0 * energy(v)


def convexity_defect(spec: FunctionalSpec, u: GridFunction, v: GridFunction, lam: float) -> float:
    """F(lam u + (1-lam) v) - lam F(u) - (1-lam) F(v), nonpositive for a convex F."""
    mixed = lam * u + (1.0 - lam) * v
    return evaluate(spec, mixed).total - lam * evaluate(spec, u).total - (1.0 - lam) * evaluate(spec, v).total


def finite_difference_check(
    spec: FunctionalSpec,
    u: GridFunction,
    directions: int = 4,
    step: float = 1e-6,
    rng: np.random.Generator | None = None,
) -> float:
    """Largest relative gap between the analytic directional derivative and a central difference."""
    rng = np.random.default_rng(0) if rng is None else rng
    grad = energy_gradient(spec, u)
    worst = 0.0
    for _ in range(directions):
        d = GridFunction(u.domain, rng.uniform(-1.0, 1.0, size=u.domain.shape))
        analytic = float(np.sum(grad * d.values))
        numeric = (evaluate(spec, u + step * d).total - evaluate(spec, u - step * d).total) / (2.0 * step)
        worst = max(worst, abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-12))
    return worst


def strip_moment_identity(kernel: Strip, u: GridFunction) -> float:
    """Relative gap between the moment expansion of the p = 2 strip energy and its direct double sum."""
    v, w = closed_sample(u)
    alpha = kernel.alpha.ravel()
    wa = w * alpha
    moments = (
        2.0 * float(np.sum(w)) * float(wa @ v**2)
        + 2.0 * float(np.sum(wa)) * float(w @ v**2)
        - 4.0 * float(wa @ v) * float(w @ v)
    )
    direct = _strip_pairwise_energy(kernel, v, w, 2.0)
    return abs(moments - direct) / max(1.0, abs(direct))


def variance_identity(u: GridFunction) -> float:
    """Relative gap between sum w (u - mean)^2 and sum_ij w_i w_j (u_i - u_j)^2 / (2 |Omega|)."""
    v, w = closed_sample(u)
    total = float(np.sum(w))
    mean = float(w @ v) / total
    centred = float(w @ (v - mean) ** 2)

    def tile(rows: slice) -> float:
        return float(w[rows] @ ((v[rows, None] - v[None, :]) ** 2 @ w))

    pairwise = math.fsum(_tiled(v.size, v.size, tile)) / (2.0 * total)
    return abs(centred - pairwise) / max(centred, pairwise, 1e-300)


@dataclass(frozen=True)
class StripPoincare:
    strip_term: float
    strip_gradient: float
    constant: float


def strip_poincare_constant(kernel: Strip, u: GridFunction) -> StripPoincare:
    """Empirical C with k sum_{R_k} w u^2 = C (1/k) (gradient energy on the cells of R_k)."""
    domain = u.domain
    v, w = closed_sample(u)
    alpha = kernel.alpha.ravel()
    strip_term = float(w[alpha > 0] @ v[alpha > 0] ** 2)

    diffs = [d @ u.flat for d in forward_differences(domain)]
    cell_energy = domain.cell_volume * sum(g * g for g in diffs)
    lower_x2 = domain.origin[1] + domain.h[1] * np.arange(domain.n[1] + 1)
    in_strip = np.broadcast_to(lower_x2 - domain.origin[1] < 1.0 / kernel.k, (domain.n[0] + 1, domain.n[1] + 1))
    strip_gradient = float(np.sum(cell_energy[in_strip.ravel()]))

    k = kernel.k
    constant = k * strip_term / (strip_gradient / k) if strip_gradient > 0 else 0.0
    return StripPoincare(k * strip_term, strip_gradient / k, constant)


@dataclass(frozen=True)
class JensenChain:
    nonlocal_term: float
    ball_term: float
    median_term: float

    @property
    def holds(self) -> bool:
        scale = max(1.0, self.nonlocal_term)
        tol = PROPERTY_TOLERANCE * scale
        return self.nonlocal_term >= self.ball_term - tol and self.ball_term >= self.median_term - tol


def jensen_chain(kernel: BallAverage, u: GridFunction, p: float) -> JensenChain:
    """nonlocal(u) >= sum w |u - ball average|^p >= sum w |u - m_p(u)|^p."""
    p = check_exponent(p)
    v, _ = closed_sample(u)
    ball_average = float(kernel.average_weights @ v[kernel.ball_nodes])
    return JensenChain(
        nonlocal_energy(kernel, u, p),
        _anchored_term(u, p, ball_average),
        _anchored_term(u, p, m_p(u, p)),
    )
