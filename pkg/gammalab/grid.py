"""Discrete domains, grid functions and the differential primitives shared by every energy.

A :class:`Domain` is an axis-aligned box carrying ``n`` interior nodes per axis.
Functions live on the interior nodes; the boundary nodes of the closed grid hold
the value 0, which is how membership in W^{1,p}_0 is encoded. Integrals use the
tensor trapezoid rule on the closed grid, so the weights add up to the measure
of the box exactly and interior nodes weigh ``h**dim``.
"""

import functools
import logging
import math
import numpy as np
import scipy.sparse as sp
from collections.abc import Callable
from dataclasses import dataclass
from functools import cached_property
from gammalab.core.constants import TRACE_TOLERANCE
from gammalab.core.exceptions import ContractViolationError, InvalidInputError, ZeroTraceError
from gammalab.core.operator_cache import get_cached_operator

logger = logging.getLogger(__name__)

ScalarMap = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class Domain:
    """Box ``prod(origin_i, origin_i + lengths_i)`` with ``n_i`` interior nodes per axis."""

    lengths: tuple[float, ...]
    n: tuple[int, ...]
    origin: tuple[float, ...] | None = None

    def __post_init__(self):
        lengths = tuple(float(x) for x in np.atleast_1d(self.lengths))
        n = tuple(int(x) for x in np.atleast_1d(self.n))
        if len(n) == 1 and len(lengths) > 1:
            n = n * len(lengths)
        origin = (0.0,) * len(lengths) if self.origin is None else tuple(float(x) for x in np.atleast_1d(self.origin))

        if len(lengths) not in (1, 2, 3):
            raise InvalidInputError(f"Unable to build domain | dimension must be 1, 2 or 3, got {len(lengths)}")
        if len(n) != len(lengths) or len(origin) != len(lengths):
            raise InvalidInputError(f"Unable to build domain | lengths={lengths} n={n} origin={origin}")
        if not all(math.isfinite(x) and x > 0 for x in lengths):
            raise InvalidInputError(f"Unable to build domain | lengths must be positive, got {lengths}")
        if not all(x >= 1 for x in n):
            raise InvalidInputError(f"Unable to build domain | at least one interior node per axis, got {n}")
        if not all(math.isfinite(x) for x in origin):
            raise InvalidInputError(f"Unable to build domain | origin must be finite, got {origin}")

        object.__setattr__(self, "lengths", lengths)
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "origin", origin)

    @classmethod
    def unit(cls, dim: int, n: int) -> "Domain":
        """Unit cube (0, 1)^dim with n interior nodes per axis."""
        return cls(lengths=(1.0,) * dim, n=(n,) * dim)

    @classmethod
    def centered(cls, dim: int, half_width: float, n: int) -> "Domain":
        """Cube (-half_width, half_width)^dim."""
        return cls(lengths=(2.0 * half_width,) * dim, n=(n,) * dim, origin=(-half_width,) * dim)

    @property
    def dim(self) -> int:
        return len(self.lengths)

    @property
    def h(self) -> tuple[float, ...]:
        return tuple(length / (count + 1) for length, count in zip(self.lengths, self.n, strict=True))

    @property
    def shape(self) -> tuple[int, ...]:
        return self.n

    @property
    def closed_shape(self) -> tuple[int, ...]:
        return tuple(count + 2 for count in self.n)

    @property
    def size(self) -> int:
        return math.prod(self.n)

    @property
    def measure(self) -> float:
        return math.prod(self.lengths)

    @property
    def cell_volume(self) -> float:
        return math.prod(self.h)

    @property
    def upper(self) -> tuple[float, ...]:
        return tuple(o + length for o, length in zip(self.origin, self.lengths, strict=True))

    @property
    def center(self) -> tuple[float, ...]:
        return tuple(o + 0.5 * length for o, length in zip(self.origin, self.lengths, strict=True))

    @property
    def interior(self) -> tuple[slice, ...]:
        """Index of the interior block inside a closed-grid array."""
        return (slice(1, -1),) * self.dim

    def axis_nodes(self, axis: int, closed: bool = False) -> np.ndarray:
        idx = np.arange(self.n[axis] + 2) if closed else np.arange(1, self.n[axis] + 1)
        return self.origin[axis] + self.h[axis] * idx

    def coordinates(self, closed: bool = False) -> tuple[np.ndarray, ...]:
        """Node coordinates, one array per axis, in ``ij`` indexing."""
        axes = [self.axis_nodes(axis, closed) for axis in range(self.dim)]
        return tuple(np.meshgrid(*axes, indexing="ij"))

    def contains(self, point) -> bool:
        point = np.atleast_1d(np.asarray(point, dtype=float))
        if point.shape != (self.dim,):
            return False
        return bool(np.all(point > np.asarray(self.origin)) and np.all(point < np.asarray(self.upper)))


@dataclass(frozen=True)
class Quadrature:
    """Tensor trapezoid weights on the closed grid."""

    domain: Domain

    @cached_property
    def weights(self) -> np.ndarray:
        factors = []
        for count, step in zip(self.domain.n, self.domain.h, strict=True):
            w = np.full(count + 2, step)
            w[0] = w[-1] = 0.5 * step
            factors.append(w)
        weights = functools.reduce(np.multiply.outer, factors)
        weights.setflags(write=False)
        return weights

    @property
    def node_weight(self) -> float:
        return self.domain.cell_volume

    @property
    def total(self) -> float:
        return float(np.sum(self.weights))


@functools.lru_cache(maxsize=64)
def quadrature(domain: Domain) -> Quadrature:
    return Quadrature(domain)


@dataclass(frozen=True, eq=False)
class GridFunction:
    """Real values on the interior nodes of a domain, zero on its boundary."""

    domain: Domain
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.size != self.domain.size:
            raise InvalidInputError(
                f"Unable to build grid function | {values.size} values for {self.domain.size} interior nodes"
            )
        values = values.reshape(self.domain.shape)
        if not np.all(np.isfinite(values)):
            raise InvalidInputError("Unable to build grid function | values must be finite")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @classmethod
    def zeros(cls, domain: Domain) -> "GridFunction":
        return cls(domain, np.zeros(domain.shape))

    @classmethod
    def from_callable(cls, domain: Domain, f: Callable, trace_tol: float = TRACE_TOLERANCE) -> "GridFunction":
        """Sample ``f(x_1, ..., x_dim)`` on the grid; refuse functions that do not vanish on the boundary."""
        closed = _sample(domain, f, closed=True)
        boundary = closed.copy()
        boundary[domain.interior] = 0.0
        scale = max(1.0, float(np.max(np.abs(closed))))
        if float(np.max(np.abs(boundary))) > trace_tol * scale:
            raise ZeroTraceError(
                f"Unable to sample function | nonzero boundary value {float(np.max(np.abs(boundary))):.3e}"
            )
        return cls(domain, closed[domain.interior])

    @classmethod
    def from_closed(cls, domain: Domain, closed: np.ndarray, trace_tol: float = TRACE_TOLERANCE) -> "GridFunction":
        closed = np.asarray(closed, dtype=float).reshape(domain.closed_shape)
        boundary = closed.copy()
        boundary[domain.interior] = 0.0
        if float(np.max(np.abs(boundary))) > trace_tol:
            raise ZeroTraceError("Unable to build grid function | closed values do not vanish on the boundary")
        return cls(domain, closed[domain.interior])

    @property
    def flat(self) -> np.ndarray:
        return self.values.ravel()

    def closed_values(self) -> np.ndarray:
        return np.pad(self.values, 1)

    def max_abs(self) -> float:
        return float(np.max(np.abs(self.values)))

    def map(self, fn: ScalarMap) -> "GridFunction":
        return GridFunction(self.domain, np.asarray(fn(self.values), dtype=float))

    def _same_domain(self, other: "GridFunction") -> None:
        if other.domain != self.domain:
            raise InvalidInputError("Unable to combine grid functions | domains differ")

    def __add__(self, other: "GridFunction") -> "GridFunction":
        self._same_domain(other)
        return GridFunction(self.domain, self.values + other.values)

    def __sub__(self, other: "GridFunction") -> "GridFunction":
        self._same_domain(other)
        return GridFunction(self.domain, self.values - other.values)

    def __mul__(self, scalar: float) -> "GridFunction":
        return GridFunction(self.domain, float(scalar) * self.values)

    __rmul__ = __mul__

    def __neg__(self) -> "GridFunction":
        return GridFunction(self.domain, -self.values)


def _sample(domain: Domain, f: Callable, closed: bool) -> np.ndarray:
    coords = domain.coordinates(closed=closed)
    target = domain.closed_shape if closed else domain.shape
    values = np.broadcast_to(np.asarray(f(*coords), dtype=float), target).copy()
    if not np.all(np.isfinite(values)):
        raise InvalidInputError("Unable to sample function | non-finite values")
    return values


def sample_interior(domain: Domain, f: Callable) -> np.ndarray:
    """Sample f on the interior nodes without any trace condition (e.g. load densities)."""
    return _sample(domain, f, closed=False)


def power_abs(x: np.ndarray, p: float) -> np.ndarray:
    """|x|**p, by repeated multiplication for integer p and exp(p log|x|) otherwise."""
    a = np.abs(np.asarray(x, dtype=float))
    if float(p).is_integer():
        return a ** int(p)
    out = np.zeros_like(a)
    positive = a > 0
    out[positive] = np.exp(p * np.log(a[positive]))
    return out


def signed_power(x: np.ndarray, p: float) -> np.ndarray:
    """|x|**(p-2) * x, the derivative of |x|**p divided by p."""
    x = np.asarray(x, dtype=float)
    return np.sign(x) * power_abs(x, p - 1.0)


def check_exponent(p: float) -> float:
    p = float(p)
    if not math.isfinite(p) or p <= 1.0:
        raise InvalidInputError(f"Unable to use exponent | p must be a finite real > 1, got {p}")
    return p


def _build_forward_differences(domain: Domain) -> tuple[sp.csr_matrix, ...]:
    operators = []
    for axis in range(domain.dim):
        factors = []
        for j, count in enumerate(domain.n):
            select = sp.eye(count + 1, count, k=-1, format="csr")
            if j == axis:
                factors.append((sp.eye(count + 1, count, k=0, format="csr") - select) / domain.h[axis])
            else:
                factors.append(select)
        operators.append(functools.reduce(sp.kron, factors).tocsr())
    return tuple(operators)


def forward_differences(domain: Domain) -> tuple[sp.csr_matrix, ...]:
    """One sparse operator per axis mapping interior values onto per-cell forward differences.

    Cells are indexed by their lower corner on the closed grid, ``(n+1)**dim`` of them;
    boundary nodes enter as ghost zeros.
    """
    return get_cached_operator(domain, "forward-differences", lambda: _build_forward_differences(domain))


def dirichlet_laplacian(domain: Domain) -> sp.csr_matrix:
    """SPD matrix L with ``u @ L @ u == discrete_gradient_energy(u, 2)``."""

    def build() -> sp.csr_matrix:
        ops = forward_differences(domain)
        return (domain.cell_volume * functools.reduce(lambda a, b: a + b, (d.T @ d for d in ops))).tocsr()

    return get_cached_operator(domain, "dirichlet-laplacian", build)


def _squared_gradient(u: GridFunction) -> tuple[list[np.ndarray], np.ndarray]:
    x = u.flat
    diffs = [d @ x for d in forward_differences(u.domain)]
    return diffs, functools.reduce(np.add, (g * g for g in diffs))


def discrete_gradient_energy(u: GridFunction, p: float) -> float:
    """Sum over cells of ``h**dim * |grad_h u|**p`` with the Euclidean norm of the difference vector."""
    p = check_exponent(p)
    _, sq = _squared_gradient(u)
    cell_terms = sq if p == 2.0 else power_abs(np.sqrt(sq), p)
    return u.domain.cell_volume * float(np.sum(cell_terms))


def discrete_gradient_energy_gradient(u: GridFunction, p: float) -> np.ndarray:
    """Derivative of :func:`discrete_gradient_energy` with respect to the interior values."""
    p = check_exponent(p)
    diffs, sq = _squared_gradient(u)
    if p == 2.0:
        factor = np.full_like(sq, 2.0 * u.domain.cell_volume)
    else:
        factor = np.zeros_like(sq)
        positive = sq > 0
        factor[positive] = p * u.domain.cell_volume * np.exp(0.5 * (p - 2.0) * np.log(sq[positive]))
    grad = functools.reduce(np.add, (d.T @ (factor * g) for d, g in zip(forward_differences(u.domain), diffs)))
    return np.asarray(grad).reshape(u.domain.shape)


def weighted_integral(u: GridFunction) -> float:
    return u.domain.cell_volume * float(np.sum(u.values))


def weighted_mean(u: GridFunction) -> float:
    return weighted_integral(u) / u.domain.measure


def closed_sample(u: GridFunction) -> tuple[np.ndarray, np.ndarray]:
    """(values, weights) over the closed grid, the weighted sample behind every single integral."""
    return u.closed_values().ravel(), quadrature(u.domain).weights.ravel()


def oscillation(u: GridFunction) -> float:
    """max - min of the values together with the boundary value 0."""
    return max(float(np.max(u.values)), 0.0) - min(float(np.min(u.values)), 0.0)


def _check_contraction(psi: ScalarMap, probes: np.ndarray) -> None:
    psi0 = float(np.asarray(psi(np.zeros(1)), dtype=float).ravel()[0])
    if psi0 != 0.0:
        raise ContractViolationError(f"Unable to truncate | Psi(0) = {psi0!r}, expected 0")

    points = np.unique(np.concatenate([[0.0], probes]))
    if points.size < 2:
        return
    images = np.asarray(psi(points), dtype=float)
    lipschitz = np.abs(np.diff(images)) / np.diff(points)
    if float(np.max(lipschitz)) > 1.0 + 1e-12:
        raise ContractViolationError(f"Unable to truncate | Psi has slope {float(np.max(lipschitz)):.6g} > 1")


def lipschitz_truncate(u: GridFunction, psi: ScalarMap, probes: int = 64) -> GridFunction:
    """Node-wise ``psi(u)`` for a 1-Lipschitz psi with psi(0) = 0.

    The contract is spot-checked on up to ``probes`` sorted sample values of u.
    """
    flat = np.sort(u.flat)
    idx = np.unique(np.linspace(0, flat.size - 1, num=min(probes, flat.size)).astype(int))
    _check_contraction(psi, flat[idx])

    mapped = np.asarray(psi(u.values), dtype=float)
    if mapped.shape != u.values.shape:
        raise ContractViolationError("Unable to truncate | Psi must act element-wise on arrays")
    return GridFunction(u.domain, mapped)


def clamp(m: float) -> ScalarMap:
    """The truncation ``(m ^ t) v (-m)``."""
    if m < 0:
        raise InvalidInputError(f"Unable to build clamp | m must be nonnegative, got {m}")
    return lambda t: np.clip(t, -m, m)


def piecewise_contraction(knots, slopes) -> ScalarMap:
    """Piecewise-affine map through 0 with the given slopes (each in [-1, 1]).

    ``knots`` are sorted breakpoints; ``slopes`` has one entry more than ``knots``,
    the outer two being used for the extrapolation on both sides.
    """
    knots = np.asarray(knots, dtype=float)
    slopes = np.asarray(slopes, dtype=float)
    if slopes.size != knots.size + 1 or np.any(np.diff(knots) <= 0):
        raise InvalidInputError("Unable to build contraction | need sorted knots and len(slopes) == len(knots) + 1")
    if np.any(np.abs(slopes) > 1.0):
        raise ContractViolationError("Unable to build contraction | slopes must lie in [-1, 1]")

    # Integrate the slopes from 0 so that the map fixes the origin
    def integral(t: np.ndarray) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        edges = np.concatenate([[-np.inf], knots, [np.inf]])
        total = np.zeros_like(t)
        for lo, hi, slope in zip(edges[:-1], edges[1:], slopes, strict=True):
            upper = np.clip(t, lo, hi)
            lower = np.clip(0.0, lo, hi)
            total += slope * (upper - lower)
        return total

    return integral


def random_contraction(rng: np.random.Generator, scale: float = 1.0, pieces: int = 4) -> ScalarMap:
    knots = np.sort(rng.uniform(-scale, scale, size=pieces))
    return piecewise_contraction(knots, rng.uniform(-1.0, 1.0, size=pieces + 1))


def random_grid_function(domain: Domain, rng: np.random.Generator, scale: float = 1.0) -> GridFunction:
    return GridFunction(domain, rng.uniform(-scale, scale, size=domain.shape))


def nearest_node(domain: Domain, x0) -> tuple[int, ...]:
    """Closed-grid index of the node nearest to x0 (clamped to the box)."""
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    if x0.shape != (domain.dim,):
        raise InvalidInputError(f"Unable to locate point | {x0} in dimension {domain.dim}")
    return tuple(
        int(np.clip(np.rint((x - o) / step), 0, count + 1))
        for x, o, step, count in zip(x0, domain.origin, domain.h, domain.n, strict=True)
    )
