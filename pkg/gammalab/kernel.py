"""Nonlocal weights a(x, y) >= 0 on a domain, their mass and their concentration defect."""

import csv
import dataclasses
import logging
import math
import numpy as np
import scipy.sparse as sp
from collections.abc import Callable, Iterator
from dataclasses import dataclass
from functools import cached_property
from gammalab.core.constants import KernelVariant, ScheduleDirection
from gammalab.core.exceptions import InvalidInputError, RefusalError
from gammalab.core.settings import get_lab_settings
from gammalab.grid import Domain, quadrature
from pathlib import Path

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SubBox:
    """Compact box prod[lower_i, upper_i]."""

    lower: tuple[float, ...]
    upper: tuple[float, ...]

    def __post_init__(self):
        lower = tuple(float(x) for x in np.atleast_1d(self.lower))
        upper = tuple(float(x) for x in np.atleast_1d(self.upper))
        if len(lower) != len(upper) or any(lo > hi for lo, hi in zip(lower, upper, strict=True)):
            raise InvalidInputError(f"Unable to build sub-box | lower={lower} upper={upper}")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @classmethod
    def shrunk(cls, domain: Domain, margin: float) -> "SubBox":
        """Domain with ``margin`` removed on every side."""
        return cls(
            tuple(o + margin for o in domain.origin),
            tuple(u - margin for u in domain.upper),
        )

    def inside(self, domain: Domain) -> bool:
        return (
            len(self.lower) == domain.dim
            and all(lo >= o for lo, o in zip(self.lower, domain.origin, strict=True))
            and all(hi <= u for hi, u in zip(self.upper, domain.upper, strict=True))
        )

    def node_mask(self, domain: Domain, closed: bool = True) -> np.ndarray:
        coords = domain.coordinates(closed=closed)
        mask = np.ones(coords[0].shape, dtype=bool)
        for x, lo, hi in zip(coords, self.lower, self.upper, strict=True):
            mask &= (x >= lo) & (x <= hi)
        return mask


def ball_mask(domain: Domain, center, radius: float) -> np.ndarray:
    """Closed-grid nodes whose center lies in the closed ball B_radius(center)."""
    center = np.asarray(center, dtype=float)
    coords = domain.coordinates(closed=True)
    dist2 = sum((x - c) ** 2 for x, c in zip(coords, center, strict=True))
    return dist2 <= radius * radius


def ball_measure(domain: Domain, center, radius: float) -> float:
    """|B| as the quadrature weight of the ball nodes."""
    return float(np.sum(quadrature(domain).weights[ball_mask(domain, center, radius)]))


@dataclass(frozen=True)
class BallAverage:
    """a(x, y) = 1/|B| for y in B_radius(center), 0 otherwise."""

    domain: Domain
    center: tuple[float, ...]
    radius: float

    def __post_init__(self):
        center = tuple(float(x) for x in np.atleast_1d(self.center))
        object.__setattr__(self, "center", center)
        if len(center) != self.domain.dim or not all(math.isfinite(c) for c in center):
            raise InvalidInputError(f"Unable to build ball kernel | center {center} in dimension {self.domain.dim}")
        if not (math.isfinite(self.radius) and self.radius > 0):
            raise InvalidInputError(f"Unable to build ball kernel | radius must be positive, got {self.radius}")

        nodes_across = math.floor(2.0 * self.radius / max(self.domain.h)) + 1
        min_nodes = get_lab_settings().min_ball_nodes
        if nodes_across < min_nodes:
            raise RefusalError(
                f"Unable to build ball kernel | radius {self.radius} spans {nodes_across} nodes, need {min_nodes}"
            )
        if any(
            c - self.radius <= o or c + self.radius >= u
            for c, o, u in zip(center, self.domain.origin, self.domain.upper, strict=True)
        ):
            raise RefusalError(f"Unable to build ball kernel | B({center}, {self.radius}) leaves the domain")

    @property
    def variant(self) -> KernelVariant:
        return KernelVariant.BALL

    @cached_property
    def ball_nodes(self) -> np.ndarray:
        """Flat closed-grid indices of the ball."""
        return np.flatnonzero(ball_mask(self.domain, self.center, self.radius).ravel())

    @cached_property
    def measure(self) -> float:
        return float(np.sum(quadrature(self.domain).weights.ravel()[self.ball_nodes]))

    @cached_property
    def average_weights(self) -> np.ndarray:
        """w_j / |B| on the ball nodes; they add up to 1."""
        return quadrature(self.domain).weights.ravel()[self.ball_nodes] / self.measure

    def mass(self) -> float:
        return quadrature(self.domain).total

    def mass_on(self, box: SubBox) -> float:
        inside = box.node_mask(self.domain).ravel()
        weights = quadrature(self.domain).weights.ravel()
        return float(np.sum(weights[inside])) * float(np.sum(self.average_weights[inside[self.ball_nodes]]))


@dataclass(frozen=True)
class Strip:
    """a(x, y) = alpha(x) + alpha(y) with alpha = k on the strip {x_2 - origin_2 < 1/k} (2D only)."""

    domain: Domain
    k: int

    def __post_init__(self):
        if self.domain.dim != 2:
            raise InvalidInputError(f"Unable to build strip kernel | needs a 2D domain, got dim={self.domain.dim}")
        if int(self.k) != self.k or self.k < 1:
            raise InvalidInputError(f"Unable to build strip kernel | k must be a positive integer, got {self.k}")
        object.__setattr__(self, "k", int(self.k))

    @property
    def variant(self) -> KernelVariant:
        return KernelVariant.STRIP

    @cached_property
    def alpha(self) -> np.ndarray:
        """alpha on the closed grid."""
        x2 = self.domain.coordinates(closed=True)[1]
        alpha = np.where(x2 - self.domain.origin[1] < 1.0 / self.k, float(self.k), 0.0)
        alpha.setflags(write=False)
        return alpha

    @cached_property
    def strip_rows(self) -> np.ndarray:
        """Flat closed-grid indices where alpha > 0."""
        return np.flatnonzero(self.alpha.ravel() > 0)

    def mass(self) -> float:
        w = quadrature(self.domain).weights.ravel()
        return 2.0 * float(np.sum(w)) * float(np.sum(w * self.alpha.ravel()))

    def mass_on(self, box: SubBox) -> float:
        inside = box.node_mask(self.domain).ravel()
        w = quadrature(self.domain).weights.ravel()[inside]
        return 2.0 * float(np.sum(w)) * float(np.sum(w * self.alpha.ravel()[inside]))


@dataclass(frozen=True, eq=False)
class Dense:
    """Explicit nonnegative weights over pairs of interior nodes (row-major flat indices)."""

    domain: Domain
    matrix: sp.csr_matrix

    def __post_init__(self):
        matrix = sp.csr_matrix(self.matrix, dtype=float)
        if matrix.shape != (self.domain.size, self.domain.size):
            raise InvalidInputError(
                f"Unable to build dense kernel | shape {matrix.shape} for {self.domain.size} interior nodes"
            )
        matrix.sum_duplicates()
        matrix.eliminate_zeros()
        if not np.all(np.isfinite(matrix.data)) or np.any(matrix.data < 0):
            raise InvalidInputError("Unable to build dense kernel | weights must be finite and nonnegative")
        object.__setattr__(self, "matrix", matrix)

    @classmethod
    def zeros(cls, domain: Domain) -> "Dense":
        return cls(domain, sp.csr_matrix((domain.size, domain.size)))

    @property
    def variant(self) -> KernelVariant:
        return KernelVariant.DENSE

    @property
    def pair_weight(self) -> float:
        return self.domain.cell_volume**2

    def mass(self) -> float:
        return self.pair_weight * float(np.sum(self.matrix.data))

    def mass_on(self, box: SubBox) -> float:
        inside = box.node_mask(self.domain, closed=False).ravel().astype(float)
        return self.pair_weight * float(inside @ (self.matrix @ inside))


Kernel = BallAverage | Strip | Dense


def mass(kernel: Kernel) -> float:
    """Discrete L1 norm of a over the closed grid."""
    return kernel.mass()


def concentration_defect(kernel: Kernel, box: SubBox) -> float:
    """Discrete mass of a over (Omega x Omega) minus (K x K)."""
    if not box.inside(kernel.domain):
        raise RefusalError(f"Unable to measure concentration | {box} is not contained in the domain")
    return max(kernel.mass() - kernel.mass_on(box), 0.0)


@dataclass(frozen=True)
class SequenceSchedule:
    """Strictly monotone parameters indexing a kernel family."""

    values: tuple[float, ...]
    direction: ScheduleDirection

    def __post_init__(self):
        values = tuple(float(v) for v in self.values)
        direction = ScheduleDirection(self.direction)
        if not values:
            raise InvalidInputError("Unable to build schedule | no values")
        steps = np.diff(values)
        monotone = np.all(steps < 0) if direction == ScheduleDirection.DECREASING else np.all(steps > 0)
        if not monotone or not all(math.isfinite(v) and v > 0 for v in values):
            raise InvalidInputError(f"Unable to build schedule | {values} is not strictly {direction} and positive")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "direction", direction)

    @classmethod
    def epsilons(cls, values) -> "SequenceSchedule":
        return cls(tuple(values), ScheduleDirection.DECREASING)

    @classmethod
    def integers(cls, values) -> "SequenceSchedule":
        return cls(tuple(values), ScheduleDirection.INCREASING)

    def __iter__(self) -> Iterator[float]:
        return iter(self.values)

    def __len__(self) -> int:
        return len(self.values)


@dataclass(frozen=True)
class KernelFamily:
    """Kernels a_k built from the schedule values by ``factory``."""

    variant: KernelVariant
    schedule: SequenceSchedule
    factory: Callable[[float], Kernel]
    dim: int

    @classmethod
    def ball_average(cls, domain: Domain, epsilons, center=None) -> "KernelFamily":
        center = domain.center if center is None else tuple(center)
        return cls(
            KernelVariant.BALL,
            SequenceSchedule.epsilons(epsilons),
            lambda eps: BallAverage(domain, center, eps),
            domain.dim,
        )

    @classmethod
    def strip(cls, domain: Domain, ks) -> "KernelFamily":
        return cls(KernelVariant.STRIP, SequenceSchedule.integers(ks), lambda k: Strip(domain, int(k)), domain.dim)

    @classmethod
    def constant(cls, kernel: Kernel, steps: int) -> "KernelFamily":
        """The same kernel repeated, e.g. a fixed dense kernel."""
        return cls(
            kernel.variant,
            SequenceSchedule.integers(range(1, steps + 1)),
            lambda _: kernel,
            kernel.domain.dim,
        )

    def __iter__(self) -> Iterator[tuple[float, Kernel]]:
        for value in self.schedule:
            yield value, self.factory(value)


@dataclass
class KernelConfig:
    """Configuration class to group kernel parameters"""

    variant: KernelVariant | str | None = None
    radius: float | None = None
    center: tuple[float, ...] | None = None
    k: int | None = None
    path: str | Path | None = None


def _create_ball(domain: Domain, radius: float, center=None) -> BallAverage:
    return BallAverage(domain, domain.center if center is None else center, radius)


# Kernel variants mapped to their constructors and the config fields they accept
_KERNEL_IMPL = {
    KernelVariant.BALL: (_create_ball, {"radius", "center"}),
    KernelVariant.STRIP: (Strip, {"k"}),
    KernelVariant.DENSE: (lambda domain, path: load_dense_csv(path, domain), {"path"}),
}


def create_kernel(domain: Domain, variant: KernelVariant | str, config: KernelConfig | None = None, **kwargs) -> Kernel:
    """Build a kernel on ``domain``; keyword arguments take precedence over ``config``."""
    if isinstance(variant, str):
        try:
            variant = KernelVariant(variant.lower())
        except ValueError as err:
            raise InvalidInputError(
                f"Unable to create kernel | unknown variant {variant!r}, valid: {[v.value for v in KernelVariant]}"
            ) from err

    if config is None:
        config = KernelConfig()
    merged = {f.name: kwargs.get(f.name, getattr(config, f.name)) for f in dataclasses.fields(KernelConfig)}

    impl, valid_fields = _KERNEL_IMPL[variant]
    impl_kwargs = {k: v for k, v in merged.items() if k in valid_fields and v is not None}
    return impl(domain, **impl_kwargs)


def load_dense_csv(path: str | Path, domain: Domain) -> Dense:
    """Read ``i,j,weight`` triples (optional header) into a dense kernel."""
    rows, cols, weights = [], [], []
    with open(path, encoding="UTF-8", newline="") as f:
        for line_no, record in enumerate(csv.reader(f), start=1):
            if not record or record[0].strip().startswith("#"):
                continue
            try:
                i, j, weight = int(record[0]), int(record[1]), float(record[2])
            except (ValueError, IndexError) as e:
                if line_no == 1:
                    continue
                raise InvalidInputError(f"Unable to read kernel | {path}:{line_no}: {record}") from e
            if not (0 <= i < domain.size and 0 <= j < domain.size):
                raise InvalidInputError(f"Unable to read kernel | {path}:{line_no}: node index out of range")
            rows.append(i)
            cols.append(j)
            weights.append(weight)

    matrix = sp.coo_matrix((weights, (rows, cols)), shape=(domain.size, domain.size)).tocsr()
    logger.debug(f"Loaded {len(weights)} kernel weights from {path}")
    return Dense(domain, matrix)


def save_dense_csv(kernel: Dense, path: str | Path) -> None:
    coo = kernel.matrix.tocoo()
    with open(path, "w", encoding="UTF-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["i", "j", "weight"])
        for i, j, weight in zip(coo.row, coo.col, coo.data, strict=True):
            writer.writerow([int(i), int(j), format(float(weight), ".17g")])


def random_dense_kernel(
    domain: Domain,
    rng: np.random.Generator,
    density: float = 0.05,
    support: SubBox | None = None,
) -> Dense:
    """Symmetric nonnegative random weights, optionally restricted to pairs inside ``support``."""
    matrix = sp.random(domain.size, domain.size, density=density, random_state=rng, format="csr")
    matrix = matrix + matrix.T
    if support is not None:
        inside = sp.diags(support.node_mask(domain, closed=False).ravel().astype(float))
        matrix = inside @ matrix @ inside
    return Dense(domain, matrix)
