"""Checkerboard coverings of Omega x Omega away from the diagonal, and the mass bound they yield.

E_{alpha,beta} collects the lattice cells of period beta and offset alpha whose
index parities differ. Averaging its indicator over offsets and over periods in
[eps, 2 eps] is bounded below off the diagonal, which caps the mass of any
symmetric measure by the largest checkerboard mass.
"""

import csv
import logging
import math
import numpy as np
import scipy.sparse as sp
from dataclasses import dataclass
from gammalab.core.exceptions import ContractViolationError, InvalidInputError, RefusalError
from gammalab.core.settings import get_lab_settings
from gammalab.grid import Domain
from pathlib import Path

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class CheckerboardParams:
    """One (alpha, beta) of D_eps on one axis; ``weight`` is the area d alpha d beta it stands for."""

    alpha: float
    beta: float
    axis: int = 0
    weight: float = 1.0

    def __post_init__(self):
        if not (math.isfinite(self.beta) and self.beta > 0):
            raise InvalidInputError(f"Unable to build checkerboard | beta must be positive, got {self.beta}")
        if self.axis < 0:
            raise InvalidInputError(f"Unable to build checkerboard | axis must be nonnegative, got {self.axis}")


@dataclass(frozen=True)
class EtaStrip:
    """Delta_eta = {(x, y): |x - y| <= eta}."""

    eta: float

    def __post_init__(self):
        if not (math.isfinite(self.eta) and self.eta > 0):
            raise InvalidInputError(f"Unable to build diagonal strip | eta must be positive, got {self.eta}")

    def contains(self, x, y) -> np.ndarray:
        x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
        distance = np.abs(x - y) if x.ndim < 2 else np.max(np.abs(x - y), axis=-1)
        return distance <= self.eta


def _cell_index(x, params: CheckerboardParams) -> np.ndarray:
    return np.floor((np.asarray(x, dtype=float) - params.alpha) / params.beta).astype(np.int64)


def in_A(x, params: CheckerboardParams):
    """Membership in A_{alpha,beta}, the cells with even index."""
    result = _cell_index(x, params) % 2 == 0
    return bool(result) if np.ndim(result) == 0 else result


def in_E(x, y, params: CheckerboardParams):
    """Membership in E_{alpha,beta}, the product cells with odd index sum."""
    result = (_cell_index(x, params) + _cell_index(y, params)) % 2 == 1
    return bool(result) if np.ndim(result) == 0 else result


def gamma_z(z, beta: float):
    """Length of the offsets alpha in [0, beta) with (0, z) in E_{alpha,beta}."""
    beta = np.asarray(beta, dtype=float)
    if not np.all(beta > 0):
        raise InvalidInputError(f"Unable to evaluate gamma | beta must be positive, got {beta}")
    z = np.asarray(z, dtype=float)
    m = np.floor((z / beta + 1.0) / 2.0)
    value = np.clip(np.abs(z - 2.0 * m * beta), 0.0, beta)
    return float(value) if value.ndim == 0 else value


def gamma_z_sampling_oracle(z: float, beta: float, samples: int = 1_000_000) -> float:
    """beta times the fraction of midpoint offsets alpha in [0, beta) with (0, z) in E_{alpha,beta}."""
    if samples < 1000:
        raise InvalidInputError(f"Unable to sample gamma | need at least 1000 samples, got {samples}")
    alphas = (np.arange(samples) + 0.5) * (beta / samples)
    hits = (np.floor(-alphas / beta) + np.floor((z - alphas) / beta)) % 2 == 1
    return beta * float(np.count_nonzero(hits)) / samples


def gamma_oracle_agreement(zs, betas, samples: int = 10_000) -> float:
    """Largest |gamma_z - oracle| in units of 3 beta / samples over the (z, beta) grid; at most 1 when they agree."""
    worst = 0.0
    for beta in betas:
        for z in zs:
            deviation = abs(gamma_z(z, beta) - gamma_z_sampling_oracle(z, beta, samples))
            worst = max(worst, deviation / (3.0 * beta / samples))
    return worst


def gamma_breakpoints(z: float, a: float, b: float) -> np.ndarray:
    """Kinks |z|/j of beta -> gamma_z(beta) inside [a, b], together with a and b."""
    if not 0 < a < b:
        raise InvalidInputError(f"Unable to locate breakpoints | need 0 < a < b, got a={a} b={b}")
    z = abs(z)
    if z == 0.0:
        return np.array([a, b])
    j = np.arange(math.ceil(z / b), math.floor(z / a) + 1)
    inner = z / j[j > 0]
    inner = inner[(inner > a) & (inner < b)]
    return np.concatenate([[a], np.sort(inner), [b]])


def integrate_gamma(z: float, a: float, b: float) -> float:
    """Exact integral of gamma_z over [a, b]; gamma_z is affine between breakpoints."""
    knots = gamma_breakpoints(z, a, b)
    values = np.array([gamma_z(z, beta) for beta in knots])
    return math.fsum(0.5 * (values[1:] + values[:-1]) * np.diff(knots))


def integrate_complement(z: float, a: float, b: float) -> float:
    """Exact integral of beta - gamma_z(beta) over [a, b]."""
    return 0.5 * (b * b - a * a) - integrate_gamma(z, a, b)


def d_measure(eps: float) -> float:
    """|D_eps| = integral of beta over [eps, 2 eps] = 3/2 eps^2."""
    return 1.5 * eps * eps


def covering_average(z: float, eps: float) -> float:
    if not eps > 0:
        raise InvalidInputError(f"Unable to average covering | eps must be positive, got {eps}")
    return integrate_gamma(z, eps, 2.0 * eps)


@dataclass(frozen=True)
class BoundCheck:
    value: float
    bound: float

    @property
    def slack(self) -> float:
        return self.value - self.bound

    @property
    def holds(self) -> bool:
        return self.slack >= -1e-15 * max(1.0, abs(self.bound))


def covering_lower_bound(z: float, eps: float, eta: float) -> BoundCheck:
    """integral of gamma_z over [eps, 2 eps] against (1/2 - eta) |D_eps|, for eps < 3/32 eta^2 and |z| >= eta."""
    if not eps < 3.0 / 32.0 * eta * eta or abs(z) < eta:
        raise RefusalError(f"Unable to bound covering | need eps < 3/32 eta^2 and |z| >= eta (z={z}, eps={eps})")
    return BoundCheck(covering_average(z, eps), (0.5 - eta) * d_measure(eps))


def triangle_comparison(z: float, m: int) -> BoundCheck:
    """Area of gamma over [|z|/2m, |z|/(2m-2)] against that of beta - gamma over [|z|/(2m+1), |z|/(2m-1)]."""
    if m < 2 or z == 0:
        raise InvalidInputError(f"Unable to compare triangles | need m >= 2 and z != 0, got m={m} z={z}")
    z = abs(z)
    return BoundCheck(
        integrate_gamma(z, z / (2 * m), z / (2 * m - 2)),
        integrate_complement(z, z / (2 * m + 1), z / (2 * m - 1)),
    )


def refined_covering_index(z: float, eps: float) -> int:
    """Smallest m with |z| / 2m < 2 eps."""
    return math.floor(abs(z) / (4.0 * eps)) + 1


def refined_covering_bound(z: float, eps: float) -> float:
    """(1/2) |D_eps| - |z| eps / k^2."""
    k = refined_covering_index(z, eps)
    return 0.5 * d_measure(eps) - abs(z) * eps / k**2


def refined_covering_check(z: float, eps: float) -> BoundCheck:
    return BoundCheck(covering_average(z, eps), refined_covering_bound(z, eps))


@dataclass(frozen=True, eq=False)
class DiscreteMeasure2D:
    """Nonnegative weights on pairs of points (i, j), i != j."""

    points: np.ndarray
    matrix: sp.csr_matrix

    def __post_init__(self):
        points = np.asarray(self.points, dtype=float)
        points = points.reshape(-1, 1) if points.ndim == 1 else points
        matrix = sp.csr_matrix(self.matrix, dtype=float)
        count = points.shape[0]
        if matrix.shape != (count, count):
            raise InvalidInputError(f"Unable to build measure | {matrix.shape} weights for {count} points")
        matrix.sum_duplicates()
        matrix.eliminate_zeros()
        if not np.all(np.isfinite(matrix.data)) or np.any(matrix.data < 0):
            raise InvalidInputError("Unable to build measure | weights must be finite and nonnegative")
        if np.any(matrix.diagonal() != 0):
            raise InvalidInputError("Unable to build measure | the diagonal must carry no mass")
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "matrix", matrix)

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def symmetric(self) -> bool:
        difference = self.matrix - self.matrix.T
        return difference.nnz == 0 or float(np.max(np.abs(difference.data))) <= 1e-14 * max(
            1.0, float(np.max(self.matrix.data, initial=0.0))
        )

    def total_mass(self) -> float:
        return math.fsum(self.matrix.data)

    def pairs(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        coo = self.matrix.tocoo()
        return coo.row, coo.col, coo.data


def checkerboard_mass(mu: DiscreteMeasure2D, params: CheckerboardParams) -> float:
    """mu of the pairs whose coordinates along ``params.axis`` lie in E_{alpha,beta}."""
    if params.axis >= mu.dim:
        raise InvalidInputError(f"Unable to measure checkerboard | axis {params.axis} in dimension {mu.dim}")
    rows, cols, weights = mu.pairs()
    coords = mu.points[:, params.axis]
    return math.fsum(weights[in_E(coords[rows], coords[cols], params)])


def off_diagonal_mass(mu: DiscreteMeasure2D, strip: EtaStrip) -> float:
    """mu of the pairs at sup-norm distance > eta."""
    rows, cols, weights = mu.pairs()
    return math.fsum(weights[~strip.contains(mu.points[rows], mu.points[cols])])


def checkerboard_samples(eps: float, axis: int = 0) -> list[CheckerboardParams]:
    """alpha_j = beta j / A (j < A) for beta_l = eps (1 + l / B) (l < B), with A, B from the lab settings.

    The grid is uniform in (alpha / beta, beta), so each sample carries the D_eps area
    (beta / A)(eps / B) of its cell; weighted sums approximate integrals over D_eps.
    """
    settings = get_lab_settings()
    cell = eps / (settings.alpha_samples * settings.beta_samples)
    return [
        CheckerboardParams(beta * j / settings.alpha_samples, beta, axis, beta * cell)
        for beta in (eps * (1.0 + step / settings.beta_samples) for step in range(settings.beta_samples))
        for j in range(settings.alpha_samples)
    ]


@dataclass(frozen=True)
class MassBoundReport:
    eta: float
    eps: float
    m_star: float
    off_diagonal: float
    bound: float
    averaged_bound: float = 0.0

    @property
    def ratio(self) -> float:
        if self.off_diagonal == 0.0:
            return 0.0
        return self.off_diagonal / self.bound if self.bound > 0 else math.inf

    @property
    def slack(self) -> float:
        return self.bound - self.off_diagonal

    @property
    def holds(self) -> bool:
        return self.slack >= -1e-12 * max(1.0, self.bound)


def measure_mass_bound(mu: DiscreteMeasure2D, eta: float | None = None, eps: float | None = None) -> MassBoundReport:
    """Check mu(off Delta_eta) <= 2 d M* / (1 - 2 eta), M* the largest sampled checkerboard mass.

    ``averaged_bound`` replaces d M* by the sum over axes of the D_eps-weighted mean checkerboard
    mass and is never larger than ``bound``.

    ``eps`` defaults to 3/64 eta^2, inside the range where the covering average is bounded below.
    """
    if not mu.symmetric:
        raise RefusalError("Unable to bound measure mass | the measure is not symmetric")
    eta = get_lab_settings().default_eta if eta is None else float(eta)
    strip = EtaStrip(eta)
    if eta >= 0.5:
        raise InvalidInputError(f"Unable to bound measure mass | eta must be below 1/2, got {eta}")
    eps = 3.0 / 64.0 * eta * eta if eps is None else float(eps)

    m_star, averaged = 0.0, 0.0
    for axis in range(mu.dim):
        samples = checkerboard_samples(eps, axis)
        masses = np.array([checkerboard_mass(mu, params) for params in samples])
        weights = np.array([params.weight for params in samples])
        m_star = max(m_star, float(masses.max(initial=0.0)))
        averaged += float(weights @ masses) / float(weights.sum())
    report = MassBoundReport(
        eta=eta,
        eps=eps,
        m_star=m_star,
        off_diagonal=off_diagonal_mass(mu, strip),
        bound=2.0 * mu.dim * m_star / (1.0 - 2.0 * eta),
        averaged_bound=2.0 * averaged / (1.0 - 2.0 * eta),
    )
    logger.info(
        f"mass bound eta={eta:g}: off-diagonal {report.off_diagonal:.6g} <= {report.bound:.6g}"
        f" (averaged {report.averaged_bound:.6g})"
    )
    return report


def fubini_swap_check(mu: DiscreteMeasure2D, samples: list[CheckerboardParams]) -> float:
    """Relative gap between summing checkerboard masses over samples and summing per-pair sample counts."""
    by_sample = math.fsum(checkerboard_mass(mu, params) for params in samples)
    rows, cols, weights = mu.pairs()
    counts = np.zeros(weights.size)
    for params in samples:
        coords = mu.points[:, params.axis]
        counts += in_E(coords[rows], coords[cols], params)
    by_pair = math.fsum(weights * counts)
    return abs(by_sample - by_pair) / max(1.0, abs(by_sample))


def random_symmetric_measure(domain: Domain, rng: np.random.Generator, density: float = 1.0) -> DiscreteMeasure2D:
    """Uniform random weights on a random symmetric set of off-diagonal pairs of interior nodes."""
    points = np.stack([x.ravel() for x in domain.coordinates()], axis=1)
    count = points.shape[0]
    upper = sp.triu(sp.random(count, count, density=density, random_state=rng, format="csr"), k=1)
    return DiscreteMeasure2D(points, upper + upper.T)


def uniform_measure(domain: Domain) -> DiscreteMeasure2D:
    """Weight 1 on every off-diagonal pair of interior nodes."""
    points = np.stack([x.ravel() for x in domain.coordinates()], axis=1)
    count = points.shape[0]
    return DiscreteMeasure2D(points, sp.csr_matrix(np.ones((count, count)) - np.eye(count)))


def load_measure_csv(path: str | Path, points) -> DiscreteMeasure2D:
    """Read ``i,j,weight`` triples (optional header) over the given points."""
    points = np.asarray(points, dtype=float)
    count = points.shape[0]
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
                raise InvalidInputError(f"Unable to read measure | {path}:{line_no}: {record}") from e
            if not (0 <= i < count and 0 <= j < count):
                raise InvalidInputError(f"Unable to read measure | {path}:{line_no}: point index out of range")
            if i == j:
                raise ContractViolationError(f"Unable to read measure | {path}:{line_no}: diagonal pair ({i}, {i})")
            rows.append(i)
            cols.append(j)
            weights.append(weight)
    return DiscreteMeasure2D(points, sp.coo_matrix((weights, (rows, cols)), shape=(count, count)))
