"""p-medians and the additivity defect showing that p != 2 energies admit no integral representation.

Everything here is a pure scalar computation on weighted samples, except the two
checks that sample grid functions (:func:`m_p_continuity_probe` and
:func:`indicator_approx_check`).
"""

import logging
import math
import numpy as np
from dataclasses import dataclass, field
from gammalab.core.constants import PMEDIAN_TOLERANCE, REPRESENTABLE_TOLERANCE, Verdict
from gammalab.core.exceptions import InvalidInputError, RefusalError
from gammalab.core.settings import get_lab_settings
from gammalab.grid import Domain, GridFunction, check_exponent, closed_sample, power_abs, quadrature, signed_power
from gammalab.kernel import SubBox

logger = logging.getLogger(__name__)

_MAX_BISECTIONS = 400


@dataclass(frozen=True)
class PMedianResult:
    t: float
    objective: float
    iterations: int


def _as_sample(u, weights=None) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(u, GridFunction):
        return closed_sample(u)
    values = np.asarray(u, dtype=float).ravel()
    weights = np.ones_like(values) if weights is None else np.asarray(weights, dtype=float).ravel()
    if values.size == 0 or values.shape != weights.shape:
        raise InvalidInputError("Unable to compute p-median | need a nonempty sample with matching weights")
    if not (np.all(np.isfinite(values)) and np.all(np.isfinite(weights)) and np.all(weights >= 0)):
        raise InvalidInputError("Unable to compute p-median | values and weights must be finite, weights >= 0")
    if not np.any(weights > 0):
        raise InvalidInputError("Unable to compute p-median | all weights vanish")
    return values, weights


def p_median(u, p: float, weights=None, tol: float = PMEDIAN_TOLERANCE) -> PMedianResult:
    """Unique minimizer of t -> sum w |u - t|^p.

    ``u`` is a :class:`GridFunction` (sampled over the closed grid, boundary
    included) or an array of values with optional ``weights``. Bisection on the
    derivative over [min u, max u]; p = 2 returns the weighted mean directly.
    """
    p = check_exponent(p)
    values, weights = _as_sample(u, weights)

    def objective(t: float) -> float:
        return float(np.sum(weights * power_abs(values - t, p)))

    lo, hi = float(np.min(values)), float(np.max(values))
    if lo == hi:
        return PMedianResult(lo, 0.0, 0)
    if p == 2.0:
        t = float(np.sum(weights * values) / np.sum(weights))
        return PMedianResult(t, objective(t), 0)

    iterations = 0
    scale = max(1.0, abs(lo), abs(hi))
    while hi - lo > tol * scale and iterations < _MAX_BISECTIONS:
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        # derivative of the objective divided by p
        slope = float(np.sum(weights * signed_power(mid - values, p)))
        if slope > 0:
            hi = mid
        elif slope < 0:
            lo = mid
        else:
            lo = hi = mid
        iterations += 1

    t = 0.5 * (lo + hi)
    return PMedianResult(t, objective(t), iterations)


def m_p(u, p: float, weights=None) -> float:
    return p_median(u, p, weights).t


def p_median_slope(u, p: float, t: float, weights=None) -> float:
    """Derivative of t -> sum w |u - t|^p."""
    values, weights = _as_sample(u, weights)
    return float(-p * np.sum(weights * signed_power(values - t, p)))


@dataclass(frozen=True)
class ContinuityProbe:
    deltas: tuple[float, ...]
    moduli: tuple[float, ...]
    noise_floor: float = 1e-10

    @property
    def decreasing(self) -> bool:
        return all(b <= a or b <= self.noise_floor for a, b in zip(self.moduli, self.moduli[1:]))


def m_p_continuity_probe(
    u: GridFunction,
    p: float,
    deltas=(1e-2, 1e-4, 1e-6),
    trials: int = 8,
    rng: np.random.Generator | None = None,
) -> ContinuityProbe:
    """max |m_p(u + delta xi) - m_p(u)| over random xi with sup-norm 1, one value per delta."""
    rng = np.random.default_rng(0) if rng is None else rng
    base = m_p(u, p)
    directions = [rng.uniform(-1.0, 1.0, size=u.domain.shape) for _ in range(trials)]
    moduli = []
    for delta in deltas:
        shifts = [abs(m_p(GridFunction(u.domain, u.values + delta * xi), p) - base) for xi in directions]
        moduli.append(max(shifts) if delta > 0 else 0.0)
    return ContinuityProbe(tuple(float(d) for d in deltas), tuple(moduli))


def m_p_indicator(s_a: float, measure: float, p: float) -> float:
    """m_p(1_A) as a function of s_a = |A|."""
    p = check_exponent(p)
    _check_level(s_a, measure)
    r = 1.0 / (p - 1.0)
    inside, outside = s_a**r, (measure - s_a) ** r
    return inside / (inside + outside)


def h_p(s: float, measure: float, p: float) -> float:
    p = check_exponent(p)
    _check_level(s, measure)
    r = 1.0 / (p - 1.0)
    return s**r + (measure - s) ** r


def phi_p(s: float, measure: float, p: float) -> float:
    """Phi_p(s) = sum |1_A - m_p(1_A)|^p for |A| = s, in closed form."""
    p = check_exponent(p)
    _check_level(s, measure)
    if s == 0.0 or s == measure:
        return 0.0
    return s * (measure - s) / h_p(s, measure, p) ** (p - 1.0)


def _check_level(s: float, measure: float) -> None:
    if not (math.isfinite(measure) and measure > 0):
        raise InvalidInputError(f"Unable to evaluate | measure must be positive, got {measure}")
    if not (0.0 <= s <= measure):
        raise InvalidInputError(f"Unable to evaluate | level measure {s} outside [0, {measure}]")


def two_level_integral(s: float, measure: float, p: float) -> float:
    """sum w |v - m_p(v)|^p on the exact sample v = 1 (weight s), v = 0 (weight measure - s)."""
    _check_level(s, measure)
    values = np.array([1.0, 0.0])
    weights = np.array([s, measure - s])
    return p_median(values, p, weights).objective


def defect(s: float, t: float, measure: float, p: float) -> float:
    """D(s, t) = Phi_p(s) + Phi_p(t) - Phi_p(s + t)."""
    return phi_p(s, measure, p) + phi_p(t, measure, p) - phi_p(s + t, measure, p)


@dataclass(frozen=True)
class DefectSample:
    s1: float
    s2: float
    t: float
    residual: float


def _admissible(s1: float, s2: float, t: float, measure: float) -> bool:
    return min(s1, s2, t) >= 0.0 and s1 + s2 + t <= measure * (1.0 + 1e-12)


def additivity_residual(s1: float, s2: float, t: float, measure: float, p: float) -> DefectSample:
    """R = D(s1 + s2, t) - D(s1, t) - D(s2, t)."""
    if not _admissible(s1, s2, t, measure):
        raise InvalidInputError(f"Unable to evaluate residual | ({s1}, {s2}, {t}) inadmissible for |Omega|={measure}")
    total = min(s1 + s2 + t, measure)
    phi = [phi_p(min(x, measure), measure, p) for x in (s1, s2, t, s1 + s2, s1 + t, s2 + t)]
    phi_all = phi_p(total, measure, p)
    phi_s1, phi_s2, phi_t, phi_12, phi_1t, phi_2t = phi
    residual = (phi_12 + phi_t - phi_all) - (phi_s1 + phi_t - phi_1t) - (phi_s2 + phi_t - phi_2t)
    return DefectSample(s1, s2, t, residual)


@dataclass(frozen=True)
class ImpliedRepresentation:
    """Constants of the p = 2 representation: mu = density * Lebesgue, nu = 0, f(s, t) = |s - t|^2."""

    mu_density: float
    nu: float = 0.0
    f: str = "|s-t|^2"


def implied_representation(p: float, measure: float) -> ImpliedRepresentation:
    if p != 2.0:
        raise RefusalError(f"Unable to derive representation | only p = 2 is representable, got p={p}")
    return ImpliedRepresentation(mu_density=1.0 / (2.0 * measure))


@dataclass(frozen=True)
class Certificate:
    p: float
    measure: float
    verdict: Verdict
    max_residual: float
    witness: DefectSample
    triples_scanned: int
    implied: ImpliedRepresentation | None = field(default=None)


def _residual_grid(s1: np.ndarray, s2: np.ndarray, t: np.ndarray, measure: float, p: float) -> np.ndarray:
    phi = np.vectorize(lambda s: phi_p(min(max(s, 0.0), measure), measure, p), otypes=[float])
    return (
        (phi(s1 + s2) + phi(t) - phi(s1 + s2 + t))
        - (phi(s1) + phi(t) - phi(s1 + t))
        - (phi(s2) + phi(t) - phi(s2 + t))
    )


def _scan(axis: np.ndarray, measure: float, p: float, centre=None, half_width=None) -> tuple[DefectSample, int]:
    if centre is None:
        s1, s2, t = np.meshgrid(axis, axis, axis, indexing="ij")
    else:
        grids = [np.clip(c + axis, 0.0, measure) for c in centre]
        s1, s2, t = np.meshgrid(*grids, indexing="ij")
    keep = (s1 + s2 + t) <= measure * (1.0 + 1e-12)
    s1, s2, t = s1[keep], s2[keep], t[keep]
    residual = _residual_grid(s1, s2, t, measure, p)
    # np.argmax returns the first maximum, i.e. the lexicographically smallest triple
    best = int(np.argmax(np.abs(residual)))
    return DefectSample(float(s1[best]), float(s2[best]), float(t[best]), float(residual[best])), int(s1.size)


def nonrepresentability_certificate(p: float, measure: float, step: float | None = None) -> Certificate:
    """Scan admissible (s1, s2, t) for a nonzero additivity residual.

    The coarse scan uses ``step * measure`` spacing; the argmax is refined on a
    ten times finer local grid.
    """
    p = check_exponent(p)
    step = get_lab_settings().scan_step if step is None else step
    count = int(round(1.0 / step))
    axis = np.linspace(0.0, measure, count + 1)
    witness, scanned = _scan(axis, measure, p)

    if abs(witness.residual) > REPRESENTABLE_TOLERANCE:
        local = np.linspace(-step * measure, step * measure, 21)
        refined, extra = _scan(local, measure, p, centre=(witness.s1, witness.s2, witness.t))
        scanned += extra
        if abs(refined.residual) > abs(witness.residual):
            witness = refined

    max_residual = abs(witness.residual)
    verdict = Verdict.REPRESENTABLE_CONSISTENT if max_residual <= REPRESENTABLE_TOLERANCE else Verdict.NOT_REPRESENTABLE
    implied = implied_representation(p, measure) if verdict == Verdict.REPRESENTABLE_CONSISTENT and p == 2.0 else None
    logger.info(f"p={p:g}: {verdict} with max |R|={max_residual:.3e} over {scanned} triples")
    return Certificate(p, measure, verdict, max_residual, witness, scanned, implied)


@dataclass(frozen=True)
class SecondDerivativeProbe:
    s: np.ndarray
    second_derivative: np.ndarray
    spread: float
    asymmetry: float


def phi_second_derivative_probe(p: float, measure: float, points: int = 181) -> SecondDerivativeProbe:
    """Central second differences of Phi_p with step 1e-4 |Omega| on [0.05, 0.95] |Omega|."""
    step = 1e-4 * measure
    s = np.linspace(0.05 * measure, 0.95 * measure, points)

    def second(x: float) -> float:
        return (phi_p(x + step, measure, p) - 2.0 * phi_p(x, measure, p) + phi_p(x - step, measure, p)) / step**2

    values = np.array([second(x) for x in s])
    mirrored = np.array([second(measure - x) for x in s])
    return SecondDerivativeProbe(
        s=s,
        second_derivative=values,
        spread=float(np.max(values) - np.min(values)),
        asymmetry=float(np.max(np.abs(values - mirrored))),
    )


def h_p_rigidity(p: float, measure: float) -> float:
    """|h_p(0) - h_p(|Omega|/2)|, zero only for p = 2."""
    return abs(h_p(0.0, measure, p) - h_p(0.5 * measure, measure, p))


@dataclass(frozen=True)
class IndicatorApproxCheck:
    level_measure: float
    direct: float
    closed_form: float
    scales: tuple[float, ...]
    approximations: tuple[float, ...]

    @property
    def final_gap(self) -> float:
        if not self.approximations:
            return 0.0
        return abs(self.approximations[-1] - self.direct) / max(abs(self.direct), 1e-300)


def _inner_distance(domain: Domain, box: SubBox) -> np.ndarray:
    coords = domain.coordinates(closed=False)
    dist = np.full(domain.shape, np.inf)
    for x, lo, hi in zip(coords, box.lower, box.upper, strict=True):
        dist = np.minimum(dist, np.minimum(x - lo, hi - x))
    return dist


def _smoothstep(t: np.ndarray) -> np.ndarray:
    t = np.clip(t, 0.0, 1.0)
    return t * t * (3.0 - 2.0 * t)


def indicator_approx_check(domain: Domain, box: SubBox | None, p: float, scales=None) -> IndicatorApproxCheck:
    """sum w |1_A - m_p(1_A)|^p directly and along smooth approximants increasing to 1_A.

    A is the open box; ``None`` stands for the empty set. The approximants are
    smoothstep ramps of width ``scale`` measured from the boundary of A inward.
    """
    p = check_exponent(p)
    weights = quadrature(domain).weights[domain.interior]
    if box is None:
        return IndicatorApproxCheck(0.0, 0.0, 0.0, (), ())
    if not box.inside(domain):
        raise RefusalError(f"Unable to approximate indicator | {box} is not contained in the domain")

    dist = _inner_distance(domain, box)
    indicator = (dist > 0).astype(float)
    if not np.any(indicator):
        raise RefusalError(f"Unable to approximate indicator | {box} contains no grid node")

    level = float(np.sum(weights * indicator))
    u = GridFunction(domain, indicator)
    direct = p_median(u, p).objective

    if scales is None:
        side = min(hi - lo for lo, hi in zip(box.lower, box.upper, strict=True))
        scales = tuple(side * 4.0**-j for j in range(1, 4))
    values = tuple(p_median(GridFunction(domain, _smoothstep(dist / s)), p).objective for s in scales)
    return IndicatorApproxCheck(level, direct, phi_p(level, domain.measure, p), tuple(scales), values)
