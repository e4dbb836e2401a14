"""Experiments comparing min(F_k - G) with min(F - G) along kernel families.

Convergence of minima under a fixed set of smooth loads stands in for the
Gamma-convergence of F_k to F.
"""

import logging
import math
import numpy as np
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from gammalab.core.constants import KernelVariant
from gammalab.core.exceptions import InvalidInputError, RefusalError
from gammalab.core.settings import get_lab_settings
from gammalab.energy import FunctionalSpec, eval_F_limit, eval_F_point, eval_Fk
from gammalab.grid import Domain, GridFunction, closed_sample, discrete_gradient_energy
from gammalab.kernel import KernelFamily, SequenceSchedule, Strip, SubBox, concentration_defect
from gammalab.solve import LinearLoad, SolveReport, minimize, minimize_limit

logger = logging.getLogger(__name__)


def standard_loads(domain: Domain) -> list[tuple[str, LinearLoad]]:
    """Constant, two coordinate modes and two localized bumps."""

    def unit(x: np.ndarray, axis: int) -> np.ndarray:
        return (x - domain.origin[axis]) / domain.lengths[axis]

    last = domain.dim - 1
    width = 0.1 * min(domain.lengths)

    def bump(where: float):
        centre = [o + where * length for o, length in zip(domain.origin, domain.lengths, strict=True)]
        return lambda *x: np.exp(-sum((xi - c) ** 2 for xi, c in zip(x, centre, strict=True)) / (2.0 * width**2))

    profiles = {
        "constant": lambda *x: np.ones_like(x[0]),
        "mode-first": lambda *x: np.sin(2.0 * math.pi * unit(x[0], 0)),
        "mode-last": lambda *x: np.cos(math.pi * unit(x[last], last)),
        "bump-low": bump(0.3),
        "bump-high": bump(0.7),
    }
    return [(name, LinearLoad.from_callable(domain, f)) for name, f in profiles.items()]


def eventually_decreasing(values, noise_floor: float = 1e-12) -> bool:
    """Nonincreasing over the second half of the sequence (always at least the last two entries)."""
    values = list(values)
    if len(values) < 2:
        return True
    start = min(len(values) // 2, len(values) - 2)
    tail = values[start:]
    return all(b <= a + noise_floor * max(1.0, abs(a)) for a, b in zip(tail, tail[1:]))


def _relative(gap: float, reference: float) -> float:
    if gap == 0.0:
        return 0.0
    return gap / max(abs(reference), 1e-300)


@dataclass(frozen=True)
class SweepRow:
    parameter: float
    load_id: str
    min_k: float
    limit_min: float
    gradient_only_min: float
    gap: float
    relative_gap: float
    converged: bool


@dataclass(frozen=True)
class GammaSweepReport:
    p: float
    variant: KernelVariant
    schedule: SequenceSchedule
    rows: tuple[SweepRow, ...]

    @property
    def load_ids(self) -> list[str]:
        return list(dict.fromkeys(row.load_id for row in self.rows))

    def gaps(self, load_id: str) -> list[float]:
        return [row.relative_gap for row in self.rows if row.load_id == load_id]

    def limit_min(self, load_id: str) -> float:
        return next(row.limit_min for row in self.rows if row.load_id == load_id)

    @property
    def final_gap(self) -> float:
        return max((self.gaps(load_id)[-1] for load_id in self.load_ids), default=0.0)

    @property
    def trend_ok(self) -> bool:
        return all(eventually_decreasing(self.gaps(load_id)) for load_id in self.load_ids)

    @property
    def converged(self) -> bool:
        return all(row.converged for row in self.rows)

    @property
    def domination_slack(self) -> float:
        """min over rows of min_k - max(limit, gradient-only) minima; nonnegative when F_k dominates both."""
        return min((row.min_k - max(row.limit_min, row.gradient_only_min) for row in self.rows), default=0.0)


def _run_all(jobs: list, workers: int) -> list[SolveReport]:
    if workers > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(fn, *args) for fn, *args in jobs]
            return [future.result() for future in futures]
    return [fn(*args) for fn, *args in jobs]


def gamma_sweep(p: float, family: KernelFamily, loads: list[tuple[str, LinearLoad]]) -> GammaSweepReport:
    """min(F_k - G) for every (kernel, load) pair against min(F - G) and the gradient-only minimum."""
    if family.variant == KernelVariant.BALL and p > family.dim:
        raise RefusalError(f"Unable to run gamma sweep | ball-average families need 1 < p <= dim, got p={p}")
    if not loads:
        raise InvalidInputError("Unable to run gamma sweep | no loads")
    domain = loads[0][1].domain
    workers = get_lab_settings().workers

    kernels = list(family)
    base_jobs = [(minimize_limit, p, load) for _, load in loads]
    base_jobs += [(minimize, FunctionalSpec.gradient_only(p, domain), load) for _, load in loads]
    step_jobs = [(minimize, FunctionalSpec(p, domain, kernel), load) for _, kernel in kernels for _, load in loads]
    results = _run_all(base_jobs + step_jobs, workers)

    count = len(loads)
    limits, gradient_only, steps = results[:count], results[count : 2 * count], results[2 * count :]
    rows = []
    for s, (parameter, _) in enumerate(kernels):
        for j, (load_id, _) in enumerate(loads):
            report = steps[s * count + j]
            gap = abs(report.energy - limits[j].energy)
            rows.append(
                SweepRow(
                    parameter=parameter,
                    load_id=load_id,
                    min_k=report.energy,
                    limit_min=limits[j].energy,
                    gradient_only_min=gradient_only[j].energy,
                    gap=gap,
                    relative_gap=_relative(gap, limits[j].energy),
                    converged=report.converged and limits[j].converged and gradient_only[j].converged,
                )
            )

    sweep = GammaSweepReport(p, family.variant, family.schedule, tuple(rows))
    logger.info(f"gamma sweep p={p:g} {family.variant}: final gap {sweep.final_gap:.3e}, trend ok={sweep.trend_ok}")
    return sweep


@dataclass(frozen=True)
class StripStep:
    k: int
    total: float
    gap: float


@dataclass(frozen=True)
class StripExampleReport:
    limit: float
    steps: tuple[StripStep, ...]

    @property
    def gaps(self) -> list[float]:
        return [step.gap for step in self.steps]

    @property
    def decreasing(self) -> bool:
        return all(b <= a for a, b in zip(self.gaps, self.gaps[1:]))

    @property
    def final_gap(self) -> float:
        return self.gaps[-1] if self.steps else 0.0


def strip_limit(u: GridFunction) -> float:
    """2 sum w u^2 plus the p = 2 gradient energy, the pointwise limit of the strip energies."""
    v, w = closed_sample(u)
    return 2.0 * float(w @ v**2) + discrete_gradient_energy(u, 2.0)


def strip_example_check(u: GridFunction, ks) -> StripExampleReport:
    """F_k(u) for the strip kernels of the unit square against their pointwise limit."""
    domain = u.domain
    if domain.dim != 2 or domain.lengths != (1.0, 1.0) or domain.origin != (0.0, 0.0):
        raise InvalidInputError("Unable to run strip example | needs the unit square")
    limit = strip_limit(u)
    steps = []
    for k in SequenceSchedule.integers(ks):
        total = eval_Fk(FunctionalSpec(2.0, domain, Strip(domain, int(k))), u).total
        steps.append(StripStep(int(k), total, abs(total - limit)))
    return StripExampleReport(limit, tuple(steps))


@dataclass(frozen=True)
class VanishingNuReport:
    margins: tuple[float, ...]
    defects: tuple[float, ...]
    tolerance: float

    @property
    def passed(self) -> bool:
        nonincreasing = all(b <= a + 1e-12 for a, b in zip(self.defects, self.defects[1:]))
        return nonincreasing and self.defects[-1] <= self.tolerance


def vanishing_nu_check(
    family: KernelFamily, domain: Domain, margins, tolerance: float | None = None
) -> VanishingNuReport:
    """sup over the family of the concentration defect for growing compacts K = domain shrunk by margin.

    ``tolerance`` is relative to the largest kernel mass in the family and defaults to the
    ``vanishing_nu_tol`` setting.
    """
    if tolerance is None:
        tolerance = get_lab_settings().vanishing_nu_tol
    margins = tuple(sorted((float(m) for m in margins), reverse=True))
    kernels = [kernel for _, kernel in family]
    scale = max(kernel.mass() for kernel in kernels)
    defects = tuple(
        max(concentration_defect(kernel, SubBox.shrunk(domain, margin)) for kernel in kernels) for margin in margins
    )
    return VanishingNuReport(margins, defects, tolerance * max(scale, 1e-300))


@dataclass(frozen=True)
class IndependenceReport:
    centred: GammaSweepReport
    shifted: GammaSweepReport
    disagreement: float


def x0_independence(p: float, domain: Domain, epsilons, loads, offset) -> IndependenceReport:
    """Run the ball-average sweep at the domain center and at center + offset.

    The disagreement is the largest difference of final relative gaps over the loads.
    """
    shifted_center = tuple(c + o for c, o in zip(domain.center, np.atleast_1d(offset), strict=True))
    centred = gamma_sweep(p, KernelFamily.ball_average(domain, epsilons), loads)
    shifted = gamma_sweep(p, KernelFamily.ball_average(domain, epsilons, center=shifted_center), loads)
    disagreement = max(abs(centred.gaps(load_id)[-1] - shifted.gaps(load_id)[-1]) for load_id in centred.load_ids)
    return IndependenceReport(centred, shifted, disagreement)


@dataclass(frozen=True)
class RelaxationGap:
    point_energy: float
    limit_energy: float

    @property
    def gap(self) -> float:
        return self.point_energy - self.limit_energy


def relaxation_gap(p: float, u: GridFunction, x0) -> RelaxationGap:
    """F_{x0}(u) - F(u), nonnegative because t = u(x0) competes with m_p(u)."""
    return RelaxationGap(eval_F_point(p, u, x0).total, eval_F_limit(p, u).total)
