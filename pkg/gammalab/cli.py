"""Command line experiment runner.

Each subcommand reads an optional TOML config, applies flag overrides, runs its
suite and writes a report. Exit status is 0 on pass, 1 on an I/O failure, 2 on a
failed assertion, 3 on solver non-convergence and 4 on a configuration error or
a refused experiment.
"""

import argparse
import logging
import math
import numpy as np
import sys
import time
import tomllib
from collections.abc import Callable
from gammalab.core.constants import (
    PROPERTY_TOLERANCE,
    REPRESENTABLE_TOLERANCE,
    ExitCode,
    KernelVariant,
    OutputFormat,
    Subcommand,
)
from gammalab.core.exceptions import ConfigError, GammaLabError
from gammalab.core.log_utils import write_stderr
from gammalab.core.settings import get_lab_settings
from gammalab.covering import (
    checkerboard_samples,
    covering_lower_bound,
    fubini_swap_check,
    gamma_oracle_agreement,
    gamma_z,
    measure_mass_bound,
    random_symmetric_measure,
    refined_covering_check,
    triangle_comparison,
)
from gammalab.energy import (
    FunctionalSpec,
    check_oscillation_bound,
    check_truncation_monotone,
    evaluate,
    finite_difference_check,
    jensen_chain,
    parallelogram_defect,
    strip_moment_identity,
    variance_identity,
)
from gammalab.gammaexp import (
    gamma_sweep,
    standard_loads,
    strip_example_check,
    vanishing_nu_check,
    x0_independence,
)
from gammalab.grid import Domain, GridFunction, random_contraction, random_grid_function
from gammalab.kernel import BallAverage, KernelFamily, Strip, random_dense_kernel
from gammalab.lablog import LabLog
from gammalab.report import Report, ReportBuilder, emit
from gammalab.represent import (
    h_p_rigidity,
    m_p_continuity_probe,
    nonrepresentability_certificate,
    phi_p,
    phi_second_derivative_probe,
    two_level_integral,
)
from gammalab.solve import capacitary_potential, radial_capacity
from pathlib import Path
from pydantic import BaseModel, ConfigDict, Field, PositiveFloat, PositiveInt, ValidationError

logger = logging.getLogger(__name__)


class DomainBlock(BaseModel):
    model_config = ConfigDict(extra="forbid")

    dim: int = Field(default=2, ge=1, le=3)
    n: PositiveInt | list[PositiveInt] = 32
    lengths: list[PositiveFloat] | None = None
    origin: list[float] | None = None

    def build(self) -> Domain:
        lengths = self.lengths or [1.0] * self.dim
        if len(lengths) != self.dim:
            raise ConfigError(f"Unable to build domain | {len(lengths)} lengths for dim={self.dim}", "domain.lengths")
        try:
            return Domain(tuple(lengths), self.n, None if self.origin is None else tuple(self.origin))
        except GammaLabError as e:
            raise ConfigError(str(e), "domain") from e


class KernelBlock(BaseModel):
    model_config = ConfigDict(extra="forbid")

    variant: KernelVariant = KernelVariant.BALL
    center: list[float] | None = None


class Tolerances(BaseModel):
    """Acceptance thresholds; unset ones come from the lab settings."""

    model_config = ConfigDict(extra="forbid")

    final_gap: PositiveFloat | None = None
    x0_independence: PositiveFloat | None = None
    strip_final_gap: PositiveFloat | None = None
    capacity_rel: PositiveFloat | None = None


class ExperimentConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    subcommand: Subcommand
    p: float = Field(default=2.0, gt=1.0, allow_inf_nan=False)
    seed: int = 0
    out: Path = Path("gammalab-out")
    format: OutputFormat = OutputFormat.JSON
    domain: DomainBlock = Field(default_factory=DomainBlock)
    kernel: KernelBlock = Field(default_factory=KernelBlock)
    schedule: list[PositiveFloat] = Field(default_factory=list)
    loads: list[str] | None = None
    offset: list[float] | None = None
    margins: list[PositiveFloat] = Field(default_factory=list)
    measure: PositiveFloat = 1.0
    scan_step: PositiveFloat | None = None
    zs: list[float] = Field(default_factory=list)
    beta_range: tuple[PositiveFloat, PositiveFloat] = (0.02, 0.5)
    samples: int = Field(default=10_000, ge=1000)
    etas: list[PositiveFloat] = Field(default_factory=list)
    eta: PositiveFloat | None = None
    measures: PositiveInt = 10
    density: float = Field(default=1.0, gt=0.0, le=1.0)
    trials: PositiveInt = 200
    pairs: PositiveInt = 1000
    tolerances: Tolerances = Field(default_factory=Tolerances)


_DEFAULTS: dict[Subcommand, dict] = {
    Subcommand.GAMMA_SWEEP: {"domain": {"dim": 2, "n": 96}, "schedule": [0.2, 0.1, 0.05, 0.025]},
    Subcommand.STRIP_EXAMPLE: {
        "domain": {"dim": 2, "n": 256},
        "schedule": [4, 8, 16, 32],
        "margins": [0.2, 0.1, 0.05, 0.02, 0.002],
    },
    Subcommand.CAPACITY: {
        "domain": {"dim": 2, "n": 256, "lengths": [2.0, 2.0], "origin": [-1.0, -1.0]},
        "schedule": [0.08, 0.04, 0.02],
    },
    Subcommand.PHI_DEFECT: {},
    Subcommand.COVERING_CHECK: {"zs": [0.3, 0.7], "etas": [0.2, 0.3, 0.4]},
    Subcommand.IDENTITY_CHECK: {"domain": {"dim": 2, "n": 16}},
    Subcommand.MASS_BOUND: {"domain": {"dim": 1, "n": 200}},
}


def _merge(base: dict, override: dict) -> dict:
    merged = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def _read_toml(path: str | Path) -> dict:
    try:
        with open(path, "rb") as f:
            return tomllib.load(f)
    except OSError as e:
        raise ConfigError(f"Unable to read config | {path} | {type(e).__name__}: {e}", "--config") from e
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"Unable to parse config | {path} | {e}", "--config") from e


def load_config(
    subcommand: Subcommand | str,
    path: str | Path | None = None,
    overrides: dict | None = None,
) -> ExperimentConfig:
    """Built-in defaults < config file < flag overrides, validated as an ExperimentConfig."""
    subcommand = Subcommand(subcommand)
    data = _merge(_DEFAULTS[subcommand], _read_toml(path) if path is not None else {})
    data = _merge(data, overrides or {})
    data["subcommand"] = subcommand
    try:
        config = ExperimentConfig.model_validate(data)
    except ValidationError as e:
        error = e.errors()[0]
        field_path = ".".join(str(part) for part in error["loc"])
        raise ConfigError(f"Unable to validate config | {field_path}: {error['msg']}", field_path) from e
    _check_subcommand(config)
    return config


def _check_subcommand(config: ExperimentConfig) -> None:
    dim = config.domain.dim
    match config.subcommand:
        case Subcommand.GAMMA_SWEEP:
            if config.kernel.variant == KernelVariant.DENSE:
                raise ConfigError("Unable to validate config | sweeps take ball or strip kernels", "kernel.variant")
            if config.kernel.variant == KernelVariant.STRIP and dim != 2:
                raise ConfigError("Unable to validate config | strip kernels need dim = 2", "domain.dim")
            if config.offset is not None and len(config.offset) != dim:
                raise ConfigError(f"Unable to validate config | offset needs {dim} components", "offset")
            if not config.schedule:
                raise ConfigError("Unable to validate config | empty schedule", "schedule")
        case Subcommand.STRIP_EXAMPLE:
            unit_square = config.domain.lengths in (None, [1.0, 1.0]) and config.domain.origin in (None, [0.0, 0.0])
            if dim != 2 or not unit_square:
                raise ConfigError("Unable to validate config | the strip example runs on the unit square", "domain")
        case Subcommand.CAPACITY:
            if not config.schedule:
                raise ConfigError("Unable to validate config | empty schedule of radii", "schedule")
        case Subcommand.COVERING_CHECK:
            if not config.beta_range[0] < config.beta_range[1]:
                raise ConfigError("Unable to validate config | beta_range must be increasing", "beta_range")
            if any(eta >= 0.5 for eta in config.etas):
                raise ConfigError("Unable to validate config | every eta must be below 1/2", "etas")
        case Subcommand.MASS_BOUND:
            if config.eta is not None and config.eta >= 0.5:
                raise ConfigError("Unable to validate config | eta must be below 1/2", "eta")


def _tail_slack(values) -> float:
    """Smallest decrease between consecutive entries of the second half (negative when one increases)."""
    values = list(values)
    start = min(len(values) // 2, max(len(values) - 2, 0))
    tail = values[start:]
    return min((a - b for a, b in zip(tail, tail[1:])), default=0.0)


def _decrease_slack(values) -> float:
    return min((a - b for a, b in zip(values, values[1:])), default=0.0)


def _run_gamma_sweep(config: ExperimentConfig, builder: ReportBuilder) -> None:
    settings = get_lab_settings()
    domain = config.domain.build()
    loads = standard_loads(domain)
    if config.loads is not None:
        known = {name for name, _ in loads}
        unknown = sorted(set(config.loads) - known)
        if unknown:
            raise ConfigError(f"Unable to validate config | unknown loads {unknown}, known {sorted(known)}", "loads")
        loads = [(name, load) for name, load in loads if name in config.loads]

    independence = None
    if config.kernel.variant == KernelVariant.STRIP:
        sweep = gamma_sweep(config.p, KernelFamily.strip(domain, [int(k) for k in config.schedule]), loads)
    elif config.offset is not None:
        independence = x0_independence(config.p, domain, config.schedule, loads, config.offset)
        sweep = independence.centred
    else:
        sweep = gamma_sweep(config.p, KernelFamily.ball_average(domain, config.schedule, config.kernel.center), loads)
    builder.record_solve(sweep.converged)

    parameter = "epsilon" if sweep.variant == KernelVariant.BALL else "k"
    builder.add_table(
        "gamma_sweep",
        (parameter, "load_id", "min_k", "limit_min", "gap", "relative_gap", "gradient_only_min", "converged"),
        [
            (r.parameter, r.load_id, r.min_k, r.limit_min, r.gap, r.relative_gap, r.gradient_only_min, r.converged)
            for r in sweep.rows
        ],
    )
    for load_id in sweep.load_ids:
        builder.add_curve(f"gap_{load_id}", sweep.schedule.values, sweep.gaps(load_id), parameter, "relative_gap")

    builder.check(
        "gap_trend",
        sweep.trend_ok,
        min(_tail_slack(sweep.gaps(load_id)) for load_id in sweep.load_ids),
        "relative gaps nonincreasing over the second half of the schedule",
    )
    threshold = config.tolerances.final_gap or (
        settings.gamma_final_gap if config.p == 2.0 else settings.gamma_final_gap_relaxed
    )
    builder.check_at_most("final_gap", sweep.final_gap, threshold)
    if sweep.variant == KernelVariant.BALL:
        scale = max(1.0, max(abs(r.limit_min) for r in sweep.rows))
        builder.check_at_least("domination", sweep.domination_slack, -1e-6 * scale, "min F_k >= min F, min F_0")
    if independence is not None:
        builder.record_solve(independence.shifted.converged)
        tolerance = config.tolerances.x0_independence or settings.x0_independence_tol
        builder.check_at_most("x0_independence", independence.disagreement, tolerance)


def _run_strip_example(config: ExperimentConfig, builder: ReportBuilder) -> None:
    settings = get_lab_settings()
    domain = config.domain.build()
    ks = [int(k) for k in config.schedule]
    u = GridFunction.from_callable(domain, lambda x, y: np.sin(math.pi * x) * np.sin(math.pi * y))
    target = 0.5 + 0.5 * math.pi**2

    result = strip_example_check(u, ks)
    builder.add_table("strip_example", ("k", "energy", "gap"), [(s.k, s.total, s.gap) for s in result.steps])
    builder.add_curve("strip_gap", [s.k for s in result.steps], result.gaps, "k", "gap")
    builder.check_at_most("discrete_limit", abs(result.limit - target), 1e-2, f"limit {result.limit:.10g}")
    builder.check("gap_decreasing", result.decreasing, _decrease_slack(result.gaps))
    builder.check_at_most("final_gap", result.final_gap, config.tolerances.strip_final_gap or settings.strip_final_gap)
    builder.check_at_most("strip_moment_identity", strip_moment_identity(Strip(domain, ks[-1]), u), PROPERTY_TOLERANCE)

    ball_family = KernelFamily.ball_average(domain, [0.2, 0.1, 0.05])
    ball = vanishing_nu_check(ball_family, domain, config.margins)
    strip = vanishing_nu_check(KernelFamily.strip(domain, ks), domain, config.margins)
    builder.add_table(
        "concentration_defect",
        ("margin", "ball_defect", "strip_defect"),
        list(zip(ball.margins, ball.defects, strip.defects, strict=True)),
    )
    builder.check("vanishing_nu_ball", ball.passed, ball.tolerance - ball.defects[-1])
    builder.check("concentrating_strip", not strip.passed, strip.defects[-1] - strip.tolerance)


def _run_capacity(config: ExperimentConfig, builder: ReportBuilder) -> None:
    domain = config.domain.build()
    tolerance = config.tolerances.capacity_rel or get_lab_settings().capacity_rel_tol
    center = None if config.kernel.center is None else tuple(config.kernel.center)
    epsilons = sorted(config.schedule, reverse=True)

    rows, capacities = [], []
    for epsilon in epsilons:
        solved = capacitary_potential(domain, config.p, epsilon, center)
        builder.record_solve(solved.converged)
        radial = radial_capacity(epsilon)
        capacities.append(solved.energy)
        rows.append((epsilon, solved.energy, radial, abs(solved.energy - radial) / radial, solved.iterations))
        if config.p == 2.0 and domain.dim == 2:
            builder.check_at_most(f"radial_capacity_eps_{epsilon:g}", rows[-1][3], tolerance)

    builder.add_table("capacity", ("epsilon", "capacity", "radial", "relative_error", "iterations"), rows)
    builder.add_curve("capacity", epsilons, capacities, "epsilon", "capacity")
    builder.check("capacity_decreasing", _decrease_slack(capacities) > 0, _decrease_slack(capacities))


def _run_phi_defect(config: ExperimentConfig, builder: ReportBuilder) -> None:
    p, measure = config.p, config.measure
    certificate = nonrepresentability_certificate(p, measure, config.scan_step)
    w = certificate.witness
    builder.add_table(
        "certificate",
        ("p", "measure", "verdict", "max_residual", "s1", "s2", "t", "triples_scanned"),
        [(p, measure, certificate.verdict, certificate.max_residual, w.s1, w.s2, w.t, certificate.triples_scanned)],
    )
    detail = f"{certificate.verdict} at (s1, s2, t) = ({w.s1:.6g}, {w.s2:.6g}, {w.t:.6g}), R = {w.residual:.6e}"

    levels = np.linspace(0.0, measure, 20)
    closed_form_gap = max(abs(phi_p(s, measure, p) - two_level_integral(s, measure, p)) for s in levels)
    builder.check_at_most("phi_closed_form", closed_form_gap, 1e-12 * max(1.0, measure))
    half_gap = abs(phi_p(0.5 * measure, measure, p) - measure * 2.0**-p)
    builder.check_at_most("phi_half_measure", half_gap, 1e-12 * max(1.0, measure))

    rigidity = h_p_rigidity(p, measure)
    probe = phi_second_derivative_probe(p, measure)
    if p == 2.0:
        builder.check_at_most("representable_consistent", certificate.max_residual, REPRESENTABLE_TOLERANCE, detail)
        builder.check_at_most("h_p_rigidity", rigidity, 1e-12)
        builder.check_at_most("phi_second_derivative_spread", probe.spread, 1e-6)
    else:
        builder.check_at_least("not_representable_witness", certificate.max_residual, 1e-4, detail)
        builder.check_at_least("h_p_rigidity", rigidity, 0.1 * measure ** (1.0 / (p - 1.0)))
        builder.check_at_least("phi_second_derivative_spread", probe.spread, 1e-3)

    s = np.linspace(0.0, measure, 201)
    builder.add_curve("phi", s, [phi_p(x, measure, p) for x in s], "s", "phi")
    builder.add_curve("phi_second_derivative", probe.s, probe.second_derivative, "s", "phi_second_derivative")


def _run_covering_check(config: ExperimentConfig, builder: ReportBuilder) -> None:
    grid_z = np.linspace(-1.0, 1.0, 20)
    grid_beta = np.linspace(config.beta_range[0], config.beta_range[1], 20)
    agreement = gamma_oracle_agreement(grid_z, grid_beta, config.samples)
    builder.check_at_most("gamma_sampling_oracle", agreement, 1.0, "deviation in units of 3 beta / samples")

    triangles = [triangle_comparison(z, m) for z in np.linspace(0.1, 1.0, 10) for m in range(2, 51)]
    builder.check("triangle_comparison", all(c.holds for c in triangles), min(c.slack for c in triangles))

    rows = []
    for eta in config.etas:
        eps = 3.0 / 64.0 * eta * eta
        for z in np.linspace(eta, 2.0, 20):
            lower, refined = covering_lower_bound(z, eps, eta), refined_covering_check(z, eps)
            rows.append((eta, eps, z, lower.value, lower.bound, refined.bound))
    builder.add_table("covering_average", ("eta", "eps", "z", "average", "lower_bound", "refined_bound"), rows)
    lower_slack = min((r[3] - r[4] for r in rows), default=0.0)
    refined_slack = min((r[3] - r[5] for r in rows), default=0.0)
    builder.check("covering_lower_bound", lower_slack >= 0, lower_slack)
    builder.check("refined_covering_bound", refined_slack >= -1e-15, refined_slack)

    betas = np.linspace(config.beta_range[0], config.beta_range[1], 401)
    for z in config.zs:
        builder.add_curve(f"gamma_z_{z:g}", betas, gamma_z(z, betas), "beta", "gamma")


def _run_identity_check(config: ExperimentConfig, builder: ReportBuilder) -> None:
    domain = config.domain.build()
    rng = np.random.default_rng(config.seed)
    p = config.p
    dense = random_dense_kernel(domain, rng)
    ball = BallAverage(domain, domain.center, 0.25 * min(domain.lengths))
    specs = {
        "limit": FunctionalSpec(p, domain),
        "dense": FunctionalSpec(p, domain, dense),
        "ball": FunctionalSpec(p, domain, ball),
    }

    def random_u() -> GridFunction:
        return random_grid_function(domain, rng)

    worst = {"variance_identity": 0.0}
    for _ in range(config.trials):
        worst["variance_identity"] = max(worst["variance_identity"], variance_identity(random_u()))
    builder.check_at_most("variance_identity", worst["variance_identity"], 1e-12)

    quadratic, cubic = FunctionalSpec(2.0, domain, dense), FunctionalSpec(3.0, domain, dense)
    pairs = [(random_u(), random_u()) for _ in range(config.trials)]
    worst["parallelogram_p2"] = max(
        abs(parallelogram_defect(quadratic, u, v))
        / max(1.0, evaluate(quadratic, u).total + evaluate(quadratic, v).total)
        for u, v in pairs
    )
    builder.check_at_most("parallelogram_p2", worst["parallelogram_p2"], PROPERTY_TOLERANCE)
    largest_cubic = max(abs(parallelogram_defect(cubic, u, v)) for u, v in pairs)
    builder.check_at_least("parallelogram_p3", largest_cubic, 1e-6)

    for name, spec in specs.items():
        truncation = [
            check_truncation_monotone(spec, random_u(), random_contraction(rng)) for _ in range(config.pairs)
        ]
        builder.check(f"truncation_{name}", all(c.holds for c in truncation), min(c.slack for c in truncation))
        oscillation = [check_oscillation_bound(spec, random_u()) for _ in range(config.pairs)]
        builder.check(f"oscillation_{name}", all(c.holds for c in oscillation), min(c.slack for c in oscillation))
        worst[f"finite_difference_{name}"] = finite_difference_check(spec, random_u(), rng=rng)
        builder.check_at_most(f"finite_difference_{name}", worst[f"finite_difference_{name}"], 1e-6)

    chain = jensen_chain(ball, random_u(), p)
    chain_slack = min(chain.nonlocal_term - chain.ball_term, chain.ball_term - chain.median_term)
    builder.check("jensen_chain", chain.holds, chain_slack)
    probe = m_p_continuity_probe(random_u(), p, rng=rng)
    builder.check("m_p_continuity", probe.decreasing, _decrease_slack(probe.moduli))
    builder.add_table("identity_check", ("suite", "worst"), sorted(worst.items()))


def _run_mass_bound(config: ExperimentConfig, builder: ReportBuilder) -> None:
    domain = config.domain.build()
    rng = np.random.default_rng(config.seed)
    measures = [random_symmetric_measure(domain, rng, config.density) for _ in range(config.measures)]
    rows = []
    for index, mu in enumerate(measures):
        bound = measure_mass_bound(mu, config.eta)
        rows.append(
            (index, bound.off_diagonal, bound.m_star, bound.bound, bound.ratio, bound.slack, bound.averaged_bound)
        )
    builder.add_table(
        "mass_bound", ("measure", "off_diagonal", "m_star", "bound", "ratio", "slack", "averaged_bound"), rows
    )
    builder.check("mass_bound", all(r[5] >= -1e-12 * max(1.0, r[3]) for r in rows), min(r[5] for r in rows))

    eta = get_lab_settings().default_eta if config.eta is None else config.eta
    swap = fubini_swap_check(measures[0], checkerboard_samples(3.0 / 64.0 * eta * eta))
    builder.check_at_most("fubini_swap", swap, 1e-12)


_RUNNERS: dict[Subcommand, Callable[[ExperimentConfig, ReportBuilder], None]] = {
    Subcommand.GAMMA_SWEEP: _run_gamma_sweep,
    Subcommand.STRIP_EXAMPLE: _run_strip_example,
    Subcommand.CAPACITY: _run_capacity,
    Subcommand.PHI_DEFECT: _run_phi_defect,
    Subcommand.COVERING_CHECK: _run_covering_check,
    Subcommand.IDENTITY_CHECK: _run_identity_check,
    Subcommand.MASS_BOUND: _run_mass_bound,
}


def exit_code(report: Report) -> ExitCode:
    if not report.converged:
        return ExitCode.NON_CONVERGENCE
    if not report.passed:
        return ExitCode.ASSERTION_FAILURE
    return ExitCode.PASS


def run(subcommand: Subcommand | str, config: ExperimentConfig) -> tuple[Report, ExitCode]:
    """Run one experiment suite; the report is complete even when assertions fail."""
    subcommand = Subcommand(subcommand)
    builder = ReportBuilder(subcommand.value, config.model_dump(mode="json"), config.seed)
    start = time.perf_counter()
    _RUNNERS[subcommand](config, builder)
    report = builder.build(wall_clock_seconds=time.perf_counter() - start)
    code = exit_code(report)
    if report.first_failure is not None:
        logger.error(f"{subcommand}: first failing assertion {report.first_failure.name}")
    logger.info(f"{subcommand}: {len(report.assertions)} assertions, exit status {int(code)}")
    return report, code


def _float_list(text: str) -> list[float]:
    try:
        return [float(item) for item in text.split(",") if item.strip()]
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"expected comma separated numbers, got {text!r}") from e


# flag dest -> dotted config path
_OVERRIDES: dict[str, str] = {
    "out": "out",
    "format": "format",
    "seed": "seed",
    "p": "p",
    "n": "domain.n",
    "variant": "kernel.variant",
    "schedule": "schedule",
    "offset": "offset",
    "margins": "margins",
    "measure": "measure",
    "scan_step": "scan_step",
    "zs": "zs",
    "samples": "samples",
    "eta": "eta",
    "measures": "measures",
    "trials": "trials",
    "pairs": "pairs",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gammalab", description="Numerical experiments on nonlocal energies")
    subparsers = parser.add_subparsers(dest="subcommand", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="TOML experiment config")
    common.add_argument("--out", type=Path, help="Output directory")
    common.add_argument("--format", choices=[f.value for f in OutputFormat], help="Report format")
    common.add_argument("--seed", type=int, help="Seed of randomized suites")
    common.add_argument("--p", type=float, help="Exponent p > 1")
    common.add_argument("--n", type=int, help="Interior nodes per axis")
    common.add_argument("--log-level", help="Log level of the run")

    sweep = subparsers.add_parser(Subcommand.GAMMA_SWEEP.value, parents=[common], help="Minima of F_k - G vs F - G")
    sweep.add_argument("--variant", choices=[KernelVariant.BALL.value, KernelVariant.STRIP.value])
    sweep.add_argument("--schedule", type=_float_list, help="Radii (ball) or k values (strip)")
    sweep.add_argument("--offset", type=_float_list, help="Shift of the ball center for the independence run")

    strip = subparsers.add_parser(Subcommand.STRIP_EXAMPLE.value, parents=[common], help="Strip kernels on u*")
    strip.add_argument("--schedule", type=_float_list, help="k values")
    strip.add_argument("--margins", type=_float_list, help="Margins of the compacts for the concentration check")

    capacity = subparsers.add_parser(Subcommand.CAPACITY.value, parents=[common], help="p-capacity of small balls")
    capacity.add_argument("--schedule", type=_float_list, help="Ball radii")

    phi = subparsers.add_parser(Subcommand.PHI_DEFECT.value, parents=[common], help="Additivity defect of Phi_p")
    phi.add_argument("--measure", type=float, help="|Omega|")
    phi.add_argument("--scan-step", type=float, help="Scan spacing as a fraction of |Omega|")

    covering = subparsers.add_parser(Subcommand.COVERING_CHECK.value, parents=[common], help="Checkerboard geometry")
    covering.add_argument("--zs", type=_float_list, help="z values of the gamma curves")
    covering.add_argument("--samples", type=int, help="Offsets sampled by the gamma oracle")

    identity = subparsers.add_parser(Subcommand.IDENTITY_CHECK.value, parents=[common], help="Structural suites")
    identity.add_argument("--trials", type=int, help="Random samples of the variance and parallelogram suites")
    identity.add_argument("--pairs", type=int, help="Random samples of the truncation and oscillation suites")

    mass = subparsers.add_parser(Subcommand.MASS_BOUND.value, parents=[common], help="Off-diagonal mass bound")
    mass.add_argument("--eta", type=float, help="Half-width of the diagonal strip")
    mass.add_argument("--measures", type=int, help="Random measures to check")
    return parser


def _flag_overrides(args: argparse.Namespace) -> dict:
    overrides: dict = {}
    for dest, dotted in _OVERRIDES.items():
        value = getattr(args, dest, None)
        if value is None:
            continue
        *parents, leaf = dotted.split(".")
        node = overrides
        for key in parents:
            node = node.setdefault(key, {})
        node[leaf] = str(value) if isinstance(value, Path) else value
    return overrides


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = load_config(args.subcommand, args.config, _flag_overrides(args))
    except ConfigError as e:
        write_stderr(f"{e} (field: {e.field_path})" if e.field_path else str(e))
        return int(ExitCode.CONFIG_ERROR)

    with LabLog(level=args.log_level, directory=config.out):
        try:
            report, code = run(config.subcommand, config)
        except ConfigError as e:
            write_stderr(f"{e} (field: {e.field_path})" if e.field_path else str(e))
            return int(ExitCode.CONFIG_ERROR)
        except GammaLabError as e:
            write_stderr(str(e))
            return int(ExitCode.CONFIG_ERROR)
        try:
            emit(report, config.out, config.format)
        except OSError:
            return int(ExitCode.IO_ERROR)
    if report.first_failure is not None:
        write_stderr(f"Assertion failed | {report.first_failure.name}: {report.first_failure.detail}")
    return int(code)


if __name__ == "__main__":
    sys.exit(main())
