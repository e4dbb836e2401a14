import csv
import json
import logging
import math
import numpy as np
from dataclasses import dataclass, field
from enum import Enum
from gammalab.core.constants import OutputFormat
from gammalab.core.exceptions import InvalidInputError
from gammalab.core.log_utils import check_directory_permissions, write_stderr
from gammalab.core.thread_safety import auto_thread_safe
from importlib.metadata import PackageNotFoundError, version
from pathlib import Path

logger = logging.getLogger(__name__)


def library_version() -> str:
    try:
        return version("gammalab")
    except PackageNotFoundError:
        return "0+unknown"


@dataclass(frozen=True)
class Assertion:
    """A checked inequality; ``slack`` is nonnegative exactly when it holds."""

    name: str
    passed: bool
    slack: float
    detail: str = ""


@dataclass(frozen=True)
class Table:
    name: str
    columns: tuple[str, ...]
    rows: tuple[tuple, ...]


@dataclass(frozen=True)
class Curve:
    """Plot data: ``y`` against ``x``, written as a two-column CSV."""

    name: str
    x: tuple[float, ...]
    y: tuple[float, ...]
    x_label: str = "x"
    y_label: str = "value"


@dataclass(frozen=True)
class Report:
    subcommand: str
    config: dict
    seed: int
    assertions: tuple[Assertion, ...] = ()
    tables: tuple[Table, ...] = ()
    curves: tuple[Curve, ...] = ()
    converged: bool = True
    wall_clock_seconds: float = 0.0
    version: str = field(default_factory=library_version)

    @property
    def passed(self) -> bool:
        return all(assertion.passed for assertion in self.assertions)

    @property
    def first_failure(self) -> Assertion | None:
        return next((assertion for assertion in self.assertions if not assertion.passed), None)


@auto_thread_safe(["check", "check_at_most", "check_at_least", "add_table", "add_curve", "record_solve", "build"])
class ReportBuilder:
    """Collects the results of one run; safe to feed from worker threads."""

    def __init__(self, subcommand: str, config: dict, seed: int):
        self.subcommand = subcommand
        self.config = config
        self.seed = seed
        self.assertions: list[Assertion] = []
        self.tables: list[Table] = []
        self.curves: list[Curve] = []
        self.converged = True

    def check(self, name: str, passed: bool, slack: float, detail: str = "") -> Assertion:
        assertion = Assertion(name, bool(passed), float(slack), detail)
        self.assertions.append(assertion)
        level = logging.INFO if assertion.passed else logging.WARNING
        logger.log(level, f"{'PASS' if assertion.passed else 'FAIL'} {name}: slack {assertion.slack:.3e} {detail}")
        return assertion

    def check_at_most(self, name: str, value: float, limit: float, detail: str = "") -> Assertion:
        slack = limit - value
        return self.check(name, slack >= 0, slack, detail or f"{value:.6g} <= {limit:.6g}")

    def check_at_least(self, name: str, value: float, floor: float, detail: str = "") -> Assertion:
        slack = value - floor
        return self.check(name, slack >= 0, slack, detail or f"{value:.6g} >= {floor:.6g}")

    def add_table(self, name: str, columns, rows) -> None:
        self.tables.append(Table(name, tuple(columns), tuple(tuple(row) for row in rows)))

    def add_curve(self, name: str, x, y, x_label: str = "x", y_label: str = "value") -> None:
        x, y = tuple(float(v) for v in x), tuple(float(v) for v in y)
        if len(x) != len(y):
            raise InvalidInputError(f"Unable to add curve | {name}: {len(x)} abscissae for {len(y)} values")
        self.curves.append(Curve(name, x, y, x_label, y_label))

    def record_solve(self, converged: bool) -> None:
        self.converged = self.converged and bool(converged)

    def build(self, wall_clock_seconds: float = 0.0) -> Report:
        return Report(
            subcommand=self.subcommand,
            config=self.config,
            seed=self.seed,
            assertions=tuple(self.assertions),
            tables=tuple(self.tables),
            curves=tuple(self.curves),
            converged=self.converged,
            wall_clock_seconds=wall_clock_seconds,
        )


def _plain(value):
    """JSON-ready copy of value; non-finite floats become the strings 'inf', '-inf' and 'nan'."""
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, np.generic):
        value = value.item()
    if isinstance(value, float):
        return value if math.isfinite(value) else str(value)
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple, np.ndarray)):
        return [_plain(v) for v in value]
    if isinstance(value, Path):
        return str(value)
    return value


def _cell(value) -> str:
    if isinstance(value, np.generic):
        value = value.item()
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return format(value, ".17g")
    if isinstance(value, Enum):
        return str(value.value)
    return str(value)


def report_payload(report: Report) -> dict:
    return _plain(
        {
            "subcommand": report.subcommand,
            "config": report.config,
            "seed": report.seed,
            "version": report.version,
            "passed": report.passed,
            "converged": report.converged,
            "assertions": [
                {"name": a.name, "passed": a.passed, "slack": a.slack, "detail": a.detail} for a in report.assertions
            ],
            "tables": [{"name": t.name, "columns": t.columns, "rows": t.rows} for t in report.tables],
            "curves": [
                {"name": c.name, "x_label": c.x_label, "y_label": c.y_label, "x": c.x, "y": c.y} for c in report.curves
            ],
            "wall_clock_seconds": report.wall_clock_seconds,
        }
    )


def _open_for_write(path: Path):
    try:
        return open(path, "w", encoding="UTF-8", newline="")
    except OSError as e:
        write_stderr(f"Unable to write report | {path} | {type(e).__name__}: {e}")
        raise


def _write_csv(path: Path, header, rows) -> Path:
    with _open_for_write(path) as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        writer.writerows([_cell(value) for value in row] for row in rows)
    return path


def _write_curves(report: Report, out_dir: Path) -> list[Path]:
    return [
        _write_csv(out_dir / f"{c.name}.curve.csv", (c.x_label, c.y_label), zip(c.x, c.y, strict=True))
        for c in report.curves
    ]


def emit_json(report: Report, out_dir: str | Path) -> list[Path]:
    """report.json (sorted keys) plus one curve CSV per curve."""
    out_dir = Path(out_dir)
    check_directory_permissions(out_dir)
    path = out_dir / "report.json"
    text = json.dumps(report_payload(report), sort_keys=True, indent=2, allow_nan=False)
    with _open_for_write(path) as f:
        f.write(text + "\n")
    return [path, *_write_curves(report, out_dir)]


def emit_csv(report: Report, out_dir: str | Path) -> list[Path]:
    """assertions.csv, one CSV per table and one curve CSV per curve."""
    out_dir = Path(out_dir)
    check_directory_permissions(out_dir)
    paths = [
        _write_csv(
            out_dir / "assertions.csv",
            ("name", "passed", "slack", "detail"),
            ((a.name, a.passed, a.slack, a.detail) for a in report.assertions),
        )
    ]
    paths += [_write_csv(out_dir / f"{table.name}.csv", table.columns, table.rows) for table in report.tables]
    return paths + _write_curves(report, out_dir)


def emit(report: Report, out_dir: str | Path, fmt: OutputFormat | str = OutputFormat.JSON) -> list[Path]:
    if OutputFormat(fmt) == OutputFormat.CSV:
        paths = emit_csv(report, out_dir)
    else:
        paths = emit_json(report, out_dir)
    logger.info(f"wrote {len(paths)} report file(s) to {out_dir}")
    return paths
