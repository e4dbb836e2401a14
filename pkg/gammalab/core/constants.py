import logging
from enum import IntEnum, StrEnum
from typing import Final

# Logging
DEFAULT_DATE_FORMAT: Final = "%Y-%m-%dT%H:%M:%S"
DEFAULT_ENCODING: Final = "UTF-8"
DEFAULT_TIMEZONE: Final = "UTC"
DEFAULT_FILE_MODE: Final = 0o755
MB_TO_BYTES: Final = 1024 * 1024

# Solver budgets
DEFAULT_CG_RTOL: Final = 1e-10
DEFAULT_CG_MAXITER_FACTOR: Final = 10
DEFAULT_GRADIENT_TOL: Final = 1e-8
DEFAULT_ENERGY_RTOL: Final = 1e-10
DEFAULT_MAX_ITERATIONS: Final = 5000
DEFAULT_ARMIJO_C: Final = 1e-4
DEFAULT_BACKTRACK_FACTOR: Final = 0.5
DEFAULT_NONMONOTONE_MEMORY: Final = 10

# Geometry and sampling
MIN_BALL_NODES: Final = 5
TRACE_TOLERANCE: Final = 1e-12
PMEDIAN_TOLERANCE: Final = 1e-12
MEDIAN_OFFSET_TOLERANCE: Final = 1e-8
ALPHA_SAMPLES: Final = 64
BETA_SAMPLES: Final = 16
DEFAULT_ETA: Final = 0.25
DEFECT_SCAN_STEP: Final = 0.05
REPRESENTABLE_TOLERANCE: Final = 1e-10
PROPERTY_TOLERANCE: Final = 1e-10

# Tiling of pairwise sums (pairs per tile)
PAIRWISE_TILE: Final = 1 << 21


class LogLevel(StrEnum):
    """Log levels"""

    CRITICAL = "CRITICAL"
    ERROR = "ERROR"
    WARNING = "WARNING"
    INFO = "INFO"
    DEBUG = "DEBUG"


class KernelVariant(StrEnum):
    """Nonlocal weight families"""

    BALL = "ball"
    STRIP = "strip"
    DENSE = "dense"


class ScheduleDirection(StrEnum):
    """Direction in which a kernel family is indexed"""

    DECREASING = "decreasing"
    INCREASING = "increasing"


class Subcommand(StrEnum):
    """Experiments exposed by the command line"""

    GAMMA_SWEEP = "gamma-sweep"
    STRIP_EXAMPLE = "strip-example"
    CAPACITY = "capacity"
    PHI_DEFECT = "phi-defect"
    COVERING_CHECK = "covering-check"
    IDENTITY_CHECK = "identity-check"
    MASS_BOUND = "mass-bound"


class OutputFormat(StrEnum):
    CSV = "csv"
    JSON = "json"


class Verdict(StrEnum):
    REPRESENTABLE_CONSISTENT = "REPRESENTABLE-CONSISTENT"
    NOT_REPRESENTABLE = "NOT-REPRESENTABLE"


class ExitCode(IntEnum):
    PASS = 0
    IO_ERROR = 1
    ASSERTION_FAILURE = 2
    NON_CONVERGENCE = 3
    CONFIG_ERROR = 4


LEVEL_MAP: Final = {
    LogLevel.DEBUG.value.lower(): logging.DEBUG,
    LogLevel.INFO.value.lower(): logging.INFO,
    LogLevel.WARNING.value.lower(): logging.WARNING,
    LogLevel.ERROR.value.lower(): logging.ERROR,
    LogLevel.CRITICAL.value.lower(): logging.CRITICAL,
}
