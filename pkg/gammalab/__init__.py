import logging
from gammalab.core.constants import ExitCode, KernelVariant, OutputFormat, Subcommand, Verdict
from gammalab.core.exceptions import (
    ConfigError,
    ContractViolationError,
    GammaLabError,
    InvalidInputError,
    RefusalError,
    ZeroTraceError,
)
from gammalab.core.settings import clear_settings_cache, get_lab_settings
from gammalab.energy import EnergyBreakdown, FunctionalSpec, eval_F_limit, eval_Fk
from gammalab.grid import Domain, GridFunction, discrete_gradient_energy, lipschitz_truncate, oscillation
from gammalab.kernel import BallAverage, Dense, KernelFamily, Strip, concentration_defect, mass
from gammalab.lablog import LabLog
from gammalab.report import library_version
from gammalab.solve import LinearLoad, SolveReport, capacitary_potential, minimize, minimize_limit

__all__ = (
    "BallAverage",
    "ConfigError",
    "ContractViolationError",
    "Dense",
    "Domain",
    "EnergyBreakdown",
    "ExitCode",
    "FunctionalSpec",
    "GammaLabError",
    "GridFunction",
    "InvalidInputError",
    "KernelFamily",
    "KernelVariant",
    "LabLog",
    "LinearLoad",
    "OutputFormat",
    "RefusalError",
    "SolveReport",
    "Strip",
    "Subcommand",
    "Verdict",
    "ZeroTraceError",
    "capacitary_potential",
    "clear_settings_cache",
    "concentration_defect",
    "discrete_gradient_energy",
    "eval_F_limit",
    "eval_Fk",
    "get_lab_settings",
    "lipschitz_truncate",
    "mass",
    "minimize",
    "minimize_limit",
    "oscillation",
)

__title__ = "gammalab"
__license__ = "MIT"
__version__ = library_version()

logging.getLogger(__name__).addHandler(logging.NullHandler())
