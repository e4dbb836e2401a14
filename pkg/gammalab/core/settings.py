from dotenv import load_dotenv
from functools import lru_cache
from gammalab.core.constants import (
    ALPHA_SAMPLES,
    BETA_SAMPLES,
    DEFAULT_ARMIJO_C,
    DEFAULT_BACKTRACK_FACTOR,
    DEFAULT_CG_MAXITER_FACTOR,
    DEFAULT_CG_RTOL,
    DEFAULT_DATE_FORMAT,
    DEFAULT_ENCODING,
    DEFAULT_ENERGY_RTOL,
    DEFAULT_ETA,
    DEFAULT_GRADIENT_TOL,
    DEFAULT_MAX_ITERATIONS,
    DEFAULT_NONMONOTONE_MEMORY,
    DEFAULT_TIMEZONE,
    DEFECT_SCAN_STEP,
    MIN_BALL_NODES,
    LogLevel,
)
from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict

# Lazy loading flag for dotenv
_dotenv_loaded = False


def _ensure_dotenv_loaded() -> None:
    """Ensure dotenv is loaded only once."""
    global _dotenv_loaded
    if not _dotenv_loaded:
        load_dotenv()
        _dotenv_loaded = True


class LabSettings(BaseSettings):
    """If any ENV variable is omitted, it falls back to default values here"""

    model_config = SettingsConfigDict(env_prefix="GAMMALAB_", env_file=".env", extra="allow")

    # Logging
    log_level: LogLevel = Field(default=LogLevel.INFO, description="Logging level for experiment runs")
    timezone: str = Field(default=DEFAULT_TIMEZONE, description="Timezone for log timestamps")
    encoding: str = Field(default=DEFAULT_ENCODING, description="Encoding of log and report files")
    date_format: str = Field(default=DEFAULT_DATE_FORMAT, description="Date format for log timestamps")
    appname: str = Field(default="gammalab", description="Logger name shown in every record")
    show_location: bool = Field(default=False, description="Show file, function and line in log records")
    log_to_file: bool = Field(default=False, description="Also write the run log into the output directory")
    log_filename: str = Field(default="gammalab.log", description="Run log filename")
    max_log_size_mb: int = Field(default=10, description="Size in megabytes before the run log rotates")
    log_backups: int = Field(default=3, description="Rotated run logs to keep")

    # Solvers
    cg_rtol: float = Field(default=DEFAULT_CG_RTOL, description="Relative residual target of conjugate gradients")
    cg_maxiter_factor: int = Field(default=DEFAULT_CG_MAXITER_FACTOR, description="CG iteration cap per unknown")
    gradient_tol: float = Field(default=DEFAULT_GRADIENT_TOL, description="Gradient sup-norm target of descent")
    energy_rtol: float = Field(default=DEFAULT_ENERGY_RTOL, description="Energy change allowed at convergence")
    max_iterations: int = Field(default=DEFAULT_MAX_ITERATIONS, description="Outer iteration cap, first-order solver")
    armijo_c: float = Field(default=DEFAULT_ARMIJO_C, description="Sufficient decrease constant")
    backtrack_factor: float = Field(default=DEFAULT_BACKTRACK_FACTOR, description="Step shrink factor")
    nonmonotone_memory: int = Field(default=DEFAULT_NONMONOTONE_MEMORY, description="Energies remembered by Armijo")
    workers: int = Field(default=1, description="Threads used for independent solves and pairwise tiles")

    # Geometry, sampling and scans
    min_ball_nodes: int = Field(default=MIN_BALL_NODES, description="Nodes required across a ball diameter")
    alpha_samples: int = Field(default=ALPHA_SAMPLES, description="Checkerboard offsets per period")
    beta_samples: int = Field(default=BETA_SAMPLES, description="Checkerboard periods in [eps, 2 eps)")
    default_eta: float = Field(default=DEFAULT_ETA, description="Diagonal strip half-width of the mass bound")
    scan_step: float = Field(default=DEFECT_SCAN_STEP, description="Defect scan resolution, fraction of |Omega|")

    # Memory management
    max_cached_operators: int = Field(default=32, description="Domains whose sparse operators stay cached")

    # Acceptance thresholds
    gamma_final_gap: float = Field(default=5e-2, description="Relative final gap of a p=2 Gamma sweep")
    gamma_final_gap_relaxed: float = Field(default=1e-1, description="Relative final gap of a p!=2 Gamma sweep")
    x0_independence_tol: float = Field(default=1e-2, description="Relative agreement of shifted-center sweeps")
    strip_final_gap: float = Field(default=6e-2, description="Absolute final gap of the strip example")
    vanishing_nu_tol: float = Field(default=2.5e-2, description="Final concentration defect over the largest mass")
    capacity_rel_tol: float = Field(default=5e-2, description="Relative agreement with the radial capacity")


@lru_cache(maxsize=1)
def get_lab_settings() -> LabSettings:
    """Get cached lab settings instance to avoid repeated instantiation."""
    _ensure_dotenv_loaded()
    return LabSettings()


def clear_settings_cache(reload_env: bool = True) -> None:
    """Clear lab settings cache. Next call to get_lab_settings() will create fresh instance.

    Args:
        reload_env: If True, also reset dotenv loaded flag to reload .env on next access
    """
    global _dotenv_loaded
    get_lab_settings.cache_clear()
    if reload_env:
        _dotenv_loaded = False
