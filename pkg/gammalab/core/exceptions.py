class GammaLabError(ValueError):
    """Base class for every error raised by gammalab."""


class InvalidInputError(GammaLabError):
    """Non-finite values, wrong shapes or mismatched domains."""


class ZeroTraceError(InvalidInputError):
    """A sampled function does not vanish on the boundary of the domain."""


class ContractViolationError(GammaLabError):
    """A caller-supplied object breaks its documented contract."""


class RefusalError(GammaLabError):
    """The hypotheses of an experiment are not met, so it is not run."""


class ConfigError(GammaLabError):
    """An experiment configuration does not validate."""

    def __init__(self, message: str, field_path: str = ""):
        super().__init__(message)
        self.field_path = field_path
