"""Exception types shared across the package."""


class CrflabError(Exception):
    """Base class for all package errors."""


class ConfigError(CrflabError):
    """Invalid configuration or scenario parameters."""


class BoundaryDataError(CrflabError):
    """A stencil needs ghost data that is not available."""


class SingularMetricError(CrflabError):
    """A metric field is not positive definite where it must be."""


class AdmissibilityError(CrflabError):
    """The evolving form left the admissible cone (omega_tilde + i ddbar phi > 0)."""


class ReductionError(CrflabError):
    """Fundamental-domain reduction failed to terminate."""


class StepFailure(CrflabError):
    """Time stepper could not complete a step."""


class InsufficientDataError(CrflabError):
    """A diagnostic was asked for with too little history or too short a series."""


class OutOfRegimeError(CrflabError):
    """A check was invoked outside the parameter regime it certifies."""
