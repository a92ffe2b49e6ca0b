"""Exception hierarchy shared by all moeplan modules."""


class MoEPlanError(Exception):
    """Base class for every error raised by moeplan."""


class InvalidDimsError(MoEPlanError, ValueError):
    """A model configuration violates one of its invariants."""


class InfeasibleBudgetError(MoEPlanError, ValueError):
    """A parameter budget cannot be met by any configuration."""


class DesignError(MoEPlanError, ValueError):
    """A regression design cannot be built from the given records."""


class SingularDesignError(DesignError):
    """The design matrix is rank deficient.

    ``columns`` names the columns taking part in the linear dependency.
    """

    def __init__(self, message, columns=()):
        super().__init__(message)
        self.columns = tuple(columns)


class IdentifiabilityError(MoEPlanError, ValueError):
    """Curve data cannot identify all coefficients (e.g. a single N value)."""


class ConvergenceError(MoEPlanError, RuntimeError):
    """Every optimizer start failed; ``best`` holds the best partial result."""

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class InvalidConstraintsError(MoEPlanError, ValueError):
    """Planning constraints are inconsistent."""


class SearchSpaceTooLarge(MoEPlanError, ValueError):
    """Exhaustive enumeration would exceed the configured cell cap."""


class FileFormatError(MoEPlanError, ValueError):
    """An input file does not follow its documented format."""
