"""Exception hierarchy shared by all modules."""


class CekError(Exception):
    """Base class for every error raised by this package."""


class ModelError(CekError):
    """Malformed graph, CPT set, query or model file."""


class EnumerationLimitError(ModelError):
    """Exact enumeration would exceed the configured state-space cap."""


class DataError(CekError):
    """Malformed dataset, CSV cell or column-role mismatch."""


class SupportError(CekError):
    """Common support is violated and the active policy forbids proceeding."""

    def __init__(self, message, strata=()):
        super().__init__(message)
        self.strata = list(strata)


class EstimationError(CekError):
    """An estimator cannot be evaluated on the given inputs."""


class RankDeficientError(EstimationError):
    """Design matrix of a logistic fit is rank deficient."""

    def __init__(self, message, columns=()):
        super().__init__(message)
        self.columns = list(columns)
