"""Exception hierarchy shared by every pipeline stage."""


class PerceptBiasError(Exception):
    """Base class for all errors raised by this package."""


class SchemaError(PerceptBiasError):
    """Input file or state configuration does not match the expected layout."""


class ConfigError(PerceptBiasError):
    """A configuration object violates one of its invariants."""


class SpecificationError(PerceptBiasError):
    """A model specification is invalid for the data it is applied to."""


class IdentificationError(PerceptBiasError):
    """The parameter of interest is not identified (e.g. collinear with the fixed effects)."""


class EmptySampleError(PerceptBiasError):
    """No usable rows remain after filtering."""


class InferenceError(PerceptBiasError):
    """Variance estimation is impossible (e.g. fewer than two clusters)."""


class VarianceWarning(UserWarning):
    """A point estimate was produced but its variance is undefined (reported as NaN)."""


class ConvergenceError(PerceptBiasError):
    """An iterative routine hit its iteration cap.

    Parameters
    ----------
    message : str
    residual : float, optional
        Last convergence measure reached before giving up.
    trajectory : list of float, optional
        History of the convergence measure.
    """

    def __init__(self, message, residual=None, trajectory=None):
        super().__init__(message)
        self.residual = residual
        self.trajectory = list(trajectory) if trajectory is not None else []


class SeparationError(PerceptBiasError):
    """The likelihood increases without bound along some direction.

    Parameters
    ----------
    message : str
    direction : dict
        Unit direction of divergence keyed by coefficient name.
    """

    def __init__(self, message, direction=None):
        super().__init__(message)
        self.direction = dict(direction or {})
