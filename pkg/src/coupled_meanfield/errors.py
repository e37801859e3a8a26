"""Exception types raised across the package."""


class CoupledSystemError(Exception):
    """Base class for all package errors."""


class SingularConstraintJacobian(CoupledSystemError):
    """The particle Jacobian of the constraint is (numerically) rank deficient."""

    def __init__(self, message, index=None, sigma_min=None):
        super().__init__(message)
        self.index = index
        self.sigma_min = sigma_min


class NonSPDMass(CoupledSystemError):
    """Cholesky factorization of the effective mass failed."""


class StepRejected(CoupledSystemError):
    """The integrator produced a non-finite state."""

    def __init__(self, message, t=None):
        super().__init__(message)
        self.t = t


class DimensionMismatch(CoupledSystemError, ValueError):
    pass


class UnsupportedWeights(CoupledSystemError, ValueError):
    pass


class SizeCapExceeded(CoupledSystemError, ValueError):
    pass


class ProbeNotLipschitz(CoupledSystemError, ValueError):
    pass


class DegenerateInitialData(CoupledSystemError):
    """Identical initial data produced diverging solutions."""


class ParseError(CoupledSystemError):
    def __init__(self, message, line=None, column=None):
        loc = f" (line {line}, column {column})" if line is not None else ""
        super().__init__(f"{message}{loc}")
        self.line = line
        self.column = column


class ValidationError(CoupledSystemError):
    """Config validation failure; ``errors`` holds every (path, message) pair."""

    def __init__(self, errors):
        self.errors = list(errors)
        lines = "; ".join(f"{path}: {msg}" for path, msg in self.errors)
        super().__init__(f"{len(self.errors)} validation error(s): {lines}")
