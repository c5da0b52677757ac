"""Exception types shared across the package."""


class FxmmError(Exception):
    """Base class for all package errors."""


class ValidationError(FxmmError):
    """Configuration or parameter set fails its invariants."""


class NoDataError(FxmmError):
    """An operation requires observations that are missing."""


class ParseError(FxmmError):
    """Malformed input file; carries the offending line number."""

    def __init__(self, path, line_no, message):
        self.path = path
        self.line_no = line_no
        super().__init__(f"{path}:{line_no}: {message}")


class UndefinedLikelihoodError(FxmmError):
    """Likelihood evaluated at an inadmissible parameter point."""


class FitConvergenceError(FxmmError):
    """MLE optimizer failed to reach the gradient tolerance."""


class DegenerateInputError(FxmmError):
    """Clustering asked for more tiers than distinct points."""


class UnboundedHamiltonianError(FxmmError):
    """Client Hamiltonian is infinite (non-positive price sensitivity)."""


class SolverNumericsError(FxmmError):
    """HJB solve produced NaN/overflow or a stage failed to converge."""


class InsufficientDataError(FxmmError):
    """Not enough stationary samples for a statistical estimate."""
