"""Exception types shared across the package."""


class OtmatchError(Exception):
    """Base class for all package-specific errors."""


class AllZeroInput(OtmatchError):
    """Raised when a field with no positive mass is normalized into a density."""


class MassMismatch(OtmatchError):
    """Raised when an operation requires equal (or unit) masses and they differ."""


class NonpositiveWeight(OtmatchError):
    """Raised when a weight function is not strictly positive."""


class SingularSymbol(OtmatchError):
    """Raised when a Fourier symbol is too close to zero to invert."""


class NonSPD(OtmatchError):
    """Raised when a matrix that must be symmetric positive-definite is not."""


class DegenerateTarget(OtmatchError):
    """Raised when a target density vanishes at mapped points."""


class SupportOverflow(OtmatchError):
    """Raised when a translated density would leave the computational domain."""


class SolverFailure(OtmatchError):
    """Raised when a linear solve does not reach the required residual."""


class SingularAdjoint(OtmatchError):
    """Raised when the adjoint operator is singular beyond its constant nullspace."""


class NoConvergence(OtmatchError):
    """Raised when a fixed-point solver stops at max_iter above tolerance.

    Carries the best iterate so callers can inspect diagnostics.
    """

    def __init__(self, message, solution=None):
        super().__init__(message)
        self.solution = solution
