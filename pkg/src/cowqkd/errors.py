"""Exception hierarchy shared across the package."""


class CowQkdError(Exception):
    """Base class for all package errors."""


class CapacityError(CowQkdError):
    """Operator dimension exceeds the configured dense-storage ceiling."""


class NumericError(CowQkdError):
    """A numerical kernel (eigensolver, factorization) failed."""


class InfeasibleError(CowQkdError):
    """An SDP constraint set admits no feasible point."""


class ConvergenceError(CowQkdError):
    """The interior-point iteration hit its iteration limit.

    The best certificate found so far is attached as ``certificate``.
    """

    def __init__(self, message, certificate=None):
        super().__init__(message)
        self.certificate = certificate


class ConsistencyError(CowQkdError):
    """An internally generated object violates an invariant it must satisfy."""
