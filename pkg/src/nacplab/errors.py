"""Exception types shared across the laboratory."""


class NacpError(Exception):
    """Base class for every error raised by nacplab."""


class DomainError(NacpError, ValueError):
    """A point or parameter lies outside the admissible domain."""


class SingularPointError(DomainError):
    """Coefficient formula is undefined at the requested point."""


class AssemblyError(NacpError):
    """Operator assembly failed (ellipticity or sign violation)."""


class ResourceError(NacpError, MemoryError):
    """Requested discretization exceeds the configured budget."""


class NumericalError(NacpError, ArithmeticError):
    """Base class for numerical failures."""


class SingularityError(NumericalError):
    """Resolvent or inverse requested too close to the spectrum."""


class NotSectorialError(NumericalError):
    """Spectrum meets the forbidden region of the sector test."""


class BranchError(NumericalError):
    """Eigenvalue on the branch cut of the principal logarithm."""


class ContractionError(NumericalError):
    """Neumann series requested while the Q-operator is not a contraction."""


class ExhaustedError(NumericalError):
    """A search exhausted its grid without reaching the target."""

    def __init__(self, msg, table=None):
        super().__init__(msg)
        self.table = table if table is not None else []


class UndefinedRatioError(NumericalError):
    """A ratio has a zero denominator."""
