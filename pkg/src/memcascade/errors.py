"""Exception hierarchy shared by all modules."""


class MembraneError(Exception):
    """Base class for every error raised by memcascade."""


class AdmissibilityError(MembraneError):
    """Selectivity too low for the pressure range (negative rejection or dy/du < 0)."""


class NoRootError(MembraneError):
    """The local flux relation has no root in [0, 1]."""


class DomainError(MembraneError):
    """An input lies outside the physically meaningful domain."""


class ConvergenceError(MembraneError):
    """A root finder ran out of iterations."""


class RecycleDivergence(MembraneError):
    """Recycle loop did not close (non-contractive or runaway flow).

    ``arc`` names the offending recycle arc when it can be identified.
    """

    def __init__(self, message, arc=None):
        super().__init__(message)
        self.arc = arc


class Infeasible(MembraneError):
    """No operating point of a configuration meets the product specification."""


class AllInfeasible(MembraneError):
    """Every configuration of the superstructure is infeasible."""


class ParseError(MembraneError):
    """A problem file could not be read; ``line`` points at the offending entry."""

    def __init__(self, message, path=None, line=None):
        where = f"{path}:{line}: " if path and line else (f"{path}: " if path else "")
        super().__init__(where + message)
        self.path = path
        self.line = line
