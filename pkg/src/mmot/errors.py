"""Exception types raised across the package."""


class MMOTError(Exception):
    """Base class for errors raised by this package."""


class DomainError(MMOTError, ValueError):
    """An argument lies outside the domain of the operation."""


class PreconditionError(MMOTError, ValueError):
    """A documented precondition of an operation does not hold."""


class BudgetExceeded(MMOTError):
    """The requested problem has more LP variables than the configured budget."""


class SolverError(MMOTError):
    """The LP backend failed or returned an uncertifiable answer."""


class SeparationFailure(MMOTError, AssertionError):
    """Greedy selection of separated support points ran out of candidates.

    Under the concentration precondition this cannot happen for an exact
    transport plan, so it is raised as an assertion-style failure.
    """
