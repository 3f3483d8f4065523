"""Exception types shared across modules."""


class ThinlabError(Exception):
    """Base class for all errors raised by thinlab."""


class PreconditionError(ThinlabError, ValueError):
    """An input violates a documented precondition."""


class BudgetExceeded(ThinlabError):
    """An enumeration hit its element cap.

    ``partial`` holds whatever was computed before the cap was reached.
    """

    def __init__(self, message, partial=None, count=None):
        super().__init__(message)
        self.partial = partial
        self.count = count


class ConvergenceError(ThinlabError):
    """An iterative solver stopped at its iteration cap.

    ``estimate`` carries the best value seen.
    """

    def __init__(self, message, estimate=None):
        super().__init__(message)
        self.estimate = estimate


class HorizonError(ThinlabError):
    """A count was requested beyond the range the enumeration can certify."""
