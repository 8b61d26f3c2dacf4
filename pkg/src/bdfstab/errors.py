"""Exception hierarchy shared by the library and the CLI exit-code mapping."""


class BDFStabError(Exception):
    """Base class for all errors raised by bdfstab."""


class UnsupportedOrderError(BDFStabError, ValueError):
    pass


class ShapeError(BDFStabError, ValueError):
    pass


class DomainError(BDFStabError, ValueError):
    pass


class DefinitenessError(BDFStabError, ValueError):
    """A quadratic form failed a positive-definiteness test.

    ``minor`` names the leading principal minor that failed.
    """

    def __init__(self, message, minor=None):
        super().__init__(message)
        self.minor = minor


class OmegaMembershipError(DomainError):
    """Cholesky parameters outside Omega = {a > 0, b > a}."""


class InfeasibleError(BDFStabError, ValueError):
    """Requested beta exceeds the optimal constant beta_3 = 95/96."""


class OptimizationError(BDFStabError, RuntimeError):
    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class StepError(BDFStabError, RuntimeError):
    def __init__(self, message, step=None, log=None):
        super().__init__(message)
        self.step = step
        self.log = log or []


class ExistenceError(StepError):
    """The implicit step solver found no solution (a solver failure, never a math fact)."""


class PreconditionError(BDFStabError, ValueError):
    pass


class ConfigError(BDFStabError, ValueError):
    pass
