"""Exception hierarchy shared by all drmquant modules."""

__all__ = [
    "DrmError",
    "DataError",
    "NumericalError",
    "DomainError",
    "LevelError",
    "ParamError",
    "RankDeficient",
    "NoConvergence",
    "SingularW",
    "QuadratureError",
    "DensityZero",
    "DegenerateDistribution",
    "SameTarget",
    "ParseError",
    "MissingSample",
    "EmptySample",
]


class DrmError(Exception):
    """Base class for every error raised by drmquant."""


class DataError(DrmError):
    """Input data is malformed or unusable."""


class NumericalError(DrmError):
    """A numerical routine failed on otherwise valid input."""


class DomainError(DataError, ValueError):
    """A basis component is undefined at an observation."""


class LevelError(DrmError, ValueError):
    """A probability level lies outside the open unit interval."""


class ParamError(DrmError, ValueError):
    """Invalid distribution family parameters."""


class RankDeficient(NumericalError):
    """Basis columns are linearly dependent on the pooled data."""


class NoConvergence(NumericalError):
    """An iterative solver hit its iteration limit."""


class SingularW(NumericalError):
    """The information matrix W is not numerically positive definite."""


class QuadratureError(NumericalError):
    """Quadrature normalization check failed."""


class DensityZero(NumericalError):
    """A density value needed as a divisor is not positive."""


class DegenerateDistribution(NumericalError):
    """A fitted distribution has zero spread."""


class SameTarget(DrmError, ValueError):
    """A quantile difference was requested between identical targets."""


class ParseError(DataError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


class MissingSample(DataError):
    def __init__(self, index: int):
        super().__init__(f"sample id {index} is missing")
        self.index = index


class EmptySample(DataError):
    pass
