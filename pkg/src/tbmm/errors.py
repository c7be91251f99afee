"""Exception types raised by the library."""


class TbmmError(Exception):
    """Base class for library errors."""


class NumericalError(TbmmError):
    """An iterative kernel failed to converge within its iteration cap."""


class RankError(TbmmError):
    """A factorization met a rank-deficient input it cannot handle."""


class DomainError(TbmmError):
    """A point does not lie on the manifold (or constraint set) it claims."""


class RetractionError(TbmmError):
    """The metric projection defining a retraction is undefined."""


class RankCollapseError(RetractionError):
    """A fixed-rank iterate lost rank (sigma_r under the rank tolerance)."""


class CapabilityError(TbmmError):
    """The operation needs data the problem does not provide."""


class ConfigError(TbmmError):
    """Invalid experiment configuration."""
