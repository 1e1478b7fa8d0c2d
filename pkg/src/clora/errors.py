"""Exception hierarchy shared across the package.

Every failure the library raises deliberately derives from CloraError so
callers (and the CLI) can map error kinds to exit codes without string
matching.
"""


class CloraError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(CloraError):
    """Operands have incompatible dimensions. The message names both shapes."""


class ContractError(CloraError):
    """An API was used outside its contract (bad index, reused tape, double
    merge, non-scalar gradient target, mixed tapes, ...)."""


class NumericError(CloraError):
    """A numeric routine failed: non-finite values, SVD non-convergence,
    diverging training loss."""


class DegenerateSimilarityError(NumericError):
    """A projected token had (near-)zero magnitude, so its cosine similarity
    against another projection is undefined."""


class CheckpointError(CloraError):
    """A checkpoint file is malformed: wrong magic, truncated blob, or an
    inconsistent header table."""


class ConfigError(CloraError):
    """A plain-text key=value config file could not be parsed or contains an
    unknown or ill-typed key."""
