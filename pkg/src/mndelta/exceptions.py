"""Exception types shared across the package."""


class MnDeltaError(Exception):
    """Base class for all errors raised by mndelta."""


class ShapeError(MnDeltaError, ValueError):
    """Inputs disagree on dimensions, edge sets, or block layout."""


class DataError(MnDeltaError, ValueError):
    """Malformed or out-of-contract data values."""


class ConfigError(MnDeltaError, ValueError):
    """Bad configuration file, key, or option value."""


class SizeCapError(MnDeltaError, ValueError):
    """A dense computation was refused because it exceeds its size cap."""


class DivergenceError(MnDeltaError, RuntimeError):
    """An iterative solve produced a non-finite objective."""


class InfeasibleError(MnDeltaError, RuntimeError):
    """A feasibility-constrained solve terminated outside its constraint set."""


class GenerationError(MnDeltaError, RuntimeError):
    """Synthetic model generation failed (e.g. could not reach a valid model)."""


class NumericError(MnDeltaError, RuntimeError):
    """A numerical routine (factorization, inversion) failed."""
