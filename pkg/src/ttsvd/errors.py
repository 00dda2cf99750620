"""Exception types raised by the toolkit."""


class TTSVDError(Exception):
    """Base class for all errors raised by this package."""


class LayoutError(TTSVDError):
    """A requested matricization cannot be expressed as a strided 2D view."""


class AllocationError(TTSVDError, MemoryError):
    """A buffer would exceed the configured memory budget or index range."""


class DimensionMismatch(TTSVDError, ValueError):
    """Operands disagree on a shared extent (e.g. column counts)."""


class DimensionError(TTSVDError, ValueError):
    """An operand has an unsupported shape (e.g. fewer rows than columns)."""


class ShapeError(TTSVDError, ValueError):
    """Element counts of source and target shapes differ."""


class ShapeMismatch(TTSVDError, ValueError):
    """Two tensors that must share a shape do not."""


class DegenerateDimension(TTSVDError, ValueError):
    """The tensor has too few dimensions for the requested operation."""


class PartitionMismatch(TTSVDError, ValueError):
    """Partitions of a distributed tensor have incompatible shapes."""


class ConvergenceError(TTSVDError, ArithmeticError):
    """An iterative scheme did not converge within its sweep budget."""


class DivergenceError(TTSVDError, ValueError):
    """A model formula is evaluated outside its domain of convergence."""
