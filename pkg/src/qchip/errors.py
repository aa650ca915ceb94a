"""Exception types shared across the package."""


class QChipError(Exception):
    """Base class for all package-specific errors."""


class NotHermitian(QChipError):
    """Input matrix is not Hermitian within tolerance."""


class ConvergenceFailure(QChipError):
    """An iterative eigensolver failed to converge."""


class NotUnitary(QChipError):
    """Input matrix is not unitary within tolerance."""


class NotADistribution(QChipError):
    """Vector is not a valid probability distribution."""


class ShapeMismatch(QChipError):
    """Array shapes are inconsistent with the declared architecture."""


class ControlOutOfDomain(QChipError):
    """A control voltage lies outside the admissible box."""


class ModelNotTrained(QChipError):
    """Operation requires a trained (frozen) model."""


class UnsupportedModel(QChipError):
    """The requested operation is undefined for this model family."""


class DegenerateMatrix(QChipError):
    """Matrix has an all-zero row or column and cannot be balanced."""


class NoConvergence(QChipError):
    """Iterative balancing exceeded its sweep cap."""


class NonFiniteLoss(QChipError):
    """Training loss became NaN or infinite."""
