"""Exception and warning types shared across the package."""


class SingularMatrixError(ValueError):
    """Raised when a mixing matrix has no inverse."""


class DegenerateSignalError(ValueError):
    """Raised when an output has (numerically) zero variance."""


class IllPosedSeparationError(RuntimeError):
    """Raised when the kurtosis landscape is flat, i.e. the sources look Gaussian."""


class RankDeficientError(RuntimeError):
    """Raised when whitening cannot be built because a principal variance vanished."""


class ConvergenceWarning(UserWarning):
    """An iterative search stopped on its evaluation budget rather than its tolerance."""


class RankDeficiencyWarning(UserWarning):
    """A principal component carries (almost) no variance."""
