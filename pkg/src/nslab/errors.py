"""Exception hierarchy shared by the simulation, diagnostics and CLI layers."""


class NSLabError(Exception):
    """Base class for all errors raised by nslab."""


class ConfigurationError(NSLabError, ValueError):
    """Invalid grid, run or parameter configuration.

    ``key`` names the offending configuration entry when one is known.
    """

    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key


class UsageError(NSLabError, ValueError):
    """An operation was called with incompatible arguments (e.g. rank mismatch)."""


class NumericError(NSLabError, ArithmeticError):
    """Non-finite values where finite ones are required."""


class SolvabilityError(NSLabError, ArithmeticError):
    """An elliptic problem has no zero-mean solution (nonzero mean source)."""


class DecompositionError(NSLabError, ValueError):
    """Helmholtz decomposition requested for a field with nonzero mean."""


class ModelError(NSLabError, ValueError):
    """Input state violates a model constraint (e.g. non-solenoidal NSE velocity)."""


class ScenarioError(NSLabError, ValueError):
    """Initial-data scaling targets that cannot be reached."""


class RegimeViolation(NSLabError, ArithmeticError):
    """An admissibility condition required by an estimate failed.

    ``value`` carries the offending quantity (e.g. a non-positive denominator).
    """

    def __init__(self, message, value=None):
        super().__init__(message)
        self.value = value


class BlowUpError(NSLabError, FloatingPointError):
    """The time integration produced non-finite coefficients.

    ``step`` is the index of the failing step; ``trajectory`` holds the samples
    recorded before the failure.
    """

    def __init__(self, message, step, trajectory=None):
        super().__init__(message)
        self.step = step
        self.trajectory = trajectory
