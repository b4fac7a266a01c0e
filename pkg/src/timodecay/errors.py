"""Exception hierarchy shared by all modules."""

from __future__ import annotations


class TimoDecayError(Exception):
    """Base class for every error raised by this package."""


class InvalidCoefficientError(TimoDecayError, ValueError):
    pass


class UnknownMassError(TimoDecayError, ValueError):
    """A tabulated kernel was used without a declared total mass."""


class KernelShapeError(TimoDecayError, ValueError):
    """A kernel table violates the monotonicity the decay theory needs."""


class OutOfRangeError(TimoDecayError, IndexError):
    """An evaluation time lies outside the recorded history."""


class ArityError(TimoDecayError, ValueError):
    """Not enough samples for a finite-difference stencil."""


class StructuralConditionError(TimoDecayError, ValueError):
    """The coefficient relations required by the decay theorem fail."""


class H1ViolationError(TimoDecayError, ValueError):
    """delta minus the kernel mass is not positive."""


class OutsideTheoremError(TimoDecayError, ValueError):
    """The delay weight exceeds the friction weight (mu2 > mu1)."""


class OutsideTheoremWarning(UserWarning):
    pass


class StepSizeError(TimoDecayError, ValueError):
    """Time step incompatible with the delay grid or a CFL bound."""


class DivergenceError(TimoDecayError, FloatingPointError):
    """The time integration produced non-finite or unbounded values."""

    def __init__(self, message: str, last_finite_time: float):
        super().__init__(f"{message} (last finite time t={last_finite_time!r})")
        self.last_finite_time = last_finite_time


class SelectionFailureError(TimoDecayError, ArithmeticError):
    """A brace of the Lyapunov derivative estimate stayed negative."""

    def __init__(self, brace: str, value: float):
        super().__init__(f"brace {brace!r} is negative after selection: {value!r}")
        self.brace = brace
        self.value = value


class ConfigurationError(TimoDecayError, ValueError):
    """Invalid run configuration; ``path`` names the offending field."""

    def __init__(self, message: str, path: str = ""):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


class FitDomainError(TimoDecayError, ValueError):
    pass


class UndefinedRatioError(TimoDecayError, ZeroDivisionError):
    pass
