"""Exception hierarchy shared by every module.

Each class carries a CLI exit code so that front-ends can report the failure
category without inspecting messages.
"""


class WPLError(Exception):
    exit_code = 1


class ValidationError(WPLError, ValueError):
    """Input rejected; ``condition`` names the violated requirement."""

    exit_code = 3

    def __init__(self, condition, detail=""):
        self.condition = condition
        msg = condition if not detail else f"{condition}: {detail}"
        super().__init__(msg)


class ConfigError(ValidationError):
    pass


class UnsupportedError(WPLError):
    exit_code = 5


class NumericalError(WPLError, ArithmeticError):
    exit_code = 4


class StiffnessError(NumericalError):
    def __init__(self, t, detail=""):
        self.t = t
        super().__init__(f"step size underflow at t={t:.17g}" + (f" ({detail})" if detail else ""))


class DegeneratePairingError(NumericalError):
    pass


class DefectiveZeroModeError(NumericalError):
    pass


class NotApplicableError(NumericalError):
    pass


class QuadratureError(NumericalError):
    def __init__(self, msg, estimate=None, bound=None):
        self.estimate = estimate
        self.bound = bound
        super().__init__(f"{msg} (estimate={estimate!r}, error bound={bound!r})")


class InsufficientDataError(NumericalError):
    pass
