"""Exception hierarchy shared by the simulator, the theory layer and the CLI."""


class ClonesimError(Exception):
    """Base class for every error raised by clonesim."""


class SchedulingError(ClonesimError):
    """Broken simulation bookkeeping: time regression, unknown or duplicate residents."""


class InfiniteMeanError(ClonesimError, ArithmeticError):
    """The requested mean does not exist for this parameterization."""


class UnstableSystemError(ClonesimError, ValueError):
    """Offered load reaches or exceeds the capacity of a (possibly equivalent) server."""

    def __init__(self, load: float, message: str = ""):
        self.load = load
        detail = f"load {load:.4f} >= 1 (stability requires load < 1)"
        super().__init__(f"{message}: {detail}" if message else detail)


class ScenarioError(ClonesimError, ValueError):
    """A scenario that cannot be run as written."""


class AnalysisError(ClonesimError):
    """Post-processing inputs are missing or inconsistent."""
