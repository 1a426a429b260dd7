"""Exception types raised across the package."""


class MicrogridError(Exception):
    """Base class for all package errors."""


class CapacityError(MicrogridError):
    """Too many pending jobs to enumerate their power set."""


class FeasibilityError(MicrogridError):
    """An action falls outside the feasible trade interval of its state."""


class ArrivalError(MicrogridError):
    """New jobs were issued outside the first slot of a day."""


class ConfigError(MicrogridError):
    """Invalid scenario configuration.

    ``path`` names the offending field (e.g. ``microgrids[1].kind``).
    """

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


class SizeError(MicrogridError):
    """The enumerated MDP would exceed the configured state-action bound."""

    def __init__(self, estimate: int, bound: int):
        super().__init__(
            f"state-action pairs exceed bound: at least {estimate} > {bound}"
        )
        self.estimate = estimate
        self.bound = bound


class ConvergenceError(MicrogridError):
    """Relative value iteration hit its sweep cap without the span contracting."""


class MultichainError(MicrogridError):
    """The policy-induced chain has more than one recurrent class."""
