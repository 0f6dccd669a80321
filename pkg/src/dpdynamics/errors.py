"""Exception types shared across the package."""


class DpDynamicsError(ValueError):
    """Base class for every error raised by this package."""


class DomainError(DpDynamicsError):
    """An argument lies outside the domain where a formula is defined."""


class PreconditionError(DpDynamicsError):
    """A hypothesis required for a bound to be valid does not hold.

    ``condition`` names the violated hypothesis, e.g. ``"eta < 1/beta"``.
    """

    def __init__(self, condition: str, detail: str = ""):
        self.condition = condition
        msg = f"precondition violated: {condition}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class InfeasibleBudgetError(PreconditionError):
    """The privacy budget is too small for any positive number of updates."""


class OrderMismatchError(DpDynamicsError):
    """Two RDP guarantees of different orders cannot be composed."""


class UnsupportedLossError(DpDynamicsError):
    """A loss carries no analytic certificate for the requested quantity."""
