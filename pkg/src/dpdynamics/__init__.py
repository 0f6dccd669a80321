"""Renyi-DP accounting, planning and verification for projected noisy gradient descent."""

from dpdynamics.accountant import (
    AccountantInput,
    DpParams,
    LossClass,
    RdpCurve,
    RdpPoint,
    best_bound,
    bound_curve,
    composition_bound,
    converging_bound,
    linear_bound,
    lower_bound,
    lsi_constant,
    rdp_compose,
    rdp_recursion,
    rdp_to_dp,
    rdp_under_lsi,
    squared_loss_upper_bound,
)
from dpdynamics.errors import (
    DomainError,
    DpDynamicsError,
    InfeasibleBudgetError,
    OrderMismatchError,
    PreconditionError,
    UnsupportedLossError,
)

__version__ = "0.1.0"
