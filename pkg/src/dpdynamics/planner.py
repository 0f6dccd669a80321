"""Privacy-constrained hyperparameter selection for noisy GD.

Given a Lipschitz, smooth, strongly convex loss and an RDP or (eps, delta)-DP
budget, pick the noise variance, step size and iteration count that minimise
the excess empirical risk bound while keeping the converging RDP bound within
budget at every iteration.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Union

from dpdynamics.accountant import DpParams, LossClass, RdpPoint
from dpdynamics.errors import DomainError, InfeasibleBudgetError, PreconditionError

__all__ = [
    "PlanRequest",
    "PlanResult",
    "excess_risk_bound",
    "plan",
    "plan_rdp",
    "plan_dp",
    "dp_to_rdp_budget",
    "utility_floor",
]


@dataclass(frozen=True)
class PlanRequest:
    """What to plan for.

    ``diameter`` optionally bounds ``||theta_0 - theta*||`` more tightly than
    the default ``2L/lambda``; it only affects ``predicted_risk``.
    """

    loss: LossClass
    n: int
    d: int
    budget: Union[RdpPoint, DpParams]
    diameter: Optional[float] = None

    def __post_init__(self):
        if self.loss.lipschitz is None:
            raise DomainError("planning requires a Lipschitz constant")
        if int(self.n) != self.n or self.n < 1 or int(self.d) != self.d or self.d < 1:
            raise DomainError("n and d must be positive integers")
        if not isinstance(self.budget, (RdpPoint, DpParams)):
            raise DomainError("budget must be an RdpPoint or DpParams")
        if isinstance(self.budget, DpParams):
            log_inv_delta = math.log(1.0 / self.budget.delta)
            if not self.budget.eps <= 2.0 * log_inv_delta:
                raise PreconditionError(
                    "eps <= 2 log(1/delta)", f"eps={self.budget.eps!r}, delta={self.budget.delta!r}"
                )
        if self.diameter is not None and not self.diameter > 0:
            raise DomainError("diameter must be positive")


@dataclass(frozen=True)
class PlanResult:
    sigma2: float
    k_star: int
    eta: float
    predicted_risk: float
    floor: float
    # RDP guarantee the plan is calibrated against
    alpha: float
    eps_rdp: float


def excess_risk_bound(
    loss: LossClass,
    n: int,
    d: int,
    eta: float,
    sigma2: float,
    K: int,
    diameter: Optional[float] = None,
) -> float:
    """Expected excess empirical risk after K noisy GD steps.

    ``(beta/2) D^2 exp(-lambda eta K) + 2 beta d sigma^2 / lambda`` where
    ``D = 2L/lambda`` unless a smaller ``diameter`` is given.  ``n`` does not
    enter the bound; it is accepted to keep call sites uniform.
    """
    L = loss.lipschitz
    if L is None:
        raise DomainError("excess risk bound requires a Lipschitz constant")
    lam, beta = loss.lam, loss.beta
    if not eta > 0:
        raise DomainError("eta must be positive")
    if not eta <= lam / (2.0 * beta * beta):
        raise PreconditionError("eta <= lambda/(2 beta^2)", f"eta={eta!r}")
    if sigma2 < 0 or K < 0:
        raise DomainError("sigma2 and K must be nonnegative")
    dist = 2.0 * L / lam
    if diameter is not None:
        dist = min(dist, diameter)
    return 0.5 * beta * dist * dist * math.exp(-lam * eta * K) + 2.0 * beta * d * sigma2 / lam


def utility_floor(n: int, d: int, eps: float) -> float:
    """Floor indicator ``min(1, d / (eps^2 n^2))``; the true lower bound holds up to an unknown constant."""
    if not (n >= 1 and d >= 1 and eps > 0):
        raise DomainError("utility floor needs n >= 1, d >= 1, eps > 0")
    return min(1.0, d / (eps * eps * n * n))


def dp_to_rdp_budget(budget: DpParams) -> RdpPoint:
    """RDP order and loss whose guarantee converts to the given (eps, delta)-DP."""
    alpha = 1.0 + 2.0 / budget.eps * math.log(1.0 / budget.delta)
    return RdpPoint(alpha, budget.eps / 2.0)


def _finish(req: PlanRequest, sigma2: float, log_arg: float, alpha: float, eps_rdp: float, floor_eps: float):
    loss = req.loss
    if not log_arg > 1:
        raise InfeasibleBudgetError(
            "budget admits at least one update", f"log argument {log_arg!r} <= 1"
        )
    eta = loss.lam / (2.0 * loss.beta * loss.beta)
    k_real = 2.0 * loss.beta**2 / loss.lam**2 * math.log(log_arg)
    k_star = max(1, math.ceil(k_real))
    risk = excess_risk_bound(loss, req.n, req.d, eta, sigma2, k_star, req.diameter)
    return PlanResult(
        sigma2=sigma2,
        k_star=k_star,
        eta=eta,
        predicted_risk=risk,
        floor=utility_floor(req.n, req.d, floor_eps),
        alpha=alpha,
        eps_rdp=eps_rdp,
    )


def plan_rdp(req: PlanRequest) -> PlanResult:
    """Plan under an ``(alpha, eps')``-RDP budget."""
    b = req.budget
    if not isinstance(b, RdpPoint):
        raise DomainError("plan_rdp needs an RdpPoint budget")
    if not b.epsilon > 0:
        raise DomainError("RDP budget must be positive")
    L, lam, n = req.loss.lipschitz, req.loss.lam, req.n
    sigma2 = 4.0 * b.alpha * L * L / (lam * b.epsilon * n * n)
    log_arg = n * n * b.epsilon / (b.alpha * req.d)
    return _finish(req, sigma2, log_arg, b.alpha, b.epsilon, b.epsilon)


def plan_dp(req: PlanRequest) -> PlanResult:
    """Plan under an ``(eps, delta)``-DP budget with eps <= 2 log(1/delta)."""
    b = req.budget
    if not isinstance(b, DpParams):
        raise DomainError("plan_dp needs a DpParams budget")
    rdp = dp_to_rdp_budget(b)
    L, lam, n = req.loss.lipschitz, req.loss.lam, req.n
    log_inv_delta = math.log(1.0 / b.delta)
    sigma2 = 8.0 * L * L * (b.eps + 2.0 * log_inv_delta) / (lam * b.eps * b.eps * n * n)
    log_arg = n * n * b.eps * b.eps / (4.0 * log_inv_delta * req.d)
    return _finish(req, sigma2, log_arg, rdp.alpha, rdp.epsilon, b.eps)


def plan(req: PlanRequest) -> PlanResult:
    if isinstance(req.budget, DpParams):
        return plan_dp(req)
    return plan_rdp(req)
