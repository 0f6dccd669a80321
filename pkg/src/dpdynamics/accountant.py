"""Closed-form Renyi-DP bounds for projected noisy gradient descent.

Every bound takes an :class:`AccountantInput` (loss constants, dataset size,
step size, noise variance, iteration count and Renyi order) and returns the
epsilon of an ``(alpha, epsilon)``-RDP guarantee in nats.  All functions are
pure; terms of the form ``1 - exp(-x)`` go through :func:`_one_minus_exp`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

from dpdynamics.errors import DomainError, OrderMismatchError, PreconditionError

__all__ = [
    "LossClass",
    "RdpPoint",
    "RdpCurve",
    "DpParams",
    "AccountantInput",
    "METHODS",
    "linear_bound",
    "composition_bound",
    "rdp_recursion",
    "rdp_under_lsi",
    "converging_bound",
    "squared_loss_upper_bound",
    "lower_bound",
    "lsi_constant",
    "best_bound",
    "bound_curve",
    "rdp_compose",
    "rdp_to_dp",
]


def _one_minus_exp(x: float) -> float:
    return -math.expm1(-x)


def _require_positive(name: str, value: float) -> None:
    if not value > 0 or not math.isfinite(value):
        raise DomainError(f"{name} must be positive and finite, got {value!r}")


def _require_alpha(alpha: float) -> None:
    if not alpha > 1 or not math.isfinite(alpha):
        raise DomainError(f"alpha must be > 1, got {alpha!r}")


@dataclass(frozen=True)
class LossClass:
    """Analytic constants of a loss family.

    ``lam`` is the strong-convexity constant, ``beta`` the smoothness constant,
    ``lipschitz`` an optional Lipschitz constant and ``grad_sensitivity`` the
    total gradient sensitivity ``S_g``.
    """

    lam: float
    beta: float
    grad_sensitivity: float
    lipschitz: Optional[float] = None

    def __post_init__(self):
        _require_positive("lambda", self.lam)
        if not self.beta >= self.lam or not math.isfinite(self.beta):
            raise DomainError(f"beta must be >= lambda, got beta={self.beta!r}, lambda={self.lam!r}")
        if not self.grad_sensitivity >= 0 or not math.isfinite(self.grad_sensitivity):
            raise DomainError(f"grad_sensitivity must be >= 0, got {self.grad_sensitivity!r}")
        if self.lipschitz is not None:
            _require_positive("lipschitz", self.lipschitz)
            if self.grad_sensitivity > 2 * self.lipschitz:
                raise DomainError("grad_sensitivity cannot exceed 2 * lipschitz")


@dataclass(frozen=True)
class RdpPoint:
    alpha: float
    epsilon: float

    def __post_init__(self):
        _require_alpha(self.alpha)
        if not self.epsilon >= 0 or not math.isfinite(self.epsilon):
            raise DomainError(f"epsilon must be finite and >= 0, got {self.epsilon!r}")


@dataclass(frozen=True)
class RdpCurve:
    """Epsilon after each of k = 0..K iterations at a fixed order."""

    alpha: float
    values: Sequence[float]

    def __post_init__(self):
        _require_alpha(self.alpha)
        if len(self.values) == 0 or self.values[0] != 0:
            raise DomainError("an RDP curve starts at epsilon = 0 for k = 0")
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))

    @property
    def K(self) -> int:
        return len(self.values) - 1

    @property
    def final(self) -> float:
        return self.values[-1]


@dataclass(frozen=True)
class DpParams:
    eps: float
    delta: float

    def __post_init__(self):
        _require_positive("eps", self.eps)
        if not 0 < self.delta < 1:
            raise DomainError(f"delta must lie in (0, 1), got {self.delta!r}")


@dataclass(frozen=True)
class AccountantInput:
    loss: LossClass
    n: int
    eta: float
    sigma2: float
    K: int
    alpha: float

    def __post_init__(self):
        if isinstance(self.n, bool) or int(self.n) != self.n or self.n < 1:
            raise DomainError(f"n must be a positive integer, got {self.n!r}")
        if isinstance(self.K, bool) or int(self.K) != self.K or self.K < 0:
            raise DomainError(f"K must be a nonnegative integer, got {self.K!r}")
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "K", int(self.K))
        _require_positive("eta", self.eta)
        _require_positive("sigma2", self.sigma2)
        _require_alpha(self.alpha)

    def at(self, K: int) -> "AccountantInput":
        """Same input with a different iteration count."""
        return AccountantInput(self.loss, self.n, self.eta, self.sigma2, K, self.alpha)

    @property
    def gaussian_scale(self) -> float:
        """alpha * S_g^2 / (4 sigma^2 n^2): one unit-time Gaussian-mechanism loss."""
        sg = self.loss.grad_sensitivity
        return self.alpha * sg * sg / (4.0 * self.sigma2 * self.n * self.n)


def linear_bound(alpha: float, sv: float, sigma2: float, T: float) -> float:
    """RDP of two coupled diffusions whose drifts differ by at most ``sv``, run for time ``T``."""
    _require_alpha(alpha)
    _require_positive("sigma2", sigma2)
    if sv < 0 or T < 0:
        raise DomainError("sv and T must be nonnegative")
    return alpha * sv * sv * T / (4.0 * sigma2)


def composition_bound(inp: AccountantInput) -> float:
    """Baseline that sums per-step Gaussian losses; linear in K."""
    return inp.gaussian_scale * inp.eta * inp.K


def rdp_under_lsi(inp: AccountantInput, c: float) -> float:
    """Converging bound when every intermediate distribution is ``c``-LSI."""
    _require_positive("c", c)
    sg = inp.loss.grad_sensitivity
    s2 = inp.sigma2
    scale = inp.alpha * sg * sg / (2.0 * c * s2 * s2 * inp.n * inp.n)
    return scale * _one_minus_exp(s2 * c * inp.eta * inp.K)


def rdp_recursion(inp: AccountantInput, c: float, gamma: float = 0.5) -> RdpCurve:
    """Iterate the per-step privacy-loss recursion for k = 0..K.

    With ``a1 = 2(1-gamma) sigma^2 c`` and ``a2 = S_g^2 / (4 gamma sigma^2 n^2)``
    the step is ``R <- (R - alpha a2/a1) exp(-a1 eta) + alpha a2/a1``.  It is
    evaluated as ``R exp(-a1 eta) + target (1 - exp(-a1 eta))``, which is the
    same map without cancellation when ``R`` is far below the target.
    """
    if not 0 < gamma < 1:
        raise DomainError(f"gamma must lie in (0, 1), got {gamma!r}")
    _require_positive("c", c)
    s2 = inp.sigma2
    sg = inp.loss.grad_sensitivity
    a1 = 2.0 * (1.0 - gamma) * s2 * c
    a2 = sg * sg / (gamma * 4.0 * s2 * inp.n * inp.n)
    target = a2 / a1 * inp.alpha
    decay = math.exp(-a1 * inp.eta)
    gain = target * _one_minus_exp(a1 * inp.eta)
    values = [0.0]
    r = 0.0
    for _ in range(inp.K):
        r = r * decay + gain
        values.append(r)
    return RdpCurve(inp.alpha, values)


def lsi_constant(loss: LossClass, sigma2: float, eta: float, variant: str = "strongly-convex") -> float:
    """LSI constant of the noisy GD iterates.

    ``"strongly-convex"`` gives ``lambda / (2 sigma^2)`` and needs ``eta < 1/beta``;
    ``"squared-loss"`` gives ``(2 - eta) / (2 sigma^2)`` for the l2-squared loss.
    """
    _require_positive("sigma2", sigma2)
    _require_positive("eta", eta)
    if variant == "strongly-convex":
        if not eta * loss.beta < 1:
            raise PreconditionError("eta < 1/beta", f"eta={eta!r}, beta={loss.beta!r}")
        return loss.lam / (2.0 * sigma2)
    if variant == "squared-loss":
        if not eta < 1:
            raise DomainError(f"squared-loss LSI constant needs 0 < eta < 1, got {eta!r}")
        return (2.0 - eta) / (2.0 * sigma2)
    raise DomainError(f"unknown LSI variant {variant!r}")


def converging_bound(inp: AccountantInput) -> float:
    """Converging bound for lambda-strongly convex, beta-smooth losses.

    >>> inp = AccountantInput(LossClass(1.0, 1.0, 4.0), 5000, 0.02, 0.02**2, 100, 10.0)
    >>> round(converging_bound(inp), 10)
    0.0101139289
    """
    lam = inp.loss.lam
    if not inp.eta * inp.loss.beta < 1:
        raise PreconditionError("eta < 1/beta", f"eta={inp.eta!r}, beta={inp.loss.beta!r}")
    sg = inp.loss.grad_sensitivity
    asymptote = inp.alpha * sg * sg / (lam * inp.sigma2 * inp.n * inp.n)
    return asymptote * _one_minus_exp(lam * inp.eta * inp.K / 2.0)


def squared_loss_upper_bound(inp: AccountantInput) -> float:
    """Upper bound for the l2-squared loss on R^d, using c = (2 - eta) / (2 sigma^2)."""
    eta = inp.eta
    if not eta < 1:
        raise DomainError(f"squared-loss bound needs 0 < eta < 1, got {eta!r}")
    sg = inp.loss.grad_sensitivity
    asymptote = inp.alpha * sg * sg / ((2.0 - eta) * inp.sigma2 * inp.n * inp.n)
    return asymptote * _one_minus_exp((2.0 - eta) * eta * inp.K / 2.0)


def lower_bound(inp: AccountantInput) -> float:
    """Worst-case RDP achieved by noisy GD on a pair of neighbouring datasets."""
    if not inp.eta < 1:
        raise DomainError(f"lower bound needs 0 < eta < 1, got {inp.eta!r}")
    return inp.gaussian_scale * _one_minus_exp(inp.eta * inp.K)


def best_bound(inp: AccountantInput) -> float:
    return min(converging_bound(inp), composition_bound(inp))


_SCALAR_METHODS = {
    "converging": converging_bound,
    "composition": composition_bound,
    "best": best_bound,
    "squared-upper": squared_loss_upper_bound,
    "lower": lower_bound,
}
METHODS = tuple(_SCALAR_METHODS) + ("recursion",)


def bound_curve(
    method: str,
    inp: AccountantInput,
    *,
    gamma: float = 0.5,
    lsi_variant: str = "strongly-convex",
) -> RdpCurve:
    """Evaluate a named bound at every k = 0..inp.K."""
    if method == "recursion":
        c = lsi_constant(inp.loss, inp.sigma2, inp.eta, lsi_variant)
        return rdp_recursion(inp, c, gamma)
    try:
        fn = _SCALAR_METHODS[method]
    except KeyError:
        raise DomainError(f"unknown method {method!r}; choose from {', '.join(METHODS)}") from None
    # validate once at K so a precondition failure is raised before any work
    fn(inp)
    return RdpCurve(inp.alpha, [fn(inp.at(k)) for k in range(inp.K + 1)])


def rdp_compose(a: RdpPoint, b: RdpPoint) -> RdpPoint:
    if a.alpha != b.alpha:
        raise OrderMismatchError(f"cannot compose orders {a.alpha!r} and {b.alpha!r}")
    return RdpPoint(a.alpha, a.epsilon + b.epsilon)


def rdp_to_dp(p: RdpPoint, delta: float) -> DpParams:
    """Convert an ``(alpha, eps)``-RDP guarantee to ``(eps + log(1/delta)/(alpha-1), delta)``-DP."""
    if not 0 < delta < 1:
        raise DomainError(f"delta must lie in (0, 1), got {delta!r}")
    return DpParams(p.epsilon + math.log(1.0 / delta) / (p.alpha - 1.0), delta)
