"""Exact Gaussian evolution of noisy GD on the l2-squared loss over R^d.

With ``l(theta; x) = 0.5 ||theta - x||^2`` and no projection, one step is
``theta <- (1 - eta) theta + eta * xbar + sqrt(2 eta sigma^2) Z``, so a run
started from a fixed point stays Gaussian with isotropic covariance.  This
gives the exact Renyi divergence between runs on neighbouring datasets.

The per-coordinate variance here is ``2 eta sigma^2 sum_i (1 - eta)^(2i)``,
matching the update rule.  The main-text statement of the same quantity
carries an extra ``1/n^2`` factor that the update rule does not produce.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator, List, Optional

import numpy as np

from dpdynamics.errors import DomainError
from dpdynamics.trainer import Dataset, LossModel, SquaredLoss, TrainConfig

__all__ = [
    "GaussianIsotropic",
    "NeighborPair",
    "PathMismatchError",
    "gaussian_trajectory",
    "gaussian_state",
    "state_for_config",
    "renyi_gaussians",
    "worst_case_pair",
    "exact_divergence_closed_form",
    "exact_divergence_curve",
    "exact_divergence",
]

PATH_RTOL = 1e-9


class PathMismatchError(DomainError):
    """The closed form and the state recursion disagree beyond tolerance."""


@dataclass(frozen=True)
class GaussianIsotropic:
    mean: np.ndarray
    var: float

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64)
        if mean.ndim != 1 or not np.all(np.isfinite(mean)):
            raise DomainError("mean must be a finite vector")
        if not self.var >= 0:
            raise DomainError("variance must be nonnegative")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "var", float(self.var))


@dataclass(frozen=True)
class NeighborPair:
    D: Dataset
    D_prime: Dataset
    index: int

    def __post_init__(self):
        if self.D.records.shape != self.D_prime.records.shape:
            raise DomainError("neighbouring datasets must have equal size and dimension")
        differs = np.any(self.D.records != self.D_prime.records, axis=1)
        if differs.sum() != 1 or not differs[self.index]:
            raise DomainError("neighbouring datasets must differ in exactly the indexed record")

    @property
    def separation(self) -> float:
        return float(np.linalg.norm(self.D.records[self.index] - self.D_prime.records[self.index]))

    @property
    def n(self) -> int:
        return self.D.n


def _check_eta(eta: float) -> None:
    if not 0 < eta < 1:
        raise DomainError(f"the Gaussian oracle needs 0 < eta < 1, got {eta!r}")


def gaussian_trajectory(
    dataset: Dataset, eta: float, sigma2: float, K: int, theta0: Optional[np.ndarray] = None
) -> Iterator[GaussianIsotropic]:
    """Yield the law of ``theta_k`` for k = 0..K by iterating the one-step map."""
    _check_eta(eta)
    if not sigma2 >= 0:
        raise DomainError("sigma2 must be nonnegative")
    if int(K) != K or K < 0:
        raise DomainError("K must be a nonnegative integer")
    xbar = dataset.mean
    mean = np.zeros(dataset.d) if theta0 is None else np.asarray(theta0, dtype=np.float64)
    if mean.shape != (dataset.d,):
        raise DomainError(f"theta0 must have shape ({dataset.d},)")
    var = 0.0
    keep = 1.0 - eta
    keep2 = keep * keep
    inject = 2.0 * eta * sigma2
    yield GaussianIsotropic(mean, var)
    for _ in range(int(K)):
        mean = keep * mean + eta * xbar
        var = keep2 * var + inject
        yield GaussianIsotropic(mean, var)


def gaussian_state(
    dataset: Dataset, eta: float, sigma2: float, K: int, theta0: Optional[np.ndarray] = None
) -> GaussianIsotropic:
    """Law of ``theta_K`` for unprojected noisy GD on the squared loss."""
    state = None
    for state in gaussian_trajectory(dataset, eta, sigma2, K, theta0):
        pass
    return state


def state_for_config(
    dataset: Dataset, loss: LossModel, config: TrainConfig, theta0: Optional[np.ndarray] = None
) -> GaussianIsotropic:
    """Oracle law of a trainer run, or DomainError when the run is not exactly Gaussian."""
    if not isinstance(loss, SquaredLoss):
        raise DomainError("the Gaussian oracle covers only the l2-squared loss")
    if config.projection.kind != "unconstrained":
        raise DomainError("the Gaussian oracle does not cover projected runs")
    if theta0 is None and config.theta0_mode != "zero":
        raise DomainError("the Gaussian oracle needs a fixed starting point")
    return gaussian_state(dataset, config.eta, config.sigma2, config.K, theta0)


def renyi_gaussians(a: GaussianIsotropic, b: GaussianIsotropic, alpha: float) -> float:
    """Order-alpha Renyi divergence between two isotropic Gaussians of equal variance."""
    if not alpha > 1:
        raise DomainError("alpha must be > 1")
    if a.var != b.var:
        raise DomainError(f"variance mismatch: {a.var!r} != {b.var!r}")
    if a.var == 0:
        raise DomainError("Renyi divergence is undefined for point masses")
    diff = a.mean - b.mean
    return alpha * float(diff @ diff) / (2.0 * a.var)


def worst_case_pair(n: int, d: int, sg: float) -> NeighborPair:
    """Datasets differing in record 0: ``+sg/2 e_1`` versus ``-sg/2 e_1``, all others zero."""
    if int(n) != n or n < 1 or int(d) != d or d < 1:
        raise DomainError("n and d must be positive integers")
    if not sg > 0:
        raise DomainError("sg must be positive")
    x = np.zeros((int(n), int(d)))
    xp = np.zeros((int(n), int(d)))
    x[0, 0] = sg / 2.0
    xp[0, 0] = -sg / 2.0
    return NeighborPair(Dataset(x, sg / 2.0), Dataset(xp, sg / 2.0), 0)


def _pow_keep(eta: float, K) -> np.ndarray:
    # (1 - eta)^K in log space so K up to 1e6 keeps relative accuracy
    return np.exp(np.asarray(K, dtype=np.float64) * math.log1p(-eta))


def exact_divergence_closed_form(pair: NeighborPair, eta: float, sigma2: float, K, alpha: float):
    """Closed-form exact divergence at iteration(s) ``K``, starting from theta_0 = 0.

    ``alpha S^2 / (4 sigma^2 n^2) * (2 - eta) / (1 + q) * (1 - q)`` with
    ``q = (1 - eta)^K`` and ``S`` the pair's separation.
    """
    _check_eta(eta)
    if not sigma2 > 0:
        raise DomainError("sigma2 must be positive")
    s = pair.separation
    n = pair.n
    q = _pow_keep(eta, K)
    one_minus_q = -np.expm1(np.asarray(K, dtype=np.float64) * math.log1p(-eta))
    out = alpha * s * s / (4.0 * sigma2 * n * n) * (2.0 - eta) / (1.0 + q) * one_minus_q
    return float(out) if np.ndim(out) == 0 else out


def _recursion_curve(pair: NeighborPair, eta: float, sigma2: float, K: int, alpha: float) -> List[float]:
    out = [0.0]
    a = gaussian_trajectory(pair.D, eta, sigma2, K)
    b = gaussian_trajectory(pair.D_prime, eta, sigma2, K)
    next(a), next(b)
    for sa, sb in zip(a, b):
        out.append(renyi_gaussians(sa, sb, alpha))
    return out


def exact_divergence_curve(pair: NeighborPair, eta: float, sigma2: float, K: int, alpha: float) -> np.ndarray:
    """Exact divergence for k = 0..K, computed by both routes and cross-checked.

    Raises :class:`PathMismatchError` if the closed form and the Gaussian
    state recursion differ by more than ``PATH_RTOL`` relative at any k.
    """
    closed = exact_divergence_closed_form(pair, eta, sigma2, np.arange(int(K) + 1), alpha)
    closed = np.atleast_1d(closed)
    recursed = np.asarray(_recursion_curve(pair, eta, sigma2, K, alpha))
    bad = np.abs(closed - recursed) > PATH_RTOL * np.abs(closed)
    if np.any(bad):
        k = int(np.argmax(bad))
        raise PathMismatchError(
            f"closed form {closed[k]!r} and recursion {recursed[k]!r} disagree at k={k}"
        )
    return closed


def exact_divergence(pair: NeighborPair, eta: float, sigma2: float, K: int, alpha: float) -> float:
    """Exact Renyi divergence between the two runs after K steps from theta_0 = 0."""
    return float(exact_divergence_curve(pair, eta, sigma2, K, alpha)[-1])
