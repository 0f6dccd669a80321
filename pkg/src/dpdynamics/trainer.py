"""Projected noisy gradient descent with reproducible Monte-Carlo replication.

Each run draws its randomness from its own Philox stream keyed by
``(seed, run_index)``, so a run's output depends only on those two numbers and
never on how many other runs share a batch.  Standard normals come from the
Box-Muller transform, which consumes a fixed number of raw words per sample.
"""

from __future__ import annotations

import math
from abc import ABC, abstractmethod
from dataclasses import dataclass
from os import PathLike
from typing import Iterator, Optional, Union

import numpy as np

from dpdynamics.accountant import LossClass
from dpdynamics.errors import DomainError, UnsupportedLossError

__all__ = [
    "Dataset",
    "ProjectionSpec",
    "TrainConfig",
    "LossModel",
    "SquaredLoss",
    "LogisticLoss",
    "MonteCarloResult",
    "DimensionMismatchError",
    "load_dataset",
    "save_dataset",
    "project",
    "iterate_noisy_gd",
    "run_noisy_gd",
    "monte_carlo_runs",
    "total_gradient_sensitivity",
    "standard_normals",
]

_RADIUS_SLACK = 1e-12
_MC_CHUNK = 1024


class DimensionMismatchError(DomainError):
    pass


@dataclass(frozen=True)
class Dataset:
    records: np.ndarray
    domain_radius: float

    def __post_init__(self):
        x = np.asarray(self.records, dtype=np.float64)
        if x.ndim == 1:
            x = x.reshape(-1, 1)
        if x.ndim != 2 or x.shape[0] < 1 or x.shape[1] < 1:
            raise DimensionMismatchError(f"records must form an (n, d) array, got shape {x.shape}")
        if not np.all(np.isfinite(x)):
            raise DomainError("records must be finite")
        if not self.domain_radius >= 0:
            raise DomainError("domain_radius must be nonnegative")
        norms = np.linalg.norm(x, axis=1)
        if np.any(norms > self.domain_radius * (1 + _RADIUS_SLACK) + _RADIUS_SLACK):
            raise DomainError(
                f"record norm {norms.max():.17g} exceeds domain_radius {self.domain_radius:.17g}"
            )
        x.setflags(write=False)
        object.__setattr__(self, "records", x)
        object.__setattr__(self, "domain_radius", float(self.domain_radius))

    @classmethod
    def from_records(cls, records, domain_radius: Optional[float] = None) -> "Dataset":
        x = np.asarray(records, dtype=np.float64)
        if domain_radius is None:
            x2 = x.reshape(x.shape[0], -1) if x.ndim else x
            domain_radius = float(np.linalg.norm(x2, axis=1).max()) if x2.size else 0.0
        return cls(x, domain_radius)

    @property
    def n(self) -> int:
        return self.records.shape[0]

    @property
    def d(self) -> int:
        return self.records.shape[1]

    @property
    def mean(self) -> np.ndarray:
        return self.records.mean(axis=0)


def load_dataset(path: Union[str, PathLike]) -> Dataset:
    """Read whitespace-separated records, one per line.

    A ``# radius <r>`` line declares the domain radius; other ``#`` lines and
    blank lines are ignored.  Without a radius line the maximum record norm
    is used.
    """
    radius = None
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            s = line.strip()
            if not s:
                continue
            if s.startswith("#"):
                parts = s[1:].split()
                if len(parts) == 2 and parts[0] == "radius":
                    radius = float(parts[1])
                continue
            try:
                rows.append([float(tok) for tok in s.split()])
            except ValueError:
                raise DomainError(f"{path}:{lineno}: non-numeric record") from None
    if not rows:
        raise DomainError(f"{path}: no records")
    if len({len(r) for r in rows}) != 1:
        raise DimensionMismatchError(f"{path}: records have differing dimensions")
    return Dataset.from_records(rows, radius)


def save_dataset(dataset: Dataset, path: Union[str, PathLike]) -> None:
    with open(path, "w") as fh:
        fh.write(f"# radius {dataset.domain_radius:.17g}\n")
        for row in dataset.records:
            fh.write(" ".join(f"{v:.17g}" for v in row) + "\n")


@dataclass(frozen=True)
class ProjectionSpec:
    kind: str = "unconstrained"
    radius: Optional[float] = None

    def __post_init__(self):
        if self.kind == "centered-ball":
            if self.radius is None or not (0 < self.radius < math.inf):
                raise DomainError("centered-ball projection needs a finite positive radius")
        elif self.kind != "unconstrained":
            raise DomainError(f"unknown projection kind {self.kind!r}")

    @classmethod
    def ball(cls, radius: float) -> "ProjectionSpec":
        return cls("centered-ball", radius)


def project(theta: np.ndarray, spec: ProjectionSpec) -> np.ndarray:
    """Euclidean projection of each row of ``theta`` onto the constraint set."""
    if spec.kind == "unconstrained":
        return theta
    norms = np.linalg.norm(theta, axis=-1, keepdims=True)
    outside = norms > spec.radius
    scale = np.divide(spec.radius, norms, out=np.ones_like(norms), where=outside)
    return theta * scale


@dataclass(frozen=True)
class TrainConfig:
    eta: float
    sigma2: float
    K: int
    projection: ProjectionSpec = ProjectionSpec()
    seed: int = 0
    theta0_mode: str = "zero"

    def __post_init__(self):
        if not self.eta > 0:
            raise DomainError("eta must be positive")
        if not self.sigma2 >= 0:
            raise DomainError("sigma2 must be nonnegative")
        if int(self.K) != self.K or self.K < 0:
            raise DomainError("K must be a nonnegative integer")
        if not 0 <= self.seed < 2**64:
            raise DomainError("seed must be a 64-bit unsigned integer")
        if self.theta0_mode not in ("zero", "projected-gaussian"):
            raise DomainError(f"unknown theta0 mode {self.theta0_mode!r}")


class LossModel(ABC):
    """Per-record loss ``l(theta; x)`` with an analytic constant certificate."""

    @abstractmethod
    def value(self, theta: np.ndarray, x: np.ndarray) -> float: ...

    @abstractmethod
    def gradient(self, theta: np.ndarray, x: np.ndarray) -> np.ndarray: ...

    def gradient_sum(self, theta: np.ndarray, records: np.ndarray) -> np.ndarray:
        """Sum of per-record gradients for each row of a ``(R, d)`` batch."""
        return np.stack([sum(self.gradient(t, x) for x in records) for t in theta])

    def grad_sensitivity(self, domain_radius: float) -> float:
        raise UnsupportedLossError(f"{type(self).__name__} has no gradient-sensitivity certificate")

    def certificate(self, domain_radius: float, projection: ProjectionSpec = ProjectionSpec()) -> LossClass:
        raise UnsupportedLossError(f"{type(self).__name__} has no loss-class certificate")


class SquaredLoss(LossModel):
    """``0.5 * ||theta - x||^2``: 1-strongly convex and 1-smooth."""

    def value(self, theta, x):
        diff = np.asarray(theta) - np.asarray(x)
        return 0.5 * float(diff @ diff)

    def gradient(self, theta, x):
        return np.asarray(theta, dtype=float) - np.asarray(x, dtype=float)

    def gradient_sum(self, theta, records):
        return records.shape[0] * theta - records.sum(axis=0)

    def grad_sensitivity(self, domain_radius):
        return 2.0 * domain_radius

    def certificate(self, domain_radius, projection=ProjectionSpec()):
        lip = None
        if projection.kind == "centered-ball":
            lip = projection.radius + domain_radius
        return LossClass(1.0, 1.0, self.grad_sensitivity(domain_radius), lip)


class LogisticLoss(LossModel):
    """Ridge-regularised logistic loss on label-signed features ``z = y * x``.

    ``log(1 + exp(-theta . z)) + (mu / 2) ||theta||^2``.  The ridge term is the
    same for every record, so only the logistic part contributes to the
    gradient sensitivity, and its gradient norm is at most ``||z||``.
    """

    def __init__(self, mu: float):
        if not mu > 0:
            raise DomainError("regularisation mu must be positive")
        self.mu = float(mu)

    def value(self, theta, x):
        theta = np.asarray(theta, dtype=float)
        m = float(theta @ np.asarray(x, dtype=float))
        return float(np.logaddexp(0.0, -m)) + 0.5 * self.mu * float(theta @ theta)

    def gradient(self, theta, x):
        theta = np.asarray(theta, dtype=float)
        x = np.asarray(x, dtype=float)
        return -x * _sigmoid(-(theta @ x)) + self.mu * theta

    def gradient_sum(self, theta, records):
        margins = np.einsum("rd,nd->rn", theta, records)
        weights = _sigmoid(-margins)
        return -np.einsum("rn,nd->rd", weights, records) + records.shape[0] * self.mu * theta

    def grad_sensitivity(self, domain_radius):
        return 2.0 * domain_radius

    def certificate(self, domain_radius, projection=ProjectionSpec()):
        lip = None
        if projection.kind == "centered-ball":
            lip = domain_radius + self.mu * projection.radius
        return LossClass(self.mu, self.mu + domain_radius**2 / 4.0, self.grad_sensitivity(domain_radius), lip)


def _sigmoid(m):
    return 0.5 * (1.0 + np.tanh(0.5 * m))


def total_gradient_sensitivity(loss: LossModel, domain_radius: float) -> float:
    """Sup over neighbouring datasets of the norm of the summed-gradient difference."""
    if not domain_radius >= 0:
        raise DomainError("domain radius must be nonnegative")
    return loss.grad_sensitivity(domain_radius)


def _stream(seed: int, run_index: int) -> np.random.Philox:
    return np.random.Philox(np.random.SeedSequence(entropy=seed, spawn_key=(run_index,)))


def standard_normals(bitgen: np.random.BitGenerator, count: int) -> np.ndarray:
    """``count`` standard normals via Box-Muller on 53-bit uniforms."""
    pairs = (count + 1) // 2
    raw = bitgen.random_raw(2 * pairs) >> np.uint64(11)
    u = raw.astype(np.float64) * 2.0**-53
    u1 = 1.0 - u[0::2]  # (0, 1], keeps log finite
    u2 = u[1::2]
    r = np.sqrt(-2.0 * np.log(u1))
    out = np.empty(2 * pairs)
    out[0::2] = r * np.cos(2.0 * np.pi * u2)
    out[1::2] = r * np.sin(2.0 * np.pi * u2)
    return out[:count]


def _draw(config: TrainConfig, d: int, run_indices: range):
    """Initial-point normals ``(R, d)`` and step normals ``(R, K, d)`` for each run."""
    K = int(config.K)
    z = np.stack([standard_normals(_stream(config.seed, i), d + K * d) for i in run_indices])
    return z[:, :d], z[:, d:].reshape(len(run_indices), K, d)


def _initial(config, dataset, loss, z0, theta0):
    R, d = z0.shape
    if theta0 is not None:
        theta0 = np.asarray(theta0, dtype=np.float64)
        if theta0.shape != (d,):
            raise DimensionMismatchError(f"theta0 has shape {theta0.shape}, expected ({d},)")
        return np.tile(theta0, (R, 1))
    if config.theta0_mode == "zero":
        return np.zeros((R, d))
    lam = loss.certificate(dataset.domain_radius, config.projection).lam
    return project(math.sqrt(2.0 * config.sigma2 / lam) * z0, config.projection)


def _descend(dataset, loss, config, theta, noise) -> Iterator[np.ndarray]:
    X = dataset.records
    n = dataset.n
    step_scale = config.eta / n
    noise_scale = math.sqrt(2.0 * config.eta) * math.sqrt(config.sigma2)
    yield theta
    for k in range(int(config.K)):
        g = loss.gradient_sum(theta, X)
        theta = project(theta - step_scale * g + noise_scale * noise[:, k, :], config.projection)
        yield theta


def iterate_noisy_gd(
    dataset: Dataset,
    loss: LossModel,
    config: TrainConfig,
    theta0: Optional[np.ndarray] = None,
    run_index: int = 0,
) -> Iterator[np.ndarray]:
    """Yield ``theta_k`` for k = 0..K of a single run."""
    d = dataset.d
    z0, noise = _draw(config, d, range(run_index, run_index + 1))
    start = _initial(config, dataset, loss, z0, theta0)
    for theta in _descend(dataset, loss, config, start, noise):
        yield theta[0]


def run_noisy_gd(
    dataset: Dataset,
    loss: LossModel,
    config: TrainConfig,
    theta0: Optional[np.ndarray] = None,
    run_index: int = 0,
) -> np.ndarray:
    """Run K projected noisy gradient steps and return ``theta_K``.

    ``theta0`` overrides ``config.theta0_mode`` with a fixed start point.
    """
    theta = None
    for theta in iterate_noisy_gd(dataset, loss, config, theta0, run_index):
        pass
    return theta


@dataclass(frozen=True)
class MonteCarloResult:
    samples: np.ndarray  # (R, d), row i is run i
    mean: np.ndarray
    var: np.ndarray  # unbiased per-coordinate variance; zero when R == 1

    @property
    def runs(self) -> int:
        return self.samples.shape[0]

    @property
    def standard_error(self) -> np.ndarray:
        return np.sqrt(self.var / self.runs)


def _welford(samples: np.ndarray):
    mean = np.zeros(samples.shape[1])
    m2 = np.zeros(samples.shape[1])
    for count, row in enumerate(samples, 1):
        delta = row - mean
        mean = mean + delta / count
        m2 = m2 + delta * (row - mean)
    R = samples.shape[0]
    var = m2 / (R - 1) if R > 1 else np.zeros_like(m2)
    return mean, var


def monte_carlo_runs(
    dataset: Dataset,
    loss: LossModel,
    config: TrainConfig,
    R: int,
    theta0: Optional[np.ndarray] = None,
) -> MonteCarloResult:
    """Replicate :func:`run_noisy_gd` R times; run i matches ``run_noisy_gd(..., run_index=i)``.

    Runs are advanced together in vectorised chunks.
    """
    if int(R) != R or R < 1:
        raise DomainError("R must be a positive integer")
    d = dataset.d
    out = np.empty((int(R), d))
    for start in range(0, int(R), _MC_CHUNK):
        idx = range(start, min(int(R), start + _MC_CHUNK))
        z0, noise = _draw(config, d, idx)
        theta = _initial(config, dataset, loss, z0, theta0)
        for theta in _descend(dataset, loss, config, theta, noise):
            pass
        out[idx.start : idx.stop] = theta
    mean, var = _welford(out)
    return MonteCarloResult(out, mean, var)
