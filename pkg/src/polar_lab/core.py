"""Domain types and the reward formulas shared by every policy."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

NORM_TOL = 1e-9


class ConfigurationError(ValueError):
    """An input violates a documented contract (bad id, bad shape, bad range)."""


def _as_vector(x, d: int | None = None) -> np.ndarray:
    v = np.asarray(x, dtype=np.float64)
    if v.ndim != 1:
        raise ConfigurationError(f"expected a 1-d vector, got shape {v.shape}")
    if d is not None and v.shape[0] != d:
        raise ConfigurationError(f"expected dimension {d}, got {v.shape[0]}")
    return v


@dataclass(frozen=True)
class AdapterProfile:
    """One arm: true quality vector, cold-path latency (seconds), metadata."""

    id: int
    name: str
    theta_star: np.ndarray
    cold_latency_s: float
    size_mb: float | None = None
    rank: int | None = None
    is_base: bool = False

    def __post_init__(self):
        theta = _as_vector(self.theta_star)
        theta.setflags(write=False)
        object.__setattr__(self, "theta_star", theta)
        norm = float(np.linalg.norm(theta))
        if norm > 1.0 + NORM_TOL:
            raise ConfigurationError(
                f"adapter {self.id} ({self.name!r}): quality vector norm {norm:.6g} exceeds 1"
            )
        if self.cold_latency_s < 0:
            raise ConfigurationError(f"adapter {self.id}: negative cold latency")
        if self.is_base and self.cold_latency_s != 0.0:
            raise ConfigurationError(
                f"adapter {self.id}: base arm must have zero cold latency"
            )


@dataclass(frozen=True)
class Library:
    """Ordered adapter list with dense ids 0..N-1 and a shared context dimension."""

    adapters: tuple[AdapterProfile, ...]
    d: int

    def __post_init__(self):
        object.__setattr__(self, "adapters", tuple(self.adapters))
        if not self.adapters:
            raise ConfigurationError("library must contain at least one adapter")
        for i, a in enumerate(self.adapters):
            if a.id != i:
                raise ConfigurationError(
                    f"adapter ids must be dense 0..N-1; position {i} has id {a.id}"
                )
            if a.theta_star.shape[0] != self.d:
                raise ConfigurationError(
                    f"adapter {i}: quality vector has dimension "
                    f"{a.theta_star.shape[0]}, library says {self.d}"
                )

    @property
    def n(self) -> int:
        return len(self.adapters)

    def theta_matrix(self) -> np.ndarray:
        """(N, d) stack of true quality vectors."""
        return np.stack([a.theta_star for a in self.adapters])

    def latencies(self) -> np.ndarray:
        """(N,) cold-path latencies in seconds."""
        return np.array([a.cold_latency_s for a in self.adapters])

    def penalties(self, alpha: float) -> np.ndarray:
        """(N,) cold-path penalties alpha * latency."""
        return alpha * self.latencies()


@dataclass(frozen=True)
class Context:
    """A request feature vector with optional generator provenance."""

    x: np.ndarray
    task_id: int | None = None

    def __post_init__(self):
        x = _as_vector(self.x)
        x.setflags(write=False)
        object.__setattr__(self, "x", x)
        norm = float(np.linalg.norm(x))
        if norm > 1.0 + NORM_TOL:
            raise ConfigurationError(f"context norm {norm:.6g} exceeds 1")


@dataclass(frozen=True)
class RewardParams:
    """Reward-model and learner parameters shared across modules."""

    alpha: float = 0.5
    gamma: float = 0.3
    sigma: float = 0.05
    ridge: float = 1.0
    cache_size: int = 5
    delta: float = 0.05

    def __post_init__(self):
        if self.alpha < 0 or self.gamma < 0 or self.sigma < 0:
            raise ConfigurationError("alpha, gamma, sigma must be nonnegative")
        if self.ridge < 1.0:
            raise ConfigurationError("ridge regularizer must be >= 1")
        if self.cache_size < 1:
            raise ConfigurationError("cache size must be >= 1")
        if not (0.0 < self.delta < 1.0):
            raise ConfigurationError("delta must lie in (0, 1)")

    def validate_for(self, library: Library) -> None:
        if self.cache_size > library.n:
            raise ConfigurationError(
                f"cache size {self.cache_size} exceeds library size {library.n}"
            )


@dataclass(frozen=True)
class CacheState:
    """The resident set plus slow-timescale bookkeeping."""

    resident: frozenset[int]
    epoch_index: int = 0
    switches_total: int = 0

    def __post_init__(self):
        object.__setattr__(self, "resident", frozenset(self.resident))

    def ids(self) -> tuple[int, ...]:
        return tuple(sorted(self.resident))


def _context_array(x) -> np.ndarray:
    return x.x if isinstance(x, Context) else np.asarray(x, dtype=np.float64)


def _check_arm(library: Library, a: int) -> AdapterProfile:
    if not (0 <= a < library.n):
        raise ConfigurationError(f"unknown adapter id {a} (library has {library.n})")
    return library.adapters[a]


def noiseless_reward(
    library: Library, params: RewardParams, a: int, cache: CacheState, x
) -> float:
    """Quality minus the cold-path penalty when the arm is not resident."""
    profile = _check_arm(library, a)
    xv = _context_array(x)
    value = float(profile.theta_star @ xv)
    if a not in cache.resident:
        value -= params.alpha * profile.cold_latency_s
    return value


def realized_reward(
    q_observed: float, params: RewardParams, library: Library, a: int, cache: CacheState
) -> float:
    """Observed quality minus the cold-path penalty when the arm is not resident."""
    profile = _check_arm(library, a)
    if a in cache.resident:
        return float(q_observed)
    return float(q_observed) - params.alpha * profile.cold_latency_s


def switching_cost(params: RewardParams, new: CacheState, prev: CacheState) -> float:
    """Per-adapter charge for every newly admitted adapter."""
    return params.gamma * len(new.resident - prev.resident)
