"""Per-adapter ridge state, confidence radius, cache-aware scoring, and routing.

The router keeps one regularized design matrix per arm and scores arms with
estimate + confidence bonus - cold penalty.  A Thompson-sampling variant draws
parameters from the ridge posterior and scores without a bonus.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import CacheState, Context, Library, RewardParams, _context_array

# Exact inverse refresh cadence: Sherman-Morrison keeps the per-round cost at
# O(d^2) but drifts slowly, so the inverse is rebuilt from V periodically.
_INV_REFRESH = 256


class NumericalError(RuntimeError):
    """A linear solve or factorization produced a non-finite result."""


def confidence_radius(
    t: int, *, sigma: float, ridge: float, n_arms: int, dim: int, delta: float
) -> float:
    """Width of the per-arm confidence ellipsoid after t rounds.

    Natural logarithms throughout; nondecreasing in t.
    """
    if t < 0:
        raise ValueError("round counter must be nonnegative")
    log_term = dim * math.log(1.0 + t / (dim * ridge)) + 2.0 * math.log(n_arms / delta)
    return sigma * math.sqrt(log_term) + math.sqrt(ridge)


@dataclass
class ArmState:
    """Snapshot of one arm's sufficient statistics."""

    V: np.ndarray
    b: np.ndarray
    theta_hat: np.ndarray
    play_count: int


def width(arm: ArmState, x) -> float:
    """Prediction width sqrt(x^T V^-1 x), solved from V directly."""
    xv = _context_array(x)
    sol = np.linalg.solve(arm.V, xv)
    value = float(xv @ sol)
    if not np.isfinite(value) or value < -1e-12:
        raise NumericalError("prediction width is not finite; V update is broken")
    return math.sqrt(max(value, 0.0))


class RouterState:
    """Sufficient statistics for all arms plus the global round counter."""

    def __init__(self, library: Library, params: RewardParams):
        params.validate_for(library)
        self.library = library
        self.params = params
        n, d = library.n, library.d
        self.V = np.empty((n, d, d))
        self.V[:] = params.ridge * np.eye(d)
        self.Vinv = np.empty((n, d, d))
        self.Vinv[:] = np.eye(d) / params.ridge
        self.b = np.zeros((n, d))
        self.theta_hat = np.zeros((n, d))
        self.play_count = np.zeros(n, dtype=np.int64)
        self.t = 0
        self._chol_inv: np.ndarray | None = None  # lazily built for TS routing

    @property
    def n_arms(self) -> int:
        return self.library.n

    def arm(self, a: int) -> ArmState:
        return ArmState(
            V=self.V[a].copy(),
            b=self.b[a].copy(),
            theta_hat=self.theta_hat[a].copy(),
            play_count=int(self.play_count[a]),
        )

    def beta(self, t: int | None = None) -> float:
        p = self.params
        return confidence_radius(
            self.t if t is None else t,
            sigma=p.sigma,
            ridge=p.ridge,
            n_arms=self.library.n,
            dim=self.library.d,
            delta=p.delta,
        )

    def prediction_widths(self, x) -> np.ndarray:
        """(N,) widths sqrt(x^T V_a^-1 x) for every arm."""
        xv = _context_array(x)
        w2 = np.einsum("aij,i,j->a", self.Vinv, xv, xv)
        if not np.all(np.isfinite(w2)):
            raise NumericalError("prediction width is not finite; V update is broken")
        return np.sqrt(np.maximum(w2, 0.0))

    def scores(self, x, cold_penalty: np.ndarray, beta_t: float) -> np.ndarray:
        """Cache-aware upper-confidence scores for every arm.

        cold_penalty[a] must already be alpha * latency_a for non-resident
        arms and 0 for resident ones.
        """
        xv = _context_array(x)
        return self.theta_hat @ xv + beta_t * self.prediction_widths(xv) - cold_penalty

    def select(self, x, cache: CacheState, beta_t: float) -> int:
        """Arm with the highest score; ties go to the lowest id."""
        pen = self.library.penalties(self.params.alpha)
        cold = np.ones(self.n_arms, dtype=bool)
        cold[list(cache.resident)] = False
        return int(np.argmax(self.scores(x, pen * cold, beta_t)))

    def update(self, a: int, x, q_observed: float) -> None:
        """Fold one observed (context, quality) pair into arm a."""
        xv = _context_array(x)
        self.V[a] += np.outer(xv, xv)
        self.b[a] += q_observed * xv
        theta = np.linalg.solve(self.V[a], self.b[a])
        if not np.all(np.isfinite(theta)):
            raise NumericalError(f"ridge solve failed for arm {a}")
        self.theta_hat[a] = theta
        self.play_count[a] += 1
        self.t += 1
        if self.play_count[a] % _INV_REFRESH == 0:
            self.Vinv[a] = np.linalg.inv(self.V[a])
        else:
            u = self.Vinv[a] @ xv
            self.Vinv[a] -= np.outer(u, u) / (1.0 + xv @ u)
        if self._chol_inv is not None:
            self._refresh_chol(a)

    # -- Thompson-sampling routing ------------------------------------------

    def _refresh_chol(self, a: int) -> None:
        assert self._chol_inv is not None
        try:
            L = np.linalg.cholesky(self.V[a])
        except np.linalg.LinAlgError as exc:
            raise NumericalError(f"covariance factorization failed for arm {a}") from exc
        self._chol_inv[a] = np.linalg.inv(L)

    def _ensure_chol(self) -> np.ndarray:
        if self._chol_inv is None:
            self._chol_inv = np.empty_like(self.V)
            for a in range(self.n_arms):
                self._refresh_chol(a)
        return self._chol_inv

    def thompson_sample(self, a: int, rng: np.random.Generator, v_scale: float) -> np.ndarray:
        """Draw theta ~ N(theta_hat_a, v_scale^2 * V_a^-1)."""
        if v_scale <= 0:
            raise ValueError("v_scale must be positive")
        linv = self._ensure_chol()[a]
        z = rng.standard_normal(self.library.d)
        return self.theta_hat[a] + v_scale * (linv.T @ z)

    def ts_select(
        self, x, cache: CacheState, v_scale: float, rng: np.random.Generator
    ) -> int:
        """Posterior-sampling routing: sampled estimate minus cold penalty, no bonus."""
        xv = _context_array(x)
        linv = self._ensure_chol()
        z = rng.standard_normal((self.n_arms, self.library.d))
        sampled = self.theta_hat + v_scale * np.einsum("aji,aj->ai", linv, z)
        pen = self.library.penalties(self.params.alpha)
        cold = np.ones(self.n_arms, dtype=bool)
        cold[list(cache.resident)] = False
        return int(np.argmax(sampled @ xv - pen * cold))
