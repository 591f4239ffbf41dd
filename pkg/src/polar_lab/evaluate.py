"""Ground-truth accounting: hindsight oracle, pseudo-regret, diagnostics.

Everything here is a pure function of completed traces plus the true
instance; observation noise never enters the regret.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cache import DEFAULT_ENUM_BUDGET, EnumerationBudgetError, _exact_best_subset
from .core import CacheState, ConfigurationError, Library, RewardParams


def oracle_value(
    library: Library,
    params: RewardParams,
    contexts: np.ndarray,
    *,
    budget: int = DEFAULT_ENUM_BUDGET,
) -> tuple[float, CacheState]:
    """Best fixed-cache total reward in hindsight, with the maximizing cache.

    Exact enumeration; ties resolve to the lexicographically smallest id set.
    """
    params.validate_for(library)
    X = np.asarray(contexts, dtype=np.float64)
    values = X @ library.theta_matrix().T
    found = _exact_best_subset(
        values, library.penalties(params.alpha), params.cache_size, budget
    )
    if found is None:
        raise EnumerationBudgetError(
            f"oracle value requires exact enumeration within budget {budget}"
        )
    ids, total = found
    return total, CacheState(resident=frozenset(ids))


def pseudo_regret(oracle_total: float, sum_mu: float, switching: float) -> float:
    """Oracle value minus realized noiseless reward plus switching charges."""
    return oracle_total - sum_mu + switching


def decompose_regret(
    artifacts, library: Library, params: RewardParams, upto: int | None = None
) -> tuple[float, float]:
    """Operational split: (quality_loss, latency_cost) over the first `upto` rounds.

    quality_loss compares each play against the unconstrained quality argmax;
    latency_cost adds cold-path penalties and switching charges.  These are
    diagnostics; no identity with the pseudo-regret is claimed.
    """
    t_end = artifacts.horizon if upto is None else upto
    X = artifacts.contexts[:t_end]
    qualities = X @ library.theta_matrix().T
    played = qualities[np.arange(t_end), artifacts.actions[:t_end]]
    quality_loss = float((qualities.max(axis=1) - played).sum())
    pen = library.penalties(params.alpha)
    cold = ~artifacts.hot[:t_end]
    latency = float(pen[artifacts.actions[:t_end]][cold].sum())
    latency += sum(
        params.gamma * ev.admitted for ev in artifacts.switch_events if ev.t <= t_end and ev.charged
    )
    return quality_loss, latency


def jaccard(c1, c2) -> float:
    """|intersection| / |union|, defined as 1 when both sets are empty."""
    s1, s2 = set(c1), set(c2)
    union = s1 | s2
    if not union:
        return 1.0
    return len(s1 & s2) / len(union)


def cache_quality_loss(
    library: Library,
    params: RewardParams,
    reference: CacheState,
    candidate,
    probe_contexts: np.ndarray,
) -> float:
    """Total gap between the reference cache and the candidate on probe contexts."""
    X = np.asarray(probe_contexts, dtype=np.float64)
    if X.shape[0] == 0:
        raise ConfigurationError("probe context list must be nonempty")
    values = X @ library.theta_matrix().T
    pen = library.penalties(params.alpha)

    def best(resident) -> np.ndarray:
        cold = np.ones(library.n, dtype=bool)
        cold[list(resident)] = False
        return (values - pen * cold).max(axis=1)

    resident = candidate.resident if isinstance(candidate, CacheState) else candidate
    return float((best(reference.resident) - best(resident)).sum())


@dataclass(frozen=True)
class CheckpointRow:
    t: int
    oracle_total: float
    sum_mu: float
    switching: float
    pseudo_regret: float
    quality_loss: float
    latency_cost: float


@dataclass(frozen=True)
class RegretLedger:
    """Final accounting plus per-checkpoint snapshots."""

    oracle_total: float
    oracle_cache: CacheState
    sum_mu: float
    switching: float
    pseudo_regret: float
    quality_loss: float
    latency_cost: float
    checkpoints: tuple[CheckpointRow, ...]


def default_checkpoints(horizon: int, *, start: int = 200, factor: int = 2) -> list[int]:
    """Geometric schedule from `start`, always ending at the horizon."""
    points = []
    t = start
    while t < horizon:
        points.append(t)
        t *= factor
    points.append(horizon)
    return points


def build_ledger(
    artifacts,
    library: Library,
    params: RewardParams,
    checkpoints: list[int] | None = None,
    *,
    budget: int = DEFAULT_ENUM_BUDGET,
) -> RegretLedger:
    """Exact regret accounting at each checkpoint (per-prefix oracles)."""
    horizon = artifacts.horizon
    points = sorted(set(checkpoints or default_checkpoints(horizon)))
    if points[-1] != horizon:
        points.append(horizon)
    if any(p < 1 or p > horizon for p in points):
        raise ConfigurationError("checkpoints must lie in [1, horizon]")
    mu_cum = np.cumsum(artifacts.mu)
    rows = []
    final_cache = None
    for t_end in points:
        total, cache = oracle_value(
            library, params, artifacts.contexts[:t_end], budget=budget
        )
        switching = sum(
            params.gamma * ev.admitted
            for ev in artifacts.switch_events
            if ev.t <= t_end and ev.charged
        )
        quality, latency = decompose_regret(artifacts, library, params, upto=t_end)
        rows.append(
            CheckpointRow(
                t=t_end,
                oracle_total=total,
                sum_mu=float(mu_cum[t_end - 1]),
                switching=switching,
                pseudo_regret=pseudo_regret(total, float(mu_cum[t_end - 1]), switching),
                quality_loss=quality,
                latency_cost=latency,
            )
        )
        if t_end == horizon:
            final_cache = cache
    last = rows[-1]
    return RegretLedger(
        oracle_total=last.oracle_total,
        oracle_cache=final_cache,
        sum_mu=last.sum_mu,
        switching=last.switching,
        pseudo_regret=last.pseudo_regret,
        quality_loss=last.quality_loss,
        latency_cost=last.latency_cost,
        checkpoints=tuple(rows),
    )


@dataclass(frozen=True)
class DiagnosticRow:
    t: int
    jaccard: float
    cache_quality_loss: float


def cache_diagnostics(
    artifacts,
    library: Library,
    params: RewardParams,
    reference: CacheState,
    probe_contexts: np.ndarray,
    checkpoints: list[int],
) -> list[DiagnosticRow]:
    """Jaccard overlap with the reference cache and probe quality loss over time."""
    rows = []
    for t_end in sorted(set(checkpoints)):
        resident = artifacts.resident_at(t_end)
        rows.append(
            DiagnosticRow(
                t=t_end,
                jaccard=jaccard(resident, reference.resident),
                cache_quality_loss=cache_quality_loss(
                    library, params, reference, resident, probe_contexts
                ),
            )
        )
    return rows


def verify_trace(artifacts, library: Library, params: RewardParams) -> None:
    """Recompute every stored noiseless reward and require exact equality."""
    theta = library.theta_matrix()
    pen = library.penalties(params.alpha)
    for t in range(artifacts.horizon):
        a = int(artifacts.actions[t])
        x = artifacts.contexts[t]
        mu = float(theta[a] @ x)
        if not artifacts.hot[t]:
            mu -= pen[a]
        if mu != artifacts.mu[t]:
            raise AssertionError(f"stored mu differs at round {t}: {artifacts.mu[t]} vs {mu}")
        resident = artifacts.resident_at(t + 1)
        if (a in resident) != bool(artifacts.hot[t]):
            raise AssertionError(f"hot flag inconsistent with cache segments at round {t}")
