"""Cache controllers: greedy marginal-gain updates, exact subset search, baselines.

The exact solver and the hindsight oracle share one decomposition: for any
per-round value row v_t and penalties pen,

    max_a [v_t(a) - pen(a) * 1{a not in S}] = b_t + max_{a in S} delta_t(a)

with b_t = max_a (v_t(a) - pen(a)) and delta_t(a) = max(0, v_t(a) - b_t).
Rows where every delta is zero contribute the same constant to every subset,
so only rows with live columns are enumerated.  Arms with zero penalty have
delta identically zero and therefore never occupy a slot.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .core import CacheState, ConfigurationError, Library, RewardParams
from .router import RouterState

DEFAULT_ENUM_BUDGET = 1_000_000

# Above this support size the per-group subset table is larger than direct
# evaluation; both paths are exact.
_TABLE_MAX_BITS = 14


class EnumerationBudgetError(RuntimeError):
    """Exact subset enumeration would exceed the configured budget."""


@dataclass(frozen=True)
class UtilityTable:
    """Per-(round, arm) upper-confidence values plus cold penalties."""

    ucb: np.ndarray
    pen: np.ndarray
    contexts: np.ndarray

    def __post_init__(self):
        if self.ucb.ndim != 2:
            raise ConfigurationError("utility table must be rounds x arms")
        if self.pen.shape != (self.ucb.shape[1],):
            raise ConfigurationError("penalty vector does not match arm count")
        if np.any(self.pen < 0):
            raise ConfigurationError("penalties must be nonnegative")
        if self.contexts.shape[0] != self.ucb.shape[0]:
            raise ConfigurationError("contexts do not match the table rows")


def build_utility_table(
    router: RouterState, contexts: np.ndarray, beta_t: float
) -> UtilityTable:
    """Score every historical context with estimate + beta * width."""
    X = np.asarray(contexts, dtype=np.float64)
    est = X @ router.theta_hat.T
    w2 = np.einsum("ti,aij,tj->ta", X, router.Vinv, X)
    ucb = est + beta_t * np.sqrt(np.maximum(w2, 0.0))
    pen = router.library.penalties(router.params.alpha)
    return UtilityTable(ucb=ucb, pen=pen, contexts=X)


def greedy_cache_update(
    prev: CacheState, table: UtilityTable, cache_size: int, gamma: float
) -> CacheState:
    """Greedy marginal-gain selection against the all-cold baseline.

    Admits arms while the gain (net of the switching charge for arms outside
    the previous cache) stays strictly positive; may return fewer than
    cache_size arms.
    """
    n_rounds, n_arms = table.ucb.shape
    if n_rounds == 0:
        raise ConfigurationError("utility table is empty")
    if cache_size < 1:
        raise ConfigurationError("cache size must be >= 1")
    b = (table.ucb - table.pen).max(axis=1)
    delta = np.maximum(table.ucb - b[:, None], 0.0)
    keep_new = ~np.isin(np.arange(n_arms), sorted(prev.resident))
    best = np.zeros(n_rounds)
    chosen: list[int] = []
    for _ in range(min(cache_size, n_arms)):
        gains = np.maximum(delta - best[:, None], 0.0).sum(axis=0)
        gains -= gamma * keep_new
        if chosen:
            gains[chosen] = -np.inf
        a_star = int(np.argmax(gains))
        if gains[a_star] <= 0.0:
            break
        chosen.append(a_star)
        np.maximum(best, delta[:, a_star], out=best)
    resident = frozenset(chosen)
    admitted = len(resident - prev.resident)
    return CacheState(
        resident=resident,
        epoch_index=prev.epoch_index + 1,
        switches_total=prev.switches_total + admitted,
    )


@dataclass
class EmpiricalCacheUtility:
    """Average best estimated penalized reward over historical contexts."""

    contexts: np.ndarray
    theta_hat: np.ndarray
    pen: np.ndarray
    _values: np.ndarray | None = field(default=None, repr=False)

    @property
    def n(self) -> int:
        return self.contexts.shape[0]

    def values(self) -> np.ndarray:
        """(n, N) estimated qualities for every (context, arm) pair."""
        if self._values is None:
            self._values = self.contexts @ self.theta_hat.T
        return self._values


def build_empirical_utility(
    router: RouterState, contexts: np.ndarray
) -> EmpiricalCacheUtility:
    return EmpiricalCacheUtility(
        contexts=np.asarray(contexts, dtype=np.float64),
        theta_hat=router.theta_hat.copy(),
        pen=router.library.penalties(router.params.alpha),
    )


def empirical_cache_utility(util: EmpiricalCacheUtility, resident) -> float:
    """F-hat: mean over contexts of the best penalized estimated reward."""
    if util.n < 1:
        raise ConfigurationError("empirical utility needs at least one context")
    cold = np.ones(util.pen.shape[0], dtype=bool)
    cold[list(resident)] = False
    adjusted = util.values() - util.pen * cold
    return float(adjusted.max(axis=1).mean())


def _subset_max_table(rows: np.ndarray, bits: int) -> np.ndarray:
    """sum_t max over each column subset of rows, for all 2^bits subsets."""
    table = np.zeros(1 << bits)
    n_rows = rows.shape[0]
    chunk = max(1, int(8_000_000 // (1 << bits)))
    for start in range(0, n_rows, chunk):
        block = rows[start : start + chunk]
        maxv = np.zeros((1 << bits, block.shape[0]))
        for q in range(1, 1 << bits):
            low = (q & -q).bit_length() - 1
            np.maximum(maxv[q & (q - 1)], block[:, low], out=maxv[q])
        table += maxv.sum(axis=1)
    return table


def _direct_group_totals(
    rows: np.ndarray, arm_ids: list[int], subsets: list[tuple[int, ...]]
) -> np.ndarray:
    """Per-subset totals for one support group, evaluated by gathering columns."""
    pos = {a: i for i, a in enumerate(arm_ids)}
    k = max(len(s) for s in subsets)
    padded = np.hstack([rows, np.zeros((rows.shape[0], 1))])
    pad_col = rows.shape[1]
    idx = np.full((len(subsets), k), pad_col, dtype=np.int64)
    for si, s in enumerate(subsets):
        cols = [pos[a] for a in s if a in pos]
        idx[si, : len(cols)] = cols
    totals = np.empty(len(subsets))
    chunk = max(1, int(2_000_000 // max(1, rows.shape[0] * k)))
    for start in range(0, len(subsets), chunk):
        gathered = padded[:, idx[start : start + chunk]]
        totals[start : start + chunk] = gathered.max(axis=2).sum(axis=0)
    return totals


def _exact_best_subset(
    values: np.ndarray, pen: np.ndarray, cache_size: int, budget: int
) -> tuple[tuple[int, ...], float] | None:
    """Maximize sum_t max_a (values - pen outside S) over size-K subsets.

    Returns the lexicographically smallest maximizer and the total (not
    averaged) objective, or None when the enumeration budget is exceeded.
    """
    n_rounds, n_arms = values.shape
    k = min(cache_size, n_arms)
    if n_arms > 63:
        raise ConfigurationError("subset enumeration supports at most 63 arms")
    if math.comb(n_arms, k) > budget:
        return None
    if n_rounds == 0:
        return tuple(range(k)), 0.0
    b = (values - pen).max(axis=1)
    base_total = float(b.sum())
    delta = np.maximum(values - b[:, None], 0.0)
    subsets = list(itertools.combinations(range(n_arms), k))
    totals = np.zeros(len(subsets))
    live = delta > 0
    keep = live.any(axis=1)
    if keep.any():
        delta_live = delta[keep]
        pow2 = 1 << np.arange(n_arms, dtype=np.uint64)
        row_mask = live[keep].astype(np.uint64) @ pow2
        masks = np.array([sum(1 << a for a in s) for s in subsets], dtype=np.uint64)
        uniq, inverse = np.unique(row_mask, return_inverse=True)
        for gi, gmask in enumerate(uniq):
            arm_ids = [a for a in range(n_arms) if (int(gmask) >> a) & 1]
            rows = np.ascontiguousarray(delta_live[inverse == gi][:, arm_ids])
            bits = len(arm_ids)
            if bits <= _TABLE_MAX_BITS:
                table = _subset_max_table(rows, bits)
                qidx = np.zeros(len(subsets), dtype=np.int64)
                for kbit, a in enumerate(arm_ids):
                    qidx |= ((masks >> np.uint64(a)) & np.uint64(1)).astype(np.int64) << kbit
                totals += table[qidx]
            else:
                totals += _direct_group_totals(rows, arm_ids, subsets)
    best = int(np.argmax(totals))
    return subsets[best], base_total + float(totals[best])


@dataclass(frozen=True)
class CacheSolveResult:
    """Output of the empirical cache optimizer."""

    resident: frozenset[int]
    value: float
    used_fallback: bool = False


def solve_cache_exact(
    util: EmpiricalCacheUtility, cache_size: int, *, budget: int = DEFAULT_ENUM_BUDGET
) -> CacheSolveResult:
    """Best size-K resident set under the empirical utility.

    Exact enumeration with lexicographic tie-break; when the subset count
    exceeds the budget, falls back to the greedy update with zero switching
    charge and flags the result.
    """
    if util.n < 1:
        raise ConfigurationError("empirical utility needs at least one context")
    found = _exact_best_subset(util.values(), util.pen, cache_size, budget)
    if found is None:
        table = UtilityTable(ucb=util.values(), pen=util.pen, contexts=util.contexts)
        greedy = greedy_cache_update(
            CacheState(frozenset()), table, cache_size, gamma=0.0
        )
        value = empirical_cache_utility(util, greedy.resident)
        return CacheSolveResult(greedy.resident, value, used_fallback=True)
    ids, total = found
    return CacheSolveResult(frozenset(ids), total / util.n, used_fallback=False)


def oracle_fixed_cache(
    library: Library,
    params: RewardParams,
    contexts: np.ndarray,
    *,
    budget: int = DEFAULT_ENUM_BUDGET,
) -> CacheState:
    """Hindsight-optimal fixed cache under the true quality vectors."""
    params.validate_for(library)
    X = np.asarray(contexts, dtype=np.float64)
    values = X @ library.theta_matrix().T
    found = _exact_best_subset(
        values, library.penalties(params.alpha), params.cache_size, budget
    )
    if found is None:
        raise EnumerationBudgetError(
            f"oracle cache needs exact enumeration; C({library.n},{params.cache_size}) "
            f"exceeds the budget {budget}"
        )
    ids, _ = found
    return CacheState(resident=frozenset(ids))


# -- non-learning baselines --------------------------------------------------


@dataclass
class BaselineCounters:
    """Selection statistics the heuristic policies react to."""

    play_count: np.ndarray
    last_play_round: np.ndarray

    @classmethod
    def fresh(cls, n_arms: int) -> "BaselineCounters":
        return cls(
            play_count=np.zeros(n_arms, dtype=np.int64),
            last_play_round=np.full(n_arms, -1, dtype=np.int64),
        )

    def record(self, a: int, t: int) -> None:
        self.play_count[a] += 1
        self.last_play_round[a] = t


def _fill_to_size(ranked: list[int], prev: CacheState, n_arms: int, k: int) -> frozenset[int]:
    chosen = list(ranked[:k])
    have = set(chosen)
    for a in sorted(prev.resident):
        if len(chosen) >= k:
            break
        if a not in have:
            chosen.append(a)
            have.add(a)
    for a in range(n_arms):
        if len(chosen) >= k:
            break
        if a not in have:
            chosen.append(a)
            have.add(a)
    return frozenset(chosen)


def random_cache(n_arms: int, k: int, rng: np.random.Generator) -> frozenset[int]:
    return frozenset(int(a) for a in rng.choice(n_arms, size=k, replace=False))


def baseline_update(
    policy: str,
    prev: CacheState,
    counters: BaselineCounters,
    cache_size: int,
    rng: np.random.Generator,
    *,
    table: UtilityTable | None = None,
    gamma: float = 0.0,
    epsilon: float = 0.1,
) -> CacheState:
    """One cache refresh for lru / lfu / static / eps_greedy."""
    n_arms = counters.play_count.shape[0]
    if policy == "static":
        return CacheState(prev.resident, prev.epoch_index + 1, prev.switches_total)
    if policy == "lru":
        played = [a for a in range(n_arms) if counters.last_play_round[a] >= 0]
        played.sort(key=lambda a: (-counters.last_play_round[a], a))
        resident = _fill_to_size(played, prev, n_arms, cache_size)
    elif policy == "lfu":
        played = [a for a in range(n_arms) if counters.play_count[a] > 0]
        played.sort(key=lambda a: (-counters.play_count[a], a))
        resident = _fill_to_size(played, prev, n_arms, cache_size)
    elif policy == "eps_greedy":
        if table is None:
            raise ConfigurationError("eps_greedy needs a utility table")
        if rng.random() < epsilon:
            resident = random_cache(n_arms, cache_size, rng)
        else:
            return greedy_cache_update(prev, table, cache_size, gamma)
    else:
        raise ConfigurationError(f"unknown baseline policy {policy!r}")
    admitted = len(resident - prev.resident)
    return CacheState(resident, prev.epoch_index + 1, prev.switches_total + admitted)
