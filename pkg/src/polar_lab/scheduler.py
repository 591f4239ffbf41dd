"""Two-timescale orchestration: fixed-epoch and doubling-epoch loops.

Fast timescale: one arm per round via cache-aware optimism (or posterior
sampling).  Slow timescale: the resident set changes only at epoch
boundaries.  The doubling variant prepends a forced round-robin phase to each
epoch and re-optimizes the cache over all history; leave-one-out ablation
flags degrade it back toward the fixed-epoch loop.
"""
from __future__ import annotations

import math
from bisect import bisect_right
from dataclasses import dataclass, field

import numpy as np

from .cache import (
    BaselineCounters,
    build_empirical_utility,
    build_utility_table,
    baseline_update,
    greedy_cache_update,
    oracle_fixed_cache,
    random_cache,
    solve_cache_exact,
)
from .core import CacheState, ConfigurationError, Context, Library, RewardParams
from .env import Environment
from .router import RouterState

PHASE_EXPLOIT = 0
PHASE_FORCED = 1

_INIT_CACHE_STREAM = 0x11C
_POLICY_AUX_STREAM = 0xAE5

BASELINE_TAGS = ("lru", "lfu", "static", "eps_greedy", "oracle")


@dataclass(frozen=True)
class EpochSpec:
    """Epoch schedule plus leave-one-out ablation flags."""

    mode: str
    h: int = 200
    kappa: float = 0.05
    c0: int | None = None
    no_doubling: bool = False
    no_forced: bool = False
    no_exact: bool = False

    def __post_init__(self):
        if self.mode not in ("fixed", "doubling"):
            raise ConfigurationError("epoch mode must be 'fixed' or 'doubling'")
        if self.h < 1:
            raise ConfigurationError("epoch length must be >= 1")
        if self.kappa <= 0:
            raise ConfigurationError("exploration constant must be positive")
        if self.mode == "fixed" and (self.no_doubling or self.no_forced or self.no_exact):
            raise ConfigurationError("ablation flags apply to doubling mode only")

    @staticmethod
    def fixed(h: int = 200) -> "EpochSpec":
        return EpochSpec(mode="fixed", h=h)

    @staticmethod
    def doubling(
        kappa: float = 0.05,
        c0: int | None = None,
        h: int = 200,
        *,
        no_doubling: bool = False,
        no_forced: bool = False,
        no_exact: bool = False,
    ) -> "EpochSpec":
        return EpochSpec(
            mode="doubling",
            h=h,
            kappa=kappa,
            c0=c0,
            no_doubling=no_doubling,
            no_forced=no_forced,
            no_exact=no_exact,
        )


def default_c0(library: Library, params: RewardParams) -> int:
    return math.ceil(math.log(6 * library.n * library.d / params.delta))


def forced_plays_per_arm(ell: int, kappa: float, d: int, c0: int) -> int:
    """Per-arm forced plays in epoch ell; the phase spans N * m_ell rounds."""
    if ell < 0:
        raise ConfigurationError("epoch index must be nonnegative")
    return max(1, math.floor(kappa * d * (ell + c0)))


@dataclass(frozen=True)
class SwitchEvent:
    """A resident-set change; t is the first (1-based) round it governs."""

    t: int
    admitted: int
    removed: int
    resident: frozenset[int]
    charged: bool


@dataclass(frozen=True)
class RoundTrace:
    t: int
    context: np.ndarray
    task_id: int
    action: int
    hot: bool
    q: float
    mu: float
    epoch: int
    phase: int


@dataclass
class RunArtifacts:
    """Full record of one run: per-round arrays plus slow-timescale events."""

    policy: str
    seed: int
    horizon: int
    actions: np.ndarray
    hot: np.ndarray
    q: np.ndarray
    mu: np.ndarray
    widths: np.ndarray
    epoch: np.ndarray
    phase: np.ndarray
    tasks: np.ndarray
    contexts: np.ndarray
    segment_starts: list[int]
    segment_sets: list[frozenset[int]]
    switch_events: list[SwitchEvent]
    switching_cost: float
    forced_rounds: int
    solver_invocation_rounds: list[int]
    init_cache: frozenset[int]
    final_cache: CacheState
    router: RouterState
    warnings: list[str] = field(default_factory=list)

    def resident_at(self, t: int) -> frozenset[int]:
        """Resident set governing 1-based round t (or the final set past the end)."""
        idx = bisect_right(self.segment_starts, t) - 1
        return self.segment_sets[max(idx, 0)]

    def n_cache_updates(self) -> int:
        """Resident-set changes after the initial placement."""
        return len(self.switch_events)

    def n_solver_invocations(self, upto: int | None = None) -> int:
        """Slow-timescale cache re-solves, optionally within the first rounds."""
        if upto is None:
            return len(self.solver_invocation_rounds)
        return sum(1 for t in self.solver_invocation_rounds if t <= upto)

    def round(self, i: int) -> RoundTrace:
        return RoundTrace(
            t=i + 1,
            context=self.contexts[i],
            task_id=int(self.tasks[i]),
            action=int(self.actions[i]),
            hot=bool(self.hot[i]),
            q=float(self.q[i]),
            mu=float(self.mu[i]),
            epoch=int(self.epoch[i]),
            phase=int(self.phase[i]),
        )

    def sum_width_sq(self) -> float:
        return float((self.widths**2).sum())


class PolicyRun:
    """Mutable state of one simulation run; owns the router and the cache."""

    def __init__(
        self,
        policy: str,
        library: Library,
        params: RewardParams,
        env: Environment,
        horizon: int,
        router_kind: str = "ucb",
    ):
        if horizon < 1 or horizon > env.horizon:
            raise ConfigurationError("horizon must lie in [1, env.horizon]")
        self.policy = policy
        self.library = library
        self.params = params
        self.env = env
        self.horizon = horizon
        self.router_kind = router_kind
        self.router = RouterState(library, params)
        self.pen = library.penalties(params.alpha)
        self.theta_true = library.theta_matrix()
        n = library.n
        self.cold_mask = np.ones(n, dtype=bool)
        self.resident: frozenset[int] = frozenset()
        self.t = 0
        self.actions = np.empty(horizon, dtype=np.int32)
        self.hot = np.empty(horizon, dtype=bool)
        self.q = np.empty(horizon)
        self.mu = np.empty(horizon)
        self.widths = np.empty(horizon)
        self.epoch_arr = np.empty(horizon, dtype=np.int32)
        self.phase_arr = np.empty(horizon, dtype=np.uint8)
        self.segment_starts: list[int] = []
        self.segment_sets: list[frozenset[int]] = []
        self.switch_events: list[SwitchEvent] = []
        self.switching_cost = 0.0
        self.switches_total = 0
        self.forced_rounds = 0
        self.solver_invocation_rounds: list[int] = []
        self.epoch_index = 0
        self.warnings: list[str] = []
        self.init_rng = np.random.default_rng(
            np.random.SeedSequence([env.seed, _INIT_CACHE_STREAM])
        )
        self.aux_rng = np.random.default_rng(
            np.random.SeedSequence([env.seed, _POLICY_AUX_STREAM])
        )
        self.init_cache: frozenset[int] = frozenset()

    # -- cache control -------------------------------------------------------

    def place_initial_cache(self, resident: frozenset[int] | None = None) -> None:
        """Uncharged initial placement; by default a seed-drawn random set."""
        if resident is None:
            resident = random_cache(self.library.n, self.params.cache_size, self.init_rng)
        self.init_cache = frozenset(resident)
        self._set_resident(self.init_cache)
        self.segment_starts.append(1)
        self.segment_sets.append(self.init_cache)

    def apply_cache(self, resident: frozenset[int], charged: bool) -> None:
        resident = frozenset(resident)
        if resident == self.resident:
            return
        admitted = len(resident - self.resident)
        removed = len(self.resident - resident)
        if charged:
            self.switching_cost += self.params.gamma * admitted
        self.switches_total += admitted
        self.switch_events.append(
            SwitchEvent(
                t=self.t + 1,
                admitted=admitted,
                removed=removed,
                resident=resident,
                charged=charged,
            )
        )
        self.segment_starts.append(self.t + 1)
        self.segment_sets.append(resident)
        self._set_resident(resident)

    def _set_resident(self, resident: frozenset[int]) -> None:
        self.resident = resident
        self.cold_mask[:] = True
        if resident:
            self.cold_mask[list(resident)] = False

    def cache_state(self) -> CacheState:
        return CacheState(
            resident=self.resident,
            epoch_index=self.epoch_index,
            switches_total=self.switches_total,
        )

    # -- fast timescale --------------------------------------------------------

    def play_round(self, epoch: int, phase: int, forced_arm: int | None = None) -> int:
        router = self.router
        t0 = self.t
        x = self.env.contexts[t0]
        beta_t = router.beta(t0 + 1)
        cold_pen = self.pen * self.cold_mask
        if forced_arm is not None:
            a = forced_arm
            w2 = float(x @ router.Vinv[a] @ x)
            width_a = math.sqrt(max(w2, 0.0))
        elif self.router_kind == "ts":
            a = router.ts_select(x, CacheState(self.resident), beta_t, self.aux_rng)
            w2 = float(x @ router.Vinv[a] @ x)
            width_a = math.sqrt(max(w2, 0.0))
        else:
            widths = router.prediction_widths(x)
            scores = router.theta_hat @ x + beta_t * widths - cold_pen
            a = int(np.argmax(scores))
            width_a = float(widths[a])
        hot = not self.cold_mask[a]
        q = self.env.quality(t0, a)
        mu = float(self.theta_true[a] @ x)
        if not hot:
            mu -= self.pen[a]
        router.update(a, x, q)
        self.actions[t0] = a
        self.hot[t0] = hot
        self.q[t0] = q
        self.mu[t0] = mu
        self.widths[t0] = width_a
        self.epoch_arr[t0] = epoch
        self.phase_arr[t0] = phase
        if phase == PHASE_FORCED:
            self.forced_rounds += 1
        self.t = t0 + 1
        return a

    def finalize(self) -> RunArtifacts:
        return RunArtifacts(
            policy=self.policy,
            seed=self.env.seed,
            horizon=self.horizon,
            actions=self.actions,
            hot=self.hot,
            q=self.q,
            mu=self.mu,
            widths=self.widths,
            epoch=self.epoch_arr,
            phase=self.phase_arr,
            tasks=self.env.tasks[: self.horizon],
            contexts=self.env.contexts[: self.horizon],
            segment_starts=self.segment_starts,
            segment_sets=self.segment_sets,
            switch_events=self.switch_events,
            switching_cost=self.switching_cost,
            forced_rounds=self.forced_rounds,
            solver_invocation_rounds=self.solver_invocation_rounds,
            init_cache=self.init_cache,
            final_cache=self.cache_state(),
            router=self.router,
            warnings=self.warnings,
        )


def run_polar(
    library: Library,
    params: RewardParams,
    spec: EpochSpec,
    env: Environment,
    horizon: int | None = None,
    *,
    policy_name: str = "polar",
    router_kind: str = "ucb",
) -> RunArtifacts:
    """Fixed-length epochs; greedy marginal-gain cache update at each boundary
    from the previous epoch's contexts."""
    if spec.mode != "fixed":
        raise ConfigurationError("run_polar expects a fixed epoch spec")
    T = horizon or env.horizon
    run = PolicyRun(policy_name, library, params, env, T, router_kind)
    run.place_initial_cache()
    ell = 0
    window_start = 0
    while run.t < T:
        if ell > 0:
            window = env.contexts[window_start : run.t]
            table = build_utility_table(run.router, window, run.router.beta(run.t + 1))
            new = greedy_cache_update(
                run.cache_state(), table, params.cache_size, params.gamma
            )
            run.solver_invocation_rounds.append(run.t + 1)
            run.apply_cache(new.resident, charged=True)
        window_start = run.t
        run.epoch_index = ell
        for _ in range(min(spec.h, T - run.t)):
            run.play_round(epoch=ell, phase=PHASE_EXPLOIT)
        ell += 1
    return run.finalize()


def run_polar_plus(
    library: Library,
    params: RewardParams,
    spec: EpochSpec,
    env: Environment,
    horizon: int | None = None,
    *,
    policy_name: str = "polar_plus",
    router_kind: str = "ucb",
) -> RunArtifacts:
    """Doubling epochs with forced round-robin exploration and an exact cache
    refresh over all history; ablation flags remove one ingredient each."""
    if spec.mode != "doubling":
        raise ConfigurationError("run_polar_plus expects a doubling epoch spec")
    T = horizon or env.horizon
    run = PolicyRun(policy_name, library, params, env, T, router_kind)
    run.place_initial_cache()
    c0 = spec.c0 if spec.c0 is not None else default_c0(library, params)
    ell = 0
    window_start = 0
    while run.t < T:
        run.epoch_index = ell
        if not spec.no_forced:
            m = forced_plays_per_arm(ell, spec.kappa, library.d, c0)
            for arm in list(range(library.n)) * m:
                if run.t >= T:
                    break
                run.play_round(epoch=ell, phase=PHASE_FORCED, forced_arm=arm)
        if run.t >= T:
            break
        if spec.no_exact:
            window = env.contexts[window_start : run.t]
            if window.shape[0] > 0:
                table = build_utility_table(
                    run.router, window, run.router.beta(run.t + 1)
                )
                new = greedy_cache_update(
                    run.cache_state(), table, params.cache_size, params.gamma
                )
                run.solver_invocation_rounds.append(run.t + 1)
                run.apply_cache(new.resident, charged=(ell > 0))
                window_start = run.t
        elif run.t > 0:
            util = build_empirical_utility(run.router, env.contexts[: run.t])
            result = solve_cache_exact(util, params.cache_size)
            run.solver_invocation_rounds.append(run.t + 1)
            if result.used_fallback:
                run.warnings.append(f"epoch {ell}: enumeration budget hit, greedy fallback")
            run.apply_cache(result.resident, charged=(ell > 0))
            window_start = run.t
        exploit = spec.h if spec.no_doubling else (1 << ell)
        for _ in range(min(exploit, T - run.t)):
            run.play_round(epoch=ell, phase=PHASE_EXPLOIT)
        ell += 1
    return run.finalize()


def run_baseline(
    tag: str,
    library: Library,
    params: RewardParams,
    env: Environment,
    horizon: int | None = None,
    h: int = 200,
    *,
    epsilon: float = 0.1,
) -> RunArtifacts:
    """LinUCB routing paired with a non-learning cache policy."""
    if tag not in BASELINE_TAGS:
        raise ConfigurationError(f"unknown baseline {tag!r}")
    T = horizon or env.horizon
    run = PolicyRun(tag, library, params, env, T, "ucb")
    if tag == "oracle":
        if env.contexts.shape[0] < T:
            raise ConfigurationError("oracle baseline needs the full context sequence")
        run.place_initial_cache(
            oracle_fixed_cache(library, params, env.contexts[:T]).resident
        )
    else:
        run.place_initial_cache()
    counters = BaselineCounters.fresh(library.n)
    ell = 0
    window_start = 0
    while run.t < T:
        if ell > 0 and tag in ("lru", "lfu", "eps_greedy"):
            table = None
            if tag == "eps_greedy":
                window = env.contexts[window_start : run.t]
                table = build_utility_table(
                    run.router, window, run.router.beta(run.t + 1)
                )
            new = baseline_update(
                tag,
                run.cache_state(),
                counters,
                params.cache_size,
                run.aux_rng,
                table=table,
                gamma=params.gamma,
                epsilon=epsilon,
            )
            run.solver_invocation_rounds.append(run.t + 1)
            run.apply_cache(new.resident, charged=True)
        window_start = run.t
        run.epoch_index = ell
        for _ in range(min(h, T - run.t)):
            a = run.play_round(epoch=ell, phase=PHASE_EXPLOIT)
            counters.record(a, run.t)
        ell += 1
    return run.finalize()


ABLATION_FLAGS = {
    "polar_plus_no_doubling": dict(no_doubling=True),
    "polar_plus_no_forced": dict(no_forced=True),
    "polar_plus_no_exact": dict(no_exact=True),
}

POLICY_NAMES = (
    "polar",
    "polar_plus",
    "polar_ts",
    "polar_plus_ts",
    *ABLATION_FLAGS,
    *BASELINE_TAGS,
)


def run_policy(
    name: str,
    library: Library,
    params: RewardParams,
    env: Environment,
    horizon: int | None = None,
    *,
    h: int = 200,
    kappa: float = 0.05,
    c0: int | None = None,
) -> RunArtifacts:
    """Dispatch a policy by name with shared epoch defaults."""
    if name == "polar" or name == "polar_ts":
        return run_polar(
            library,
            params,
            EpochSpec.fixed(h),
            env,
            horizon,
            policy_name=name,
            router_kind="ts" if name.endswith("_ts") else "ucb",
        )
    if name == "polar_plus" or name == "polar_plus_ts":
        return run_polar_plus(
            library,
            params,
            EpochSpec.doubling(kappa, c0, h),
            env,
            horizon,
            policy_name=name,
            router_kind="ts" if name.endswith("_ts") else "ucb",
        )
    if name in ABLATION_FLAGS:
        return run_polar_plus(
            library,
            params,
            EpochSpec.doubling(kappa, c0, h, **ABLATION_FLAGS[name]),
            env,
            horizon,
            policy_name=name,
        )
    if name in BASELINE_TAGS:
        return run_baseline(name, library, params, env, horizon, h)
    raise ConfigurationError(f"unknown policy {name!r}")
