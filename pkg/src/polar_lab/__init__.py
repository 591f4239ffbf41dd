"""Two-timescale adapter caching and contextual routing laboratory."""

from .core import (
    AdapterProfile,
    CacheState,
    ConfigurationError,
    Context,
    Library,
    RewardParams,
    noiseless_reward,
    realized_reward,
    switching_cost,
)
from .router import ArmState, NumericalError, RouterState, confidence_radius, width
from .cache import (
    BaselineCounters,
    CacheSolveResult,
    EmpiricalCacheUtility,
    EnumerationBudgetError,
    UtilityTable,
    baseline_update,
    build_empirical_utility,
    build_utility_table,
    empirical_cache_utility,
    greedy_cache_update,
    oracle_fixed_cache,
    solve_cache_exact,
)
from .env import (
    Environment,
    InstanceInfo,
    WorkloadSpec,
    generate_instance,
    load_profiles,
    sample_contexts,
    save_profiles,
    zipf_probabilities,
)
from .evaluate import (
    RegretLedger,
    build_ledger,
    cache_diagnostics,
    cache_quality_loss,
    decompose_regret,
    default_checkpoints,
    jaccard,
    oracle_value,
    pseudo_regret,
    verify_trace,
)
from .scheduler import (
    EpochSpec,
    POLICY_NAMES,
    RunArtifacts,
    forced_plays_per_arm,
    run_baseline,
    run_polar,
    run_polar_plus,
    run_policy,
)

__version__ = "0.1.0"
