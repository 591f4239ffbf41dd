"""Measurement-calibrated workload simulation and instance generation.

Contexts and observation noise are pre-materialized per round so that two
policies run on the same seed see identical streams: noise is keyed by
(round, arm), independent of what was actually played.
"""
from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import (
    NORM_TOL,
    AdapterProfile,
    ConfigurationError,
    Context,
    Library,
    RewardParams,
)

_CTX_STREAM = 0x1C0
_NOISE_STREAM = 0x2A7


@dataclass(frozen=True)
class WorkloadSpec:
    """Power-law task mixture over noisy task-mean contexts."""

    n_tasks: int
    zipf_exponent: float
    task_means: np.ndarray
    context_noise: float
    seed: int

    def __post_init__(self):
        means = np.asarray(self.task_means, dtype=np.float64)
        if means.shape[0] != self.n_tasks:
            raise ConfigurationError("task_means rows must match n_tasks")
        norms = np.linalg.norm(means, axis=1)
        if np.any(norms > 1.0 + NORM_TOL):
            raise ConfigurationError("task means must have norm <= 1")
        if self.zipf_exponent <= 0:
            raise ConfigurationError("zipf exponent must be positive")
        if self.context_noise < 0:
            raise ConfigurationError("context noise must be nonnegative")
        means.setflags(write=False)
        object.__setattr__(self, "task_means", means)

    @property
    def d(self) -> int:
        return self.task_means.shape[1]

    def task_probabilities(self) -> np.ndarray:
        return zipf_probabilities(self.n_tasks, self.zipf_exponent)


def zipf_probabilities(n_tasks: int, exponent: float) -> np.ndarray:
    """P(task i) proportional to (i+1)^-exponent for i = 0..n_tasks-1."""
    weights = np.arange(1, n_tasks + 1, dtype=np.float64) ** (-exponent)
    return weights / weights.sum()


def _cap_rows(x: np.ndarray) -> np.ndarray:
    """Rescale rows with norm above 1 back onto the unit ball."""
    norms = np.linalg.norm(x, axis=1)
    over = norms > 1.0
    if np.any(over):
        x[over] /= norms[over, None]
    return x


def sample_contexts(
    workload: WorkloadSpec, n: int, seed: int
) -> tuple[np.ndarray, np.ndarray]:
    """Draw n (context, task) pairs from the workload; deterministic in seed.

    Tasks and context noise come from separate substreams so a longer draw
    extends a shorter one (round t's context never depends on the horizon).
    """
    task_rng = np.random.default_rng(np.random.SeedSequence([seed, _CTX_STREAM, 0]))
    tasks = task_rng.choice(workload.n_tasks, size=n, p=workload.task_probabilities())
    x = workload.task_means[tasks].copy()
    if workload.context_noise > 0:
        noise_rng = np.random.default_rng(np.random.SeedSequence([seed, _CTX_STREAM, 1]))
        x += workload.context_noise * noise_rng.standard_normal((n, workload.d))
    return _cap_rows(x), tasks.astype(np.int64)


class Environment:
    """One run's request stream and bandit feedback.

    The full context sequence is materialized up front (hindsight baselines
    need it) and quality noise is drawn per (round, arm).
    """

    def __init__(
        self,
        library: Library,
        workload: WorkloadSpec,
        params: RewardParams,
        horizon: int,
        seed: int,
    ):
        if horizon < 1:
            raise ConfigurationError("horizon must be >= 1")
        if workload.d != library.d:
            raise ConfigurationError("workload dimension does not match library")
        params.validate_for(library)
        self.library = library
        self.workload = workload
        self.params = params
        self.horizon = horizon
        self.seed = seed
        self.contexts, self.tasks = sample_contexts(workload, horizon, seed)
        noise_rng = np.random.default_rng(np.random.SeedSequence([seed, _NOISE_STREAM]))
        self._noise = noise_rng.standard_normal((horizon, library.n))
        self._theta = library.theta_matrix()
        self._cursor = 0

    def context(self, t: int) -> np.ndarray:
        """Context row for 0-based round t."""
        return self.contexts[t]

    def quality(self, t: int, a: int) -> float:
        """Observed quality for playing arm a at round t (bandit feedback)."""
        return float(self._theta[a] @ self.contexts[t] + self.params.sigma * self._noise[t, a])

    # Stateful facade used by tests and small scripts; the schedulers index
    # rounds directly.
    def next_context(self) -> Context:
        if self._cursor >= self.horizon:
            raise ConfigurationError("environment horizon exhausted")
        t = self._cursor
        self._cursor += 1
        return Context(x=self.contexts[t], task_id=int(self.tasks[t]))

    def observe_quality(self, a: int, x=None) -> float:
        if self._cursor == 0:
            raise ConfigurationError("no context has been drawn yet")
        if not (0 <= a < self.library.n):
            raise ConfigurationError(f"unknown adapter id {a}")
        return self.quality(self._cursor - 1, a)


# -- adapter-profile files ----------------------------------------------------

_BASE_COLUMNS = ["id", "name", "rank", "size_mb", "cold_latency_ms", "is_base"]


def load_profiles(path: str | Path) -> Library:
    """Read an adapter-profile table; latencies convert ms -> s.

    Columns: id, name, rank, size_mb, cold_latency_ms, is_base, theta0..theta{d-1}.
    Rows violating the norm or latency contracts are rejected with the row
    named, never clamped.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise ConfigurationError(f"{path}: empty profile file")
        theta_cols = [c for c in reader.fieldnames if c.startswith("theta")]
        missing = [c for c in _BASE_COLUMNS if c not in reader.fieldnames]
        if missing or not theta_cols:
            raise ConfigurationError(
                f"{path}: missing columns {missing or ['theta*']}"
            )
        theta_cols.sort(key=lambda c: int(c[len("theta"):]))
        adapters = []
        for row_no, row in enumerate(reader, start=2):
            try:
                theta = np.array([float(row[c]) for c in theta_cols])
                adapters.append(
                    AdapterProfile(
                        id=int(row["id"]),
                        name=row["name"],
                        theta_star=theta,
                        cold_latency_s=float(row["cold_latency_ms"]) / 1e3,
                        size_mb=float(row["size_mb"]) if row["size_mb"] else None,
                        rank=int(row["rank"]) if row["rank"] else None,
                        is_base=row["is_base"].strip().lower() in ("1", "true", "yes"),
                    )
                )
            except (ValueError, ConfigurationError) as exc:
                raise ConfigurationError(f"{path}: row {row_no}: {exc}") from exc
    if not adapters:
        raise ConfigurationError(f"{path}: no adapter rows")
    return Library(adapters=tuple(adapters), d=len(theta_cols))


def save_profiles(library: Library, path: str | Path) -> None:
    path = Path(path)
    theta_cols = [f"theta{i}" for i in range(library.d)]
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_BASE_COLUMNS + theta_cols)
        for a in library.adapters:
            writer.writerow(
                [
                    a.id,
                    a.name,
                    a.rank if a.rank is not None else "",
                    a.size_mb if a.size_mb is not None else "",
                    repr(a.cold_latency_s * 1e3),
                    str(a.is_base).lower(),
                ]
                + [repr(float(v)) for v in a.theta_star]
            )


# -- synthetic instance generation --------------------------------------------

# Default geometry of the generated instance.  Contexts share a strong
# common direction (generic traffic served best by the base arm) plus a
# task-specific direction per specialist.  Specialists carry a deliberately
# small common-direction weight and a large cold latency, so an unexplored
# specialist looks mediocre and is expensive to probe; that is what makes
# cache learning nontrivial and forced exploration load-bearing.
GEN_DEFAULTS = dict(
    mean_common=0.893,        # weight of the common direction inside task means
    specialist_norm=0.99,     # |theta| for specialist arms
    specialist_common=0.485,  # specialist weight on the common direction
    base_quality=0.64,        # |theta| of the base arm (common direction only)
    nonhot_scale=0.7,         # shrink factor for dominated arms
    extra_specialists=0,      # specialist tasks beyond the cache size
    specialist_latency_ms=(1220.0, 1263.0),
    nonhot_latency_ms=(291.0, 450.0),
    context_noise=0.1,
    zipf_exponent=1.0,
)


@dataclass(frozen=True)
class InstanceInfo:
    """Generator metadata: the designed hot set and feasibility margins."""

    intended_hot: frozenset[int]
    specialist_ids: tuple[int, ...]
    base_id: int
    task_of_specialist: dict[int, int]
    dominance_margin: float


def _unit_directions(n: int, d: int, rng: np.random.Generator) -> np.ndarray:
    """n unit vectors in the last d-1 coordinates' span, orthogonal to e0.

    Uses a signed orthonormal basis when it fits (n <= 2(d-1)), otherwise
    random unit vectors.
    """
    basis = np.linalg.qr(rng.standard_normal((d - 1, d - 1)))[0]
    dirs = []
    for i in range(n):
        if i < 2 * (d - 1):
            v = basis[i % (d - 1)] * (1.0 if i < d - 1 else -1.0)
        else:
            v = rng.standard_normal(d - 1)
            v /= np.linalg.norm(v)
        dirs.append(np.concatenate([[0.0], v]))
    return np.array(dirs)


def generate_instance(
    n_adapters: int,
    d: int,
    cache_size: int,
    seed: int,
    diversity: float = 1.0,
    *,
    alpha: float = 0.5,
    **overrides,
) -> tuple[Library, WorkloadSpec, InstanceInfo]:
    """Build a library + workload whose hot set is cache-worthy by design.

    One generic task is served best by the base arm; each specialist task j
    has one adapter aligned with its task mean (alignment strength =
    diversity).  Dominated arms get qualities strictly below the resident
    alternatives so they never enter the optimal cache.  At diversity=1 and
    zero context noise the intended hot set is the unique optimizer of the
    population utility (checked by enumeration in tests).
    """
    cfg = dict(GEN_DEFAULTS)
    unknown = set(overrides) - set(cfg)
    if unknown:
        raise ConfigurationError(f"unknown generator overrides: {sorted(unknown)}")
    cfg.update(overrides)
    if not (0.0 <= diversity <= 1.0):
        raise ConfigurationError("diversity must lie in [0, 1]")
    if n_adapters < cache_size:
        raise ConfigurationError("need at least cache_size adapters")
    if d < 2:
        raise ConfigurationError("generator needs d >= 2")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x6E9]))

    n_specialists = min(cache_size + int(cfg["extra_specialists"]), n_adapters - 1)
    n_tasks = n_specialists + 1
    n_nonhot = n_adapters - 1 - n_specialists

    # Rotate the whole construction by a random orthogonal matrix so no
    # coordinate is special in the emitted vectors.
    rotation = np.linalg.qr(rng.standard_normal((d, d)))[0]
    common = np.zeros(d)
    common[0] = 1.0
    spec_dirs = _unit_directions(n_specialists, d, rng)

    nu = cfg["mean_common"]
    w = float(np.sqrt(1.0 - nu * nu))
    task_means = np.vstack([common, nu * common + w * spec_dirs])

    s_norm = cfg["specialist_norm"]
    c_g = cfg["specialist_common"]
    c_u = float(np.sqrt(max(s_norm**2 - c_g**2, 0.0)))
    mean_theta = cfg["base_quality"] * 0.75 * common  # diversity=0 collapse target

    thetas = [cfg["base_quality"] * common]  # base arm, prepended before shuffle
    for j in range(n_specialists):
        thetas.append(c_g * common + c_u * spec_dirs[j])
    lo, hi = cfg["nonhot_latency_ms"]
    for i in range(n_nonhot):
        # Blend at least three task directions so no dominated arm can act
        # as a near-substitute for any single specialist.
        picks = rng.choice(n_specialists, size=min(3, n_specialists), replace=False)
        direction = spec_dirs[picks].sum(axis=0)
        direction /= np.linalg.norm(direction)
        thetas.append(cfg["nonhot_scale"] * (c_g * common + c_u * direction))

    thetas = np.array(thetas)
    thetas = diversity * thetas + (1.0 - diversity) * mean_theta

    slo, shi = cfg["specialist_latency_ms"]
    latencies_ms = np.concatenate(
        [
            [0.0],
            rng.uniform(slo, shi, size=n_specialists),
            rng.uniform(lo, hi, size=n_nonhot) if n_nonhot else np.zeros(0),
        ]
    )

    # Dominance feasibility at the task means: a cold dominated arm must never
    # beat the base arm, which is resident for free under every cache.
    if n_nonhot and diversity > 0:
        qualities = task_means @ thetas.T  # (tasks, arms) in source order
        base_floor = qualities[:, 0]
        nonhot_cold = (
            qualities[:, 1 + n_specialists :]
            - alpha * latencies_ms[1 + n_specialists :] / 1e3
        )
        margin = float((base_floor[:, None] - nonhot_cold).min())
        if margin <= 0:
            raise ConfigurationError(
                "dominated arms outscore the always-resident base arm "
                f"(margin {margin:.4f}); raise alpha or the dominated-arm latencies"
            )
    else:
        margin = float("inf")

    order = rng.permutation(n_adapters)
    position = np.empty(n_adapters, dtype=np.int64)
    position[order] = np.arange(n_adapters)

    adapters = []
    task_of_specialist: dict[int, int] = {}
    for new_id in range(n_adapters):
        src = int(order[new_id])
        if src == 0:
            name, is_base, rank = "base-model", True, None
        elif src <= n_specialists:
            name, is_base, rank = f"specialist-task{src}", False, int(rng.integers(8, 65))
            task_of_specialist[new_id] = src
        else:
            name, is_base, rank = f"generalist-{src - n_specialists}", False, int(
                rng.integers(8, 65)
            )
        adapters.append(
            AdapterProfile(
                id=new_id,
                name=name,
                theta_star=rotation @ thetas[src],
                cold_latency_s=float(latencies_ms[src]) / 1e3,
                size_mb=round(float(50 + (latencies_ms[src] / 1263.0) * 606), 1),
                rank=rank,
                is_base=is_base,
            )
        )
    library = Library(adapters=tuple(adapters), d=d)
    workload = WorkloadSpec(
        n_tasks=n_tasks,
        zipf_exponent=cfg["zipf_exponent"],
        task_means=task_means @ rotation.T,
        context_noise=cfg["context_noise"],
        seed=seed,
    )

    # The intended hot set is the exact noiseless optimizer over task means.
    best_ids = min(
        itertools.combinations(range(n_adapters), cache_size),
        key=lambda s: (-noiseless_population_value(library, workload, alpha, s), s),
    )
    info = InstanceInfo(
        intended_hot=frozenset(best_ids),
        specialist_ids=tuple(sorted(task_of_specialist)),
        base_id=int(position[0]),
        task_of_specialist=task_of_specialist,
        dominance_margin=float(margin),
    )
    return library, workload, info


def noiseless_population_value(
    library: Library, workload: WorkloadSpec, alpha: float, resident
) -> float:
    """Population cache utility at zero context noise: task-mass-weighted
    best penalized reward per task mean."""
    values = workload.task_means @ library.theta_matrix().T
    cold = np.ones(library.n, dtype=bool)
    cold[list(resident)] = False
    per_task = (values - library.penalties(alpha) * cold).max(axis=1)
    return float(workload.task_probabilities() @ per_task)
