import itertools

import numpy as np
import pytest

from polar_lab.core import AdapterProfile, Library, RewardParams


def make_library(thetas, latencies, base_id=None):
    """Library from raw vectors; latencies in seconds."""
    thetas = np.asarray(thetas, dtype=float)
    adapters = []
    for i in range(thetas.shape[0]):
        is_base = i == base_id
        adapters.append(
            AdapterProfile(
                id=i,
                name=f"arm-{i}",
                theta_star=thetas[i],
                cold_latency_s=0.0 if is_base else float(latencies[i]),
                is_base=is_base,
            )
        )
    return Library(adapters=tuple(adapters), d=thetas.shape[1])


def random_library(rng, n_arms, d, lat_range=(0.1, 1.2)):
    thetas = rng.standard_normal((n_arms, d))
    norms = np.linalg.norm(thetas, axis=1)
    thetas /= np.maximum(norms, 1.0)[:, None] / rng.uniform(0.3, 1.0, n_arms)[:, None]
    norms = np.linalg.norm(thetas, axis=1)
    thetas[norms > 1] /= norms[norms > 1, None] * 1.001
    lats = rng.uniform(*lat_range, size=n_arms)
    return make_library(thetas, lats)


def random_contexts(rng, t, d):
    x = rng.standard_normal((t, d))
    norms = np.linalg.norm(x, axis=1)
    x /= np.maximum(norms, 1.0)[:, None]
    return x


def naive_best_cache(values, pen, k):
    """Exhaustive argmax of sum_t max_a (values - pen outside S); first-in-lex wins."""
    n_arms = values.shape[1]
    best_set, best_val = None, -np.inf
    for subset in itertools.combinations(range(n_arms), min(k, n_arms)):
        cold = np.ones(n_arms, dtype=bool)
        cold[list(subset)] = False
        val = float((values - pen * cold).max(axis=1).sum()) if len(values) else 0.0
        if val > best_val:
            best_set, best_val = subset, val
    return best_set, best_val


def cache_benefit(values, pen, subset):
    """sum_t [max_a mu(a;S) - max_a mu(a;empty)] for submodularity checks."""
    n_arms = values.shape[1]
    cold = np.ones(n_arms, dtype=bool)
    cold[list(subset)] = False
    with_s = (values - pen * cold).max(axis=1).sum()
    empty = (values - pen).max(axis=1).sum()
    return float(with_s - empty)


@pytest.fixture(scope="session")
def default_params():
    return RewardParams()
