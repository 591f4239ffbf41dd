import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from polar_lab.core import CacheState, RewardParams
from polar_lab.router import ArmState, RouterState, confidence_radius, width

from conftest import make_library


def fresh_router(n_arms=2, d=2, latencies=None, **params):
    thetas = np.zeros((n_arms, d))
    thetas[:, 0] = 0.5
    lats = latencies if latencies is not None else [0.5] * n_arms
    lib = make_library(thetas, lats)
    p = RewardParams(cache_size=1, **params)
    return lib, p, RouterState(lib, p)


def test_confidence_radius_noise_free_collapse():
    for t in [0, 10, 10_000]:
        assert confidence_radius(t, sigma=0.0, ridge=1.0, n_arms=5, dim=3, delta=0.1) == 1.0


def test_confidence_radius_all_logs_vanish():
    assert confidence_radius(0, sigma=1.0, ridge=1.0, n_arms=1, dim=1, delta=1.0) == 1.0


def test_confidence_radius_closed_form():
    # Direct arithmetic oracle with natural logarithms.
    expected = 0.05 * math.sqrt(5 * math.log(41) + 2 * math.log(320)) + 1.0
    got = confidence_radius(200, sigma=0.05, ridge=1.0, n_arms=16, dim=5, delta=0.05)
    assert got == pytest.approx(expected, abs=1e-12)
    assert got == pytest.approx(1.2743, abs=5e-4)


@settings(max_examples=100, deadline=None)
@given(
    t1=st.integers(0, 10**6),
    t2=st.integers(0, 10**6),
    sigma=st.floats(0.0, 2.0),
    delta=st.floats(0.01, 0.99),
)
def test_confidence_radius_monotone(t1, t2, sigma, delta):
    lo, hi = sorted([t1, t2])
    b1 = confidence_radius(lo, sigma=sigma, ridge=1.0, n_arms=4, dim=3, delta=delta)
    b2 = confidence_radius(hi, sigma=sigma, ridge=1.0, n_arms=4, dim=3, delta=delta)
    assert b1 <= b2 + 1e-12


def test_width_identity_matrix():
    arm = ArmState(V=np.eye(3), b=np.zeros(3), theta_hat=np.zeros(3), play_count=0)
    x = np.array([0.6, 0.8, 0.0])
    assert width(arm, x) == pytest.approx(1.0)


def test_width_zero_vector():
    arm = ArmState(V=np.eye(2), b=np.zeros(2), theta_hat=np.zeros(2), play_count=0)
    assert width(arm, np.zeros(2)) == 0.0


def test_width_after_one_play():
    arm = ArmState(V=np.array([[2.0]]), b=np.array([0.5]), theta_hat=np.array([0.25]), play_count=1)
    assert width(arm, np.array([1.0])) == pytest.approx(1.0 / math.sqrt(2.0))


def test_score_fresh_arm_resident():
    lib, params, router = fresh_router(latencies=[0.5, 0.5])
    router.theta_hat[:] = 0.0
    x = np.array([1.0, 0.0])
    pen = np.zeros(2)  # both resident
    scores = router.scores(x, pen, beta_t=1.0)
    assert scores[0] == pytest.approx(1.0)


def test_score_cold_paper_min_latency():
    # 291 ms is the smallest measured load latency.
    lib, params, router = fresh_router(latencies=[0.291, 0.291], alpha=0.5)
    x = np.array([1.0, 0.0])
    cold_pen = lib.penalties(0.5) * np.array([1.0, 0.0])
    scores = router.scores(x, cold_pen, beta_t=1.0)
    assert scores[0] == pytest.approx(1.0 - 0.1455)


def test_score_bonus_free_collapse():
    lib = make_library([[0.7, 0.0], [0.2, 0.1]], [0.4, 0.8])
    params = RewardParams(cache_size=1)
    router = RouterState(lib, params)
    router.theta_hat[:] = lib.theta_matrix()
    x = np.array([0.5, 0.5])
    cache = CacheState({1})
    cold = np.array([1.0, 0.0]) * lib.penalties(params.alpha)
    scores = router.scores(x, cold, beta_t=0.0)
    from polar_lab.core import noiseless_reward

    for a in range(2):
        assert scores[a] == pytest.approx(noiseless_reward(lib, params, a, cache, x))


def test_select_tie_breaks_lowest_id():
    lib, params, router = fresh_router(n_arms=4, latencies=[0.3] * 4)
    x = np.array([0.7, 0.1])
    assert router.select(x, CacheState({0, 1, 2, 3}), beta_t=1.0) == 0


def test_select_prefers_higher_score():
    lib, params, router = fresh_router()
    router.theta_hat[0] = [0.9, 0.0]
    router.theta_hat[1] = [0.5, 0.0]
    x = np.array([1.0, 0.0])
    assert router.select(x, CacheState({0, 1}), beta_t=0.0) == 0


def test_select_penalty_breaks_symmetry():
    # Fresh arms, equal bonus; only the cold penalty differs.
    lib, params, router = fresh_router(latencies=[0.8, 0.8], alpha=0.5)
    x = np.array([1.0, 0.0])
    assert router.select(x, CacheState({1}), beta_t=1.0) == 1


def test_update_scalar_ridge():
    lib, params, router = fresh_router(n_arms=1, d=1)
    router.update(0, np.array([1.0]), 0.5)
    assert router.V[0, 0, 0] == pytest.approx(2.0)
    assert router.b[0, 0] == pytest.approx(0.5)
    assert router.theta_hat[0, 0] == pytest.approx(0.25)


def test_update_zero_reward_shrinks():
    lib, params, router = fresh_router(n_arms=1, d=2)
    router.update(0, np.array([1.0, 0.0]), 0.0)
    assert router.b[0] == pytest.approx([0.0, 0.0])
    assert router.theta_hat[0] == pytest.approx([0.0, 0.0])


def test_update_two_plays_closed_form():
    # Ridge solve: (lambda + 2) theta = 2 along the played direction.
    lib, params, router = fresh_router(n_arms=1, d=2)
    router.update(0, np.array([1.0, 0.0]), 1.0)
    router.update(0, np.array([1.0, 0.0]), 1.0)
    assert router.theta_hat[0] == pytest.approx([2.0 / 3.0, 0.0])


def test_update_locality():
    lib, params, router = fresh_router(n_arms=3, d=2, latencies=[0.2] * 3)
    before = {a: router.arm(a) for a in range(3)}
    router.update(1, np.array([0.5, 0.5]), 0.3)
    for a in (0, 2):
        assert np.array_equal(router.V[a], before[a].V)
        assert np.array_equal(router.b[a], before[a].b)
        assert np.array_equal(router.theta_hat[a], before[a].theta_hat)
        assert router.play_count[a] == before[a].play_count
    assert router.play_count[1] == 1
    assert router.t == 1


def test_round_counter_tracks_total_plays():
    lib, params, router = fresh_router(n_arms=3, d=2, latencies=[0.2] * 3)
    rng = np.random.default_rng(0)
    for _ in range(30):
        a = int(rng.integers(0, 3))
        router.update(a, rng.uniform(-0.5, 0.5, 2), float(rng.normal()))
    assert router.t == int(router.play_count.sum()) == 30


@settings(max_examples=50, deadline=None)
@given(shift=st.floats(-5.0, 5.0), seed=st.integers(0, 10**6))
def test_argmax_invariant_to_constant_shift(shift, seed):
    rng = np.random.default_rng(seed)
    lib, params, router = fresh_router(n_arms=4, latencies=[0.3] * 4)
    router.theta_hat[:] = rng.uniform(-0.5, 0.5, (4, 2))
    x = rng.uniform(-0.5, 0.5, 2)
    pen = rng.uniform(0, 0.4, 4)
    scores = router.scores(x, pen, beta_t=0.7)
    assert int(np.argmax(scores)) == int(np.argmax(scores + shift))


def test_thompson_deterministic_given_seed():
    lib, params, router = fresh_router()
    d1 = router.thompson_sample(0, np.random.default_rng(42), v_scale=1.0)
    d2 = router.thompson_sample(0, np.random.default_rng(42), v_scale=1.0)
    assert np.array_equal(d1, d2)


def test_thompson_vanishing_scale():
    lib, params, router = fresh_router()
    router.theta_hat[0] = [0.3, -0.2]
    draw = router.thompson_sample(0, np.random.default_rng(1), v_scale=1e-12)
    assert draw == pytest.approx(router.theta_hat[0], abs=1e-9)


def test_thompson_covariance_monte_carlo():
    # Empirical covariance of many draws matches v^2 V^-1 = I entrywise.
    lib, params, router = fresh_router()
    rng = np.random.default_rng(7)
    draws = np.array([router.thompson_sample(0, rng, 1.0) for _ in range(100_000)])
    cov = np.cov(draws.T)
    assert np.all(np.abs(cov - np.eye(2)) < 0.05)


def test_sherman_morrison_matches_exact_inverse():
    lib, params, router = fresh_router(n_arms=1, d=3)
    rng = np.random.default_rng(11)
    for _ in range(600):
        router.update(0, rng.uniform(-0.5, 0.5, 3), float(rng.normal()))
    assert np.allclose(router.Vinv[0], np.linalg.inv(router.V[0]), atol=1e-8)
    arm = router.arm(0)
    x = rng.uniform(-0.5, 0.5, 3)
    assert router.prediction_widths(x)[0] == pytest.approx(width(arm, x), abs=1e-8)
