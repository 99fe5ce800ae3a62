import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sencache.errors import ConfigError, DomainError, PreconditionError
from sencache.field import GaussianField
from sencache.policy import (CachePolicyConfig, CacheState, make_policy, magcache_like_decide, plan_schedule,
                             sencache_decide, sensitivity_score, static_decisions, static_nfe,
                             teacache_like_decide, transition_scores)
from sencache.bench import static_hit_sets
from sencache.sampler import TimestepGrid, sample_reference, sample_with_policy
from sencache.sensitivity import CalibrationConfig, SensitivityProfile, calibrate


def state_with(alpha_x, alpha_t, dim=2, reuse=0):
    s = CacheState(np.zeros(dim), 0.5, np.zeros(dim), np.zeros(dim), alpha_x=alpha_x, alpha_t=alpha_t)
    s.reuse_count = reuse
    return s


def step_of_norm(norm, dim=2):
    v = np.zeros(dim)
    v[0] = norm
    return v


# -- score --------------------------------------------------------------------

def test_score_direct():
    assert sensitivity_score(1.0, 4.0, 0.2, 0.05) == pytest.approx(0.4)


@given(ax=st.floats(0, 1e6), at=st.floats(0, 1e6))
def test_score_zero_change(ax, at):
    assert sensitivity_score(ax, at, 0.0, 0.0) == 0.0


def test_score_rejects_negative():
    with pytest.raises(DomainError):
        sensitivity_score(1.0, -1.0, 0.1, 0.1)


@pytest.mark.parametrize("kind", ["linear", "trig"])
def test_score_bounds_one_step_change_on_gaussian(kind):
    from sencache.schedule import InterpolantSchedule

    f = GaussianField([1.0, -2.0, 0.5, 0.0], [0.25, 2.0, 1.0, 0.5], InterpolantSchedule(kind))
    grid = TimestepGrid.uniform(200)
    for seed in range(5):
        ref = sample_reference(f, grid, seed)
        for i in range(grid.K):
            x, t = ref.states[i], grid.times[i]
            dt = grid.spacing(i)
            s = sensitivity_score(f.jacobian_x_norm(x, t), f.jacobian_t_norm(x, t),
                                  np.linalg.norm(ref.states[i + 1] - x), dt)
            change = np.linalg.norm(ref.velocities[i + 1] - ref.velocities[i])
            assert change <= s * (1 + 10 * dt) + 1e-12


# -- decision rule --------------------------------------------------------------

CFG = CachePolicyConfig(epsilon=0.5, max_reuse=3)


def test_hit_increments_reuse_count():
    s = state_with(1.0, 0.0)
    dec = sencache_decide(s, CFG, step_of_norm(0.4), -0.01, step_fraction=0.5)
    assert dec.hit and dec.score == pytest.approx(0.4) and s.reuse_count == 1


def test_reuse_budget_exhausted():
    s = state_with(1.0, 0.0, reuse=3)
    assert not sencache_decide(s, CFG, step_of_norm(0.4), -0.01, 0.5).hit


def test_guard_window_forces_miss():
    s = state_with(1.0, 0.0)
    dec = sencache_decide(s, CFG, step_of_norm(0.02), -0.01, step_fraction=0.1)
    assert not dec.hit and dec.epsilon == 0.01


def test_accumulation_across_hits():
    s = state_with(1.0, 2.0)
    sencache_decide(s, CFG, step_of_norm(0.1), -0.05, 0.5)
    dec = sencache_decide(s, CFG, step_of_norm(0.1), -0.05, 0.5)
    assert dec.score == pytest.approx(0.2 + 0.2)
    np.testing.assert_allclose(s.d_accum, step_of_norm(0.2))


def test_refresh_resets_and_relooks_up():
    profile = SensitivityProfile(times=[1.0, 0.5], alpha_x=[1.0, 3.0], alpha_t=[0.1, 0.3], samples=[1, 1])
    s = CacheState.initial(np.ones(2), 1.0, np.zeros(2), profile)
    sencache_decide(s, CFG, step_of_norm(0.1), -0.5, 0.5)
    s.refresh(np.zeros(2), 0.5, np.ones(2), profile)
    assert (s.tau_accum, s.reuse_count, s.alpha_x, s.alpha_t) == (0.0, 0, 3.0, 0.3)
    assert not np.any(s.d_accum)


def test_missing_profile_and_bad_direction():
    with pytest.raises(ConfigError):
        sencache_decide(state_with(None, None), CFG, np.zeros(2), -0.1, 0.5)
    with pytest.raises(PreconditionError):
        sencache_decide(state_with(1.0, 1.0), CFG, np.zeros(2), 0.1, 0.5)
    with pytest.raises(ConfigError):
        make_policy("sencache", None)
    with pytest.raises(ConfigError):
        make_policy("lru")


def test_teacache_blind_to_latent_drift():
    big = step_of_norm(5.0)
    assert teacache_like_decide(state_with(1.0, 2.0), CFG, big, -0.01, 0.5).hit
    assert not sencache_decide(state_with(1.0, 2.0), CFG, big, -0.01, 0.5).hit


def test_teacache_misses_on_large_time_gap():
    assert not teacache_like_decide(state_with(0.0, 50.0), CFG, np.zeros(2), -0.02, 0.5).hit


def test_magcache_blind_to_time_gap():
    assert magcache_like_decide(state_with(1.0, 50.0), CFG, np.zeros(2), -0.2, 0.5).hit
    assert not sencache_decide(state_with(1.0, 50.0), CFG, np.zeros(2), -0.2, 0.5).hit


def test_magcache_misses_on_large_drift():
    assert not magcache_like_decide(state_with(1.0, 0.0), CFG, step_of_norm(3.0), -0.01, 0.5).hit


def test_config_schedule():
    cfg = CachePolicyConfig(epsilon=0.3)
    assert cfg.epsilon_at(0.19) == 0.01 and cfg.epsilon_at(0.2) == 0.3
    custom = CachePolicyConfig(epsilon_schedule=[(0.0, 0.02), (0.5, 0.1), (0.8, 0.4)])
    assert [custom.epsilon_at(f) for f in (0.0, 0.49, 0.5, 0.95)] == [0.02, 0.02, 0.1, 0.4]
    assert CachePolicyConfig.unguarded(0.2, 2).epsilon_at(0.0) == 0.2
    for bad in (dict(epsilon=0.0), dict(epsilon_guard=-1.0), dict(guard_fraction=1.5), dict(max_reuse=0),
                dict(epsilon_schedule=[(0.1, 0.2)]), dict(epsilon_schedule=[(0.0, 0.1), (0.0, 0.2)])):
        with pytest.raises(ConfigError):
            CachePolicyConfig(**bad)


# -- runs ------------------------------------------------------------------------

@pytest.fixture(scope="module")
def mixture_setup():
    rng = np.random.default_rng(3)
    from sencache.field import GaussianMixtureField

    field = GaussianMixtureField([0.2, 0.5, 0.3], 1.5 * rng.standard_normal((3, 8)),
                                 rng.uniform(0.3, 2.0, size=(3, 8)))
    grid = TimestepGrid.uniform(50)
    return field, grid, calibrate(field, grid, CalibrationConfig(num_samples=4))


def test_zero_tolerance_equivalence(mixture_setup):
    field, grid, profile = mixture_setup
    ref = sample_reference(field, grid, 1)
    floor = float(np.min(transition_scores(ref, profile))) * 0.5
    cfg = CachePolicyConfig(epsilon=floor, epsilon_guard=floor)
    traj, report = sample_with_policy(field, grid, 1, make_policy("sencache", profile, cfg))
    assert np.array_equal(traj.states, ref.states)
    assert report.nfe == grid.K + 1 and report.cache_ratio == 0


@settings(max_examples=25, deadline=None)
@given(eps=st.floats(0.01, 2.0), n=st.integers(1, 6), seed=st.integers(0, 50),
       policy=st.sampled_from(["sencache", "teacache_like", "magcache_like"]))
def test_reuse_ceiling(mixture_setup, eps, n, seed, policy):
    field, grid, profile = mixture_setup
    cfg = CachePolicyConfig(epsilon=eps, max_reuse=n)
    _, report = sample_with_policy(field, grid, seed, make_policy(policy, profile, cfg))
    assert report.max_consecutive_hits() <= n
    assert report.nfe + report.hits == grid.K + 1


@settings(max_examples=30, deadline=None)
@given(eps=st.lists(st.floats(1e-4, 3.0), min_size=2, max_size=8), seed=st.integers(0, 20))
def test_static_hit_sets_nest(mixture_setup, eps, seed):
    field, grid, profile = mixture_setup
    eps = sorted(eps)
    sets = static_hit_sets(sample_reference(field, grid, seed), profile, eps)
    for small, large in zip(sets, sets[1:]):
        assert small <= large


def test_static_nfe_non_increasing_in_n(mixture_setup):
    field, grid, profile = mixture_setup
    for seed in range(5):
        ref = sample_reference(field, grid, seed)
        nfes = [static_nfe(static_decisions(ref, profile, CachePolicyConfig(epsilon=0.3, max_reuse=n)))
                for n in range(1, 8)]
        assert all(b <= a for a, b in zip(nfes, nfes[1:]))


# -- planner -----------------------------------------------------------------------

def test_plan_full_budget_keeps_everything(mixture_setup):
    field, grid, profile = mixture_setup
    ref = sample_reference(field, grid, 0)
    assert plan_schedule(profile, ref, grid.K) == grid


def test_plan_constant_score_is_uniform():
    f = GaussianField.standard(2)
    grid = TimestepGrid.uniform(20)
    ref = sample_reference(f, grid, 0)
    # only time term, constant rate: every step has the same score
    profile = SensitivityProfile(times=grid.times[:-1], alpha_x=np.zeros(20), alpha_t=np.ones(20),
                                 samples=np.ones(20))
    assert plan_schedule(profile, ref, 5) == grid.subgrid(np.arange(0, 21, 4))


def test_plan_errors(mixture_setup):
    field, grid, profile = mixture_setup
    ref = sample_reference(field, grid, 0)
    with pytest.raises(DomainError):
        plan_schedule(profile, ref, 51)
    with pytest.raises(DomainError):
        plan_schedule(profile, ref, 1)
    cached, _ = sample_with_policy(field, grid, 0, make_policy("uniform", keep_every=2))
    with pytest.raises(PreconditionError):
        plan_schedule(profile, cached, 10)


@settings(max_examples=40, deadline=None)
@given(weights=st.lists(st.floats(0.0, 10.0), min_size=40, max_size=40), budget=st.integers(2, 40))
def test_plan_segment_mass_bound(weights, budget):
    f = GaussianField.standard(2)
    grid = TimestepGrid.uniform(40)
    ref = sample_reference(f, grid, 0)
    profile = SensitivityProfile(times=grid.times[:-1], alpha_x=np.zeros(40), alpha_t=weights,
                                 samples=np.ones(40))
    planned = plan_schedule(profile, ref, budget)
    assert planned.K == budget
    scores = transition_scores(ref, profile)
    picks = [int(np.flatnonzero(grid.times == t)[0]) for t in planned.times]
    bound = scores.sum() / (budget - 1) + scores.max()
    for a, b in zip(picks, picks[1:]):
        assert scores[a:b].sum() <= bound + 1e-9
