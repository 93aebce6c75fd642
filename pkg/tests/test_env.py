import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hybridslice.baselines import hard_dqn_config
from hybridslice.config import desk_config, load_config
from hybridslice.env import (
    Allocation,
    EnvConfig,
    InvariantError,
    SlicingEnv,
    UsageError,
    apply_action,
    decode_action,
    encode_action,
    largest_remainder,
)

ACTIONS = (-5, -2, 0, 2, 5)


@pytest.fixture(scope="module")
def desk():
    return desk_config().env


def short(env_cfg, epochs=4, ttis=50):
    return dataclasses.replace(env_cfg, episode_epochs=epochs, epoch_ttis=ttis)


# ---- allocation and actions ----

def test_paper_scale_initial_allocation_sums_to_w():
    cfg = load_config().env
    alloc = cfg.initial_allocation()
    assert alloc.common == 30
    assert alloc.total == 100


def test_desk_initial_allocation(desk):
    assert desk.initial_allocation() == Allocation((13, 1), 6)


def test_apply_action_increase():
    new, projected = apply_action(Allocation((40, 30), 30), (5, 0))
    assert new == Allocation((45, 30), 25) and not projected


def test_apply_action_identity():
    a = Allocation((40, 30), 30)
    assert apply_action(a, (0, 0)) == (a, False)


def test_apply_action_projects_unfunded_increases():
    a = Allocation((50, 47), 3)
    assert apply_action(a, (5, 5)) == (a, True)


def test_apply_action_released_rbs_fund_increase():
    new, projected = apply_action(Allocation((10, 10), 0), (-5, 5))
    assert new == Allocation((5, 15), 0) and not projected


def test_apply_action_floor():
    new, projected = apply_action(Allocation((3, 10), 7), (-5, 2))
    assert new == Allocation((3, 12), 5) and projected


@given(
    st.lists(st.integers(1, 40), min_size=2, max_size=3),
    st.integers(0, 40),
    st.lists(st.sampled_from(ACTIONS), min_size=3, max_size=3),
)
def test_apply_action_keeps_budget_and_floor(ded, common, deltas):
    a = Allocation(tuple(ded), common)
    new, _ = apply_action(a, deltas[: len(ded)])
    new.check(a.total)
    assert all(w >= 1 for w in new.dedicated)


def test_action_codec_roundtrip():
    for idx in range(25):
        assert encode_action(decode_action(idx, ACTIONS, 2), ACTIONS) == idx
    assert decode_action(0, ACTIONS, 2) == (-5, -5)
    assert decode_action(12, ACTIONS, 2) == (0, 0)
    assert decode_action(5, ACTIONS, 2) == (-2, -5)
    with pytest.raises(ValueError):
        decode_action(25, ACTIONS, 2)


def test_largest_remainder():
    assert largest_remainder((0.333, 0.667), 100) == (33, 67)
    assert largest_remainder((1, 1, 1), 10) == (4, 3, 3)
    assert sum(largest_remainder((0.2, 0.3, 0.5), 7)) == 7


def test_budget_check_rejects_bad_initial(desk):
    with pytest.raises(ValueError, match="RB budget"):
        dataclasses.replace(desk, initial_dedicated=(10, 10), initial_common=6)
    with pytest.raises(InvariantError):
        Allocation((10, 5), 4).check(20)


# ---- episodes ----

def test_step_before_reset_is_usage_error(desk):
    env = SlicingEnv(desk)
    with pytest.raises(UsageError):
        env.step(12)


def test_observation_shape_and_range(desk):
    env = SlicingEnv(short(desk))
    obs = env.reset(0)
    assert obs.shape == (8,)
    assert np.all((obs >= 0) & (obs <= 1))
    assert obs[0] == pytest.approx(13 / 20) and obs[4] == pytest.approx(1 / 20)


def test_same_seed_same_first_observation(desk):
    a = SlicingEnv(short(desk)).reset([4, 0])
    b = SlicingEnv(short(desk)).reset([4, 0])
    assert np.array_equal(a, b)
    c = SlicingEnv(short(desk)).reset([5, 0])
    assert not np.array_equal(a, c)


def rollout(cfg, seed, actions):
    env = SlicingEnv(cfg)
    obs = [env.reset(seed)]
    rewards = []
    for a in actions:
        o, r, _ = env.step(a)
        obs.append(o)
        rewards.append(r)
    return np.array(obs), np.array(rewards)


def test_trajectory_is_pure_function_of_seed_and_actions(desk):
    cfg = short(desk, epochs=6)
    acts = list(np.random.default_rng(0).integers(0, 25, size=6))
    o1, r1 = rollout(cfg, 9, acts)
    o2, r2 = rollout(cfg, 9, acts)
    assert np.array_equal(o1, o2) and np.array_equal(r1, r2)


def test_hard_mode_has_full_isolation(desk):
    cfg = short(hard_dqn_config(desk), epochs=5)
    env = SlicingEnv(cfg)
    env.reset(2)
    rng = np.random.default_rng(1)
    while not env.done:
        _, _, info = env.step(int(rng.integers(25)))
        assert info["stats"].isolation == [1.0, 1.0]
        assert all(s.common_used == 0 for s in info["stats"].slices)


def test_hybrid_and_hard_identical_without_common_pool(desk):
    base = short(dataclasses.replace(desk, initial_common=0, initial_dedicated=(17, 3)), epochs=5)
    hard = dataclasses.replace(base, hybrid=False)
    # only actions that never release RBs keep the common pool at zero
    acts = [12, 12, 12, 12, 12]
    o1, r1 = rollout(base, [1, 0], acts)
    o2, r2 = rollout(hard, [1, 0], acts)
    assert np.array_equal(o1, o2) and np.array_equal(r1, r2)


def test_idle_network_reward():
    cfg = desk_config().env
    idle = dataclasses.replace(
        cfg,
        slices=tuple(dataclasses.replace(s, num_ues=0) for s in cfg.slices),
        initial_dedicated=(13, 1),
        episode_epochs=2,
        epoch_ttis=20,
    )
    env = SlicingEnv(idle)
    env.reset(0)
    _, r, info = env.step(12)
    st_ = info["stats"]
    assert st_.spectral_eff == 0.0
    assert st_.q == [1.0, 1.0]
    assert r == pytest.approx(2 * math.e + 3 * math.e)


def test_tti_trace_conservation_and_isolation(desk):
    cfg = short(desk, epochs=5, ttis=100)
    env = SlicingEnv(cfg, record_trace=True)
    env.reset(3)
    rng = np.random.default_rng(0)
    while not env.done:
        _, _, info = env.step(int(rng.integers(25)))
        info["allocation"].check(cfg.num_rbs)
    assert len(env.trace) == 6 * 100  # warm-up epoch plus five steps
    for rec in env.trace:
        alloc = rec.allocation
        ded = [0, 0]
        com = 0
        for m, g in rec.grants:
            assert env.ues[g.ue_id].slice == m
            ded[m] += g.rbs_dedicated
            com += g.rbs_common
        assert all(d <= w for d, w in zip(ded, alloc.dedicated))
        assert com <= alloc.common
        assert sum(ded) + com <= cfg.num_rbs


def test_episode_length(desk):
    env = SlicingEnv(short(desk, epochs=3))
    env.reset(0)
    n = 0
    while not env.done:
        env.step(12)
        n += 1
    assert n == 3
    with pytest.raises(UsageError):
        env.step(12)


def test_invalid_delta_action(desk):
    env = SlicingEnv(short(desk))
    env.reset(0)
    with pytest.raises(ValueError):
        env.step((3, 0))


def test_env_config_validation(desk):
    with pytest.raises(ValueError):
        dataclasses.replace(desk, action_set=(-5, 0, 2))
    with pytest.raises(ValueError):
        dataclasses.replace(desk, initial_common=99)
    with pytest.raises(ValueError):
        EnvConfig(slices=())
