import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from armreach import dynamics as dyn
from armreach.config import DEFAULT_P_TOLS, ConfigError, EnvConfig, GoalSpec, NoiseParams, RewardWeights
from armreach.dynamics import HandState
from armreach.env import (
    OBS_INDEX,
    OBS_SIZE,
    BatchReacher,
    ReachEnv,
    TaskRequirement,
    apply_execution_noise,
    evaluation_goal,
    index_of_difficulty,
    jerk_estimate,
    optimal_reward,
    sample_goal,
    sparse_reward,
    task_requirement_met,
    total_reward,
)

W = RewardWeights()


def hand(p=(0.0, 0.0), v=(0.0, 0.0), a=(0.0, 0.0)):
    return HandState(np.array(p, float), np.array(v, float), np.array(a, float))


# -- noise -------------------------------------------------------------------


def test_zero_noise_is_identity():
    u = np.full(6, 0.4)
    out = apply_execution_noise(u, NoiseParams(0.0, 0.0), np.random.default_rng(0))
    np.testing.assert_array_equal(out, u)


def test_noise_combined_std():
    u = np.full(1_000_000, 0.5)
    u_f = apply_execution_noise(u, NoiseParams(), np.random.default_rng(1), clamp=False)
    expected = math.sqrt(0.25 * 0.103**2 + 0.185**2)
    assert expected == pytest.approx(0.1921, abs=1e-4)
    assert np.std(u_f) == pytest.approx(expected, rel=0.01)


def test_noise_components():
    # same seed at u=0 and u=1 isolates eta2 and eta1 + eta2
    n = 1_000_000
    noise = NoiseParams()
    eta2 = apply_execution_noise(np.zeros(n), noise, np.random.default_rng(2), clamp=False)
    eta1 = apply_execution_noise(np.ones(n), noise, np.random.default_rng(2), clamp=False) - 1.0 - eta2
    assert abs(eta1.mean()) < 0.002 and abs(eta2.mean()) < 0.002
    assert eta1.std() == pytest.approx(0.103, rel=0.02)
    assert eta2.std() == pytest.approx(0.185, rel=0.02)
    assert abs(np.corrcoef(eta1, eta2)[0, 1]) < 0.01


def test_noise_clamps():
    u_f = apply_execution_noise(np.ones(10_000), NoiseParams(), np.random.default_rng(3))
    assert u_f.max() == 1.0 and u_f.min() >= 0.0


# -- predicates and rewards ----------------------------------------------------


def test_pos_requirement_always_met():
    assert task_requirement_met(hand(v=(5, 5), a=(50, 0)), TaskRequirement("pos"))


def test_velocity_requirement():
    assert not task_requirement_met(hand(v=(0.25, 0)), TaskRequirement("pos-vel"))
    assert task_requirement_met(hand(v=(0.0, 0.15)), TaskRequirement("pos-vel"))


def test_acceleration_requirement():
    assert task_requirement_met(hand(v=(0.1, 0), a=(0, 0.05)), TaskRequirement("pos-vel-acc"))
    assert not task_requirement_met(hand(v=(0.1, 0), a=(0, 0.15)), TaskRequirement("pos-vel-acc"))


def test_bad_requirement():
    with pytest.raises(ConfigError):
        TaskRequirement("pos-acc")
    with pytest.raises(ConfigError):
        TaskRequirement("pos", v_tol=0.0)


def test_sparse_reward_cases():
    goal = np.array([0.1, 0.2])
    req = TaskRequirement("pos-vel-acc")
    assert sparse_reward(hand(p=goal), goal, 0.05, req) == 0.0
    assert sparse_reward(hand(p=goal + [0.1, 0]), goal, 0.05, req) == -1.0
    assert sparse_reward(hand(p=goal, v=(0.3, 0)), goal, 0.05, TaskRequirement("pos-vel")) == -1.0
    assert sparse_reward(hand(p=goal, v=(0.3, 0)), goal, 0.05, TaskRequirement("pos")) == 0.0


def test_optimal_reward_examples():
    assert optimal_reward(0, 0, 0, W) == 0.0
    assert optimal_reward(1, 0, 0, W) == pytest.approx(0.1)
    assert optimal_reward(0, 1, 0, W) == pytest.approx(0.8)


def test_total_reward_examples():
    assert total_reward(0.0, 0.0, W) == 0.0
    assert total_reward(-1.0, 0.0, W) == pytest.approx(-0.2)
    assert total_reward(-1.0, 0.1, W) == pytest.approx(-0.28)
    assert total_reward(-1.0, 0.1, W, optimality_enabled=False) == pytest.approx(-0.2)


def test_jerk_estimate():
    assert jerk_estimate([1.0, 2.0], [1.0, 2.0], 0.01) == 0.0
    assert jerk_estimate([0.1, 0.0], [0.0, 0.0], 0.01) == pytest.approx(10.0)
    assert jerk_estimate([0.1, 0.0], None, 0.01) == 0.0


def test_index_of_difficulty():
    assert index_of_difficulty(0.63, 0.105) == pytest.approx(2.0, abs=1e-12)
    assert index_of_difficulty(0.63, 0.010161) == pytest.approx(5.0, abs=0.01)
    assert index_of_difficulty(0.63, 0.315) == 1.0
    ids = [index_of_difficulty(0.63, p) for p in DEFAULT_P_TOLS]
    np.testing.assert_allclose(ids, [2, 3, 4, 5], atol=0.01)


# -- environment ---------------------------------------------------------------


@pytest.fixture
def baseline():
    return EnvConfig(variant="baseline", requirement="pos")


def test_evaluation_goal(baseline):
    goal = evaluation_goal(baseline)
    np.testing.assert_allclose(goal, [0.35 - 0.295, -0.35 + 0.557], atol=1e-12)
    assert dyn.inverse_kinematics(goal, baseline.arm) is not None


def test_unreachable_evaluation_goal(baseline):
    cfg = baseline.with_(goal=GoalSpec(eval_offset=(-2.0, 2.0)))
    with pytest.raises(ConfigError):
        evaluation_goal(cfg)


def test_reset_observation(baseline):
    env = ReachEnv(baseline.with_(mode="eval"))
    obs = env.reset(seed=0)
    assert obs.shape == (OBS_SIZE,)
    assert np.all(obs[OBS_INDEX["act"]] == 0)
    np.testing.assert_allclose(obs[OBS_INDEX["hand_p"]], [0.35, -0.35], atol=1e-12)
    np.testing.assert_array_equal(obs[OBS_INDEX["goal"]], evaluation_goal(baseline))
    covered = sorted(i for s in OBS_INDEX.values() for i in range(OBS_SIZE)[s])
    assert covered == list(range(OBS_SIZE))


def test_reset_determinism(baseline):
    a = ReachEnv(baseline).reset(seed=11)
    b = ReachEnv(baseline).reset(seed=11)
    c = ReachEnv(baseline).reset(seed=12)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)


def test_training_goals_reachable(baseline):
    rng = np.random.default_rng(0)
    reach = baseline.arm.reach
    for _ in range(200):
        g = sample_goal(baseline, rng)
        r = np.linalg.norm(g)
        assert 0.25 * reach - 1e-12 <= r <= 0.95 * reach + 1e-12
        assert dyn.inverse_kinematics(g, baseline.arm) is not None


def test_step_advances_ten_ms(baseline):
    env = ReachEnv(baseline)
    env.reset(seed=0)
    res = env.step(np.zeros(6))
    assert env.state.t == pytest.approx(0.010)
    assert res.info["steps"] == 1


def test_baseline_reward_is_time_penalty(baseline):
    env = ReachEnv(baseline.with_(mode="eval"))
    env.reset(seed=0)
    for _ in range(5):
        res = env.step(np.full(6, 0.3))
        assert res.r_total == pytest.approx(-0.2)
        assert res.r_optimal == 0.0


@pytest.mark.parametrize("variant", ["baseline", "optimality-principles"])
def test_noise_free_variants_apply_u(variant):
    env = ReachEnv(EnvConfig(variant=variant))
    env.reset(seed=3)
    u = np.linspace(0.1, 0.6, 6)
    res = env.step(u)
    np.testing.assert_array_equal(res.info["u_f"], u)


@pytest.mark.parametrize("variant", ["execution-noise", "hybrid"])
def test_noisy_variants_perturb_u(variant):
    env = ReachEnv(EnvConfig(variant=variant))
    env.reset(seed=3)
    res = env.step(np.full(6, 0.5))
    assert not np.array_equal(res.info["u_f"], np.full(6, 0.5))


@pytest.mark.parametrize("variant", ["baseline", "execution-noise"])
def test_optimality_gated_off(variant):
    env = ReachEnv(EnvConfig(variant=variant))
    env.reset(seed=3)
    for _ in range(10):
        res = env.step(np.full(6, 0.7))
        assert res.r_optimal == 0.0


def test_reward_identity_and_sparse_purity():
    cfg = EnvConfig(variant="hybrid", requirement="pos-vel")
    env = ReachEnv(cfg)
    env.reset(seed=5)
    rng = np.random.default_rng(0)
    req = TaskRequirement.from_config(cfg)
    for _ in range(50):
        res = env.step(rng.uniform(0, 1, 6))
        assert res.r_sparse in (0.0, -1.0)
        assert res.r_total == pytest.approx(W.c1 * res.r_sparse - W.c2 * res.r_optimal, abs=1e-15)
        assert res.r_optimal == pytest.approx(optimal_reward(res.r_effort, res.r_jerk, res.r_work, W), abs=1e-15)
        assert sparse_reward(env.hand, env.goal, cfg.goal.p_tol, req) == res.r_sparse
        if res.done:
            break


def test_first_step_jerk_is_zero():
    env = ReachEnv(EnvConfig(variant="optimality-principles"))
    env.reset(seed=0)
    assert env.step(np.ones(6)).r_jerk == 0.0
    assert env.step(np.zeros(6)).r_jerk > 0.0


def test_noise_reproducible_per_seed():
    cfg = EnvConfig(variant="execution-noise")

    def run(seed):
        env = ReachEnv(cfg)
        env.reset(seed=seed)
        return np.array([env.step(np.full(6, 0.5)).info["u_f"] for _ in range(20)])

    np.testing.assert_array_equal(run(4), run(4))
    assert not np.array_equal(run(4), run(5))


def test_horizon_ends_episode(baseline):
    env = ReachEnv(baseline.with_(horizon=7, mode="eval"))
    env.reset(seed=0)
    dones = [env.step(np.zeros(6)).done for _ in range(7)]
    assert dones == [False] * 6 + [True]
    with pytest.raises(RuntimeError):
        env.step(np.zeros(6))


def test_success_terminates():
    # a goal at the initial hand position is met on the first step with pos-only
    cfg = EnvConfig(variant="baseline", requirement="pos", mode="eval", goal=GoalSpec(eval_offset=(0.0, 0.0)))
    env = ReachEnv(cfg)
    env.reset(seed=0)
    res = env.step(np.zeros(6))
    assert res.done and res.info["success"] and res.r_sparse == 0.0


def test_batch_matches_single_episode():
    cfg = EnvConfig(variant="hybrid", requirement="pos")
    rng = np.random.default_rng(9)
    us = rng.uniform(0, 1, (30, 6))
    singles = []
    for seed in (1, 2):
        env = ReachEnv(cfg)
        env.reset(seed=seed)
        singles.append([env.step(u).observation for u in us])
    batch = BatchReacher(cfg, [np.random.default_rng(1), np.random.default_rng(2)])
    batch.reset()
    # matmul over a different batch shape may round differently in the last ulp
    for t, u in enumerate(us):
        obs = batch.step(np.stack([u, u]))["obs"]
        np.testing.assert_allclose(obs[0], singles[0][t], rtol=1e-12, atol=1e-12)
        np.testing.assert_allclose(obs[1], singles[1][t], rtol=1e-12, atol=1e-12)


def test_shared_stream_gives_common_random_numbers():
    cfg = EnvConfig(variant="execution-noise")
    batch = BatchReacher(cfg, [np.random.default_rng(0)], stream_of=[0, 0, 0])
    batch.reset()
    out = batch.step(np.full((3, 6), 0.5))
    assert np.all(out["u_f"] == out["u_f"][0])
    assert np.all(batch.goal == batch.goal[0])


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31), st.sampled_from(["baseline", "hybrid"]))
def test_random_stimulation_keeps_state_valid(seed, variant):
    cfg = EnvConfig(variant=variant, horizon=40)
    env = ReachEnv(cfg)
    env.reset(seed=seed)
    rng = np.random.default_rng(seed)
    lo, hi = cfg.arm.q_min, cfg.arm.q_max
    for _ in range(40):
        res = env.step(rng.uniform(0, 1, 6))
        assert np.all(np.isfinite(res.observation))
        s = env.state
        assert np.all(s.q >= lo - 1e-12) and np.all(s.q <= hi + 1e-12)
        assert np.all((s.act >= 0) & (s.act <= 1))
        if res.done:
            break
