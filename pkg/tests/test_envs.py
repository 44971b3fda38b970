import csv

import numpy
import pytest

from cadiff.envs import (
    NoisyPointMass,
    Trajectory,
    controller_policy,
    dump_trajectory,
    make_finite_pomdp,
    perturb_mdp,
    random_finite_mdp,
    random_policy,
    rollout_returns,
)
from cadiff.errors import EnvError
from cadiff.models import EnvConfig, EnvKind, ObsMode


def run_states(cfg: EnvConfig, seed: int, actions: numpy.ndarray) -> numpy.ndarray:
    env = NoisyPointMass(cfg)
    env.reset(numpy.random.default_rng(seed))
    return numpy.stack([env.step(action).true_state for action in actions])


def test_same_seed_same_trajectory():
    cfg = EnvConfig(noise_scale=0.5, episode_cap=20)
    actions = numpy.random.default_rng(0).uniform(-1, 1, size=(20, 2))
    numpy.testing.assert_array_equal(run_states(cfg, 3, actions), run_states(cfg, 3, actions))


def test_observation_noise_does_not_touch_dynamics():
    actions = numpy.random.default_rng(0).uniform(-1, 1, size=(20, 2))
    quiet = run_states(EnvConfig(noise_scale=0.0, episode_cap=20), 3, actions)
    loud = run_states(EnvConfig(noise_scale=1.0, episode_cap=20), 3, actions)
    numpy.testing.assert_array_equal(quiet, loud)


def test_noise_free_observation_is_the_state():
    env = NoisyPointMass(EnvConfig(noise_scale=0.0))
    result = env.reset(numpy.random.default_rng(1))
    numpy.testing.assert_array_equal(result.observation, result.true_state)
    assert numpy.linalg.norm(result.true_state[:2]) <= 1.5
    numpy.testing.assert_array_equal(result.true_state[2:], 0.0)


@pytest.mark.parametrize("mode, columns", [(ObsMode.POSITIONS_ONLY, [0, 1]), (ObsMode.VELOCITIES_ONLY, [2, 3])])
def test_partial_observation_selects_coordinates(mode, columns):
    env = NoisyPointMass(EnvConfig(noise_scale=0.0, obs_mode=mode))
    env.reset(numpy.random.default_rng(1))
    result = env.step(numpy.array([0.3, -0.2]))
    numpy.testing.assert_array_equal(result.observation, result.true_state[columns])


def test_episode_ends_at_the_cap_and_rewards_stay_in_range():
    env = NoisyPointMass(EnvConfig(noise_scale=1.0, episode_cap=5))
    env.reset(numpy.random.default_rng(2))
    results = [env.step(numpy.zeros(2)) for _ in range(5)]
    assert [r.done for r in results] == [False] * 4 + [True]
    assert all(0.0 <= r.reward <= 1.0 for r in results)
    with pytest.raises(EnvError, match="finished"):
        env.step(numpy.zeros(2))


def test_step_before_reset_and_bad_actions():
    env = NoisyPointMass(EnvConfig())
    with pytest.raises(EnvError, match="before reset"):
        env.step(numpy.zeros(2))
    env.reset(numpy.random.default_rng(0))
    with pytest.raises(EnvError, match="2 entries"):
        env.step(numpy.zeros(3))
    env.step(numpy.array([3.0, 0.0]))
    assert env.clamped_actions == 1


def test_controller_beats_random_actions():
    cfg = EnvConfig(noise_scale=0.0, episode_cap=100)
    controlled = rollout_returns(cfg, controller_policy(), 5, numpy.random.default_rng(0))
    uncontrolled = rollout_returns(cfg, random_policy(numpy.random.default_rng(1)), 5, numpy.random.default_rng(0))
    assert controlled.mean() > uncontrolled.mean()


@pytest.mark.slow
def test_controller_triples_the_random_return():
    # long episodes let the undamped spring carry random actions out of the workspace
    cfg = EnvConfig(noise_scale=0.0, episode_cap=1000)
    controlled = rollout_returns(cfg, controller_policy(), 100, numpy.random.default_rng(0))
    uncontrolled = rollout_returns(cfg, random_policy(numpy.random.default_rng(1)), 100, numpy.random.default_rng(0))
    assert controlled.mean() >= 3.0 * uncontrolled.mean()


def test_observation_noise_has_the_configured_scale():
    env = NoisyPointMass(EnvConfig(noise_scale=0.5))
    first = env.reset(numpy.random.default_rng(5))
    residuals = [first.observation - first.true_state]
    for _ in range(9_999):
        result = env.reset()
        residuals.append(result.observation - result.true_state)
    residuals = numpy.concatenate(residuals)
    assert abs(residuals.std() - 0.5) <= 3 * 0.5 / numpy.sqrt(2 * residuals.size)


def test_perturbation_moves_bounded_mass(small_mdp):
    rng = numpy.random.default_rng(4)
    perturbed = perturb_mdp(small_mdp, rng, 0.05, transitions=True, rewards=True)
    assert numpy.abs(perturbed.P - small_mdp.P).sum() <= 2 * 0.05 + 1e-12
    assert numpy.abs(perturbed.R - small_mdp.R).sum() <= 2 * 0.05 + 1e-12
    numpy.testing.assert_allclose(perturbed.P.sum(axis=2), 1.0)


def test_deterministic_finite_mdp_has_point_mass_rows():
    mdp = random_finite_mdp(numpy.random.default_rng(0), 5, 2, 0.9, deterministic=True)
    assert numpy.all(mdp.P.max(axis=2) == 1.0)


def test_finite_pomdp_channel():
    cfg = EnvConfig(kind=EnvKind.FINITE, n_states=4, n_actions=2, noise_scale=0.0)
    mdp, channel = make_finite_pomdp(cfg, numpy.random.default_rng(0))
    assert mdp.n_states == 4
    numpy.testing.assert_allclose(channel, numpy.eye(4))
    _, noisy = make_finite_pomdp(cfg.model_copy(update={"noise_scale": 0.5}), numpy.random.default_rng(0))
    numpy.testing.assert_allclose(noisy.sum(axis=1), 1.0)
    with pytest.raises(EnvError):
        make_finite_pomdp(EnvConfig(), numpy.random.default_rng(0))


def test_trajectory_dump(tmp_path):
    env = NoisyPointMass(EnvConfig(noise_scale=0.1, episode_cap=3))
    first = env.reset(numpy.random.default_rng(0))
    steps = [env.step(numpy.zeros(2)) for _ in range(3)]
    path = tmp_path / "trajectory.csv"
    dump_trajectory(
        path,
        [s.true_state for s in steps],
        [s.observation for s in steps],
        [numpy.zeros(2)] * 3,
        [s.reward for s in steps],
        [s.done for s in steps],
    )
    with open(path, newline="", encoding="utf-8") as f:
        rows = list(csv.reader(f))
    assert rows[0] == ["step", "s0", "s1", "s2", "s3", "o0", "o1", "o2", "o3", "a0", "a1", "r", "done"]
    assert len(rows) == 4 and rows[-1][-1] == "1"
    assert first.reward == 0.0


def test_trajectory_records_one_row_per_step(tmp_path):
    env = NoisyPointMass(EnvConfig(noise_scale=0.2, obs_mode=ObsMode.POSITIONS_ONLY, episode_cap=4))
    env.reset(numpy.random.default_rng(3))
    trajectory = Trajectory()
    while not env.done:
        action = numpy.array([0.5, -0.5])
        trajectory.record(action, env.step(action))
    assert trajectory.dones == [False, False, False, True]
    path = tmp_path / "positions.csv"
    trajectory.dump(path)
    with open(path, newline="", encoding="utf-8") as f:
        rows = list(csv.reader(f))
    assert rows[0] == ["step", "s0", "s1", "s2", "s3", "o0", "o1", "a0", "a1", "r", "done"]
    assert [row[9:11] for row in rows[1:]] == [["0.5", "-0.5"]] * 4
