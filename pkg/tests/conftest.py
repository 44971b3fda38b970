import numpy
import pytest

from cadiff.envs import random_finite_mdp
from cadiff.models import FiniteMDP
from cadiff.run_config import RunConfig


@pytest.fixture
def rng() -> numpy.random.Generator:
    return numpy.random.default_rng(1234)


@pytest.fixture
def small_mdp() -> FiniteMDP:
    return random_finite_mdp(numpy.random.default_rng(7), 4, 2, 0.3)


@pytest.fixture
def two_state_mdp() -> FiniteMDP:
    """
    Two absorbing states that differ only in their reward.
    """
    P = numpy.zeros((2, 1, 2))
    P[0, 0, 0] = 1.0
    P[1, 0, 1] = 1.0
    R = numpy.array([[[1.0, 0.0]], [[0.0, 1.0]]])
    return FiniteMDP(P=P, R=R, reward_values=numpy.array([0.0, 1.0]), gamma=0.3)


@pytest.fixture
def tiny_run_config(tmp_path) -> RunConfig:
    return RunConfig(
        total_steps=40,
        steps_per_epoch=20,
        warmup_steps=10,
        checkpoint_every=20,
        eval_episodes=1,
        episode_cap=15,
        batch_size=8,
        history_window=3,
        diffusion_steps=20,
        delta=2,
        run_dir=str(tmp_path / "run"),
    )
