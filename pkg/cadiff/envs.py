import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy

from config import (
    FINITE_REWARD_LEVELS,
    POINT_MASS_ACTION_DIM,
    POINT_MASS_DT,
    POINT_MASS_INIT_RADIUS,
    POINT_MASS_K_SPRING,
    POINT_MASS_REWARD_NOISE_FACTOR,
    POINT_MASS_STATE_DIM,
    POINT_MASS_TRANSITION_NOISE_STD,
    POINT_MASS_WORKSPACE_RADIUS,
    PROPORTIONAL_GAINS,
)

from .errors import EnvError
from .models import EnvConfig, EnvKind, FiniteMDP, ObsMode, StepResult

logger = logging.getLogger("cadiff.envs")

OBSERVED_COORDINATES = {
    ObsMode.FULL: [0, 1, 2, 3],
    ObsMode.POSITIONS_ONLY: [0, 1],
    ObsMode.VELOCITIES_ONLY: [2, 3],
}

Policy = Callable[[StepResult], numpy.ndarray]


@dataclass
class NoiseStreams:
    """
    Independent generators for the initial state, the transition noise, the
    reward noise and the observation noise.
    """

    init: numpy.random.Generator
    transition: numpy.random.Generator
    reward: numpy.random.Generator
    observation: numpy.random.Generator

    @classmethod
    def spawn(cls, rng: numpy.random.Generator) -> "NoiseStreams":
        return cls(*rng.spawn(4))


def observation_dim(obs_mode: ObsMode) -> int:
    return len(OBSERVED_COORDINATES[obs_mode])


class NoisyPointMass:
    """
    2D point mass on a spring towards the origin. State is (x, y, vx, vy),
    actions are accelerations in [-1, 1]^2, and observation, reward and
    transition each carry their own Gaussian perturbation.
    """

    state_dim = POINT_MASS_STATE_DIM
    action_dim = POINT_MASS_ACTION_DIM

    def __init__(self, cfg: EnvConfig):
        if cfg.kind != EnvKind.POINT_MASS:
            raise EnvError(f"NoisyPointMass cannot run a {cfg.kind.value} config")
        self.cfg = cfg
        self.obs_dim = observation_dim(cfg.obs_mode)
        self.streams: NoiseStreams | None = None
        self.state: numpy.ndarray | None = None
        self.steps = 0
        self.done = True
        self.clamped_actions = 0
        self.clipped_rewards = 0
        self.total_steps = 0

    def _observe(self, state: numpy.ndarray) -> numpy.ndarray:
        noise = self.streams.observation.normal(0.0, 1.0, size=self.state_dim) * self.cfg.noise_scale
        return (state + noise)[OBSERVED_COORDINATES[self.cfg.obs_mode]]

    def reset(self, rng: numpy.random.Generator | None = None, streams: NoiseStreams | None = None) -> StepResult:
        """
        Starts an episode. A fresh `rng` (or explicit `streams`) reseeds every
        noise stream; without either the current streams continue.
        """
        if streams is not None:
            self.streams = streams
        elif rng is not None:
            self.streams = NoiseStreams.spawn(rng)
        elif self.streams is None:
            raise EnvError("first reset needs an rng")

        radius = POINT_MASS_INIT_RADIUS * numpy.sqrt(self.streams.init.random())
        angle = 2.0 * numpy.pi * self.streams.init.random()
        self.state = numpy.array([radius * numpy.cos(angle), radius * numpy.sin(angle), 0.0, 0.0])
        self.steps = 0
        self.done = False
        return StepResult(observation=self._observe(self.state), reward=0.0, done=False, true_state=self.state.copy())

    def step(self, action) -> StepResult:
        if self.state is None:
            raise EnvError("step called before reset")
        if self.done:
            raise EnvError("step called on a finished episode; reset first")
        action = numpy.asarray(action, dtype=numpy.float64).reshape(-1)
        if action.shape != (self.action_dim,):
            raise EnvError(f"action must have {self.action_dim} entries, got {action.shape}")
        clamped = numpy.clip(action, -1.0, 1.0)
        if numpy.any(clamped != action):
            self.clamped_actions += 1
            if self.clamped_actions == 1:
                logger.warning("action %s outside [-1, 1] clamped", action)

        position, velocity = self.state[:2], self.state[2:]
        eta = self.streams.transition.normal(0.0, POINT_MASS_TRANSITION_NOISE_STD, size=2)
        new_position = position + POINT_MASS_DT * velocity
        new_velocity = velocity + POINT_MASS_DT * (clamped - POINT_MASS_K_SPRING * position) + eta
        self.state = numpy.concatenate([new_position, new_velocity])

        eps = self.streams.reward.normal(0.0, 1.0) * self.cfg.noise_scale * POINT_MASS_REWARD_NOISE_FACTOR
        raw_reward = 1.0 - numpy.linalg.norm(new_position) / POINT_MASS_WORKSPACE_RADIUS + eps
        reward = float(numpy.clip(raw_reward, 0.0, 1.0))
        if reward != raw_reward:
            self.clipped_rewards += 1

        self.steps += 1
        self.total_steps += 1
        self.done = self.steps >= self.cfg.episode_cap
        return StepResult(
            observation=self._observe(self.state), reward=reward, done=self.done, true_state=self.state.copy()
        )

    @property
    def clip_fraction(self) -> float:
        return self.clipped_rewards / self.total_steps if self.total_steps else 0.0


def random_finite_mdp(
    rng: numpy.random.Generator,
    n_states: int,
    n_actions: int,
    gamma: float,
    reward_levels=FINITE_REWARD_LEVELS,
    deterministic: bool = False,
) -> FiniteMDP:
    """
    Dirichlet transition and reward rows; `deterministic` makes every
    transition row a point mass.
    """
    if deterministic:
        P = numpy.zeros((n_states, n_actions, n_states))
        targets = rng.integers(0, n_states, size=(n_states, n_actions))
        for s in range(n_states):
            for a in range(n_actions):
                P[s, a, targets[s, a]] = 1.0
    else:
        P = rng.dirichlet(numpy.ones(n_states), size=(n_states, n_actions))
        P = P / P.sum(axis=2, keepdims=True)
    R = rng.dirichlet(numpy.ones(len(reward_levels)), size=(n_states, n_actions))
    R = R / R.sum(axis=2, keepdims=True)
    return FiniteMDP(P=P, R=R, reward_values=numpy.array(reward_levels), gamma=gamma)


def _shift_mass(row: numpy.ndarray, rng: numpy.random.Generator, mass: float) -> numpy.ndarray:
    row = row.copy()
    donors = numpy.flatnonzero(row > 0.0)
    source = rng.choice(donors)
    receivers = numpy.flatnonzero(numpy.arange(row.size) != source)
    moved = min(mass, row[source])
    row[source] -= moved
    row[rng.choice(receivers)] += moved
    return row / row.sum()


def perturb_mdp(
    mdp: FiniteMDP,
    rng: numpy.random.Generator,
    mass_shift: float,
    transitions: bool = True,
    rewards: bool = False,
) -> FiniteMDP:
    """
    Moves up to `mass_shift` probability within one randomly chosen
    transition row and/or reward row.
    """
    P, R = mdp.P.copy(), mdp.R.copy()
    if transitions and mdp.n_states > 1:
        s, a = rng.integers(mdp.n_states), rng.integers(mdp.n_actions)
        P[s, a] = _shift_mass(P[s, a], rng, mass_shift)
    if rewards and mdp.reward_values.size > 1:
        s, a = rng.integers(mdp.n_states), rng.integers(mdp.n_actions)
        R[s, a] = _shift_mass(R[s, a], rng, mass_shift)
    return FiniteMDP(P=P, R=R, reward_values=mdp.reward_values.copy(), gamma=mdp.gamma)


def make_finite_pomdp(cfg: EnvConfig, rng: numpy.random.Generator) -> tuple[FiniteMDP, numpy.ndarray]:
    """
    Random FiniteMDP plus an observation channel P(o | s) that mixes the
    identity with a random row-stochastic matrix by min(1, noise_scale).
    """
    if cfg.kind != EnvKind.FINITE:
        raise EnvError(f"make_finite_pomdp needs a finite config, got {cfg.kind.value}")
    mdp = random_finite_mdp(rng, cfg.n_states, cfg.n_actions, cfg.gamma)
    confusion = rng.dirichlet(numpy.ones(cfg.n_states), size=cfg.n_states)
    weight = min(1.0, cfg.noise_scale)
    channel = (1.0 - weight) * numpy.eye(cfg.n_states) + weight * confusion
    channel = channel / channel.sum(axis=1, keepdims=True)
    return mdp, channel


def proportional_controller(state: numpy.ndarray, gains=PROPORTIONAL_GAINS) -> numpy.ndarray:
    """
    PD law a = -k_p x - k_d v on the true state, clipped to the action box.
    """
    k_p, k_d = gains
    return numpy.clip(-k_p * state[:2] - k_d * state[2:4], -1.0, 1.0)


def random_policy(rng: numpy.random.Generator) -> Policy:
    return lambda _: rng.uniform(-1.0, 1.0, size=POINT_MASS_ACTION_DIM)


def controller_policy(gains=PROPORTIONAL_GAINS) -> Policy:
    return lambda result: proportional_controller(result.true_state, gains)


def rollout_returns(
    cfg: EnvConfig, policy: Policy, episodes: int, rng: numpy.random.Generator
) -> numpy.ndarray:
    """
    Undiscounted return of each episode under `policy`.
    """
    env = NoisyPointMass(cfg)
    returns = numpy.zeros(episodes)
    for episode in range(episodes):
        result = env.reset(rng)
        while not result.done:
            result = env.step(policy(result))
            returns[episode] += result.reward
    return returns


def dump_trajectory(
    path: Path, states: list, observations: list, actions: list, rewards: list, dones: list
) -> None:
    """
    Writes one CSV row per step: step, s..., o..., a..., r, done.
    """
    rows = list(zip(states, observations, actions, rewards, dones))
    if not rows:
        raise EnvError("cannot dump an empty trajectory")
    state_dim, obs_dim, action_dim = len(states[0]), len(observations[0]), len(actions[0])
    header = (
        ["step"]
        + [f"s{i}" for i in range(state_dim)]
        + [f"o{i}" for i in range(obs_dim)]
        + [f"a{i}" for i in range(action_dim)]
        + ["r", "done"]
    )
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        for step, (state, observation, action, reward, done) in enumerate(rows):
            writer.writerow([step, *map(repr, map(float, state)), *map(repr, map(float, observation)),
                             *map(repr, map(float, action)), repr(float(reward)), int(bool(done))])
    logger.info("wrote %d trajectory rows to %s", len(rows), path)


@dataclass
class Trajectory:
    """
    Step records of one or more rollouts, in dump_trajectory's column order.
    """

    states: list = field(default_factory=list)
    observations: list = field(default_factory=list)
    actions: list = field(default_factory=list)
    rewards: list = field(default_factory=list)
    dones: list = field(default_factory=list)

    def record(self, action: numpy.ndarray, result: StepResult) -> None:
        self.states.append(result.true_state)
        self.observations.append(result.observation)
        self.actions.append(numpy.asarray(action, dtype=numpy.float64))
        self.rewards.append(result.reward)
        self.dones.append(result.done)

    def dump(self, path: Path) -> None:
        dump_trajectory(path, self.states, self.observations, self.actions, self.rewards, self.dones)
