import json
import logging
import os
from contextlib import contextmanager
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Protocol

import numpy
from pydantic import ValidationError

from config import (
    ADM_TARGET_SAMPLES,
    CHECKPOINT_DIR,
    CHECKPOINT_FILE_SUFFIX,
    LOG_STD_MIN,
    METRICS_FILE,
    POINT_MASS_STATE_DIM,
    RETURN_EMA_HALF_LIFE,
    RUN_CONFIG_SNAPSHOT_FILE,
)

from . import tensor as T
from .agent import SacBatch, SacNets, sac_update, select_action
from .bisim import loss_br, loss_bs
from .checkpoint import load_params_into, save_params
from .diffusion import ScoreNet, adm_loss, denoise, make_schedule
from .encoder import Encoder, pad_history
from .envs import NoisyPointMass, Trajectory, observation_dim
from .errors import CheckpointError, TrainingError
from .layers import ParamSet
from .models import DiagGaussian, EnvConfig, EpochMetrics, EvalReport, Transition
from .optim import adam_step
from .replay import ReplayBuffer, TransitionBatch
from .run_config import RunConfig, dump_run_config, load_run_config
from .tensor import Tensor

logger = logging.getLogger("cadiff.training")


@dataclass
class RunStreams:
    """
    One generator per consumer, spawned in field order from the run seed.
    Enabling a component never shifts the draws of another.
    """

    env: numpy.random.Generator
    evaluation: numpy.random.Generator
    action: numpy.random.Generator
    replay: numpy.random.Generator
    sac_init: numpy.random.Generator
    sac_update: numpy.random.Generator
    zeta_init: numpy.random.Generator
    theta_init: numpy.random.Generator
    phi_init: numpy.random.Generator
    adm: numpy.random.Generator

    @classmethod
    def from_seed(cls, seed: int) -> "RunStreams":
        children = numpy.random.SeedSequence(seed).spawn(len(fields(cls)))
        return cls(*(numpy.random.default_rng(child) for child in children))


@dataclass
class FrontEndLosses:
    loss_state: float = 0.0
    loss_rew: float = 0.0
    loss_bs: float = 0.0
    loss_br: float = 0.0


class FrontEnd(Protocol):
    state_dim: int

    @property
    def param_sets(self) -> list[ParamSet]: ...

    def act_state(self, observations: list[numpy.ndarray], prev_action: numpy.ndarray) -> numpy.ndarray: ...

    def train_step(self, batch: TransitionBatch) -> tuple[FrontEndLosses, SacBatch]: ...


class RawObservationFrontEnd:
    """
    Plain SAC input: the latest noisy observation and the raw reward.
    """

    def __init__(self, obs_dim: int):
        self.state_dim = obs_dim

    @property
    def param_sets(self) -> list[ParamSet]:
        return []

    def act_state(self, observations, prev_action) -> numpy.ndarray:
        return numpy.array(observations[-1], dtype=numpy.float64)

    def train_step(self, batch: TransitionBatch) -> tuple[FrontEndLosses, SacBatch]:
        return FrontEndLosses(), SacBatch(
            states=batch.histories[:, -1, :],
            actions=batch.actions,
            rewards=batch.rewards,
            next_states=batch.next_histories[:, -1, :],
            dones=batch.dones,
        )


def previous_window(observations: list[numpy.ndarray], window: int) -> tuple[numpy.ndarray, int]:
    """
    Left-padded window ending one step before the latest observation, taken
    from a history that keeps up to window + 1 rows. The length is 0 when the
    latest observation starts the episode.
    """
    if len(observations) < 2:
        return numpy.zeros((window, len(observations[-1]))), 0
    return pad_history(observations[:-1], window)


def _sample_statistics(samples: numpy.ndarray, n: int) -> tuple[numpy.ndarray, numpy.ndarray]:
    stacked = samples.reshape(ADM_TARGET_SAMPLES, n, -1)
    return stacked.mean(axis=0), numpy.maximum(stacked.std(axis=0), numpy.exp(LOG_STD_MIN))


class CaDiffFrontEnd:
    """
    Encoder zeta, observation denoiser theta and reward denoiser phi in front
    of SAC. Each part can be ablated: without zeta the representation is the
    latest raw observation, without theta the representation itself is the
    state, without phi the reward stays raw.
    """

    def __init__(self, cfg: RunConfig, obs_dim: int, action_dim: int, streams: RunStreams):
        self.cfg = cfg
        self.action_dim = action_dim
        self.rng = streams.adm
        self.sched = make_schedule(cfg.diffusion_steps, cfg.beta_min, cfg.beta_max, cfg.k0, cfg.delta)
        self.encoder: Encoder | None = None
        self.theta: ScoreNet | None = None
        self.phi: ScoreNet | None = None

        if cfg.no_bisim:
            self.state_dim = obs_dim
        else:
            self.state_dim = cfg.causal_state_dim or POINT_MASS_STATE_DIM
            self.encoder = Encoder(
                "zeta", obs_dim, self.state_dim, action_dim, streams.zeta_init, window=cfg.history_window
            )
        guidance_dim = self.state_dim + action_dim
        if not cfg.no_obs_denoise:
            self.theta = ScoreNet("theta", self.state_dim, guidance_dim, cfg.diffusion_steps, streams.theta_init)
        if not cfg.no_reward_denoise:
            self.phi = ScoreNet("phi", 1, guidance_dim, cfg.diffusion_steps, streams.phi_init)

    @property
    def param_sets(self) -> list[ParamSet]:
        return [part.params for part in (self.encoder, self.theta, self.phi) if part is not None]

    def represent(self, histories: numpy.ndarray, lengths: numpy.ndarray) -> numpy.ndarray:
        if self.encoder is None:
            return histories[:, -1, :].copy()
        with T.no_grad():
            return self.encoder.encode_batch(histories, lengths).mean.numpy()

    def causal_state(
        self,
        x: numpy.ndarray,
        guidance: numpy.ndarray,
        available: numpy.ndarray,
    ) -> numpy.ndarray:
        if self.theta is None:
            return x
        return denoise(x, guidance, self.theta, self.sched, self.cfg.guidance_weight, guidance_mask=available)

    def previous_representation(
        self, prev_histories: numpy.ndarray, prev_lengths: numpy.ndarray
    ) -> tuple[numpy.ndarray, numpy.ndarray]:
        """
        Representation of the previous windows and the mask of rows that have one.
        """
        available = (prev_lengths > 0).astype(numpy.float64)
        return self.represent(prev_histories, numpy.maximum(prev_lengths, 1)), available

    def act_state(self, observations, prev_action) -> numpy.ndarray:
        """
        Denoised state for acting, guided by the previous step's
        representation and action (unguided at episode start).
        """
        window = self.cfg.history_window
        history, length = pad_history(observations, window)
        prev_history, prev_length = previous_window(observations, window)
        x = self.represent(history[None], numpy.array([length]))
        x_prev, available = self.previous_representation(prev_history[None], numpy.array([prev_length]))
        guidance = numpy.concatenate([x_prev, prev_action[None]], axis=1)
        return self.causal_state(x, guidance, available)[0]

    def _state_step(self, batch: TransitionBatch, x_t: numpy.ndarray) -> tuple[float, float]:
        """
        Gradient step on L_State + C_s L_BS over theta and zeta.
        """
        guidance = numpy.concatenate([x_t, batch.actions], axis=1)
        terms: list[Tensor] = []
        loss_state = loss_bisim = 0.0
        enc_next = None
        if self.encoder is not None:
            enc_next = self.encoder.encode_batch(batch.next_histories, batch.next_history_lengths)
            eps = self.rng.standard_normal(enc_next.mean.shape)
            x_next = enc_next.mean.data + enc_next.std.data * eps
        else:
            x_next = batch.next_histories[:, -1, :]

        state_term = adm_loss(x_next, guidance, self.theta, self.sched, self.rng, self.cfg.surrogate)
        terms.append(state_term)
        loss_state = state_term.item()
        if enc_next is not None:
            n = x_next.shape[0]
            draws = numpy.repeat(enc_next.mean.data[None], ADM_TARGET_SAMPLES, axis=0) + numpy.repeat(
                enc_next.std.data[None], ADM_TARGET_SAMPLES, axis=0
            ) * self.rng.standard_normal((ADM_TARGET_SAMPLES,) + x_next.shape)
            denoised = denoise(
                draws.reshape(-1, self.state_dim),
                numpy.tile(guidance, (ADM_TARGET_SAMPLES, 1)),
                self.theta,
                self.sched,
                self.cfg.guidance_weight,
                rng=self.rng,
            )
            target_mean, target_std = _sample_statistics(denoised, n)
            bisim_term = loss_bs(enc_next, DiagGaussian(mean=target_mean, std=target_std))
            terms.append(self.cfg.C_s * bisim_term)
            loss_bisim = bisim_term.item()

        self._descend(terms, [(self.theta.params, self.cfg.lr_diffusion)] + self._encoder_group())
        return loss_state, loss_bisim

    def _reward_step(self, batch: TransitionBatch, s_hat: numpy.ndarray) -> tuple[float, float]:
        """
        Gradient step on L_Rew + C_r L_BR over phi and zeta.
        """
        guidance = numpy.concatenate([s_hat, batch.actions], axis=1)
        rewards = batch.rewards.reshape(-1, 1)
        reward_term = adm_loss(rewards, guidance, self.phi, self.sched, self.rng, self.cfg.surrogate)
        terms = [reward_term]
        loss_bisim = 0.0
        if self.encoder is not None:
            hidden = self.encoder.hidden_state(batch.histories, batch.history_lengths)
            enc_reward = self.encoder.reward_distribution(hidden, batch.actions)
            denoised = denoise(
                numpy.tile(rewards, (ADM_TARGET_SAMPLES, 1)),
                numpy.tile(guidance, (ADM_TARGET_SAMPLES, 1)),
                self.phi,
                self.sched,
                self.cfg.guidance_weight,
                rng=self.rng,
            )
            target_mean, target_std = _sample_statistics(denoised, rewards.shape[0])
            bisim_term = loss_br(enc_reward, DiagGaussian(mean=target_mean, std=target_std))
            terms.append(self.cfg.C_r * bisim_term)
            loss_bisim = bisim_term.item()

        self._descend(terms, [(self.phi.params, self.cfg.lr_diffusion)] + self._encoder_group())
        return reward_term.item(), loss_bisim

    def _encoder_group(self) -> list[tuple[ParamSet, float]]:
        return [] if self.encoder is None else [(self.encoder.params, self.cfg.lr_bisim)]

    @staticmethod
    def _descend(terms: list[Tensor], groups: list[tuple[ParamSet, float]]) -> None:
        total = terms[0]
        for term in terms[1:]:
            total = total + term
        leaves = {name: param for params, _ in groups for name, param in params.params.items()}
        grads = T.backward(total, leaves)
        for params, lr in groups:
            adam_step(params, params.own(grads), lr)

    def train_step(self, batch: TransitionBatch) -> tuple[FrontEndLosses, SacBatch]:
        """
        Recomputes the batch states, takes the theta/zeta step and then the
        phi/zeta step, and returns the SAC batch built from the pre-update states.
        """
        losses = FrontEndLosses()
        x_t = self.represent(batch.histories, batch.history_lengths)
        x_prev, available = self.previous_representation(batch.prev_histories, batch.prev_history_lengths)
        prev_guidance = numpy.concatenate([x_prev, batch.prev_actions], axis=1)
        s_hat = self.causal_state(x_t, prev_guidance, available)
        x_next = self.represent(batch.next_histories, batch.next_history_lengths)
        next_guidance = numpy.concatenate([x_t, batch.actions], axis=1)
        s_hat_next = self.causal_state(x_next, next_guidance, numpy.ones(x_t.shape[0]))

        rewards = batch.rewards
        if self.phi is not None:
            reward_guidance = numpy.concatenate([s_hat, batch.actions], axis=1)
            rewards = denoise(
                batch.rewards.reshape(-1, 1), reward_guidance, self.phi, self.sched, self.cfg.guidance_weight
            ).reshape(-1)

        if self.theta is not None:
            losses.loss_state, losses.loss_bs = self._state_step(batch, x_t)
        if self.phi is not None:
            losses.loss_rew, losses.loss_br = self._reward_step(batch, s_hat)
        return losses, SacBatch(
            states=s_hat, actions=batch.actions, rewards=rewards, next_states=s_hat_next, dones=batch.dones
        )


def make_front_end(cfg: RunConfig, obs_dim: int, action_dim: int, streams: RunStreams) -> FrontEnd:
    if cfg.plain_sac:
        return RawObservationFrontEnd(obs_dim)
    return CaDiffFrontEnd(cfg, obs_dim, action_dim, streams)


@contextmanager
def component(step: int, name: str):
    """
    Re-raises any failure inside the block as a TrainingError tagged with the
    step and component.
    """
    try:
        yield
    except TrainingError:
        raise
    except (RuntimeError, FloatingPointError) as e:
        raise TrainingError(step, name, str(e)) from e


class MetricsWriter:
    """
    Append-only JSON lines; every record is flushed and synced before returning.
    """

    def __init__(self, path: Path):
        self.path = path

    def append(self, record: EpochMetrics) -> None:
        with open(self.path, "a", encoding="utf-8") as f:
            f.write(record.model_dump_json() + "\n")
            f.flush()
            os.fsync(f.fileno())


def read_metrics(path: Path) -> list[EpochMetrics]:
    """
    Reads a metrics stream, skipping a truncated or corrupt line with a warning.
    """
    records = []
    with open(path, "r", encoding="utf-8") as f:
        for number, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                records.append(EpochMetrics.model_validate_json(line))
            except (ValidationError, json.JSONDecodeError):
                logger.warning("skipping unreadable metrics line %d in %s", number, path)
    return records


class ReturnSmoother:
    def __init__(self, half_life: float = RETURN_EMA_HALF_LIFE):
        self.weight = 1.0 - 0.5 ** (1.0 / half_life)
        self.value: float | None = None

    def update(self, observed: float) -> float:
        self.value = observed if self.value is None else self.value + self.weight * (observed - self.value)
        return self.value


def checkpoint_path(run_dir: Path, step: int) -> Path:
    return run_dir / CHECKPOINT_DIR / f"step_{step}"


def save_checkpoint(directory: Path, cfg: RunConfig, param_sets: list[ParamSet]) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    for params in param_sets:
        save_params(params, directory / f"{params.name}{CHECKPOINT_FILE_SUFFIX}")
    dump_run_config(cfg, directory / RUN_CONFIG_SNAPSHOT_FILE)
    logger.info("checkpoint written to %s", directory)


def load_checkpoint(directory: Path, param_sets: list[ParamSet]) -> None:
    for params in param_sets:
        path = directory / f"{params.name}{CHECKPOINT_FILE_SUFFIX}"
        if not path.exists():
            raise CheckpointError(f"checkpoint {directory} has no {path.name}")
        load_params_into(params, path)


def run_episodes(
    front_end: FrontEnd,
    nets: SacNets,
    env_cfg: EnvConfig,
    episodes: int,
    rng: numpy.random.Generator,
    window: int,
    trajectory: Trajectory | None = None,
) -> numpy.ndarray:
    """
    Deterministic-policy returns; nothing is stored or trained. Every step is
    appended to `trajectory` when one is given.
    """
    env = NoisyPointMass(env_cfg)
    returns = numpy.zeros(episodes)
    for episode in range(episodes):
        result = env.reset(rng)
        observations = [result.observation]
        prev_action = numpy.zeros(nets.action_dim)
        while not result.done:
            action, _ = select_action(front_end.act_state(observations, prev_action), nets, True, rng)
            result = env.step(action)
            if trajectory is not None:
                trajectory.record(action, result)
            observations = (observations + [result.observation])[-(window + 1) :]
            prev_action = action
            returns[episode] += result.reward
    return returns


def train(cfg: RunConfig) -> Path:
    """
    Runs the interleaved collect / denoiser / encoder / SAC loop and returns the
    run directory holding the config snapshot, metrics and checkpoints.

    Raises:
        TrainingError: carrying the step index and failing component.
    """
    run_dir = Path(cfg.run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    dump_run_config(cfg, run_dir / RUN_CONFIG_SNAPSHOT_FILE)
    metrics_path = run_dir / METRICS_FILE
    if metrics_path.exists():
        logger.warning("replacing existing metrics file %s", metrics_path)
        metrics_path.unlink()
    if cfg.total_steps == 0:
        return run_dir

    streams = RunStreams.from_seed(cfg.seed)
    env_cfg = cfg.env_config()
    env = NoisyPointMass(env_cfg)
    obs_dim, action_dim = observation_dim(env_cfg.obs_mode), NoisyPointMass.action_dim
    front_end = make_front_end(cfg, obs_dim, action_dim, streams)
    nets = SacNets(front_end.state_dim, action_dim, streams.sac_init, cfg.resolved_target_entropy(action_dim))
    replay = ReplayBuffer(cfg.replay_capacity)
    writer = MetricsWriter(metrics_path)
    smoother = ReturnSmoother()
    window = cfg.history_window

    result = env.reset(streams.env)
    observations = [result.observation]
    prev_action = numpy.zeros(action_dim)
    epoch_losses: list[FrontEndLosses] = []
    epoch_reports = []

    for step in range(1, cfg.total_steps + 1):
        history, length = pad_history(observations, window)
        prev_history, prev_length = previous_window(observations, window)
        if step <= cfg.warmup_steps:
            action = streams.action.uniform(-1.0, 1.0, size=action_dim)
        else:
            with component(step, "front_end"):
                s_hat = front_end.act_state(observations, prev_action)
            action, _ = select_action(s_hat, nets, False, streams.action)

        with component(step, "env"):
            result = env.step(action)
        observations = (observations + [result.observation])[-(window + 1) :]
        next_history, next_length = pad_history(observations, window)
        replay.add(
            Transition(
                history=history,
                history_length=length,
                prev_history=prev_history,
                prev_history_length=prev_length,
                prev_action=prev_action,
                action=action,
                reward=result.reward,
                next_history=next_history,
                next_history_length=next_length,
                done=result.done,
            )
        )
        if result.done:
            result = env.reset()
            observations = [result.observation]
            prev_action = numpy.zeros(action_dim)
        else:
            prev_action = action

        if step > cfg.warmup_steps:
            batch = replay.sample(cfg.batch_size, streams.replay)
            with component(step, "front_end"):
                losses, sac_batch = front_end.train_step(batch)
            with component(step, "sac"):
                report = sac_update(
                    sac_batch, nets, streams.sac_update, cfg.gamma, cfg.tau, cfg.lr_policy_value, cfg.lr_entropy
                )
            epoch_losses.append(losses)
            epoch_reports.append(report)

        if step % cfg.steps_per_epoch == 0:
            with component(step, "evaluation"):
                returns = run_episodes(front_end, nets, env_cfg, cfg.eval_episodes, streams.evaluation, window)
            writer.append(_epoch_record(step, returns, smoother, epoch_losses, epoch_reports, nets))
            logger.info("step %d: eval return %.3f +- %.3f", step, returns.mean(), returns.std())
            epoch_losses, epoch_reports = [], []
        if step % cfg.checkpoint_every == 0:
            save_checkpoint(checkpoint_path(run_dir, step), cfg, front_end.param_sets + nets.param_sets)

    if env.clip_fraction > 0.0:
        logger.info("reward clipping active on %.2f%% of steps", 100.0 * env.clip_fraction)
    return run_dir


def _epoch_record(step, returns, smoother, epoch_losses, epoch_reports, nets) -> EpochMetrics:
    def average(values: list[float]) -> float:
        return float(numpy.mean(values)) if values else 0.0

    return EpochMetrics(
        step=step,
        return_mean=float(returns.mean()),
        return_std=float(returns.std()),
        return_ema=smoother.update(float(returns.mean())),
        loss_state=average([losses.loss_state for losses in epoch_losses]),
        loss_rew=average([losses.loss_rew for losses in epoch_losses]),
        loss_bs=average([losses.loss_bs for losses in epoch_losses]),
        loss_br=average([losses.loss_br for losses in epoch_losses]),
        actor_loss=average([report.actor_loss for report in epoch_reports]),
        critic_loss=average([report.critic_loss for report in epoch_reports]),
        alpha=nets.alpha,
    )


def latest_checkpoint(run_dir: Path) -> Path:
    candidates = sorted(
        (run_dir / CHECKPOINT_DIR).glob("step_*"), key=lambda path: int(path.name.removeprefix("step_"))
    )
    if not candidates:
        raise CheckpointError(f"no checkpoints under {run_dir / CHECKPOINT_DIR}")
    return candidates[-1]


def evaluate(
    checkpoint: Path,
    env_cfg: EnvConfig | None,
    episodes: int,
    rng: numpy.random.Generator,
    trajectory: Trajectory | None = None,
) -> EvalReport:
    """
    Rebuilds the networks described by the checkpoint's config snapshot for
    `env_cfg` (the trained environment by default) and rolls out the
    deterministic policy.

    Raises:
        CheckpointError: if the stored parameters do not fit the environment.
    """
    cfg = load_run_config(checkpoint / RUN_CONFIG_SNAPSHOT_FILE)
    env_cfg = env_cfg or cfg.env_config()
    streams = RunStreams.from_seed(cfg.seed)
    obs_dim, action_dim = observation_dim(env_cfg.obs_mode), NoisyPointMass.action_dim
    front_end = make_front_end(cfg, obs_dim, action_dim, streams)
    nets = SacNets(front_end.state_dim, action_dim, streams.sac_init, cfg.resolved_target_entropy(action_dim))
    load_checkpoint(checkpoint, front_end.param_sets + nets.param_sets)
    returns = run_episodes(front_end, nets, env_cfg, episodes, rng, cfg.history_window, trajectory)
    return EvalReport(return_mean=float(returns.mean()), return_std=float(returns.std()), episodes=episodes)
