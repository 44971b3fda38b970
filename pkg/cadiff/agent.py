import logging
from dataclasses import dataclass

import numpy

from config import (
    DISCOUNT_FACTOR,
    HIDDEN_WIDTH,
    LEARNING_RATE_ENTROPY_COEFFICIENT,
    LEARNING_RATE_POLICY_AND_VALUE,
    LOG_STD_MAX,
    LOG_STD_MIN,
    TARGET_UPDATE_FRACTION,
)

from . import tensor as T
from .errors import AgentError, GradientError
from .layers import ParamSet, bounded_log_std, init_mlp, mlp
from .models import SacReport
from .optim import adam_step
from .tensor import Tensor

logger = logging.getLogger("cadiff.agent")

ACTION_LIMIT = 1.0 - 1e-7
LOG_2PI = numpy.log(2.0 * numpy.pi)


class SacNets:
    """
    Squashed-Gaussian actor, twin critics with soft-updated targets and a
    learned temperature log_alpha.
    """

    def __init__(
        self,
        state_dim: int,
        action_dim: int,
        rng: numpy.random.Generator,
        target_entropy: float,
        hidden: int = HIDDEN_WIDTH,
    ):
        self.state_dim = state_dim
        self.action_dim = action_dim
        self.target_entropy = target_entropy
        self.actor = ParamSet("actor")
        init_mlp(self.actor, "net", [state_dim, hidden, hidden, 2 * action_dim], rng)
        self.critic1 = ParamSet("critic1")
        init_mlp(self.critic1, "net", [state_dim + action_dim, hidden, hidden, 1], rng)
        self.critic2 = ParamSet("critic2")
        init_mlp(self.critic2, "net", [state_dim + action_dim, hidden, hidden, 1], rng)
        self.target1 = self.critic1.copy("target1")
        self.target2 = self.critic2.copy("target2")
        self.temperature = ParamSet("temperature")
        self.temperature.add("log_alpha", numpy.zeros(1))

    @property
    def param_sets(self) -> list[ParamSet]:
        return [self.actor, self.critic1, self.critic2, self.target1, self.target2, self.temperature]

    @property
    def alpha(self) -> float:
        return float(numpy.exp(self.temperature["log_alpha"].data[0]))


@dataclass
class SacBatch:
    states: numpy.ndarray
    actions: numpy.ndarray
    rewards: numpy.ndarray
    next_states: numpy.ndarray
    dones: numpy.ndarray


def squash_log_det(u: Tensor) -> Tensor:
    """
    log(1 - tanh(u)^2) per entry, in the overflow-free form 2 (log 2 - u - softplus(-2u)).
    """
    return 2.0 * (numpy.log(2.0) - u - T.softplus(-2.0 * u))


def policy_head(nets: SacNets, states) -> tuple[Tensor, Tensor]:
    out = mlp(nets.actor, "net", T.as_tensor(states), n_layers=3)
    width = nets.action_dim
    mean = out[:, :width]
    log_std = bounded_log_std(out[:, width:], LOG_STD_MIN, LOG_STD_MAX)
    return mean, log_std


def squashed_log_prob(u: Tensor, mean: Tensor, log_std: Tensor) -> Tensor:
    """
    log density of tanh(u) for u ~ N(mean, exp(log_std)^2), summed over action dimensions.
    """
    z = (u - mean) / T.exp(log_std)
    gaussian = -0.5 * T.square(z) - log_std - 0.5 * LOG_2PI
    return T.sum(gaussian - squash_log_det(u), axis=1)


def actor_sample(nets: SacNets, states, rng: numpy.random.Generator) -> tuple[Tensor, Tensor]:
    """
    Reparameterized squashed sample and its log-probability, differentiable
    through the actor.
    """
    mean, log_std = policy_head(nets, states)
    u = mean + T.exp(log_std) * Tensor(rng.standard_normal(mean.shape))
    return T.tanh(u), squashed_log_prob(u, mean, log_std)


def select_action(
    s_hat: numpy.ndarray, nets: SacNets, deterministic: bool, rng: numpy.random.Generator
) -> tuple[numpy.ndarray, float]:
    """
    Action in (-1, 1)^action_dim for one state, with its log-probability
    (evaluated at the mean when `deterministic`).
    """
    with T.no_grad():
        mean, log_std = policy_head(nets, numpy.asarray(s_hat, dtype=numpy.float64).reshape(1, -1))
        if deterministic:
            u = mean
        else:
            u = mean + T.exp(log_std) * Tensor(rng.standard_normal(mean.shape))
        log_prob = squashed_log_prob(u, mean, log_std)
    action = numpy.clip(numpy.tanh(u.data[0]), -ACTION_LIMIT, ACTION_LIMIT)
    return action, float(log_prob.data[0])


def q_value(critic: ParamSet, states, actions) -> Tensor:
    joint = T.concat([T.as_tensor(states), T.as_tensor(actions)], axis=1)
    return T.reshape(mlp(critic, "net", joint, n_layers=3), (-1,))


def _checked(component: str, loss: Tensor) -> Tensor:
    if not numpy.isfinite(loss.data).all():
        raise AgentError(f"{component}: non-finite loss")
    return loss


def _descend(component: str, loss: Tensor, params: ParamSet, lr: float) -> None:
    try:
        grads = T.backward(loss, params.params)
        adam_step(params, grads, lr)
    except GradientError as e:
        raise AgentError(f"{component}: {e}") from e


def sac_update(
    batch: SacBatch,
    nets: SacNets,
    rng: numpy.random.Generator,
    gamma: float = DISCOUNT_FACTOR,
    tau: float = TARGET_UPDATE_FRACTION,
    lr_policy_value: float = LEARNING_RATE_POLICY_AND_VALUE,
    lr_entropy: float = LEARNING_RATE_ENTROPY_COEFFICIENT,
) -> SacReport:
    """
    Twin-critic TD step, reparameterized actor step, temperature step towards
    the target entropy, then a soft blend of the target critics.

    Raises:
        AgentError: naming the component whose loss or gradient became non-finite.
    """
    alpha = nets.alpha
    rewards = numpy.asarray(batch.rewards, dtype=numpy.float64).reshape(-1)
    not_done = 1.0 - numpy.asarray(batch.dones, dtype=numpy.float64).reshape(-1)

    with T.no_grad():
        next_actions, next_log_prob = actor_sample(nets, batch.next_states, rng)
        next_q = T.minimum(
            q_value(nets.target1, batch.next_states, next_actions),
            q_value(nets.target2, batch.next_states, next_actions),
        )
    td_target = rewards + gamma * not_done * (next_q.data - alpha * next_log_prob.data)

    critic_losses = []
    for name, critic in (("critic1", nets.critic1), ("critic2", nets.critic2)):
        loss = _checked(name, T.mean(T.square(q_value(critic, batch.states, batch.actions) - td_target)))
        _descend(name, loss, critic, lr_policy_value)
        critic_losses.append(loss.item())

    new_actions, log_prob = actor_sample(nets, batch.states, rng)
    q_new = T.minimum(
        q_value(nets.critic1, batch.states, new_actions), q_value(nets.critic2, batch.states, new_actions)
    )
    actor_loss = _checked("actor", T.mean(alpha * log_prob - q_new))
    _descend("actor", actor_loss, nets.actor, lr_policy_value)

    entropy_gap = log_prob.data + nets.target_entropy
    alpha_loss = _checked(
        "temperature", -T.mean(nets.temperature["log_alpha"] * Tensor(entropy_gap))
    )
    _descend("temperature", alpha_loss, nets.temperature, lr_entropy)

    nets.target1.soft_update_from(nets.critic1, tau)
    nets.target2.soft_update_from(nets.critic2, tau)
    return SacReport(
        critic_loss=0.5 * sum(critic_losses),
        actor_loss=actor_loss.item(),
        alpha_loss=alpha_loss.item(),
        alpha=nets.alpha,
    )
