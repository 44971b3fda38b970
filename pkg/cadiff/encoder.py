import logging
from typing import Sequence

import numpy

from config import ENCODER_HIDDEN_WIDTH, HIDDEN_WIDTH, HISTORY_WINDOW, LOG_STD_MAX, LOG_STD_MIN

from . import tensor as T
from .errors import ShapeError
from .layers import ParamSet, bounded_log_std, gru_cell, init_gru, init_linear, init_mlp, linear, mlp
from .models import DiagGaussian
from .tensor import Tensor

logger = logging.getLogger("cadiff.encoder")


def pad_history(
    observations: Sequence[numpy.ndarray], window: int = HISTORY_WINDOW
) -> tuple[numpy.ndarray, int]:
    """
    Left-pads the last `window` observations with zero rows.
    Returns the [window, obs_dim] block and the number of valid rows.

    Raises:
        ShapeError: for an empty history.
    """
    if len(observations) == 0:
        raise ShapeError("cannot encode an empty observation history")
    recent = numpy.asarray(observations[-window:], dtype=numpy.float64)
    padded = numpy.zeros((window, recent.shape[1]))
    padded[window - len(recent) :] = recent
    return padded, len(recent)


class Encoder:
    """
    Recurrent encoder over observation histories with a diagonal-Gaussian
    state head and a reward head conditioned on (hidden state, action).
    """

    def __init__(
        self,
        name: str,
        obs_dim: int,
        state_dim: int,
        action_dim: int,
        rng: numpy.random.Generator,
        hidden: int = ENCODER_HIDDEN_WIDTH,
        window: int = HISTORY_WINDOW,
    ):
        self.obs_dim = obs_dim
        self.state_dim = state_dim
        self.action_dim = action_dim
        self.hidden = hidden
        self.window = window
        self.params = ParamSet(name)
        init_gru(self.params, "cell", obs_dim, hidden, rng)
        init_linear(self.params, "mean", hidden, state_dim, rng)
        init_linear(self.params, "log_std", hidden, state_dim, rng)
        init_mlp(self.params, "reward", [hidden + action_dim, HIDDEN_WIDTH, 2], rng)

    def hidden_state(self, histories: numpy.ndarray, lengths: numpy.ndarray) -> Tensor:
        histories = numpy.asarray(histories, dtype=numpy.float64)
        if histories.ndim != 3 or histories.shape[1:] != (self.window, self.obs_dim):
            raise ShapeError(
                f"{self.params.name}: histories must be [n, {self.window}, {self.obs_dim}], got {histories.shape}"
            )
        lengths = numpy.asarray(lengths).reshape(-1)
        if numpy.any(lengths < 1) or numpy.any(lengths > self.window):
            raise ShapeError(f"{self.params.name}: history lengths must lie in 1..{self.window}")
        n = histories.shape[0]
        h = Tensor(numpy.zeros((n, self.hidden)))
        for t in range(self.window):
            valid = (t >= self.window - lengths).astype(numpy.float64).reshape(n, 1)
            if not valid.any():
                continue
            updated = gru_cell(self.params, "cell", Tensor(histories[:, t, :]), h)
            h = updated * valid + h * (1.0 - valid)
        return h

    def state_distribution(self, h: Tensor) -> DiagGaussian:
        mean = linear(self.params, "mean", h)
        log_std = bounded_log_std(linear(self.params, "log_std", h), LOG_STD_MIN, LOG_STD_MAX)
        return DiagGaussian(mean=mean, std=T.exp(log_std))

    def reward_distribution(self, h: Tensor, actions: numpy.ndarray) -> DiagGaussian:
        """
        Encoder-side P(r | state, action) used by the reward bisimulation term.
        """
        out = mlp(self.params, "reward", T.concat([h, T.as_tensor(actions)], axis=1), n_layers=2)
        log_std = bounded_log_std(out[:, 1:2], LOG_STD_MIN, LOG_STD_MAX)
        return DiagGaussian(mean=out[:, 0:1], std=T.exp(log_std))

    def encode_batch(self, histories: numpy.ndarray, lengths: numpy.ndarray) -> DiagGaussian:
        return self.state_distribution(self.hidden_state(histories, lengths))


def encode(history: Sequence[numpy.ndarray], encoder: Encoder) -> DiagGaussian:
    """
    Distribution of the noised causal state for one history of observation
    vectors (oldest first); entries are Tensors of shape [state_dim].
    """
    padded, length = pad_history(history, encoder.window)
    batch = encoder.encode_batch(padded[None], numpy.array([length]))
    return DiagGaussian(mean=batch.mean[0], std=batch.std[0])


def sample_state(g: DiagGaussian, rng: numpy.random.Generator) -> Tensor:
    """
    Reparameterized draw mean + std * eps, differentiable through mean and std.
    """
    eps = rng.standard_normal(tuple(g.mean.shape))
    return T.as_tensor(g.mean) + T.as_tensor(g.std) * Tensor(eps)
