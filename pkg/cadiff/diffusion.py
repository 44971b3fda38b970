import logging
from dataclasses import dataclass
from typing import Protocol

import numpy

from config import (
    GUIDANCE_PROBABILITY,
    GUIDANCE_WEIGHT,
    HIDDEN_WIDTH,
    LEARNING_RATE_DIFFUSION,
    STEP_EMBEDDING_DIM,
)

from . import tensor as T
from .errors import DenoiseError, ScheduleError, ShapeError
from .layers import ParamSet, init_mlp, mlp, sinusoidal_embedding
from .models import NoiseSurrogate
from .optim import adam_step
from .tensor import Tensor

logger = logging.getLogger("cadiff.diffusion")


@dataclass(frozen=True)
class NoiseSchedule:
    """
    Variance-preserving schedule indexed 0..K. Index 0 is the clean signal:
    beta[0] = 0 and alpha_bar[0] = 1.
    """

    K: int
    beta: numpy.ndarray
    alpha: numpy.ndarray
    alpha_bar: numpy.ndarray
    sigma2: numpy.ndarray
    k0: int
    delta: int

    def posterior_variance(self, k: int) -> float:
        return float(self.beta[k] * (1.0 - self.alpha_bar[k - 1]) / (1.0 - self.alpha_bar[k]))


def make_schedule(K: int, beta_min: float, beta_max: float, k0: int, delta: int) -> NoiseSchedule:
    """
    Linear beta schedule from beta_min to beta_max over K steps.

    Raises:
        ScheduleError: when 0 < beta_min <= beta_max < 1 or 1 <= k0 <= delta <= K fails.
    """
    if K < 1:
        raise ScheduleError(f"K must be at least 1, got {K}")
    if not 0.0 < beta_min <= beta_max < 1.0:
        raise ScheduleError(f"need 0 < beta_min <= beta_max < 1, got {beta_min}, {beta_max}")
    if not 1 <= k0 <= delta <= K:
        raise ScheduleError(f"need 1 <= k0 <= delta <= K, got k0={k0}, delta={delta}, K={K}")

    beta = numpy.concatenate([[0.0], numpy.linspace(beta_min, beta_max, K)])
    alpha = 1.0 - beta
    alpha_bar = numpy.cumprod(alpha)
    return NoiseSchedule(
        K=K, beta=beta, alpha=alpha, alpha_bar=alpha_bar, sigma2=1.0 - alpha, k0=k0, delta=delta
    )


def _step_column(sched: NoiseSchedule, k, values: numpy.ndarray) -> numpy.ndarray:
    k = numpy.asarray(k)
    if numpy.any(k < 0) or numpy.any(k > sched.K):
        raise ScheduleError(f"step outside 0..{sched.K}: {k}")
    picked = values[k]
    if picked.ndim == 1:
        picked = picked.reshape(-1, 1)
    return picked


def forward_sample(x0, k, eps, sched: NoiseSchedule) -> numpy.ndarray:
    """
    Marginal of the forward process after k steps:
    sqrt(alpha_bar_k) x0 + sqrt(1 - alpha_bar_k) eps. `k` is an int or one step
    per row of a batch.
    """
    x0, eps = numpy.asarray(x0, dtype=numpy.float64), numpy.asarray(eps, dtype=numpy.float64)
    if x0.shape != eps.shape:
        raise ShapeError(f"forward_sample: x0 {x0.shape} and eps {eps.shape} differ")
    alpha_bar = _step_column(sched, k, sched.alpha_bar)
    if numpy.ndim(k) == 0:
        alpha_bar = alpha_bar.reshape(())
    return numpy.sqrt(alpha_bar) * x0 + numpy.sqrt(1.0 - alpha_bar) * eps


def invert_step(x_k, eps_hat, sched: NoiseSchedule, k) -> numpy.ndarray:
    x_k = numpy.asarray(x_k, dtype=numpy.float64)
    eps_hat = numpy.asarray(eps_hat, dtype=numpy.float64)
    if x_k.shape != eps_hat.shape:
        raise ShapeError(f"invert: x {x_k.shape} and eps_hat {eps_hat.shape} differ")
    alpha_bar = _step_column(sched, k, sched.alpha_bar)
    if numpy.ndim(k) == 0:
        alpha_bar = alpha_bar.reshape(())
    return (x_k - numpy.sqrt(1.0 - alpha_bar) * eps_hat) / numpy.sqrt(alpha_bar)


def invert_delta(x_delta, eps_hat, sched: NoiseSchedule) -> numpy.ndarray:
    """
    Single-shot estimate of the clean signal from a step-delta sample.
    """
    return invert_step(x_delta, eps_hat, sched, sched.delta)


class NoisePredictor(Protocol):
    def predict_noise(self, x_k, y, cond_mask, k) -> Tensor: ...


class ScoreNet:
    """
    Noise-prediction network eps_hat(x^k, tau y, k). The guidance input is
    multiplied by the mask and accompanied by the mask itself, so a zero mask
    is the null token.
    """

    def __init__(
        self,
        name: str,
        data_dim: int,
        guidance_dim: int,
        total_steps: int,
        rng: numpy.random.Generator,
        hidden: int = HIDDEN_WIDTH,
        embedding_dim: int = STEP_EMBEDDING_DIM,
    ):
        self.data_dim = data_dim
        self.guidance_dim = guidance_dim
        self.total_steps = total_steps
        self.embedding_dim = embedding_dim
        self.params = ParamSet(name)
        in_dim = data_dim + guidance_dim + 1 + embedding_dim
        init_mlp(self.params, "net", [in_dim, hidden, hidden, data_dim], rng)

    def predict_noise(self, x_k, y, cond_mask, k) -> Tensor:
        x_k = T.as_tensor(x_k)
        if x_k.data.ndim != 2 or x_k.shape[1] != self.data_dim:
            raise ShapeError(f"{self.params.name}: expected x of width {self.data_dim}, got {x_k.shape}")
        n = x_k.shape[0]
        mask = numpy.asarray(cond_mask, dtype=numpy.float64).reshape(n, 1)
        parts = [x_k]
        if self.guidance_dim:
            if y is None:
                y = numpy.zeros((n, self.guidance_dim))
                mask = numpy.zeros((n, 1))
            y = T.as_tensor(y)
            if y.shape != (n, self.guidance_dim):
                raise ShapeError(
                    f"{self.params.name}: guidance shape {y.shape}, expected {(n, self.guidance_dim)}"
                )
            parts.append(y * mask)
        parts.append(Tensor(mask))
        steps = numpy.broadcast_to(numpy.asarray(k), (n,))
        parts.append(Tensor(sinusoidal_embedding(steps, self.total_steps, self.embedding_dim)))
        return mlp(self.params, "net", T.concat(parts, axis=1), n_layers=3, activation="relu")


def sample_guidance_mask(n: int, rng: numpy.random.Generator) -> numpy.ndarray:
    """
    Per-item tau as 0/1 floats, 1 meaning the guidance is shown.
    """
    return (rng.random(n) < GUIDANCE_PROBABILITY).astype(numpy.float64)


@dataclass
class AdmDraw:
    """
    Network inputs and regression targets of both loss branches, stacked as
    [branch A rows; branch B rows].
    """

    x_k: numpy.ndarray
    y: numpy.ndarray | None
    cond_mask: numpy.ndarray
    k: numpy.ndarray
    target: numpy.ndarray


def _stop_gradient_noise(net: NoisePredictor, x, y, k: int, available: numpy.ndarray) -> numpy.ndarray:
    n = x.shape[0]
    mask = available if y is not None else numpy.zeros(n)
    with T.no_grad():
        return net.predict_noise(x, y, mask, numpy.full(n, k)).numpy()


def draw_adm_terms(
    x_input: numpy.ndarray,
    y: numpy.ndarray | None,
    net: NoisePredictor,
    sched: NoiseSchedule,
    rng: numpy.random.Generator,
    surrogate: NoiseSurrogate = NoiseSurrogate.GAUSSIAN,
    guidance_mask: numpy.ndarray | None = None,
) -> AdmDraw:
    """
    Draws the random quantities of both branches in a fixed order: noise
    surrogate (gaussian only), branch A steps, noise and masks, then branch B.

    Branch A re-noises the estimate x_hat0 = invert_delta(x_input, eps_s) to a
    step in k0..K. Branch B continues the forward chain from delta to a step in
    delta..K; its target is the total noise relative to x_hat0, which reduces
    to eps_s at k = delta. Rows with a zero `guidance_mask` always see the
    null token.
    """
    x_input = numpy.asarray(x_input, dtype=numpy.float64)
    if x_input.ndim != 2 or x_input.shape[0] == 0:
        raise ShapeError(f"adm batch must be a non-empty matrix, got shape {x_input.shape}")
    n = x_input.shape[0]
    available = numpy.ones(n) if guidance_mask is None else numpy.asarray(guidance_mask, dtype=numpy.float64)

    if surrogate == NoiseSurrogate.GAUSSIAN:
        eps_s = rng.standard_normal(x_input.shape)
    else:
        eps_s = _stop_gradient_noise(net, x_input, y, sched.delta, available)
    x_hat0 = invert_delta(x_input, eps_s, sched)

    k_a = rng.integers(sched.k0, sched.K + 1, size=n)
    xi_a = rng.standard_normal(x_input.shape)
    mask_a = sample_guidance_mask(n, rng) * available
    x_a = forward_sample(x_hat0, k_a, xi_a, sched)

    k_b = rng.integers(sched.delta, sched.K + 1, size=n)
    xi_b = rng.standard_normal(x_input.shape)
    mask_b = sample_guidance_mask(n, rng) * available
    alpha_bar_k = sched.alpha_bar[k_b].reshape(-1, 1)
    ratio = alpha_bar_k / sched.alpha_bar[sched.delta]
    x_b = numpy.sqrt(ratio) * x_input + numpy.sqrt(1.0 - ratio) * xi_b
    target_b = (
        numpy.sqrt(numpy.maximum(ratio - alpha_bar_k, 0.0)) * eps_s + numpy.sqrt(1.0 - ratio) * xi_b
    ) / numpy.sqrt(1.0 - alpha_bar_k)

    stacked_y = None if y is None else numpy.vstack([y, y])
    return AdmDraw(
        x_k=numpy.vstack([x_a, x_b]),
        y=stacked_y,
        cond_mask=numpy.concatenate([mask_a, mask_b]),
        k=numpy.concatenate([k_a, k_b]),
        target=numpy.vstack([xi_a, target_b]),
    )


def adm_loss(
    x_input: numpy.ndarray,
    y: numpy.ndarray | None,
    net: NoisePredictor,
    sched: NoiseSchedule,
    rng: numpy.random.Generator,
    surrogate: NoiseSurrogate = NoiseSurrogate.GAUSSIAN,
    guidance_mask: numpy.ndarray | None = None,
) -> Tensor:
    """
    Two-branch noise-regression loss, the mean of both branches over the batch.
    `x_input` holds the delta-noised inputs row-wise, `y` the guidance rows or None.
    """
    draw = draw_adm_terms(x_input, y, net, sched, rng, surrogate, guidance_mask)
    predicted = net.predict_noise(draw.x_k, draw.y, draw.cond_mask, draw.k)
    residual = predicted - draw.target
    return T.mean(T.sum(T.square(residual), axis=1))


def guided_noise(
    net: NoisePredictor,
    x: numpy.ndarray,
    y,
    k: int,
    guidance_weight: float,
    guidance_mask: numpy.ndarray | None = None,
) -> numpy.ndarray:
    """
    Classifier-free combination eps_u + w (eps_c - eps_u). Rows with a zero
    `guidance_mask` get the unconditional estimate.
    """
    n = x.shape[0]
    available = numpy.ones(n) if guidance_mask is None else numpy.asarray(guidance_mask, dtype=numpy.float64)
    steps = numpy.full(n, k)
    with T.no_grad():
        if y is None or guidance_weight == 0.0:
            return net.predict_noise(x, y, numpy.zeros(n), steps).numpy()
        conditional = net.predict_noise(x, y, available, steps).numpy()
        if guidance_weight == 1.0:
            return conditional
        unconditional = net.predict_noise(x, y, numpy.zeros(n), steps).numpy()
    return unconditional + guidance_weight * (conditional - unconditional)


def denoise(
    x_delta: numpy.ndarray,
    y: numpy.ndarray | None,
    net: NoisePredictor,
    sched: NoiseSchedule,
    guidance_weight: float = GUIDANCE_WEIGHT,
    rng: numpy.random.Generator | None = None,
    guidance_mask: numpy.ndarray | None = None,
) -> numpy.ndarray:
    """
    Reverse chain from step delta down to k0, then a single-shot inversion at
    k0. Without `rng` every step takes the posterior mean; with it the chain is
    ancestral. A 1D input is treated as a single row.

    Raises:
        DenoiseError: naming the step at which a non-finite value appeared.
    """
    x = numpy.asarray(x_delta, dtype=numpy.float64)
    single = x.ndim == 1
    if single:
        x = x.reshape(1, -1)
        y = None if y is None else numpy.asarray(y, dtype=numpy.float64).reshape(1, -1)

    for k in range(sched.delta, sched.k0, -1):
        eps_hat = guided_noise(net, x, y, k, guidance_weight, guidance_mask)
        if not numpy.all(numpy.isfinite(eps_hat)):
            raise DenoiseError(f"non-finite noise estimate at step {k}")
        x = (x - sched.beta[k] / numpy.sqrt(1.0 - sched.alpha_bar[k]) * eps_hat) / numpy.sqrt(
            sched.alpha[k]
        )
        if rng is not None:
            x = x + numpy.sqrt(sched.posterior_variance(k)) * rng.standard_normal(x.shape)
        if not numpy.all(numpy.isfinite(x)):
            raise DenoiseError(f"non-finite sample at step {k}")

    eps_hat = guided_noise(net, x, y, sched.k0, guidance_weight, guidance_mask)
    x0 = invert_step(x, eps_hat, sched, sched.k0)
    if not numpy.all(numpy.isfinite(x0)):
        raise DenoiseError(f"non-finite estimate at step {sched.k0}")
    return x0[0] if single else x0


def fit_score_net(
    net: ScoreNet,
    x_input: numpy.ndarray,
    y: numpy.ndarray | None,
    sched: NoiseSchedule,
    rng: numpy.random.Generator,
    steps: int,
    batch_size: int,
    lr: float = LEARNING_RATE_DIFFUSION,
    surrogate: NoiseSurrogate = NoiseSurrogate.GAUSSIAN,
) -> list[float]:
    """
    Minibatch Adam on adm_loss over a fixed dataset; returns the loss history.
    """
    history = []
    n = x_input.shape[0]
    for step in range(steps):
        rows = rng.choice(n, size=min(batch_size, n), replace=False)
        loss = adm_loss(x_input[rows], None if y is None else y[rows], net, sched, rng, surrogate)
        grads = T.backward(loss, net.params.params)
        adam_step(net.params, grads, lr)
        history.append(loss.item())
        if step % 500 == 0:
            logger.debug("%s step %d: adm loss %.5f", net.params.name, step, history[-1])
    return history
