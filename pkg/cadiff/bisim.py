import logging
from itertools import combinations

import numpy

from config import BISIM_MAX_ITERATIONS, BISIM_TOLERANCE

from . import tensor as T
from .errors import BisimError, HypothesisError, ShapeError
from .models import (
    BisimMetric,
    ContractionReport,
    DiagGaussian,
    FiniteMDP,
    ModelErrorReport,
    ValueBoundReport,
)
from .tensor import Tensor
from .transport import absolute_difference_cost, wp_discrete

logger = logging.getLogger("cadiff.bisim")

CONTRACTION_FLOOR = 1e-8


def _check_weights(C_r: float, C_s: float) -> None:
    if not (0.0 < C_r < 1.0 and 0.0 < C_s < 1.0 and C_r + C_s < 1.0):
        raise BisimError(f"need C_r, C_s in (0, 1) with C_r + C_s < 1, got {C_r}, {C_s}")


def reward_distances(mdp: FiniteMDP, p: float = 1.0) -> numpy.ndarray:
    """
    W_p between reward distributions under |r - r'|, shape [A, S, S].
    """
    cost = absolute_difference_cost(mdp.reward_values)
    gaps = numpy.zeros((mdp.n_actions, mdp.n_states, mdp.n_states))
    for a in range(mdp.n_actions):
        for i, j in combinations(range(mdp.n_states), 2):
            gaps[a, i, j] = gaps[a, j, i] = wp_discrete(mdp.R[i, a], mdp.R[j, a], cost, p)
    return gaps


def bisim_update(
    mdp: FiniteMDP, d: numpy.ndarray, reward_gaps: numpy.ndarray, C_r: float, C_s: float, p: float
) -> numpy.ndarray:
    """
    One application of the bisimulation operator to the metric `d`.
    """
    new = numpy.zeros_like(d)
    for i, j in combinations(range(mdp.n_states), 2):
        best = 0.0
        for a in range(mdp.n_actions):
            transition_gap = wp_discrete(mdp.P[i, a], mdp.P[j, a], d, p)
            best = max(best, C_r * reward_gaps[a, i, j] + C_s * transition_gap)
        new[i, j] = new[j, i] = best
    return new


def exact_bisim(
    mdp: FiniteMDP,
    C_r: float,
    C_s: float,
    p: float = 1.0,
    tol: float = BISIM_TOLERANCE,
    d0: numpy.ndarray | None = None,
    max_iterations: int = BISIM_MAX_ITERATIONS,
) -> BisimMetric:
    """
    Fixed point of d(i, j) = max_a [C_r W_p(R(i, a), R(j, a)) + C_s W_p(d)(P(i, a), P(j, a))],
    iterated from d0 (zeros by default) until the sup-norm residual is <= tol.

    Raises:
        BisimError: for invalid weights or when the iteration does not converge.
    """
    _check_weights(C_r, C_s)
    if tol <= 0.0:
        raise BisimError(f"tolerance must be positive, got {tol}")
    n = mdp.n_states
    d = numpy.zeros((n, n)) if d0 is None else numpy.array(d0, dtype=numpy.float64)
    if d.shape != (n, n):
        raise BisimError(f"initial metric has shape {d.shape}, expected {(n, n)}")

    reward_gaps = reward_distances(mdp, p)
    residuals: list[float] = []
    for iteration in range(1, max_iterations + 1):
        new = bisim_update(mdp, d, reward_gaps, C_r, C_s, p)
        residual = float(numpy.max(numpy.abs(new - d))) if n > 1 else 0.0
        residuals.append(residual)
        d = new
        if residual <= tol:
            logger.debug("bisimulation fixed point after %d iterations", iteration)
            return BisimMetric(
                d=d, C_r=C_r, C_s=C_s, p=p, iterations=iteration, residual=residual, residuals=residuals
            )
    raise BisimError(
        f"bisimulation iteration did not converge in {max_iterations} steps (residual {residuals[-1]:.3e})"
    )


def diameter_bound(mdp: FiniteMDP, C_r: float, C_s: float) -> float:
    return C_r * mdp.reward_range() / (1.0 - C_s)


def value_iteration(mdp: FiniteMDP, tol: float = BISIM_TOLERANCE) -> numpy.ndarray:
    """
    Optimal state values of the max-Bellman operator.
    """
    rewards = mdp.expected_rewards()
    V = numpy.zeros(mdp.n_states)
    # successive gap <= tol (1 - gamma) keeps the distance to the fixed point <= tol
    threshold = tol * (1.0 - mdp.gamma)
    while True:
        new = numpy.max(rewards + mdp.gamma * (mdp.P @ V), axis=1)
        if numpy.max(numpy.abs(new - V)) <= threshold:
            return new
        V = new


def policy_evaluation(mdp: FiniteMDP, policy: numpy.ndarray) -> numpy.ndarray:
    """
    Exact V^pi of a stochastic policy given as a [S, A] table.
    """
    policy = numpy.asarray(policy, dtype=numpy.float64)
    if policy.shape != (mdp.n_states, mdp.n_actions):
        raise BisimError(f"policy table has shape {policy.shape}, expected {(mdp.n_states, mdp.n_actions)}")
    reward_pi = numpy.sum(policy * mdp.expected_rewards(), axis=1)
    P_pi = numpy.einsum("sa,sat->st", policy, mdp.P)
    return numpy.linalg.solve(numpy.eye(mdp.n_states) - mdp.gamma * P_pi, reward_pi)


def uniform_policy(mdp: FiniteMDP) -> numpy.ndarray:
    return numpy.full((mdp.n_states, mdp.n_actions), 1.0 / mdp.n_actions)


def value_gap_violation(values: numpy.ndarray, d: numpy.ndarray, C_r: float) -> float:
    """
    max over pairs of C_r |V_i - V_j| - d(i, j); non-positive when the bound holds.
    """
    n = values.size
    if n < 2:
        return 0.0
    gaps = C_r * numpy.abs(values[:, None] - values[None, :]) - d
    return float(numpy.max(gaps[~numpy.eye(n, dtype=bool)]))


def verify_value_bound(
    mdp: FiniteMDP, C_r: float, C_s: float, p: float = 1.0, tol: float = BISIM_TOLERANCE
) -> ValueBoundReport:
    """
    Raises:
        HypothesisError: if C_s < gamma, where the value bound is not claimed.
    """
    if C_s < mdp.gamma:
        raise HypothesisError(f"value bound needs C_s >= gamma, got C_s={C_s} < gamma={mdp.gamma}")
    metric = exact_bisim(mdp, C_r, C_s, p, tol)
    values = value_iteration(mdp, tol)
    n = mdp.n_states
    return ValueBoundReport(
        max_violation=value_gap_violation(values, metric.d, C_r), pairs_checked=n * (n - 1) // 2
    )


def verify_contraction(
    mdp: FiniteMDP,
    C_r: float,
    C_s: float,
    p: float = 1.0,
    d0: numpy.ndarray | None = None,
    tol: float = BISIM_TOLERANCE,
) -> ContractionReport:
    """
    Largest ratio of successive sup-norm residuals of the fixed-point iteration.
    Ratios whose denominator is below the numerical floor are skipped.
    """
    metric = exact_bisim(mdp, C_r, C_s, p, tol, d0=d0)
    ratios = [
        current / previous
        for previous, current in zip(metric.residuals[:-1], metric.residuals[1:])
        if previous > CONTRACTION_FLOOR
    ]
    return ContractionReport(
        observed_rate=max(ratios, default=0.0), iterations=metric.iterations, residual=metric.residual
    )


def _check_same_support(mdp: FiniteMDP, mdp_hat: FiniteMDP) -> None:
    if mdp.P.shape != mdp_hat.P.shape:
        raise BisimError(f"state/action sets differ: {mdp.P.shape} vs {mdp_hat.P.shape}")
    if mdp.reward_values.shape != mdp_hat.reward_values.shape or not numpy.allclose(
        mdp.reward_values, mdp_hat.reward_values
    ):
        raise BisimError("reward supports differ")


def model_errors(mdp: FiniteMDP, mdp_hat: FiniteMDP, ground: numpy.ndarray) -> tuple[float, float]:
    """
    (E_phi, E_theta): the largest W1 reward gap and the largest W1 transition
    gap under `ground`, over all state-action pairs.
    """
    cost = absolute_difference_cost(mdp.reward_values)
    e_phi = e_theta = 0.0
    for s in range(mdp.n_states):
        for a in range(mdp.n_actions):
            e_phi = max(e_phi, wp_discrete(mdp.R[s, a], mdp_hat.R[s, a], cost, 1.0))
            e_theta = max(e_theta, wp_discrete(mdp.P[s, a], mdp_hat.P[s, a], ground, 1.0))
    return e_phi, e_theta


def verify_model_error_bound(
    mdp: FiniteMDP, mdp_hat: FiniteMDP, C_r: float, C_s: float, tol: float = BISIM_TOLERANCE
) -> ModelErrorReport:
    """
    Compares |d - d_hat|_inf with (2 C_r E_phi + 2 C_s E_theta) / (1 - C_r - C_s)
    for p = 1, measuring the transition error in the metric of `mdp`.

    Raises:
        BisimError: if the two MDPs do not share states, actions and rewards.
    """
    _check_same_support(mdp, mdp_hat)
    d = exact_bisim(mdp, C_r, C_s, 1.0, tol).d
    d_hat = exact_bisim(mdp_hat, C_r, C_s, 1.0, tol).d
    e_phi, e_theta = model_errors(mdp, mdp_hat, d)
    bound = (2.0 * C_r * e_phi + 2.0 * C_s * e_theta) / (1.0 - C_r - C_s)
    sup_gap = float(numpy.max(numpy.abs(d - d_hat)))
    return ModelErrorReport(sup_gap=sup_gap, e_phi=e_phi, e_theta=e_theta, bound=bound, slack=bound - sup_gap)


def check_metric_axioms(d: numpy.ndarray) -> dict[str, float]:
    """
    Worst violation of each pseudo-metric axiom; all entries are <= 0 up to
    rounding for a valid metric.
    """
    d = numpy.asarray(d, dtype=numpy.float64)
    triangle = d[:, None, :] - d[:, :, None] - d[None, :, :]
    # triangle[i, k, j] = d(i, j) - d(i, k) - d(k, j)
    return {
        "symmetry": float(numpy.max(numpy.abs(d - d.T))),
        "diagonal": float(numpy.max(numpy.abs(numpy.diag(d)))),
        "negativity": float(numpy.max(-d)) if d.size else 0.0,
        "triangle": float(numpy.max(triangle)) if d.size else 0.0,
    }


def _rows(value) -> Tensor:
    value = T.as_tensor(value)
    if value.data.ndim == 1:
        return T.reshape(value, (1, value.shape[0]))
    return value


def _w2_squared_batch(live: DiagGaussian, target: DiagGaussian) -> Tensor:
    mean, std = _rows(live.mean), _rows(live.std)
    target_mean = _rows(T.as_tensor(target.mean).detach())
    target_std = _rows(T.as_tensor(target.std).detach())
    if mean.shape != target_mean.shape:
        raise ShapeError(f"distribution shapes differ: {mean.shape} vs {target_mean.shape}")
    per_item = T.sum(T.square(mean - target_mean), axis=1) + T.sum(T.square(std - target_std), axis=1)
    return T.mean(per_item)


def loss_bs(enc_next: DiagGaussian, adm_next: DiagGaussian) -> Tensor:
    """
    Half squared W2 between the encoder's next-state distribution and the
    denoiser's, averaged over the batch. The denoiser side is a constant target.
    """
    return 0.5 * _w2_squared_batch(enc_next, adm_next)


def loss_br(enc_reward: DiagGaussian, adm_reward: DiagGaussian) -> Tensor:
    if enc_reward.dim != 1 or adm_reward.dim != 1:
        raise ShapeError(f"reward distributions must be 1-dimensional, got {enc_reward.dim}, {adm_reward.dim}")
    return 0.5 * _w2_squared_batch(enc_reward, adm_reward)
