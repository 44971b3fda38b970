import itertools

import numpy
import pytest

from cadiff import tensor as T
from cadiff.bisim import (
    check_metric_axioms,
    diameter_bound,
    exact_bisim,
    loss_br,
    loss_bs,
    policy_evaluation,
    uniform_policy,
    value_iteration,
    verify_contraction,
    verify_model_error_bound,
    verify_value_bound,
)
from cadiff.envs import perturb_mdp, random_finite_mdp
from cadiff.errors import BisimError, HypothesisError, ShapeError
from cadiff.models import DiagGaussian, FiniteMDP
from cadiff.tensor import Tensor


def test_two_absorbing_states_reach_the_diameter(two_state_mdp):
    metric = exact_bisim(two_state_mdp, 0.4, 0.5)
    assert metric.d[0, 1] == pytest.approx(0.8, abs=1e-8)
    assert diameter_bound(two_state_mdp, 0.4, 0.5) == pytest.approx(0.8)


def test_identical_states_are_at_distance_zero():
    P = numpy.full((2, 1, 2), 0.5)
    R = numpy.array([[[0.3, 0.7]], [[0.3, 0.7]]])
    mdp = FiniteMDP(P=P, R=R, reward_values=numpy.array([0.0, 1.0]), gamma=0.5)
    assert exact_bisim(mdp, 0.4, 0.5).d[0, 1] == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize("p", [1.0, 2.0])
def test_fixed_point_is_a_bounded_pseudo_metric(small_mdp, p):
    metric = exact_bisim(small_mdp, 0.4, 0.5, p)
    axioms = check_metric_axioms(metric.d)
    assert max(axioms.values()) <= 1e-7
    assert metric.d.max() <= diameter_bound(small_mdp, 0.4, 0.5) + 1e-9


def test_fixed_point_does_not_depend_on_the_start(small_mdp):
    from_zero = exact_bisim(small_mdp, 0.4, 0.5)
    start = numpy.full((4, 4), 0.8)
    numpy.fill_diagonal(start, 0.0)
    from_top = exact_bisim(small_mdp, 0.4, 0.5, d0=start)
    numpy.testing.assert_allclose(from_zero.d, from_top.d, atol=1e-7)


def test_iteration_contracts_at_the_weight_sum(small_mdp):
    report = verify_contraction(small_mdp, 0.4, 0.5)
    assert report.observed_rate <= 0.9 + 1e-9
    assert report.residual <= 1e-9


def test_invalid_weights_and_non_convergence(small_mdp):
    with pytest.raises(BisimError, match="C_r"):
        exact_bisim(small_mdp, 0.6, 0.5)
    with pytest.raises(BisimError, match="converge"):
        exact_bisim(small_mdp, 0.4, 0.5, max_iterations=2)


def test_value_bound_holds(small_mdp):
    report = verify_value_bound(small_mdp, 0.4, 0.5)
    assert report.max_violation <= 1e-6
    assert report.pairs_checked == 6


def test_value_bound_requires_discount_below_transition_weight(small_mdp):
    with pytest.raises(HypothesisError, match="gamma"):
        verify_value_bound(small_mdp, 0.4, 0.2)


def test_value_iteration_on_absorbing_states(two_state_mdp):
    numpy.testing.assert_allclose(value_iteration(two_state_mdp), [1.0 / 0.7, 0.0], atol=1e-8)


def test_policy_evaluation_matches_value_iteration_for_one_action(two_state_mdp):
    values = policy_evaluation(two_state_mdp, uniform_policy(two_state_mdp))
    numpy.testing.assert_allclose(values, value_iteration(two_state_mdp), atol=1e-8)
    with pytest.raises(BisimError, match="policy"):
        policy_evaluation(two_state_mdp, numpy.ones((3, 1)))


def test_model_error_bound_is_tight_for_identical_models(small_mdp):
    report = verify_model_error_bound(small_mdp, small_mdp, 0.4, 0.5)
    assert report.sup_gap == pytest.approx(0.0, abs=1e-9)
    assert report.bound == pytest.approx(0.0)


@pytest.mark.parametrize("shift", [0.01, 0.05, 0.1])
def test_model_error_bound_holds_under_perturbation(small_mdp, shift):
    rng = numpy.random.default_rng(3)
    mdp_hat = perturb_mdp(small_mdp, rng, shift, transitions=True, rewards=True)
    report = verify_model_error_bound(small_mdp, mdp_hat, 0.4, 0.5)
    assert report.sup_gap <= report.bound + 1e-6
    assert report.slack == pytest.approx(report.bound - report.sup_gap)


def test_model_error_bound_rejects_different_supports(small_mdp):
    other = random_finite_mdp(numpy.random.default_rng(0), 3, 2, 0.3)
    with pytest.raises(BisimError, match="differ"):
        verify_model_error_bound(small_mdp, other, 0.4, 0.5)


def test_metric_axioms_flag_triangle_violations():
    d = numpy.array([[0.0, 1.0, 5.0], [1.0, 0.0, 1.0], [5.0, 1.0, 0.0]])
    assert check_metric_axioms(d)["triangle"] == pytest.approx(3.0)
    assert check_metric_axioms(d)["symmetry"] == 0.0


def test_state_loss_is_half_squared_w2_and_detaches_target():
    mean = Tensor([[1.0, 2.0]], requires_grad=True, name="mean")
    std = Tensor([[1.0, 1.0]], requires_grad=True, name="std")
    target_mean = Tensor([[0.0, 0.0]], requires_grad=True, name="target_mean")
    target = DiagGaussian(mean=target_mean, std=numpy.array([[2.0, 1.0]]))
    loss = loss_bs(DiagGaussian(mean=mean, std=std), target)
    assert loss.item() == pytest.approx(0.5 * (1.0 + 4.0 + 1.0))
    grads = T.backward(loss, {"mean": mean, "std": std, "target_mean": target_mean})
    numpy.testing.assert_allclose(grads["mean"], [[1.0, 2.0]])
    numpy.testing.assert_allclose(grads["std"], [[-1.0, 0.0]])
    numpy.testing.assert_array_equal(grads["target_mean"], [[0.0, 0.0]])


def test_reward_loss_is_zero_for_equal_distributions():
    g = DiagGaussian(mean=Tensor([[0.5]], requires_grad=True, name="m"), std=Tensor([[0.2]], requires_grad=True, name="s"))
    assert loss_br(g, DiagGaussian(mean=numpy.array([[0.5]]), std=numpy.array([[0.2]]))).item() == pytest.approx(0.0)
    wide = DiagGaussian(mean=numpy.zeros((1, 2)), std=numpy.ones((1, 2)))
    with pytest.raises(ShapeError):
        loss_br(wide, wide)


def truncated_sum_values(mdp: FiniteMDP, horizon: int) -> numpy.ndarray:
    rewards = mdp.expected_rewards()
    best = numpy.full(mdp.n_states, -numpy.inf)
    for choice in itertools.product(range(mdp.n_actions), repeat=mdp.n_states):
        states = numpy.arange(mdp.n_states)
        P_pi, r_pi = mdp.P[states, choice], rewards[states, choice]
        values, discount, occupancy = numpy.zeros(mdp.n_states), 1.0, numpy.eye(mdp.n_states)
        for _ in range(horizon):
            values += discount * occupancy @ r_pi
            occupancy = occupancy @ P_pi
            discount *= mdp.gamma
        best = numpy.maximum(best, values)
    return best


@pytest.mark.parametrize("seed, gamma, horizon", [(0, 0.3, 60), (1, 0.9, 400), (2, 0.6, 120)])
def test_value_iteration_matches_enumerated_policies(seed, gamma, horizon):
    mdp = random_finite_mdp(numpy.random.default_rng(seed), 3, 2, gamma)
    numpy.testing.assert_allclose(value_iteration(mdp, tol=1e-9), truncated_sum_values(mdp, horizon), atol=1e-6)


def finite_difference(fn, x: numpy.ndarray, eps: float = 1e-6) -> numpy.ndarray:
    grad = numpy.zeros_like(x)
    for index in numpy.ndindex(x.shape):
        bumped = x.copy()
        bumped[index] += eps
        upper = fn(bumped)
        bumped[index] -= 2 * eps
        grad[index] = (upper - fn(bumped)) / (2 * eps)
    return grad


@pytest.mark.parametrize("loss, dim", [(loss_bs, 3), (loss_br, 1)])
def test_bisimulation_loss_gradients_match_finite_differences(loss, dim, rng):
    mean_data = rng.normal(size=(4, dim))
    std_data = rng.uniform(0.2, 1.5, size=(4, dim))
    target = DiagGaussian(mean=rng.normal(size=(4, dim)), std=rng.uniform(0.2, 1.5, size=(4, dim)))

    def value(mean, std) -> float:
        return loss(DiagGaussian(mean=Tensor(mean), std=Tensor(std)), target).item()

    mean = Tensor(mean_data, requires_grad=True, name="mean")
    std = Tensor(std_data, requires_grad=True, name="std")
    grads = T.backward(loss(DiagGaussian(mean=mean, std=std), target), {"mean": mean, "std": std})
    numpy.testing.assert_allclose(
        grads["mean"], finite_difference(lambda v: value(v, std_data), mean_data), rtol=1e-5, atol=1e-8
    )
    numpy.testing.assert_allclose(
        grads["std"], finite_difference(lambda v: value(mean_data, v), std_data), rtol=1e-5, atol=1e-8
    )
