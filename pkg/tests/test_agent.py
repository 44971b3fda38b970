import numpy
import pytest

from cadiff import tensor as T
from cadiff.agent import SacBatch, SacNets, q_value, sac_update, select_action, squashed_log_prob
from cadiff.errors import AgentError
from cadiff.tensor import Tensor


@pytest.fixture
def nets(rng) -> SacNets:
    return SacNets(state_dim=3, action_dim=2, rng=rng, target_entropy=-2.0, hidden=16)


def make_batch(rng, n: int = 32, reward: float = 1.0, done: float = 1.0) -> SacBatch:
    return SacBatch(
        states=rng.normal(size=(n, 3)),
        actions=rng.uniform(-1, 1, size=(n, 2)),
        rewards=numpy.full(n, reward),
        next_states=rng.normal(size=(n, 3)),
        dones=numpy.full(n, done),
    )


def test_actions_stay_inside_the_box(nets, rng):
    for _ in range(20):
        action, log_prob = select_action(rng.normal(size=3) * 100.0, nets, False, rng)
        assert action.shape == (2,)
        assert numpy.all(numpy.abs(action) < 1.0)
        assert numpy.isfinite(log_prob)


def test_deterministic_action_is_repeatable(nets, rng):
    state = rng.normal(size=3)
    first, _ = select_action(state, nets, True, numpy.random.default_rng(0))
    second, _ = select_action(state, nets, True, numpy.random.default_rng(1))
    numpy.testing.assert_array_equal(first, second)


@pytest.mark.parametrize("u", [-20.0, -1.0, 0.0, 0.5, 20.0])
def test_squashed_log_prob_matches_change_of_variables(u):
    mean, log_std = 0.3, numpy.log(0.7)
    value = squashed_log_prob(Tensor([[u]]), Tensor([[mean]]), Tensor([[log_std]])).item()
    gaussian = -0.5 * ((u - mean) / 0.7) ** 2 - numpy.log(0.7) - 0.5 * numpy.log(2 * numpy.pi)
    log_det = 2.0 * (numpy.log(2.0) - u - numpy.logaddexp(0.0, -2.0 * u))
    assert value == pytest.approx(gaussian - log_det)
    assert numpy.isfinite(value)


def test_update_touches_only_agent_parameters(nets, rng):
    before = {p.name: p.checksum() for p in nets.param_sets}
    report = sac_update(make_batch(rng), nets, rng)
    after = {p.name: p.checksum() for p in nets.param_sets}
    assert all(before[name] != after[name] for name in before)
    assert report.alpha == pytest.approx(nets.alpha)


def test_targets_follow_by_tau(nets, rng):
    old_target = nets.target1["net.0.weight"].data.copy()
    sac_update(make_batch(rng), nets, rng, tau=0.25)
    expected = 0.75 * old_target + 0.25 * nets.critic1["net.0.weight"].data
    numpy.testing.assert_allclose(nets.target1["net.0.weight"].data, expected)


def test_terminal_rewards_are_the_td_fixed_point(nets, rng):
    for _ in range(500):
        sac_update(make_batch(rng), nets, rng, lr_policy_value=3e-3)
    batch = make_batch(rng)
    with T.no_grad():
        q = q_value(nets.critic1, batch.states, batch.actions).data
    assert numpy.abs(q - 1.0).mean() < 0.1


def test_non_finite_rewards_name_the_component(nets, rng):
    with pytest.raises(AgentError, match="critic1"):
        sac_update(make_batch(rng, reward=numpy.nan), nets, rng)
