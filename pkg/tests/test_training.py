import numpy
import pytest

from cadiff.encoder import pad_history
from cadiff.errors import CheckpointError, TrainingError
from cadiff.models import EnvConfig, EpochMetrics, ObsMode, Transition
from cadiff.replay import stack_transitions
from cadiff.training import (
    CaDiffFrontEnd,
    MetricsWriter,
    RawObservationFrontEnd,
    ReturnSmoother,
    RunStreams,
    component,
    evaluate,
    latest_checkpoint,
    make_front_end,
    previous_window,
    read_metrics,
    train,
)


def make_batch(rng, n: int = 6, window: int = 3, obs_dim: int = 4):
    transitions = []
    for index in range(n):
        observations = [rng.normal(size=obs_dim) for _ in range(1 + index % (window + 1))]
        history, length = pad_history(observations, window)
        prev_history, prev_length = previous_window(observations, window)
        next_history, next_length = pad_history(observations + [rng.normal(size=obs_dim)], window)
        transitions.append(
            Transition(
                history=history,
                history_length=length,
                prev_history=prev_history,
                prev_history_length=prev_length,
                prev_action=rng.uniform(-1, 1, size=2),
                action=rng.uniform(-1, 1, size=2),
                reward=float(rng.uniform()),
                next_history=next_history,
                next_history_length=next_length,
                done=False,
            )
        )
    return stack_transitions(transitions)


def checksums(front_end: CaDiffFrontEnd) -> dict[str, str]:
    return {params.name: params.checksum() for params in front_end.param_sets}


def test_streams_are_reproducible_and_independent():
    first, second = RunStreams.from_seed(3), RunStreams.from_seed(3)
    assert first.env.random() == second.env.random()
    assert first.env.random() != first.adm.random()


def test_previous_window_keeps_the_row_a_full_window_drops():
    observations = [numpy.full(2, float(i + 1)) for i in range(4)]
    history, length = pad_history(observations, 3)
    prev_history, prev_length = previous_window(observations, 3)
    numpy.testing.assert_array_equal(history[:, 0], [2.0, 3.0, 4.0])
    numpy.testing.assert_array_equal(prev_history[:, 0], [1.0, 2.0, 3.0])
    assert length == 3 and prev_length == 3


def test_previous_window_is_empty_at_episode_start():
    prev_history, prev_length = previous_window([numpy.ones(2)], 3)
    assert prev_length == 0
    numpy.testing.assert_array_equal(prev_history, numpy.zeros((3, 2)))
    short, short_length = previous_window([numpy.ones(2), numpy.full(2, 2.0)], 3)
    assert short_length == 1
    numpy.testing.assert_array_equal(short[-1], [1.0, 1.0])


def test_state_step_moves_only_theta_and_zeta(tiny_run_config, rng):
    front_end = CaDiffFrontEnd(tiny_run_config, 4, 2, RunStreams.from_seed(0))
    batch = make_batch(rng)
    before = checksums(front_end)
    front_end._state_step(batch, front_end.represent(batch.histories, batch.history_lengths))
    after = checksums(front_end)
    assert before["theta"] != after["theta"]
    assert before["zeta"] != after["zeta"]
    assert before["phi"] == after["phi"]


def test_reward_step_moves_only_phi_and_zeta(tiny_run_config, rng):
    front_end = CaDiffFrontEnd(tiny_run_config, 4, 2, RunStreams.from_seed(0))
    batch = make_batch(rng)
    before = checksums(front_end)
    s_hat = front_end.represent(batch.histories, batch.history_lengths)
    front_end._reward_step(batch, s_hat)
    after = checksums(front_end)
    assert before["phi"] != after["phi"]
    assert before["zeta"] != after["zeta"]
    assert before["theta"] == after["theta"]


def test_train_step_returns_sac_batch(tiny_run_config, rng):
    front_end = CaDiffFrontEnd(tiny_run_config, 4, 2, RunStreams.from_seed(0))
    batch = make_batch(rng)
    losses, sac_batch = front_end.train_step(batch)
    assert sac_batch.states.shape == (6, front_end.state_dim)
    assert sac_batch.next_states.shape == (6, front_end.state_dim)
    assert sac_batch.rewards.shape == (6,)
    assert losses.loss_state > 0.0 and losses.loss_rew > 0.0
    assert losses.loss_bs >= 0.0 and losses.loss_br >= 0.0


@pytest.mark.parametrize(
    "ablations, parts",
    [
        (["no_bisim"], {"theta", "phi"}),
        (["no_obs_denoise"], {"zeta", "phi"}),
        (["no_reward_denoise"], {"zeta", "theta"}),
        (["no_bisim", "no_obs_denoise", "no_reward_denoise"], set()),
    ],
)
def test_ablations_remove_components(tiny_run_config, ablations, parts):
    cfg = tiny_run_config.with_updates(ablations=ablations)
    front_end = make_front_end(cfg, 4, 2, RunStreams.from_seed(0))
    assert {params.name for params in front_end.param_sets} == parts


def test_fully_ablated_front_end_matches_raw_observations(tiny_run_config, rng):
    cfg = tiny_run_config.with_updates(ablations=["no_bisim", "no_obs_denoise", "no_reward_denoise"])
    ablated = make_front_end(cfg, 4, 2, RunStreams.from_seed(0))
    raw = RawObservationFrontEnd(4)
    batch = make_batch(rng)
    _, from_ablated = ablated.train_step(batch)
    _, from_raw = raw.train_step(batch)
    numpy.testing.assert_array_equal(from_ablated.states, from_raw.states)
    numpy.testing.assert_array_equal(from_ablated.next_states, from_raw.next_states)
    numpy.testing.assert_array_equal(from_ablated.rewards, from_raw.rewards)


def test_component_tags_failures():
    with pytest.raises(TrainingError, match="step 12: sac: boom") as info:
        with component(12, "sac"):
            raise RuntimeError("boom")
    assert info.value.step == 12 and info.value.component == "sac"


def test_metrics_reader_skips_truncated_line(tmp_path):
    path = tmp_path / "metrics.jsonl"
    writer = MetricsWriter(path)
    record = EpochMetrics(
        step=1, return_mean=1.0, return_std=0.0, return_ema=1.0, loss_state=0.0, loss_rew=0.0,
        loss_bs=0.0, loss_br=0.0, actor_loss=0.0, critic_loss=0.0, alpha=1.0,
    )
    writer.append(record)
    with open(path, "a", encoding="utf-8") as f:
        f.write('{"step": 2, "return_me')
    assert read_metrics(path) == [record]


def test_return_smoother_half_life():
    smoother = ReturnSmoother(half_life=1.0)
    assert smoother.update(0.0) == 0.0
    assert smoother.update(1.0) == pytest.approx(0.5)


def test_tiny_run_writes_metrics_and_checkpoints(tiny_run_config):
    run_dir = train(tiny_run_config)
    records = read_metrics(run_dir / "metrics.jsonl")
    assert [r.step for r in records] == [20, 40]
    assert all(numpy.isfinite(r.return_mean) for r in records)
    checkpoint = latest_checkpoint(run_dir)
    assert checkpoint.name == "step_40"
    assert {p.name for p in checkpoint.iterdir()} >= {"zeta.cdf", "theta.cdf", "phi.cdf", "actor.cdf", "run_config.json"}

    report = evaluate(checkpoint, None, 2, numpy.random.default_rng(0))
    assert report.episodes == 2
    assert 0.0 <= report.return_mean <= tiny_run_config.episode_cap


def test_same_seed_same_metrics(tiny_run_config, tmp_path):
    first = read_metrics(train(tiny_run_config) / "metrics.jsonl")
    second = read_metrics(train(tiny_run_config.with_updates(run_dir=str(tmp_path / "again"))) / "metrics.jsonl")
    assert first == second


def test_all_ablations_reproduce_plain_sac(tiny_run_config, tmp_path):
    ablated = tiny_run_config.with_updates(
        ablations=["no_bisim", "no_obs_denoise", "no_reward_denoise"], run_dir=str(tmp_path / "ablated")
    )
    plain = tiny_run_config.with_updates(plain_sac=True, run_dir=str(tmp_path / "plain"))
    assert read_metrics(train(ablated) / "metrics.jsonl") == read_metrics(train(plain) / "metrics.jsonl")


def test_zero_steps_only_snapshot(tiny_run_config):
    run_dir = train(tiny_run_config.with_updates(total_steps=0))
    assert (run_dir / "run_config.json").exists()
    assert not (run_dir / "metrics.jsonl").exists()


def test_evaluating_on_a_different_observation_space_fails(tiny_run_config):
    run_dir = train(tiny_run_config)
    with pytest.raises(CheckpointError):
        evaluate(latest_checkpoint(run_dir), EnvConfig(obs_mode=ObsMode.POSITIONS_ONLY), 1, numpy.random.default_rng(0))


def test_act_state_accepts_a_window_plus_one_history(tiny_run_config):
    front_end = CaDiffFrontEnd(tiny_run_config, 4, 2, RunStreams.from_seed(0))
    window = tiny_run_config.history_window
    observations = [numpy.full(4, 0.1 * i) for i in range(window + 1)]
    assert front_end.act_state(observations, numpy.zeros(2)).shape == (front_end.state_dim,)
    assert front_end.act_state(observations[:1], numpy.zeros(2)).shape == (front_end.state_dim,)


@pytest.mark.parametrize("step, weight", [("_state_step", "C_s"), ("_reward_step", "C_r")])
def test_bisimulation_terms_scale_with_their_weight(tiny_run_config, rng, monkeypatch, step, weight):
    encoder_grads = []

    def record(params, grads, lr):
        if params.name == "zeta":
            encoder_grads.append(grads)

    monkeypatch.setattr("cadiff.training.adam_step", record)
    batch = make_batch(rng)
    for value in (0.2, 0.4):
        cfg = tiny_run_config.model_copy(update={weight: value})
        front_end = CaDiffFrontEnd(cfg, 4, 2, RunStreams.from_seed(0))
        getattr(front_end, step)(batch, front_end.represent(batch.histories, batch.history_lengths))
    low, high = encoder_grads
    assert set(low) == set(high)
    for name in low:
        numpy.testing.assert_allclose(high[name], 2.0 * low[name], rtol=1e-9, atol=1e-15)
