import numpy
import pytest

from cadiff import tensor as T
from cadiff.checkpoint import decode_params, encode_params, load_params_into, save_params
from cadiff.errors import CheckpointError, GradientError
from cadiff.layers import ParamSet, gru_cell, init_gru, init_mlp, mlp, sinusoidal_embedding
from cadiff.optim import adam_step
from cadiff.tensor import Tensor


def quadratic_params() -> ParamSet:
    params = ParamSet("quad")
    params.add("x", numpy.array([3.0, -2.0]))
    return params


def test_adam_minimizes_quadratic():
    params = quadratic_params()
    for _ in range(3000):
        loss = T.sum(T.square(params["x"] - numpy.array([1.0, 1.0])))
        adam_step(params, T.backward(loss, params.params), lr=0.02)
    numpy.testing.assert_allclose(params["x"].data, [1.0, 1.0], atol=1e-2)


def test_first_adam_step_moves_by_learning_rate():
    params = quadratic_params()
    adam_step(params, {"quad.x": numpy.array([10.0, -0.1])}, lr=0.01)
    numpy.testing.assert_allclose(params["x"].data, [2.99, -1.99], atol=1e-6)


def test_zero_gradient_leaves_parameters_alone():
    params = quadratic_params()
    adam_step(params, {"quad.x": numpy.zeros(2)}, lr=0.1)
    numpy.testing.assert_array_equal(params["x"].data, [3.0, -2.0])


def test_zero_learning_rate_only_counts_the_step():
    params = quadratic_params()
    adam_step(params, {"quad.x": numpy.array([4.0, -1.0])}, lr=0.0)
    numpy.testing.assert_array_equal(params["x"].data, [3.0, -2.0])
    assert params.step_count == 1


def test_adam_trajectories_are_bit_identical():
    trajectories = []
    for _ in range(2):
        params = ParamSet("net")
        init_mlp(params, "mlp", [2, 4, 1], numpy.random.default_rng(8))
        data = numpy.random.default_rng(9).normal(size=(16, 2))
        for _ in range(100):
            loss = T.mean(T.square(mlp(params, "mlp", Tensor(data), n_layers=2, activation="tanh")))
            adam_step(params, T.backward(loss, params.params), lr=1e-2)
        trajectories.append(params.checksum())
    assert trajectories[0] == trajectories[1]


def test_adam_rejects_foreign_and_non_finite_gradients():
    params = quadratic_params()
    with pytest.raises(GradientError, match="does not belong"):
        adam_step(params, {"other.x": numpy.zeros(2)}, lr=0.1)
    with pytest.raises(GradientError, match="non-finite"):
        adam_step(params, {"quad.x": numpy.array([numpy.nan, 0.0])}, lr=0.1)


def test_soft_update_blends_parameters():
    source = quadratic_params()
    target = source.copy("target")
    source["x"].data = numpy.array([5.0, 5.0])
    target.soft_update_from(source, 0.1)
    numpy.testing.assert_allclose(target["x"].data, [3.2, -1.3])


def test_mlp_and_gru_shapes(rng):
    params = ParamSet("net")
    init_mlp(params, "mlp", [3, 8, 2], rng)
    init_gru(params, "cell", 3, 5, rng)
    x = Tensor(rng.normal(size=(4, 3)))
    assert mlp(params, "mlp", x, n_layers=2).shape == (4, 2)
    assert gru_cell(params, "cell", x, Tensor(numpy.zeros((4, 5)))).shape == (4, 5)


def test_sinusoidal_embedding_width():
    emb = sinusoidal_embedding(numpy.array([0, 10, 500]), 500, 32)
    assert emb.shape == (3, 32)
    numpy.testing.assert_allclose(emb[0, :16], 0.0)
    numpy.testing.assert_allclose(emb[0, 16:], 1.0)


def test_checkpoint_restores_exact_values(tmp_path, rng):
    params = ParamSet("actor")
    init_mlp(params, "net", [4, 6, 2], rng)
    params.add("scalar", numpy.array(0.25))
    path = tmp_path / "actor.cdf"
    save_params(params, path)

    restored = ParamSet("actor")
    init_mlp(restored, "net", [4, 6, 2], numpy.random.default_rng(0))
    restored.add("scalar", numpy.array(0.0))
    load_params_into(restored, path)
    assert restored.checksum() == params.checksum()


def test_checkpoint_rejects_bad_magic_and_truncation(rng):
    params = quadratic_params()
    payload = encode_params(params)
    with pytest.raises(CheckpointError, match="magic"):
        decode_params(b"XXXX" + payload[4:])
    with pytest.raises(CheckpointError, match="truncated"):
        decode_params(payload[:-4])


def test_checkpoint_rejects_shape_mismatch(tmp_path):
    params = quadratic_params()
    path = tmp_path / "quad.cdf"
    save_params(params, path)
    other = ParamSet("quad")
    other.add("x", numpy.zeros(3))
    with pytest.raises(CheckpointError, match="shape"):
        load_params_into(other, path)
