import hashlib
import logging
from typing import Iterator

import numpy

from . import tensor as T
from .tensor import Tensor

logger = logging.getLogger("cadiff.layers")

ACTIVATIONS = {"tanh": T.tanh, "relu": T.relu, "softplus": T.softplus}


class ParamSet:
    """
    Named parameters of one model (θ, φ, ζ, the actor, each critic) together
    with the optimizer state that belongs to them.
    """

    def __init__(self, name: str):
        self.name = name
        self.params: dict[str, Tensor] = {}
        self.step_count = 0
        self.first_moments: dict[str, numpy.ndarray] = {}
        self.second_moments: dict[str, numpy.ndarray] = {}

    def full_name(self, key: str) -> str:
        return f"{self.name}.{key}"

    def add(self, key: str, data: numpy.ndarray) -> Tensor:
        full_name = self.full_name(key)
        if full_name in self.params:
            raise RuntimeError(f"parameter {full_name} already exists")
        param = Tensor(data, requires_grad=True, name=full_name)
        self.params[full_name] = param
        return param

    def __getitem__(self, key: str) -> Tensor:
        return self.params[self.full_name(key)]

    def __contains__(self, full_name: str) -> bool:
        return full_name in self.params

    def __iter__(self) -> Iterator[str]:
        return iter(self.params)

    def __len__(self) -> int:
        return len(self.params)

    def own(self, grads: dict[str, numpy.ndarray]) -> dict[str, numpy.ndarray]:
        """
        Selects the gradients that belong to this set.
        """
        return {name: grad for name, grad in grads.items() if name in self.params}

    def checksum(self) -> str:
        digest = hashlib.sha256()
        for full_name in sorted(self.params):
            digest.update(full_name.encode("utf-8"))
            digest.update(self.params[full_name].data.tobytes())
        return digest.hexdigest()

    def copy(self, name: str) -> "ParamSet":
        clone = ParamSet(name)
        prefix = len(self.name) + 1
        for full_name, param in self.params.items():
            clone.add(full_name[prefix:], param.data.copy())
        return clone

    def soft_update_from(self, other: "ParamSet", tau: float) -> None:
        """
        Blends `other` into this set: p <- (1 - tau) p + tau p_other.
        """
        for mine, theirs in zip(self.params.values(), other.params.values()):
            mine.data = (1.0 - tau) * mine.data + tau * theirs.data


def glorot_uniform(
    fan_in: int, fan_out: int, rng: numpy.random.Generator
) -> numpy.ndarray:
    limit = numpy.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def init_linear(
    params: ParamSet, key: str, fan_in: int, fan_out: int, rng: numpy.random.Generator
) -> None:
    params.add(f"{key}.weight", glorot_uniform(fan_in, fan_out, rng))
    params.add(f"{key}.bias", numpy.zeros(fan_out))


def linear(params: ParamSet, key: str, x: Tensor) -> Tensor:
    return x @ params[f"{key}.weight"] + params[f"{key}.bias"]


def init_mlp(
    params: ParamSet, key: str, sizes: list[int], rng: numpy.random.Generator
) -> None:
    for index, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        init_linear(params, f"{key}.{index}", fan_in, fan_out, rng)


def mlp(
    params: ParamSet, key: str, x: Tensor, n_layers: int, activation: str = "relu"
) -> Tensor:
    """
    Affine layers with `activation` between them and a linear output.
    """
    act = ACTIVATIONS[activation]
    for index in range(n_layers):
        x = linear(params, f"{key}.{index}", x)
        if index < n_layers - 1:
            x = act(x)
    return x


def init_gru(
    params: ParamSet, key: str, input_dim: int, hidden: int, rng: numpy.random.Generator
) -> None:
    params.add(f"{key}.input_weight", glorot_uniform(input_dim, 3 * hidden, rng))
    params.add(f"{key}.hidden_weight", glorot_uniform(hidden, 3 * hidden, rng))
    params.add(f"{key}.input_bias", numpy.zeros(3 * hidden))
    params.add(f"{key}.hidden_bias", numpy.zeros(3 * hidden))


def gru_cell(params: ParamSet, key: str, x: Tensor, h: Tensor) -> Tensor:
    """
    Single gated recurrent update; the gate blocks are [update, reset, candidate].
    """
    width = h.shape[-1]
    gx = x @ params[f"{key}.input_weight"] + params[f"{key}.input_bias"]
    gh = h @ params[f"{key}.hidden_weight"] + params[f"{key}.hidden_bias"]
    update = T.sigmoid(gx[:, :width] + gh[:, :width])
    reset = T.sigmoid(gx[:, width : 2 * width] + gh[:, width : 2 * width])
    candidate = T.tanh(gx[:, 2 * width :] + reset * gh[:, 2 * width :])
    return (1.0 - update) * candidate + update * h


def bounded_log_std(raw: Tensor, low: float, high: float) -> Tensor:
    """
    Squashes an unconstrained head output into [low, high].
    """
    return low + 0.5 * (high - low) * (T.tanh(raw) + 1.0)


def sinusoidal_embedding(steps: numpy.ndarray, total_steps: int, dim: int) -> numpy.ndarray:
    """
    Encodes k/K with `dim` sine/cosine features at log-spaced frequencies.
    """
    position = numpy.asarray(steps, dtype=numpy.float64).reshape(-1, 1) / total_steps
    frequencies = numpy.exp(numpy.linspace(0.0, numpy.log(1000.0), dim // 2))
    angles = position * frequencies.reshape(1, -1)
    return numpy.concatenate([numpy.sin(angles), numpy.cos(angles)], axis=1)
