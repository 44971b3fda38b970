from dataclasses import dataclass, field
from enum import Enum, unique
from typing import Any

import numpy
from pydantic import BaseModel, ConfigDict, Field, model_validator

from config import EPISODE_CAP, FINITE_MAX_STATES

from .errors import BisimError, TransportError
from .tensor import Tensor

PROBABILITY_TOLERANCE = 1e-12


@unique
class EnvKind(Enum):
    FINITE = "finite"
    POINT_MASS = "point_mass"


@unique
class ObsMode(Enum):
    FULL = "full"
    POSITIONS_ONLY = "positions_only"
    VELOCITIES_ONLY = "velocities_only"


@unique
class NoiseSurrogate(Enum):
    MODEL = "model"
    GAUSSIAN = "gaussian"


@unique
class VerifySuite(Enum):
    WASSERSTEIN = "wasserstein"
    BISIM = "bisim"
    THEOREM1 = "theorem1"
    COROLLARY1 = "corollary1"
    DIFFUSION = "diffusion"


@dataclass
class DiagGaussian:
    """
    Diagonal Gaussian given by mean and per-dimension standard deviation.
    Holds numpy arrays for the oracles and Tensors inside the learned losses;
    a leading batch axis is allowed.
    """

    mean: Any
    std: Any

    def __post_init__(self):
        if tuple(self.mean.shape) != tuple(self.std.shape):
            raise TransportError(
                f"DiagGaussian mean shape {self.mean.shape} != std shape {self.std.shape}"
            )
        std = self.std.data if isinstance(self.std, Tensor) else numpy.asarray(self.std)
        if numpy.any(std < 0.0):
            raise TransportError("DiagGaussian std must be non-negative")

    @property
    def dim(self) -> int:
        return int(self.mean.shape[-1])


@dataclass
class DiscreteDist:
    """
    Probability vector over a finite support (indices or points).
    """

    probs: numpy.ndarray
    support: numpy.ndarray | None = None

    def __post_init__(self):
        self.probs = numpy.asarray(self.probs, dtype=numpy.float64)
        if self.probs.ndim != 1 or self.probs.size == 0:
            raise TransportError(f"probabilities must be a non-empty vector, got {self.probs.shape}")
        if numpy.any(self.probs < 0.0):
            raise TransportError("probabilities must be non-negative")
        if abs(self.probs.sum() - 1.0) > PROBABILITY_TOLERANCE:
            raise TransportError(f"probabilities sum to {self.probs.sum()!r}, not 1")
        if self.support is None:
            self.support = numpy.arange(self.probs.size)
        self.support = numpy.asarray(self.support)
        if len(self.support) != self.probs.size:
            raise TransportError("support and probabilities differ in length")


@dataclass
class FiniteMDP:
    """
    Tabular dynamics: P[s, a] is a distribution over next states, R[s, a] a
    distribution over the shared finite reward set `reward_values` in [0, 1].
    """

    P: numpy.ndarray
    R: numpy.ndarray
    reward_values: numpy.ndarray
    gamma: float

    def __post_init__(self):
        self.P = numpy.asarray(self.P, dtype=numpy.float64)
        self.R = numpy.asarray(self.R, dtype=numpy.float64)
        self.reward_values = numpy.asarray(self.reward_values, dtype=numpy.float64)
        if self.P.ndim != 3 or self.P.shape[0] != self.P.shape[2]:
            raise BisimError(f"transition table must be [S, A, S], got {self.P.shape}")
        if self.R.shape[:2] != self.P.shape[:2] or self.R.shape[2] != self.reward_values.size:
            raise BisimError(f"reward table shape {self.R.shape} does not match the MDP")
        for name, table in (("P", self.P), ("R", self.R)):
            if numpy.any(table < 0.0):
                raise BisimError(f"negative probability in {name}")
            worst = numpy.abs(table.sum(axis=2) - 1.0).max()
            if worst > PROBABILITY_TOLERANCE:
                raise BisimError(f"rows of {name} deviate from 1 by {worst:.3e}")
        if numpy.any(self.reward_values < 0.0) or numpy.any(self.reward_values > 1.0):
            raise BisimError("rewards must lie in [0, 1]")
        if not 0.0 < self.gamma < 1.0:
            raise BisimError(f"gamma must lie in (0, 1), got {self.gamma}")

    @property
    def n_states(self) -> int:
        return self.P.shape[0]

    @property
    def n_actions(self) -> int:
        return self.P.shape[1]

    def expected_rewards(self) -> numpy.ndarray:
        return self.R @ self.reward_values

    def reward_range(self) -> float:
        """
        r_max - r_min over the reward values that carry probability mass.
        """
        used = self.reward_values[self.R.reshape(-1, self.reward_values.size).max(axis=0) > 0.0]
        return float(used.max() - used.min())


@dataclass
class BisimMetric:
    d: numpy.ndarray
    C_r: float
    C_s: float
    p: float
    iterations: int
    residual: float
    residuals: list[float] = field(default_factory=list)


@dataclass
class StepResult:
    observation: numpy.ndarray
    reward: float
    done: bool
    true_state: numpy.ndarray


@dataclass(frozen=True)
class Transition:
    """
    One replay record. Histories are left-padded windows of the last H
    observations; `*_length` counts the valid rows. The previous window ends
    one step before `history` and has length 0 at episode start.
    """

    history: numpy.ndarray
    history_length: int
    prev_history: numpy.ndarray
    prev_history_length: int
    prev_action: numpy.ndarray
    action: numpy.ndarray
    reward: float
    next_history: numpy.ndarray
    next_history_length: int
    done: bool


class EnvConfig(BaseModel):
    model_config = ConfigDict(frozen=True, use_enum_values=False)
    kind: EnvKind = EnvKind.POINT_MASS
    obs_mode: ObsMode = ObsMode.FULL
    noise_scale: float = Field(0.0, ge=0.0)
    episode_cap: int = Field(EPISODE_CAP, ge=1)
    seed: int = 0
    n_states: int = Field(6, ge=1)
    n_actions: int = Field(2, ge=1)
    gamma: float = Field(0.9, gt=0.0, lt=1.0)

    @model_validator(mode="after")
    def check_finite_size(self) -> "EnvConfig":
        if self.kind == EnvKind.FINITE and self.n_states > FINITE_MAX_STATES:
            raise ValueError(f"finite POMDPs are limited to {FINITE_MAX_STATES} states")
        return self


class ValueBoundReport(BaseModel):
    max_violation: float
    pairs_checked: int


class ContractionReport(BaseModel):
    observed_rate: float
    iterations: int
    residual: float


class ModelErrorReport(BaseModel):
    sup_gap: float
    e_phi: float
    e_theta: float
    bound: float
    slack: float


class Violation(BaseModel):
    check: str
    seed: int
    slack: float
    detail: str = ""


class SuiteReport(BaseModel):
    suite: VerifySuite
    passed: bool
    instances: int
    min_slack: float
    violations: list[Violation]
    notes: dict[str, float] = {}


class SacReport(BaseModel):
    critic_loss: float
    actor_loss: float
    alpha_loss: float
    alpha: float


class EvalReport(BaseModel):
    return_mean: float
    return_std: float
    episodes: int


class EpochMetrics(BaseModel):
    step: int
    return_mean: float
    return_std: float
    return_ema: float
    loss_state: float
    loss_rew: float
    loss_bs: float
    loss_br: float
    actor_loss: float
    critic_loss: float
    alpha: float


class SweepCell(BaseModel):
    noise_scale: float
    noise_intensity: int
    seed: int
    final_return: float
    run_dir: str


class SweepReport(BaseModel):
    """
    Mean final return per (noise scale, noise intensity) cell; `table` rows
    follow `noise_scales` and columns follow `noise_intensities`.
    """

    noise_scales: list[float]
    noise_intensities: list[int]
    seeds: list[int]
    table: list[list[float]]
    cells: list[SweepCell]


class AblationVariant(BaseModel):
    name: str
    returns: list[float]
    mean_return: float
    wins_over_full: int


class AblationReport(BaseModel):
    seeds: list[int]
    variants: list[AblationVariant]
