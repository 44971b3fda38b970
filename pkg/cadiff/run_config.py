import logging
from pathlib import Path
from typing import Any, Literal

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from config import (
    ABLATION_FLAGS,
    BETA_MAX,
    BETA_MIN,
    BETA_SCHEDULE,
    C_R,
    C_S,
    CHECKPOINT_EVERY,
    DISCOUNT_FACTOR,
    EARLY_STOPPING_STEP,
    EPISODE_CAP,
    EVAL_EPISODES,
    GUIDANCE_WEIGHT,
    HISTORY_WINDOW,
    LEARNING_RATE_BISIMULATION,
    LEARNING_RATE_DIFFUSION,
    LEARNING_RATE_ENTROPY_COEFFICIENT,
    LEARNING_RATE_POLICY_AND_VALUE,
    NOISE_INTENSITY,
    NUMBER_OF_SAMPLES_FOR_EACH_UPDATE,
    RUN_DIR_DEFAULT,
    SIZE_OF_REPLAY_MEMORY,
    STEPS_PER_EPOCH,
    SWEEP_NOISE_INTENSITIES,
    SWEEP_NOISE_SCALES,
    TARGET_ENTROPY_IN_SAC,
    TARGET_UPDATE_FRACTION,
    TOTAL_DIFFUSION_STEP,
    TOTAL_STEPS_DEFAULT,
    WARMUP_STEPS,
)

from .errors import ConfigError
from .models import EnvConfig, EnvKind, NoiseSurrogate, ObsMode

logger = logging.getLogger("cadiff.run_config")

LIST_KEYS = {"ablations", "noise_scale", "noise_intensity", "seeds"}


class RunConfig(BaseModel):
    """
    Every knob of a training run. File keys are the aliases.
    """

    model_config = ConfigDict(populate_by_name=True, extra="forbid", frozen=True)

    training_iterates: int | None = Field(None, alias="number_of_training_iterates", ge=1)
    replay_capacity: int = Field(SIZE_OF_REPLAY_MEMORY, alias="size_of_replay_memory", ge=1)
    batch_size: int = Field(NUMBER_OF_SAMPLES_FOR_EACH_UPDATE, alias="number_of_samples_for_each_update", ge=1)
    gamma: float = Field(DISCOUNT_FACTOR, alias="discount_factor", gt=0.0, lt=1.0)
    tau: float = Field(TARGET_UPDATE_FRACTION, alias="fraction_of_updating_the_target_network", ge=0.0, le=1.0)
    lr_policy_value: float = Field(LEARNING_RATE_POLICY_AND_VALUE, alias="learning_rate_for_the_policy_and_value_networks", gt=0.0)
    lr_entropy: float = Field(LEARNING_RATE_ENTROPY_COEFFICIENT, alias="learning_rate_for_the_entropy_coefficient_in_sac", gt=0.0)
    target_entropy: float | Literal["auto"] = Field(TARGET_ENTROPY_IN_SAC, alias="target_entropy_in_sac")
    lr_diffusion: float = Field(LEARNING_RATE_DIFFUSION, alias="learning_rate_of_diffusion_model", gt=0.0)
    lr_bisim: float = Field(LEARNING_RATE_BISIMULATION, alias="learning_rate_of_bisimulation", gt=0.0)
    diffusion_steps: int = Field(TOTAL_DIFFUSION_STEP, alias="total_diffusion_step", ge=1)
    beta_schedule: Literal["linear"] = Field(BETA_SCHEDULE, alias="beta_schedule")
    delta: int = Field(NOISE_INTENSITY, alias="noise_intensity_of_observation_and_reward", ge=1)

    beta_min: float = Field(BETA_MIN, gt=0.0, lt=1.0)
    beta_max: float = Field(BETA_MAX, gt=0.0, lt=1.0)
    k0: int = Field(EARLY_STOPPING_STEP, alias="early_stopping_step", ge=1)
    guidance_weight: float = GUIDANCE_WEIGHT
    surrogate: NoiseSurrogate = NoiseSurrogate.GAUSSIAN
    C_r: float = Field(C_R, alias="c_r", gt=0.0, lt=1.0)
    C_s: float = Field(C_S, alias="c_s", gt=0.0, lt=1.0)

    seed: int = 0
    total_steps: int = Field(TOTAL_STEPS_DEFAULT, ge=0)
    steps_per_epoch: int = Field(STEPS_PER_EPOCH, ge=1)
    warmup_steps: int = Field(WARMUP_STEPS, ge=0)
    checkpoint_every: int = Field(CHECKPOINT_EVERY, ge=1)
    eval_episodes: int = Field(EVAL_EPISODES, ge=1)
    history_window: int = Field(HISTORY_WINDOW, ge=1)
    causal_state_dim: int | None = Field(None, ge=1)
    ablations: list[str] = []
    plain_sac: bool = False

    env_kind: EnvKind = EnvKind.POINT_MASS
    obs_mode: ObsMode = ObsMode.FULL
    noise_scale: float = Field(0.5, ge=0.0)
    episode_cap: int = Field(EPISODE_CAP, ge=1)
    run_dir: str = RUN_DIR_DEFAULT

    @model_validator(mode="before")
    @classmethod
    def epochs_to_steps(cls, data: Any) -> Any:
        """
        number_of_training_iterates counts epochs of steps_per_epoch steps and
        sets total_steps, unless total_steps is given as well.
        """
        if not isinstance(data, dict):
            return data
        epochs = data.get("number_of_training_iterates", data.get("training_iterates"))
        if epochs is None or data.get("total_steps") is not None:
            return data
        try:
            total = int(epochs) * int(data.get("steps_per_epoch", STEPS_PER_EPOCH))
        except (TypeError, ValueError):
            # left to field validation
            return data
        return {**data, "total_steps": total}

    @model_validator(mode="after")
    def check_consistency(self) -> "RunConfig":
        if self.beta_min > self.beta_max:
            raise ValueError(f"beta_min {self.beta_min} exceeds beta_max {self.beta_max}")
        if not self.k0 <= self.delta <= self.diffusion_steps:
            raise ValueError(
                f"need early_stopping_step <= noise_intensity <= total_diffusion_step,"
                + f" got {self.k0}, {self.delta}, {self.diffusion_steps}"
            )
        if self.C_r + self.C_s >= 1.0:
            raise ValueError(f"c_r + c_s must stay below 1, got {self.C_r + self.C_s}")
        unknown = sorted(set(self.ablations) - set(ABLATION_FLAGS))
        if unknown:
            raise ValueError(f"unknown ablation flags {unknown}, choose from {ABLATION_FLAGS}")
        if self.env_kind != EnvKind.POINT_MASS:
            raise ValueError("training runs on the point_mass environment only")
        return self

    @property
    def no_bisim(self) -> bool:
        return "no_bisim" in self.ablations

    @property
    def no_obs_denoise(self) -> bool:
        return "no_obs_denoise" in self.ablations

    @property
    def no_reward_denoise(self) -> bool:
        return "no_reward_denoise" in self.ablations

    def env_config(self, seed_offset: int = 0) -> EnvConfig:
        return EnvConfig(
            kind=self.env_kind,
            obs_mode=self.obs_mode,
            noise_scale=self.noise_scale,
            episode_cap=self.episode_cap,
            seed=self.seed + seed_offset,
        )

    def resolved_target_entropy(self, action_dim: int) -> float:
        """
        'auto' stands for the conventional -action_dim target.
        """
        if self.target_entropy == "auto":
            return -float(action_dim)
        return float(self.target_entropy)

    def with_updates(self, **changes) -> "RunConfig":
        try:
            return RunConfig.model_validate({**self.model_dump(), **changes})
        except ValidationError as e:
            raise ConfigError(f"invalid run config: {e}") from e


class SweepGrid(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    noise_scale: list[float] = Field(default_factory=lambda: list(SWEEP_NOISE_SCALES), min_length=1)
    noise_intensity: list[int] = Field(default_factory=lambda: list(SWEEP_NOISE_INTENSITIES), min_length=1)
    seeds: list[int] = Field(default_factory=lambda: [0], min_length=1)


def parse_key_values(text: str) -> dict[str, str | list[str]]:
    """
    Reads flat `key = value` lines; `#` starts a comment and list-valued keys
    take comma-separated values.

    Raises:
        ConfigError: for lines without '=' or repeated keys.
    """
    values: dict[str, str | list[str]] = {}
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {number}: expected 'key = value', got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key in values:
            raise ConfigError(f"line {number}: key {key!r} given twice")
        if key in LIST_KEYS:
            values[key] = [item.strip() for item in value.split(",") if item.strip()]
        else:
            values[key] = value
    return values


def _read_text(path: Path) -> str:
    try:
        with open(path, "r", encoding="utf-8") as f:
            return f.read()
    except OSError as e:
        raise ConfigError(f"cannot read {path}: {e}") from e


def parse_run_config(text: str, **overrides) -> RunConfig:
    values = {**parse_key_values(text), **{k: v for k, v in overrides.items() if v is not None}}
    try:
        return RunConfig.model_validate(values)
    except ValidationError as e:
        raise ConfigError(f"invalid run config: {e}") from e


def parse_config_file(path: Path, **overrides) -> RunConfig:
    cfg = parse_run_config(_read_text(path), **overrides)
    logger.info("loaded run config from %s", path)
    return cfg


def parse_grid_file(path: Path) -> SweepGrid:
    try:
        return SweepGrid.model_validate(parse_key_values(_read_text(path)))
    except ValidationError as e:
        raise ConfigError(f"invalid sweep grid {path}: {e}") from e


def dump_run_config(cfg: RunConfig, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        f.write(cfg.model_dump_json(by_alias=True, indent=2))


def load_run_config(path: Path) -> RunConfig:
    try:
        return RunConfig.model_validate_json(_read_text(path))
    except ValidationError as e:
        raise ConfigError(f"invalid config snapshot {path}: {e}") from e
