"""
Pydantic schemas for run and training configuration.

Run configuration files are flat ``key = value`` text; every key maps to a
field of ``RunConfig`` and unknown keys are rejected.
"""

import os
import re
from pathlib import Path
from typing import Dict, List, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from app.models.env import available_envs, is_sparse

# "#" opens a comment only at line start or after whitespace.
COMMENT_PATTERN = re.compile(r"(?:^|\s)#")

DENSE_INTRINSIC_WEIGHT = 0.02
SPARSE_INTRINSIC_WEIGHT = 0.2


class ConfigError(ValueError):
    """Configuration text or values are invalid."""

    def __init__(self, problems: List[str]):
        self.problems = problems
        super().__init__("Invalid configuration:\n" + "\n".join(f"  - {p}" for p in problems))


class TrainConfig(BaseModel):
    """Hyperparameters of one TD3 training run."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    total_steps: int = Field(..., ge=1, description="Environment steps to train for")
    batch_size: int = Field(256, ge=1)
    discount: float = Field(0.99, ge=0.0, lt=1.0, description="Discount factor gamma")
    target_rate: float = Field(0.005, gt=0.0, le=1.0, description="Target network update rate rho")
    policy_noise: float = Field(0.2, ge=0.0)
    noise_clip: float = Field(0.5, ge=0.0)
    policy_delay: int = Field(2, ge=1)
    exploration_noise: float = Field(0.1, ge=0.0)
    replay_capacity: int = Field(200_000, ge=1)
    intrinsic_weight: float = Field(0.02, ge=0.0, description="Weight w of the intrinsic reward")
    extrinsic_reward: bool = Field(True, description="Include the environment reward in training")
    policy_input: Literal["augmented", "source", "added"] = Field(
        "augmented", description="Policy and critic input: s^c, the source state s, or only F(s)"
    )
    eval_episodes: int = Field(10, ge=1)
    eval_freq: int = Field(5000, ge=1)
    start_steps: int = Field(1000, ge=0, description="Uniform-random warm-up steps")
    actor_lr: float = Field(3e-4, gt=0.0)
    critic_lr: float = Field(3e-4, gt=0.0)
    hidden_sizes: List[int] = Field(default_factory=lambda: [256, 256])
    horizon: int = Field(300, ge=1)
    seed: int = 0

    @field_validator("hidden_sizes")
    @classmethod
    def validate_hidden_sizes(cls, v):
        if not v or any(n < 1 for n in v):
            raise ValueError("hidden sizes must be a non-empty list of positive integers")
        return v


class RunConfig(BaseModel):
    """Full LESR run configuration (one flat key per field)."""

    model_config = ConfigDict(
        extra="forbid",
        json_schema_extra={
            "example": {
                "env_id": "pointmaze-dense",
                "generator": "mock",
                "sample_count": 3,
                "iteration_count": 2,
                "small_steps": 5000,
                "final_steps": 10000,
            }
        },
    )

    env_id: str = "pointmaze-dense"
    generator: Literal["mock", "remote"] = "mock"
    endpoint: Optional[str] = None
    model: Optional[str] = None
    api_key_env: str = "LESR_API_KEY"
    temperature: float = Field(1.0, ge=0.0, le=2.0)
    retry_budget: int = Field(3, ge=0)
    request_timeout: float = Field(60.0, gt=0.0)

    sample_count: int = Field(3, ge=1, description="Candidates per iteration (K)")
    iteration_count: int = Field(2, ge=1, description="Iterations (I)")
    small_steps: int = Field(20_000, ge=1, description="Training steps per candidate (N_small)")
    final_steps: int = Field(50_000, ge=1, description="Training steps for the best candidate (N)")
    intrinsic_weight: Optional[float] = Field(None, ge=0.0, description="w; defaults per reward type")
    tau: float = Field(0.9, ge=0.0, le=1.0, description="Lipschitz soft-update rate")
    discount: float = Field(0.99, ge=0.0, lt=1.0)
    feedback_variant: Literal["reward", "discounted", "spectral"] = "reward"
    ablation: Literal[
        "none", "no_intrinsic", "no_repr", "no_lipschitz", "no_extrinsic", "direct_intrinsic", "drop_source"
    ] = "none"
    seed: int = 0
    output_dir: str = "runs/lesr"
    workers: int = Field(0, ge=0, description="Parallel trainings; 0 means min(K, cores)")

    batch_size: int = Field(256, ge=1)
    target_rate: float = Field(0.005, gt=0.0, le=1.0)
    policy_noise: float = Field(0.2, ge=0.0)
    noise_clip: float = Field(0.5, ge=0.0)
    policy_delay: int = Field(2, ge=1)
    exploration_noise: float = Field(0.1, ge=0.0)
    replay_capacity: int = Field(200_000, ge=1)
    start_steps: int = Field(1000, ge=0)
    eval_freq: int = Field(5000, ge=1)
    eval_episodes: int = Field(10, ge=1)
    actor_lr: float = Field(3e-4, gt=0.0)
    critic_lr: float = Field(3e-4, gt=0.0)
    hidden_width: int = Field(256, ge=1)
    hidden_layers: int = Field(2, ge=1)
    max_outputs: int = Field(16, ge=1)
    exact_pair_limit: int = Field(2000, ge=2)
    horizon: int = Field(300, ge=1)

    @field_validator("env_id")
    @classmethod
    def validate_env_id(cls, v):
        if v not in available_envs():
            raise ValueError(f"unknown environment {v!r}; available: {available_envs()}")
        return v

    @model_validator(mode="after")
    def resolve_defaults(self):
        if self.intrinsic_weight is None:
            self.intrinsic_weight = (
                SPARSE_INTRINSIC_WEIGHT if is_sparse(self.env_id) else DENSE_INTRINSIC_WEIGHT
            )
        if self.generator == "remote" and not (self.endpoint and self.model):
            raise ValueError("remote generator requires both 'endpoint' and 'model'")
        return self

    @property
    def effective_intrinsic_weight(self) -> float:
        return 0.0 if self.ablation == "no_intrinsic" else self.intrinsic_weight

    def worker_count(self) -> int:
        if self.workers:
            return self.workers
        return max(1, min(self.sample_count, os.cpu_count() or 1))

    @property
    def policy_input(self) -> str:
        if self.ablation == "no_repr":
            return "source"
        if self.ablation == "drop_source":
            return "added"
        return "augmented"

    def train_config(self, total_steps: int, seed: Optional[int] = None, final: bool = False) -> TrainConfig:
        """
        Derive the TD3 configuration for a run of ``total_steps`` steps.

        ``final`` marks the retraining of the best candidate, where the
        ``direct_intrinsic`` ablation drops the extrinsic reward.
        """
        extrinsic = self.ablation != "no_extrinsic" and not (final and self.ablation == "direct_intrinsic")
        return TrainConfig(
            total_steps=total_steps,
            batch_size=self.batch_size,
            discount=self.discount,
            target_rate=self.target_rate,
            policy_noise=self.policy_noise,
            noise_clip=self.noise_clip,
            policy_delay=self.policy_delay,
            exploration_noise=self.exploration_noise,
            replay_capacity=self.replay_capacity,
            intrinsic_weight=self.effective_intrinsic_weight,
            extrinsic_reward=extrinsic,
            policy_input=self.policy_input,
            eval_episodes=self.eval_episodes,
            eval_freq=self.eval_freq,
            start_steps=self.start_steps,
            actor_lr=self.actor_lr,
            critic_lr=self.critic_lr,
            hidden_sizes=[self.hidden_width] * self.hidden_layers,
            horizon=self.horizon,
            seed=self.seed if seed is None else seed,
        )


def parse_config_text(text: str) -> Dict[str, str]:
    """
    Split flat ``key = value`` text into a dict of raw strings.

    Raises:
        ConfigError: On malformed or duplicated lines
    """
    values: Dict[str, str] = {}
    problems = []
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = COMMENT_PATTERN.split(raw, 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            problems.append(f"line {line_no}: expected 'key = value', got {raw.strip()!r}")
            continue
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            problems.append(f"line {line_no}: missing key")
        elif key in values:
            problems.append(f"line {line_no}: duplicate key {key!r}")
        else:
            values[key] = value
    if problems:
        raise ConfigError(problems)
    return values


def validate_config(values: Dict[str, Union[str, int, float, None]]) -> RunConfig:
    """
    Validate raw values into a RunConfig.

    Raises:
        ConfigError: Listing every offending key path
    """
    try:
        return RunConfig.model_validate(values)
    except ValidationError as e:
        problems = []
        for error in e.errors():
            path = ".".join(str(part) for part in error["loc"]) or "<config>"
            problems.append(f"{path}: {error['msg']}")
        raise ConfigError(problems) from None


def load_config(path: Union[str, Path], overrides: Optional[Dict[str, Union[str, int, None]]] = None,
                defaults: Optional[Dict[str, Union[str, float, None]]] = None) -> RunConfig:
    """
    Read and validate a flat config file.

    ``defaults`` fill keys the file leaves out; ``overrides`` replace file values.
    None values in either mapping are ignored.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError([f"cannot read {path}: {e.strerror}"]) from None
    values: Dict[str, Union[str, int, float, None]] = {
        key: value for key, value in (defaults or {}).items() if value is not None
    }
    values.update(parse_config_text(text))
    for key, value in (overrides or {}).items():
        if value is not None:
            values[key] = value
    return validate_config(values)


def format_config(config: RunConfig) -> str:
    """Render a RunConfig back into flat ``key = value`` text."""
    lines = []
    for key, value in config.model_dump().items():
        if value is None:
            continue
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"
