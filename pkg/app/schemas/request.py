"""
Pydantic schemas for the program and Lipschitz endpoints.
"""

from typing import List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class ValidateProgramRequest(BaseModel):
    """Schema for program validation input"""
    text: str = Field(..., description="Program text (a pair uses repr:/reward: sections)")
    state_dim: int = Field(..., ge=1, description="Source state dimension |S|")
    kind: Literal["repr", "reward", "pair"] = Field("pair", description="What the text holds")
    max_outputs: int = Field(16, ge=1)

    model_config = ConfigDict(
        json_schema_extra={
            "example": {
                "text": "repr:\nout: sqrt((s[0] - s[2])^2 + (s[1] - s[3])^2)\nreward:\nout: -s[4]",
                "state_dim": 4,
                "kind": "pair",
            }
        }
    )


class ProgramSummary(BaseModel):
    canonical_text: str
    input_dim: int
    output_count: int
    state_indices: List[int]


class ValidateProgramResponse(BaseModel):
    """Schema for program validation result"""
    valid: bool = True
    repr: Optional[ProgramSummary] = None
    reward: Optional[ProgramSummary] = None
    status: str = Field(default="success")


class EvaluateProgramRequest(BaseModel):
    """Schema for program evaluation input"""
    repr_text: str = Field(..., description="State representation program")
    reward_text: Optional[str] = Field(None, description="Optional intrinsic reward program")
    state: List[float] = Field(..., min_length=1, description="Source state s")

    model_config = ConfigDict(
        json_schema_extra={
            "example": {
                "repr_text": "out: sqrt((s[0] - s[2])^2 + (s[1] - s[3])^2)",
                "reward_text": "out: -s[4]",
                "state": [0.0, 0.0, 3.0, 4.0],
            }
        }
    )


class EvaluateProgramResponse(BaseModel):
    added: List[float] = Field(..., description="F(s)")
    augmented: List[float] = Field(..., description="s^c = (s, F(s))")
    intrinsic_reward: Optional[float] = Field(None, description="G(s^c)")
    status: str = Field(default="success")


class LipschitzRequest(BaseModel):
    """Schema for Lipschitz analysis of one trajectory"""
    states: List[List[float]] = Field(..., min_length=2, description="Augmented states, one row per step")
    rewards: List[float] = Field(..., min_length=2, description="Extrinsic reward per step")
    variant: Literal["reward", "discounted"] = "reward"
    discount: float = Field(0.99, ge=0.0, lt=1.0)

    @field_validator("states")
    @classmethod
    def validate_rectangular(cls, v):
        widths = {len(row) for row in v}
        if len(widths) != 1 or 0 in widths:
            raise ValueError("state rows must be non-empty and share one width")
        return v

    @model_validator(mode="after")
    def validate_lengths(self):
        if len(self.states) != len(self.rewards):
            raise ValueError(f"{len(self.states)} states but {len(self.rewards)} rewards")
        return self

    model_config = ConfigDict(
        json_schema_extra={
            "example": {
                "states": [[0.0], [1.0], [3.0]],
                "rewards": [0.0, 2.0, 3.0],
                "variant": "reward",
            }
        }
    )


class LipschitzRow(BaseModel):
    dimension: int
    value: float
    normalized: float
    flag: Literal["exact", "approximate"]


class LipschitzResponse(BaseModel):
    """Schema for Lipschitz analysis result"""
    rows: List[LipschitzRow]
    trajectories_seen: int
    mean: float
    status: str = Field(default="success")


class BoundRequest(BaseModel):
    k1: float = Field(..., ge=0.0, description="Reward Lipschitz constant")
    k2: float = Field(..., ge=0.0, description="Dynamics Lipschitz constant")
    discount: float = Field(..., ge=0.0, lt=1.0)
    horizon: int = Field(..., ge=1)


class BoundResponse(BaseModel):
    bound: float
    status: str = Field(default="success")
