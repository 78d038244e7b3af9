"""
Pydantic records persisted in the run directory (``manifest.json``).
"""

from datetime import datetime
from typing import Any, Dict, List, Literal, Optional

from pydantic import BaseModel, Field

from app.schemas.config import RunConfig

SELECTION_RULE = "argmax score; ties by smaller mean Lipschitz value, then earlier iteration, then lower candidate id"

WALL_CLOCK_FIELDS = {"started_at", "finished_at", "wall_time", "duration_seconds"}


class CurvePointRecord(BaseModel):
    step: int
    score: float
    success_rate: float = 0.0
    wall_time: float


class CandidateRecord(BaseModel):
    """Evaluation record of one sampled candidate, kept even when disqualified."""

    candidate_id: int
    iteration: int
    provenance: str
    repr_text: str
    reward_text: str
    augmented_dim: int
    score: Optional[float] = None
    lipschitz: Optional[List[float]] = None
    lipschitz_normalized: Optional[List[float]] = None
    lipschitz_approximate: bool = False
    trajectories_seen: int = 0
    critic_bound: Optional[float] = None
    disqualified: bool = False
    reason: Optional[str] = None
    duration_seconds: float = 0.0

    @property
    def mean_lipschitz(self) -> Optional[float]:
        """Tie-break signal: mean of the Lipschitz array, or the critic bound for the spectral variant."""
        if self.lipschitz:
            return sum(self.lipschitz) / len(self.lipschitz)
        return self.critic_bound


class RejectionRecord(BaseModel):
    slot: int
    attempt: int
    reason: str
    provenance: str


class IterationRecord(BaseModel):
    iteration: int
    status: Literal["completed", "failed"] = "completed"
    prompt_template: str
    prompt: str
    candidates: List[CandidateRecord] = Field(default_factory=list)
    rejections: List[RejectionRecord] = Field(default_factory=list)
    feedback_prompt: Optional[str] = None
    analysis: Optional[str] = None
    generator_calls: int = 0
    error: Optional[str] = None

    def valid_candidates(self) -> List[CandidateRecord]:
        return [c for c in self.candidates if not c.disqualified]


class FinalRecord(BaseModel):
    candidate_id: int
    seed: int
    total_steps: int
    score: Optional[float] = None
    curve: List[CurvePointRecord] = Field(default_factory=list)
    critic_bound: Optional[float] = None
    disqualified: bool = False
    reason: Optional[str] = None


class RunManifest(BaseModel):
    """Top-level record of an LESR run; flushed after every stage."""

    status: Literal["running", "completed", "aborted", "failed"] = "running"
    started_at: datetime
    finished_at: Optional[datetime] = None
    config: RunConfig
    generator: Dict[str, Any] = Field(default_factory=dict)
    selection_rule: str = SELECTION_RULE
    iterations: List[IterationRecord] = Field(default_factory=list)
    best_candidate_id: Optional[int] = None
    final: Optional[FinalRecord] = None
    error: Optional[str] = None

    def find_candidate(self, candidate_id: int) -> Optional[CandidateRecord]:
        for record in self.iterations:
            for candidate in record.candidates:
                if candidate.candidate_id == candidate_id:
                    return candidate
        return None

    def deterministic_view(self) -> Dict[str, Any]:
        """The manifest as a dict with wall-clock fields removed."""
        return _strip_wall_clock(self.model_dump(mode="json"))


def _strip_wall_clock(value: Any) -> Any:
    if isinstance(value, dict):
        return {k: _strip_wall_clock(v) for k, v in value.items() if k not in WALL_CLOCK_FIELDS}
    if isinstance(value, list):
        return [_strip_wall_clock(v) for v in value]
    return value
