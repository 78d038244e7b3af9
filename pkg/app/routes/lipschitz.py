"""
Lipschitz analysis endpoints.
"""

import io
import logging

import pandas as pd
from fastapi import APIRouter, File, HTTPException, UploadFile, status

from app.models.lipschitz import LipschitzError, Trajectory, accumulate_feedback, horizon_value_bound
from app.schemas.request import BoundRequest, BoundResponse, LipschitzRequest, LipschitzResponse, LipschitzRow
from app.utils.io import ArtifactError, lipschitz_frame, trajectories_from_frame

logger = logging.getLogger(__name__)

router = APIRouter()


def _response(array) -> LipschitzResponse:
    rows = [LipschitzRow(**row) for row in lipschitz_frame(array).to_dict(orient="records")]
    return LipschitzResponse(rows=rows, trajectories_seen=array.trajectories_seen, mean=array.mean)


@router.post("/lipschitz/analyze", response_model=LipschitzResponse, summary="Per-dimension Lipschitz array")
async def analyze(data: LipschitzRequest):
    try:
        trajectory = Trajectory(augmented_states=data.states, rewards=data.rewards)
        array = accumulate_feedback([trajectory], variant=data.variant, gamma=data.discount)
    except LipschitzError as e:
        raise HTTPException(status_code=status.HTTP_400_BAD_REQUEST, detail=str(e))
    return _response(array)


@router.post("/lipschitz/analyze-csv", response_model=LipschitzResponse, summary="Analyze a trajectory CSV")
async def analyze_csv(file: UploadFile = File(...), variant: str = "reward", discount: float = 0.99):
    """Soft-updated Lipschitz array over every episode of an uploaded ``trajectories.csv``."""
    content = await file.read()
    try:
        frame = pd.read_csv(io.BytesIO(content), dtype=str, skipinitialspace=True)
        array = accumulate_feedback(trajectories_from_frame(frame), variant=variant, gamma=discount)
    except (ArtifactError, LipschitzError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise HTTPException(status_code=status.HTTP_400_BAD_REQUEST, detail=str(e))
    if array is None:
        raise HTTPException(status_code=status.HTTP_400_BAD_REQUEST, detail="no episode has two or more steps")
    return _response(array)


@router.post("/lipschitz/bound", response_model=BoundResponse, summary="Value-function Lipschitz bound")
async def bound(data: BoundRequest):
    try:
        value = horizon_value_bound(data.k1, data.k2, data.discount, data.horizon)
    except LipschitzError as e:
        raise HTTPException(status_code=status.HTTP_400_BAD_REQUEST, detail=str(e))
    return BoundResponse(bound=value)
