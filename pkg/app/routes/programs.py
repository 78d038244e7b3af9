"""
Program endpoints: validate and evaluate state representation and reward programs.
"""

import logging

from fastapi import APIRouter, HTTPException, status

from app.models.dsl import (
    DslError,
    eval_repr,
    eval_reward,
    format_program,
    parse_repr_program,
    parse_reward_program,
    state_refs,
)
from app.models.llm import ExtractionError, load_program_pair
from app.schemas.request import (
    EvaluateProgramRequest,
    EvaluateProgramResponse,
    ProgramSummary,
    ValidateProgramRequest,
    ValidateProgramResponse,
)

logger = logging.getLogger(__name__)

router = APIRouter()


def _summary(program) -> ProgramSummary:
    outputs = getattr(program, "outputs", None) or (program.output,)
    indices = sorted({ref.index for expr in outputs for ref in state_refs(expr)})
    return ProgramSummary(
        canonical_text=format_program(program),
        input_dim=program.input_dim,
        output_count=len(outputs),
        state_indices=indices,
    )


def _bad_request(e: Exception) -> HTTPException:
    detail = {"message": str(e)}
    if isinstance(e, DslError) and e.line is not None:
        detail.update(line=e.line, column=e.column)
    return HTTPException(status_code=status.HTTP_400_BAD_REQUEST, detail=detail)


@router.post(
    "/programs/validate",
    response_model=ValidateProgramResponse,
    summary="Validate a program",
    responses={400: {"description": "Syntax or validation error with line and column"}},
)
async def validate_program(data: ValidateProgramRequest):
    """
    Parse and validate a program against a state dimension.

    A reward program alone is validated against an augmented state of
    ``state_dim + 1`` dimensions.
    """
    try:
        if data.kind == "repr":
            return ValidateProgramResponse(repr=_summary(parse_repr_program(data.text, data.state_dim, data.max_outputs)))
        if data.kind == "reward":
            program = parse_reward_program(data.text, data.state_dim + 1, data.state_dim)
            return ValidateProgramResponse(reward=_summary(program))
        repr_program, reward_program = load_program_pair(data.text, data.state_dim, data.max_outputs)
        return ValidateProgramResponse(repr=_summary(repr_program), reward=_summary(reward_program))
    except (DslError, ExtractionError) as e:
        logger.info(f"Program rejected: {e}")
        raise _bad_request(e)


@router.post("/programs/evaluate", response_model=EvaluateProgramResponse, summary="Evaluate F and G on a state")
async def evaluate_program(data: EvaluateProgramRequest):
    try:
        repr_program = parse_repr_program(data.repr_text, len(data.state))
        added = eval_repr(repr_program, data.state)
        augmented = [*data.state, *added.tolist()]
        intrinsic = None
        if data.reward_text is not None:
            reward_program = parse_reward_program(data.reward_text, len(augmented), len(data.state))
            intrinsic = eval_reward(reward_program, augmented)
        return EvaluateProgramResponse(added=added.tolist(), augmented=augmented, intrinsic_reward=intrinsic)
    except ValueError as e:
        raise _bad_request(e)
