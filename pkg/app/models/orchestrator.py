"""
LESR main loop.

Each iteration samples K candidate (F, G) pairs, trains one TD3 agent per
candidate for ``small_steps`` steps, scores it by its evaluation return and
Lipschitz feedback, and asks the generator to analyze the results. After
the last iteration the best candidate is retrained from scratch for
``final_steps`` steps. The generator is never consulted in that final stage.
"""

import logging
import os
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

from joblib import Parallel, delayed

from app.models.dsl import ReprProgram, RewardProgram, format_program, parse_repr_program, parse_reward_program
from app.models.env import make_env
from app.models.lipschitz import LipschitzArray, Trajectory, accumulate_feedback
from app.models.llm import (
    Candidate,
    CandidateGenerator,
    GeneratorUnavailableError,
    MockGenerator,
    NoValidCandidatesError,
    RemoteGenerator,
    format_program_file,
    generate_candidates,
)
from app.models.prompts import (
    LIPSCHITZ_ITEM,
    SPECTRAL_ITEM,
    CandidateFeedback,
    PromptBundle,
    build_prompt,
    format_candidate_source,
    format_history_entry,
    format_iteration_results,
)
from app.models.td3 import CurvePoint, train
from app.schemas.config import RunConfig, format_config
from app.schemas.records import (
    CandidateRecord,
    CurvePointRecord,
    FinalRecord,
    IterationRecord,
    RejectionRecord,
    RunManifest,
)
from app.utils import io
from app.utils.logging import attach_run_log, detach_run_log

logger = logging.getLogger(__name__)

FINAL_SEED_OFFSET = 10_000
MANIFEST_NAME = "manifest.json"
CONFIG_NAME = "config.conf"


class MissingApiKeyError(ValueError):
    """Remote generation was requested but the API key variable is unset."""


@dataclass
class CandidateOutcome:
    """Value returned by one training worker."""

    candidate_id: int
    score: Optional[float]
    lipschitz: Optional[LipschitzArray]
    critic_bound: Optional[float]
    disqualified: bool
    reason: Optional[str]
    curve: List[CurvePoint] = field(default_factory=list)
    trajectories: List[Trajectory] = field(default_factory=list)
    duration_seconds: float = 0.0


@dataclass
class IterationResult:
    record: IterationRecord
    candidates: List[Candidate]
    outcomes: List[CandidateOutcome]


def build_generator(cfg: RunConfig, environ=None) -> CandidateGenerator:
    """
    Construct the generator named by the config.

    Raises:
        MissingApiKeyError: Remote mode without the API key environment variable
    """
    if cfg.generator == "mock":
        return MockGenerator(seed=cfg.seed)
    environ = os.environ if environ is None else environ
    api_key = environ.get(cfg.api_key_env)
    if not api_key:
        raise MissingApiKeyError(
            f"generator = remote needs an API key: set the {cfg.api_key_env} environment variable "
            f"(or change api_key_env in the config)"
        )
    return RemoteGenerator(
        endpoint=cfg.endpoint,
        model=cfg.model,
        api_key=api_key,
        temperature=cfg.temperature,
        timeout=cfg.request_timeout,
        retry_budget=cfg.retry_budget,
    )


def _score_name(env_id: str) -> str:
    return "success rate" if make_env(env_id).sparse else "accumulated reward"


def train_candidate(candidate: Candidate, cfg: RunConfig) -> CandidateOutcome:
    """
    Train and score one candidate. Runs inside a worker; everything it
    needs arrives by value and the outcome is returned by value.
    """
    started = time.perf_counter()
    seed = cfg.seed + candidate.candidate_id
    result = train(cfg.env_id, candidate.repr, candidate.reward, cfg.train_config(cfg.small_steps, seed=seed))
    if result.disqualified:
        return CandidateOutcome(
            candidate_id=candidate.candidate_id, score=None, lipschitz=None, critic_bound=None,
            disqualified=True, reason=result.reason, curve=result.curve,
            duration_seconds=time.perf_counter() - started,
        )

    lipschitz, critic_bound = None, None
    if cfg.feedback_variant == "spectral":
        critic_bound = result.critic_bound()
    else:
        lipschitz = accumulate_feedback(
            result.trajectories, variant=cfg.feedback_variant, tau=cfg.tau,
            gamma=cfg.discount, exact_pair_limit=cfg.exact_pair_limit,
        )
    return CandidateOutcome(
        candidate_id=candidate.candidate_id,
        score=result.score,
        lipschitz=lipschitz,
        critic_bound=critic_bound,
        disqualified=False,
        reason=None,
        curve=result.curve,
        trajectories=result.trajectories,
        duration_seconds=time.perf_counter() - started,
    )


def _candidate_record(candidate: Candidate, outcome: CandidateOutcome) -> CandidateRecord:
    lipschitz = outcome.lipschitz
    return CandidateRecord(
        candidate_id=candidate.candidate_id,
        iteration=candidate.iteration,
        provenance=candidate.provenance,
        repr_text=format_program(candidate.repr),
        reward_text=format_program(candidate.reward),
        augmented_dim=candidate.augmented_dim,
        score=outcome.score,
        lipschitz=lipschitz.values.tolist() if lipschitz is not None else None,
        lipschitz_normalized=lipschitz.normalized().tolist() if lipschitz is not None else None,
        lipschitz_approximate=lipschitz.approximate if lipschitz is not None else False,
        trajectories_seen=lipschitz.trajectories_seen if lipschitz is not None else 0,
        critic_bound=outcome.critic_bound,
        disqualified=outcome.disqualified,
        reason=outcome.reason,
        duration_seconds=outcome.duration_seconds,
    )


def _feedback_from_record(record: CandidateRecord) -> CandidateFeedback:
    lipschitz = None
    if record.lipschitz is not None:
        lipschitz = LipschitzArray(values=record.lipschitz, trajectories_seen=record.trajectories_seen,
                                   approximate=record.lipschitz_approximate)
    return CandidateFeedback(
        candidate_id=record.candidate_id,
        program_text=format_candidate_source(record.repr_text, record.reward_text),
        score=record.score,
        lipschitz=lipschitz,
        critic_bound=record.critic_bound,
        disqualified=record.disqualified,
        reason=record.reason,
    )


def build_feedback_prompt(records: Sequence[CandidateRecord], cfg: RunConfig) -> PromptBundle:
    """Feedback prompt listing every candidate's program, score and Lipschitz signal."""
    include_lipschitz = cfg.ablation != "no_lipschitz"
    if not include_lipschitz:
        item = ""
    elif cfg.feedback_variant == "spectral":
        item = SPECTRAL_ITEM
    else:
        item = LIPSCHITZ_ITEM
    return build_prompt("feedback", {
        "sample_count": len(records),
        "score_name": _score_name(cfg.env_id),
        "lipschitz_item": item,
        "iteration_results": format_iteration_results(
            [_feedback_from_record(r) for r in records], include_lipschitz
        ),
    })


def history_text(records: Sequence[IterationRecord], cfg: RunConfig) -> str:
    """Accumulated history of earlier iterations for the subsequent prompt."""
    include_lipschitz = cfg.ablation != "no_lipschitz"
    return "\n".join(
        format_history_entry(
            record.iteration,
            [_feedback_from_record(c) for c in record.candidates],
            record.analysis or "(no analysis)",
            include_lipschitz,
        )
        for record in records
        if record.candidates
    )


def build_generation_prompt(iteration: int, records: Sequence[IterationRecord], cfg: RunConfig) -> PromptBundle:
    """Initial prompt for the first iteration, subsequent prompt with full history afterwards."""
    env = make_env(cfg.env_id)
    variables = {
        "task_description": env.task_description,
        "total_dim": env.observation_dim,
        "detail_content": env.dimension_details,
    }
    history = history_text(records, cfg)
    if iteration == 0 or not history:
        return build_prompt("initial", variables)
    return build_prompt("subsequent", {**variables, "former_history": history})


def _persist_candidate(run_dir: Path, candidate: Candidate, outcome: CandidateOutcome) -> None:
    directory = run_dir / f"iter_{candidate.iteration}" / f"candidate_{candidate.candidate_id}"
    io.write_text(directory / "program.dsl", format_program_file(candidate.repr, candidate.reward))
    io.write_text(directory / "response.txt", candidate.raw_response)
    io.write_curve(directory / "train_curve.csv", outcome.curve)
    io.write_trajectories(directory / "trajectories.csv", outcome.trajectories)
    if outcome.lipschitz is not None:
        io.write_lipschitz(directory / "lipschitz.csv", outcome.lipschitz)


def run_iteration(iteration: int, prompt: PromptBundle, cfg: RunConfig, generator: CandidateGenerator,
                  run_dir: Path, first_id: int = 0) -> IterationResult:
    """
    Sample, train and score one batch of candidates.

    Every sampled candidate gets a record, disqualified ones included. An
    iteration whose candidates are all invalid or all disqualified is
    marked failed rather than raised.

    Raises:
        GeneratorUnavailableError: If the remote endpoint is down
    """
    iter_dir = Path(run_dir) / f"iter_{iteration}"
    io.write_text(iter_dir / "prompt.txt", prompt.render())
    env = make_env(cfg.env_id)
    logger.info(f"Iteration {iteration}: sampling {cfg.sample_count} candidates")

    calls_before = getattr(generator, "calls", None)
    record = IterationRecord(iteration=iteration, prompt_template=prompt.template_id, prompt=prompt.user)
    try:
        report = generate_candidates(
            generator, prompt, cfg.sample_count, env.observation_dim, iteration=iteration,
            first_id=first_id, retry_budget=cfg.retry_budget, max_outputs=cfg.max_outputs,
        )
    except NoValidCandidatesError as e:
        logger.warning(f"Iteration {iteration} failed: {e}")
        record.status = "failed"
        record.error = str(e)
        record.generator_calls = cfg.sample_count * (cfg.retry_budget + 1)
        return IterationResult(record=record, candidates=[], outcomes=[])

    for n, rejection in enumerate(report.rejections):
        io.write_text(iter_dir / f"rejected_{n}.txt", rejection.raw_response)
    record.rejections = [
        RejectionRecord(slot=r.slot, attempt=r.attempt, reason=r.reason, provenance=r.provenance)
        for r in report.rejections
    ]
    record.generator_calls = (
        generator.calls - calls_before if calls_before is not None
        else len(report.candidates) + len(report.rejections)
    )

    candidates = report.candidates
    outcomes = Parallel(n_jobs=min(cfg.worker_count(), len(candidates)))(
        delayed(train_candidate)(candidate, cfg) for candidate in candidates
    )
    for candidate, outcome in zip(candidates, outcomes):
        _persist_candidate(Path(run_dir), candidate, outcome)
        if outcome.disqualified:
            logger.warning(f"Candidate {candidate.candidate_id} disqualified: {outcome.reason}")
        else:
            logger.info(f"Candidate {candidate.candidate_id} trained: score {outcome.score:.4f}")
    record.candidates = [_candidate_record(c, o) for c, o in zip(candidates, outcomes)]

    if not record.valid_candidates():
        record.status = "failed"
        record.error = "all candidates were disqualified"
        logger.warning(f"Iteration {iteration} failed: all candidates were disqualified")

    feedback_prompt = build_feedback_prompt(record.candidates, cfg)
    record.feedback_prompt = feedback_prompt.user
    io.write_text(iter_dir / "feedback_prompt.txt", feedback_prompt.render())
    record.analysis = generator.analyze(feedback_prompt)
    io.write_text(iter_dir / "analysis.txt", record.analysis)
    return IterationResult(record=record, candidates=candidates, outcomes=outcomes)


def _selection_key(record: CandidateRecord) -> Tuple[float, float, int, int]:
    mean = record.mean_lipschitz
    return (-record.score, mean if mean is not None else float("inf"), record.iteration, record.candidate_id)


def select_best(records: Sequence[IterationRecord]) -> CandidateRecord:
    """
    Best non-disqualified candidate over all iterations.

    Highest score wins; ties go to the smaller mean Lipschitz value, then the
    earlier iteration, then the lower candidate id.

    Raises:
        NoValidCandidatesError: If no candidate qualifies
    """
    pool = [c for record in records for c in record.candidates if not c.disqualified and c.score is not None]
    if not pool:
        raise NoValidCandidatesError("no non-disqualified candidate in any iteration")
    return min(pool, key=_selection_key)


def programs_from_record(record: CandidateRecord, state_dim: int,
                         max_outputs: int = 16) -> Tuple[ReprProgram, RewardProgram]:
    repr_program = parse_repr_program(record.repr_text, state_dim, max_outputs=max_outputs)
    reward_program = parse_reward_program(record.reward_text, state_dim + repr_program.output_dim, state_dim)
    return repr_program, reward_program


def _now() -> datetime:
    return datetime.now(timezone.utc)


def _resume_manifest(cfg: RunConfig, manifest_path: Path) -> Optional[RunManifest]:
    if not manifest_path.exists():
        return None
    manifest = io.read_manifest(manifest_path)
    if manifest.status == "completed":
        logger.info(f"Run in {manifest_path.parent} already completed; starting over")
        return None
    if manifest.config != cfg:
        logger.warning("Resuming with the configuration stored in the manifest")
    manifest.status = "running"
    manifest.error = None
    logger.info(f"Resuming after {len(manifest.iterations)} completed iterations")
    return manifest


def final_stage(cfg: RunConfig, best: CandidateRecord, run_dir: Path) -> FinalRecord:
    """Retrain the best candidate from freshly initialized networks and persist the policy."""
    env = make_env(cfg.env_id)
    repr_program, reward_program = programs_from_record(best, env.observation_dim, cfg.max_outputs)
    seed = cfg.seed + FINAL_SEED_OFFSET
    logger.info(f"Final training of candidate {best.candidate_id} for {cfg.final_steps} steps")
    result = train(cfg.env_id, repr_program, reward_program,
                   cfg.train_config(cfg.final_steps, seed=seed, final=True))

    final_dir = Path(run_dir) / "final"
    io.write_text(final_dir / "program.dsl", format_program_file(repr_program, reward_program))
    io.write_curve(final_dir / "train_curve.csv", result.curve)
    record = FinalRecord(
        candidate_id=best.candidate_id,
        seed=seed,
        total_steps=cfg.final_steps,
        curve=[CurvePointRecord(step=p.step, score=p.score, success_rate=p.success_rate, wall_time=p.wall_time)
               for p in result.curve],
        disqualified=result.disqualified,
        reason=result.reason,
    )
    if result.disqualified:
        logger.error(f"Final training disqualified: {result.reason}")
        return record

    io.write_policy(final_dir / "policy.bin", result.actor)
    io.write_eval(final_dir / "eval.csv", result.trajectories)
    io.write_trajectories(final_dir / "trajectories.csv", result.trajectories)
    record.score = result.score
    record.critic_bound = result.critic_bound()
    logger.info(f"Final score {result.score:.4f}")
    return record


def run_lesr(cfg: RunConfig, generator: Optional[CandidateGenerator] = None,
             resume: bool = False) -> RunManifest:
    """
    Run the full loop and persist ``manifest.json`` under ``cfg.output_dir``.

    The manifest is flushed after every iteration and on any failure. With
    ``resume``, completed iterations of an unfinished run are reloaded and
    the loop continues at the next iteration.

    Raises:
        GeneratorUnavailableError: Run aborted; the manifest has status "aborted"
        NoValidCandidatesError: No candidate qualified for the final stage
    """
    run_dir = Path(cfg.output_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    manifest_path = run_dir / MANIFEST_NAME
    handler = attach_run_log(run_dir)

    manifest = _resume_manifest(cfg, manifest_path) if resume else None
    if manifest is not None:
        cfg = manifest.config
    try:
        generator = generator or build_generator(cfg)
    except MissingApiKeyError:
        detach_run_log(handler)
        raise
    if manifest is None:
        manifest = RunManifest(started_at=_now(), config=cfg)
        io.write_text(run_dir / CONFIG_NAME, format_config(cfg))
    elif isinstance(generator, MockGenerator):
        generator.skip(sum(r.generator_calls for r in manifest.iterations))
    manifest.generator = generator.describe()

    try:
        next_id = 1 + max(
            (c.candidate_id for r in manifest.iterations for c in r.candidates), default=-1
        )
        for iteration in range(len(manifest.iterations), cfg.iteration_count):
            prompt = build_generation_prompt(iteration, manifest.iterations, cfg)
            result = run_iteration(iteration, prompt, cfg, generator, run_dir, first_id=next_id)
            manifest.iterations.append(result.record)
            next_id += len(result.candidates)
            io.write_manifest(manifest_path, manifest)

        best = select_best(manifest.iterations)
        manifest.best_candidate_id = best.candidate_id
        logger.info(f"Best candidate {best.candidate_id} (iteration {best.iteration}, score {best.score:.4f})")
        io.write_manifest(manifest_path, manifest)

        manifest.final = final_stage(cfg, best, run_dir)
        manifest.status = "failed" if manifest.final.disqualified else "completed"
        if manifest.final.disqualified:
            manifest.error = manifest.final.reason
    except GeneratorUnavailableError as e:
        logger.error(f"Run aborted: {e}", exc_info=True)
        manifest.status = "aborted"
        manifest.error = str(e)
        raise
    except Exception as e:
        logger.error(f"Run failed: {e}", exc_info=True)
        manifest.status = "failed"
        manifest.error = str(e)
        raise
    finally:
        manifest.finished_at = _now()
        io.write_manifest(manifest_path, manifest)
        detach_run_log(handler)
    return manifest
