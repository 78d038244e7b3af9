#!/usr/bin/env python3
"""
Tests for the search loop with the mock generator: iteration records,
disqualification, best-candidate selection, the final stage and resume.
"""

import itertools
from pathlib import Path

import numpy as np
import pytest

from app.models import orchestrator
from app.models.llm import (
    MOCK_POOL,
    CandidateGenerator,
    GeneratorUnavailableError,
    MockGenerator,
    NoValidCandidatesError,
    RemoteGenerator,
)
from app.models.orchestrator import (
    MissingApiKeyError,
    build_generation_prompt,
    build_generator,
    run_iteration,
    run_lesr,
    select_best,
)
from app.schemas.config import load_config
from app.schemas.records import CandidateRecord, IterationRecord
from app.utils import io


def candidate(candidate_id, iteration, score, lipschitz=None, disqualified=False):
    return CandidateRecord(candidate_id=candidate_id, iteration=iteration, provenance="test",
                           repr_text="out: s[0]", reward_text="out: s[4]", augmented_dim=5,
                           score=None if disqualified else score, lipschitz=lipschitz,
                           disqualified=disqualified)


def iteration(index, *candidates):
    return IterationRecord(iteration=index, prompt_template="initial", prompt="p", candidates=list(candidates))


def without_output_dir(manifest):
    view = manifest.deterministic_view()
    view["config"].pop("output_dir")
    return view


class UnavailableGenerator(CandidateGenerator):
    mode = "unavailable"

    def generate(self, prompt):
        raise GeneratorUnavailableError("endpoint down")

    def analyze(self, prompt):
        raise GeneratorUnavailableError("endpoint down")


# ---------------------------------------------------------------------------
# Selection
# ---------------------------------------------------------------------------

def test_select_best_prefers_highest_score():
    records = [iteration(0, candidate(0, 0, -30.0), candidate(1, 0, -10.0)),
               iteration(1, candidate(2, 1, -20.0))]
    assert select_best(records).candidate_id == 1


def test_select_best_tie_breaks():
    by_lipschitz = [iteration(0, candidate(0, 0, 1.0, [2.0, 2.0]), candidate(1, 0, 1.0, [1.0, 1.0]))]
    assert select_best(by_lipschitz).candidate_id == 1

    by_iteration = [iteration(0, candidate(3, 0, 1.0, [1.0])), iteration(1, candidate(1, 1, 1.0, [1.0]))]
    assert select_best(by_iteration).candidate_id == 3

    by_id = [iteration(0, candidate(5, 0, 1.0), candidate(4, 0, 1.0))]
    assert select_best(by_id).candidate_id == 4


def test_select_best_skips_disqualified():
    records = [iteration(0, candidate(0, 0, 100.0, disqualified=True), candidate(1, 0, -5.0))]
    assert select_best(records).candidate_id == 1
    with pytest.raises(NoValidCandidatesError):
        select_best([iteration(0, candidate(0, 0, 0.0, disqualified=True))])


def test_select_best_ignores_record_order():
    pool = [
        candidate(0, 0, 1.0, [2.0]),
        candidate(1, 0, 3.0, [4.0, 4.0]),
        candidate(2, 0, -1.0),
        candidate(3, 1, 3.0, [1.0, 7.0]),
        candidate(4, 1, 3.0, [4.0, 4.0]),
        candidate(5, 1, 9.0, disqualified=True),
    ]
    expected = select_best([iteration(0, *pool[:3]), iteration(1, *pool[3:])]).candidate_id
    assert expected == 1
    for order in itertools.permutations(pool):
        grouped = [iteration(i, *[c for c in order if c.iteration == i]) for i in (1, 0)]
        assert select_best(grouped).candidate_id == expected


def test_mean_lipschitz_falls_back_to_critic_bound():
    record = candidate(0, 0, 1.0)
    record.critic_bound = 4.0
    assert record.mean_lipschitz == 4.0
    assert candidate(0, 0, 1.0, [1.0, 3.0]).mean_lipschitz == 2.0


# ---------------------------------------------------------------------------
# Generators
# ---------------------------------------------------------------------------

def test_build_generator(tiny_run_config):
    assert isinstance(build_generator(tiny_run_config()), MockGenerator)
    remote = tiny_run_config(generator="remote", endpoint="https://llm.test/v1", model="m")
    with pytest.raises(MissingApiKeyError):
        build_generator(remote, environ={})
    generator = build_generator(remote, environ={"LESR_API_KEY": "k"})
    assert isinstance(generator, RemoteGenerator)
    generator.close()


# ---------------------------------------------------------------------------
# Iterations
# ---------------------------------------------------------------------------

def test_iteration_with_disqualified_candidate(tiny_run_config, tmp_path):
    cfg = tiny_run_config(sample_count=2)
    generator = MockGenerator(seed=0, pool=[MOCK_POOL[6], MOCK_POOL[0]])
    prompt = build_generation_prompt(0, [], cfg)
    result = run_iteration(0, prompt, cfg, generator, tmp_path)
    record = result.record
    assert record.status == "completed"
    assert sorted(c.disqualified for c in record.candidates) == [False, True]
    bad = next(c for c in record.candidates if c.disqualified)
    assert "non-finite" in bad.reason
    assert "Disqualified: non-finite" in record.feedback_prompt
    assert record.analysis.startswith("Analysis of the 2 trained candidates")
    good = record.valid_candidates()[0]
    assert len(good.lipschitz) == 5
    assert (tmp_path / "iter_0" / f"candidate_{good.candidate_id}" / "lipschitz.csv").exists()


def test_iteration_with_only_disqualified_candidates_fails(tiny_run_config, tmp_path):
    cfg = tiny_run_config(sample_count=2)
    generator = MockGenerator(seed=0, pool=[MOCK_POOL[6]])
    result = run_iteration(0, build_generation_prompt(0, [], cfg), cfg, generator, tmp_path)
    assert result.record.status == "failed"
    assert result.record.error == "all candidates were disqualified"
    assert len(result.record.candidates) == 2


def test_iteration_with_no_parsable_response_fails(tiny_run_config, tmp_path):
    cfg = tiny_run_config(sample_count=2, retry_budget=1)
    generator = MockGenerator(seed=0, pool=[MOCK_POOL[5]])
    result = run_iteration(0, build_generation_prompt(0, [], cfg), cfg, generator, tmp_path)
    assert result.record.status == "failed"
    assert result.record.generator_calls == 4
    assert generator.calls == 4


def test_spectral_feedback_variant(tiny_run_config, tmp_path):
    cfg = tiny_run_config(sample_count=1, feedback_variant="spectral")
    generator = MockGenerator(seed=0, pool=[MOCK_POOL[0]])
    record = run_iteration(0, build_generation_prompt(0, [], cfg), cfg, generator, tmp_path).record
    only = record.candidates[0]
    assert only.lipschitz is None
    assert only.critic_bound > 0
    assert "Critic spectral-norm Lipschitz bound" in record.feedback_prompt


def test_no_lipschitz_ablation_hides_feedback(tiny_run_config, tmp_path):
    cfg = tiny_run_config(sample_count=1, ablation="no_lipschitz")
    generator = MockGenerator(seed=0, pool=[MOCK_POOL[0]])
    record = run_iteration(0, build_generation_prompt(0, [], cfg), cfg, generator, tmp_path).record
    assert record.candidates[0].lipschitz is not None
    assert "Most importantly" not in record.feedback_prompt
    assert "Lipschitz constant of every dim" not in record.feedback_prompt


def test_distance_feature_has_unit_lipschitz_value_on_dense_task(tiny_run_config, tmp_path):
    cfg = tiny_run_config(sample_count=1)
    generator = MockGenerator(seed=0, pool=[MOCK_POOL[0]])
    record = run_iteration(0, build_generation_prompt(0, [], cfg), cfg, generator, tmp_path).record
    only = record.candidates[0]
    assert only.repr_text == "out: sqrt((s[0] - s[2]) ^ 2 + (s[1] - s[3]) ^ 2)"
    assert only.lipschitz[4] == pytest.approx(1.0, abs=1e-9)


# ---------------------------------------------------------------------------
# Full runs
# ---------------------------------------------------------------------------

def test_mock_run_end_to_end(tiny_run_config):
    cfg = tiny_run_config()
    manifest = run_lesr(cfg)
    run_dir = Path(cfg.output_dir)

    assert manifest.status == "completed"
    assert len(manifest.iterations) == 2
    ids = [c.candidate_id for record in manifest.iterations for c in record.candidates]
    assert ids == list(range(len(ids)))
    assert manifest.iterations[0].prompt_template == "initial"
    assert manifest.iterations[1].prompt_template == "subsequent"
    assert "---------- Iteration 0 ----------" in manifest.iterations[1].prompt
    assert manifest.best_candidate_id == select_best(manifest.iterations).candidate_id

    final = manifest.final
    assert final.seed == cfg.seed + 10_000
    assert [p.step for p in final.curve] == [50, 100, 150]
    best = manifest.find_candidate(manifest.best_candidate_id)
    policy = io.read_policy(run_dir / "final" / "policy.bin")
    assert policy.input_dim == best.augmented_dim

    for name in ("manifest.json", "run.log", "iter_0/prompt.txt", "iter_0/feedback_prompt.txt",
                 "iter_1/analysis.txt", "final/program.dsl", "final/eval.csv", "final/trajectories.csv"):
        assert (run_dir / name).exists(), name
    assert io.read_manifest(run_dir / "manifest.json").deterministic_view() == manifest.deterministic_view()
    assert load_config(run_dir / "config.conf") == cfg


def test_runs_are_reproducible(tiny_run_config, tmp_path):
    first = run_lesr(tiny_run_config(output_dir=str(tmp_path / "a")))
    second = run_lesr(tiny_run_config(output_dir=str(tmp_path / "b")))
    assert without_output_dir(first) == without_output_dir(second)


def test_resume_continues_after_last_iteration(tiny_run_config, tmp_path):
    reference = run_lesr(tiny_run_config(output_dir=str(tmp_path / "reference")))

    cfg = tiny_run_config(output_dir=str(tmp_path / "interrupted"))
    full = run_lesr(cfg)
    manifest_path = Path(cfg.output_dir) / "manifest.json"
    interrupted = io.read_manifest(manifest_path)
    interrupted.iterations = full.iterations[:1]
    interrupted.status = "failed"
    interrupted.best_candidate_id = None
    interrupted.final = None
    io.write_manifest(manifest_path, interrupted)

    resumed = run_lesr(cfg, resume=True)
    assert resumed.status == "completed"
    assert without_output_dir(resumed) == without_output_dir(reference)


def test_run_without_valid_candidates_fails(tiny_run_config):
    cfg = tiny_run_config(iteration_count=1, sample_count=1)
    with pytest.raises(NoValidCandidatesError):
        run_lesr(cfg, generator=MockGenerator(seed=0, pool=[MOCK_POOL[6]]))
    manifest = io.read_manifest(Path(cfg.output_dir) / "manifest.json")
    assert manifest.status == "failed"
    assert manifest.iterations[0].status == "failed"


def test_unavailable_generator_aborts_run(tiny_run_config):
    cfg = tiny_run_config()
    with pytest.raises(GeneratorUnavailableError):
        run_lesr(cfg, generator=UnavailableGenerator())
    manifest = io.read_manifest(Path(cfg.output_dir) / "manifest.json")
    assert manifest.status == "aborted"
    assert "endpoint down" in manifest.error
    assert manifest.finished_at is not None


def test_later_prompts_carry_every_earlier_candidate_program(tiny_run_config):
    manifest = run_lesr(tiny_run_config(sample_count=2, iteration_count=3))
    for later in manifest.iterations[1:]:
        for earlier in manifest.iterations[:later.iteration]:
            assert f"---------- Iteration {earlier.iteration} ----------" in later.prompt
            for c in earlier.candidates:
                assert f"repr:\n{c.repr_text}\nreward:\n{c.reward_text}" in later.prompt


def recording_train(monkeypatch):
    calls = []
    original = orchestrator.train

    def record(env_id, repr_program, reward_program, config, **kwargs):
        result = original(env_id, repr_program, reward_program, config, **kwargs)
        calls.append((config, result.initial_actor))
        return result

    monkeypatch.setattr(orchestrator, "train", record)
    return calls


def test_final_stage_starts_from_fresh_networks(tiny_run_config, monkeypatch):
    calls = recording_train(monkeypatch)
    cfg = tiny_run_config()
    run_lesr(cfg)
    assert len(calls) == cfg.sample_count * cfg.iteration_count + 1
    final_config, final_actor = calls[-1]
    assert final_config.seed == cfg.seed + 10_000
    assert final_config.total_steps == cfg.final_steps
    for config, actor in calls[:-1]:
        assert config.seed != final_config.seed
        assert not np.array_equal(actor.weights[0], final_actor.weights[0])


def test_direct_intrinsic_ablation_drops_extrinsic_reward_in_final_stage_only(tiny_run_config, monkeypatch):
    calls = recording_train(monkeypatch)
    manifest = run_lesr(tiny_run_config(ablation="direct_intrinsic"))
    assert manifest.status == "completed"
    assert all(config.extrinsic_reward for config, _ in calls[:-1])
    assert calls[-1][0].extrinsic_reward is False


def test_drop_source_ablation_feeds_only_added_dimensions(tiny_run_config):
    cfg = tiny_run_config(ablation="drop_source")
    manifest = run_lesr(cfg)
    best = manifest.find_candidate(manifest.best_candidate_id)
    policy = io.read_policy(Path(cfg.output_dir) / "final" / "policy.bin")
    assert policy.input_dim == best.augmented_dim - 4
