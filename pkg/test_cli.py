#!/usr/bin/env python3
"""
Tests for the command-line verbs and their exit codes.
"""

import pandas as pd
import pytest

from app.cli import EXIT_FAILURE, EXIT_OK, EXIT_USAGE, main
from app.schemas.config import parse_config_text
from app.utils import io

TINY_CONFIG = """\
# tiny mock run
env_id = pointmaze-dense
generator = mock
sample_count = 2
iteration_count = 1
small_steps = 80
final_steps = 100
start_steps = 30
batch_size = 16
eval_freq = 50
eval_episodes = 2
horizon = 30
hidden_width = 16
replay_capacity = 1000
workers = 1
"""

DISTANCE_PROGRAM = "repr:\nout: sqrt((s[0] - s[2])^2 + (s[1] - s[3])^2)\nreward:\nout: -s[4]\n"


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "lesr.conf"
    path.write_text(TINY_CONFIG)
    return path


@pytest.fixture
def program_file(tmp_path):
    path = tmp_path / "program.dsl"
    path.write_text(DISTANCE_PROGRAM)
    return path


def write_csv(tmp_path, text):
    path = tmp_path / "trajectories.csv"
    path.write_text(text)
    return path


# ---------------------------------------------------------------------------
# Argument handling
# ---------------------------------------------------------------------------

def test_missing_verb_is_a_usage_error():
    assert main([]) == EXIT_USAGE


def test_help_exits_cleanly(capsys):
    assert main(["--help"]) == EXIT_OK
    assert "analyze" in capsys.readouterr().out


def test_unknown_option_is_a_usage_error():
    assert main(["analyze", "x.csv", "--variant", "spectral"]) == EXIT_USAGE


# ---------------------------------------------------------------------------
# analyze
# ---------------------------------------------------------------------------

def test_analyze_prints_lipschitz_table(tmp_path, capsys):
    path = write_csv(tmp_path, "episode,t,sc_0,sc_1,r\n0,0,0,0,0\n0,1,1,2,2\n0,2,3,2,3\n")
    assert main(["analyze", str(path)]) == EXIT_OK
    out = capsys.readouterr().out.splitlines()
    assert out[0] == "dimension,value,normalized,flag"
    assert out[1] == "0,2,1,exact"
    assert out[2] == "1,1.5,0,exact"


def test_analyze_soft_updates_over_episodes(tmp_path):
    path = write_csv(tmp_path, "episode,t,sc_0,r\n0,0,0,0\n0,1,1,4\n1,0,0,0\n1,1,1,1\n")
    out = tmp_path / "lipschitz.csv"
    assert main(["analyze", str(path), "--tau", "0.5", "--out", str(out)]) == EXIT_OK
    frame = pd.read_csv(out)
    assert frame["value"].tolist() == [2.5]


def test_analyze_orders_rows_by_t(tmp_path, capsys):
    path = write_csv(tmp_path, "t,sc_0,r\n2,2,1\n0,0,1\n1,1,1\n")
    assert main(["analyze", str(path), "--variant", "discounted", "--discount", "0.5"]) == EXIT_OK
    assert capsys.readouterr().out.splitlines()[1] == "0,0.5,0,exact"


def test_analyze_missing_column(tmp_path, capsys):
    path = write_csv(tmp_path, "t,sc_0\n0,1\n1,2\n")
    assert main(["analyze", str(path)]) == EXIT_USAGE
    assert "missing column 'r'" in capsys.readouterr().err


def test_analyze_malformed_value_reports_line(tmp_path, capsys):
    path = write_csv(tmp_path, "t,sc_0,r\n0,1,0\n1,abc,1\n")
    assert main(["analyze", str(path)]) == EXIT_USAGE
    err = capsys.readouterr().err
    assert "line 3" in err
    assert "sc_0" in err


def test_analyze_missing_file(tmp_path):
    assert main(["analyze", str(tmp_path / "absent.csv")]) == EXIT_USAGE


def test_analyze_needs_two_steps(tmp_path):
    path = write_csv(tmp_path, "t,sc_0,r\n0,1,0\n")
    assert main(["analyze", str(path)]) == EXIT_USAGE


# ---------------------------------------------------------------------------
# run, train, eval
# ---------------------------------------------------------------------------

def test_run_with_mock_generator(config_file, tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["run", "--config", str(config_file), "--out", str(out)]) == EXIT_OK
    printed = capsys.readouterr().out
    assert "Best candidate:" in printed
    assert "Final score after 100 steps" in printed
    assert (out / "manifest.json").exists()
    assert (out / "final" / "policy.bin").exists()


def test_run_rejects_unknown_config_key(tmp_path, capsys):
    path = tmp_path / "bad.conf"
    path.write_text("sample_count = 2\nlearning_rate = 3\n")
    assert main(["run", "--config", str(path)]) == EXIT_USAGE
    assert "learning_rate" in capsys.readouterr().err


def test_run_rejects_invalid_value(tmp_path, capsys):
    path = tmp_path / "bad.conf"
    path.write_text("sample_count = zero\n")
    assert main(["run", "--config", str(path)]) == EXIT_USAGE
    assert "sample_count" in capsys.readouterr().err


def test_run_missing_config_file(tmp_path):
    assert main(["run", "--config", str(tmp_path / "absent.conf")]) == EXIT_USAGE


def test_config_comments_need_leading_whitespace():
    values = parse_config_text(
        "# header\n"
        "endpoint = https://llm.test/v1#fragment\n"
        "model = m#1   # trailing comment\n"
        "sample_count = 2\t# tab before the comment\n"
    )
    assert values == {"endpoint": "https://llm.test/v1#fragment", "model": "m#1", "sample_count": "2"}


def test_resume_builds_generator_from_stored_config(tmp_path):
    def write_config(name, seed):
        path = tmp_path / name
        path.write_text(TINY_CONFIG.replace("iteration_count = 1", "iteration_count = 2") + f"seed = {seed}\n")
        return path

    stored = write_config("stored.conf", 5)
    reference_dir, run_dir = tmp_path / "reference", tmp_path / "run"
    assert main(["run", "--config", str(stored), "--out", str(reference_dir)]) == EXIT_OK
    assert main(["run", "--config", str(stored), "--out", str(run_dir)]) == EXIT_OK

    manifest_path = run_dir / "manifest.json"
    interrupted = io.read_manifest(manifest_path)
    interrupted.iterations = interrupted.iterations[:1]
    interrupted.status = "failed"
    interrupted.best_candidate_id = None
    interrupted.final = None
    io.write_manifest(manifest_path, interrupted)

    edited = write_config("edited.conf", 99)
    assert main(["run", "--config", str(edited), "--out", str(run_dir), "--resume"]) == EXIT_OK
    resumed = io.read_manifest(manifest_path)
    reference = io.read_manifest(reference_dir / "manifest.json")
    assert resumed.config.seed == 5
    assert resumed.generator["seed"] == 5
    assert [(c.provenance, c.repr_text) for c in resumed.iterations[1].candidates] == \
        [(c.provenance, c.repr_text) for c in reference.iterations[1].candidates]
    assert resumed.best_candidate_id == reference.best_candidate_id


def test_remote_run_without_api_key(tmp_path, monkeypatch):
    monkeypatch.delenv("LESR_API_KEY", raising=False)
    path = tmp_path / "remote.conf"
    path.write_text("generator = remote\nendpoint = https://llm.test/v1\nmodel = m\n")
    assert main(["run", "--config", str(path), "--out", str(tmp_path / "run")]) == EXIT_USAGE


def test_train_then_eval(config_file, program_file, tmp_path, capsys):
    out = tmp_path / "trained"
    assert main(["train", "--config", str(config_file), "--program", str(program_file),
                 "--steps", "60", "--out", str(out)]) == EXIT_OK
    for name in ("program.dsl", "train_curve.csv", "trajectories.csv", "policy.bin", "lipschitz.csv"):
        assert (out / name).exists(), name

    assert main(["eval", "--config", str(config_file), "--policy", str(out / "policy.bin"),
                 "--program", str(program_file), "--episodes", "3"]) == EXIT_OK
    assert "Score over 3 episodes" in capsys.readouterr().out
    assert len(pd.read_csv(out / "eval.csv")) == 3

    # The saved trajectories are valid input for analyze.
    assert main(["analyze", str(out / "trajectories.csv")]) == EXIT_OK


def test_train_with_malformed_program(config_file, tmp_path, capsys):
    path = tmp_path / "broken.dsl"
    path.write_text("repr:\nout: s[0] +\nreward:\nout: s[4]\n")
    assert main(["train", "--config", str(config_file), "--program", str(path),
                 "--out", str(tmp_path / "x")]) == EXIT_USAGE
    assert "line 1" in capsys.readouterr().err


def test_train_with_non_finite_program_fails(config_file, tmp_path):
    path = tmp_path / "nan.dsl"
    path.write_text("repr:\nout: (s[0] + exp(1000)) - exp(1000)\nreward:\nout: s[4]\n")
    assert main(["train", "--config", str(config_file), "--program", str(path),
                 "--steps", "20", "--out", str(tmp_path / "x")]) == EXIT_FAILURE


def test_eval_with_mismatched_policy(config_file, program_file, tmp_path):
    from app.models.nn import mlp_init
    from app.utils.io import write_policy

    policy = write_policy(tmp_path / "policy.bin", mlp_init([9, 4, 2], head="tanh"))
    assert main(["eval", "--config", str(config_file), "--policy", str(policy),
                 "--program", str(program_file)]) == EXIT_USAGE
