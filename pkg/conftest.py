"""
Shared fixtures: tiny training configurations and an isolated settings cache.
"""

import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from app.config import get_settings  # noqa: E402
from app.schemas.config import RunConfig, TrainConfig  # noqa: E402

TINY_NETWORK = {"hidden_width": 16, "hidden_layers": 2}


@pytest.fixture(autouse=True)
def _fresh_settings(monkeypatch, tmp_path):
    monkeypatch.setenv("LESR_RUNS_DIR", str(tmp_path / "runs"))
    monkeypatch.setenv("LESR_ENVIRONMENT", "development")
    get_settings.cache_clear()
    yield
    get_settings.cache_clear()


@pytest.fixture
def tiny_train_config():
    """A TD3 configuration small enough to train in well under a second."""
    def make(**overrides):
        values = dict(
            total_steps=120,
            batch_size=16,
            start_steps=40,
            eval_freq=60,
            eval_episodes=2,
            horizon=30,
            hidden_sizes=[16, 16],
            replay_capacity=1000,
            seed=0,
        )
        values.update(overrides)
        return TrainConfig(**values)
    return make


@pytest.fixture
def tiny_run_config(tmp_path):
    """Mock-generator run with K=3, I=2 and a few hundred steps per training."""
    def make(**overrides):
        values = dict(
            env_id="pointmaze-dense",
            generator="mock",
            sample_count=3,
            iteration_count=2,
            small_steps=100,
            final_steps=150,
            start_steps=40,
            batch_size=16,
            eval_freq=50,
            eval_episodes=2,
            horizon=30,
            replay_capacity=1000,
            workers=1,
            output_dir=str(tmp_path / "run"),
            **TINY_NETWORK,
        )
        values.update(overrides)
        return RunConfig(**values)
    return make
