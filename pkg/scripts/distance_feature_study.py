#!/usr/bin/env python3
"""
Distance Feature Study for the LESR engine.
Trains source-state TD3 and distance-augmented TD3 on PointMaze over several
seeds and compares how fast each reaches the success threshold, the area
under the return curve and the critics' spectral-norm Lipschitz bound.
"""

import argparse
import json
import logging
import sys
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

current_dir = Path(__file__).resolve().parent
project_root = current_dir.parent
sys.path.insert(0, str(project_root))

from app.models.dsl import parse_repr_program, parse_reward_program  # noqa: E402
from app.models.td3 import CurvePoint, train  # noqa: E402
from app.schemas.config import RunConfig  # noqa: E402
from app.utils.io import write_curve  # noqa: E402
from app.utils.logging import configure_logging  # noqa: E402

logger = logging.getLogger(__name__)

DISTANCE_REPR = "out: sqrt((s[0] - s[2])^2 + (s[1] - s[3])^2)"
DISTANCE_REWARD = "out: -s[4]"
SUCCESS_THRESHOLD = 0.8


def steps_to_success(curve: Sequence[CurvePoint], threshold: float = SUCCESS_THRESHOLD) -> Optional[int]:
    """First evaluation step whose success rate reaches the threshold, or None."""
    for point in curve:
        if point.success_rate >= threshold:
            return point.step
    return None


def area_under_curve(curve: Sequence[CurvePoint]) -> float:
    """Trapezoidal area under the score curve, normalized by the step span."""
    if len(curve) < 2:
        return float(curve[0].score) if curve else 0.0
    steps = np.array([p.step for p in curve], dtype=np.float64)
    scores = np.array([p.score for p in curve], dtype=np.float64)
    return float(np.trapz(scores, steps) / (steps[-1] - steps[0]))


class DistanceFeatureStudy:
    """Runs the source-state vs distance-feature comparison and saves a summary."""

    def __init__(self, output_dir: str = None, seeds: Sequence[int] = (0, 1, 2, 3, 4),
                 total_steps: int = 50_000, config: Optional[RunConfig] = None):
        """
        Initialize the study.

        Args:
            output_dir: Directory receiving curves and summary.json
            seeds: Training seeds shared by both variants
            total_steps: Training steps per run
            config: Base configuration (TD3 hyperparameters, w, eval frequency)
        """
        if output_dir is None:
            output_dir = project_root / "runs" / "distance_feature_study"
        self.output_dir = Path(output_dir)
        self.output_dir.mkdir(parents=True, exist_ok=True)
        self.seeds = list(seeds)
        self.total_steps = total_steps
        self.config = config or RunConfig(env_id="pointmaze-dense", intrinsic_weight=0.02, eval_freq=2_500)

    def programs(self):
        repr_program = parse_repr_program(DISTANCE_REPR, 4)
        reward_program = parse_reward_program(DISTANCE_REWARD, 5, 4)
        return repr_program, reward_program

    def run_variant(self, variant: str, seed: int) -> Dict[str, Any]:
        """
        Train one variant at one seed.

        Args:
            variant: "source" (no F, no G) or "distance"

        Returns:
            Metrics for the run
        """
        repr_program, reward_program = self.programs() if variant == "distance" else (None, None)
        cfg = self.config.train_config(self.total_steps, seed=seed)
        logger.info(f"Training {variant} variant, seed {seed}, {self.total_steps} steps")
        result = train(self.config.env_id, repr_program, reward_program, cfg)
        if result.disqualified:
            raise RuntimeError(f"{variant} run at seed {seed} was disqualified: {result.reason}")

        write_curve(self.output_dir / f"{variant}_seed{seed}.csv", result.curve)
        return {
            "variant": variant,
            "seed": seed,
            "final_score": result.score,
            "final_success_rate": result.curve[-1].success_rate,
            "steps_to_success": steps_to_success(result.curve),
            "area_under_curve": area_under_curve(result.curve),
            "critic_bound": result.critic_bound(),
        }

    def summarize(self, runs: List[Dict[str, Any]]) -> Dict[str, Any]:
        by_seed = {}
        for run in runs:
            by_seed.setdefault(run["seed"], {})[run["variant"]] = run
        paired = [pair for pair in by_seed.values() if {"source", "distance"} <= set(pair)]
        reached = sum(
            1 for pair in paired
            if pair["distance"]["steps_to_success"] is not None
        )
        auc_wins = sum(
            1 for pair in paired
            if pair["distance"]["area_under_curve"] > pair["source"]["area_under_curve"]
        )
        bound_smaller = sum(
            1 for pair in paired
            if pair["distance"]["critic_bound"] < pair["source"]["critic_bound"]
        )
        return {
            "seeds": len(paired),
            "distance_reached_threshold": reached,
            "distance_auc_exceeds_source": auc_wins,
            "distance_critic_bound_smaller": bound_smaller,
            "threshold": SUCCESS_THRESHOLD,
        }

    def run_full_study(self) -> Dict[str, Any]:
        """Run both variants for every seed and write summary.json."""
        runs = [self.run_variant(variant, seed) for seed in self.seeds for variant in ("source", "distance")]
        summary = {
            "created_at": datetime.now(timezone.utc).isoformat(),
            "total_steps": self.total_steps,
            "intrinsic_weight": self.config.effective_intrinsic_weight,
            "runs": runs,
            "summary": self.summarize(runs),
        }
        path = self.output_dir / "summary.json"
        path.write_text(json.dumps(summary, indent=2))
        logger.info(f"Summary written to {path}")
        return summary


def main():
    parser = argparse.ArgumentParser(description="Source-state vs distance-feature TD3 on PointMaze")
    parser.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    parser.add_argument("--steps", type=int, default=50_000)
    parser.add_argument("--out", default=None)
    args = parser.parse_args()

    configure_logging()
    study = DistanceFeatureStudy(output_dir=args.out, seeds=args.seeds, total_steps=args.steps)
    result = study.run_full_study()
    print(json.dumps(result["summary"], indent=2))


if __name__ == "__main__":
    main()
