#!/usr/bin/env python3
"""
Tests for the source-state vs distance-feature study script.
"""

import json

import pytest

from app.models.td3 import CurvePoint
from scripts.distance_feature_study import DistanceFeatureStudy, area_under_curve, steps_to_success


def point(step, score, success_rate=0.0):
    return CurvePoint(step=step, score=score, success_rate=success_rate, wall_time=0.0)


def test_steps_to_success():
    curve = [point(100, -5.0, 0.2), point(200, -3.0, 0.8), point(300, -1.0, 1.0)]
    assert steps_to_success(curve) == 200
    assert steps_to_success(curve, threshold=0.95) == 300
    assert steps_to_success(curve[:1]) is None


def test_area_under_curve_is_normalized_by_span():
    assert area_under_curve([point(0, 1.0), point(10, 3.0)]) == pytest.approx(2.0)
    assert area_under_curve([point(0, 2.0), point(5, 2.0), point(10, 2.0)]) == pytest.approx(2.0)
    assert area_under_curve([point(50, -4.0)]) == -4.0
    assert area_under_curve([]) == 0.0


def test_summarize_counts_paired_seeds(tmp_path):
    study = DistanceFeatureStudy(output_dir=tmp_path, seeds=[0, 1])
    runs = [
        {"seed": 0, "variant": "source", "steps_to_success": None, "area_under_curve": -9.0, "critic_bound": 50.0},
        {"seed": 0, "variant": "distance", "steps_to_success": 4000, "area_under_curve": -3.0, "critic_bound": 20.0},
        {"seed": 1, "variant": "source", "steps_to_success": 3000, "area_under_curve": -2.0, "critic_bound": 10.0},
        {"seed": 1, "variant": "distance", "steps_to_success": None, "area_under_curve": -4.0, "critic_bound": 30.0},
        {"seed": 2, "variant": "distance", "steps_to_success": 100, "area_under_curve": 0.0, "critic_bound": 1.0},
    ]
    summary = study.summarize(runs)
    assert summary["seeds"] == 2
    assert summary["distance_reached_threshold"] == 1
    assert summary["distance_auc_exceeds_source"] == 1
    assert summary["distance_critic_bound_smaller"] == 1


def test_tiny_study_writes_summary(tiny_run_config, tmp_path):
    study = DistanceFeatureStudy(output_dir=tmp_path / "study", seeds=[0], total_steps=100,
                                 config=tiny_run_config())
    result = study.run_full_study()
    assert [(r["variant"], r["seed"]) for r in result["runs"]] == [("source", 0), ("distance", 0)]
    assert result["summary"]["seeds"] == 1
    assert result["intrinsic_weight"] == 0.02

    saved = json.loads((tmp_path / "study" / "summary.json").read_text())
    assert saved["summary"] == result["summary"]
    assert (tmp_path / "study" / "distance_seed0.csv").exists()
    assert (tmp_path / "study" / "source_seed0.csv").exists()
