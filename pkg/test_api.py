#!/usr/bin/env python3
"""
Tests for the HTTP service: program validation, Lipschitz analysis, the
value bound and run inspection.
"""

from datetime import datetime, timezone

import pytest
from fastapi.testclient import TestClient

from app.main import app
from app.schemas.config import RunConfig
from app.schemas.records import RunManifest
from app.utils.io import write_manifest

PAIR = "repr:\nout: sqrt((s[0] - s[2])^2 + (s[1] - s[3])^2)\nreward:\nout: -s[4]"


@pytest.fixture
def client():
    with TestClient(app) as test_client:
        yield test_client


def test_root_and_health(client):
    root = client.get("/")
    assert root.status_code == 200
    assert root.json()["status"] == "operational"
    health = client.get("/health")
    assert health.json()["environments"] == ["pointmaze-dense", "pointmaze-sparse"]


# ---------------------------------------------------------------------------
# Programs
# ---------------------------------------------------------------------------

def test_validate_pair(client):
    response = client.post("/api/v1/programs/validate", json={"text": PAIR, "state_dim": 4})
    assert response.status_code == 200
    data = response.json()
    assert data["valid"] is True
    assert data["repr"]["state_indices"] == [0, 1, 2, 3]
    assert data["reward"]["input_dim"] == 5
    assert data["reward"]["canonical_text"] == "out: -s[4]"


def test_validate_reports_position(client):
    response = client.post("/api/v1/programs/validate",
                           json={"text": "out: s[0] + )", "state_dim": 4, "kind": "repr"})
    assert response.status_code == 400
    detail = response.json()["detail"]
    assert detail["line"] == 1
    assert detail["column"] == 13


def test_validate_reward_alone(client):
    ok = client.post("/api/v1/programs/validate", json={"text": "out: -s[4]", "state_dim": 4, "kind": "reward"})
    assert ok.status_code == 200
    bad = client.post("/api/v1/programs/validate", json={"text": "out: -s[0]", "state_dim": 4, "kind": "reward"})
    assert bad.status_code == 400


def test_validate_pair_missing_section(client):
    response = client.post("/api/v1/programs/validate", json={"text": "repr:\nout: s[0]", "state_dim": 4})
    assert response.status_code == 400
    assert response.json()["detail"]["message"] == "missing reward block"


def test_evaluate_program(client):
    response = client.post("/api/v1/programs/evaluate", json={
        "repr_text": "out: sqrt((s[0] - s[2])^2 + (s[1] - s[3])^2)",
        "reward_text": "out: -s[4]",
        "state": [0.0, 0.0, 3.0, 4.0],
    })
    assert response.status_code == 200
    data = response.json()
    assert data["added"] == [5.0]
    assert data["augmented"] == [0.0, 0.0, 3.0, 4.0, 5.0]
    assert data["intrinsic_reward"] == -5.0


def test_evaluate_non_finite_program(client):
    response = client.post("/api/v1/programs/evaluate", json={
        "repr_text": "out: (s[0] + exp(1000)) - exp(1000)",
        "state": [0.0, 0.0, 3.0, 4.0],
    })
    assert response.status_code == 400


# ---------------------------------------------------------------------------
# Lipschitz
# ---------------------------------------------------------------------------

def test_analyze_trajectory(client):
    response = client.post("/api/v1/lipschitz/analyze", json={
        "states": [[0.0], [1.0], [3.0]],
        "rewards": [0.0, 2.0, 3.0],
    })
    assert response.status_code == 200
    rows = response.json()["rows"]
    assert rows == [{"dimension": 0, "value": 2.0, "normalized": 0.0, "flag": "exact"}]


def test_analyze_rejects_ragged_states(client):
    response = client.post("/api/v1/lipschitz/analyze", json={
        "states": [[0.0, 1.0], [1.0]],
        "rewards": [0.0, 2.0],
    })
    assert response.status_code == 422


def test_analyze_csv_upload(client):
    csv = "episode,t,sc_0,r\n0,0,0,0\n0,1,1,4\n1,0,0,0\n1,1,1,1\n"
    response = client.post("/api/v1/lipschitz/analyze-csv",
                           files={"file": ("trajectories.csv", csv, "text/csv")})
    assert response.status_code == 200
    data = response.json()
    assert data["trajectories_seen"] == 2
    assert data["rows"][0]["value"] == pytest.approx(0.9 * 4.0 + 0.1 * 1.0)


def test_analyze_csv_missing_column(client):
    response = client.post("/api/v1/lipschitz/analyze-csv",
                           files={"file": ("t.csv", "t,sc_0\n0,1\n1,2\n", "text/csv")})
    assert response.status_code == 400
    assert "missing column 'r'" in response.json()["detail"]


def test_value_bound(client):
    response = client.post("/api/v1/lipschitz/bound", json={"k1": 1.0, "k2": 0.0, "discount": 0.9, "horizon": 5})
    assert response.json()["bound"] == pytest.approx(1.0)
    singular = client.post("/api/v1/lipschitz/bound", json={"k1": 1.0, "k2": 2.0, "discount": 0.5, "horizon": 5})
    assert singular.status_code == 400


# ---------------------------------------------------------------------------
# Runs
# ---------------------------------------------------------------------------

def test_runs_listing_and_lookup(client, tmp_path):
    manifest = RunManifest(started_at=datetime.now(timezone.utc), config=RunConfig(), status="completed",
                           best_candidate_id=2)
    write_manifest(tmp_path / "runs" / "demo" / "manifest.json", manifest)

    listing = client.get("/api/v1/runs").json()["runs"]
    assert listing == [{"name": "demo", "status": "completed", "best_candidate_id": 2}]

    detail = client.get("/api/v1/runs/demo")
    assert detail.status_code == 200
    assert detail.json()["config"]["env_id"] == "pointmaze-dense"
    assert client.get("/api/v1/runs/missing").status_code == 404


def test_runs_listing_without_directory(client):
    assert client.get("/api/v1/runs").json() == {"runs": []}
