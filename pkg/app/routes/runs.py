"""
Run inspection endpoints.
"""

import logging
from pathlib import Path

from fastapi import APIRouter, HTTPException, status

from app.config import get_settings
from app.utils.io import read_manifest

logger = logging.getLogger(__name__)

router = APIRouter()


@router.get("/runs", summary="List runs")
async def list_runs():
    runs_dir = Path(get_settings().runs_dir)
    if not runs_dir.is_dir():
        return {"runs": []}
    runs = []
    for manifest_path in sorted(runs_dir.glob("*/manifest.json")):
        manifest = read_manifest(manifest_path)
        runs.append({
            "name": manifest_path.parent.name,
            "status": manifest.status,
            "best_candidate_id": manifest.best_candidate_id,
        })
    return {"runs": runs}


@router.get("/runs/{name}", summary="Manifest of a run")
async def get_run(name: str):
    runs_dir = Path(get_settings().runs_dir)
    manifest_path = runs_dir / name / "manifest.json"
    if "/" in name or name.startswith(".") or not manifest_path.exists():
        raise HTTPException(status_code=status.HTTP_404_NOT_FOUND, detail=f"Run {name!r} not found")
    return read_manifest(manifest_path).model_dump(mode="json")
