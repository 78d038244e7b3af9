"""
FastAPI service exposing the LESR program, Lipschitz and run-inspection tools.
"""

import logging
from contextlib import asynccontextmanager
from datetime import datetime, timezone

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from app.config import get_settings
from app.models.env import available_envs
from app.routes.lipschitz import router as lipschitz_router
from app.routes.programs import router as programs_router
from app.routes.runs import router as runs_router
from app.utils.logging import configure_logging

configure_logging(get_settings().log_level)
logger = logging.getLogger(__name__)

APP_VERSION = "1.0.0"
APP_TITLE = "LESR Engine"
APP_DESCRIPTION = """
Tools around LLM-generated state representations and intrinsic rewards.

## Features
- Validate and evaluate state representation (F) and intrinsic reward (G) programs
- Per-dimension Lipschitz constants between augmented states and rewards
- Value-function Lipschitz bound for Lipschitz rewards and dynamics
- Inspection of finished runs (manifests)

Runs themselves are started from the command line: `python -m app.cli run --config lesr.conf`.
"""


@asynccontextmanager
async def lifespan(app: FastAPI):
    settings = get_settings()
    logger.info("=" * 60)
    logger.info(f"Starting {APP_TITLE} v{APP_VERSION}")
    logger.info("=" * 60)
    logger.info(f"Runs directory: {settings.runs_dir}")
    logger.info(f"Environments: {', '.join(available_envs())}")
    yield
    logger.info("Application shutting down...")


app = FastAPI(
    title=APP_TITLE,
    description=APP_DESCRIPTION,
    version=APP_VERSION,
    docs_url="/docs",
    redoc_url="/redoc",
    lifespan=lifespan,
)

app.include_router(programs_router, prefix="/api/v1", tags=["programs"])
app.include_router(lipschitz_router, prefix="/api/v1", tags=["lipschitz"])
app.include_router(runs_router, prefix="/api/v1", tags=["runs"])


@app.get("/", tags=["root"])
async def root():
    return {
        "message": APP_TITLE,
        "version": APP_VERSION,
        "status": "operational",
        "endpoints": {
            "documentation": {"swagger": "/docs", "redoc": "/redoc", "openapi": "/openapi.json"},
            "health": "/health",
            "programs": ["/api/v1/programs/validate", "/api/v1/programs/evaluate"],
            "lipschitz": ["/api/v1/lipschitz/analyze", "/api/v1/lipschitz/analyze-csv", "/api/v1/lipschitz/bound"],
            "runs": ["/api/v1/runs", "/api/v1/runs/{name}"],
        },
    }


@app.get("/health", tags=["monitoring"])
async def health_check():
    return {
        "status": "healthy",
        "timestamp": datetime.now(timezone.utc).isoformat(),
        "version": APP_VERSION,
        "environments": available_envs(),
    }


@app.exception_handler(ValueError)
async def value_error_handler(request: Request, exc: ValueError):
    logger.warning(f"Invalid request to {request.url.path}: {exc}")
    return JSONResponse(status_code=400, content={"error": "Bad Request", "message": str(exc)})


@app.exception_handler(Exception)
async def global_exception_handler(request: Request, exc: Exception):
    logger.error(f"Unhandled exception: {str(exc)}", exc_info=True)

    if get_settings().environment == "production":
        error_detail = "An internal error occurred"
    else:
        error_detail = str(exc)

    return JSONResponse(
        status_code=500,
        content={
            "error": "Internal Server Error",
            "message": error_detail,
            "request_id": request.headers.get("X-Request-ID", "N/A"),
            "timestamp": datetime.now(timezone.utc).isoformat(),
        },
    )
