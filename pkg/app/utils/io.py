"""
Reading and writing run artifacts.

Tabular files (training curves, trajectories, Lipschitz arrays, evaluation
tables) go through pandas; records are pydantic JSON; network parameters
use the binary layout below.

``policy.bin`` layout, little-endian:

    magic        8 bytes   b"LESRMLP1"
    layer_count  uint32
    head         uint32    0 = identity, 1 = tanh
    action_bound float64
    per layer    uint32 rows, uint32 cols
    per layer    float64[rows * cols] weights (row-major), float64[rows] bias
"""

import logging
from pathlib import Path
from typing import Iterable, List, Sequence, Union

import numpy as np
import pandas as pd

from app.models.lipschitz import LipschitzArray, Trajectory, lipschitz_rows
from app.models.nn import HEADS, MlpParams
from app.schemas.records import RunManifest

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

POLICY_MAGIC = b"LESRMLP1"
_U32 = np.dtype("<u4")
_F64 = np.dtype("<f8")


class ArtifactError(ValueError):
    """An artifact file is missing, truncated or malformed."""


# ---------------------------------------------------------------------------
# Network parameters
# ---------------------------------------------------------------------------

def policy_to_bytes(params: MlpParams) -> bytes:
    parts = [
        POLICY_MAGIC,
        np.array([len(params.weights), HEADS.index(params.head)], dtype=_U32).tobytes(),
        np.array([params.action_bound], dtype=_F64).tobytes(),
    ]
    for w in params.weights:
        parts.append(np.array(w.shape, dtype=_U32).tobytes())
    for w, b in zip(params.weights, params.biases):
        parts.append(np.ascontiguousarray(w, dtype=_F64).tobytes())
        parts.append(np.ascontiguousarray(b, dtype=_F64).tobytes())
    return b"".join(parts)


def policy_from_bytes(data: bytes) -> MlpParams:
    """
    Decode the ``policy.bin`` layout.

    Raises:
        ArtifactError: On a bad magic number, unknown head or truncated data
    """
    if not data.startswith(POLICY_MAGIC):
        raise ArtifactError("not a policy file (bad magic number)")
    offset = len(POLICY_MAGIC)

    def take(dtype: np.dtype, count: int) -> np.ndarray:
        nonlocal offset
        size = dtype.itemsize * count
        if offset + size > len(data):
            raise ArtifactError("policy file is truncated")
        chunk = np.frombuffer(data, dtype=dtype, count=count, offset=offset)
        offset += size
        return chunk

    layer_count, head_code = (int(v) for v in take(_U32, 2))
    if head_code >= len(HEADS):
        raise ArtifactError(f"unknown head code {head_code}")
    action_bound = float(take(_F64, 1)[0])
    shapes = [tuple(int(v) for v in take(_U32, 2)) for _ in range(layer_count)]
    weights, biases = [], []
    for rows, cols in shapes:
        weights.append(take(_F64, rows * cols).reshape(rows, cols).astype(np.float64))
        biases.append(take(_F64, rows).astype(np.float64))
    if offset != len(data):
        raise ArtifactError(f"policy file has {len(data) - offset} trailing bytes")
    try:
        return MlpParams(weights=weights, biases=biases, head=HEADS[head_code], action_bound=action_bound)
    except ValueError as e:
        raise ArtifactError(f"invalid network in policy file: {e}") from None


def write_policy(path: PathLike, params: MlpParams) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(policy_to_bytes(params))
    return path


def read_policy(path: PathLike) -> MlpParams:
    path = Path(path)
    if not path.exists():
        raise ArtifactError(f"policy file not found: {path}")
    return policy_from_bytes(path.read_bytes())


# ---------------------------------------------------------------------------
# Tables
# ---------------------------------------------------------------------------

def curve_frame(curve: Sequence) -> pd.DataFrame:
    """Step-indexed evaluation curve from CurvePoint objects or equivalent dicts."""
    columns = ["step", "score", "success_rate", "wall_time"]
    rows = [p if isinstance(p, dict) else {c: getattr(p, c) for c in columns} for p in curve]
    return pd.DataFrame(rows, columns=columns)


def write_curve(path: PathLike, curve: Sequence) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    curve_frame(curve).to_csv(path, index=False)
    return path


def trajectories_frame(trajectories: Iterable[Trajectory]) -> pd.DataFrame:
    """One row per step: episode, t, source state s_i, augmented state sc_i, extrinsic r."""
    frames = []
    for episode, trajectory in enumerate(trajectories):
        frame = pd.DataFrame({"episode": episode, "t": np.arange(trajectory.length)})
        if trajectory.source_states is not None:
            for i in range(trajectory.source_states.shape[1]):
                frame[f"s_{i}"] = trajectory.source_states[:, i]
        for i in range(trajectory.state_dim):
            frame[f"sc_{i}"] = trajectory.augmented_states[:, i]
        frame["r"] = trajectory.rewards
        frames.append(frame)
    if not frames:
        return pd.DataFrame(columns=["episode", "t", "r"])
    return pd.concat(frames, ignore_index=True)


def write_trajectories(path: PathLike, trajectories: Iterable[Trajectory]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    trajectories_frame(trajectories).to_csv(path, index=False, float_format="%.17g")
    return path


def _sorted_columns(columns: Iterable[str], prefix: str) -> List[str]:
    matched = [c for c in columns if c.startswith(prefix) and c[len(prefix):].isdigit()]
    return sorted(matched, key=lambda c: int(c[len(prefix):]))


def trajectories_from_frame(frame: pd.DataFrame) -> List[Trajectory]:
    """
    Rebuild trajectories from a frame in the ``trajectories.csv`` layout.

    Rows of one episode are ordered by ``t``; a missing ``episode`` column
    means the whole file is one episode.

    Raises:
        ArtifactError: Naming a missing column or the file line of a malformed value
    """
    frame = frame.rename(columns=lambda c: str(c).strip())
    for column in ("t", "r"):
        if column not in frame.columns:
            raise ArtifactError(f"missing column '{column}'")
    state_columns = _sorted_columns(frame.columns, "sc_")
    if not state_columns:
        raise ArtifactError("missing column 'sc_0' (no augmented state columns)")
    source_columns = _sorted_columns(frame.columns, "s_")
    numeric_columns = ["t", "r", *state_columns, *source_columns]
    if "episode" in frame.columns:
        numeric_columns.append("episode")

    values = {}
    for column in numeric_columns:
        converted = pd.to_numeric(frame[column], errors="coerce")
        bad = converted.isna() | ~np.isfinite(converted.fillna(0.0))
        if bad.any():
            row = int(np.flatnonzero(bad.to_numpy())[0])
            # Line 1 is the header.
            raise ArtifactError(
                f"line {row + 2}: invalid value {frame[column].iloc[row]!r} in column '{column}'"
            )
        values[column] = converted.to_numpy(dtype=np.float64)

    numeric = pd.DataFrame(values)
    if "episode" not in numeric.columns:
        numeric["episode"] = 0.0
    trajectories = []
    for _, group in numeric.groupby("episode", sort=False):
        group = group.sort_values("t", kind="stable")
        trajectories.append(Trajectory(
            augmented_states=group[state_columns].to_numpy(),
            rewards=group["r"].to_numpy(),
            source_states=group[source_columns].to_numpy() if source_columns else None,
        ))
    return trajectories


def read_trajectories(path: PathLike) -> List[Trajectory]:
    """
    Load a trajectory CSV.

    Raises:
        ArtifactError: If the file is missing, ragged, lacks a column or holds a malformed value
    """
    path = Path(path)
    if not path.exists():
        raise ArtifactError(f"trajectory file not found: {path}")
    try:
        frame = pd.read_csv(path, dtype=str, skipinitialspace=True)
    except pd.errors.EmptyDataError:
        raise ArtifactError(f"{path} is empty") from None
    except pd.errors.ParserError as e:
        raise ArtifactError(f"{path}: malformed row ({str(e).strip()})") from None
    return trajectories_from_frame(frame)


def lipschitz_frame(array: LipschitzArray) -> pd.DataFrame:
    rows = lipschitz_rows(array)
    for row in rows:
        row["flag"] = "approximate" if row.pop("approximate") else "exact"
    return pd.DataFrame(rows, columns=["dimension", "value", "normalized", "flag"])


def write_lipschitz(path: PathLike, array: LipschitzArray) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lipschitz_frame(array).to_csv(path, index=False, float_format="%.17g")
    return path


def eval_frame(trajectories: Sequence[Trajectory]) -> pd.DataFrame:
    return pd.DataFrame(
        [
            {"episode": i, "return": t.episode_return, "success": bool(t.success), "length": t.length}
            for i, t in enumerate(trajectories)
        ],
        columns=["episode", "return", "success", "length"],
    )


def write_eval(path: PathLike, trajectories: Sequence[Trajectory]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    eval_frame(trajectories).to_csv(path, index=False)
    return path


# ---------------------------------------------------------------------------
# Records and text
# ---------------------------------------------------------------------------

def write_text(path: PathLike, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")
    return path


def write_manifest(path: PathLike, manifest: RunManifest) -> Path:
    """Write the manifest atomically (temp file, then rename)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(manifest.model_dump_json(indent=2), encoding="utf-8")
    tmp.replace(path)
    return path


def read_manifest(path: PathLike) -> RunManifest:
    path = Path(path)
    if not path.exists():
        raise ArtifactError(f"manifest not found: {path}")
    return RunManifest.model_validate_json(path.read_text(encoding="utf-8"))
