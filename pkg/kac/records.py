"""
Run artifacts: CSV tables, JSON Lines event logs, JSON reports and the run
manifest, plus schema validation of an output directory.
"""

import json
import logging
import platform
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Union

import numpy as np
import psutil
from pydantic import BaseModel, ValidationError

from kac import __version__
from kac.errors import KacError

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.17g"

PathLike = Union[str, Path]


class EventRecord(BaseModel):
    t: float
    i: int
    j: int
    z: float
    phi: List[float]
    theta: Optional[float] = None
    accepted: bool


class PopulationSummary(BaseModel):
    t: float
    size: int
    signed_mass: int
    unsigned_second_moment: float
    K: Optional[float] = None
    replica: Optional[int] = None


class RegressionSummary(BaseModel):
    slope: float
    intercept: float
    stderr: float
    n_points: int
    p: Optional[float] = None


class HostInfo(BaseModel):
    platform: str
    python: str
    cpu_count: Optional[int] = None
    memory_total: Optional[int] = None


class Manifest(BaseModel):
    experiment: str
    status: str
    config_hash: str
    code_version: str
    master_seed: int
    threads: int
    started_at: str
    wall_time_s: float
    host: HostInfo
    files: List[str]


def host_info() -> HostInfo:
    return HostInfo(
        platform=platform.platform(),
        python=platform.python_version(),
        cpu_count=psutil.cpu_count(logical=True),
        memory_total=psutil.virtual_memory().total,
    )


def utc_now() -> str:
    return datetime.now(timezone.utc).isoformat()


def write_table(path: PathLike, header: Sequence[str], rows: np.ndarray) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savetxt(path, np.atleast_2d(rows) if len(rows) else np.empty((0, len(header))),
               delimiter=",", header=",".join(header), comments="", fmt=FLOAT_FORMAT)
    return path


def write_trajectory_csv(path: PathLike, times: Sequence[float], snapshots: Sequence[np.ndarray]) -> Path:
    """One row per (snapshot, label): t, i, v_1..v_d."""
    if not snapshots:
        raise KacError("no snapshots to write")
    n, d = snapshots[0].shape
    blocks = [np.column_stack([np.full(n, t), np.arange(n), snap]) for t, snap in zip(times, snapshots)]
    header = ["t", "i"] + [f"v_{k + 1}" for k in range(d)]
    return write_table(path, header, np.vstack(blocks))


def write_moment_csv(path: PathLike, times: Sequence[float], lambda_k: Dict[float, Sequence[float]]) -> Path:
    """Long format: t, k, lambda_k."""
    rows = [(t, k, value) for k, values in sorted(lambda_k.items()) for t, value in zip(times, values)]
    return write_table(path, ["t", "k", "lambda_k"], np.asarray(rows, dtype=float))


def write_coupling_csv(path: PathLike, rows: Iterable[Sequence[float]]) -> Path:
    """Rows of (K, replica, t, bar_d_p_sq)."""
    return write_table(path, ["K", "replica", "t", "bar_d_p_sq"], np.asarray(list(rows), dtype=float))


def write_jsonl(path: PathLike, records: Iterable[BaseModel]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        for record in records:
            f.write(record.model_dump_json() + "\n")
    return path


def events_to_records(events) -> List[EventRecord]:
    return [EventRecord(t=e.t, i=e.i, j=e.j, z=e.z, phi=list(e.phi),
                        theta=e.theta if e.accepted else None, accepted=e.accepted) for e in events]


def write_json(path: PathLike, payload: Union[BaseModel, Dict[str, Any]]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(payload, BaseModel):
        payload = payload.model_dump(mode="json")
    with open(path, "w") as f:
        json.dump(payload, f, indent=2, sort_keys=True, allow_nan=True, default=_jsonable)
        f.write("\n")
    return path


def _jsonable(value):
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, Path):
        return str(value)
    raise TypeError(f"cannot serialise {type(value).__name__}")


# file name -> model for JSON and JSON Lines artifacts with a fixed schema
JSON_MODELS = {
    "manifest.json": Manifest,
    "regression.json": RegressionSummary,
}
JSONL_MODELS = {
    "events.jsonl": EventRecord,
    "populations.jsonl": PopulationSummary,
}
CSV_HEADERS = {
    "trajectory.csv": None,
    "moments.csv": ["t", "k", "lambda_k"],
    "coupling.csv": ["K", "replica", "t", "bar_d_p_sq"],
}


def _validate_csv(path: Path) -> None:
    with open(path) as f:
        header = f.readline().strip().split(",")
    expected = CSV_HEADERS.get(path.name)
    if expected is None and path.name == "trajectory.csv":
        if header[:2] != ["t", "i"] or not all(h.startswith("v_") for h in header[2:]) or len(header) < 5:
            raise KacError(f"{path.name}: unexpected header {header}")
    elif expected is not None and header != expected:
        raise KacError(f"{path.name}: expected header {expected}, got {header}")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.size and data.shape[1] != len(header):
        raise KacError(f"{path.name}: rows have {data.shape[1]} columns, header has {len(header)}")


def validate_output_dir(out_dir: PathLike) -> List[str]:
    """
    Check every CSV, JSON and JSON Lines file in ``out_dir`` against its
    schema; returns the validated file names, raises KacError on the first
    bad file.
    """
    out_dir = Path(out_dir)
    checked = []
    for path in sorted(out_dir.iterdir()):
        try:
            if path.suffix == ".csv":
                _validate_csv(path)
            elif path.suffix == ".jsonl":
                model = JSONL_MODELS.get(path.name)
                with open(path) as f:
                    for line in f:
                        payload = json.loads(line)
                        if model is not None:
                            model.model_validate(payload)
            elif path.suffix == ".json":
                with open(path) as f:
                    payload = json.load(f)
                model = JSON_MODELS.get(path.name)
                if model is not None:
                    model.model_validate(payload)
            else:
                continue
        except (ValueError, ValidationError) as e:
            raise KacError(f"{path.name} failed validation: {e}") from e
        checked.append(path.name)
    logger.debug(f"Validated {len(checked)} files in {out_dir}")
    return checked


def build_manifest(experiment: str, status: str, config_hash: str, master_seed: int, threads: int,
                   started_at: str, wall_time_s: float, files: Sequence[str]) -> Manifest:
    return Manifest(experiment=experiment, status=status, config_hash=config_hash, code_version=__version__,
                    master_seed=master_seed, threads=threads, started_at=started_at,
                    wall_time_s=wall_time_s, host=host_info(), files=sorted(files))
