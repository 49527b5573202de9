"""
paneitz/common.py

Common helpers for the experiment commands (verify, flow, morse, perturb, solve).
- Logging setup shared by the command-line entry point
- sha256 checksums of artifacts and of canonical JSON payloads
- Atomic JSON / CSV writers (temporary sibling + os.replace)
- Run manifests with run_id, artifact checksums, errors and stats
- Per-task random generators spawned from a single seed
"""
import os
import json
import hashlib
import logging
from pathlib import Path
from datetime import datetime
from typing import Any, Dict, List, Optional

import numpy as np
import pandas as pd

CHUNK_SIZE = 65536
CSV_FLOAT_FORMAT = "%.17g"
LOG_FORMAT = "%(asctime)s [%(levelname)s] %(message)s"
LOG_DATEFMT = "%Y-%m-%d %H:%M:%S"

logger = logging.getLogger(__name__)


# ============================================================================
# LOGGING
# ============================================================================
def setup_logging(level: int = logging.INFO) -> None:
    """Install the process-wide log format. Called once by the CLI."""
    logging.basicConfig(level=level, format=LOG_FORMAT, datefmt=LOG_DATEFMT)


def log_summary(title: str, rows: Dict[str, Any]) -> None:
    """Log a framed summary block with aligned `label: value` rows."""
    width = max((len(k) for k in rows), default=0) + 2
    logger.info("=" * 70)
    logger.info(title.upper())
    logger.info("=" * 70)
    for label, value in rows.items():
        logger.info(f"{(label + ':').ljust(width)}  {value}")
    logger.info("=" * 70)


# ============================================================================
# CHECKSUMS
# ============================================================================
def file_checksum(path: Path, chunk_size: int = CHUNK_SIZE, algorithm: str = "sha256") -> str:
    """
    Compute a cryptographic checksum of a file's contents.

    Args:
        path: File to hash
        chunk_size: Read size in bytes
        algorithm: Any name accepted by hashlib.new

    Returns:
        Hexadecimal digest

    Raises:
        FileNotFoundError: If the file doesn't exist
        IsADirectoryError: If the path is a directory
    """
    if not path.exists():
        raise FileNotFoundError(f"File not found: {path}")
    if path.is_dir():
        raise IsADirectoryError(f"Path is a directory, not a file: {path}")

    h = hashlib.new(algorithm)
    with path.open("rb") as f:
        while True:
            chunk = f.read(chunk_size)
            if not chunk:
                break
            h.update(chunk)
    return h.hexdigest()


def canonical_json(payload: Any) -> str:
    """Sorted-key JSON text; identical payloads give identical strings."""
    return json.dumps(_to_builtin(payload), sort_keys=True, indent=2, ensure_ascii=False)


def payload_hash(payload: Any) -> str:
    """sha256 of the canonical JSON form of a payload."""
    return hashlib.sha256(canonical_json(payload).encode("utf-8")).hexdigest()


def _to_builtin(obj: Any) -> Any:
    # numpy scalars/arrays and Paths are not JSON serializable as-is
    if isinstance(obj, dict):
        return {str(k): _to_builtin(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_to_builtin(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_to_builtin(v) for v in obj.tolist()]
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return _finite_or_str(float(obj))
    if isinstance(obj, float):
        return _finite_or_str(obj)
    if isinstance(obj, Path):
        return str(obj)
    return obj


def _finite_or_str(x: float) -> Any:
    if np.isfinite(x):
        return x
    return "nan" if np.isnan(x) else ("inf" if x > 0 else "-inf")


# ============================================================================
# ATOMIC WRITERS
# ============================================================================
def _atomic_write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.name}.tmp")
    with tmp.open("w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    os.replace(tmp, path)


def write_json_report(path: Path, payload: Dict[str, Any]) -> Path:
    """Write a deterministic JSON report (UTF-8, sorted keys) atomically."""
    _atomic_write_text(path, canonical_json(payload) + "\n")
    logger.info(f"Report written | path={path}")
    return path


def write_csv(path: Path, frame: pd.DataFrame) -> Path:
    """Write a CSV with header row and round-trip float precision, atomically."""
    text = frame.to_csv(index=False, float_format=CSV_FLOAT_FORMAT, lineterminator="\n")
    _atomic_write_text(path, text)
    logger.info(f"CSV written | path={path} | rows={len(frame)}")
    return path


# ============================================================================
# RUN MANIFESTS
# ============================================================================
def new_manifest(command: str, config_hash: str) -> Dict[str, Any]:
    """Start a run manifest; timestamps live here and never in reports."""
    run_id = f"{command}_{datetime.now().strftime('%Y%m%d_%H%M%S')}"
    return {
        "run_id": run_id,
        "command": command,
        "config_hash": config_hash,
        "started_at": datetime.now().isoformat(),
        "artifacts": [],
        "errors": [],
        "stats": {},
    }


def record_artifact(manifest: Dict[str, Any], path: Path) -> None:
    manifest["artifacts"].append({"path": str(path), "sha256": file_checksum(path)})


def record_error(manifest: Dict[str, Any], where: str, exc: BaseException) -> None:
    manifest["errors"].append({
        "where": where,
        "error": str(exc),
        "error_type": type(exc).__name__,
    })


def finalize_manifest(manifest: Dict[str, Any], out_dir: Path) -> Optional[Path]:
    """Stamp the end time and write manifests/manifest_<run_id>.json."""
    manifest["ended_at"] = datetime.now().isoformat()
    manifest_path = out_dir / "manifests" / f"manifest_{manifest['run_id']}.json"
    try:
        manifest_path.parent.mkdir(parents=True, exist_ok=True)
        with manifest_path.open("w", encoding="utf-8") as mf:
            json.dump(_to_builtin(manifest), mf, indent=2, default=str)
        logger.info(f"Manifest written to {manifest_path}")
        return manifest_path
    except OSError as e:
        logger.error(f"Failed to write manifest: {e}")
        return None


# ============================================================================
# RANDOMNESS
# ============================================================================
def spawn_rng(seed: int, task: int) -> np.random.Generator:
    """Generator for task `task`; independent of how tasks are scheduled."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(task,)))


def spawn_rngs(seed: int, count: int) -> List[np.random.Generator]:
    return [spawn_rng(seed, i) for i in range(count)]
