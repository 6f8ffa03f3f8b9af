"""Plot-ready output files: JSON for single records, CSV for tables.

Every file carries the run configuration, the master seed and package
versions. The ``created`` timestamp is the only field that differs between
two runs of the same configuration.
"""
from __future__ import annotations

import csv
import importlib.metadata as metadata
import json
import logging
import math
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence

import numpy as np
import scipy

from .config import RunConfig
from .exceptions import ConfigError, OutputError
from .scene import MeasurementSet

logger = logging.getLogger(__name__)

DISTRIBUTION = "quantum-trilateration"


def versions() -> Dict[str, str]:
    try:
        package_version = metadata.version(DISTRIBUTION)
    except metadata.PackageNotFoundError:
        package_version = "0+unknown"
    return {DISTRIBUTION: package_version, "numpy": np.__version__, "scipy": scipy.__version__}


def _timestamp() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def format_value(value: Any) -> str:
    """CSV cell text; floats use ``repr`` so every double round-trips exactly."""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def _jsonable(value: Any) -> Any:
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return _jsonable(value.tolist())
    if isinstance(value, (np.floating, float)):
        value = float(value)
        return value if math.isfinite(value) else None
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.bool_):
        return bool(value)
    return value


def _prepare(path: Path) -> Path:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OutputError(f"cannot create output directory {path.parent}: {exc}", str(path.parent)) from exc
    return path


def write_json(path: Path, payload: Dict[str, Any], config: RunConfig) -> Path:
    document = {
        "created": _timestamp(),
        "seed": config.seed,
        "versions": versions(),
        "run_config": config.to_dict(),
        **payload,
    }
    path = _prepare(Path(path))
    try:
        path.write_text(json.dumps(_jsonable(document), indent=2) + "\n", encoding="utf-8")
    except OSError as exc:
        raise OutputError(f"cannot write {path}: {exc}", str(path)) from exc
    logger.info("wrote %s", path)
    return path


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence[Any]], config: RunConfig,
              extra: Optional[Dict[str, Any]] = None) -> Path:
    """Write ``#``-prefixed metadata lines, one header row, then the data rows."""
    path = _prepare(Path(path))
    meta: Dict[str, Any] = {
        "created": _timestamp(),
        "seed": config.seed,
        "versions": versions(),
        "run_config": config.to_dict(),
    }
    meta.update(extra or {})
    try:
        with open(path, "w", newline="", encoding="utf-8") as handle:
            for key, value in meta.items():
                handle.write(f"# {key}: {json.dumps(_jsonable(value), separators=(',', ':'))}\n")
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(header)
            for row in rows:
                writer.writerow([format_value(v) for v in row])
    except OSError as exc:
        raise OutputError(f"cannot write {path}: {exc}", str(path)) from exc
    logger.info("wrote %s", path)
    return path


def data_section(path: Path) -> str:
    """File content minus the ``created`` timestamp, the part covered by the determinism contract."""
    text = Path(path).read_text(encoding="utf-8")
    if Path(path).suffix == ".json":
        document = json.loads(text)
        document.pop("created", None)
        return json.dumps(document, sort_keys=True)
    return "\n".join(line for line in text.splitlines() if not line.startswith("# created:"))


def read_measurement_file(path: str) -> MeasurementSet:
    """Measurements from a JSON file: either a forward-command output or a bare ``{"g1", "g2"}`` record."""
    try:
        document = json.loads(Path(path).expanduser().read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read measurement file {path}: {exc}", field="measurement_file") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"measurement file {path} is not valid JSON: {exc}", field="measurement_file") from exc
    record = document.get("measurement", document) if isinstance(document, dict) else None
    if not isinstance(record, dict) or "g1" not in record or "g2" not in record:
        raise ConfigError(f"measurement file {path} holds no g1/g2 record", field="measurement_file")
    try:
        values: List[float] = [float(v) for v in list(record["g1"]) + list(record["g2"])]
        scale = _brighter_peak(document.get("scene"))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"measurement file {path} holds non-numeric values", field="measurement_file") from exc
    if scale != 1.0:
        # fits assume g1 in units of the brighter emitter's peak; g2 is scale-free
        logger.info("rescaling g1 from %s by the brighter peak %g", path, scale)
        values[:3] = [v / scale for v in values[:3]]
    return MeasurementSet.from_vector(values, noisy=True)


def _brighter_peak(scene: Any) -> float:
    if not isinstance(scene, dict) or "peak1" not in scene or "peak2" not in scene:
        return 1.0
    bright = max(float(scene["peak1"]), float(scene["peak2"]))
    return bright if math.isfinite(bright) and bright > 0 else 1.0
