from __future__ import annotations

import json
import logging
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import yaml

from .exceptions import ConfigError
from .utils import parse_float_list

logger = logging.getLogger(__name__)

_ENV_LOADED = False
ENV_PREFIX = "QTRILAT_"

DEFAULT_OUT_DIR = "./qtrilat-output"


def _candidate_env_files() -> list[Path]:
    explicit_path = os.getenv(f"{ENV_PREFIX}ENV_FILE", "").strip()
    if explicit_path:
        return [Path(explicit_path).expanduser()]

    user_config_env = Path.home() / ".config" / "quantum-trilateration" / ".env"
    return [user_config_env]


def _strip_quotes(value: str) -> str:
    if len(value) >= 2 and value[0] == value[-1] and value[0] in ("'", '"'):
        return value[1:-1]
    return value


def _load_env_from_file(env_file: Path) -> None:
    for raw_line in env_file.read_text(encoding="utf-8").splitlines():
        line = raw_line.strip()
        if not line or line.startswith("#"):
            continue

        if line.startswith("export "):
            line = line[7:].strip()

        if "=" not in line:
            continue

        key, value = line.split("=", 1)
        key = key.strip()
        if not key:
            continue

        os.environ.setdefault(key, _strip_quotes(value.strip()))


def load_env_file(force: bool = False) -> None:
    global _ENV_LOADED

    if _ENV_LOADED and not force:
        return

    for env_file in _candidate_env_files():
        if not env_file.exists() or not env_file.is_file():
            continue

        try:
            _load_env_from_file(env_file)
            logger.debug("Loaded environment values from %s", env_file)
            break
        except Exception as exc:
            logger.warning("Failed to load environment file %s: %s", env_file, exc)

    _ENV_LOADED = True


def get_env(name: str, default: Optional[str] = "") -> str:
    load_env_file()

    normalized = name.strip()
    if not normalized:
        return "" if default is None else str(default)

    keys = [f"{ENV_PREFIX}{normalized}", normalized]
    for key in keys:
        if key in os.environ:
            return os.environ.get(key, "")

    return "" if default is None else str(default)


def get_env_int(name: str, default: int) -> int:
    raw = get_env(name, "").strip()
    if not raw:
        return default
    try:
        return int(raw)
    except ValueError as exc:
        raise ConfigError(f"environment value {ENV_PREFIX}{name}={raw!r} is not an integer", field=name) from exc


# ---------------------------------------------------------------------------
# Run configuration
# ---------------------------------------------------------------------------

def _default_fit() -> Dict[str, Any]:
    from .estimator import FitConfig
    return FitConfig().to_dict()


def _default_grid() -> Dict[str, float]:
    from .scene import MapGrid
    return MapGrid().to_dict()


def _default_etas() -> List[float]:
    from .ensemble import DESK_ETA_VALUES
    return list(DESK_ETA_VALUES)


@dataclass
class RunConfig:
    """Everything needed to reproduce one CLI run; serialises one-to-one to the config file."""

    command: str = ""
    scene: Optional[Dict[str, float]] = None
    measurement: Optional[Dict[str, List[float]]] = None
    measurement_file: Optional[str] = None
    layout: Union[str, List[List[float]]] = "default"
    sigma: float = 1.0
    eta: float = 0.01
    n_trials: int = 101
    n_scenes: int = 30
    eta_values: List[float] = field(default_factory=_default_etas)
    alpha_min: float = 0.05
    alpha_max: float = 1.0
    fit: Dict[str, Any] = field(default_factory=_default_fit)
    seed: int = 0
    out: str = DEFAULT_OUT_DIR
    workers: int = 0
    grid: Dict[str, float] = field(default_factory=_default_grid)
    histogram_bins: int = 50
    contour_alpha: float = 1.0

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "RunConfig":
        config = cls()
        config.update(data)
        return config

    def update(self, data: Dict[str, Any]) -> None:
        """Override fields present in ``data``; unknown keys are rejected."""
        names = {f.name for f in fields(self)}
        for key, value in (data or {}).items():
            if key not in names:
                raise ConfigError(f"unknown config field '{key}'", field=key)
            if key in ("fit", "grid") and isinstance(value, dict):
                merged = dict(getattr(self, key))
                merged.update(value)
                value = merged
            setattr(self, key, value)

    def coerce(self) -> None:
        """Convert numeric fields read from text or YAML; bad values raise ConfigError naming the field."""
        for name, kind in _NUMERIC_FIELDS.items():
            value = getattr(self, name)
            try:
                setattr(self, name, kind(value))
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"field '{name}' must be {kind.__name__}, got {value!r}", field=name) from exc
        from .estimator import FitConfig
        try:
            self.fit = FitConfig.from_dict(self.fit).to_dict()
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid fit config: {exc}", field="fit") from exc
        try:
            self.grid = {k: float(v) for k, v in self.grid.items()}
        except (AttributeError, TypeError, ValueError) as exc:
            raise ConfigError(f"invalid grid config: {exc}", field="grid") from exc
        self.eta_values = parse_float_list(self.eta_values, "eta_values")


_NUMERIC_FIELDS = {
    "sigma": float, "eta": float, "alpha_min": float, "alpha_max": float, "contour_alpha": float,
    "n_trials": int, "n_scenes": int, "seed": int, "workers": int, "histogram_bins": int,
}


def env_defaults() -> Dict[str, Any]:
    """Defaults supplied through QTRILAT_SEED / QTRILAT_WORKERS / QTRILAT_OUT_DIR."""
    values: Dict[str, Any] = {}
    seed = get_env("SEED", "").strip()
    if seed:
        values["seed"] = get_env_int("SEED", 0)
    workers = get_env("WORKERS", "").strip()
    if workers:
        values["workers"] = get_env_int("WORKERS", 0)
    out_dir = get_env("OUT_DIR", "").strip()
    if out_dir:
        values["out"] = out_dir
    return values


def _config_from_csv(path: Path) -> Dict[str, Any]:
    for line in path.read_text(encoding="utf-8").splitlines():
        if not line.startswith("#"):
            break
        key, _, value = line[1:].strip().partition(":")
        if key.strip() == "run_config":
            return json.loads(value)
    raise ConfigError(f"{path} carries no run_config metadata line", field="config")


def load_run_config(path: Union[str, Path]) -> Dict[str, Any]:
    """Read a YAML/JSON config file, or the run_config embedded in an earlier output file."""
    path = Path(path).expanduser()
    try:
        suffix = path.suffix.lower()
        if suffix == ".csv":
            data = _config_from_csv(path)
        elif suffix == ".json":
            data = json.loads(path.read_text(encoding="utf-8"))
        else:
            data = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}", field="config") from exc
    except (yaml.YAMLError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot parse config file {path}: {exc}", field="config") from exc

    if not isinstance(data, dict):
        raise ConfigError(f"config file {path} must hold a mapping", field="config")
    if isinstance(data.get("run_config"), dict):
        data = data["run_config"]
    return data
