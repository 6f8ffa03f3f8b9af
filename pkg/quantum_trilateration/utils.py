"""Parsers for the compact scene, layout and measurement specs accepted on the command line."""
from __future__ import annotations

import logging
import math
from typing import Any, Dict, List, Mapping, Union

from .exceptions import ConfigError

logger = logging.getLogger(__name__)

SCENE_FIELDS = ("x1", "y1", "x2", "y2", "alpha")


def _to_float(value: Any, name: str) -> float:
    try:
        number = float(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"field '{name}' is not a number: {value!r}", field=name) from exc
    if not math.isfinite(number):
        raise ConfigError(f"field '{name}' must be finite, got {value!r}", field=name)
    return number


def parse_key_values(text: str) -> Dict[str, str]:
    """``"a=1,b=2"`` -> ``{"a": "1", "b": "2"}``."""
    pairs: Dict[str, str] = {}
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if "=" not in part:
            raise ConfigError(f"expected key=value, got {part!r}", field=part)
        key, value = part.split("=", 1)
        pairs[key.strip().lower()] = value.strip()
    return pairs


def parse_scene_spec(spec: Union[str, Mapping[str, Any]]) -> Dict[str, float]:
    """Scene spec as ``"x1=..,y1=..,x2=..,y2=..,alpha=.."`` or a mapping.

    ``peak1`` is optional. ``peak2`` is accepted only when it equals
    ``alpha * peak1``.
    """
    data = parse_key_values(spec) if isinstance(spec, str) else dict(spec)
    scene: Dict[str, float] = {}
    for name in SCENE_FIELDS:
        if name not in data or data[name] in (None, ""):
            raise ConfigError(f"scene spec is missing field '{name}'", field=name)
        scene[name] = _to_float(data[name], name)
    if data.get("peak1") not in (None, ""):
        scene["peak1"] = _to_float(data["peak1"], "peak1")
    if data.get("peak2") not in (None, ""):
        # redundant with alpha * peak1; accepted only when consistent so Scene.to_dict() output reads back
        peak2 = _to_float(data["peak2"], "peak2")
        expected = scene["alpha"] * scene.get("peak1", 1.0)
        if not math.isclose(peak2, expected, rel_tol=1e-9, abs_tol=1e-12):
            raise ConfigError(f"peak2={peak2} disagrees with alpha * peak1 = {expected}", field="peak2")
    unknown = set(data) - set(SCENE_FIELDS) - {"peak1", "peak2"}
    if unknown:
        raise ConfigError(f"unknown scene field(s): {', '.join(sorted(unknown))}", field=sorted(unknown)[0])
    logger.debug("parsed scene spec %s", scene)
    return scene


def parse_float_list(text: Union[str, List[Any]], name: str) -> List[float]:
    items = text.split(",") if isinstance(text, str) else list(text)
    values = [_to_float(item, name) for item in items if str(item).strip()]
    if not values:
        raise ConfigError(f"field '{name}' needs at least one value", field=name)
    return values


def parse_layout(spec: Union[str, List[Any], None]) -> Union[str, List[List[float]]]:
    """``"default"`` or three ``x,y`` pairs separated by ``;``."""
    if spec is None or (isinstance(spec, str) and spec.strip().lower() in ("", "default")):
        return "default"
    if isinstance(spec, str):
        pairs = [p for p in spec.split(";") if p.strip()]
        points = [parse_float_list(p, "layout") for p in pairs]
    else:
        points = [parse_float_list(p, "layout") for p in spec]
    if len(points) != 3 or any(len(p) != 2 for p in points):
        raise ConfigError(f"layout needs exactly three x,y pairs, got {spec!r}", field="layout")
    return points


def parse_measurement_spec(spec: Union[str, Mapping[str, Any]]) -> Dict[str, List[float]]:
    """``"g1=a,b,c;g2=d,e,f"`` or a mapping with ``g1`` and ``g2`` lists."""
    if isinstance(spec, str):
        data: Dict[str, Any] = {}
        for part in spec.split(";"):
            if not part.strip():
                continue
            if "=" not in part:
                raise ConfigError(f"expected g1=... or g2=..., got {part!r}", field="measurement")
            key, value = part.split("=", 1)
            data[key.strip().lower()] = value
    else:
        data = dict(spec)
    result: Dict[str, List[float]] = {}
    for name in ("g1", "g2"):
        if name not in data:
            raise ConfigError(f"measurement is missing field '{name}'", field=name)
        values = parse_float_list(data[name], name)
        if len(values) != 3:
            raise ConfigError(f"field '{name}' needs 3 values, got {len(values)}", field=name)
        result[name] = values
    return result
