# quantum_trilateration/scene.py
"""Value types shared by the forward model, the estimator and the harness.

Lengths are in units of the PSF standard deviation unless stated otherwise.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Tuple

import numpy as np

from .exceptions import DomainError

logger = logging.getLogger(__name__)

Point = Tuple[float, float]

_MIN_TRIANGLE_AREA = 1e-9
_G2_BOUND_TOLERANCE = 1e-12


def _finite(name: str, value: float) -> float:
    value = float(value)
    if not math.isfinite(value):
        raise DomainError(f"{name} must be finite, got {value!r}")
    return value


@dataclass(frozen=True)
class PsfModel:
    """Gaussian point-spread function of the illumination/collection optics."""

    sigma: float = 1.0

    def __post_init__(self):
        sigma = _finite("sigma", self.sigma)
        if sigma <= 0:
            raise DomainError(f"sigma must be positive, got {sigma}")
        object.__setattr__(self, "sigma", sigma)


@dataclass(frozen=True)
class Emitter:
    x: float
    y: float
    peak_brightness: float = 1.0   # P0: detection probability scale at the PSF centre

    def __post_init__(self):
        object.__setattr__(self, "x", _finite("x", self.x))
        object.__setattr__(self, "y", _finite("y", self.y))
        peak = _finite("peak_brightness", self.peak_brightness)
        if peak < 0:
            raise DomainError(f"peak_brightness must be >= 0, got {peak}")
        object.__setattr__(self, "peak_brightness", peak)

    @property
    def position(self) -> Point:
        return (self.x, self.y)


@dataclass(frozen=True)
class Scene:
    """Two point emitters and their intrinsic brightness ratio.

    ``alpha`` duplicates ``emitter2.peak_brightness / emitter1.peak_brightness``
    and is checked against it whenever emitter 1 is not dark.
    """

    emitter1: Emitter
    emitter2: Emitter
    alpha: float

    def __post_init__(self):
        alpha = _finite("alpha", self.alpha)
        if alpha < 0:
            raise DomainError(f"alpha must be >= 0, got {alpha}")
        p1 = self.emitter1.peak_brightness
        if p1 > 0:
            ratio = self.emitter2.peak_brightness / p1
            if not math.isclose(ratio, alpha, rel_tol=1e-9, abs_tol=1e-12):
                raise DomainError(
                    f"alpha={alpha} is inconsistent with peak brightness ratio {ratio}"
                )
        object.__setattr__(self, "alpha", alpha)

    @classmethod
    def from_params(cls, x1: float, y1: float, x2: float, y2: float,
                    alpha: float, peak1: float = 1.0) -> "Scene":
        """Build a scene from the five fit parameters, with P01 = ``peak1``."""
        return cls(
            emitter1=Emitter(x1, y1, peak1),
            emitter2=Emitter(x2, y2, float(alpha) * float(peak1)),
            alpha=alpha,
        )

    @property
    def is_canonical(self) -> bool:
        return self.alpha <= 1.0

    def params(self) -> Tuple[float, float, float, float, float]:
        e1, e2 = self.emitter1, self.emitter2
        return (e1.x, e1.y, e2.x, e2.y, self.alpha)

    def to_dict(self) -> Dict:
        return {
            "x1": self.emitter1.x,
            "y1": self.emitter1.y,
            "x2": self.emitter2.x,
            "y2": self.emitter2.y,
            "alpha": self.alpha,
            "peak1": self.emitter1.peak_brightness,
            "peak2": self.emitter2.peak_brightness,
        }


@dataclass(frozen=True)
class DetectorLayout:
    """The three measurement positions in the focal plane."""

    positions: Tuple[Point, Point, Point]

    def __post_init__(self):
        points = tuple(
            (_finite("detector x", p[0]), _finite("detector y", p[1]))
            for p in self.positions
        )
        if len(points) != 3:
            raise DomainError(f"a layout needs exactly 3 detector positions, got {len(points)}")
        object.__setattr__(self, "positions", points)
        if self.triangle_area() <= _MIN_TRIANGLE_AREA:
            raise DomainError(f"detector positions are collinear: {points}")

    def triangle_area(self) -> float:
        (ax, ay), (bx, by), (cx, cy) = self.positions
        return 0.5 * abs((bx - ax) * (cy - ay) - (cx - ax) * (by - ay))

    def as_array(self) -> np.ndarray:
        return np.asarray(self.positions, dtype=float)

    def to_list(self) -> List[List[float]]:
        return [[x, y] for x, y in self.positions]


@dataclass(frozen=True)
class MeasurementSet:
    """Per-detector intensity g1 and zero-lag correlation g2.

    Exact sets come from the forward model and obey 0 <= g2 <= 0.5; noisy
    (measured) sets carry no bounds since noise is applied multiplicatively.
    """

    g1: Tuple[float, float, float]
    g2: Tuple[float, float, float]
    noisy: bool = False
    p1: Tuple[float, ...] = field(default=(), compare=False)
    p2: Tuple[float, ...] = field(default=(), compare=False)

    def __post_init__(self):
        g1 = tuple(float(v) for v in self.g1)
        g2 = tuple(float(v) for v in self.g2)
        if len(g1) != 3 or len(g2) != 3:
            raise DomainError("a measurement set holds exactly 3 g1 and 3 g2 values")
        object.__setattr__(self, "g1", g1)
        object.__setattr__(self, "g2", g2)
        object.__setattr__(self, "p1", tuple(float(v) for v in self.p1))
        object.__setattr__(self, "p2", tuple(float(v) for v in self.p2))
        if not self.noisy:
            if any(v < 0 for v in g1):
                raise DomainError(f"exact g1 values must be non-negative: {g1}")
            if any(v < 0 or v > 0.5 + _G2_BOUND_TOLERANCE for v in g2):
                raise DomainError(f"exact g2 values must lie in [0, 0.5]: {g2}")
        elif any(v > 0.5 for v in g2):
            logger.debug("noisy g2 above the two-emitter bound 0.5: %s", g2)

    @classmethod
    def from_vector(cls, values: Sequence[float], noisy: bool = True) -> "MeasurementSet":
        values = [float(v) for v in values]
        if len(values) != 6:
            raise DomainError(f"expected 6 measurement values, got {len(values)}")
        return cls(g1=tuple(values[:3]), g2=tuple(values[3:]), noisy=noisy)

    def as_vector(self) -> np.ndarray:
        """The six values in the fixed order g1[0..2], g2[0..2]."""
        return np.array(self.g1 + self.g2, dtype=float)

    def is_finite(self) -> bool:
        return all(math.isfinite(v) for v in self.g1 + self.g2)

    def to_dict(self) -> Dict:
        data = {"g1": list(self.g1), "g2": list(self.g2), "noisy": self.noisy}
        if self.p1:
            data["p1"] = list(self.p1)
            data["p2"] = list(self.p2)
        return data


@dataclass(frozen=True)
class MapGrid:
    """Rectangular sample grid for confocal maps, inclusive of both edges."""

    x_min: float = -2.0
    x_max: float = 2.0
    y_min: float = -2.0
    y_max: float = 2.0
    pitch: float = 0.05

    def __post_init__(self):
        for name in ("x_min", "x_max", "y_min", "y_max", "pitch"):
            _finite(name, getattr(self, name))
        if self.pitch <= 0:
            raise DomainError(f"grid pitch must be positive, got {self.pitch}")
        if self.x_max < self.x_min or self.y_max < self.y_min:
            raise DomainError("grid extent is empty")

    def axes(self) -> Tuple[np.ndarray, np.ndarray]:
        nx = int(round((self.x_max - self.x_min) / self.pitch)) + 1
        ny = int(round((self.y_max - self.y_min) / self.pitch)) + 1
        return (np.linspace(self.x_min, self.x_max, nx),
                np.linspace(self.y_min, self.y_max, ny))

    def to_dict(self) -> Dict:
        return {"x_min": self.x_min, "x_max": self.x_max,
                "y_min": self.y_min, "y_max": self.y_max, "pitch": self.pitch}
