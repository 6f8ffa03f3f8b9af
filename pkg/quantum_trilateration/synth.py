# quantum_trilateration/synth.py
"""Seeded scene sampling and the multiplicative counting-noise model.

Random numbers come from numpy's counter-based Philox generator keyed by a
``SeedSequence(master_seed, spawn_key=...)``. A stream is fully identified
by ``(master_seed, path, stream_index)``, so any trial can be regenerated
in isolation and in any order.

Stream layout used by the harness:

* scene ``k``                    -> path ``(0,)``, index ``k``
* noise for trial ``t`` of scene ``k`` -> path ``(1, k)``, index ``t``
* fit starts for scene ``k``     -> path ``(2, k)``, index ``0``; start ``s`` is ``child(s)``
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from .exceptions import DomainError
from .scene import DetectorLayout, MeasurementSet, Point, Scene

logger = logging.getLogger(__name__)

DEFAULT_ALPHA_MIN = 0.05

SCENE_PATH = 0
NOISE_PATH = 1
FIT_PATH = 2


@dataclass(frozen=True)
class NoiseModel:
    """Relative counting noise, eta = 1/sqrt(N) for N detected coincidences."""

    eta: float = 0.0

    def __post_init__(self):
        eta = float(self.eta)
        if not math.isfinite(eta) or not 0.0 <= eta <= 1.0:
            raise DomainError(f"eta must lie in [0, 1], got {self.eta!r}")
        object.__setattr__(self, "eta", eta)

    @classmethod
    def from_counts(cls, coincidences: float) -> "NoiseModel":
        if coincidences <= 0:
            raise DomainError(f"coincidence count must be positive, got {coincidences}")
        return cls(eta=1.0 / math.sqrt(coincidences))


@dataclass(frozen=True)
class RngStream:
    master_seed: int
    stream_index: int = 0
    path: Tuple[int, ...] = ()

    def __post_init__(self):
        if int(self.master_seed) < 0 or int(self.master_seed) >= 2 ** 64:
            raise DomainError(f"master_seed must be a 64-bit unsigned integer, got {self.master_seed}")
        if int(self.stream_index) < 0:
            raise DomainError(f"stream_index must be >= 0, got {self.stream_index}")
        object.__setattr__(self, "master_seed", int(self.master_seed))
        object.__setattr__(self, "stream_index", int(self.stream_index))
        object.__setattr__(self, "path", tuple(int(p) for p in self.path))

    @property
    def spawn_key(self) -> Tuple[int, ...]:
        return self.path + (self.stream_index,)

    def child(self, index: int) -> "RngStream":
        """An index-isolated substream below this one."""
        return RngStream(self.master_seed, index, self.spawn_key)

    def generator(self) -> np.random.Generator:
        """A fresh generator positioned at the start of this stream."""
        seq = np.random.SeedSequence(self.master_seed, spawn_key=self.spawn_key)
        return np.random.Generator(np.random.Philox(seq))


def scene_stream(master_seed: int, scene_index: int) -> RngStream:
    return RngStream(master_seed, scene_index, (SCENE_PATH,))


def noise_stream(master_seed: int, scene_index: int, trial_index: int) -> RngStream:
    return RngStream(master_seed, trial_index, (NOISE_PATH, scene_index))


def fit_stream(master_seed: int, scene_index: int) -> RngStream:
    return RngStream(master_seed, 0, (FIT_PATH, scene_index))


def uniform_disk(gen: np.random.Generator, radius: float = 1.0) -> Point:
    """Area-uniform point in a disk: r = R sqrt(u), theta = 2 pi v."""
    u, v = gen.random(2)
    r = radius * math.sqrt(u)
    theta = 2.0 * math.pi * v
    return (r * math.cos(theta), r * math.sin(theta))


def sample_scene(rng: RngStream, alpha_min: float = DEFAULT_ALPHA_MIN,
                 alpha_max: float = 1.0) -> Scene:
    """Random scene: both emitters uniform in the unit disk, alpha uniform on (alpha_min, alpha_max]."""
    if not 0.0 <= alpha_min < 1.0:
        raise DomainError(f"alpha_min must lie in [0, 1), got {alpha_min}")
    if not alpha_min < alpha_max <= 1.0:
        raise DomainError(f"alpha_max must lie in (alpha_min, 1], got {alpha_max}")
    gen = rng.generator()
    x1, y1 = uniform_disk(gen)
    x2, y2 = uniform_disk(gen)
    # u in [0, 1) maps onto (alpha_min, alpha_max]
    alpha = alpha_max - (alpha_max - alpha_min) * float(gen.random())
    return Scene.from_params(x1, y1, x2, y2, alpha, peak1=1.0)


def apply_noise(exact: MeasurementSet, noise: NoiseModel, rng: RngStream) -> MeasurementSet:
    """Multiply each value by (1 + eta z), z standard normal, without clamping.

    Exactly six deviates are drawn, consumed in the order g1[0..2] then g2[0..2].
    """
    if exact.noisy:
        raise DomainError("noise can only be applied to an exact measurement set")
    z = rng.generator().standard_normal(6)
    noisy = exact.as_vector() * (1.0 + noise.eta * z)
    return MeasurementSet(
        g1=tuple(noisy[:3].tolist()),
        g2=tuple(noisy[3:].tolist()),
        noisy=True,
        p1=exact.p1,
        p2=exact.p2,
    )


def default_layout() -> DetectorLayout:
    """Detectors at (0, 1), (sqrt 2, -0.5) and (-sqrt 2, -0.5)."""
    root2 = math.sqrt(2.0)
    return DetectorLayout(positions=((0.0, 1.0), (root2, -0.5), (-root2, -0.5)))
