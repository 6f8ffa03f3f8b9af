# quantum_trilateration/optics.py
"""Closed-form forward model: Gaussian detection probabilities, g1, g2(0).

All functions are pure; arrays returned are freshly allocated.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np
from scipy import ndimage

from .exceptions import DomainError
from .scene import DetectorLayout, Emitter, MapGrid, MeasurementSet, Point, PsfModel, Scene

logger = logging.getLogger(__name__)

# sigma ~ 0.21 lambda / NA for the effective Gaussian PSF
PSF_SIGMA_FACTOR = 0.21


def g2_two_emitter(alpha_eff: float) -> float:
    """Zero-lag correlation of two single-photon emitters with brightness ratio ``alpha_eff``.

    Returns 2a/(1+a)^2, which peaks at 0.5 for a = 1 and is symmetric under a -> 1/a.
    """
    a = float(alpha_eff)
    if not math.isfinite(a) or a < 0:
        raise DomainError(f"alpha_eff must be finite and >= 0, got {alpha_eff!r}")
    return 2.0 * a / ((1.0 + a) * (1.0 + a))


def g2_n_colocated(n: int) -> float:
    """g2(0) of ``n`` co-located emitters of equal brightness: 1 - 1/n."""
    if isinstance(n, bool) or int(n) != n:
        raise DomainError(f"n must be a positive integer, got {n!r}")
    n = int(n)
    if n < 1:
        raise DomainError(f"n must be >= 1, got {n}")
    return 1.0 - 1.0 / n


def sigma_from_optics(wavelength: float, numerical_aperture: float) -> float:
    """PSF standard deviation, in the units of ``wavelength``."""
    wavelength = float(wavelength)
    numerical_aperture = float(numerical_aperture)
    if not (math.isfinite(wavelength) and wavelength > 0):
        raise DomainError(f"wavelength must be positive, got {wavelength}")
    if not (math.isfinite(numerical_aperture) and numerical_aperture > 0):
        raise DomainError(f"numerical aperture must be positive, got {numerical_aperture}")
    return PSF_SIGMA_FACTOR * wavelength / numerical_aperture


def _peak_scale(psf: PsfModel) -> float:
    # 1D Gaussian prefactor, kept as the model is stated; it cancels in g2
    # and in normalised maps.
    return 1.0 / math.sqrt(2.0 * math.pi * psf.sigma * psf.sigma)


def detection_probability(emitter: Emitter, detector_pos: Point, psf: PsfModel) -> float:
    """Probability of detecting a photon from ``emitter`` with the PSF centred at ``detector_pos``."""
    dx = emitter.x - float(detector_pos[0])
    dy = emitter.y - float(detector_pos[1])
    r2 = dx * dx + dy * dy
    return emitter.peak_brightness * _peak_scale(psf) * math.exp(-r2 / (2.0 * psf.sigma * psf.sigma))


def _gaussian_weights(x: float, y: float, px: np.ndarray, py: np.ndarray, sigma: float) -> np.ndarray:
    r2 = (px - x) ** 2 + (py - y) ** 2
    return np.exp(-r2 / (2.0 * sigma * sigma))


def detector_probabilities(scene: Scene, layout: DetectorLayout,
                           psf: PsfModel) -> Tuple[np.ndarray, np.ndarray]:
    """Per-detector detection probabilities (P1j, P2j) for both emitters."""
    pts = layout.as_array()
    scale = _peak_scale(psf)
    e1, e2 = scene.emitter1, scene.emitter2
    p1 = e1.peak_brightness * scale * _gaussian_weights(e1.x, e1.y, pts[:, 0], pts[:, 1], psf.sigma)
    p2 = e2.peak_brightness * scale * _gaussian_weights(e2.x, e2.y, pts[:, 0], pts[:, 1], psf.sigma)
    return p1, p2


def correlation_from_probabilities(p1: np.ndarray, p2: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """g1 = P1 + P2 and g2 = 2 P1 P2 / (P1 + P2)^2, with g2 = 0 where nothing is detected."""
    p1 = np.asarray(p1, dtype=float)
    p2 = np.asarray(p2, dtype=float)
    g1 = p1 + p2
    safe = np.where(g1 > 0, g1, 1.0)
    g2 = np.where(g1 > 0, 2.0 * p1 * p2 / (safe * safe), 0.0)
    return g1, g2


def forward_model(scene: Scene, layout: DetectorLayout, psf: PsfModel) -> MeasurementSet:
    """Exact (noise-free) g1 and g2(0) at each of the three detectors."""
    p1, p2 = detector_probabilities(scene, layout, psf)
    g1, g2 = correlation_from_probabilities(p1, p2)
    return MeasurementSet(
        g1=tuple(g1.tolist()),
        g2=tuple(g2.tolist()),
        noisy=False,
        p1=tuple(p1.tolist()),
        p2=tuple(p2.tolist()),
    )


def canonicalize_scene(scene: Scene) -> Scene:
    """Relabel emitters so that emitter 1 is the brighter one and rescale it to unit peak.

    The estimator fixes the brighter emitter's P0 at 1, so canonical scenes
    carry peak1 = 1 and peak2 = alpha <= 1. Fully dark scenes are returned
    unchanged.
    """
    e1, e2 = scene.emitter1, scene.emitter2
    if e2.peak_brightness > e1.peak_brightness:
        e1, e2 = e2, e1
    bright = e1.peak_brightness
    if bright <= 0 or (e1 is scene.emitter1 and bright == 1.0):
        return scene
    logger.debug("canonicalized scene: swapped=%s, peak scale %g", e1 is not scene.emitter1, bright)
    return Scene.from_params(e1.x, e1.y, e2.x, e2.y, e2.peak_brightness / bright)


@dataclass(frozen=True)
class ConfocalMap:
    """Normalised g1 sampled on a grid; ``values[iy, ix]`` is at (x[ix], y[iy])."""

    x: np.ndarray
    y: np.ndarray
    values: np.ndarray

    @property
    def pitch(self) -> float:
        if self.x.size > 1:
            return float(self.x[1] - self.x[0])
        return 0.0

    def peak(self) -> Tuple[float, float, float]:
        iy, ix = np.unravel_index(int(np.argmax(self.values)), self.values.shape)
        return float(self.x[ix]), float(self.y[iy]), float(self.values[iy, ix])


def confocal_map(scene: Scene, psf: PsfModel, grid: Optional[MapGrid] = None) -> ConfocalMap:
    """g1 of a single detector scanned across ``grid``, normalised to emitter 1's peak value."""
    grid = grid or MapGrid()
    xs, ys = grid.axes()
    gx, gy = np.meshgrid(xs, ys)
    e1, e2 = scene.emitter1, scene.emitter2
    intensity = (e1.peak_brightness * _gaussian_weights(e1.x, e1.y, gx, gy, psf.sigma)
                 + e2.peak_brightness * _gaussian_weights(e2.x, e2.y, gx, gy, psf.sigma))
    # the 1/sqrt(2 pi sigma^2) prefactor cancels against the normalisation
    reference = e1.peak_brightness or e2.peak_brightness or 1.0
    return ConfocalMap(x=xs, y=ys, values=intensity / reference)


def local_maxima(cmap: ConfocalMap, threshold_fraction: float = 0.1) -> List[Tuple[float, float, float]]:
    """Grid points that are maximal in their 3x3 neighbourhood and above a fraction of the peak."""
    values = cmap.values
    top = float(values.max()) if values.size else 0.0
    if top <= 0:
        return []
    neighbourhood = ndimage.maximum_filter(values, size=3, mode="nearest")
    mask = (values == neighbourhood) & (values >= threshold_fraction * top)
    iy, ix = np.nonzero(mask)
    return [(float(cmap.x[i]), float(cmap.y[j]), float(values[j, i])) for j, i in zip(iy, ix)]


@dataclass(frozen=True)
class CorrelationContours:
    """g1 and g2(0) at one detector as functions of the emitter distances (r1, r2)."""

    alpha: float
    r: np.ndarray
    g1: np.ndarray    # g1[i2, i1] at (r[i1], r[i2])
    g2: np.ndarray


def correlation_contours(alpha: float, psf: PsfModel, r_max: float = 2.0,
                         pitch: float = 0.02) -> CorrelationContours:
    """Tabulate g1 and g2(0) over emitter-detector distances, the data behind joint contour plots."""
    alpha = float(alpha)
    if not math.isfinite(alpha) or alpha < 0:
        raise DomainError(f"alpha must be finite and >= 0, got {alpha}")
    if r_max <= 0 or pitch <= 0:
        raise DomainError("r_max and pitch must be positive")
    r = np.linspace(0.0, r_max, int(round(r_max / pitch)) + 1)
    r1, r2 = np.meshgrid(r, r)
    scale = _peak_scale(psf)
    two_s2 = 2.0 * psf.sigma * psf.sigma
    p1 = scale * np.exp(-r1 ** 2 / two_s2)
    p2 = alpha * scale * np.exp(-r2 ** 2 / two_s2)
    g1, g2 = correlation_from_probabilities(p1, p2)
    return CorrelationContours(alpha=alpha, r=r, g1=g1, g2=g2)
