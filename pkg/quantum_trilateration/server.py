# quantum_trilateration/server.py
from typing import Any, Dict, List, Optional
import asyncio
import logging

from mcp.server.fastmcp import FastMCP

from .config import get_env_int
from .estimator import FitConfig, fit_scene
from .exceptions import TrilaterationError
from .optics import confocal_map, forward_model, g2_two_emitter, local_maxima, sigma_from_optics
from .scene import DetectorLayout, MapGrid, MeasurementSet, PsfModel, Scene
from .synth import default_layout, fit_stream
from .utils import parse_layout

# Initialize MCP server
mcp = FastMCP("quantum_trilateration_server")
logger = logging.getLogger(__name__)


def _layout(layout: Optional[str]) -> DetectorLayout:
    parsed = parse_layout(layout)
    if parsed == "default":
        return default_layout()
    return DetectorLayout(positions=tuple(tuple(p) for p in parsed))


def _error(exc: Exception) -> Dict[str, Any]:
    return {"status": "error", "message": str(exc)}


@mcp.tool()
async def g2_for_alpha(alpha: float) -> Dict[str, Any]:
    """Zero-lag correlation g2(0) of two single-photon emitters with brightness ratio alpha.

    Args:
        alpha: Brightness ratio P2/P1 (>= 0).
    Returns:
        Dictionary with alpha and g2.
    """
    try:
        return {"alpha": alpha, "g2": g2_two_emitter(alpha)}
    except TrilaterationError as exc:
        return _error(exc)


@mcp.tool()
async def sigma_for_optics(wavelength: float, numerical_aperture: float) -> Dict[str, Any]:
    """Gaussian PSF standard deviation, 0.21 * wavelength / NA, in the units of wavelength.

    Args:
        wavelength: Emission wavelength (e.g. in nm).
        numerical_aperture: Objective numerical aperture.
    """
    try:
        return {"sigma": sigma_from_optics(wavelength, numerical_aperture)}
    except TrilaterationError as exc:
        return _error(exc)


@mcp.tool()
async def forward_measurements(
    x1: float, y1: float, x2: float, y2: float, alpha: float,
    sigma: float = 1.0,
    layout: str = "default",
) -> Dict[str, Any]:
    """Exact intensity (g1) and g2(0) at the three detectors for a two-emitter scene.

    Args:
        x1, y1, x2, y2: Emitter positions in PSF-sigma units.
        alpha: Brightness ratio of emitter 2 to emitter 1.
        sigma: PSF standard deviation.
        layout: 'default' or 'x,y;x,y;x,y'.
    Returns:
        Dictionary with g1, g2 and the per-detector detection probabilities p1, p2.
    """
    try:
        scene = Scene.from_params(x1, y1, x2, y2, alpha)
        return forward_model(scene, _layout(layout), PsfModel(sigma)).to_dict()
    except TrilaterationError as exc:
        return _error(exc)


@mcp.tool()
async def fit_measurements(
    g1: List[float],
    g2: List[float],
    sigma: float = 1.0,
    layout: str = "default",
    n_starts: int = 32,
    seed: Optional[int] = None,
) -> Dict[str, Any]:
    """Recover both emitter positions and alpha from three g1 and three g2(0) values.

    Args:
        g1: Intensities at the three detectors.
        g2: Zero-lag correlations at the three detectors.
        sigma: PSF standard deviation.
        layout: 'default' or 'x,y;x,y;x,y'.
        n_starts: Number of Nelder-Mead starts.
        seed: Master seed for the start points.
    Returns:
        Canonicalised fit (alpha <= 1) with chi2 and convergence flag.
    """
    try:
        measured = MeasurementSet.from_vector(list(g1) + list(g2), noisy=True)
        stream = fit_stream(get_env_int("SEED", 0) if seed is None else seed, 0)
        fit = await asyncio.to_thread(
            fit_scene, measured, _layout(layout), PsfModel(sigma), FitConfig(n_starts=n_starts), stream
        )
        return fit.to_dict()
    except TrilaterationError as exc:
        return _error(exc)


@mcp.tool()
async def confocal_peaks(
    x1: float, y1: float, x2: float, y2: float, alpha: float,
    sigma: float = 1.0,
    pitch: float = 0.05,
    threshold: float = 0.1,
) -> Dict[str, Any]:
    """Local maxima of the normalised confocal map; one peak means the emitters are unresolved.

    Args:
        x1, y1, x2, y2: Emitter positions in PSF-sigma units.
        alpha: Brightness ratio of emitter 2 to emitter 1.
        sigma: PSF standard deviation.
        pitch: Grid pitch over [-2, 2] x [-2, 2].
        threshold: Fraction of the global peak below which maxima are ignored.
    """
    try:
        scene = Scene.from_params(x1, y1, x2, y2, alpha)
        cmap = confocal_map(scene, PsfModel(sigma), MapGrid(pitch=pitch))
        peaks = local_maxima(cmap, threshold)
        return {"peak": list(cmap.peak()), "local_maxima": [list(p) for p in peaks], "resolved": len(peaks) > 1}
    except TrilaterationError as exc:
        return _error(exc)


def main():
    mcp.run(transport="stdio")


if __name__ == "__main__":
    main()
