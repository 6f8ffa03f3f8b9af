# quantum_trilateration/estimator.py
"""Recover two emitter positions and their brightness ratio from six measurements.

Intensities are in units of the brighter emitter's peak detection probability,
so a trial scene has P0 = 1 for its brighter emitter and P0 = min(alpha, 1/alpha)
for the other. The objective is the plain sum of squared differences between the six
measured values and the forward model of a trial scene. It is minimised by
Nelder-Mead simplex searches from several random starts.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Dict, Sequence, Tuple

import numpy as np
from scipy.optimize import minimize

from .exceptions import DomainError
from .optics import forward_model
from .scene import DetectorLayout, MeasurementSet, PsfModel, Scene
from .synth import RngStream, uniform_disk

logger = logging.getLogger(__name__)

# added to chi^2 for alpha <= 0 trials, growing with |alpha| to steer the simplex back
NEGATIVE_ALPHA_PENALTY = 1e6
TIE_TOLERANCE = 1e-15
START_ALPHA_RANGE = (0.05, 1.0)


@dataclass(frozen=True)
class TrialParams:
    x1: float
    y1: float
    x2: float
    y2: float
    alpha: float

    def __post_init__(self):
        for name in ("x1", "y1", "x2", "y2", "alpha"):
            value = float(getattr(self, name))
            if not math.isfinite(value):
                raise DomainError(f"trial parameter {name} must be finite, got {value!r}")
            object.__setattr__(self, name, value)
        if self.alpha <= 0:
            raise DomainError(f"trial alpha must be positive, got {self.alpha}")

    @classmethod
    def from_vector(cls, vector: Sequence[float]) -> "TrialParams":
        x1, y1, x2, y2, alpha = (float(v) for v in vector)
        return cls(x1, y1, x2, y2, alpha)

    @classmethod
    def from_scene(cls, scene: Scene) -> "TrialParams":
        return cls(*scene.params())

    def as_vector(self) -> np.ndarray:
        return np.array([self.x1, self.y1, self.x2, self.y2, self.alpha], dtype=float)

    def peaks(self) -> Tuple[float, float]:
        """(P01, P02) with the brighter emitter at unit peak brightness."""
        if self.alpha > 1.0:
            return 1.0 / self.alpha, 1.0
        return 1.0, self.alpha

    def to_scene(self) -> Scene:
        peak1, _ = self.peaks()
        return Scene.from_params(self.x1, self.y1, self.x2, self.y2, self.alpha, peak1=peak1)

    def swapped(self) -> "TrialParams":
        """The same physical scene with emitter labels exchanged."""
        return TrialParams(self.x2, self.y2, self.x1, self.y1, 1.0 / self.alpha)

    def to_dict(self) -> Dict[str, float]:
        return {"x1": self.x1, "y1": self.y1, "x2": self.x2, "y2": self.y2, "alpha": self.alpha}


@dataclass(frozen=True)
class FitConfig:
    n_starts: int = 32
    start_box_radius: float = 1.5
    xatol: float = 1e-6      # simplex size in parameter space
    fatol: float = 1e-12     # chi^2 spread across the simplex
    max_iterations: int = 2000
    initial_step: float = 0.25

    def __post_init__(self):
        if int(self.n_starts) < 1:
            raise DomainError(f"n_starts must be >= 1, got {self.n_starts}")
        if int(self.max_iterations) < 1:
            raise DomainError(f"max_iterations must be >= 1, got {self.max_iterations}")
        for name in ("start_box_radius", "xatol", "fatol", "initial_step"):
            value = float(getattr(self, name))
            if not (math.isfinite(value) and value > 0):
                raise DomainError(f"{name} must be positive, got {value}")
            object.__setattr__(self, name, value)
        object.__setattr__(self, "n_starts", int(self.n_starts))
        object.__setattr__(self, "max_iterations", int(self.max_iterations))

    def to_dict(self) -> Dict:
        return {
            "n_starts": self.n_starts,
            "start_box_radius": self.start_box_radius,
            "xatol": self.xatol,
            "fatol": self.fatol,
            "max_iterations": self.max_iterations,
            "initial_step": self.initial_step,
        }

    @classmethod
    def from_dict(cls, data: Dict) -> "FitConfig":
        known = {k: v for k, v in (data or {}).items() if k in cls.__dataclass_fields__}
        return cls(**known)


@dataclass(frozen=True)
class FitResult:
    params: TrialParams
    chi2: float
    iterations: int
    converged: bool
    starts_used: int
    evaluations: int = field(default=0, compare=False)

    def to_dict(self) -> Dict:
        return {
            **self.params.to_dict(),
            "chi2": self.chi2 if math.isfinite(self.chi2) else None,
            "iterations": self.iterations,
            "converged": self.converged,
            "starts_used": self.starts_used,
        }


def chi_squared(trial: TrialParams, measured: MeasurementSet, layout: DetectorLayout,
                psf: PsfModel) -> float:
    """Sum of squared differences between the trial scene's six predicted values and ``measured``."""
    if not isinstance(trial, TrialParams):
        trial = TrialParams.from_vector(trial)
    predicted = forward_model(trial.to_scene(), layout, psf).as_vector()
    residual = predicted - measured.as_vector()
    return float(np.dot(residual, residual))


class _Objective:
    """Scalar chi^2 over the raw 5-vector, evaluated with plain floats for speed."""

    def __init__(self, measured: MeasurementSet, layout: DetectorLayout, psf: PsfModel):
        self.targets = tuple(measured.as_vector().tolist())
        self.detectors = layout.positions
        self.scale = 1.0 / math.sqrt(2.0 * math.pi * psf.sigma * psf.sigma)
        self.inv_two_s2 = 1.0 / (2.0 * psf.sigma * psf.sigma)
        self.calls = 0

    def __call__(self, v: np.ndarray) -> float:
        self.calls += 1
        x1, y1, x2, y2, alpha = (float(c) for c in v)
        if not all(math.isfinite(c) for c in (x1, y1, x2, y2, alpha)):
            return math.inf
        if alpha <= 0:
            return NEGATIVE_ALPHA_PENALTY * (1.0 + abs(alpha))
        # brighter emitter at unit peak; chi^2 is then invariant under a label swap
        b1, b2 = (1.0 / alpha, 1.0) if alpha > 1.0 else (1.0, alpha)
        t = self.targets
        total = 0.0
        for j, (dx, dy) in enumerate(self.detectors):
            p1 = b1 * self.scale * math.exp(-((x1 - dx) ** 2 + (y1 - dy) ** 2) * self.inv_two_s2)
            p2 = b2 * self.scale * math.exp(-((x2 - dx) ** 2 + (y2 - dy) ** 2) * self.inv_two_s2)
            g1 = p1 + p2
            g2 = 2.0 * p1 * p2 / (g1 * g1) if g1 > 0 else 0.0
            total += (g1 - t[j]) ** 2 + (g2 - t[3 + j]) ** 2
        return total


# reported when every start diverges; converged=False marks it as unusable
_FAILED_PARAMS = TrialParams(0.0, 0.0, 0.0, 0.0, 1.0)


def canonicalize(fit: FitResult) -> FitResult:
    """Swap emitter labels when alpha > 1 so that emitter 1 is the brighter one."""
    if fit.params.alpha <= 1.0:
        return fit
    return replace(fit, params=fit.params.swapped())


def random_start(rng: RngStream, radius: float) -> np.ndarray:
    """Start vector: both positions uniform in a disk of ``radius``, alpha uniform in a positive interval."""
    gen = rng.generator()
    x1, y1 = uniform_disk(gen, radius)
    x2, y2 = uniform_disk(gen, radius)
    lo, hi = START_ALPHA_RANGE
    alpha = lo + (hi - lo) * float(gen.random())
    return np.array([x1, y1, x2, y2, alpha], dtype=float)


def _initial_simplex(x0: np.ndarray, step: float) -> np.ndarray:
    simplex = np.tile(x0, (x0.size + 1, 1))
    for i in range(x0.size):
        simplex[i + 1, i] += step
    return simplex


def fit_scene(measured: MeasurementSet, layout: DetectorLayout, psf: PsfModel,
              config: FitConfig, rng: RngStream) -> FitResult:
    """Multi-start Nelder-Mead inversion; returns the canonicalised lowest-chi^2 result.

    Start ``s`` draws from ``rng.child(s)``. Ties within 1e-15 keep the lower start
    index. Failures are reported through ``converged=False``, never raised.
    """
    if not measured.is_finite():
        raise DomainError(f"measurements must be finite: {measured.to_dict()}")

    objective = _Objective(measured, layout, psf)
    options = {
        "xatol": config.xatol,
        "fatol": config.fatol,
        "maxiter": config.max_iterations,
        "maxfev": config.max_iterations * 4,
    }

    best = None
    for s in range(config.n_starts):
        x0 = random_start(rng.child(s), config.start_box_radius)
        try:
            res = minimize(objective, x0, method="Nelder-Mead",
                           options={**options, "initial_simplex": _initial_simplex(x0, config.initial_step)})
        except (ValueError, FloatingPointError) as exc:
            logger.debug("start %d failed: %s", s, exc)
            continue
        value = float(res.fun)
        logger.debug("start %d: chi2=%.3e nit=%d success=%s", s, value, res.nit, res.success)
        if not math.isfinite(value) or not np.all(np.isfinite(res.x)) or res.x[4] <= 0:
            continue
        if best is None or value < best[0] - TIE_TOLERANCE:
            best = (value, res)

    if best is None:
        logger.warning("all %d starts diverged", config.n_starts)
        return FitResult(
            params=_FAILED_PARAMS,
            chi2=math.inf,
            iterations=0,
            converged=False,
            starts_used=config.n_starts,
            evaluations=objective.calls,
        )

    value, res = best
    fit = FitResult(
        params=TrialParams.from_vector(res.x),
        chi2=value,
        iterations=int(res.nit),
        converged=bool(res.success),
        starts_used=config.n_starts,
        evaluations=objective.calls,
    )
    return canonicalize(fit)
