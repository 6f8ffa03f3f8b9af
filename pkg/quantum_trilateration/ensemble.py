# quantum_trilateration/ensemble.py
"""Monte Carlo harness: noisy trials per scene, 90% precision radii, eta sweeps."""
from __future__ import annotations

import logging
import math
import multiprocessing
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .estimator import FitConfig, FitResult, fit_scene
from .exceptions import DomainError, InsufficientDataError, UnlocalizableError
from .optics import canonicalize_scene, forward_model
from .scene import DetectorLayout, Point, PsfModel, Scene
from .synth import (
    DEFAULT_ALPHA_MIN,
    NoiseModel,
    apply_noise,
    fit_stream,
    noise_stream,
    sample_scene,
    scene_stream,
)

logger = logging.getLogger(__name__)

PAPER_N_TRIALS = 501
DESK_N_SCENES = 30
DESK_N_TRIALS = 101
DESK_ETA_VALUES = (0.01, 0.02, 0.05, 0.1, 0.15, 0.2)
MAX_SWEEP_ETA = 0.20

MIN_CONVERGED_FITS = 10
PRECISION_FRACTION = 0.9
# scenes where more than this share of trials fail are excluded
MAX_FAILURE_FRACTION = 0.5
# fitted alpha above which labels are assigned by proximity to the running cluster means
DEGENERATE_ALPHA = 0.95

STATUS_OK = "ok"
STATUS_DIM_UNLOCALIZED = "emitter2_unlocalized"
STATUS_EXCLUDED = "excluded"


@dataclass(frozen=True)
class TrialEnsemble:
    scene: Scene
    eta: float
    fits: Tuple[FitResult, ...]
    master_seed: int
    scene_index: int = 0

    @property
    def n_trials(self) -> int:
        return len(self.fits)

    @property
    def n_converged(self) -> int:
        return sum(1 for f in self.fits if f.converged)

    @property
    def convergence_fraction(self) -> float:
        return self.n_converged / self.n_trials if self.fits else 0.0


@dataclass(frozen=True)
class PrecisionSummary:
    mean1: Point
    mean2: Point
    radius1: float
    radius2: float
    summed_precision: float
    n_used: int
    relabelled: int = 0

    def encloses(self, emitter: int, point: Point) -> bool:
        """Whether ``point`` lies inside the 90% boundary of emitter 1 or 2."""
        if emitter not in (1, 2):
            raise DomainError(f"emitter must be 1 or 2, got {emitter}")
        mean, radius = (self.mean1, self.radius1) if emitter == 1 else (self.mean2, self.radius2)
        return math.hypot(point[0] - mean[0], point[1] - mean[1]) <= radius

    def to_dict(self) -> Dict:
        return {
            "mean1": list(self.mean1),
            "mean2": list(self.mean2),
            "radius1": self.radius1,
            "radius2": self.radius2,
            "summed_precision": self.summed_precision,
            "n_used": self.n_used,
            "relabelled": self.relabelled,
        }


@dataclass(frozen=True)
class SweepRecord:
    scene_id: int
    alpha: float
    eta: float
    summed_precision: float
    convergence_fraction: float
    radius1: float = math.nan
    radius2: float = math.nan
    status: str = STATUS_OK
    relabelled: int = 0

    FIELDS = ("scene_id", "alpha", "eta", "summed_precision", "convergence_fraction",
              "radius1", "radius2", "status", "relabelled")

    def to_row(self) -> List:
        return [getattr(self, name) for name in self.FIELDS]


@dataclass(frozen=True)
class BandFit:
    slope: float
    intercept: float
    residual: float
    n_points: int
    etas: Tuple[float, ...] = field(default=(), compare=False)
    medians: Tuple[float, ...] = field(default=(), compare=False)

    def to_dict(self) -> Dict:
        return {"slope": self.slope, "intercept": self.intercept,
                "residual": self.residual, "n_points": self.n_points,
                "etas": list(self.etas), "medians": list(self.medians)}


@dataclass(frozen=True)
class HistogramBin:
    eta: float
    lower: float
    upper: float
    count: int
    proportion: float

    FIELDS = ("eta", "lower", "upper", "count", "proportion")

    def to_row(self) -> List:
        return [getattr(self, name) for name in self.FIELDS]


# ---------------------------------------------------------------------------
# Trial execution
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class _TrialTask:
    scene: Scene
    eta: float
    trial_index: int
    scene_index: int
    layout: DetectorLayout
    psf: PsfModel
    fit_config: FitConfig
    master_seed: int


def _run_trial(task: _TrialTask) -> FitResult:
    exact = forward_model(task.scene, task.layout, task.psf)
    measured = apply_noise(exact, NoiseModel(task.eta),
                           noise_stream(task.master_seed, task.scene_index, task.trial_index))
    # every trial of a scene shares its start points, so the noise is the only varying input
    return fit_scene(measured, task.layout, task.psf, task.fit_config,
                     fit_stream(task.master_seed, task.scene_index))


def resolve_workers(workers: Optional[int]) -> int:
    if workers is None or workers <= 0:
        return os.cpu_count() or 1
    return int(workers)


def _execute(tasks: Sequence[_TrialTask], workers: int) -> List[FitResult]:
    """Run tasks and return results in task order regardless of completion order."""
    workers = min(resolve_workers(workers), max(len(tasks), 1))
    if workers <= 1:
        return [_run_trial(task) for task in tasks]
    chunksize = max(1, len(tasks) // (workers * 8))
    # callers may sit in a worker thread (asyncio.to_thread); forking there is unsafe
    context = multiprocessing.get_context("spawn")
    with ProcessPoolExecutor(max_workers=workers, mp_context=context) as pool:
        return list(pool.map(_run_trial, tasks, chunksize=chunksize))


def _trial_tasks(scene: Scene, eta: float, n_trials: int, scene_index: int,
                 layout: DetectorLayout, psf: PsfModel, fit_config: FitConfig,
                 master_seed: int) -> List[_TrialTask]:
    return [
        _TrialTask(scene, float(eta), t, scene_index, layout, psf, fit_config, master_seed)
        for t in range(n_trials)
    ]


def run_trials(scene: Scene, eta: float, n_trials: int, layout: DetectorLayout, psf: PsfModel,
               fit_config: FitConfig, master_seed: int, *, scene_index: int = 0,
               workers: int = 1) -> TrialEnsemble:
    """Fit ``n_trials`` independent noisy realisations of ``scene``; failed fits are kept.

    The scene is canonicalized first, so ``ensemble.scene`` is in the labels
    and brightness units the fits are reported in.
    """
    if n_trials < 1:
        raise DomainError(f"n_trials must be >= 1, got {n_trials}")
    eta = NoiseModel(eta).eta
    scene = canonicalize_scene(scene)
    tasks = _trial_tasks(scene, eta, n_trials, scene_index, layout, psf, fit_config, master_seed)
    fits = _execute(tasks, workers)
    ensemble = TrialEnsemble(scene=scene, eta=float(eta), fits=tuple(fits),
                             master_seed=master_seed, scene_index=scene_index)
    logger.info("scene %d eta=%g: %d/%d fits converged", scene_index, eta,
                ensemble.n_converged, ensemble.n_trials)
    return ensemble


# ---------------------------------------------------------------------------
# Precision
# ---------------------------------------------------------------------------

def assign_emitters(fits: Iterable[FitResult],
                    degenerate_alpha: float = DEGENERATE_ALPHA) -> Tuple[np.ndarray, np.ndarray, int]:
    """Positions attributed to emitters 1 and 2 for the converged fits.

    Labels follow the canonical alpha ordering. For near-equal brightness
    (fitted alpha above ``degenerate_alpha``) the labelling with the smaller
    total distance to the running cluster means is used instead; the number
    of such flips is returned alongside.
    """
    first: List[Point] = []
    second: List[Point] = []
    sum1 = np.zeros(2)
    sum2 = np.zeros(2)
    relabelled = 0
    for fit in fits:
        if not fit.converged:
            continue
        p = fit.params
        a, b = np.array([p.x1, p.y1]), np.array([p.x2, p.y2])
        if first and p.alpha > degenerate_alpha:
            m1 = sum1 / len(first)
            m2 = sum2 / len(second)
            keep = np.linalg.norm(a - m1) + np.linalg.norm(b - m2)
            swap = np.linalg.norm(b - m1) + np.linalg.norm(a - m2)
            if swap < keep:
                a, b = b, a
                relabelled += 1
        first.append((a[0], a[1]))
        second.append((b[0], b[1]))
        sum1 += a
        sum2 += b
    return (np.asarray(first, dtype=float).reshape(-1, 2),
            np.asarray(second, dtype=float).reshape(-1, 2),
            relabelled)


def boundary_radius(points: np.ndarray, fraction: float = PRECISION_FRACTION) -> Tuple[Point, float]:
    """Mean of ``points`` and the largest distance among the ``ceil(fraction * n)`` points closest to it."""
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    if points.shape[0] == 0:
        raise UnlocalizableError("no points to summarise")
    mean = points.mean(axis=0)
    distances = np.sort(np.hypot(points[:, 0] - mean[0], points[:, 1] - mean[1]))
    keep = max(1, math.ceil(round(fraction * points.shape[0], 9)))
    return (float(mean[0]), float(mean[1])), float(distances[keep - 1])


def precision_90(ensemble: TrialEnsemble, fraction: float = PRECISION_FRACTION) -> PrecisionSummary:
    """Per-emitter 90% boundary radii over the converged fits and their sum."""
    pos1, pos2, relabelled = assign_emitters(ensemble.fits)
    n = pos1.shape[0]
    if n < MIN_CONVERGED_FITS:
        raise UnlocalizableError(
            f"only {n} converged fits (need {MIN_CONVERGED_FITS}) for scene {ensemble.scene_index}"
        )
    mean1, radius1 = boundary_radius(pos1, fraction)
    mean2, radius2 = boundary_radius(pos2, fraction)
    return PrecisionSummary(
        mean1=mean1,
        mean2=mean2,
        radius1=radius1,
        radius2=radius2,
        summed_precision=radius1 + radius2,
        n_used=n,
        relabelled=relabelled,
    )


def summarize_ensemble(ensemble: TrialEnsemble, scene_id: int,
                       unlocalized_radius: float = 1.0) -> SweepRecord:
    """Reduce one (scene, eta) ensemble to a sweep record, marking failures instead of dropping them.

    Emitter 2 counts as unlocalized when its 90% radius exceeds
    ``unlocalized_radius`` or when its mean fitted position lies farther
    than that from the true position.
    """
    fraction = ensemble.convergence_fraction
    truth = canonicalize_scene(ensemble.scene)
    base = dict(scene_id=scene_id, alpha=truth.alpha, eta=ensemble.eta,
                convergence_fraction=fraction)
    if fraction < 1.0 - MAX_FAILURE_FRACTION:
        logger.warning("scene %d eta=%g excluded: %.0f%% of fits failed",
                       scene_id, ensemble.eta, 100 * (1 - fraction))
        return SweepRecord(summed_precision=math.nan, status=STATUS_EXCLUDED, **base)
    try:
        summary = precision_90(ensemble)
    except UnlocalizableError as exc:
        logger.warning("scene %d eta=%g excluded: %s", scene_id, ensemble.eta, exc)
        return SweepRecord(summed_precision=math.nan, status=STATUS_EXCLUDED, **base)
    true2 = truth.emitter2.position
    offset2 = math.hypot(summary.mean2[0] - true2[0], summary.mean2[1] - true2[1])
    unlocalized = summary.radius2 > unlocalized_radius or offset2 > unlocalized_radius
    if unlocalized:
        logger.info("scene %d eta=%g: emitter 2 unlocalized (radius %.3g, offset %.3g)",
                    scene_id, ensemble.eta, summary.radius2, offset2)
    status = STATUS_DIM_UNLOCALIZED if unlocalized else STATUS_OK
    return SweepRecord(
        summed_precision=summary.summed_precision,
        radius1=summary.radius1,
        radius2=summary.radius2,
        status=status,
        relabelled=summary.relabelled,
        **base,
    )


# ---------------------------------------------------------------------------
# Sweeps
# ---------------------------------------------------------------------------

def sample_scenes(n_scenes: int, master_seed: int, alpha_min: float = DEFAULT_ALPHA_MIN,
                  alpha_max: float = 1.0) -> List[Scene]:
    return [sample_scene(scene_stream(master_seed, k), alpha_min, alpha_max) for k in range(n_scenes)]


def sweep(n_scenes: int, eta_values: Sequence[float], n_trials: int, alpha_min: float,
          layout: DetectorLayout, psf: PsfModel, fit_config: FitConfig, master_seed: int, *,
          alpha_max: float = 1.0, workers: int = 1,
          progress: Optional[Callable[[int, int], None]] = None) -> List[SweepRecord]:
    """Evaluate every (scene, eta) pair of a random scene ensemble; one record per pair.

    Records are ordered scene-major, then by position in ``eta_values``.
    """
    if n_scenes < 1:
        raise DomainError(f"n_scenes must be >= 1, got {n_scenes}")
    if n_trials < 1:
        raise DomainError(f"n_trials must be >= 1, got {n_trials}")
    etas = [float(e) for e in eta_values]
    if not etas or any(not 0.0 <= e <= MAX_SWEEP_ETA for e in etas):
        raise DomainError(f"eta values must lie in [0, {MAX_SWEEP_ETA}], got {etas}")

    scenes = sample_scenes(n_scenes, master_seed, alpha_min, alpha_max)
    tasks: List[_TrialTask] = []
    for k, scene in enumerate(scenes):
        for eta in etas:
            tasks.extend(_trial_tasks(scene, eta, n_trials, k, layout, psf, fit_config, master_seed))
    logger.info("sweep: %d scenes x %d eta values x %d trials", n_scenes, len(etas), n_trials)
    fits = _execute(tasks, workers)

    records: List[SweepRecord] = []
    offset = 0
    for k, scene in enumerate(scenes):
        for eta in etas:
            ensemble = TrialEnsemble(scene=scene, eta=eta, fits=tuple(fits[offset:offset + n_trials]),
                                     master_seed=master_seed, scene_index=k)
            offset += n_trials
            records.append(summarize_ensemble(ensemble, k, unlocalized_radius=psf.sigma))
        if progress is not None:
            progress(k + 1, n_scenes)
    return records


def _usable(records: Iterable[SweepRecord], alpha_min: float, alpha_max: float) -> List[SweepRecord]:
    return [r for r in records
            if r.status == STATUS_OK and alpha_min <= r.alpha <= alpha_max
            and r.eta > 0 and math.isfinite(r.summed_precision) and r.summed_precision > 0]


def band_fit(records: Sequence[SweepRecord], alpha_max: float, alpha_min: float = 0.0) -> BandFit:
    """Log-log least-squares line of median summed precision against eta for one alpha band."""
    usable = _usable(records, alpha_min, alpha_max)
    by_eta: Dict[float, List[float]] = {}
    for r in usable:
        by_eta.setdefault(r.eta, []).append(r.summed_precision)
    if len(by_eta) < 3:
        raise InsufficientDataError(
            f"need records at >= 3 distinct eta values in alpha band [{alpha_min}, {alpha_max}], "
            f"got {len(by_eta)}"
        )
    etas = np.array(sorted(by_eta), dtype=float)
    medians = np.array([np.median(by_eta[e]) for e in etas], dtype=float)
    x, y = np.log(etas), np.log(medians)
    slope, intercept = np.polyfit(x, y, 1)
    fitted = slope * x + intercept
    residual = float(np.sqrt(np.mean((y - fitted) ** 2)))
    return BandFit(slope=float(slope), intercept=float(intercept), residual=residual,
                   n_points=int(etas.size), etas=tuple(etas.tolist()), medians=tuple(medians.tolist()))


def median_precision(records: Sequence[SweepRecord], eta: float, alpha_min: float = 0.0,
                     alpha_max: float = 1.0) -> float:
    values = [r.summed_precision for r in _usable(records, alpha_min, alpha_max) if r.eta == eta]
    if not values:
        raise InsufficientDataError(f"no usable records at eta={eta} in [{alpha_min}, {alpha_max}]")
    return float(np.median(values))


def default_histogram_edges(n_bins: int = 50, lower: float = 1e-4, upper: float = 10.0) -> np.ndarray:
    if n_bins < 1 or not 0 < lower < upper:
        raise DomainError("histogram needs n_bins >= 1 and 0 < lower < upper")
    return np.logspace(math.log10(lower), math.log10(upper), n_bins + 1)


def precision_histogram(records: Sequence[SweepRecord],
                        edges: Optional[np.ndarray] = None) -> List[HistogramBin]:
    """Per-eta share of scenes whose summed precision falls in each bin; out-of-range values go to the end bins."""
    edges = default_histogram_edges() if edges is None else np.asarray(edges, dtype=float)
    rows: List[HistogramBin] = []
    for eta in sorted({r.eta for r in records}):
        values = np.array([r.summed_precision for r in records
                           if r.eta == eta and r.status != STATUS_EXCLUDED
                           and math.isfinite(r.summed_precision)], dtype=float)
        clipped = np.clip(values, edges[0], edges[-1])
        counts, _ = np.histogram(clipped, bins=edges)
        total = int(counts.sum())
        for i, count in enumerate(counts):
            rows.append(HistogramBin(
                eta=eta,
                lower=float(edges[i]),
                upper=float(edges[i + 1]),
                count=int(count),
                proportion=float(count) / total if total else 0.0,
            ))
    return rows
