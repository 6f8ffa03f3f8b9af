#!/usr/bin/env python3
"""CLI interface for qtrilat: forward model, fits, trial ensembles, sweeps and confocal maps."""

from __future__ import annotations

import argparse
import asyncio
import json
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

from .config import RunConfig, env_defaults, load_run_config
from .ensemble import (
    HistogramBin,
    SweepRecord,
    band_fit,
    default_histogram_edges,
    precision_90,
    precision_histogram,
    run_trials,
    sweep,
)
from .estimator import FitConfig, fit_scene
from .exceptions import ConfigError, DomainError, InsufficientDataError, OutputError, UnlocalizableError
from .optics import canonicalize_scene, confocal_map, correlation_contours, forward_model, local_maxima
from .output import read_measurement_file, write_csv, write_json
from .scene import DetectorLayout, MapGrid, MeasurementSet, PsfModel, Scene
from .synth import default_layout, fit_stream
from .utils import parse_float_list, parse_layout, parse_measurement_spec, parse_scene_spec

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_UNLOCALIZED = 3
EXIT_IO = 4

# alpha bands reported with every sweep
LOWER_BAND = (0.0, 0.5)
UPPER_BAND = (0.5, 1.0)


def _emit(payload: Dict[str, Any]) -> None:
    print(json.dumps(payload, default=str))


# ---------------------------------------------------------------------------
# Config -> domain objects
# ---------------------------------------------------------------------------

def _psf(config: RunConfig) -> PsfModel:
    return PsfModel(sigma=float(config.sigma))


def _layout(config: RunConfig) -> DetectorLayout:
    layout = parse_layout(config.layout)
    if layout == "default":
        return default_layout()
    return DetectorLayout(positions=tuple(tuple(p) for p in layout))


def _fit_config(config: RunConfig) -> FitConfig:
    try:
        return FitConfig.from_dict(config.fit)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid fit config: {exc}", field="fit") from exc


def _scene(config: RunConfig) -> Scene:
    if not config.scene:
        raise ConfigError(f"'{config.command}' needs a scene (--scene x1=..,y1=..,x2=..,y2=..,alpha=..)",
                          field="scene")
    spec = parse_scene_spec(config.scene)
    return Scene.from_params(spec["x1"], spec["y1"], spec["x2"], spec["y2"], spec["alpha"],
                             peak1=spec.get("peak1", 1.0))


def _measurement(config: RunConfig) -> MeasurementSet:
    if config.measurement:
        spec = parse_measurement_spec(config.measurement)
        return MeasurementSet.from_vector(spec["g1"] + spec["g2"], noisy=True)
    if config.measurement_file:
        return read_measurement_file(config.measurement_file)
    raise ConfigError("'fit' needs --measurement or --measurement-file", field="measurement")


def _grid(config: RunConfig) -> MapGrid:
    try:
        return MapGrid(**config.grid)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid grid config: {exc}", field="grid") from exc


def _out(config: RunConfig, name: str) -> Path:
    return Path(config.out).expanduser() / name


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

async def cmd_forward(config: RunConfig) -> int:
    scene = _scene(config)
    layout = _layout(config)
    measurement = forward_model(scene, layout, _psf(config))
    path = write_json(_out(config, "forward.json"), {
        "scene": scene.to_dict(),
        "layout": layout.to_list(),
        "measurement": measurement.to_dict(),
    }, config)
    _emit({"status": "ok", "path": str(path), "g1": list(measurement.g1), "g2": list(measurement.g2)})
    return EXIT_OK


async def cmd_fit(config: RunConfig) -> int:
    measured = _measurement(config)
    if not measured.is_finite():
        raise ConfigError("measurement values must be finite", field="measurement")
    fit_config = _fit_config(config)
    fit = await asyncio.to_thread(
        fit_scene, measured, _layout(config), _psf(config), fit_config, fit_stream(config.seed, 0)
    )
    path = write_json(_out(config, "fit.json"), {
        "measurement": measured.to_dict(),
        "fit": fit.to_dict(),
    }, config)
    if not fit.converged:
        logger.warning("fit did not converge (chi2=%s)", fit.chi2)
        _emit({"status": "unconverged", "path": str(path), "fit": fit.to_dict()})
        return EXIT_UNLOCALIZED
    _emit({"status": "ok", "path": str(path), "fit": fit.to_dict()})
    return EXIT_OK


async def cmd_trials(config: RunConfig) -> int:
    scene = canonicalize_scene(_scene(config))
    ensemble = await asyncio.to_thread(
        run_trials, scene, float(config.eta), int(config.n_trials), _layout(config), _psf(config),
        _fit_config(config), int(config.seed), workers=int(config.workers),
    )
    header = ["trial", "converged", "chi2", "x1", "y1", "x2", "y2", "alpha", "iterations"]
    rows = [
        [t, f.converged, f.chi2, f.params.x1, f.params.y1, f.params.x2, f.params.y2, f.params.alpha, f.iterations]
        for t, f in enumerate(ensemble.fits)
    ]
    scatter = write_csv(_out(config, "trials.csv"), header, rows, config,
                        extra={"scene": scene.to_dict(), "eta": ensemble.eta})

    payload: Dict[str, Any] = {
        "scene": scene.to_dict(),
        "eta": ensemble.eta,
        "n_trials": ensemble.n_trials,
        "convergence_fraction": ensemble.convergence_fraction,
    }
    exit_code = EXIT_OK
    try:
        summary = precision_90(ensemble)
        payload["precision"] = summary.to_dict()
        payload["true_inside"] = {
            "emitter1": summary.encloses(1, scene.emitter1.position),
            "emitter2": summary.encloses(2, scene.emitter2.position),
        }
    except UnlocalizableError as exc:
        logger.warning("%s", exc)
        payload["precision"] = None
        payload["error"] = str(exc)
        exit_code = EXIT_UNLOCALIZED
    path = write_json(_out(config, "trials_summary.json"), payload, config)
    _emit({"status": "ok" if exit_code == EXIT_OK else "unlocalized",
           "paths": [str(scatter), str(path)], "precision": payload["precision"]})
    return exit_code


def _band_fits(records: List[SweepRecord]) -> Dict[str, Any]:
    bands: Dict[str, Any] = {}
    for name, (lo, hi) in (("lower", LOWER_BAND), ("upper", UPPER_BAND)):
        try:
            bands[name] = {"alpha_min": lo, "alpha_max": hi, **band_fit(records, hi, alpha_min=lo).to_dict()}
        except InsufficientDataError as exc:
            bands[name] = {"alpha_min": lo, "alpha_max": hi, "error": str(exc)}
    return bands


async def cmd_sweep(config: RunConfig) -> int:
    eta_values = parse_float_list(config.eta_values, "eta_values")

    def progress(done: int, total: int) -> None:
        logger.info("summarised %d/%d scenes", done, total)

    records = await asyncio.to_thread(
        sweep, int(config.n_scenes), eta_values, int(config.n_trials), float(config.alpha_min),
        _layout(config), _psf(config), _fit_config(config), int(config.seed),
        alpha_max=float(config.alpha_max), workers=int(config.workers), progress=progress,
    )
    bands = _band_fits(records)
    table = write_csv(_out(config, "sweep.csv"), SweepRecord.FIELDS, (r.to_row() for r in records),
                      config, extra={"band_fits": bands, "exclusion_rule": "scene excluded when > 50% of "
                                     "trials fail or fewer than 10 fits converge"})
    bins = precision_histogram(records, default_histogram_edges(int(config.histogram_bins)))
    histogram = write_csv(_out(config, "sweep_histogram.csv"), HistogramBin.FIELDS,
                          (b.to_row() for b in bins), config)
    _emit({"status": "ok", "paths": [str(table), str(histogram)], "records": len(records), "band_fits": bands})
    return EXIT_OK


async def cmd_map(config: RunConfig) -> int:
    scene = _scene(config)
    grid = _grid(config)
    cmap = confocal_map(scene, _psf(config), grid)
    peaks = local_maxima(cmap, 0.1)
    rows = (
        [x, y, cmap.values[iy, ix]]
        for iy, y in enumerate(cmap.y.tolist())
        for ix, x in enumerate(cmap.x.tolist())
    )
    path = write_csv(_out(config, "map.csv"), ["x", "y", "intensity"], rows, config,
                     extra={"scene": scene.to_dict(), "peak": list(cmap.peak()), "local_maxima": peaks})
    _emit({"status": "ok", "path": str(path), "peak": list(cmap.peak()), "local_maxima": len(peaks)})
    return EXIT_OK


async def cmd_contours(config: RunConfig) -> int:
    grid = _grid(config)
    r_max = max(abs(grid.x_min), abs(grid.x_max), abs(grid.y_min), abs(grid.y_max))
    contours = correlation_contours(float(config.contour_alpha), _psf(config), r_max=r_max, pitch=grid.pitch)
    rows = (
        [r1, r2, contours.g1[i2, i1], contours.g2[i2, i1]]
        for i2, r2 in enumerate(contours.r.tolist())
        for i1, r1 in enumerate(contours.r.tolist())
    )
    path = write_csv(_out(config, "contours.csv"), ["r1", "r2", "g1", "g2"], rows, config,
                     extra={"alpha": contours.alpha})
    _emit({"status": "ok", "path": str(path)})
    return EXIT_OK


# ---------------------------------------------------------------------------
# CLI entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="Master seed (default: $QTRILAT_SEED or 0)")
    common.add_argument("--sigma", type=float, default=None, help="PSF standard deviation (default: 1)")
    common.add_argument("--eta", type=float, default=None, help="Relative noise level (default: 0.01)")
    common.add_argument("--layout", default=None,
                        help="'default' or three pairs 'x,y;x,y;x,y' in sigma units")
    common.add_argument("-o", "--out", default=None, help="Output directory (default: ./qtrilat-output)")
    common.add_argument("-w", "--workers", type=int, default=None,
                        help="Worker processes, 0 = all cores (default: 0)")
    common.add_argument("-c", "--config", default=None,
                        help="YAML/JSON config file, or an earlier output file; overrides flags")
    common.add_argument("-v", "--verbose", action="count", default=0, help="-v for INFO, -vv for DEBUG")

    parser = argparse.ArgumentParser(
        prog="qtrilat",
        description="Two-emitter localisation from intensity and g2(0) at three detector positions.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    # forward
    p_fwd = sub.add_parser("forward", parents=[common], help="Exact g1/g2 values for a scene")
    p_fwd.add_argument("--scene", default=None, help="x1=..,y1=..,x2=..,y2=..,alpha=..[,peak1=..]")

    # fit
    p_fit = sub.add_parser("fit", parents=[common], help="Recover a scene from six measurements")
    p_fit.add_argument("--measurement", default=None, help="'g1=a,b,c;g2=d,e,f'")
    p_fit.add_argument("--measurement-file", default=None, help="JSON file, e.g. an earlier forward.json")
    p_fit.add_argument("--n-starts", type=int, default=None, help="Simplex starts (default: 32)")

    # trials
    p_trials = sub.add_parser("trials", parents=[common], help="Repeated noisy fits of one scene")
    p_trials.add_argument("--scene", default=None, help="x1=..,y1=..,x2=..,y2=..,alpha=..")
    p_trials.add_argument("-n", "--n-trials", type=int, default=None, help="Trials (default: 101)")
    p_trials.add_argument("--n-starts", type=int, default=None, help="Simplex starts per fit (default: 32)")

    # sweep
    p_sweep = sub.add_parser("sweep", parents=[common], help="Precision vs eta over random scenes")
    p_sweep.add_argument("--n-scenes", type=int, default=None, help="Random scenes (default: 30)")
    p_sweep.add_argument("--eta-values", default=None,
                         help="Comma-separated eta values (default: 0.01,0.02,0.05,0.1,0.15,0.2)")
    p_sweep.add_argument("-n", "--n-trials", type=int, default=None, help="Trials per (scene, eta) (default: 101)")
    p_sweep.add_argument("--alpha-min", type=float, default=None, help="Lower alpha bound (default: 0.05)")
    p_sweep.add_argument("--alpha-max", type=float, default=None, help="Upper alpha bound (default: 1)")
    p_sweep.add_argument("--n-starts", type=int, default=None, help="Simplex starts per fit (default: 32)")
    p_sweep.add_argument("--bins", type=int, default=None, help="Log-spaced histogram bins (default: 50)")

    # map
    p_map = sub.add_parser("map", parents=[common], help="Normalised confocal map of a scene")
    p_map.add_argument("--scene", default=None, help="x1=..,y1=..,x2=..,y2=..,alpha=..")
    p_map.add_argument("--pitch", type=float, default=None, help="Grid pitch (default: 0.05)")
    p_map.add_argument("--extent", type=float, default=None, help="Half-width of the square grid (default: 2)")

    # contours
    p_cont = sub.add_parser("contours", parents=[common], help="g1 and g2(0) over emitter distances (r1, r2)")
    p_cont.add_argument("--alpha", type=float, default=None, help="Brightness ratio (default: 1)")
    p_cont.add_argument("--pitch", type=float, default=None, help="Distance step (default: 0.05)")
    p_cont.add_argument("--extent", type=float, default=None, help="Largest distance (default: 2)")

    return parser


_SIMPLE_FLAGS = {
    "seed": "seed", "sigma": "sigma", "eta": "eta", "out": "out", "workers": "workers",
    "measurement_file": "measurement_file", "n_trials": "n_trials", "n_scenes": "n_scenes",
    "alpha_min": "alpha_min", "alpha_max": "alpha_max", "bins": "histogram_bins", "alpha": "contour_alpha",
}


def config_from_args(args: argparse.Namespace) -> RunConfig:
    """Defaults < environment < flags < --config file."""
    config = RunConfig(command=args.command)
    config.update(env_defaults())

    overrides: Dict[str, Any] = {}
    for flag, name in _SIMPLE_FLAGS.items():
        value = getattr(args, flag, None)
        if value is not None:
            overrides[name] = value
    if getattr(args, "scene", None) is not None:
        overrides["scene"] = parse_scene_spec(args.scene)
    if getattr(args, "measurement", None) is not None:
        overrides["measurement"] = parse_measurement_spec(args.measurement)
    if args.layout is not None:
        overrides["layout"] = parse_layout(args.layout)
    if getattr(args, "eta_values", None) is not None:
        overrides["eta_values"] = parse_float_list(args.eta_values, "eta_values")
    if getattr(args, "n_starts", None) is not None:
        overrides["fit"] = {"n_starts": args.n_starts}
    grid: Dict[str, float] = {}
    if getattr(args, "pitch", None) is not None:
        grid["pitch"] = args.pitch
    if getattr(args, "extent", None) is not None:
        grid.update(x_min=-args.extent, x_max=args.extent, y_min=-args.extent, y_max=args.extent)
    if grid:
        overrides["grid"] = grid
    config.update(overrides)

    if args.config:
        config.update(load_run_config(args.config))
        config.command = args.command
    if config.scene:
        config.scene = parse_scene_spec(config.scene)
    config.layout = parse_layout(config.layout)
    config.coerce()
    return config


def _configure_logging(verbosity: int) -> None:
    level = logging.WARNING if verbosity <= 0 else logging.INFO if verbosity == 1 else logging.DEBUG
    logging.basicConfig(level=level, stream=sys.stderr,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")


DISPATCH = {
    "forward": cmd_forward,
    "fit": cmd_fit,
    "trials": cmd_trials,
    "sweep": cmd_sweep,
    "map": cmd_map,
    "contours": cmd_contours,
}


def run(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _configure_logging(args.verbose)

    try:
        config = config_from_args(args)
        return asyncio.run(DISPATCH[args.command](config))
    except (ConfigError, DomainError) as exc:
        _emit({"status": "error", "message": str(exc), "field": getattr(exc, "field", None)})
        return EXIT_USAGE
    except UnlocalizableError as exc:
        _emit({"status": "unlocalized", "message": str(exc)})
        return EXIT_UNLOCALIZED
    except OutputError as exc:
        _emit({"status": "error", "message": str(exc), "path": exc.path})
        return EXIT_IO
    except OSError as exc:
        _emit({"status": "error", "message": str(exc), "path": getattr(exc, "filename", None)})
        return EXIT_IO


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
