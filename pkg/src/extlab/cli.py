"""Command-line interface: inspection commands and experiment runners.

The ``extlab`` entry point exposes one subcommand per module::

    extlab surface    summarize a discretized surface and its cap covers
    extlab weights    report a weight's scanned dimension constant
    extlab measure    report a fractal measure's mass, energy, density
    extlab ext        evaluate one random extension on a coarse grid
    extlab expsum     run the exponential-sum sharpness experiment
    extlab sphmeans   run the spherical-means decay experiment
    extlab wavepacket run the wave-packet invariant suite
    extlab partition  run the partition invariant suite
    extlab scaling    run the weighted-scaling experiment

Every subcommand accepts ``--config FILE`` (an INI file with an
``[experiment]`` section of ``key = value`` lines), ``--seed``,
``--out-dir``, and the output selectors ``--csv`` / ``--json`` (both are
written when neither is given).  Experiment subcommands also render a
PNG figure next to the delimited outputs.

Exit status: 0 when every verdict is PASS or VACUOUS, 1 when any check
FAILs, 2 on a configuration error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from typing import Dict, List, Optional

import numpy as np

from .extension import extension_eval
from .geometry import build_surface, cap_cover
from .lab import (ExperimentConfig, RunRecord, lambda_class_draw,
                  render_figure, run_experiment, write_outputs)
from .measures import (energy_I_alpha, estimate_A_alpha, estimate_C_alpha,
                       make_weight)

__all__ = ["main"]

#: Subcommand name -> experiment kind it runs.
_RUN_KINDS = {
    "expsum": "expsum-sharpness",
    "sphmeans": "spherical-means",
    "wavepacket": "wavepacket-demo",
    "partition": "partition-demo",
    "scaling": "weighted-scaling",
}

_INSPECT = ("surface", "weights", "measure", "ext")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="extlab",
        description="Numerical laboratory for weighted extension "
                    "estimates: inspection commands and reproducible "
                    "experiments.")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "surface": "summarize a surface discretization and cap covers",
        "weights": "report a weight's scanned dimension constant",
        "measure": "report a fractal measure's mass, energy, density",
        "ext": "evaluate one random extension on a coarse grid",
        "expsum": "exponential-sum moment sharpness experiment",
        "sphmeans": "spherical-means decay experiment",
        "wavepacket": "wave-packet decomposition invariant suite",
        "partition": "polynomial-partition invariant suite",
        "scaling": "weighted extension norm scaling experiment",
    }
    for name in (*_INSPECT, *_RUN_KINDS):
        p = sub.add_parser(name, help=helps[name])
        p.add_argument("--config", metavar="FILE", default=None,
                       help="INI file with an [experiment] section")
        p.add_argument("--seed", type=int, default=None,
                       help="override the configured random seed")
        p.add_argument("--out-dir", default=None,
                       help="override the configured output directory")
        p.add_argument("--csv", action="store_true",
                       help="write the CSV report")
        p.add_argument("--json", action="store_true",
                       help="write the JSON report")
    return parser


def _load_config(args, default_kind: str) -> ExperimentConfig:
    if args.config is not None:
        config = ExperimentConfig.from_ini(args.config,
                                           default_kind=default_kind)
    else:
        config = ExperimentConfig(kind=default_kind)
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out_dir is not None:
        overrides["out_dir"] = args.out_dir
    return config.replace(**overrides) if overrides else config


def _emit(payload: Dict, rows: List[Dict], stem: str, args,
          config: ExperimentConfig) -> None:
    """Write an inspection payload as JSON and/or CSV reports."""
    want_json = args.json or not args.csv
    want_csv = args.csv or not args.json
    record = RunRecord(config=config.to_dict(), measurements=rows,
                       predicted=payload, fits={}, verdicts={}, notes=[])
    paths = write_outputs(record, config.out_dir, stem=stem,
                          csv=want_csv, json_out=want_json)
    print(json.dumps(payload, sort_keys=True, indent=2))
    for path in paths:
        print(f"wrote {path}")


def _inspect_surface(args) -> int:
    config = _load_config(args, "partition-demo")
    surface = build_surface(config.surface, config.resolution)
    rows = []
    for kind, scale in (("theta", 144.0), ("tau", config.K)):
        try:
            cover = cap_cover(surface, kind, scale)
            rows.append({"cover": kind, "scale": scale,
                         "n_caps": len(cover),
                         "multiplicity": cover.multiplicity})
        except ValueError:
            rows.append({"cover": kind, "scale": scale,
                         "n_caps": 0, "multiplicity": 0})
    payload = {
        "surface": config.surface,
        "resolution": config.resolution,
        "n_nodes": surface.n_nodes,
        "total_weight": surface.total_weight,
        "covers": rows,
    }
    _emit(payload, rows, "surface", args, config)
    return 0


def _inspect_weights(args) -> int:
    config = _load_config(args, "weighted-scaling")
    from .lab import _weight_from_spec
    H = _weight_from_spec(config.weight)
    R_max = float(max(config.radii))
    report = estimate_A_alpha(H, config.alpha, R_max, 0.5,
                              quad_spacing=0.5)
    payload = {"weight": config.weight, "alpha": config.alpha,
               "R_max": R_max, "report": report.to_dict()}
    rows = [{"weight": config.weight, "alpha": config.alpha,
             "R_max": R_max, "A_alpha": report.value}]
    _emit(payload, rows, "weights", args, config)
    return 0


def _inspect_measure(args) -> int:
    config = _load_config(args, "spherical-means")
    from .lab import _measure_from_spec
    mu = _measure_from_spec(config.measure, config.alpha, config.level)
    r_min = 1.0 / float(max(config.radii))
    density = estimate_C_alpha(mu, config.alpha, r_min)
    energy = energy_I_alpha(mu, config.alpha)
    payload = {
        "measure": config.measure, "alpha": config.alpha,
        "level": config.level, "n_atoms": len(mu.atoms),
        "total_mass": mu.total_mass, "I_alpha": energy,
        "C_alpha": density.to_dict(),
    }
    rows = [{"measure": config.measure, "alpha": config.alpha,
             "level": config.level, "n_atoms": len(mu.atoms),
             "total_mass": mu.total_mass, "I_alpha": energy,
             "C_alpha": density.value}]
    _emit(payload, rows, "measure", args, config)
    return 0


def _inspect_ext(args) -> int:
    config = _load_config(args, "weighted-scaling")
    surface = build_surface(config.surface, config.resolution)
    rng = np.random.default_rng(config.seed)
    f = lambda_class_draw(surface, rng, b=config.b,
                          R_max=float(max(config.radii)))
    R = float(max(config.radii))
    axis = np.linspace(-R, R, 9)
    xx, yy, zz = np.meshgrid(axis, axis, axis, indexing="ij")
    pts = np.column_stack([xx.ravel(), yy.ravel(), zz.ravel()])
    vals = np.abs(extension_eval(surface, f, pts))
    rows = [{"R": R, "grid_points": len(pts),
             "max_abs": float(vals.max()),
             "mean_abs": float(vals.mean()),
             "f_l2": f.norm("L2")}]
    payload = dict(rows[0], surface=config.surface,
                   resolution=config.resolution, seed=config.seed)
    _emit(payload, rows, "ext", args, config)
    return 0


def _run(args, kind: str) -> int:
    config = _load_config(args, kind)
    record = run_experiment(config)
    want_json = args.json or not args.csv
    want_csv = args.csv or not args.json
    stem = str(config.label or config.kind)
    paths = write_outputs(record, config.out_dir, stem=stem,
                          csv=want_csv, json_out=want_json)
    figure = os.path.join(config.out_dir, f"{stem}.png")
    render_figure(record, figure)
    paths.append(figure)
    print(record.summary())
    for note in record.notes:
        print(f"  {note}")
    for path in paths:
        print(f"wrote {path}")
    return 0 if record.passed else 1


def main(argv: Optional[List[str]] = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "surface":
            return _inspect_surface(args)
        if args.command == "weights":
            return _inspect_weights(args)
        if args.command == "measure":
            return _inspect_measure(args)
        if args.command == "ext":
            return _inspect_ext(args)
        return _run(args, _RUN_KINDS[args.command])
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
