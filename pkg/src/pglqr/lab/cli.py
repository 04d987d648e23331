"""Command-line entry point: ``pglqr --experiment sigma_a --out results/sigma_a.csv``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 completed with flagged rows.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import platform
import sys
import time
from pathlib import Path

import numpy as np

from pglqr import __version__
from pglqr.errors import ConfigError, PglqrError
from pglqr.lab.experiments import EXPERIMENTS, RUNNERS, SweepConfig, has_flags, rows_to_csv
from pglqr.lab.plots import CsvSchemaError, render_plots
from pglqr.probgen import ProblemRecipe

log = logging.getLogger("pglqr")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_PARTIAL = 0, 2, 3, 4
OUT_DIR_ENV = "PGLQR_OUT_DIR"

DEFAULT_GRIDS = {
    "sigma_a": (1e-2, 1e2, 25, "geom"),
    "b_mag": (1e-2, 1e2, 25, "geom"),
    "rho": (0.05, 0.95, 19, "lin"),
}


def _floats(text: str) -> list[float]:
    return [float(x) for x in text.replace(",", " ").split()]


def _ints(text: str) -> list[int]:
    return [int(x) for x in text.replace(",", " ").split()]


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pglqr", description="REINFORCE variance experiments on random LQR problems.")
    ap.add_argument("--config", help="plain key=value file; command-line flags take precedence")
    ap.add_argument("--experiment", choices=EXPERIMENTS)
    ap.add_argument("--seed", type=int)
    ap.add_argument("--n", type=int)
    ap.add_argument("--m", type=int)
    ap.add_argument("--horizon", type=int)
    ap.add_argument("--grid-min", type=float)
    ap.add_argument("--grid-max", type=float)
    ap.add_argument("--grid-points", type=int)
    ap.add_argument("--scales", help="noise scale family, e.g. '0.1,1,10' (sigma_a scales for curves)")
    ap.add_argument("--sigma-s-scales", help="sigma_s scales for the learning-curve experiment")
    ap.add_argument("--num-s1", type=int)
    ap.add_argument("--num-traj", type=int)
    ap.add_argument("--problems", type=int, help="number of random problems for the scatter experiment")
    ap.add_argument("--dims", help="state dimensions for the scatter experiment")
    ap.add_argument("--horizons", help="horizons for the scatter experiment")
    ap.add_argument("--seeds", type=int, help="repetitions per learning-curve setting")
    ap.add_argument("--iterations", type=int)
    ap.add_argument("--step-size", help="REINFORCE step size, or 'auto' for a coarse grid search")
    ap.add_argument("--batch", type=int)
    ap.add_argument("--eval-every", type=int)
    ap.add_argument("--threads", type=int)
    ap.add_argument("--out", help=f"output CSV (relative paths resolve against ${OUT_DIR_ENV})")
    ap.add_argument("--render", action="store_true", help="also write an SVG plot next to the CSV")
    ap.add_argument("--linear-y", action="store_true", help="linear y axis in rendered sweeps")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def read_config_file(path: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"{path}:{lineno}: expected key=value")
        out[key.strip().replace("-", "_")] = value.strip()
    return out


def merge_settings(args: argparse.Namespace) -> dict[str, str]:
    settings = read_config_file(args.config) if args.config else {}
    for key, value in vars(args).items():
        if key in ("config", "render", "linear_y", "verbose") or value is None:
            continue
        settings[key] = str(value)
    return settings


def config_from_settings(settings: dict[str, str]) -> SweepConfig:
    known = {
        "experiment", "seed", "n", "m", "horizon", "grid_min", "grid_max", "grid_points", "scales",
        "sigma_s_scales", "num_s1", "num_traj", "problems", "dims", "horizons", "seeds", "iterations",
        "step_size", "batch", "eval_every", "threads", "out",
    }
    unknown = set(settings) - known
    if unknown:
        raise ConfigError(f"unknown settings: {sorted(unknown)}")
    if "experiment" not in settings:
        raise ConfigError("--experiment is required")
    try:
        experiment = settings["experiment"]
        n = int(settings.get("n", 5))
        m = int(settings.get("m", n if experiment == "b_mag" else 3))
        recipe = ProblemRecipe(n=n, m=m, horizon=int(settings.get("horizon", 10)), seed=int(settings.get("seed", 0)))
        kw: dict = {"experiment": experiment, "recipe": recipe}
        lo, hi, points, spacing = DEFAULT_GRIDS.get(experiment, (1e-2, 1e2, 25, "geom"))
        lo = float(settings.get("grid_min", lo))
        hi = float(settings.get("grid_max", hi))
        points = int(settings.get("grid_points", points))
        if points < 1 or (spacing == "geom" and lo <= 0):
            raise ConfigError("grid needs >= 1 point and a positive minimum for geometric spacing")
        grid = np.geomspace(lo, hi, points) if spacing == "geom" else np.linspace(lo, hi, points)
        kw["grid"] = [float(g) for g in grid]
        if "scales" in settings:
            kw["scale_set"] = _floats(settings["scales"])
        if "sigma_s_scales" in settings:
            kw["sigma_s_set"] = _floats(settings["sigma_s_scales"])
        for key in ("num_s1", "num_traj", "problems", "seeds", "iterations", "batch", "eval_every", "threads"):
            if key in settings:
                kw[key] = int(settings[key])
        if "dims" in settings:
            kw["dims"] = _ints(settings["dims"])
        if "horizons" in settings:
            kw["horizons"] = _ints(settings["horizons"])
        if "step_size" in settings:
            kw["step_size"] = None if settings["step_size"] == "auto" else float(settings["step_size"])
        kw["out_path"] = settings.get("out", "")
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc
    return SweepConfig(**kw)


def resolve_out(cfg: SweepConfig) -> Path:
    base = Path(os.environ.get(OUT_DIR_ENV, "results"))
    out = Path(cfg.out_path) if cfg.out_path else Path(f"{cfg.experiment}.csv")
    return out if out.is_absolute() else base / out


def run(cfg: SweepConfig, out: Path, *, render: bool = False, log_y: bool = True) -> int:
    start = time.perf_counter()
    rows = RUNNERS[cfg.experiment](cfg)
    wall = time.perf_counter() - start
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(rows_to_csv(cfg.experiment, rows))
    meta = {
        "experiment": cfg.experiment,
        "seed": cfg.recipe.seed,
        "config": cfg.to_dict(),
        "code_version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "wall_time_s": round(wall, 3),
        "rows": len(rows),
    }
    if cfg.experiment == "curves" and rows:
        meta["step_size_used"] = rows[0].step_size
        meta["step_size_source"] = "grid search" if cfg.step_size is None else "configured"
    Path(str(out) + ".meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    log.info("wrote %s (%d rows, %.1fs)", out, len(rows), wall)
    if render:
        svg = render_plots(out, log_y=log_y)
        log.info("wrote %s", svg)
    return EXIT_PARTIAL if has_flags(rows) else EXIT_OK


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = config_from_settings(merge_settings(args))
    except (ConfigError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return run(cfg, resolve_out(cfg), render=args.render, log_y=not args.linear_y)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (PglqrError, CsvSchemaError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
