"""The five experiments: sigma_a, |B| and rho sweeps, dimensionality scatter, learning curves.

All randomness is keyed off the config seed, so results depend only on the
config and never on the thread count.  Within a sweep every row reuses the
same initial states and trajectory substreams (common random numbers).
"""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from typing import Callable, Iterable, Sequence

import numpy as np

from pglqr.bounds import closed_loop_transient, upper_bound
from pglqr.ctrlmath import place_poles, solve_dare, spectral_radius
from pglqr.errors import ConfigError, PglqrError
from pglqr.lqrmodel import GaussianPolicy, LqrProblem
from pglqr.pg import (
    LearningCurve,
    estimate_moments,
    perturb_to_radius,
    sample_states,
    select_step_size,
    train_reinforce,
)
from pglqr.probgen import ProblemRecipe, eig_prototype, normalized_prototype, random_lqr, scale_prototype
from pglqr.rollout import RngKey, Stream

EXPERIMENTS = ("sigma_a", "b_mag", "rho", "scatter", "curves")
SWEEP_SCHEMA = "pglqr.sweep/1"
SCATTER_SCHEMA = "pglqr.scatter/1"
CURVES_SCHEMA = "pglqr.curves/1"


@dataclass
class SweepConfig:
    experiment: str
    recipe: ProblemRecipe = field(default_factory=lambda: ProblemRecipe(n=5, m=3, horizon=10))
    grid: list[float] = field(default_factory=lambda: list(np.geomspace(1e-2, 1e2, 25)))
    scale_set: list[float] = field(default_factory=lambda: [0.1, 1.0, 10.0])
    num_s1: int = 100
    num_traj: int = 30
    out_path: str = ""
    threads: int = 1
    # scatter
    problems: int = 1000
    dims: list[int] = field(default_factory=lambda: [3, 10, 30])
    horizons: list[int] = field(default_factory=lambda: [3, 10, 30])
    # learning curves
    sigma_s_set: list[float] = field(default_factory=lambda: [0.1, 10.0])
    seeds: int = 10
    iterations: int = 300
    step_size: float | None = None  # None: coarse grid search
    batch: int = 1
    eval_every: int = 10
    target_rho: float = 0.98

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.experiment!r}; choose from {EXPERIMENTS}")
        self.grid = [float(g) for g in self.grid]
        if self.experiment != "scatter" and not self.grid:
            raise ConfigError("grid must be nonempty")
        if self.grid != sorted(self.grid):
            raise ConfigError("grid must be sorted")
        if not self.scale_set:
            raise ConfigError("scale_set must be nonempty")
        if self.num_s1 < 1:
            raise ConfigError("num_s1 must be >= 1")
        if self.num_traj < 2:
            raise ConfigError("num_traj must be >= 2")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")
        if self.experiment == "rho" and not all(0.0 < g < 1.0 for g in self.grid):
            raise ConfigError("rho grid values must lie in (0, 1)")
        if self.experiment == "b_mag" and self.recipe.n != self.recipe.m:
            raise ConfigError("the |B| sweep requires m = n")

    def to_dict(self) -> dict:
        out = asdict(self)
        out["recipe"] = asdict(self.recipe)
        return out


@dataclass(frozen=True)
class SweepRow:
    sweep_value: float
    scale: float
    bound_mean: float
    empirical_nu_mean: float
    empirical_second_moment_mean: float
    nu_std_error: float
    rho_achieved: float
    second_moment_std_error: float = math.nan
    flagged: bool = False


SWEEP_COLUMNS = [f.name for f in fields(SweepRow)]


def _pmap(fn: Callable, items: Sequence, threads: int) -> list:
    """Order-preserving map; each item must be independent of the others."""
    if threads <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def initial_states(n: int, count: int, seed: int) -> np.ndarray:
    return sample_states(n, count, RngKey(seed, Stream.INITIAL_STATES))


@dataclass(frozen=True)
class PointEstimate:
    bound_mean: float
    nu_mean: float
    second_moment_mean: float
    nu_se: float
    second_moment_se: float
    rho: float
    flagged: bool


def evaluate_point(p: LqrProblem, pol: GaussianPolicy, states: np.ndarray, num_traj: int, seed: int) -> PointEstimate:
    """Bound and Monte-Carlo moments averaged over the given initial states."""
    rho = spectral_radius(p.a + p.b @ pol.k)
    transient = closed_loop_transient(p, pol)
    bounds, nus, sms, nu_se, sm_se = [], [], [], [], []
    for i, s1 in enumerate(states):
        bounds.append(upper_bound(p, pol, s1, transient=transient).bound)
        est = estimate_moments(p, pol, s1, num_traj, RngKey(seed, Stream.MOMENTS, s1_index=i))
        nus.append(est.nu_hat)
        sms.append(est.second_moment_hat)
        nu_se.append(est.std_error_nu)
        sm_se.append(est.std_error_second_moment)
    count = len(states)
    values = [float(np.mean(bounds)), float(np.mean(nus)), float(np.mean(sms)),
              float(np.sqrt(np.sum(np.square(nu_se))) / count), float(np.sqrt(np.sum(np.square(sm_se))) / count)]
    flagged = not all(np.isfinite(values))
    return PointEstimate(*values, rho=rho, flagged=flagged)


def _row(value: float, scale: float, est: PointEstimate | None, rho: float = math.nan) -> SweepRow:
    if est is None:
        return SweepRow(value, scale, math.nan, math.nan, math.nan, math.nan, rho, math.nan, True)
    return SweepRow(value, scale, est.bound_mean, est.nu_mean, est.second_moment_mean, est.nu_se,
                    est.rho, est.second_moment_se, est.flagged)


def _guarded(fn: Callable[[], PointEstimate]) -> PointEstimate | None:
    try:
        return fn()
    except (PglqrError, np.linalg.LinAlgError, FloatingPointError):
        return None


def _sorted_rows(rows: Iterable[SweepRow]) -> list[SweepRow]:
    return sorted(rows, key=lambda r: (r.scale, r.sweep_value))


def run_sigma_a_sweep(cfg: SweepConfig) -> list[SweepRow]:
    """Replace ``Sigma_a`` by ``sigma_a I`` over the grid; scales multiply ``Sigma_s``; ``K = K*``."""
    p0, pol0 = random_lqr(cfg.recipe)
    states = initial_states(p0.n, cfg.num_s1, cfg.recipe.seed)
    tasks = [(scale, value) for scale in cfg.scale_set for value in cfg.grid]

    def task(item):
        scale, value = item
        p = p0.replace(sigma_s=scale * p0.sigma_s)
        pol = GaussianPolicy(k=pol0.k, sigma_a=value * np.eye(p0.m))
        return _row(value, scale, _guarded(lambda: evaluate_point(p, pol, states, cfg.num_traj, cfg.recipe.seed)))

    return _sorted_rows(_pmap(task, tasks, cfg.threads))


def run_bmag_sweep(cfg: SweepConfig) -> list[SweepRow]:
    """Replace ``B`` by ``b I`` with a fresh optimal gain per ``b``; scales multiply both covariances."""
    if cfg.recipe.n != cfg.recipe.m:
        raise ConfigError("the |B| sweep requires m = n")
    p0, pol0 = random_lqr(cfg.recipe)
    states = initial_states(p0.n, cfg.num_s1, cfg.recipe.seed)
    tasks = [(scale, value) for scale in cfg.scale_set for value in cfg.grid]

    def task(item):
        scale, value = item

        def point():
            b = value * np.eye(p0.n)
            k = solve_dare(p0.a, b, p0.q, p0.r).k_star
            p = p0.replace(b=b, sigma_s=scale * p0.sigma_s)
            pol = GaussianPolicy(k=k, sigma_a=scale * pol0.sigma_a)
            return evaluate_point(p, pol, states, cfg.num_traj, cfg.recipe.seed)

        return _row(value, scale, _guarded(point))

    return _sorted_rows(_pmap(task, tasks, cfg.threads))


def run_rho_sweep(cfg: SweepConfig) -> list[SweepRow]:
    """Closed loops placed at a rescaled prototype spectrum; scales multiply both covariances."""
    p0, pol0 = random_lqr(cfg.recipe)
    states = initial_states(p0.n, cfg.num_s1, cfg.recipe.seed)
    proto = normalized_prototype(eig_prototype(p0.n, RngKey(cfg.recipe.seed, Stream.PROTOTYPE)))
    tasks = [(scale, value) for scale in cfg.scale_set for value in cfg.grid]

    def task(item):
        scale, value = item

        def point():
            k = place_poles(p0.a, p0.b, scale_prototype(proto, value))
            p = p0.replace(sigma_s=scale * p0.sigma_s)
            pol = GaussianPolicy(k=k, sigma_a=scale * pol0.sigma_a)
            return evaluate_point(p, pol, states, cfg.num_traj, cfg.recipe.seed)

        return _row(value, scale, _guarded(point))

    return _sorted_rows(_pmap(task, tasks, cfg.threads))


@dataclass(frozen=True)
class ScatterRow:
    problem: int
    n: int
    m: int
    horizon: int
    empirical_second_moment_mean: float
    second_moment_std_error: float
    bound_mean: float
    empirical_nu_mean: float
    flagged: bool


SCATTER_COLUMNS = [f.name for f in fields(ScatterRow)]


def scatter_recipe(cfg: SweepConfig, index: int) -> ProblemRecipe:
    combos = [(n, h) for n in cfg.dims for h in cfg.horizons]
    n, horizon = combos[index % len(combos)]
    seed = int(RngKey(cfg.recipe.seed, Stream.PROBLEM, s1_index=1_000_000 + index).generator().integers(2**63))
    return ProblemRecipe(n=n, m=math.ceil(n / 2), horizon=horizon, sigma_s_scale=cfg.recipe.sigma_s_scale,
                         sigma_a_scale=cfg.recipe.sigma_a_scale, seed=seed)


def run_scatter(cfg: SweepConfig) -> list[ScatterRow]:
    """One (empirical, bound) pair per random problem with ``n, H`` cycling over the configured sets."""

    def task(index: int) -> ScatterRow:
        recipe = scatter_recipe(cfg, index)

        def point():
            p, pol = random_lqr(recipe)
            states = initial_states(p.n, cfg.num_s1, recipe.seed)
            return evaluate_point(p, pol, states, cfg.num_traj, recipe.seed)

        est = _guarded(point)
        if est is None:
            return ScatterRow(index, recipe.n, recipe.m, recipe.horizon, math.nan, math.nan, math.nan, math.nan, True)
        return ScatterRow(index, recipe.n, recipe.m, recipe.horizon, est.second_moment_mean, est.second_moment_se,
                          est.bound_mean, est.nu_mean, est.flagged)

    return _pmap(task, range(cfg.problems), cfg.threads)


@dataclass(frozen=True)
class CurveRow:
    sigma_a_scale: float
    sigma_s_scale: float
    iteration: int
    eval_return_mean: float
    eval_return_std: float
    train_return_mean: float
    diverged: bool
    runs: int
    step_size: float


CURVE_COLUMNS = [f.name for f in fields(CurveRow)]


PILOT_REPETITION = 20_000_000


def curve_seed(base: int, repetition: int) -> int:
    return int(RngKey(base, Stream.TRAIN, s1_index=10_000_000 + repetition).generator().integers(2**63))


def run_learning_curves(cfg: SweepConfig) -> list[CurveRow]:
    """REINFORCE runs from a perturbed optimal gain for each (sigma_a, sigma_s) scale pair.

    Problem parameters and the initial gain are shared by all runs; the
    repetition seed only changes noise and initial-state draws.  A diverged
    run stops contributing after its last checkpoint.
    """
    p0, pol0 = random_lqr(ProblemRecipe(cfg.recipe.n, cfg.recipe.m, cfg.recipe.horizon, 1.0, 1.0, cfg.recipe.seed))
    k0 = perturb_to_radius(p0, pol0.k, cfg.target_rho, RngKey(cfg.recipe.seed, Stream.PERTURB))
    pairs = [(sa, ss) for sa in cfg.scale_set for ss in cfg.sigma_s_set]
    variants = {(sa, ss): (p0.replace(sigma_s=ss * p0.sigma_s), GaussianPolicy(k=k0, sigma_a=sa * pol0.sigma_a))
                for sa, ss in pairs}
    eval_key = RngKey(cfg.recipe.seed, Stream.EVAL_S1)
    step_size = cfg.step_size
    if step_size is None:
        step_size = select_step_size([variants[pair] for pair in pairs], cfg.iterations, cfg.batch, cfg.eval_every,
                                     RngKey(curve_seed(cfg.recipe.seed, PILOT_REPETITION)), eval_key=eval_key)
    tasks = [(sa, ss, rep) for sa, ss in pairs for rep in range(cfg.seeds)]

    def task(item) -> LearningCurve:
        sa, ss, rep = item
        p, pol = variants[(sa, ss)]
        return train_reinforce(p, pol, cfg.iterations, step_size, cfg.batch, cfg.eval_every,
                               RngKey(curve_seed(cfg.recipe.seed, rep)), eval_key=eval_key)

    curves = _pmap(task, tasks, cfg.threads)
    rows: list[CurveRow] = []
    checkpoints = list(range(0, cfg.iterations + 1, cfg.eval_every))
    for j, (sa, ss) in enumerate(pairs):
        group = curves[j * cfg.seeds:(j + 1) * cfg.seeds]
        any_diverged = any(c.diverged for c in group)
        for it in checkpoints:
            evals, trains = [], []
            for c in group:
                if it in c.iterations:
                    idx = c.iterations.index(it)
                    evals.append(c.eval_returns[idx])
                    trains.append(c.train_returns[idx])
            if not evals:
                continue
            finite_train = [t for t in trains if np.isfinite(t)]
            rows.append(CurveRow(sa, ss, it, float(np.mean(evals)), float(np.std(evals)),
                                 float(np.mean(finite_train)) if finite_train else math.nan,
                                 any_diverged, len(evals), step_size))
    return rows


RUNNERS = {
    "sigma_a": run_sigma_a_sweep,
    "b_mag": run_bmag_sweep,
    "rho": run_rho_sweep,
    "scatter": run_scatter,
    "curves": run_learning_curves,
}

SCHEMAS = {
    "sigma_a": (SWEEP_SCHEMA, SWEEP_COLUMNS),
    "b_mag": (SWEEP_SCHEMA, SWEEP_COLUMNS),
    "rho": (SWEEP_SCHEMA, SWEEP_COLUMNS),
    "scatter": (SCATTER_SCHEMA, SCATTER_COLUMNS),
    "curves": (CURVES_SCHEMA, CURVE_COLUMNS),
}


def _cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def rows_to_csv(experiment: str, rows: Sequence) -> str:
    """CSV text: a ``# schema=...`` line, the column header, then one line per row."""
    schema, columns = SCHEMAS[experiment]
    buf = io.StringIO()
    buf.write(f"# schema={schema} experiment={experiment}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_cell(getattr(row, c)) for c in columns])
    return buf.getvalue()


def has_flags(rows: Sequence) -> bool:
    return any(getattr(r, "flagged", False) or getattr(r, "diverged", False) for r in rows)
