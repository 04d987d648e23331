"""REINFORCE gradient estimation, variance estimation and training.

The single-trajectory estimator is

    g_hat = (sum_t Sigma_a^{-1} eps^a_t s_t') * (sum_t r_t)

i.e. the score-function sum scaled by the trajectory return.  No baseline or
reward-to-go is used.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from pglqr.ctrlmath import as_mat, operator_norm, spectral_radius
from pglqr.errors import DomainError, NumericalError
from pglqr.lqrmodel import GaussianPolicy, LqrProblem, as_state, exact_return, require_valid
from pglqr.rollout import (
    RngKey,
    Stream,
    Trajectory,
    TrajectoryBatch,
    rollout_batch,
    rollout_deterministic_batch,
)

CHUNK = 4096
DIVERGED_NORM = 1e6
DIVERGED_RHO = 10.0


@dataclass(frozen=True)
class GradSample:
    g_hat: np.ndarray
    total_return: float
    score_sum: np.ndarray


def _inv_sigma_a(pol: GaussianPolicy) -> np.ndarray:
    sa = pol.sigma_a
    if np.linalg.cond(sa) > 1e12:
        raise DomainError("sigma_a is numerically singular")
    return np.linalg.inv(sa)


def reinforce_grad(traj: Trajectory, pol: GaussianPolicy) -> GradSample:
    """REINFORCE estimate from one trajectory generated under ``pol``."""
    inv = _inv_sigma_a(pol)
    score = inv @ traj.action_noise.T @ traj.states
    ret = float(np.sum(traj.rewards))
    return GradSample(g_hat=score * ret, total_return=ret, score_sum=score)


def batch_grads(batch: TrajectoryBatch, pol: GaussianPolicy) -> tuple[np.ndarray, np.ndarray]:
    """Per-trajectory estimates, shape ``(N, m, n)``, and returns, shape ``(N,)``."""
    inv = _inv_sigma_a(pol)
    with np.errstate(over="ignore", invalid="ignore"):
        score = np.einsum("ij,ntj,ntk->nik", inv, batch.action_noise, batch.states)
        returns = batch.total_returns
        return score * returns[:, None, None], returns


@dataclass(frozen=True)
class VarianceEstimate:
    mean_g: np.ndarray
    nu_hat: float
    second_moment_hat: float
    n_samples: int
    std_error_nu: float
    std_error_second_moment: float
    mean_return: float = float("nan")


def _grads(p, pol, s1, n_traj, key) -> tuple[np.ndarray, np.ndarray]:
    parts, rets = [], []
    for start in range(0, n_traj, CHUNK):
        count = min(CHUNK, n_traj - start)
        g, r = batch_grads(rollout_batch(p, pol, s1, key, count, start=start), pol)
        parts.append(g)
        rets.append(r)
    return np.concatenate(parts), np.concatenate(rets)


def estimate_moments(p: LqrProblem, pol: GaussianPolicy, s1, n_traj: int, key: RngKey) -> VarianceEstimate:
    """Monte-Carlo estimates of ``nu(g_hat)`` and ``E[tr(g_hat' g_hat)]``.

    Trajectories ``0..n_traj-1`` of ``key``'s substream family are used, so the
    result depends only on the inputs and the key.
    """
    if n_traj < 2:
        raise DomainError("estimate_moments needs at least 2 trajectories")
    require_valid(p, pol)
    s1 = as_state(s1, p.n)
    g, returns = _grads(p, pol, s1, n_traj, key.at(trajectory_index=0))
    # overflowing rollouts yield inf/nan estimates, which callers flag
    with np.errstate(over="ignore", invalid="ignore"):
        mean_g = g.mean(axis=0)
        dev = np.sum((g - mean_g) ** 2, axis=(1, 2))
        sq = np.sum(g**2, axis=(1, 2))
        nu = float(dev.sum() / (n_traj - 1))
        se_nu = float(dev.std(ddof=1) / np.sqrt(n_traj))
        se_sq = float(sq.std(ddof=1) / np.sqrt(n_traj))
    return VarianceEstimate(
        mean_g=mean_g,
        nu_hat=nu,
        second_moment_hat=float(sq.mean()),
        n_samples=n_traj,
        std_error_nu=se_nu,
        std_error_second_moment=se_sq,
        mean_return=float(returns.mean()),
    )


def mc_gradient(p: LqrProblem, pol: GaussianPolicy, s1, n_traj: int, key: RngKey) -> tuple[np.ndarray, np.ndarray]:
    """Batch mean of ``g_hat`` and its entrywise standard error."""
    require_valid(p, pol)
    g, _ = _grads(p, pol, as_state(s1, p.n), n_traj, key.at(trajectory_index=0))
    return g.mean(axis=0), g.std(axis=0, ddof=1) / np.sqrt(n_traj)


def finite_diff_grad(p: LqrProblem, pol: GaussianPolicy, s1, delta: float) -> np.ndarray:
    """Central differences of the closed-form return with respect to each gain entry."""
    if not delta > 0:
        raise DomainError("finite_diff_grad: delta must be positive")
    grad = np.zeros_like(pol.k)
    for idx in np.ndindex(*pol.k.shape):
        step = np.zeros_like(pol.k)
        step[idx] = delta
        hi = exact_return(p, pol.replace(k=pol.k + step), s1)
        lo = exact_return(p, pol.replace(k=pol.k - step), s1)
        grad[idx] = (hi - lo) / (2.0 * delta)
    return grad


def sample_states(n: int, count: int, key: RngKey) -> np.ndarray:
    """``count`` draws from ``N(0, I/n)``, one keyed substream per state."""
    out = np.empty((count, n))
    for i in range(count):
        out[i] = key.at(trajectory_index=i).generator().standard_normal(n) / np.sqrt(n)
    return out


@dataclass
class LearningCurve:
    iterations: list[int] = field(default_factory=list)
    eval_returns: list[float] = field(default_factory=list)
    eval_stds: list[float] = field(default_factory=list)
    train_returns: list[float] = field(default_factory=list)
    k_snapshots: list[np.ndarray] | None = None
    diverged: bool = False
    final_k: np.ndarray | None = None


def _evaluate(p: LqrProblem, k: np.ndarray, eval_states: np.ndarray) -> tuple[float, float]:
    ret = rollout_deterministic_batch(p, k, eval_states).total_returns
    return float(ret.mean()), float(ret.std())


def _diverged(p: LqrProblem, k: np.ndarray) -> bool:
    if not np.all(np.isfinite(k)):
        return True
    return operator_norm(k) > DIVERGED_NORM or spectral_radius(p.a + p.b @ k) > DIVERGED_RHO


def train_reinforce(p: LqrProblem, pol0: GaussianPolicy, steps: int, step_size: float, batch: int,
                    eval_every: int, key: RngKey, *, num_eval: int = 100,
                    keep_snapshots: bool = False, eval_key: RngKey | None = None) -> LearningCurve:
    """Plain REINFORCE by gradient ascent on the expected return.

    Each iteration draws ``batch`` trajectories with fresh initial states from
    ``N(0, I/n)`` and steps ``K <- K + step_size * mean(g_hat)``.  The action
    noise covariance is held fixed.  Every ``eval_every`` iterations (and at
    iteration 0) the gain is evaluated noise-free from a fixed set of initial
    states drawn from ``eval_key`` (default: derived from ``key``); pass the
    same ``eval_key`` to runs that will be compared.  Divergence truncates the
    curve and sets ``diverged``.
    """
    if steps < 1 or batch < 1 or eval_every < 1:
        raise DomainError("steps, batch and eval_every must be >= 1")
    if step_size < 0:
        raise DomainError("step_size must be nonnegative")
    require_valid(p, pol0)
    eval_states = sample_states(p.n, num_eval, eval_key or RngKey(key.seed, Stream.EVAL_S1))
    curve = LearningCurve(k_snapshots=[] if keep_snapshots else None)
    k = pol0.k.copy()

    def record(it: int, train_ret: float) -> None:
        mean, std = _evaluate(p, k, eval_states)
        curve.iterations.append(it)
        curve.eval_returns.append(mean)
        curve.eval_stds.append(std)
        curve.train_returns.append(train_ret)
        if keep_snapshots:
            curve.k_snapshots.append(k.copy())

    record(0, float("nan"))
    window: list[float] = []
    for it in range(1, steps + 1):
        pol = pol0.replace(k=k)
        s1 = sample_states(p.n, batch, RngKey(key.seed, Stream.TRAIN_S1, s1_index=it))
        traj = rollout_batch(p, pol, s1, RngKey(key.seed, Stream.TRAIN, s1_index=it), batch)
        with np.errstate(over="ignore", invalid="ignore"):
            g, returns = batch_grads(traj, pol)
            k = k + step_size * g.mean(axis=0)
        window.append(float(returns.mean()))
        if _diverged(p, k):
            curve.diverged = True
            break
        if it % eval_every == 0:
            record(it, float(np.mean(window)))
            window = []
    curve.final_k = k
    return curve


def perturb_to_radius(p: LqrProblem, k_star, target_rho: float, key: RngKey, *,
                      tol: float = 1e-4, max_iter: int = 200) -> np.ndarray:
    """``K* + c * Delta`` with Gaussian ``Delta`` and ``c`` bisected to hit ``target_rho``."""
    k_star = as_mat(k_star, "k_star")
    if not 0.0 < target_rho < 1.0:
        raise DomainError("target_rho must lie in (0, 1)")

    def rho(c: float) -> float:
        return spectral_radius(p.a + p.b @ (k_star + c * delta))

    delta = key.generator().standard_normal(k_star.shape)
    base = rho(0.0)
    if base >= target_rho:
        raise DomainError(f"rho(A + B K*) = {base:.6g} is not below the target {target_rho}")
    if target_rho - base <= tol:
        return k_star.copy()

    lo, hi = 0.0, 1.0
    it = 0
    while rho(hi) < target_rho:
        lo, hi = hi, 2.0 * hi
        it += 1
        if it >= max_iter:
            raise NumericalError("perturb_to_radius: could not bracket the target radius")
    while it < max_iter:
        mid = 0.5 * (lo + hi)
        r = rho(mid)
        if abs(r - target_rho) <= tol:
            return k_star + mid * delta
        if r < target_rho:
            lo = mid
        else:
            hi = mid
        it += 1
    raise NumericalError("perturb_to_radius: bisection did not converge")


STEP_GRID = (1e-3, 1e-4, 1e-5, 1e-6, 1e-7, 1e-8)


def select_step_size(variants: list[tuple[LqrProblem, GaussianPolicy]], steps: int, batch: int,
                     eval_every: int, key: RngKey, candidates=STEP_GRID, *,
                     eval_key: RngKey | None = None) -> float:
    """Coarse grid search for a REINFORCE step size.

    One pilot run per (problem, initial policy) variant and candidate.
    Candidates are ranked by the number of diverged pilots, then by the mean
    final noise-free return.
    """
    best = None
    for step in candidates:
        diverged, finals = 0, []
        for lqr, pol in variants:
            curve = train_reinforce(lqr, pol, steps, step, batch, eval_every, key, eval_key=eval_key)
            diverged += curve.diverged
            finals.append(curve.eval_returns[-1])
        score = (diverged, -float(np.mean(finals)))
        if best is None or score < best[0]:
            best = (score, step)
    return best[1]
