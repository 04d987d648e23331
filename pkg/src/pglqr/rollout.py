"""Trajectory simulation with keyed, parallelism-independent randomness.

Every trajectory owns a Philox substream derived from
``(seed, context, s1_index, trajectory_index)``.  Inside a trajectory the unit
Gaussian draws are consumed in the fixed order
``delta^a_1, delta^s_1, delta^a_2, delta^s_2, ...`` and mapped through the
principal square roots of the noise covariances.
"""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass, replace
from typing import IO

import numpy as np

from pglqr.ctrlmath import as_mat, psd_sqrt
from pglqr.errors import DomainError
from pglqr.lqrmodel import GaussianPolicy, LqrProblem, as_state, require_valid


class Stream(enum.IntEnum):
    """Substream contexts; one per distinct use of randomness."""

    ROLLOUT = 1
    MOMENTS = 2
    TRAIN = 3
    TRAIN_S1 = 4
    EVAL_S1 = 5
    INITIAL_STATES = 6
    PROBLEM = 7
    PROTOTYPE = 8
    PERTURB = 9
    WISHART = 10


@dataclass(frozen=True)
class RngKey:
    seed: int
    context: int = Stream.ROLLOUT
    s1_index: int = 0
    trajectory_index: int = 0

    def __post_init__(self):
        if not 0 <= int(self.seed) < 2**64:
            raise DomainError(f"seed must be a 64-bit unsigned integer, got {self.seed}")

    def generator(self) -> np.random.Generator:
        seq = np.random.SeedSequence(int(self.seed), spawn_key=(int(self.context), int(self.s1_index),
                                                                 int(self.trajectory_index)))
        return np.random.Generator(np.random.Philox(seq))

    def at(self, **changes) -> "RngKey":
        return replace(self, **changes)


def as_generator(key) -> np.random.Generator:
    if isinstance(key, np.random.Generator):
        return key
    if isinstance(key, RngKey):
        return key.generator()
    return RngKey(int(key)).generator()


@dataclass(frozen=True)
class Trajectory:
    states: np.ndarray        # (H, n)
    actions: np.ndarray       # (H, m)
    action_noise: np.ndarray  # (H, m)
    rewards: np.ndarray       # (H,)
    total_return: float


@dataclass(frozen=True)
class TrajectoryBatch:
    """``N`` trajectories stored as stacked arrays."""

    states: np.ndarray        # (N, H, n)
    actions: np.ndarray       # (N, H, m)
    action_noise: np.ndarray  # (N, H, m)
    rewards: np.ndarray       # (N, H)

    @property
    def total_returns(self) -> np.ndarray:
        return self.rewards.sum(axis=1)

    def __len__(self) -> int:
        return self.states.shape[0]

    def __getitem__(self, i: int) -> Trajectory:
        return Trajectory(self.states[i], self.actions[i], self.action_noise[i], self.rewards[i],
                          float(self.rewards[i].sum()))


def unit_draws(key: RngKey, horizon: int, n: int, m: int) -> tuple[np.ndarray, np.ndarray]:
    """Unit Gaussian draws of one trajectory, split into action and state parts."""
    z = key.generator().standard_normal((horizon, m + n))
    return z[:, :m], z[:, m:]


def simulate(p: LqrProblem, k: np.ndarray, s1: np.ndarray, eps_a: np.ndarray, eps_s: np.ndarray) -> TrajectoryBatch:
    """Propagate given noise sequences ``eps_a (N, H, m)`` and ``eps_s (N, H, n)``."""
    count, horizon, _ = eps_a.shape
    states = np.empty((count, horizon, p.n))
    actions = np.empty((count, horizon, p.m))
    s = np.broadcast_to(s1, (count, p.n)).copy()
    # einsum (not BLAS) keeps each trajectory's bits independent of the batch size
    with np.errstate(over="ignore", invalid="ignore"):
        for t in range(horizon):
            a = np.einsum("ij,nj->ni", k, s) + eps_a[:, t]
            states[:, t] = s
            actions[:, t] = a
            s = np.einsum("ij,nj->ni", p.a, s) + np.einsum("ij,nj->ni", p.b, a) + eps_s[:, t]
        cost = np.einsum("nti,ij,ntj->nt", states, p.q, states) + np.einsum("nti,ij,ntj->nt", actions, p.r, actions)
    return TrajectoryBatch(states=states, actions=actions, action_noise=eps_a, rewards=-cost)


def rollout_batch(p: LqrProblem, pol: GaussianPolicy, s1, key: RngKey, count: int,
                  start: int = 0) -> TrajectoryBatch:
    """Simulate trajectories ``start .. start+count-1`` of the keyed stream.

    ``s1`` is either one state shared by all trajectories or an array of
    shape ``(count, n)``.
    """
    require_valid(p, pol, allow_singular_sigma_a=True)
    s1 = np.asarray(s1, dtype=float)
    if s1.ndim <= 1:
        s1 = as_state(s1, p.n)
    elif s1.shape != (count, p.n):
        raise DomainError(f"initial states must be ({count}, {p.n}), got {s1.shape}")
    root_a = psd_sqrt(pol.sigma_a)
    root_s = psd_sqrt(p.sigma_s)
    da = np.empty((count, p.horizon, p.m))
    ds = np.empty((count, p.horizon, p.n))
    for i in range(count):
        da[i], ds[i] = unit_draws(key.at(trajectory_index=start + i), p.horizon, p.n, p.m)
    return simulate(p, pol.k, s1, np.einsum("ij,ntj->nti", root_a, da), np.einsum("ij,ntj->nti", root_s, ds))


def rollout(p: LqrProblem, pol: GaussianPolicy, s1, key: RngKey) -> Trajectory:
    """One stochastic trajectory; bit-identical for identical inputs and key."""
    return rollout_batch(p, pol, s1, key.at(trajectory_index=0), 1, start=key.trajectory_index)[0]


def rollout_deterministic_batch(p: LqrProblem, k, s1) -> TrajectoryBatch:
    k = as_mat(k, "k")
    require_valid(p, GaussianPolicy(k, np.zeros((p.m, p.m))), allow_singular_sigma_a=True)
    s1 = np.atleast_2d(np.asarray(s1, dtype=float))
    if s1.shape[1] != p.n:
        raise DomainError(f"initial states must have {p.n} columns")
    zeros_a = np.zeros((s1.shape[0], p.horizon, p.m))
    zeros_s = np.zeros((s1.shape[0], p.horizon, p.n))
    return simulate(p, k, s1, zeros_a, zeros_s)


def rollout_deterministic(p: LqrProblem, k, s1) -> Trajectory:
    """Noise-free trajectory of ``a = K s`` (noise covariances ignored)."""
    return rollout_deterministic_batch(p, k, as_state(s1, p.n)[None])[0]


def write_trajectory_csv(traj: Trajectory, fh: IO[str]) -> None:
    """One row per timestep: ``t, s[0..n), a[0..m), eps_a[0..m), reward``."""
    n = traj.states.shape[1]
    m = traj.actions.shape[1]
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(["t"] + [f"s{i}" for i in range(n)] + [f"a{i}" for i in range(m)]
                    + [f"eps_a{i}" for i in range(m)] + ["reward"])
    for t in range(traj.states.shape[0]):
        row = [t + 1, *traj.states[t], *traj.actions[t], *traj.action_noise[t], traj.rewards[t]]
        writer.writerow([v if isinstance(v, int) else repr(float(v)) for v in row])
