"""Random LQR problems and eigenvalue prototypes for pole placement sweeps."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from pglqr.ctrlmath import is_controllable, solve_dare
from pglqr.errors import ConfigError, NumericalError
from pglqr.lqrmodel import GaussianPolicy, LqrProblem, dumps_problem
from pglqr.rollout import RngKey, Stream, as_generator

MAX_RESAMPLE = 5


@dataclass(frozen=True)
class ProblemRecipe:
    n: int
    m: int
    horizon: int
    sigma_s_scale: float = 1.0
    sigma_a_scale: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if min(self.n, self.m, self.horizon) < 1:
            raise ConfigError("n, m and horizon must be >= 1")
        if not (self.sigma_s_scale > 0 and self.sigma_a_scale > 0):
            raise ConfigError("noise scales must be positive")


def wishart_psd(k: int, key) -> np.ndarray:
    """``X' X`` with ``X`` a k x k matrix of i.i.d. ``N(0, 1/k)`` entries.

    Normalized so that ``E[x' Q x] = 1`` for ``x ~ N(0, I/k)``.
    """
    if k < 1:
        raise ConfigError("wishart_psd: k must be >= 1")
    x = as_generator(key).standard_normal((k, k)) / np.sqrt(k)
    return x.T @ x


def random_lqr(recipe: ProblemRecipe) -> tuple[LqrProblem, GaussianPolicy]:
    """Sample a problem and return it with the policy ``K = K*``.

    ``A`` and ``B`` have i.i.d. ``N(0, 1/n)`` and ``N(0, 1/m)`` entries; ``Q``,
    ``R``, ``Sigma_s`` and ``Sigma_a`` are Wishart draws, the last two scaled
    by the recipe's noise scales.  Uncontrollable draws are resampled.
    """
    n, m = recipe.n, recipe.m
    for attempt in range(MAX_RESAMPLE):
        rng = RngKey(recipe.seed, Stream.PROBLEM, s1_index=attempt).generator()
        a = rng.standard_normal((n, n)) / np.sqrt(n)
        b = rng.standard_normal((n, m)) / np.sqrt(m)
        q = wishart_psd(n, rng)
        r = wishart_psd(m, rng)
        sigma_s = recipe.sigma_s_scale * wishart_psd(n, rng)
        sigma_a = recipe.sigma_a_scale * wishart_psd(m, rng)
        if is_controllable(a, b):
            break
    else:
        raise NumericalError(f"random_lqr: no controllable draw in {MAX_RESAMPLE} attempts")
    problem = LqrProblem(a=a, b=b, q=q, r=r, sigma_s=sigma_s, horizon=recipe.horizon)
    k_star = solve_dare(a, b, q, r).k_star
    return problem, GaussianPolicy(k=k_star, sigma_a=sigma_a)


def dumps_recipe(recipe: ProblemRecipe) -> str:
    """Serialized ``random_lqr(recipe)`` with the recipe in a header comment."""
    problem, policy = random_lqr(recipe)
    header = " ".join(f"{k}={v}" for k, v in asdict(recipe).items())
    return dumps_problem(problem, policy, header=[f"recipe {header}"])


@dataclass(frozen=True)
class EigPrototype:
    lambdas: tuple[complex, ...]
    seed: int = 0

    @property
    def max_modulus(self) -> float:
        return max(abs(x) for x in self.lambdas)


def eig_prototype(n: int, key) -> EigPrototype:
    """Prototype spectrum: ``n // 2`` conjugate pairs ``r e^{+-i phi}`` plus reals.

    ``r ~ U[0, 1]``, ``phi ~ U[0, pi)``; leftover real eigenvalues are
    ``U[-1, 1]``.
    """
    if n < 1:
        raise ConfigError("eig_prototype: n must be >= 1")
    rng = as_generator(key)
    lambdas: list[complex] = []
    for _ in range(n // 2):
        radius = rng.uniform(0.0, 1.0)
        phi = rng.uniform(0.0, np.pi)
        lam = radius * np.exp(1j * phi)
        lambdas += [lam, lam.conjugate()]
    lambdas += [complex(rng.uniform(-1.0, 1.0)) for _ in range(n - len(lambdas))]
    seed = key.seed if isinstance(key, RngKey) else 0
    return EigPrototype(lambdas=tuple(lambdas), seed=seed)


def scale_prototype(proto: EigPrototype, rho: float) -> list[complex]:
    if rho < 0:
        raise ConfigError("scale_prototype: rho must be nonnegative")
    return [rho * lam for lam in proto.lambdas]


def normalized_prototype(proto: EigPrototype) -> EigPrototype:
    """Rescale so the largest modulus is exactly 1 (then ``rho`` scaling is exact)."""
    return EigPrototype(lambdas=tuple(lam / proto.max_modulus for lam in proto.lambdas), seed=proto.seed)
