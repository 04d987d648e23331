"""Closed-form bounds on the second moment of the REINFORCE estimator.

``upper_bound`` evaluates the fully explicit general-dimension bound

    E[tr(g'g)] <= p_bar * M,
    p_bar = 4 ||Sigma_a^{-1}|| mu^2 H'^2
            (r sa^2 H + mu^2 (q + 2 r k^2)(H' |s1|^2 + sigma^2 H H'^2))^2
            (|s1| + sigma H)^2,
    M     = nb (nb + 2)(nb + 4)(nb + 6),   nb = max(n, m),

where ``q, r, k, b`` are operator norms, ``sa^2 = ||Sigma_a||``,
``ss^2 = ||Sigma_s||``, ``sigma = ss + b sa`` and ``H' = min(H, 1/(1-rho))``.
``M`` is the eighth moment of a chi(nb) variable.

``lower_bound_scalar`` evaluates the nominal scalar lower bound ``c1^2 c2^2``
(unit constant) valid for ``0 <= a + b k < 1``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from pglqr.ctrlmath import DEGENERATE_RHO, TransientBound, operator_norm, spectral_radius, transient_bound_mu
from pglqr.errors import DomainError
from pglqr.lqrmodel import GaussianPolicy, LqrProblem, as_state, require_valid


def capped_horizon(horizon: float, contraction: float) -> float:
    """``min(H, 1/(1 - x))`` without forming an infinite intermediate."""
    gap = 1.0 - contraction
    if gap * horizon <= 1.0:
        return float(horizon)
    return 1.0 / gap


def chi_eighth_moment(k: int) -> int:
    return k * (k + 2) * (k + 4) * (k + 6)


@dataclass(frozen=True)
class BoundNorms:
    q: float
    r: float
    k: float
    b: float
    sigma_s: float
    sigma_a: float
    inv_sigma_a: float


@dataclass(frozen=True)
class UpperBoundReport:
    bound: float
    p_bar: float
    moment_factor: float
    mu: float
    rho: float
    h_prime: float
    sigma: float
    c1: float
    c2: float
    norms: BoundNorms
    n_bar: int


def closed_loop_transient(p: LqrProblem, pol: GaussianPolicy) -> TransientBound:
    """Transient constant of ``A + B K`` over powers ``0..H``."""
    m_cl = p.a + p.b @ pol.k
    rho = spectral_radius(m_cl)
    if rho >= 1.0:
        raise DomainError(f"upper bound hypothesis violated: rho(A + BK) = {rho:.6g} >= 1")
    return transient_bound_mu(m_cl, p.horizon, allow_degenerate=rho < DEGENERATE_RHO, resolvent=False)


def upper_bound(p: LqrProblem, pol: GaussianPolicy, s1, *, transient: TransientBound | None = None) -> UpperBoundReport:
    """General-dimension upper bound on ``E[tr(g_hat' g_hat)]`` for a fixed ``s1``.

    ``transient`` may be passed to reuse a precomputed closed-loop certificate
    across many initial states.
    """
    require_valid(p, pol)
    s1 = as_state(s1, p.n)
    if transient is None:
        transient = closed_loop_transient(p, pol)
    mu, f = transient.mu, transient.rho
    if f >= 1.0:
        raise DomainError("upper bound hypothesis violated: rho(A + BK) >= 1")
    horizon = p.horizon

    norms = BoundNorms(
        q=operator_norm(p.q),
        r=operator_norm(p.r),
        k=operator_norm(pol.k),
        b=operator_norm(p.b),
        sigma_s=math.sqrt(operator_norm(p.sigma_s)),
        sigma_a=math.sqrt(operator_norm(pol.sigma_a)),
        # ||Sigma_a^{-1}|| = 1 / lambda_min for symmetric PD Sigma_a
        inv_sigma_a=1.0 / float(np.linalg.eigvalsh(pol.sigma_a)[0]),
    )
    s_norm = float(np.linalg.norm(s1))
    sigma = norms.sigma_s + norms.b * norms.sigma_a
    hp = capped_horizon(horizon, f)
    mu2 = mu * mu
    var_a = norms.sigma_a * norms.sigma_a
    spread = s_norm + sigma * horizon

    # plain products overflow to inf (flagged by callers) where ** would raise
    cost = norms.r * var_a * horizon + mu2 * (norms.q + 2.0 * norms.r * norms.k * norms.k) * (
        hp * s_norm * s_norm + sigma * sigma * horizon * hp * hp)
    p_bar = 4.0 * norms.inv_sigma_a * mu2 * hp * hp * cost * cost * spread * spread
    n_bar = max(p.n, p.m)
    moment = float(chi_eighth_moment(n_bar))

    c1 = mu2 * math.sqrt(norms.inv_sigma_a) * spread * hp
    c2 = norms.r * var_a * horizon + mu2 * (norms.q + norms.r * norms.k * norms.k) * (
        s_norm * s_norm + sigma * sigma * horizon) * hp * hp
    return UpperBoundReport(bound=p_bar * moment, p_bar=p_bar, moment_factor=moment, mu=mu, rho=f,
                            h_prime=hp, sigma=sigma, c1=c1, c2=c2, norms=norms, n_bar=n_bar)


@dataclass(frozen=True)
class ScalarLowerBoundReport:
    bound: float
    c1: float
    c2: float
    h_prime_sq: float
    closed_loop: float


def lower_bound_scalar(a: float, b: float, k: float, q: float, r: float, sigma_s: float,
                       sigma_a: float, s1: float, horizon: int) -> ScalarLowerBoundReport:
    """Nominal scalar lower bound ``c1^2 c2^2`` on ``E[g_hat^2]``.

    ``sigma_s`` and ``sigma_a`` are standard deviations.  The input gain enters
    ``sigma`` through ``|b|``.
    """
    f = a + b * k
    if not 0.0 <= f < 1.0:
        raise DomainError(f"scalar lower bound needs 0 <= a + b k < 1, got {f:.6g}")
    if not sigma_a > 0.0:
        raise DomainError("sigma_a must be positive")
    if sigma_s < 0.0 or horizon < 1:
        raise DomainError("sigma_s must be nonnegative and horizon >= 1")
    sigma = sigma_s + abs(b) * sigma_a
    hp = capped_horizon(horizon, f * f)
    c1 = (abs(s1) + sigma * math.sqrt(horizon)) * math.sqrt(hp) / sigma_a
    c2 = r * sigma_a**2 * horizon + (q + r * k * k) * (s1 * s1 + sigma**2 * horizon) * hp
    return ScalarLowerBoundReport(bound=c1 * c1 * c2 * c2, c1=c1, c2=c2, h_prime_sq=hp, closed_loop=f)


def lower_bound_for(p: LqrProblem, pol: GaussianPolicy, s1) -> ScalarLowerBoundReport:
    """Scalar lower bound evaluated from a 1x1 problem and policy."""
    require_valid(p, pol)
    if p.n != 1 or p.m != 1:
        raise DomainError("scalar lower bound requires n = m = 1")
    return lower_bound_scalar(float(p.a[0, 0]), float(p.b[0, 0]), float(pol.k[0, 0]), float(p.q[0, 0]),
                              float(p.r[0, 0]), math.sqrt(float(p.sigma_s[0, 0])),
                              math.sqrt(float(pol.sigma_a[0, 0])), float(as_state(s1, 1)[0]), p.horizon)
