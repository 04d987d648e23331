"""Dense linear algebra and control synthesis primitives.

Matrices are plain 2-D ``float64`` numpy arrays.  :func:`as_mat` is the single
entry point that enforces the invariants (2-D, finite entries); everything
else in the package passes matrices through it.

Sign convention: gains act as ``a = K s`` (no minus sign), so closed loops are
``A + B K`` throughout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from pglqr.errors import DimensionError, DomainError, NumericalError

RANK_RTOL = 1e-10
DARE_RTOL = 1e-12
DARE_MAX_ITER = 1_000_000
DEGENERATE_RHO = 1e-12
PLACE_RETRIES = 10
PLACE_RTOL = 1e-6


def as_mat(x, name: str = "matrix") -> np.ndarray:
    """Coerce ``x`` to a finite 2-D float64 array.

    Scalars become 1x1 matrices and 1-D input becomes a column vector.
    """
    arr = np.array(x, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    elif arr.ndim != 2:
        raise DimensionError(f"{name}: expected a 2-D matrix, got ndim={arr.ndim}")
    if arr.size == 0:
        raise DimensionError(f"{name}: empty matrix")
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"{name}: non-finite entries")
    return arr


def _require_square(m: np.ndarray, name: str) -> None:
    if m.shape[0] != m.shape[1]:
        raise DimensionError(f"{name}: expected square matrix, got {m.shape}")


def eigenvalues(m) -> np.ndarray:
    m = as_mat(m)
    _require_square(m, "eigenvalues")
    try:
        return np.linalg.eigvals(m)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"eigenvalue iteration failed: {exc}") from exc


def spectral_radius(m) -> float:
    """Largest eigenvalue modulus of a square matrix."""
    return float(np.max(np.abs(eigenvalues(m))))


def operator_norm(m) -> float:
    """Spectral (l2 -> l2) norm, i.e. the largest singular value."""
    m = as_mat(m)
    try:
        return float(np.linalg.norm(m, 2))
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"SVD failed: {exc}") from exc


def psd_sqrt(s, tol: float = 1e-10) -> np.ndarray:
    """Principal square root of a symmetric positive semidefinite matrix.

    Slightly negative eigenvalues (down to ``-tol * ||s||``) are clamped to
    zero; anything worse is a :class:`DomainError`.
    """
    s = as_mat(s)
    _require_square(s, "psd_sqrt")
    scale = operator_norm(s)
    if np.max(np.abs(s - s.T)) > tol * max(scale, np.finfo(float).tiny):
        raise DomainError("psd_sqrt: matrix is not symmetric")
    w, v = np.linalg.eigh(0.5 * (s + s.T))
    if w.min() < -tol * scale:
        raise DomainError(f"psd_sqrt: matrix is indefinite (min eigenvalue {w.min():.3e})")
    root = (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T
    return 0.5 * (root + root.T)


def controllability_matrix(a, b) -> np.ndarray:
    a = as_mat(a, "A")
    b = as_mat(b, "B")
    _require_square(a, "A")
    if b.shape[0] != a.shape[0]:
        raise DimensionError(f"B has {b.shape[0]} rows, A is {a.shape[0]}x{a.shape[0]}")
    blocks = [b]
    for _ in range(a.shape[0] - 1):
        blocks.append(a @ blocks[-1])
    return np.hstack(blocks)


def numerical_rank(m, rtol: float = RANK_RTOL) -> int:
    sv = np.linalg.svd(as_mat(m), compute_uv=False)
    if sv[0] == 0.0:
        return 0
    return int(np.sum(sv > rtol * sv[0]))


def controllability_rank(a, b) -> int:
    """Numerical rank of ``[B, AB, ..., A^{n-1} B]``; controllable iff equal to n."""
    return numerical_rank(controllability_matrix(a, b))


def is_controllable(a, b) -> bool:
    return controllability_rank(a, b) == as_mat(a).shape[0]


@dataclass(frozen=True)
class DareSolution:
    p: np.ndarray
    k_star: np.ndarray
    residual: float
    iterations: int


def _riccati_step(a, b, q, r, p):
    bp = b.T @ p
    gain = np.linalg.solve(r + bp @ b, bp @ a)
    nxt = q + a.T @ p @ a - (a.T @ p @ b) @ gain
    return 0.5 * (nxt + nxt.T), gain


def dare_residual(a, b, q, r, p) -> float:
    nxt, _ = _riccati_step(a, b, q, r, p)
    return operator_norm(p - nxt)


def solve_dare(a, b, q, r, *, rtol: float = DARE_RTOL, max_iter: int = DARE_MAX_ITER) -> DareSolution:
    """Solve the discrete algebraic Riccati equation by value iteration.

    Starts at ``P = Q`` and iterates the Riccati map until the relative change
    drops below ``rtol``.  Returns the optimal gain in the ``a = K s``
    convention, ``K* = -(R + B'PB)^{-1} B'PA``.
    """
    a, b, q, r = (as_mat(x, nm) for x, nm in zip((a, b, q, r), "ABQR"))
    n, m = b.shape
    if a.shape != (n, n) or q.shape != (n, n) or r.shape != (m, m):
        raise DimensionError(f"DARE shapes: A{a.shape} B{b.shape} Q{q.shape} R{r.shape}")
    if not is_controllable(a, b):
        raise DomainError("solve_dare: (A, B) is not controllable")

    p = 0.5 * (q + q.T)
    for it in range(1, max_iter + 1):
        try:
            nxt, _ = _riccati_step(a, b, q, r, p)
        except np.linalg.LinAlgError as exc:
            raise NumericalError(f"solve_dare: singular R + B'PB at iteration {it}") from exc
        if not np.all(np.isfinite(nxt)):
            raise NumericalError("solve_dare: iteration diverged")
        change = np.max(np.abs(nxt - p))
        p = nxt
        if change <= rtol * max(np.max(np.abs(p)), np.finfo(float).tiny):
            break
    else:
        raise NumericalError(f"solve_dare: no convergence after {max_iter} iterations")

    bp = b.T @ p
    k_star = -np.linalg.solve(r + bp @ b, bp @ a)
    residual = dare_residual(a, b, q, r, p)
    if residual > 1e-8 * (1.0 + operator_norm(p)):
        raise NumericalError(f"solve_dare: residual {residual:.3e} too large")
    if spectral_radius(a + b @ k_star) >= 1.0:
        raise NumericalError("solve_dare: fixed point does not stabilize (A, B)")
    return DareSolution(p=p, k_star=k_star, residual=residual, iterations=it)


@dataclass(frozen=True)
class TransientBound:
    """Certificate that ``||M^k|| <= mu * rho^k`` for ``0 <= k <= k_max``."""

    mu: float
    rho: float
    k_max: int
    resolvent_estimate: float


DEFAULT_RADII = tuple(1.0 + np.geomspace(1e-3, 99.0, 16))
DEFAULT_ANGLES = 64


def resolvent_condition(m, radii: Sequence[float] = DEFAULT_RADII, angles_per_radius: int = DEFAULT_ANGLES) -> float:
    """Grid estimate of ``sup_{|z|>1} (|z| - 1) ||(zI - M)^{-1}||``.

    The grid maximum is a lower estimate of the supremum.
    """
    m = as_mat(m)
    _require_square(m, "resolvent_condition")
    if spectral_radius(m) >= 1.0:
        raise DomainError("resolvent_condition: spectral radius must be below 1")
    radii = np.asarray(radii, dtype=float)
    if radii.size == 0 or np.any(radii <= 1.0):
        raise DomainError("resolvent_condition: radii must exceed 1")
    if angles_per_radius < 1:
        raise DomainError("resolvent_condition: need at least one angle")
    theta = 2.0 * np.pi * np.arange(angles_per_radius) / angles_per_radius
    z = (radii[:, None] * np.exp(1j * theta)[None, :]).ravel()
    n = m.shape[0]
    shifted = z[:, None, None] * np.eye(n)[None] - m[None].astype(complex)
    smin = np.linalg.svd(shifted, compute_uv=False)[:, -1]
    if np.any(smin <= 0.0):
        raise NumericalError("resolvent_condition: singular zI - M on the grid")
    return float(np.max((np.abs(z) - 1.0) / smin))


def transient_bound_mu(m, k_max: int, *, allow_degenerate: bool = False,
                       resolvent: bool = True) -> TransientBound:
    """Smallest ``mu`` with ``||M^k|| <= mu rho(M)^k`` for ``k = 0..k_max``.

    A nilpotent-like ``M`` (``rho < 1e-12``) has no such constant; with
    ``allow_degenerate=True`` rho is clamped to 1e-12 and the certificate is
    computed against the clamped value.
    """
    m = as_mat(m)
    _require_square(m, "transient_bound_mu")
    if k_max < 1:
        raise DomainError("transient_bound_mu: k_max must be >= 1")
    rho = spectral_radius(m)
    if rho >= 1.0:
        raise DomainError(f"unstable closed loop (rho = {rho:.6g})")
    if rho < DEGENERATE_RHO:
        if not allow_degenerate:
            raise DomainError("transient_bound_mu: rho(M) ~ 0, transient constant undefined")
        rho = DEGENERATE_RHO

    mu = 1.0
    power = np.eye(m.shape[0])
    log_rho = math.log(rho)
    for k in range(1, k_max + 1):
        power = power @ m
        norm_k = operator_norm(power)
        if norm_k == 0.0:
            break
        ratio = math.exp(math.log(norm_k) - k * log_rho)
        mu = max(mu, ratio)
    # rounding in the ratio can undershoot by an ulp; nudge so the certificate holds
    mu = float(np.nextafter(mu, np.inf)) if mu > 1.0 else 1.0

    r_est = resolvent_condition(m) if resolvent else float("nan")
    return TransientBound(mu=mu, rho=rho, k_max=int(k_max), resolvent_estimate=r_est)


def char_poly_from_eigs(lambdas, tol: float = 1e-12) -> np.ndarray:
    """Real monic polynomial ``[1, c1, ..., cn]`` with the given roots.

    Non-real roots must come in conjugate pairs (matched to within ``tol``
    relative).
    """
    pending = [complex(x) for x in lambdas]
    if not pending:
        raise DomainError("char_poly_from_eigs: empty eigenvalue list")
    coeffs = np.array([1.0])
    while pending:
        lam = pending.pop(0)
        scale = tol * max(1.0, abs(lam))
        if abs(lam.imag) <= scale:
            coeffs = np.polymul(coeffs, [1.0, -lam.real])
            continue
        dist = [abs(other - lam.conjugate()) for other in pending]
        if not dist or min(dist) > scale:
            raise DomainError(f"char_poly_from_eigs: {lam} has no conjugate partner")
        pending.pop(int(np.argmin(dist)))
        coeffs = np.polymul(coeffs, [1.0, -2.0 * lam.real, abs(lam) ** 2])
    return coeffs


def match_spectra(got, want) -> float:
    """Worst pairwise distance between two eigenvalue multisets under the best matching."""
    got = np.asarray(got, dtype=complex)
    want = np.asarray(want, dtype=complex)
    cost = np.abs(got[:, None] - want[None, :])
    rows, cols = linear_sum_assignment(cost)
    return float(cost[rows, cols].max())


def _ackermann(a: np.ndarray, b_col: np.ndarray, poly: np.ndarray) -> np.ndarray:
    n = a.shape[0]
    ctrb = controllability_matrix(a, b_col)
    phi = np.zeros_like(a)
    for c in poly:
        phi = phi @ a + c * np.eye(n)
    e_n = np.zeros(n)
    e_n[-1] = 1.0
    # row = e_n' C^{-1}, solved as C' x = e_n
    row = np.linalg.solve(ctrb.T, e_n)
    return -(row @ phi)


def place_poles(a, b, lambdas, *, seed: int = 0) -> np.ndarray:
    """State-feedback gain K with spectrum of ``A + B K`` equal to ``lambdas``.

    Multi-input systems are reduced to single-input by a random input
    direction ``v`` (cyclic reduction), after which Ackermann's formula is
    applied.  The spectrum is verified and the draw retried on failure.
    """
    a = as_mat(a, "A")
    b = as_mat(b, "B")
    _require_square(a, "A")
    n, m = b.shape
    if a.shape[0] != n:
        raise DimensionError(f"A is {a.shape}, B is {b.shape}")
    want = np.asarray([complex(x) for x in lambdas])
    if want.size != n:
        raise DimensionError(f"need {n} eigenvalues, got {want.size}")
    poly = char_poly_from_eigs(want)
    if not is_controllable(a, b):
        raise DomainError("place_poles: (A, B) is not controllable")

    rng = np.random.default_rng(seed)
    tol = PLACE_RTOL * max(1.0, float(np.max(np.abs(want))))
    for _ in range(PLACE_RETRIES):
        v = rng.standard_normal(m) if m > 1 else np.ones(1)
        b_col = (b @ v).reshape(n, 1)
        if not is_controllable(a, b_col):
            continue
        try:
            k_row = _ackermann(a, b_col, poly)
        except np.linalg.LinAlgError:
            continue
        k = np.outer(v, k_row)
        if match_spectra(eigenvalues(a + b @ k), want) <= tol:
            return k
    raise NumericalError(f"place_poles: spectrum not reached after {PLACE_RETRIES} attempts")
