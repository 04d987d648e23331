"""LQR problem/policy data model, validation and closed-form moments.

Time runs over ``t = 1..H``: states ``s_1..s_H``, actions ``a_1..a_H`` and
``H`` rewards ``r_t = -(s_t' Q s_t + a_t' R a_t)``.  The initial state ``s_1``
is always a fixed vector; averaging over initial states is the caller's job.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from pglqr.ctrlmath import as_mat, operator_norm
from pglqr.errors import DimensionError, DomainError

PSD_RTOL = 1e-10
PD_RTOL = 1e-12
SYM_RTOL = 1e-10


@dataclass(frozen=True, eq=False)
class LqrProblem:
    a: np.ndarray
    b: np.ndarray
    q: np.ndarray
    r: np.ndarray
    sigma_s: np.ndarray
    horizon: int

    def __post_init__(self):
        for name in ("a", "b", "q", "r", "sigma_s"):
            object.__setattr__(self, name, as_mat(getattr(self, name), name))
        object.__setattr__(self, "horizon", int(self.horizon))

    @property
    def n(self) -> int:
        return self.a.shape[0]

    @property
    def m(self) -> int:
        return self.b.shape[1]

    def replace(self, **changes) -> "LqrProblem":
        fields = dict(a=self.a, b=self.b, q=self.q, r=self.r, sigma_s=self.sigma_s, horizon=self.horizon)
        fields.update(changes)
        return LqrProblem(**fields)


@dataclass(frozen=True, eq=False)
class GaussianPolicy:
    """Linear-Gaussian policy ``a = K s + eps``, ``eps ~ N(0, sigma_a)``."""

    k: np.ndarray
    sigma_a: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "k", as_mat(self.k, "k"))
        object.__setattr__(self, "sigma_a", as_mat(self.sigma_a, "sigma_a"))

    def replace(self, **changes) -> "GaussianPolicy":
        fields = dict(k=self.k, sigma_a=self.sigma_a)
        fields.update(changes)
        return GaussianPolicy(**fields)


@dataclass(frozen=True)
class Violation:
    code: str
    detail: str


def _sym_eigs(x: np.ndarray) -> tuple[bool, np.ndarray]:
    scale = max(operator_norm(x), np.finfo(float).tiny)
    symmetric = np.max(np.abs(x - x.T)) <= SYM_RTOL * scale
    return symmetric, np.linalg.eigvalsh(0.5 * (x + x.T))


def is_psd(x) -> bool:
    x = as_mat(x)
    if x.shape[0] != x.shape[1]:
        return False
    sym, w = _sym_eigs(x)
    return bool(sym and w.min() >= -PSD_RTOL * operator_norm(x))


def is_pd(x) -> bool:
    x = as_mat(x)
    if x.shape[0] != x.shape[1]:
        return False
    sym, w = _sym_eigs(x)
    return bool(sym and w.min() > PD_RTOL * operator_norm(x))


def validate(p: LqrProblem, pol: GaussianPolicy | None = None, *,
             allow_singular_sigma_a: bool = False, allow_singular_r: bool = False) -> list[Violation]:
    """Every invariant violation of ``(p, pol)``; an empty list means valid.

    The ``allow_singular_*`` switches relax PD to PSD for closed-form
    evaluation, which stays well defined without invertibility.
    """
    out: list[Violation] = []
    n = p.a.shape[0]
    if p.a.shape != (n, n):
        out.append(Violation("DIM_MISMATCH", f"A must be square, got {p.a.shape}"))
    m = p.b.shape[1]
    if p.b.shape[0] != n:
        out.append(Violation("DIM_MISMATCH", f"B has {p.b.shape[0]} rows, expected {n}"))
    if p.q.shape != (n, n):
        out.append(Violation("DIM_MISMATCH", f"Q is {p.q.shape}, expected {(n, n)}"))
    if p.r.shape != (m, m):
        out.append(Violation("DIM_MISMATCH", f"R is {p.r.shape}, expected {(m, m)}"))
    if p.sigma_s.shape != (n, n):
        out.append(Violation("DIM_MISMATCH", f"sigma_s is {p.sigma_s.shape}, expected {(n, n)}"))
    if p.horizon < 1:
        out.append(Violation("BAD_HORIZON", f"horizon must be >= 1, got {p.horizon}"))
    if p.q.shape == (n, n) and not is_psd(p.q):
        out.append(Violation("Q_NOT_PSD", "Q must be symmetric positive semidefinite"))
    if p.r.shape == (m, m) and allow_singular_r:
        if not is_psd(p.r):
            out.append(Violation("R_NOT_PSD", "R must be symmetric positive semidefinite"))
    elif p.r.shape == (m, m) and not is_pd(p.r):
        out.append(Violation("R_NOT_PD", "R must be symmetric positive definite"))
    if p.sigma_s.shape == (n, n) and not is_psd(p.sigma_s):
        out.append(Violation("SIGMA_S_NOT_PSD", "sigma_s must be symmetric positive semidefinite"))
    if pol is not None:
        if pol.k.shape != (m, n):
            out.append(Violation("DIM_MISMATCH", f"K is {pol.k.shape}, expected {(m, n)}"))
        if pol.sigma_a.shape != (m, m):
            out.append(Violation("DIM_MISMATCH", f"sigma_a is {pol.sigma_a.shape}, expected {(m, m)}"))
        elif allow_singular_sigma_a:
            if not is_psd(pol.sigma_a):
                out.append(Violation("SIGMA_A_NOT_PSD", "sigma_a must be symmetric positive semidefinite"))
        elif not is_pd(pol.sigma_a):
            out.append(Violation("SIGMA_A_NOT_PD", "sigma_a must be symmetric positive definite"))
    return out


def require_valid(p: LqrProblem, pol: GaussianPolicy | None = None, **kw) -> None:
    problems = validate(p, pol, **kw)
    if problems:
        codes = ", ".join(f"{v.code} ({v.detail})" for v in problems)
        cls = DimensionError if all(v.code == "DIM_MISMATCH" for v in problems) else DomainError
        raise cls(f"invalid LQR problem: {codes}")


def as_state(s1, n: int) -> np.ndarray:
    s = np.asarray(s1, dtype=float).reshape(-1)
    if s.shape != (n,):
        raise DimensionError(f"initial state has length {s.size}, expected {n}")
    if not np.all(np.isfinite(s)):
        raise DomainError("initial state has non-finite entries")
    return s


@dataclass(frozen=True)
class MomentTrace:
    second_moments: list[np.ndarray]
    expected_return: float


def exact_moments(p: LqrProblem, pol: GaussianPolicy, s1) -> MomentTrace:
    """Closed-form ``E[s_t s_t']`` for ``t = 1..H`` and the expected return.

    With ``M = A + BK`` and ``N = Sigma_s + B Sigma_a B'`` the recursion is
    ``S_{t+1} = M S_t M' + N`` from ``S_1 = s1 s1'``.
    """
    require_valid(p, pol, allow_singular_sigma_a=True, allow_singular_r=True)
    s1 = as_state(s1, p.n)
    m_cl = p.a + p.b @ pol.k
    noise = p.sigma_s + p.b @ pol.sigma_a @ p.b.T
    action_cost = float(np.trace(p.r @ pol.sigma_a))
    s = np.outer(s1, s1)
    moments = []
    total = 0.0
    for t in range(p.horizon):
        if t:
            s = m_cl @ s @ m_cl.T + noise
            s = 0.5 * (s + s.T)
        moments.append(s)
        total -= float(np.trace(p.q @ s)) + float(np.trace(p.r @ pol.k @ s @ pol.k.T)) + action_cost
    return MomentTrace(second_moments=moments, expected_return=total)


def exact_return(p: LqrProblem, pol: GaussianPolicy, s1) -> float:
    return exact_moments(p, pol, s1).expected_return


# --- plain-text serialization ------------------------------------------------

_MATRIX_KEYS = ("a", "b", "q", "r", "sigma_s")
_POLICY_KEYS = ("k", "sigma_a")


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def _dump_mat(key: str, x: np.ndarray) -> str:
    return f"{key} = {x.shape[0]} {x.shape[1]} : " + " ".join(_fmt(v) for v in x.ravel())


def dumps_problem(p: LqrProblem, pol: GaussianPolicy | None = None,
                  header: Iterable[str] = ()) -> str:
    """Serialize to ``key = value`` lines; floats use 17 significant digits."""
    lines = [f"# {h}" for h in header]
    lines += ["format = pglqr-problem/1", f"n = {p.n}", f"m = {p.m}", f"horizon = {p.horizon}"]
    lines += [_dump_mat(key, getattr(p, key)) for key in _MATRIX_KEYS]
    if pol is not None:
        lines += [_dump_mat(key, getattr(pol, key)) for key in _POLICY_KEYS]
    return "\n".join(lines) + "\n"


def loads_problem(text: str) -> tuple[LqrProblem, GaussianPolicy | None]:
    entries: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ValueError(f"line {lineno}: expected 'key = value'")
        entries[key.strip()] = value.strip()

    def mat(key: str) -> np.ndarray:
        try:
            shape, _, values = entries[key].partition(":")
        except KeyError:
            raise ValueError(f"missing key {key!r}") from None
        rows, cols = (int(v) for v in shape.split())
        data = np.array([float(v) for v in values.split()])
        if data.size != rows * cols:
            raise ValueError(f"{key}: expected {rows * cols} entries, got {data.size}")
        return data.reshape(rows, cols)

    if entries.get("format") != "pglqr-problem/1":
        raise ValueError("unrecognized problem format")
    problem = LqrProblem(**{k: mat(k) for k in _MATRIX_KEYS}, horizon=int(entries["horizon"]))
    if problem.n != int(entries["n"]) or problem.m != int(entries["m"]):
        raise ValueError("declared dimensions disagree with matrices")
    policy = None
    if all(k in entries for k in _POLICY_KEYS):
        policy = GaussianPolicy(k=mat("k"), sigma_a=mat("sigma_a"))
    return problem, policy
