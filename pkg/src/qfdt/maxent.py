"""Inverse MaxEnt: find multipliers ``alpha`` reproducing target expectations.

The forward map ``alpha -> <F>`` is minus the gradient of ``ln Z`` and its
Jacobian is minus the covariance matrix of the observables, so Newton's
method on ``<F>(alpha) - f = 0`` needs no numerical differentiation.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional, Sequence

import numpy as np

from .ensembles import EnsembleSpec, build_generalized
from .exceptions import (
    CompatibilityError,
    ConvergenceError,
    IllPosedError,
    InfeasibleError,
    ShapeError,
)
from .identities import covariance
from .operators import COMPAT_TOL, OperatorFamily, commutator_norm, hermitian

log = logging.getLogger(__name__)

ARMIJO = 1e-4
MIN_STEP = 1e-12


def joint_eigenbasis(observables: Sequence[np.ndarray], tol: float = 1e-9, compat_tol: float = COMPAT_TOL):
    """Common eigenbasis of commuting Hermitian matrices.

    Diagonalizes the first observable, then refines each degenerate block
    with the next one, and so on.

    Returns
    -------
    vecs : ndarray (d, d)
        Unitary whose columns are common eigenvectors.
    values : ndarray (d, n)
        ``values[i, j]`` is the eigenvalue of observable ``j`` on column ``i``.
    """
    d = observables[0].shape[0]
    vecs = np.eye(d, dtype=complex)
    groups = [np.arange(d)]
    for f in observables:
        new_groups = []
        for g in groups:
            block = vecs[:, g]
            w, u = np.linalg.eigh(block.conj().T @ f @ block)
            vecs[:, g] = block @ u
            start = 0
            for i in range(1, len(w) + 1):
                if i == len(w) or w[i] - w[start] > tol * max(1.0, abs(w[start])):
                    new_groups.append(g[start:i])
                    start = i
        groups = new_groups
    values = np.empty((d, len(observables)))
    for j, f in enumerate(observables):
        m = vecs.conj().T @ f @ vecs
        off = np.max(np.abs(m - np.diag(np.diag(m))))
        if off > max(compat_tol, 1e-10 * np.max(np.abs(f))):
            raise CompatibilityError(f"observable {j} is not diagonal in the joint basis (off-diagonal {off:.3e})")
        values[:, j] = np.diag(m).real
    return vecs, values


@dataclass(frozen=True, eq=False)
class MaxEntProblem:
    """Constraint observables ``F_j`` (fixed matrices) and target means ``f_j``."""

    observables: tuple
    targets: np.ndarray
    alpha0: Optional[np.ndarray] = None
    max_iter: int = 100
    grad_tol: float = 1e-10
    damping: float = 0.5
    cond_max: float = 1e12
    compat_tol: float = COMPAT_TOL

    def __post_init__(self):
        obs = tuple(hermitian(f, name=f"F{j}") for j, f in enumerate(self.observables))
        if not obs:
            raise ShapeError("need at least one constraint observable")
        targets = np.atleast_1d(np.asarray(self.targets, dtype=float))
        if targets.shape != (len(obs),):
            raise ShapeError(f"{targets.shape[0]} targets for {len(obs)} observables")
        a0 = np.zeros(len(obs)) if self.alpha0 is None else np.asarray(self.alpha0, dtype=float)
        if a0.shape != targets.shape:
            raise ShapeError("alpha0 must have one entry per observable")
        if not 0 < self.damping < 1:
            raise ValueError("damping must lie in (0, 1)")
        object.__setattr__(self, "observables", obs)
        object.__setattr__(self, "targets", targets)
        object.__setattr__(self, "alpha0", a0)
        for i in range(len(obs)):
            for j in range(i + 1, len(obs)):
                c = commutator_norm(obs[i], obs[j])
                if c > self.compat_tol:
                    raise CompatibilityError(f"F{i} and F{j} do not commute (max|[F_i, F_j]| = {c:.3e})")
        self.check_feasible()

    @classmethod
    def from_families(cls, families: Sequence[OperatorFamily], lam, targets, **kw) -> "MaxEntProblem":
        return cls(tuple(f(lam) for f in families), targets, **kw)

    @property
    def n(self) -> int:
        return len(self.observables)

    @cached_property
    def joint_spectrum(self) -> np.ndarray:
        return joint_eigenbasis(self.observables, compat_tol=self.compat_tol)[1]

    def check_feasible(self) -> None:
        """Each target must lie strictly between the min and max joint eigenvalue."""
        vals = self.joint_spectrum
        lo, hi = vals.min(axis=0), vals.max(axis=0)
        bad = [j for j, f in enumerate(self.targets) if not lo[j] < f < hi[j]]
        if bad:
            spans = ", ".join(f"F{j}: {self.targets[j]!r} not in ({lo[j]!r}, {hi[j]!r})" for j in bad)
            raise InfeasibleError(f"targets outside the open spectral range: {spans}")

    @cached_property
    def _families(self) -> tuple:
        return tuple(OperatorFamily.constant(f, 0, name=f"F{j}") for j, f in enumerate(self.observables))

    def spec(self, alpha) -> EnsembleSpec:
        # compatibility was checked once in __post_init__
        return EnsembleSpec(np.asarray(alpha, dtype=float), self._families, np.zeros(0), compat_tol=np.inf)


def forward_map(alpha, problem: MaxEntProblem) -> np.ndarray:
    """``<F_j>`` in the MaxEnt state with multipliers ``alpha``."""
    return np.array(build_generalized(problem.spec(alpha))[1].means)


def residual(alpha, problem: MaxEntProblem, verify: bool = False, fd_step: float = 1e-5) -> np.ndarray:
    """``<F_k>(alpha) - f_k``.

    With ``verify=True`` the means are also obtained as ``-d ln Z/d alpha_k``
    by central differences and must agree to ``1e-7``.
    """
    alpha = np.asarray(alpha, dtype=float)
    means = forward_map(alpha, problem)
    if verify:
        for k in range(problem.n):
            e = np.zeros(problem.n)
            h = fd_step * max(1.0, abs(alpha[k]))
            e[k] = h
            lz = [build_generalized(problem.spec(alpha + s * e))[1].log_partition for s in (1, -1, 0.5, -0.5)]
            d1 = (lz[0] - lz[1]) / (2 * h)
            d2 = (lz[2] - lz[3]) / h
            fd_mean = -(4 * d2 - d1) / 3
            if abs(fd_mean - means[k]) > 1e-7 * max(1.0, abs(means[k])):
                raise ArithmeticError(f"<F{k}> = {means[k]!r} but -dlnZ/dalpha = {fd_mean!r}")
    return means - problem.targets


def covariance_matrix(alpha, problem: MaxEntProblem) -> np.ndarray:
    rho, _ = build_generalized(problem.spec(alpha))
    n = problem.n
    c = np.empty((n, n))
    for i in range(n):
        for j in range(i, n):
            c[i, j] = c[j, i] = covariance(problem.observables[i], problem.observables[j], rho, np.inf)
    return c


def jacobian(alpha, problem: MaxEntProblem) -> np.ndarray:
    """``d<F_j>/d alpha_l = -Cov(F_j, F_l)``.

    Raises
    ------
    IllPosedError
        If the condition number exceeds ``problem.cond_max`` (linearly
        dependent observables).
    """
    jac = -covariance_matrix(alpha, problem)
    cond = _condition(jac)
    if not cond <= problem.cond_max:
        raise IllPosedError(f"Jacobian condition number {cond:.3e} exceeds {problem.cond_max:.1e}; "
                            "constraint observables are (nearly) linearly dependent")
    return jac


def _condition(jac: np.ndarray) -> float:
    s = np.linalg.svd(jac, compute_uv=False)
    return float(s[0] / s[-1]) if s[-1] > 0 else np.inf


@dataclass
class Iterate:
    alpha: np.ndarray
    residual_norm: float
    entropy: float
    dual: float


@dataclass
class SolveTrace:
    iterates: list = field(default_factory=list)
    converged: bool = False
    jacobian_condition: float = np.nan

    @property
    def n_iter(self) -> int:
        return max(len(self.iterates) - 1, 0)


def solve(problem: MaxEntProblem):
    """Damped Newton iteration from ``problem.alpha0``.

    Steps are backtracked by ``problem.damping`` until the residual norm
    drops by at least a factor ``1 - 1e-4 t``.

    Returns
    -------
    alpha : ndarray
    rho : DensityMatrix
    trace : SolveTrace
        Each iterate records the residual norm, the entropy and the dual
        objective ``ln Z + alpha . f``, which the solution minimizes.

    Raises
    ------
    ConvergenceError
        After ``max_iter`` Newton steps, or if the line search stalls.
    """
    trace = SolveTrace()
    a = problem.alpha0.copy()

    def evaluate(a):
        rho, summ = build_generalized(problem.spec(a))
        r = np.array(summ.means) - problem.targets
        dual = summ.log_partition + float(a @ problem.targets)
        return rho, summ, r, dual

    rho, summ, r, dual = evaluate(a)
    norm = float(np.linalg.norm(r))
    trace.iterates.append(Iterate(a.copy(), norm, summ.entropy, dual))
    for _ in range(problem.max_iter):
        if np.max(np.abs(r)) <= problem.grad_tol:
            break
        jac = jacobian(a, problem)
        step = np.linalg.solve(jac, -r)
        t = 1.0
        while True:
            trial = a + t * step
            rho_t, summ_t, r_t, dual_t = evaluate(trial)
            norm_t = float(np.linalg.norm(r_t))
            if norm_t <= (1.0 - ARMIJO * t) * norm:
                break
            t *= problem.damping
            if t < MIN_STEP:
                raise ConvergenceError(f"line search stalled at |r| = {norm:.3e}", trace)
        a, rho, summ, r, dual, norm = trial, rho_t, summ_t, r_t, dual_t, norm_t
        trace.iterates.append(Iterate(a.copy(), norm, summ.entropy, dual))
        log.debug("newton it=%d |r|=%.3e t=%.3g", trace.n_iter, norm, t)
    else:
        if np.max(np.abs(r)) > problem.grad_tol:
            raise ConvergenceError(f"no convergence in {problem.max_iter} iterations (|r| = {norm:.3e})", trace)
    trace.converged = True
    trace.jacobian_condition = _condition(-covariance_matrix(a, problem))
    return a, rho, trace


def dual_is_minimal(trace: SolveTrace, slack: float = 1e-12) -> bool:
    """The dual objective at the solution is no larger than at any iterate."""
    final = trace.iterates[-1].dual
    return all(final <= it.dual + slack for it in trace.iterates)


def random_problem(rng: np.random.Generator, n: Optional[int] = None, dim: Optional[int] = None,
                   alpha_range: float = 2.0, max_dim: int = 32, cond_limit: float = 1e8):
    """Random round-trip instance: diagonal commuting ``F_j`` and a known ``alpha*``.

    Diagonal entries are uniform on ``[-1, 1]`` and ``alpha*`` uniform on
    ``[-alpha_range, alpha_range]^n``. Draws whose Jacobian at ``alpha*`` has
    condition number above ``cond_limit`` are rejected.

    Returns
    -------
    problem : MaxEntProblem
        Targets are the exact means at ``alpha*``; the start is ``alpha = 0``.
    alpha_star : ndarray
    """
    while True:
        n_ = int(rng.integers(1, 4)) if n is None else n
        d = int(rng.integers(n_ + 2, max_dim + 1)) if dim is None else dim
        obs = tuple(np.diag(rng.uniform(-1.0, 1.0, d)).astype(complex) for _ in range(n_))
        a_star = rng.uniform(-alpha_range, alpha_range, n_)
        fams = tuple(OperatorFamily.constant(f, 0) for f in obs)
        spec = EnsembleSpec(a_star, fams, np.zeros(0), compat_tol=np.inf)
        rho, summ = build_generalized(spec)
        cov = np.array([[covariance(a, b, rho, np.inf) for b in obs] for a in obs])
        if _condition(cov) > cond_limit:
            continue
        return MaxEntProblem(obs, np.array(summ.means)), a_star
