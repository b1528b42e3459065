"""Unitary (Liouville-von Neumann) evolution and the Ehrenfest check, with hbar = 1."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Union

import numpy as np

from .ensembles import DensityMatrix
from .exceptions import StepSizeError
from .identities import DEFAULT_TOL, Tolerances, make_report
from .operators import SpectralDecomposition, hermitian, spectral_decompose

STEPPERS = ("exact", "midpoint")

Operator = Union[np.ndarray, Callable[[float], np.ndarray]]


@dataclass(frozen=True, eq=False)
class EvolutionSetup:
    """Hamiltonian (matrix or ``t -> matrix``), initial state, time grid and stepper."""

    hamiltonian: Operator
    rho0: DensityMatrix
    times: np.ndarray
    stepper: str = "exact"

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        if times.ndim != 1 or times.size < 1 or np.any(np.diff(times) <= 0):
            raise ValueError("time grid must be a non-empty strictly increasing vector")
        if self.stepper not in STEPPERS:
            raise ValueError(f"stepper must be one of {STEPPERS}, got {self.stepper!r}")
        if not callable(self.hamiltonian):
            object.__setattr__(self, "hamiltonian", hermitian(self.hamiltonian, name="H"))
        elif self.stepper == "exact":
            raise ValueError("the exact propagator needs a time-independent Hamiltonian")
        if not isinstance(self.rho0, DensityMatrix):
            object.__setattr__(self, "rho0", DensityMatrix.from_matrix(self.rho0))
        object.__setattr__(self, "times", times)

    @property
    def time_dependent(self) -> bool:
        return callable(self.hamiltonian)

    def h_at(self, t: float) -> np.ndarray:
        if self.time_dependent:
            return hermitian(self.hamiltonian(t), name=f"H(t={t:g})")
        return self.hamiltonian


def propagator(h, dt: float) -> np.ndarray:
    """``exp(-i H dt)`` from the spectral decomposition of ``H``."""
    dec = h if isinstance(h, SpectralDecomposition) else spectral_decompose(h, name="H")
    v = dec.eigenvectors
    return (v * np.exp(-1j * dec.eigenvalues * dt)) @ v.conj().T


def evolve(setup: EvolutionSetup) -> list:
    """States at every point of ``setup.times``; the first is ``rho0``.

    ``exact`` applies ``U(t - t0)`` to ``rho0`` directly. ``midpoint``
    composes ``exp(-i H(t + dt/2) dt)`` between consecutive grid points
    (second order for time-dependent ``H``; exact when ``H`` is constant).
    """
    rho0 = setup.rho0
    p0 = rho0.spectrum.eigenvalues
    v0 = rho0.spectrum.eigenvectors
    t0 = setup.times[0]

    def state(u):
        vecs = u @ v0
        m = (vecs * p0) @ vecs.conj().T
        m = 0.5 * (m + m.conj().T)
        return DensityMatrix(m, SpectralDecomposition(p0, vecs))

    if setup.stepper == "exact":
        dec = spectral_decompose(setup.hamiltonian, name="H")
        return [state(propagator(dec, t - t0)) for t in setup.times]

    u = np.eye(rho0.dim, dtype=complex)
    out = [state(u)]
    for ta, tb in zip(setup.times[:-1], setup.times[1:]):
        dt = tb - ta
        u = propagator(setup.h_at(ta + 0.5 * dt), dt) @ u
        out.append(state(u))
    return out


def _as_function(a: Operator) -> Callable[[float], np.ndarray]:
    if callable(a):
        return a
    a = hermitian(a, name="A")
    return lambda t: a


def _fd_time_derivative(a: Callable[[float], np.ndarray], t: float, h: float = 1e-5) -> np.ndarray:
    d1 = (a(t + h) - a(t - h)) / (2 * h)
    d2 = (a(t + h / 2) - a(t - h / 2)) / h
    return (4 * d2 - d1) / 3


@dataclass
class EhrenfestResult:
    times: np.ndarray
    lhs: np.ndarray
    rhs: np.ndarray
    truncation_estimate: np.ndarray
    tol: Tolerances
    all_times: Optional[np.ndarray] = None
    expectations: Optional[np.ndarray] = None

    @property
    def residuals(self) -> np.ndarray:
        return np.abs(self.lhs - self.rhs)

    @property
    def max_residual(self) -> float:
        return float(np.max(self.residuals)) if self.residuals.size else 0.0

    def reports(self) -> list:
        return [
            make_report("EHRENFEST", lhs, rhs, self.tol, None, {"t": float(t)})
            for t, lhs, rhs in zip(self.times, self.lhs, self.rhs)
        ]

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.reports())


def ehrenfest_check(setup: EvolutionSetup, observable: Operator,
                    d_observable_dt: Optional[Operator] = None, states: Optional[list] = None,
                    tol: Tolerances = DEFAULT_TOL, max_truncation: Optional[float] = None) -> EhrenfestResult:
    """Compare ``d<A>/dt`` with ``<dA/dt> + (1/i) <[A, H]>`` along a trajectory.

    ``d<A>/dt`` is the three-point central difference on the stored
    trajectory (valid on non-uniform grids), so the residual is O(dt^2).

    Raises
    ------
    StepSizeError
        If ``max_truncation`` is given and the estimated truncation error
        ``dt^2/6 |d^3<A>/dt^3|`` exceeds it; ``suggested_dt`` is attached.
    """
    t = setup.times
    if t.size < 3:
        raise ValueError("need at least three time points")
    states = evolve(setup) if states is None else states
    a_of_t = _as_function(observable)
    if d_observable_dt is None:
        da_of_t = (lambda s: np.zeros_like(a_of_t(s))) if not callable(observable) else \
            (lambda s: _fd_time_derivative(a_of_t, s))
    else:
        da_of_t = _as_function(d_observable_dt)

    means = np.array([np.einsum("ij,ji->", a_of_t(ti), s.matrix).real for ti, s in zip(t, states)])
    h1 = t[1:-1] - t[:-2]
    h2 = t[2:] - t[1:-1]
    lhs = (-h2 / (h1 * (h1 + h2)) * means[:-2]
           + (h2 - h1) / (h1 * h2) * means[1:-1]
           + h1 / (h2 * (h1 + h2)) * means[2:])
    rhs = np.empty_like(lhs)
    for k, i in enumerate(range(1, t.size - 1)):
        a = a_of_t(t[i])
        h = setup.h_at(t[i])
        r = states[i].matrix
        comm = np.einsum("ij,ji->", a @ h - h @ a, r)
        rhs[k] = np.einsum("ij,ji->", da_of_t(t[i]), r).real + (-1j * comm).real

    # dt^2/6 f''' with f''' from second differences of the derivative series
    trunc = np.zeros_like(lhs)
    if lhs.size >= 3:
        hm = 0.5 * (h1 + h2)
        third = np.abs(lhs[2:] - 2 * lhs[1:-1] + lhs[:-2]) / hm[1:-1] ** 2
        trunc[1:-1] = hm[1:-1] ** 2 / 6 * third
        trunc[0], trunc[-1] = trunc[1], trunc[-2]
    result = EhrenfestResult(t[1:-1], lhs, rhs, trunc, tol, t, means)
    if max_truncation is not None:
        worst = float(np.max(trunc))
        if worst > max_truncation:
            dt = float(np.max(np.diff(t)))
            suggested = 0.9 * dt * np.sqrt(max_truncation / worst)
            raise StepSizeError(
                f"estimated truncation error {worst:.3e} exceeds {max_truncation:.1e}; try dt <= {suggested:.3e}",
                suggested_dt=suggested,
            )
    return result


def purity_drift(states: list) -> float:
    """Max deviation of ``Tr rho^2`` from its initial value."""
    p = np.array([s.purity() for s in states])
    return float(np.max(np.abs(p - p[0])))


def trace_drift(states: list) -> float:
    return float(max(abs(np.trace(s.matrix).real - 1.0) for s in states))


def spectrum_drift(states: list) -> float:
    """Max change of the sorted eigenvalues relative to the first state (recomputed)."""
    ref = np.linalg.eigvalsh(states[0].matrix)
    return float(max(np.max(np.abs(np.linalg.eigvalsh(s.matrix) - ref)) for s in states))
