"""Parametric model systems and thermodynamic integration.

Every model exposes ``H(lam)`` as an :class:`OperatorFamily` with an
analytic derivative (all models are linear in ``lam``), an optional number
operator, and a catalog of named observables.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import integrate

from .ensembles import (
    build_canonical,
    build_generalized,
    build_grand_canonical,
    canonical_spec,
    grand_canonical_spec,
)
from .exceptions import ConfigurationError, QuadratureError
from .identities import expectation, standard_observables
from .operators import PAULI_X, PAULI_Y, PAULI_Z, OperatorFamily

MAX_DIM = 4096
KINDS = ("two-level", "truncated-oscillator", "perturbed-oscillator", "transverse-spin-chain", "fermionic-modes")


@dataclass(frozen=True)
class ModelSpec:
    """Model parameters; fields irrelevant to ``kind`` are ignored.

    ``lam`` is the value the family is evaluated at by default, not part of
    the Hamiltonian definition.
    """

    kind: str
    dim: int = 20
    n_sites: int = 3
    eps: float = 1.0
    omega: float = 1.0
    coupling: float = 1.0
    field_strength: float = 1.0
    mode_energies: Optional[tuple] = None
    zero_point: bool = False
    seed: Optional[int] = None
    lam: tuple = (0.0,)


@dataclass(frozen=True, eq=False)
class Model:
    spec: ModelSpec
    h: OperatorFamily
    n_op: Optional[np.ndarray] = None
    observables: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.h.dim


def _site_op(op: np.ndarray, site: int, n_sites: int) -> np.ndarray:
    out = np.array([[1.0 + 0j]])
    for s in range(n_sites):
        out = np.kron(out, op if s == site else np.eye(2))
    return out


def ladder(dim: int) -> np.ndarray:
    """Truncated annihilation operator ``a`` on ``dim`` levels."""
    return np.diag(np.sqrt(np.arange(1, dim, dtype=float)), k=1).astype(complex)


def _two_level(spec):
    h0 = np.diag([0.0, spec.eps]).astype(complex)
    h = OperatorFamily.linear(h0, [PAULI_X], name="H")
    obs = {"X": OperatorFamily.constant(PAULI_X, 1, "X"),
           "Y": OperatorFamily.constant(PAULI_Y, 1, "Y"),
           "Z": OperatorFamily.constant(PAULI_Z, 1, "Z")}
    return h, None, obs


def _number_diag(spec):
    n = np.arange(spec.dim, dtype=float)
    if spec.zero_point:
        n = n + 0.5
    return np.diag(n).astype(complex)


def _truncated_oscillator(spec):
    # lam shifts the level spacing: H = (omega + lam) (n [+ 1/2])
    n = _number_diag(spec)
    h = OperatorFamily.linear(spec.omega * n, [n], name="H")
    return h, None, {"n": OperatorFamily.constant(n, 1, "n")}


def _perturbed_oscillator(spec):
    a = ladder(spec.dim)
    x = (a + a.conj().T) / np.sqrt(2.0)
    n = _number_diag(spec)
    h = OperatorFamily.linear(spec.omega * n, [x], name="H")
    return h, None, {"n": OperatorFamily.constant(n, 1, "n"), "x": OperatorFamily.constant(x, 1, "x")}


def _spin_chain(spec):
    # H = -J sum Z_i Z_{i+1} - (h + lam) sum X_i, open boundary
    m = spec.n_sites
    xs = [_site_op(PAULI_X, i, m) for i in range(m)]
    ys = [_site_op(PAULI_Y, i, m) for i in range(m)]
    zs = [_site_op(PAULI_Z, i, m) for i in range(m)]
    zz = sum(zs[i] @ zs[i + 1] for i in range(m - 1)) if m > 1 else np.zeros_like(zs[0])
    mx = sum(xs)
    h = OperatorFamily.linear(-spec.coupling * zz - spec.field_strength * mx, [-mx], name="H")
    obs = {"Mx": OperatorFamily.constant(mx, 1, "Mx"), "Mz": OperatorFamily.constant(sum(zs), 1, "Mz")}
    for i in range(m):
        obs[f"X{i}"] = OperatorFamily.constant(xs[i], 1, f"X{i}")
        obs[f"Y{i}"] = OperatorFamily.constant(ys[i], 1, f"Y{i}")
        obs[f"Z{i}"] = OperatorFamily.constant(zs[i], 1, f"Z{i}")
    return h, None, obs


def annihilators(n_modes: int) -> list:
    """Jordan-Wigner fermionic annihilators in the occupation basis."""
    lower = np.array([[0, 1], [0, 0]], dtype=complex)
    out = []
    for i in range(n_modes):
        op = np.array([[1.0 + 0j]])
        for s in range(n_modes):
            if s < i:
                factor = PAULI_Z
            elif s == i:
                factor = lower
            else:
                factor = np.eye(2)
            op = np.kron(op, factor)
        out.append(op)
    return out


def _fermionic_modes(spec):
    if spec.mode_energies is not None:
        eps = np.asarray(spec.mode_energies, dtype=float)
    elif spec.seed is not None:
        eps = np.sort(np.random.default_rng(spec.seed).uniform(0.5, 2.0, spec.n_sites))
    else:
        eps = np.arange(1, spec.n_sites + 1, dtype=float)
    cs = annihilators(len(eps))
    ns = [c.conj().T @ c for c in cs]
    n_op = sum(ns)
    h0 = sum(e * n for e, n in zip(eps, ns))
    # nearest-neighbour hopping conserves N exactly
    hop = np.zeros_like(h0)
    for i in range(len(cs) - 1):
        t = cs[i].conj().T @ cs[i + 1]
        hop = hop + t + t.conj().T
    h = OperatorFamily.linear(h0, [hop], name="H")
    obs = {f"n{i}": OperatorFamily.constant(n, 1, f"n{i}") for i, n in enumerate(ns)}
    return h, n_op, obs


_BUILDERS = {
    "two-level": _two_level,
    "truncated-oscillator": _truncated_oscillator,
    "perturbed-oscillator": _perturbed_oscillator,
    "transverse-spin-chain": _spin_chain,
    "fermionic-modes": _fermionic_modes,
}


def instantiate(spec: ModelSpec) -> Model:
    """Build ``H(lam)``, the number operator (fermionic models only) and named observables.

    The catalog always holds ``I``, ``H`` and ``H2`` (plus ``N`` when defined);
    these commute with every canonical / grand canonical state of the model.
    """
    if spec.kind not in _BUILDERS:
        raise ConfigurationError(f"unknown model kind {spec.kind!r}; expected one of {KINDS}")
    dim = {"transverse-spin-chain": 2 ** spec.n_sites, "fermionic-modes": 2 ** _n_modes(spec),
           "two-level": 2}.get(spec.kind, spec.dim)
    if not 1 <= dim <= MAX_DIM:
        raise ConfigurationError(f"{spec.kind}: dimension {dim} outside [1, {MAX_DIM}]")
    h, n_op, extra = _BUILDERS[spec.kind](spec)
    obs = standard_observables(h, n_op)
    obs.update(extra)
    return Model(spec, h, n_op, obs)


def _n_modes(spec: ModelSpec) -> int:
    return len(spec.mode_energies) if spec.mode_energies is not None else spec.n_sites


# ----------------------------------------------------------------------------
# thermodynamic integration

QUAD_TOL = 1e-9


def _lam_path(h_family, lam_base, index):
    base = np.zeros(h_family.n_params) if lam_base is None else np.array(lam_base, dtype=float)

    def at(x):
        lv = base.copy()
        lv[index] = x
        return lv

    return at


def thermodynamic_integration(h_family: OperatorFamily, beta: float, lam_min: float, lam_max: float,
                              index: int = 0, lam_base=None, n_op=None, mu: float = 0.0,
                              quad_tol: float = QUAD_TOL) -> float:
    """Free-energy difference ``int <dH/dlam> dlam`` along ``lam[index]``.

    With ``n_op`` the average is grand canonical at fixed ``(beta, mu)`` and
    the result is the grand-potential difference.
    """
    if not beta > 0:
        raise ValueError(f"beta must be positive, got {beta}")
    at = _lam_path(h_family, lam_base, index)

    def integrand(x):
        lv = at(x)
        if n_op is None:
            rho, _ = build_canonical(h_family, beta, lv)
        else:
            rho, _ = build_grand_canonical(h_family, n_op, beta, mu, lv)
        return expectation(h_family.deriv(lv, index), rho)

    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        try:
            value, err = integrate.quad(integrand, lam_min, lam_max, epsabs=quad_tol, epsrel=quad_tol, limit=200)
        except integrate.IntegrationWarning as exc:
            raise QuadratureError(f"quadrature did not reach {quad_tol:.1e}: {exc}") from exc
    return float(value)


def free_energy_difference(h_family: OperatorFamily, beta: float, lam_min: float, lam_max: float,
                           index: int = 0, lam_base=None, n_op=None, mu: float = 0.0) -> float:
    """Endpoint form ``-(1/beta) [ln Z(lam_max) - ln Z(lam_min)]`` (``Xi`` with ``n_op``)."""
    at = _lam_path(h_family, lam_base, index)

    def log_z(x):
        if n_op is None:
            spec = canonical_spec(h_family, beta, at(x))
        else:
            spec = grand_canonical_spec(h_family, n_op, beta, mu, at(x))
        return build_generalized(spec)[1].log_partition

    return -(log_z(lam_max) - log_z(lam_min)) / beta
