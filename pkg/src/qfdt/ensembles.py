"""Canonical, grand-canonical and generalized MaxEnt density matrices.

Every ensemble is an exponential family ``rho = exp(-sum_j alpha_j F_j) / Z``
over mutually commuting observables ``F_j(lam)``. The canonical and grand
canonical builders are thin wrappers that route through
:func:`build_generalized`.
"""

from __future__ import annotations

import contextlib
import threading
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Optional

import numpy as np

from .exceptions import CompatibilityError, DensityMatrixError, ShapeError
from .operators import (
    COMPAT_TOL,
    EIGEN_FLOOR_REL,
    OperatorFamily,
    SpectralDecomposition,
    commutator_norm,
    hermitian,
    spectral_decompose,
    symmetrize,
)

BOLTZMANN = 1.0
TRACE_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class DensityMatrix:
    """Unit-trace positive operator together with its eigendecomposition.

    ``log_form`` is ``-sum_j alpha_j F_j - ln Z * I`` when the state was
    built from an :class:`EnsembleSpec`, else ``None``.
    """

    matrix: np.ndarray
    spectrum: SpectralDecomposition
    log_form: Optional[np.ndarray] = None

    @classmethod
    def from_matrix(cls, m, tol: float = TRACE_TOL) -> "DensityMatrix":
        m = hermitian(m, name="rho")
        tr = np.trace(m).real
        if abs(tr - 1.0) > tol:
            raise DensityMatrixError(f"trace is {tr!r}, expected 1")
        dec = spectral_decompose(m, name="rho")
        if dec.eigenvalues[0] < -tol:
            raise DensityMatrixError(f"negative eigenvalue {dec.eigenvalues[0]:.3e}")
        return cls(m, dec)

    @classmethod
    def pure(cls, psi) -> "DensityMatrix":
        psi = np.asarray(psi, dtype=complex)
        psi = psi / np.linalg.norm(psi)
        return cls.from_matrix(np.outer(psi, psi.conj()))

    @classmethod
    def maximally_mixed(cls, dim: int) -> "DensityMatrix":
        return cls.from_matrix(np.eye(dim) / dim)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def eigen_floor(self) -> float:
        return EIGEN_FLOOR_REL * float(np.max(self.spectrum.eigenvalues))

    @property
    def retained_spectrum(self) -> np.ndarray:
        p = self.spectrum.eigenvalues
        return p[p > self.eigen_floor]

    def purity(self) -> float:
        return float(np.sum(np.abs(self.matrix) ** 2))


@dataclass(frozen=True, eq=False)
class EnsembleSpec:
    """Multipliers ``alphas`` paired with commuting families ``F_j(lam)``."""

    alphas: np.ndarray
    families: tuple
    lam: np.ndarray = field(default_factory=lambda: np.zeros(0))
    compat_tol: float = COMPAT_TOL

    def __post_init__(self):
        alphas = np.atleast_1d(np.asarray(self.alphas, dtype=float))
        families = tuple(self.families)
        if len(families) == 0:
            raise ShapeError("EnsembleSpec needs at least one observable family")
        if alphas.shape != (len(families),):
            raise ShapeError(f"{alphas.shape[0]} multipliers for {len(families)} families")
        n_params = {f.n_params for f in families}
        if len(n_params) != 1:
            raise ShapeError(f"families disagree on the number of parameters: {sorted(n_params)}")
        lam = np.atleast_1d(np.asarray(self.lam, dtype=float)) if np.size(self.lam) else np.zeros(0)
        if lam.shape != (n_params.pop(),):
            raise ShapeError(f"lambda has shape {lam.shape}, families expect {families[0].n_params}")
        object.__setattr__(self, "alphas", alphas)
        object.__setattr__(self, "families", families)
        object.__setattr__(self, "lam", lam)
        ops = self.operators
        for i in range(len(ops)):
            for j in range(i + 1, len(ops)):
                c = commutator_norm(ops[i], ops[j])
                if c > self.compat_tol:
                    raise CompatibilityError(
                        f"families {i} ({families[i].name}) and {j} ({families[j].name}) "
                        f"do not commute: max|[F_i, F_j]| = {c:.3e}"
                    )

    @cached_property
    def operators(self) -> tuple:
        return tuple(f(self.lam) for f in self.families)

    @property
    def n(self) -> int:
        return len(self.families)

    @property
    def n_lambda(self) -> int:
        return self.lam.shape[0]

    def exponent(self) -> np.ndarray:
        """``sum_j alpha_j F_j(lam)``."""
        ops = self.operators
        k = self.alphas[0] * ops[0]
        for a, f in zip(self.alphas[1:], ops[1:]):
            k = k + a * f
        return k

    def with_alphas(self, alphas) -> "EnsembleSpec":
        return replace(self, alphas=np.asarray(alphas, dtype=float))

    def with_lambda(self, lam) -> "EnsembleSpec":
        return replace(self, lam=np.asarray(lam, dtype=float))


@dataclass(frozen=True)
class ThermoSummary:
    log_partition: float
    entropy: float
    means: tuple
    potential: Optional[float] = None
    fugacity: Optional[float] = None

    def entropy_residual(self, alphas) -> float:
        """``|S - sum_j alpha_j <F_j> - ln Z|``."""
        return abs(self.entropy - float(np.dot(alphas, self.means)) - self.log_partition)


_recorders: list = []
_recorder_lock = threading.Lock()


@contextlib.contextmanager
def recording():
    """Collect ``(spec, rho, summary)`` for every ensemble built inside the block."""
    log: list = []
    with _recorder_lock:
        _recorders.append(log)
    try:
        yield log
    finally:
        with _recorder_lock:
            _recorders.remove(log)


def _entropy_from_probabilities(p: np.ndarray) -> float:
    p = p[p > EIGEN_FLOOR_REL * np.max(p)]
    return float(-np.sum(p * np.log(p)))


def build_generalized(spec: EnsembleSpec, potential_index: Optional[int] = None):
    """Generalized MaxEnt state ``exp(-sum_j alpha_j F_j) / Z``.

    The exponent is shifted by its smallest eigenvalue before
    exponentiation; ``rho`` is unchanged and ``ln Z`` picks the shift back up.

    Parameters
    ----------
    spec : EnsembleSpec
    potential_index : int, optional
        Index of a temperature-like multiplier; if given, the summary's
        ``potential`` is ``-ln Z / alpha[potential_index]``.

    Returns
    -------
    (DensityMatrix, ThermoSummary)
    """
    k = spec.exponent()
    dec = spectral_decompose(k, name="exponent")
    kmin = dec.eigenvalues[0]
    w = np.exp(-(dec.eigenvalues - kmin))
    s = w.sum()
    log_z = float(-kmin + np.log(s))
    p = w / s
    rho = symmetrize(dec.apply(p))
    rho_dec = SpectralDecomposition(p[::-1].copy(), dec.eigenvectors[:, ::-1].copy())
    log_form = symmetrize(-k - log_z * np.eye(k.shape[0]))
    state = DensityMatrix(rho, rho_dec, log_form)
    means = tuple(float(np.einsum("ij,ji->", f, rho).real) for f in spec.operators)
    potential = None
    if potential_index is not None:
        potential = float(-log_z / spec.alphas[potential_index])
    summary = ThermoSummary(log_z, _entropy_from_probabilities(p), means, potential)
    if _recorders:
        with _recorder_lock:
            for log in _recorders:
                log.append((spec, state, summary))
    return state, summary


def canonical_spec(h_family: OperatorFamily, beta: float, lam=None) -> EnsembleSpec:
    if not beta > 0:
        raise ValueError(f"beta must be positive, got {beta}")
    lam = np.zeros(h_family.n_params) if lam is None else lam
    return EnsembleSpec([beta], (h_family,), lam)


def build_canonical(h_family: OperatorFamily, beta: float, lam=None):
    """Canonical state ``exp(-beta H) / Z``; ``potential`` is the Helmholtz free energy."""
    return build_generalized(canonical_spec(h_family, beta, lam), potential_index=0)


def number_family(n_op, n_params: int) -> OperatorFamily:
    return OperatorFamily.constant(n_op, n_params, name="N")


def grand_canonical_spec(h_family: OperatorFamily, n_op, beta: float, mu: float, lam=None) -> EnsembleSpec:
    """Multipliers ``(beta, -beta*mu)`` on ``(H, N)``."""
    if not beta > 0:
        raise ValueError(f"beta must be positive, got {beta}")
    lam = np.zeros(h_family.n_params) if lam is None else lam
    n_fam = n_op if isinstance(n_op, OperatorFamily) else number_family(n_op, h_family.n_params)
    try:
        return EnsembleSpec([beta, -beta * mu], (h_family, n_fam), lam)
    except CompatibilityError as exc:
        raise CompatibilityError(f"H and N must commute for the grand canonical ensemble: {exc}") from exc


def build_grand_canonical(h_family: OperatorFamily, n_op, beta: float, mu: float, lam=None):
    """Grand canonical state ``exp(-beta (H - mu N)) / Xi``.

    The summary records the fugacity ``z = exp(beta mu)`` and the grand
    potential ``-ln Xi / beta``.
    """
    spec = grand_canonical_spec(h_family, n_op, beta, mu, lam)
    state, summary = build_generalized(spec, potential_index=0)
    return state, replace(summary, fugacity=float(np.exp(beta * mu)))


def entropy(rho: DensityMatrix) -> float:
    """Von Neumann entropy ``-sum p ln p`` (k = 1) over the retained spectrum."""
    return _entropy_from_probabilities(np.clip(rho.spectrum.eigenvalues, 0.0, None))


def free_energy(h_family: OperatorFamily, beta: float, lam=None) -> float:
    return build_canonical(h_family, beta, lam)[1].potential


def log_partition(spec: EnsembleSpec) -> float:
    return build_generalized(spec)[1].log_partition

