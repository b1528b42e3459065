"""Dense Hermitian operator algebra.

Operators are plain complex ``numpy`` arrays; :func:`hermitian` validates
and freezes them. Every matrix function goes through the spectral
decomposition, so ``exp``, ``log`` and powers share one code path.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .exceptions import (
    DomainError,
    HermiticityError,
    ShapeError,
    SpectralError,
)

HERMITICITY_TOL = 1e-12
COMPAT_TOL = 1e-10
# relative to max |eigenvalue|
EIGEN_FLOOR_REL = 1e-14

PAULI_X = np.array([[0, 1], [1, 0]], dtype=complex)
PAULI_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
PAULI_Z = np.array([[1, 0], [0, -1]], dtype=complex)


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=complex, copy=True)
    a.flags.writeable = False
    return a


def hermitian(a, tol: float = HERMITICITY_TOL, name: str = "operator") -> np.ndarray:
    """Validate ``a`` as a Hermitian matrix and return a read-only complex copy.

    Raises
    ------
    ShapeError
        If ``a`` is not a non-empty square matrix.
    HermiticityError
        If ``max|a - a^H| > tol``.
    """
    a = np.asarray(a)
    if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] < 1:
        raise ShapeError(f"{name}: expected a non-empty square matrix, got shape {a.shape}")
    dev = np.max(np.abs(a - a.conj().T))
    if dev > tol:
        raise HermiticityError(f"{name}: not Hermitian (max |A - A^H| = {dev:.3e} > {tol:.1e})")
    return _frozen(a)


def symmetrize(a: np.ndarray) -> np.ndarray:
    """Hermitian part ``(A + A^H) / 2``; removes roundoff from computed products."""
    return _frozen(0.5 * (a + a.conj().T))


def _check_same_shape(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape or a.ndim != 2:
        raise ShapeError(f"dimension mismatch: {a.shape} vs {b.shape}")


def _fix_phases(vecs: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    # first component with |v_i| > tol made real and positive
    idx = np.argmax(np.abs(vecs) > tol, axis=0)
    lead = vecs[idx, np.arange(vecs.shape[1])]
    return vecs * (np.abs(lead) / lead)[None, :]


@dataclass(frozen=True, eq=False)
class SpectralDecomposition:
    """Eigenvalues (ascending) and the unitary matrix of eigenvector columns."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    @property
    def dim(self) -> int:
        return self.eigenvalues.shape[0]

    def reconstruct(self) -> np.ndarray:
        v = self.eigenvectors
        return (v * self.eigenvalues) @ v.conj().T

    def apply(self, values: np.ndarray) -> np.ndarray:
        """Matrix ``V diag(values) V^H`` for per-eigenvalue ``values``."""
        v = self.eigenvectors
        return (v * values) @ v.conj().T

    def eigenspaces(self, tol: float = 1e-9) -> list:
        """Index groups of (numerically) degenerate eigenvalues."""
        groups = [[0]]
        for i in range(1, self.dim):
            if abs(self.eigenvalues[i] - self.eigenvalues[groups[-1][0]]) <= tol:
                groups[-1].append(i)
            else:
                groups.append([i])
        return groups

    def residuals(self, a: np.ndarray) -> tuple:
        """``(reconstruction, unitarity)`` residuals in the max norm."""
        v = self.eigenvectors
        rec = float(np.max(np.abs(a - self.reconstruct())))
        uni = float(np.max(np.abs(v.conj().T @ v - np.eye(self.dim))))
        return rec, uni


def spectral_decompose(a, name: str = "operator") -> SpectralDecomposition:
    """Eigendecomposition of a Hermitian matrix.

    Eigenvalues are ascending; each eigenvector has its first non-negligible
    component real and positive, so the output is reproducible.
    """
    a = hermitian(a, name=name)
    try:
        w, v = np.linalg.eigh(a)
    except np.linalg.LinAlgError as exc:
        raise SpectralError(f"{name}: eigensolver did not converge ({exc})") from exc
    v = _fix_phases(v)
    w.flags.writeable = False
    v.flags.writeable = False
    return SpectralDecomposition(w, v)


def matrix_function(a, f: Callable[[np.ndarray], np.ndarray], name: str = "operator") -> np.ndarray:
    """Apply the real scalar function ``f`` to the Hermitian matrix ``a`` spectrally.

    Raises
    ------
    DomainError
        If ``f`` returns a non-finite value at some eigenvalue.
    """
    dec = a if isinstance(a, SpectralDecomposition) else spectral_decompose(a, name=name)
    with np.errstate(all="ignore"):
        fw = np.asarray(f(dec.eigenvalues))
    bad = ~np.isfinite(fw)
    if np.any(bad):
        raise DomainError(
            f"{name}: function undefined at eigenvalues {dec.eigenvalues[bad].tolist()}",
            dec.eigenvalues[bad],
        )
    return symmetrize(dec.apply(fw))


def eigen_floor(eigenvalues: np.ndarray, rel: float = EIGEN_FLOOR_REL) -> float:
    return rel * float(np.max(np.abs(eigenvalues)))


def expm_h(a) -> np.ndarray:
    """``exp(A)`` for Hermitian ``A``."""
    return matrix_function(a, np.exp, name="expm")


def logm_h(a, floor: Optional[float] = None) -> np.ndarray:
    """``log(A)`` for Hermitian positive definite ``A``.

    Eigenvalues must exceed ``floor`` (default ``1e-14 * max|eigenvalue|``).
    """
    dec = a if isinstance(a, SpectralDecomposition) else spectral_decompose(a, name="logm")
    floor = eigen_floor(dec.eigenvalues) if floor is None else floor
    bad = dec.eigenvalues <= floor
    if np.any(bad):
        raise DomainError(
            f"logm: eigenvalues {dec.eigenvalues[bad].tolist()} not above floor {floor:.3e}",
            dec.eigenvalues[bad],
        )
    return matrix_function(dec, np.log, name="logm")


def trace_product(a: np.ndarray, b: np.ndarray) -> complex:
    """``Tr(A B) = sum_ij A_ij B_ji`` without forming the product."""
    a = np.asarray(a)
    b = np.asarray(b)
    _check_same_shape(a, b)
    return complex(np.einsum("ij,ji->", a, b))


def commutator(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a)
    b = np.asarray(b)
    _check_same_shape(a, b)
    return a @ b - b @ a


def anticommutator(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a)
    b = np.asarray(b)
    _check_same_shape(a, b)
    return a @ b + b @ a


def commutator_norm(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.max(np.abs(commutator(a, b))))


def is_compatible(a: np.ndarray, b: np.ndarray, tol: float = COMPAT_TOL) -> bool:
    """True iff ``max|[A, B]| <= tol``."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    return commutator_norm(a, b) <= tol


def central_difference(f: Callable[[float], float], x: float, h: float) -> tuple:
    """Central difference with one Richardson level.

    Returns ``(estimate, error)`` where ``error`` is the gap between the
    extrapolated value and the ``h/2`` central difference.
    """
    d1 = (f(x + h) - f(x - h)) / (2 * h)
    h2 = 0.5 * h
    d2 = (f(x + h2) - f(x - h2)) / (2 * h2)
    est = (4 * d2 - d1) / 3
    return est, abs(est - d2)


@dataclass(frozen=True, eq=False)
class OperatorFamily:
    """A Hermitian operator depending smoothly on real parameters ``lam``.

    ``derivative(lam, i)`` is the analytic partial derivative; when it is
    ``None`` a Richardson-extrapolated central difference is used.
    """

    generator: Callable[[np.ndarray], np.ndarray]
    n_params: int = 0
    derivative: Optional[Callable[[np.ndarray, int], np.ndarray]] = None
    name: str = "A"
    fd_step: float = 1e-5

    def _lam(self, lam) -> np.ndarray:
        lam = np.atleast_1d(np.asarray(lam, dtype=float)) if lam is not None else np.zeros(0)
        if lam.shape != (self.n_params,):
            raise ShapeError(f"{self.name}: expected {self.n_params} parameters, got {lam.shape}")
        return lam

    def __call__(self, lam=None) -> np.ndarray:
        return hermitian(self.generator(self._lam(lam)), name=self.name)

    def deriv(self, lam, index: int) -> np.ndarray:
        lam = self._lam(lam)
        if not 0 <= index < self.n_params:
            raise IndexError(f"{self.name}: parameter index {index} out of range")
        if self.derivative is not None:
            return hermitian(self.derivative(lam, index), name=f"d{self.name}/dlam{index}")
        return self.fd_deriv(lam, index)

    def fd_deriv(self, lam, index: int) -> np.ndarray:
        lam = self._lam(lam)
        h = self.fd_step * max(1.0, abs(lam[index]))

        def at(delta):
            shifted = lam.copy()
            shifted[index] += delta
            return self.generator(shifted)

        d1 = (at(h) - at(-h)) / (2 * h)
        d2 = (at(h / 2) - at(-h / 2)) / h
        return symmetrize((4 * d2 - d1) / 3)

    def check_derivative(self, lam, tol: float = 1e-6) -> float:
        """Max relative gap between the analytic and finite-difference derivatives."""
        worst = 0.0
        for i in range(self.n_params):
            exact = self.deriv(lam, i)
            fd = self.fd_deriv(lam, i)
            scale = max(1.0, float(np.max(np.abs(exact))))
            worst = max(worst, float(np.max(np.abs(exact - fd))) / scale)
        if worst > tol:
            raise ValueError(f"{self.name}: analytic derivative off by {worst:.3e} (tol {tol:.1e})")
        return worst

    @property
    def dim(self) -> int:
        return self(np.zeros(self.n_params)).shape[0]

    @classmethod
    def constant(cls, matrix, n_params: int = 0, name: str = "A") -> "OperatorFamily":
        m = hermitian(matrix, name=name)
        zero = _frozen(np.zeros_like(m))
        return cls(lambda lam: m, n_params, lambda lam, i: zero, name)

    @classmethod
    def linear(cls, base, perturbations: Sequence, name: str = "H") -> "OperatorFamily":
        """``base + sum_i lam_i * perturbations[i]`` with exact derivatives."""
        h0 = hermitian(base, name=name)
        vs = [hermitian(v, name=f"{name}.V{i}") for i, v in enumerate(perturbations)]

        def gen(lam):
            out = h0.copy()
            for li, v in zip(lam, vs):
                out = out + li * v
            return out

        return cls(gen, len(vs), lambda lam, i: vs[i], name)

    def square(self, name: Optional[str] = None) -> "OperatorFamily":
        """``A(lam)^2`` with the product-rule derivative ``A dA + dA A``."""
        base = self

        def gen(lam):
            a = base(lam)
            return symmetrize(a @ a)

        def der(lam, i):
            a = base(lam)
            da = base.deriv(lam, i)
            return symmetrize(a @ da + da @ a)

        return OperatorFamily(gen, self.n_params, der, name or f"{self.name}^2", self.fd_step)

    def shifted(self, c: float) -> "OperatorFamily":
        """``A(lam) + c * I``."""
        base = self
        return OperatorFamily(
            lambda lam: base(lam) + c * np.eye(base(lam).shape[0]),
            self.n_params,
            lambda lam, i: base.deriv(lam, i),
            f"{self.name}+{c:g}I",
            self.fd_step,
        )

    def scaled(self, c: float) -> "OperatorFamily":
        base = self
        return OperatorFamily(
            lambda lam: c * base(lam),
            self.n_params,
            lambda lam, i: c * base.deriv(lam, i),
            f"{c:g}*{self.name}",
            self.fd_step,
        )


def identity_family(dim: int, n_params: int = 0) -> OperatorFamily:
    return OperatorFamily.constant(np.eye(dim), n_params, name="I")
