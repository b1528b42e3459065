import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from qfdt.exceptions import DomainError, HermiticityError, ShapeError
from qfdt.operators import (
    PAULI_X,
    PAULI_Y,
    PAULI_Z,
    OperatorFamily,
    anticommutator,
    central_difference,
    commutator,
    commutator_norm,
    expm_h,
    hermitian,
    is_compatible,
    logm_h,
    matrix_function,
    spectral_decompose,
    trace_product,
)

from conftest import density_matrices, hermitian_matrices


def test_hermitian_rejects_bad_input():
    with pytest.raises(HermiticityError):
        hermitian([[0, 1], [0, 0]])
    with pytest.raises(ShapeError):
        hermitian(np.zeros((2, 3)))
    with pytest.raises(ShapeError):
        hermitian(np.zeros((0, 0)))


def test_hermitian_copy_is_read_only():
    m = hermitian(np.eye(2))
    with pytest.raises(ValueError):
        m[0, 0] = 5


def test_pauli_algebra():
    assert np.allclose(commutator(PAULI_X, PAULI_Y), 2j * PAULI_Z)
    assert np.allclose(anticommutator(PAULI_X, PAULI_Y), 0)
    assert np.allclose(PAULI_X @ PAULI_X, np.eye(2))


def test_spectral_decompose_examples():
    dec = spectral_decompose(PAULI_Z)
    assert np.allclose(dec.eigenvalues, [-1, 1])
    assert np.allclose(expm_h(np.zeros((3, 3))), np.eye(3))
    assert np.allclose(logm_h(np.eye(3)), 0)


def test_phase_convention_is_reproducible():
    a = np.array([[1, 1j], [-1j, 2]])
    v1 = spectral_decompose(a).eigenvectors
    v2 = spectral_decompose(a.copy()).eigenvectors
    assert np.array_equal(v1, v2)
    lead = v1[np.argmax(np.abs(v1) > 1e-12, axis=0), range(2)]
    assert np.allclose(lead.imag, 0) and np.all(lead.real > 0)


@given(hermitian_matrices())
def test_reconstruction_and_unitarity(a):
    dec = spectral_decompose(a)
    rec, uni = dec.residuals(a)
    assert rec <= 1e-12 * max(1.0, np.max(np.abs(a)))
    assert uni <= 1e-12
    assert np.all(np.diff(dec.eigenvalues) >= 0)


@given(density_matrices())
def test_exp_log_round_trip(r):
    assert np.max(np.abs(expm_h(logm_h(r)) - r)) <= 1e-10


@given(hermitian_matrices(), hermitian_matrices())
def test_trace_product_and_commutator(a, b):
    if a.shape != b.shape:
        return
    assert abs(trace_product(a, b) - np.trace(a @ b)) <= 1e-12
    assert np.allclose(commutator(a, b), -commutator(b, a))
    assert abs(np.trace(commutator(a, b))) <= 1e-12


def test_log_outside_domain():
    with pytest.raises(DomainError) as info:
        logm_h(np.diag([1.0, 0.0]))
    assert info.value.offending == (0.0,)
    with pytest.raises(DomainError):
        matrix_function(np.diag([-1.0, 1.0]), np.sqrt)


def test_compatibility():
    assert is_compatible(np.diag([1, 2]), np.diag([3, 4]))
    assert not is_compatible(PAULI_X, PAULI_Z)
    assert commutator_norm(PAULI_X, PAULI_Z) == pytest.approx(2.0)


@given(hermitian_matrices(min_dim=3, max_dim=3), hermitian_matrices(min_dim=3, max_dim=3),
       st.floats(-2, 2))
def test_linear_family_derivatives(h0, v, x):
    fam = OperatorFamily.linear(h0, [v])
    assert np.allclose(fam.deriv([x], 0), v)
    assert fam.check_derivative([x]) < 1e-8
    sq = fam.square()
    assert np.max(np.abs(sq.deriv([x], 0) - sq.fd_deriv([x], 0))) < 1e-7 * max(1, np.max(np.abs(h0)) ** 2)


def test_family_parameter_shape_checked():
    fam = OperatorFamily.linear(np.eye(2), [PAULI_X])
    with pytest.raises(ShapeError):
        fam([0.0, 1.0])
    with pytest.raises(IndexError):
        fam.deriv([0.0], 1)


def test_family_derivative_falls_back_to_differences():
    fam = OperatorFamily(lambda l: np.cos(l[0]) * PAULI_X + np.sin(l[0]) * PAULI_Z, 1)
    x = 0.7
    exact = -np.sin(x) * PAULI_X + np.cos(x) * PAULI_Z
    assert np.max(np.abs(fam.deriv([x], 0) - exact)) < 1e-9


def test_central_difference_accuracy():
    est, err = central_difference(np.sin, 0.3, 1e-3)
    assert abs(est - np.cos(0.3)) < 1e-12
    assert err < 1e-6
