import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st

from qfdt.models import ModelSpec, instantiate

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@st.composite
def hermitian_matrices(draw, min_dim=1, max_dim=6, scale=2.0):
    """Random dense Hermitian matrices from a seeded generator."""
    d = draw(st.integers(min_dim, max_dim))
    seed = draw(st.integers(0, 2**32 - 1))
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    return scale * 0.5 * (a + a.conj().T) / np.sqrt(d)


@st.composite
def density_matrices(draw, min_dim=1, max_dim=6):
    d = draw(st.integers(min_dim, max_dim))
    seed = draw(st.integers(0, 2**32 - 1))
    rng = np.random.default_rng(seed)
    g = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    r = g @ g.conj().T + 1e-3 * np.eye(d)
    return r / np.trace(r).real


@pytest.fixture(scope="session")
def models():
    specs = {
        "two-level": ModelSpec("two-level"),
        "truncated-oscillator": ModelSpec("truncated-oscillator", dim=20),
        "perturbed-oscillator": ModelSpec("perturbed-oscillator", dim=20),
        "fermionic-modes": ModelSpec("fermionic-modes", n_sites=3),
        "transverse-spin-chain": ModelSpec("transverse-spin-chain", n_sites=3),
    }
    return {k: instantiate(v) for k, v in specs.items()}


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for k in sorted(results):
            terminalreporter.write_line(results[k])
