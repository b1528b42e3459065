"""Quantum fluctuation-dissipation identities on exponential-family density matrices.

The package builds canonical, grand canonical and generalized MaxEnt
density matrices for small model Hamiltonians, checks derivative
identities of their expectation values against finite differences, solves
the inverse MaxEnt problem, and verifies the Ehrenfest theorem along unitary
trajectories.
"""

from .dynamics import EvolutionSetup, ehrenfest_check, evolve
from .ensembles import (
    DensityMatrix,
    EnsembleSpec,
    ThermoSummary,
    build_canonical,
    build_generalized,
    build_grand_canonical,
    canonical_spec,
    entropy,
    free_energy,
    grand_canonical_spec,
)
from .exceptions import (
    QFDTError,
    ShapeError,
    HermiticityError,
    SpectralError,
    DomainError,
    DensityMatrixError,
    CompatibilityError,
    UnknownParameterError,
    ConfigurationError,
    NumericalConsistencyError,
    LevelCrossingError,
    StepSizeError,
    QuadratureError,
    InfeasibleError,
    IllPosedError,
    ConvergenceError,
    ScenarioError,
)
from .identities import (
    CATALOG,
    IdentityReport,
    ModelContext,
    Tolerances,
    alpha,
    check_identity,
    check_qfdt,
    covariance,
    expectation,
    heat_capacity,
    hellmann_feynman_mixed,
    hellmann_feynman_pure,
    lam,
    variance,
)
from .maxent import MaxEntProblem, solve
from .models import ModelSpec, free_energy_difference, instantiate, thermodynamic_integration
from .operators import OperatorFamily, SpectralDecomposition, expm_h, logm_h, spectral_decompose

__version__ = "0.1.0"
