"""Unitary dynamics and the Ehrenfest theorem.

A spin starting in |+> precesses under H = Z, so <X>(t) = cos 2t. The
finite-difference slope of the stored trajectory is compared with
<dA/dt> + (1/i)<[A, H]>; the residual falls as dt^2. A driven Hamiltonian
shows the midpoint propagator.
"""

# %%
import numpy as np

from qfdt import DensityMatrix, EvolutionSetup, ehrenfest_check, evolve
from qfdt.dynamics import purity_drift
from qfdt.exceptions import StepSizeError
from qfdt.operators import PAULI_X, PAULI_Z

plus = DensityMatrix.pure([1, 1])
for dt in (4e-3, 2e-3, 1e-3, 5e-4):
    t = np.linspace(0, 2 * np.pi, int(round(2 * np.pi / dt)) + 1)
    setup = EvolutionSetup(PAULI_Z, plus, t)
    states = evolve(setup)
    res = ehrenfest_check(setup, PAULI_X, states=states)
    x = np.array([np.trace(PAULI_X @ s.matrix).real for s in states])
    print(f"dt={dt:.0e}  max Ehrenfest residual {res.max_residual:.3e}  "
          f"|<X> - cos 2t| {np.max(np.abs(x - np.cos(2 * t))):.1e}  purity drift {purity_drift(states):.1e}")

# %% asking for a truncation bound the grid cannot meet
t = np.linspace(0, 2 * np.pi, 2001)
try:
    ehrenfest_check(EvolutionSetup(PAULI_Z, plus, t), PAULI_X, max_truncation=1e-6)
except StepSizeError as exc:
    print("step-size error:", exc)

# %% driven spin with the midpoint propagator
def h_of_t(s):
    return PAULI_Z + 0.6 * np.cos(2.0 * s) * PAULI_X


t = np.linspace(0, 5, 5001)
setup = EvolutionSetup(h_of_t, plus, t, stepper="midpoint")
res = ehrenfest_check(setup, PAULI_X)
print(f"driven: max Ehrenfest residual {res.max_residual:.2e} over {len(res.times)} interior points")
