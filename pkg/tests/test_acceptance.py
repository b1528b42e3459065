"""Acceptance gate: one PASS/FAIL line per criterion.

Run with ``pytest tests/test_acceptance.py -v`` (lines appear in the
terminal summary) or ``python tests/test_acceptance.py``.
"""

import functools
import math
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from qfdt.cli import main as cli_main
from qfdt.dynamics import EvolutionSetup, ehrenfest_check, evolve, purity_drift
from qfdt.ensembles import (
    DensityMatrix,
    EnsembleSpec,
    build_canonical,
    build_grand_canonical,
    canonical_spec,
    grand_canonical_spec,
    recording,
)
from qfdt.identities import (
    TABLE1,
    TABLE2,
    TABLE3,
    ModelContext,
    alpha,
    check_identity,
    check_qfdt,
    expectation,
    heat_capacity,
    lam,
    variance,
)
from qfdt.maxent import MaxEntProblem, covariance_matrix, forward_map, random_problem, solve
from qfdt.models import ModelSpec, free_energy_difference, instantiate, thermodynamic_integration
from qfdt.operators import PAULI_X, PAULI_Z, spectral_decompose

SCENARIOS = Path(__file__).resolve().parents[1] / "scenarios"

# tolerances pinned from the acceptance criteria
ATOL, RTOL = 1e-8, 1e-6
CLOSED_FORM_TOL = 1e-5
TI_TOL = 1e-8
ROUNDTRIP_TOL, MAX_NEWTON = 1e-8, 30
JAC_RTOL, JAC_SYM_TOL, JAC_NSD_TOL = 1e-6, 1e-10, 1e-10
EHRENFEST_TOL, RATIO_LO, RATIO_HI, PURITY_TOL = 1e-6, 3.5, 4.5, 1e-9
ENTROPY_TOL = 1e-10
ROTATION_TOL, SHIFT_TOL = 1e-9, 1e-8
C1_BUDGET_S, C5_BUDGET_S = 30.0, 20.0

BETAS = (0.1, 1.0, 10.0)
LAMBDAS = (0.0, 0.3)
MUS = (-0.5, 0.2, 1.5)
N_ROUNDTRIP = 100
ROUNDTRIP_SEED = 20240

# recomputed two-level oracles at (eps, beta) = (1, 1)
P_EXC = 1.0 / (math.e + 1.0)
ORACLE = {
    "<H>": P_EXC,
    "Var(H)": P_EXC * (1.0 - P_EXC),
    "S": math.log1p(math.exp(-1.0)) + P_EXC,
    "C": P_EXC * (1.0 - P_EXC),
}
STATED_S = 0.585226

RESULTS: dict = {}


def record(number: int, ok: bool, detail: str) -> None:
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number:>2}: {detail}"
    RESULTS[number] = line
    print(line)


def _entropy_stats(log) -> tuple:
    worst = max((summ.entropy_residual(spec.alphas) for spec, _, summ in log), default=0.0)
    return worst, len(log)


def _models():
    return {
        "two-level": instantiate(ModelSpec("two-level")),
        "truncated-oscillator": instantiate(ModelSpec("truncated-oscillator", dim=20)),
        "perturbed-oscillator": instantiate(ModelSpec("perturbed-oscillator", dim=20)),
        "fermionic-modes": instantiate(ModelSpec("fermionic-modes", n_sites=3)),
    }


def _index_pairs(iid, spec):
    n, m = spec.n, spec.n_lambda
    if iid in TABLE1 or iid in TABLE2:
        return [(i, 0) for i in range(m)] if iid.endswith("LAMBDA") else [(0, 0)]
    return {
        "T3-ONE-LAMBDA": [(k, 0) for k in range(m)],
        "T3-ONE-ALPHA": [(k, 0) for k in range(n)],
        "T3-FK-LAMBDA": [(k, l) for k in range(n) for l in range(m)],
        "T3-FK-ALPHA": [(j, l) for j in range(n) for l in range(n)],
    }[iid]


# ----------------------------------------------------------------------------
# criterion computations (cached so criterion 8 can reuse their ensembles)


@functools.lru_cache(maxsize=None)
def criterion_1():
    t0 = time.perf_counter()
    reports = []
    with recording() as log:
        for name, m in _models().items():
            observables = ["I", "H", "H2"] + (["N"] if m.n_op is not None else [])
            for beta in BETAS:
                for lv in LAMBDAS:
                    lam_v = np.array([lv])
                    specs = [canonical_spec(m.h, beta, lam_v),
                             EnsembleSpec([beta, 0.05], (m.observables["H"], m.observables["H2"]), lam_v)]
                    ctx = ModelContext(h=m.h, beta=beta, lam=lam_v)
                    for iid in TABLE1:
                        reports += [check_identity(iid, ctx, i, j) for i, j in _index_pairs(iid, specs[0])]
                    mus = MUS if m.n_op is not None else ()
                    for mu in mus:
                        gctx = ModelContext(h=m.h, beta=beta, lam=lam_v, n_op=m.n_op, mu=mu)
                        specs.append(grand_canonical_spec(m.h, m.n_op, beta, mu, lam_v))
                        for iid in TABLE2:
                            reports += [check_identity(iid, gctx, i, j) for i, j in _index_pairs(iid, specs[-1])]
                    for spec in specs:
                        sctx = ModelContext(spec=spec)
                        for iid in TABLE3:
                            reports += [check_identity(iid, sctx, i, j) for i, j in _index_pairs(iid, spec)]
                    for spec in [specs[0]] + specs[2:]:
                        gammas = [alpha(j) for j in range(spec.n)] + [lam(0)]
                        for ob in observables:
                            reports += [check_qfdt(m.observables[ob], spec, g, params={"model": name}) for g in gammas]
    elapsed = time.perf_counter() - t0
    return reports, elapsed, _entropy_stats(log)


@functools.lru_cache(maxsize=None)
def criterion_2():
    m = instantiate(ModelSpec("two-level", eps=1.0))
    with recording() as log:
        rho, summ = build_canonical(m.h, 1.0, [0.0])
        h = m.h([0.0])
        got = {
            "<H>": summ.means[0],
            "Var(H)": variance(h, rho),
            "S": summ.entropy,
            "C": heat_capacity(m.h, 1.0, [0.0]),
        }
    return got, _entropy_stats(log)


@functools.lru_cache(maxsize=None)
def criterion_3():
    m = instantiate(ModelSpec("fermionic-modes", mode_energies=(1.0,)))
    with recording() as log:
        rho, summ = build_grand_canonical(m.h, m.n_op, 1.0, 0.0, [0.0])
        n_mean = summ.means[1]
        bvar = 1.0 * variance(m.n_op, rho)
        ctx = ModelContext(h=m.h, beta=1.0, lam=[0.0], n_op=m.n_op, mu=0.0)
        reps = [check_identity("T2-ONE-MU", ctx), check_identity("T2-N-MU", ctx)]
    return n_mean, bvar, reps, _entropy_stats(log)


@functools.lru_cache(maxsize=None)
def criterion_4():
    out = []
    with recording() as log:
        osc = instantiate(ModelSpec("perturbed-oscillator", dim=20))
        for beta in BETAS:
            q = thermodynamic_integration(osc.h, beta, 0.0, 1.0)
            e = free_energy_difference(osc.h, beta, 0.0, 1.0)
            out.append(("F", beta, q, e))
        ferm = instantiate(ModelSpec("fermionic-modes", n_sites=3))
        for beta in BETAS:
            q = thermodynamic_integration(ferm.h, beta, 0.0, 1.0, n_op=ferm.n_op, mu=0.2)
            e = free_energy_difference(ferm.h, beta, 0.0, 1.0, n_op=ferm.n_op, mu=0.2)
            out.append(("Phi", beta, q, e))
    return out, _entropy_stats(log)


@functools.lru_cache(maxsize=None)
def criterion_5():
    rng = np.random.default_rng(ROUNDTRIP_SEED)
    t0 = time.perf_counter()
    rows = []
    with recording() as log:
        for _ in range(N_ROUNDTRIP):
            problem, a_star = random_problem(rng)
            a, rho, trace = solve(problem)
            rows.append((problem, a_star, a, trace))
    elapsed = time.perf_counter() - t0
    return rows, elapsed, _entropy_stats(log)


# ----------------------------------------------------------------------------
# criteria


def test_criterion_01_qfdt_master_suite():
    reports, elapsed, _ = criterion_1()
    bad = [r for r in reports if not r.passed]
    worst = max(reports, key=lambda r: r.abs_residual / max(ATOL, RTOL * max(abs(r.lhs), abs(r.rhs))))
    ratio = worst.abs_residual / max(ATOL, RTOL * max(abs(worst.lhs), abs(worst.rhs)))
    ids = {r.identity_id for r in reports}
    ok = not bad and elapsed < C1_BUDGET_S and ids >= set(TABLE1 + TABLE2 + TABLE3)
    record(1, ok, f"{len(reports)} identity instances, {len(bad)} failing, worst residual/tolerance "
                  f"{ratio:.2e} ({worst.identity_id}), {elapsed:.1f} s (budget {C1_BUDGET_S:.0f} s)")
    assert ok, bad[:5]


def test_criterion_02_two_level_closed_forms():
    got, _ = criterion_2()
    errs = {k: abs(got[k] - ORACLE[k]) for k in ORACLE}
    ok = max(errs.values()) <= CLOSED_FORM_TOL
    parts = ", ".join(f"{k}={got[k]:.6f}" for k in ORACLE)
    record(2, ok, f"{parts}; max |impl - oracle| {max(errs.values()):.1e} (tol {CLOSED_FORM_TOL:.0e}); "
                  f"stated S={STATED_S} differs from recomputed {ORACLE['S']:.6f} by "
                  f"{abs(STATED_S - ORACLE['S']):.1e}")
    assert ok, errs


def test_criterion_03_fermi_dirac():
    n_mean, bvar, reps, _ = criterion_3()
    e1, e2 = abs(n_mean - P_EXC), abs(bvar - P_EXC * (1 - P_EXC))
    ok = e1 <= CLOSED_FORM_TOL and e2 <= CLOSED_FORM_TOL and all(r.passed for r in reps)
    record(3, ok, f"<N>={n_mean:.6f}, beta Var(N)={bvar:.6f} (errors {e1:.1e}, {e2:.1e}); "
                  f"T2-ONE-MU and T2-N-MU {'pass' if all(r.passed for r in reps) else 'FAIL'}")
    assert ok


def test_criterion_04_thermodynamic_integration():
    out, _ = criterion_4()
    worst = max(abs(q - e) for _, _, q, e in out)
    ok = worst <= TI_TOL
    record(4, ok, f"max |quadrature - endpoint| {worst:.1e} over {len(out)} cases "
                  f"(perturbed-oscillator F and fermionic-modes Phi, beta in {BETAS}; tol {TI_TOL:.0e})")
    assert ok


def test_criterion_05_maxent_round_trip():
    rows, elapsed, _ = criterion_5()
    errs = [float(np.max(np.abs(a - a_star))) for _, a_star, a, _ in rows]
    iters = [t.n_iter for *_, t in rows]
    ok = max(errs) <= ROUNDTRIP_TOL and max(iters) <= MAX_NEWTON and elapsed < C5_BUDGET_S and len(rows) == N_ROUNDTRIP
    record(5, ok, f"{len(rows)} problems, max |alpha - alpha*| {max(errs):.1e} (tol {ROUNDTRIP_TOL:.0e}), "
                  f"max Newton iterations {max(iters)} (limit {MAX_NEWTON}), {elapsed:.1f} s (budget {C5_BUDGET_S:.0f} s)")
    assert ok


def test_criterion_06_jacobian_identity():
    rows, _, _ = criterion_5()
    worst_rel = worst_sym = worst_eig = 0.0
    for problem, _, a, _ in rows:
        jac = -covariance_matrix(a, problem)
        worst_sym = max(worst_sym, float(np.max(np.abs(jac - jac.T))))
        worst_eig = max(worst_eig, float(np.max(np.linalg.eigvalsh(0.5 * (jac + jac.T)))))
        for l in range(problem.n):
            col = _fd_column(problem, a, l)
            rel = np.abs(col - jac[:, l]) / np.maximum(np.abs(jac[:, l]), 1e-300)
            worst_rel = max(worst_rel, float(np.max(rel)))
    ok = worst_rel <= JAC_RTOL and worst_sym <= JAC_SYM_TOL and worst_eig <= JAC_NSD_TOL
    record(6, ok, f"max relative |fd - (-Cov)| {worst_rel:.1e} (tol {JAC_RTOL:.0e}), asymmetry {worst_sym:.1e}, "
                  f"max eigenvalue {worst_eig:.1e} over {len(rows)} problems")
    assert ok


def _fd_column(problem, a, l, h=1e-5):
    """Richardson central difference of the forward map along alpha_l."""
    e = np.zeros(problem.n)
    e[l] = h * max(1.0, abs(a[l]))
    step = e[l]
    d1 = (forward_map(a + e, problem) - forward_map(a - e, problem)) / (2 * step)
    d2 = (forward_map(a + e / 2, problem) - forward_map(a - e / 2, problem)) / step
    return (4 * d2 - d1) / 3


def _precession(dt):
    n = int(round(2 * np.pi / dt))
    t = np.linspace(0.0, 2 * np.pi, n + 1)
    setup = EvolutionSetup(PAULI_Z, DensityMatrix.pure([1, 1]), t)
    states = evolve(setup)
    return ehrenfest_check(setup, PAULI_X, states=states), states


def test_criterion_07_ehrenfest():
    res1, states = _precession(1e-3)
    res2, _ = _precession(0.5e-3)
    ratio = res1.max_residual / res2.max_residual
    drift = purity_drift(states)
    sub = {
        "max residual": res1.max_residual <= EHRENFEST_TOL,
        "halving ratio": RATIO_LO <= ratio <= RATIO_HI,
        "purity drift": drift <= PURITY_TOL,
    }
    ok = all(sub.values())
    record(7, ok, f"H=pauli-z, A=pauli-x, dt=1e-3: max residual {res1.max_residual:.3e} "
                  f"(tol {EHRENFEST_TOL:.0e}, {'ok' if sub['max residual'] else 'EXCEEDED'}), "
                  f"halving ratio {ratio:.3f} (in [{RATIO_LO}, {RATIO_HI}]), purity drift {drift:.1e}")
    assert ok, sub


def test_criterion_08_entropy_identity():
    stats = {1: criterion_1()[2], 2: criterion_2()[1], 3: criterion_3()[3], 4: criterion_4()[1], 5: criterion_5()[2]}
    worst = max(s[0] for s in stats.values())
    count = sum(s[1] for s in stats.values())
    ok = worst <= ENTROPY_TOL and count > 0
    record(8, ok, f"|S - sum alpha<F> - ln Z| max {worst:.1e} over {count} ensembles built in criteria 1-5 "
                  f"(tol {ENTROPY_TOL:.0e})")
    assert ok


def _rotated_state(rho_dec_source, rng):
    """Canonical state rebuilt with eigenvectors rotated inside each degenerate eigenspace."""
    dec = spectral_decompose(rho_dec_source.matrix)
    v = dec.eigenvectors.copy()
    for group in dec.eigenspaces(tol=1e-12):
        k = len(group)
        if k > 1:
            z = rng.normal(size=(k, k)) + 1j * rng.normal(size=(k, k))
            q, _ = np.linalg.qr(z)
            v[:, group] = v[:, group] @ q
    return (v * dec.eigenvalues) @ v.conj().T, max(len(g) for g in dec.eigenspaces(tol=1e-12))


def test_criterion_09_invariances():
    rng = np.random.default_rng(9)
    worst_rot, max_deg = 0.0, 1
    cases = [
        instantiate(ModelSpec("fermionic-modes", mode_energies=(1.0, 1.0, 1.0))),
        instantiate(ModelSpec("transverse-spin-chain", n_sites=3, field_strength=0.0)),
    ]
    for m in cases:
        for beta in BETAS:
            rho, _ = build_canonical(m.h, beta, [0.0])
            rotated, deg = _rotated_state(rho, rng)
            max_deg = max(max_deg, deg)
            d = rho.dim
            g = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
            probes = [m.h([0.0]), m.observables["H2"]([0.0]), 0.5 * (g + g.conj().T)]
            if m.n_op is not None:
                probes.append(m.n_op)
            for a in probes:
                worst_rot = max(worst_rot, abs(expectation(a, rho) - expectation(a, rotated)))
    worst_shift = 0.0
    for _ in range(20):
        problem, _ = random_problem(rng)
        a, _, _ = solve(problem)
        c = rng.uniform(-3, 3, problem.n)
        d = problem.observables[0].shape[0]
        shifted = MaxEntProblem(tuple(f + ci * np.eye(d) for f, ci in zip(problem.observables, c)), problem.targets + c)
        a2, _, _ = solve(shifted)
        worst_shift = max(worst_shift, float(np.max(np.abs(a - a2))))
    ok = worst_rot <= ROTATION_TOL and worst_shift <= SHIFT_TOL and max_deg > 1
    record(9, ok, f"in-subspace rotation changes <A> by {worst_rot:.1e} (tol {ROTATION_TOL:.0e}, "
                  f"largest eigenspace {max_deg}); F -> F + cI moves alpha by {worst_shift:.1e} (tol {SHIFT_TOL:.0e})")
    assert ok


def test_criterion_10_negative_control(tmp_path):
    m = instantiate(ModelSpec("fermionic-modes", n_sites=3))
    ctx = ModelContext(h=m.h, beta=1.0, lam=[0.3], n_op=m.n_op, mu=0.2, spec=canonical_spec(m.h, 1.0, [0.3]))
    clean = [check_identity(i, ctx) for i in TABLE1 + TABLE2 + TABLE3]
    flipped = [check_identity(i, ctx, flip_sign=True) for i in TABLE1 + TABLE2 + TABLE3]
    generic = check_qfdt(m.observables["H"], ctx.spec, alpha(0), flip_sign=True)
    caught = sum(not r.passed for r in flipped) + (not generic.passed)
    total = len(flipped) + 1
    code_bad = cli_main(["run", str(SCENARIOS / "negative-control.yaml"), "--output", str(tmp_path / "bad")])
    good = (SCENARIOS / "negative-control.yaml").read_text().split("fault_injection:")[0]
    (tmp_path / "good.yaml").write_text(good)
    code_good = cli_main(["run", str(tmp_path / "good.yaml"), "--output", str(tmp_path / "good")])
    ok = all(r.passed for r in clean) and caught == total and code_bad != 0 and code_good == 0
    record(10, ok, f"{caught}/{total} sign-flipped identities fail (all pass unflipped); "
                   f"CLI exit {code_bad} with fault injection, {code_good} without")
    assert ok


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
