"""Batch execution of scenarios and report emission.

Work is split into units (one per grid point for identity suites and
thermodynamic integration, one per task otherwise). Units run on a thread
pool; results are assembled in submission order so reports are
deterministic regardless of scheduling.
"""

from __future__ import annotations

import csv
import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .dynamics import EvolutionSetup, ehrenfest_check, evolve, purity_drift, spectrum_drift, trace_drift
from .ensembles import DensityMatrix, EnsembleSpec, build_canonical, build_generalized, canonical_spec, grand_canonical_spec
from .exceptions import QFDTError
from .identities import (
    TABLE1,
    TABLE2,
    IdentityReport,
    ModelContext,
    Tolerances,
    alpha,
    check_identity,
    check_qfdt,
    lam,
    make_report,
)
from .maxent import MaxEntProblem, random_problem, solve
from .models import Model, free_energy_difference, instantiate, thermodynamic_integration
from .operators import OperatorFamily
from .scenario import GridPoint, Scenario, TaskConfig

log = logging.getLogger(__name__)

ENTROPY_TOL = Tolerances(atol=1e-10, rtol=0.0)
UNITARITY_TOL = Tolerances(atol=1e-9, rtol=0.0)
TRACE_TOL = Tolerances(atol=1e-10, rtol=0.0)
ROUNDTRIP_TOL = Tolerances(atol=1e-8, rtol=0.0)

STATUSES = ("pass", "fail", "error")


@dataclass
class CheckItem:
    """One attempted check: a report when it ran, an error message when it raised."""

    task: int
    task_type: str
    identity_id: str
    grid: dict
    status: str
    report: Optional[IdentityReport] = None
    error: Optional[str] = None
    params: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        d = {"task": self.task, "task_type": self.task_type, "identity_id": self.identity_id,
             "grid": self.grid, "status": self.status}
        if self.report is not None:
            r = self.report.as_dict()
            r.pop("identity_id")
            r["params"] = {**self.params, **r["params"]}
            d.update(r)
        else:
            d["params"] = dict(self.params)
            d["error"] = self.error
        return d


@dataclass
class Unit:
    items: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    trajectory: list = field(default_factory=list)


@dataclass
class RunReport:
    scenario: str
    items: list = field(default_factory=list)
    tasks: list = field(default_factory=list)
    trajectory: list = field(default_factory=list)
    wall_time: float = 0.0
    started_at: str = ""
    aborted: bool = False
    tolerances: Optional[Tolerances] = None
    seed: int = 0

    def counts(self, items=None) -> dict:
        items = self.items if items is None else items
        c = {s: sum(1 for it in items if it.status == s) for s in STATUSES}
        return {"attempted": len(items), "passed": c["pass"], "failed": c["fail"], "errors": c["error"]}

    @property
    def all_passed(self) -> bool:
        return not self.aborted and all(it.status == "pass" for it in self.items)

    def to_dict(self) -> dict:
        """Full report; aggregate counts are recomputed from the items here."""
        tasks = []
        for t in self.tasks:
            mine = [it for it in self.items if it.task == t["index"]]
            tasks.append({**t, "counts": self.counts(mine)})
        return {
            "scenario": self.scenario,
            "started_at": self.started_at,
            "wall_time_s": self.wall_time,
            "seed": self.seed,
            "aborted": self.aborted,
            "tolerances": asdict(self.tolerances) if self.tolerances else None,
            "counts": self.counts(),
            "all_passed": self.all_passed,
            "tasks": tasks,
            "items": [it.as_dict() for it in self.items],
        }


def _attempt(task: int, ttype: str, iid: str, grid: dict, fn: Callable[[], IdentityReport], **params) -> CheckItem:
    try:
        rep = fn()
    except (QFDTError, ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
        log.info("task %d %s %s raised %s", task, iid, params, exc)
        return CheckItem(task, ttype, iid, grid, "error", None, f"{type(exc).__name__}: {exc}", params)
    return CheckItem(task, ttype, iid, grid, "pass" if rep.passed else "fail", rep, None, params)


def ensemble_spec(scn: Scenario, model: Model, gp: GridPoint) -> EnsembleSpec:
    lv = np.array(gp.lam, dtype=float)
    kind = scn.ensemble.kind
    if kind == "canonical":
        return canonical_spec(model.h, gp.beta, lv)
    if kind == "grand-canonical":
        return grand_canonical_spec(model.h, model.n_op, gp.beta, gp.mu, lv)
    fams = tuple(model.observables[n] for n in scn.ensemble.observables)
    return EnsembleSpec(np.array(gp.alphas), fams, lv, compat_tol=scn.tolerances.compat_tol)


def _index_pairs(iid: str, spec: EnsembleSpec) -> list:
    n, m = spec.n, spec.n_lambda
    if iid in TABLE1 or iid in TABLE2:
        return [(i, 0) for i in range(m)] if iid.endswith("LAMBDA") else [(0, 0)]
    return {
        "T3-ONE-LAMBDA": [(k, 0) for k in range(m)],
        "T3-ONE-ALPHA": [(k, 0) for k in range(n)],
        "T3-FK-LAMBDA": [(k, l) for k in range(n) for l in range(m)],
        "T3-FK-ALPHA": [(j, l) for j in range(n) for l in range(n)],
    }[iid]


def entropy_report(spec: EnsembleSpec) -> IdentityReport:
    """``S`` against ``sum_j alpha_j <F_j> + ln Z``."""
    _, summ = build_generalized(spec)
    rhs = float(np.dot(spec.alphas, summ.means)) + summ.log_partition
    return make_report("ENTROPY", summ.entropy, rhs, ENTROPY_TOL)


def _default_observables(model: Model) -> tuple:
    return ("I", "H", "H2") + (("N",) if model.n_op is not None else ())


def _suite_unit(scn: Scenario, model: Model, ti: int, task: TaskConfig, gp: GridPoint) -> Unit:
    tol, opts, flips = scn.tolerances, task.options, scn.flip_rhs_sign
    grid = gp.as_dict()
    unit = Unit()
    add = unit.items.append
    try:
        spec = ensemble_spec(scn, model, gp)
    except (QFDTError, ValueError) as exc:
        add(CheckItem(ti, task.type, "ENSEMBLE-BUILD", grid, "error", error=f"{type(exc).__name__}: {exc}"))
        return unit
    ctx = ModelContext(h=model.h, beta=gp.beta, lam=np.array(gp.lam), n_op=model.n_op,
                       mu=gp.mu if gp.mu is not None else 0.0, spec=spec)
    for iid in opts.get("identities") or scn.default_identities():
        for i, j in _index_pairs(iid, spec):
            add(_attempt(ti, task.type, iid, grid,
                         lambda: check_identity(iid, ctx, i, j, tol, flip_sign=iid in flips)))
    if opts.get("generic", True):
        gammas = [alpha(j) for j in range(spec.n)] + [lam(i) for i in range(spec.n_lambda)]
        for name in opts.get("observables") or _default_observables(model):
            fam = model.observables[name]
            for g in gammas:
                add(_attempt(ti, task.type, "QFDT-GENERIC", grid,
                             lambda: check_qfdt(fam, spec, g, tol, flip_sign="QFDT-GENERIC" in flips)))
    if opts.get("entropy", True):
        add(_attempt(ti, task.type, "ENTROPY", grid, lambda: entropy_report(spec)))
    return unit


def _thermo_points(scn: Scenario) -> list:
    ens = scn.ensemble
    if ens.kind == "grand-canonical":
        return [(b, m) for b in ens.betas for m in ens.mus]
    return [(b, None) for b in ens.betas]


def _thermo_unit(scn: Scenario, model: Model, ti: int, task: TaskConfig, beta: float, mu: Optional[float]) -> Unit:
    o = task.options
    grid = {"beta": beta} if mu is None else {"beta": beta, "mu": mu}
    n_op = model.n_op if mu is not None else None
    base = np.array(scn.ensemble.lambdas[0])
    kw = dict(index=o["index"], lam_base=base, n_op=n_op, mu=mu or 0.0)
    tol = Tolerances(atol=max(1e-8, 10 * scn.quad_tol), rtol=0.0)

    def check():
        quad = thermodynamic_integration(model.h, beta, o["lambda_min"], o["lambda_max"], quad_tol=scn.quad_tol, **kw)
        end = free_energy_difference(model.h, beta, o["lambda_min"], o["lambda_max"], **kw)
        return make_report("TI-ENDPOINT", quad, end, tol)

    params = {"lambda_min": o["lambda_min"], "lambda_max": o["lambda_max"], "index": o["index"]}
    return Unit([_attempt(ti, task.type, "TI-ENDPOINT", grid, check, **params)])


def _maxent_unit(scn: Scenario, model: Model, ti: int, task: TaskConfig) -> Unit:
    o = task.options
    unit = Unit()
    kw = {k: o[k] for k in ("max_iter", "grad_tol") if k in o}
    jac_tol = Tolerances(atol=scn.tolerances.atol, rtol=scn.tolerances.rtol, fd_step=scn.tolerances.fd_step,
                         compat_tol=np.inf)
    traces = []

    def run_one(label: dict, make):
        state = {}

        def solve_check():
            problem, a_star = make()
            if kw:
                problem = MaxEntProblem(problem.observables, problem.targets, **kw)
            a, rho, trace = solve(problem)
            state.update(problem=problem, alpha=a, trace=trace)
            traces.append({**label, "n_iter": trace.n_iter, "converged": trace.converged,
                           "jacobian_condition": trace.jacobian_condition, "alpha": a.tolist(),
                           "residual_norms": [it.residual_norm for it in trace.iterates]})
            if a_star is not None:
                return make_report("MAXENT-ROUNDTRIP", float(np.max(np.abs(a - a_star))), 0.0, ROUNDTRIP_TOL,
                                   details={"alpha_star": list(map(float, a_star))})
            return make_report("MAXENT-SOLVE", trace.iterates[-1].residual_norm, 0.0, Tolerances(atol=problem.grad_tol * 10, rtol=0.0))

        first = _attempt(ti, task.type, "MAXENT-ROUNDTRIP" if o.get("random") or "alpha_star" in o
                         else "MAXENT-SOLVE", {}, solve_check, **label)
        unit.items.append(first)
        if "problem" not in state:
            return
        spec = state["problem"].spec(state["alpha"])
        ctx = ModelContext(spec=spec)
        for j in range(spec.n):
            for l in range(spec.n):
                unit.items.append(_attempt(ti, task.type, "T3-FK-ALPHA", {}, lambda: check_identity(
                    "T3-FK-ALPHA", ctx, j, l, jac_tol, flip_sign="T3-FK-ALPHA" in scn.flip_rhs_sign), **label))
        unit.items.append(_attempt(ti, task.type, "ENTROPY", {}, lambda: entropy_report(spec), **label))

    if o.get("random"):
        rnd = o["random"]
        rng = np.random.default_rng([scn.seed, ti])
        for c in range(rnd["count"]):
            drawn = random_problem(rng, max_dim=rnd["max_dim"], alpha_range=rnd["alpha_range"])
            run_one({"problem": c, "n": drawn[0].n, "dim": int(drawn[0].observables[0].shape[0])},
                    lambda: drawn)
    else:
        lv = np.array(o.get("lambda", scn.ensemble.lambdas[0]), dtype=float)

        def make():
            fams = tuple(model.observables[n] for n in o["observables"])
            if "alpha_star" in o:
                a_star = np.array(o["alpha_star"])
                _, summ = build_generalized(EnsembleSpec(a_star, fams, lv))
                return MaxEntProblem.from_families(fams, lv, np.array(summ.means)), a_star
            return MaxEntProblem.from_families(fams, lv, np.array(o["targets"])), None

        run_one({"observables": list(o["observables"]), "lambda": lv.tolist()}, make)
    unit.summary = {"solves": traces}
    return unit


def _operator(spec, model: Model, lv) -> np.ndarray:
    if isinstance(spec, np.ndarray):
        return spec
    return model.h(lv) if spec == "model" else model.observables[spec](lv)


def _dynamics_unit(scn: Scenario, model: Model, ti: int, task: TaskConfig) -> Unit:
    o = task.options
    unit = Unit()
    lv = np.array(o.get("lambda", scn.ensemble.lambdas[0]), dtype=float)
    grid = {"lambda": lv.tolist()}
    n = int(np.floor((o["t_max"] - o["t0"]) / o["dt"] + 1e-9))
    times = o["t0"] + o["dt"] * np.arange(n + 1)
    box = {}

    def run_traj():
        h = _operator(o["hamiltonian"], model, lv)
        a = _operator(o["observable"], model, lv)
        init = o["initial_state"]
        if init["kind"] == "maximally-mixed":
            rho0 = DensityMatrix.maximally_mixed(h.shape[0])
        elif init["kind"] == "vector":
            rho0 = DensityMatrix.pure(init["value"])
        elif init["kind"] == "thermal":
            rho0 = build_canonical(OperatorFamily.constant(h, 0, "H"), init["value"], np.zeros(0))[0]
        else:
            rho0 = DensityMatrix.from_matrix(init["value"])
        setup = EvolutionSetup(h, rho0, times, o["stepper"])
        states = evolve(setup)
        res = ehrenfest_check(setup, a, states=states, tol=scn.tolerances, max_truncation=o.get("max_truncation"))
        box.update(states=states, res=res)
        reports = res.reports()
        worst = max(reports, key=lambda r: r.abs_residual)
        ok = all(r.passed for r in reports)
        details = {"max_residual": res.max_residual, "n_points": len(reports),
                   "n_failed": sum(not r.passed for r in reports), "worst_t": worst.params["t"]}
        return IdentityReport("EHRENFEST", worst.lhs, worst.rhs, worst.abs_residual, worst.rel_residual,
                              None, ok, worst.atol, worst.rtol, {}, details)

    params = {"dt": o["dt"], "stepper": o["stepper"]}
    unit.items.append(_attempt(ti, task.type, "EHRENFEST", grid, run_traj, **params))
    if "states" not in box:
        return unit
    states, res = box["states"], box["res"]
    for iid, f, tol in (("PURITY-DRIFT", purity_drift, UNITARITY_TOL), ("TRACE-DRIFT", trace_drift, TRACE_TOL),
                        ("SPECTRUM-DRIFT", spectrum_drift, UNITARITY_TOL)):
        unit.items.append(_attempt(ti, task.type, iid, grid, lambda: make_report(iid, f(states), 0.0, tol), **params))
    interior = {float(t): (l, r) for t, l, r in zip(res.times, res.lhs, res.rhs)}
    for t, m in zip(res.all_times, res.expectations):
        l, r = interior.get(float(t), (None, None))
        unit.trajectory.append({"task": ti, "t": float(t), "expectation": float(m), "lhs": l, "rhs": r,
                                "residual": None if l is None else abs(l - r)})
    unit.summary = {"n_steps": n, "max_residual": res.max_residual,
                    "purity_drift": purity_drift(states), "trace_drift": trace_drift(states)}
    return unit


def plan(scn: Scenario, model: Model) -> list:
    """``(task_index, callable)`` work units in deterministic order."""
    units = []
    for ti, task in enumerate(scn.tasks):
        if task.type == "identity-suite":
            units += [(ti, lambda gp=gp, task=task, ti=ti: _suite_unit(scn, model, ti, task, gp))
                      for gp in scn.grid_points()]
        elif task.type == "thermo-integration":
            units += [(ti, lambda b=b, m=m, task=task, ti=ti: _thermo_unit(scn, model, ti, task, b, m))
                      for b, m in _thermo_points(scn)]
        elif task.type == "maxent-solve":
            units.append((ti, lambda task=task, ti=ti: _maxent_unit(scn, model, ti, task)))
        else:
            units.append((ti, lambda task=task, ti=ti: _dynamics_unit(scn, model, ti, task)))
    return units


def run(scn: Scenario, threads: int = 1, fail_fast: bool = False) -> RunReport:
    """Execute every task of ``scn``.

    Item errors are recorded and the run continues unless ``fail_fast``,
    in which case no further units are started after the first non-passing
    item and the report is marked ``aborted``.
    """
    t_start = time.perf_counter()
    report = RunReport(scn.name, started_at=datetime.now(timezone.utc).isoformat(timespec="seconds"),
                       tolerances=scn.tolerances, seed=scn.seed)
    model = instantiate(scn.model)
    units = plan(scn, model)
    summaries: dict = {ti: [] for ti in range(len(scn.tasks))}
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        futures = [(ti, pool.submit(fn)) for ti, fn in units]
        for k, (ti, fut) in enumerate(futures):
            unit = fut.result()
            report.items.extend(unit.items)
            report.trajectory.extend(unit.trajectory)
            if unit.summary:
                summaries[ti].append(unit.summary)
            if fail_fast and any(it.status != "pass" for it in unit.items):
                for _, rest in futures[k + 1:]:
                    rest.cancel()
                report.aborted = k + 1 < len(futures)
                break
    report.tasks = [{"index": ti, "type": t.type, "summary": summaries[ti]} for ti, t in enumerate(scn.tasks)]
    report.wall_time = time.perf_counter() - t_start
    return report


# ----------------------------------------------------------------------------
# output

IDENTITY_COLUMNS = ("task", "identity_id", "beta", "mu", "lambda", "params", "lhs", "rhs",
                    "abs_residual", "rel_residual", "pass", "status", "error")
TRAJECTORY_COLUMNS = ("task", "t", "expectation", "lhs", "rhs", "residual")


def _json_default(x):
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (set, frozenset)):
        return sorted(x)
    raise TypeError(f"not JSON serializable: {type(x).__name__}")


def identity_rows(report: RunReport) -> list:
    rows = []
    for it in report.items:
        d = it.as_dict()
        g = it.grid
        rows.append({
            "task": it.task,
            "identity_id": it.identity_id,
            "beta": g.get("beta", ""),
            "mu": g.get("mu", ""),
            "lambda": " ".join(repr(x) for x in g.get("lambda", [])),
            "params": json.dumps(d.get("params", {}), sort_keys=True, default=_json_default),
            "lhs": d.get("lhs", ""),
            "rhs": d.get("rhs", ""),
            "abs_residual": d.get("abs_residual", ""),
            "rel_residual": d.get("rel_residual", ""),
            "pass": it.status == "pass",
            "status": it.status,
            "error": it.error or "",
        })
    return rows


def write_outputs(report: RunReport, out_dir, with_trajectory: bool = False) -> list:
    """Write ``report.json``, ``identities.csv`` and (for dynamics) ``trajectory.csv``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = [out / "report.json", out / "identities.csv"]
    with open(written[0], "w") as fh:
        json.dump(report.to_dict(), fh, indent=2, default=_json_default)
        fh.write("\n")
    with open(written[1], "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=IDENTITY_COLUMNS)
        w.writeheader()
        w.writerows(identity_rows(report))
    if with_trajectory or report.trajectory:
        path = out / "trajectory.csv"
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=TRAJECTORY_COLUMNS)
            w.writeheader()
            for row in report.trajectory:
                w.writerow({k: ("" if v is None else v) for k, v in row.items()})
        written.append(path)
    return written
