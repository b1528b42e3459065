"""Scenario files: YAML schema, validation and the parameter grid.

A scenario names a model, an ensemble with parameter grids, a list of
tasks, optional tolerance overrides and an output directory::

    schema_version: 1
    name: two-level-canonical
    model: {kind: two-level, eps: 1.0}
    ensemble:
      kind: canonical          # canonical | grand-canonical | generalized
      beta: [0.1, 1.0, 10.0]
      lambda: [0.0, 0.3]
    tasks:
      - type: identity-suite
    tolerances: {atol: 1.0e-8, rtol: 1.0e-6}

See the README for every task's options.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Optional

import numpy as np
import yaml

from .exceptions import ConfigurationError, ScenarioError
from .identities import CATALOG, TABLE1, TABLE2, TABLE3, Tolerances
from .models import KINDS, ModelSpec, instantiate

SCHEMA_VERSION = 1
ENSEMBLES = ("canonical", "grand-canonical", "generalized")
TASK_TYPES = ("identity-suite", "maxent-solve", "dynamics", "thermo-integration")
DEFAULT_QUAD_TOL = 1e-9

_TOP_KEYS = {"schema_version", "name", "seed", "model", "ensemble", "tasks", "tolerances", "output", "fault_injection"}
_ENSEMBLE_KEYS = {"kind", "beta", "mu", "lambda", "alphas", "observables"}
_TOL_KEYS = {"atol", "rtol", "fd_step", "quad_tol", "compat_tol"}
_TASK_KEYS = {
    "identity-suite": {"type", "identities", "observables", "generic", "entropy"},
    "maxent-solve": {"type", "observables", "targets", "alpha_star", "lambda", "random", "max_iter", "grad_tol"},
    "dynamics": {"type", "hamiltonian", "lambda", "observable", "initial_state", "t0", "t_max", "dt",
                 "stepper", "max_truncation"},
    "thermo-integration": {"type", "lambda_min", "lambda_max", "index"},
}
_RANDOM_KEYS = {"count", "max_dim", "alpha_range"}
_MODEL_KEYS = {f.name for f in fields(ModelSpec)} - {"lam"}
_HAS_NUMBER_OP = {"fermionic-modes"}
_N_LAMBDA = 1  # every library model has one perturbation parameter


@dataclass(frozen=True)
class GridPoint:
    beta: Optional[float] = None
    mu: Optional[float] = None
    lam: tuple = ()
    alphas: Optional[tuple] = None

    def as_dict(self) -> dict:
        d: dict = {"lambda": list(self.lam)}
        if self.beta is not None:
            d["beta"] = self.beta
        if self.mu is not None:
            d["mu"] = self.mu
        if self.alphas is not None:
            d["alphas"] = list(self.alphas)
        return d


@dataclass(frozen=True)
class EnsembleConfig:
    kind: str
    betas: tuple = ()
    mus: tuple = ()
    lambdas: tuple = ((0.0,),)
    alphas: tuple = ()
    observables: tuple = ()

    def grid(self) -> list:
        """Ensemble builds scheduled by an identity suite, in deterministic order."""
        if self.kind == "canonical":
            return [GridPoint(b, None, l) for b, l in itertools.product(self.betas, self.lambdas)]
        if self.kind == "grand-canonical":
            return [GridPoint(b, m, l) for b, m, l in itertools.product(self.betas, self.mus, self.lambdas)]
        return [GridPoint(None, None, l, a) for a, l in itertools.product(self.alphas, self.lambdas)]


@dataclass(frozen=True)
class TaskConfig:
    type: str
    options: dict = field(default_factory=dict)


@dataclass(frozen=True)
class Scenario:
    name: str
    model: ModelSpec
    ensemble: EnsembleConfig
    tasks: tuple = ()
    tolerances: Tolerances = Tolerances()
    quad_tol: float = DEFAULT_QUAD_TOL
    seed: int = 0
    output_dir: Optional[str] = None
    flip_rhs_sign: frozenset = frozenset()
    schema_version: int = SCHEMA_VERSION

    def grid_points(self) -> list:
        return self.ensemble.grid()

    def default_identities(self) -> list:
        return {"canonical": TABLE1 + TABLE3, "grand-canonical": TABLE2 + TABLE3,
                "generalized": list(TABLE3)}[self.ensemble.kind]


# ----------------------------------------------------------------------------
# parsing helpers


def _fail(path: str, msg: str):
    raise ScenarioError(f"{path}: {msg}")


def _mapping(value, path: str) -> dict:
    if value is None:
        return {}
    if not isinstance(value, dict):
        _fail(path, f"expected a mapping, got {type(value).__name__}")
    return value


def _known_keys(d: dict, allowed: set, path: str):
    extra = sorted(set(d) - allowed)
    if extra:
        _fail(f"{path}.{extra[0]}", f"unknown field (allowed: {', '.join(sorted(allowed))})")


def _number(value, path: str, positive: bool = False, integer: bool = False) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        _fail(path, f"expected a number, got {value!r}")
    if not math.isfinite(value):
        _fail(path, f"must be finite, got {value!r}")
    if positive and not value > 0:
        _fail(path, f"must be positive, got {value!r}")
    if integer and int(value) != value:
        _fail(path, f"must be an integer, got {value!r}")
    return int(value) if integer else float(value)


def _number_list(value, path: str, positive: bool = False) -> tuple:
    if not isinstance(value, list):
        value = [value]
    if not value:
        _fail(path, "must not be empty")
    return tuple(_number(v, f"{path}[{i}]", positive) for i, v in enumerate(value))


def _vector_list(value, path: str, length: Optional[int] = None) -> tuple:
    """A list of vectors; a flat list of numbers is a list of 1-vectors."""
    if not isinstance(value, list) or not value:
        _fail(path, "expected a non-empty list")
    out = []
    for i, v in enumerate(value):
        vec = _number_list(v, f"{path}[{i}]")
        if length is not None and len(vec) != length:
            _fail(f"{path}[{i}]", f"expected {length} component(s), got {len(vec)}")
        out.append(vec)
    return tuple(out)


def _string_list(value, path: str) -> tuple:
    if isinstance(value, str):
        value = [value]
    if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
        _fail(path, "expected a list of names")
    return tuple(value)


def parse_matrix(value, path: str) -> np.ndarray:
    """Square matrix from nested lists; entries may be numbers or strings like ``"1-2j"``."""
    if not isinstance(value, list) or not value or not all(isinstance(r, list) for r in value):
        _fail(path, "expected a square matrix as a list of rows")
    try:
        m = np.array([[complex(x) if isinstance(x, str) else x for x in row] for row in value], dtype=complex)
    except (TypeError, ValueError) as exc:
        _fail(path, f"bad matrix entry ({exc})")
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        _fail(path, f"matrix must be square, got shape {m.shape}")
    return m


# ----------------------------------------------------------------------------
# sections


def _model(raw, path="model") -> ModelSpec:
    raw = dict(_mapping(raw, path))
    if "kind" not in raw:
        _fail(f"{path}.kind", "required")
    if raw["kind"] not in KINDS:
        _fail(f"{path}.kind", f"unknown model kind {raw['kind']!r} (expected one of {', '.join(KINDS)})")
    _known_keys(raw, _MODEL_KEYS, path)
    for key in ("dim", "n_sites"):
        if key in raw:
            raw[key] = _number(raw[key], f"{path}.{key}", positive=True, integer=True)
    for key in ("eps", "omega", "coupling", "field_strength"):
        if key in raw:
            raw[key] = _number(raw[key], f"{path}.{key}")
    if "mode_energies" in raw:
        raw["mode_energies"] = _number_list(raw["mode_energies"], f"{path}.mode_energies")
    if "seed" in raw and raw["seed"] is not None:
        raw["seed"] = _number(raw["seed"], f"{path}.seed", integer=True)
    if "zero_point" in raw and not isinstance(raw["zero_point"], bool):
        _fail(f"{path}.zero_point", "expected true/false")
    return ModelSpec(**raw)


def _ensemble(raw, model: ModelSpec, path="ensemble") -> EnsembleConfig:
    raw = _mapping(raw, path)
    _known_keys(raw, _ENSEMBLE_KEYS, path)
    kind = raw.get("kind", "canonical")
    if kind not in ENSEMBLES:
        _fail(f"{path}.kind", f"unknown ensemble {kind!r} (expected one of {', '.join(ENSEMBLES)})")
    if kind == "grand-canonical" and model.kind not in _HAS_NUMBER_OP:
        _fail(f"{path}.kind", f"grand-canonical requires number operator (model {model.kind!r} has none)")
    lambdas = _vector_list(raw["lambda"], f"{path}.lambda", _N_LAMBDA) if "lambda" in raw else ((0.0,),)

    def forbid(key):
        if key in raw:
            _fail(f"{path}.{key}", f"{kind} ensemble has no parameter {key!r}")

    if kind == "generalized":
        forbid("beta")
        forbid("mu")
        if "observables" not in raw:
            _fail(f"{path}.observables", "required for the generalized ensemble")
        obs = _string_list(raw["observables"], f"{path}.observables")
        if "alphas" not in raw:
            _fail(f"{path}.alphas", "required for the generalized ensemble")
        alphas = _vector_list(raw["alphas"], f"{path}.alphas", len(obs))
        return EnsembleConfig(kind, lambdas=lambdas, alphas=alphas, observables=obs)

    forbid("alphas")
    forbid("observables")
    if "beta" not in raw:
        _fail(f"{path}.beta", "required")
    betas = _number_list(raw["beta"], f"{path}.beta", positive=True)
    if kind == "canonical":
        forbid("mu")
        return EnsembleConfig(kind, betas=betas, lambdas=lambdas)
    mus = _number_list(raw.get("mu", [0.0]), f"{path}.mu")
    return EnsembleConfig(kind, betas=betas, mus=mus, lambdas=lambdas)


def _tolerances(raw, path="tolerances") -> tuple:
    raw = _mapping(raw, path)
    _known_keys(raw, _TOL_KEYS, path)
    vals = {k: _number(v, f"{path}.{k}", positive=True) for k, v in raw.items()}
    quad = vals.pop("quad_tol", DEFAULT_QUAD_TOL)
    return Tolerances(**vals), quad


def _task(raw, i: int, model: ModelSpec, ens: EnsembleConfig) -> TaskConfig:
    path = f"tasks[{i}]"
    raw = _mapping(raw, path)
    ttype = raw.get("type")
    if ttype not in TASK_TYPES:
        _fail(f"{path}.type", f"unknown task type {ttype!r} (expected one of {', '.join(TASK_TYPES)})")
    _known_keys(raw, _TASK_KEYS[ttype], path)
    opts = {k: v for k, v in raw.items() if k != "type"}

    if ttype == "identity-suite":
        if "identities" in opts:
            ids = _string_list(opts["identities"], f"{path}.identities")
            expanded = []
            for name in ids:
                group = {"table1": TABLE1, "table2": TABLE2, "table3": TABLE3}.get(name.lower())
                if group is not None:
                    expanded.extend(group)
                elif name in TABLE1 + TABLE2 + TABLE3:
                    expanded.append(name)
                else:
                    _fail(f"{path}.identities", f"unknown identity {name!r}")
            if any(x in TABLE2 for x in expanded) and model.kind not in _HAS_NUMBER_OP:
                _fail(f"{path}.identities", f"grand-canonical requires number operator (model {model.kind!r} has none)")
            allowed = {"canonical": TABLE1 + TABLE3, "grand-canonical": TABLE2 + TABLE3,
                       "generalized": TABLE3}[ens.kind]
            for x in expanded:
                if x not in allowed:
                    _fail(f"{path}.identities", f"{x} does not apply to the {ens.kind} ensemble")
            opts["identities"] = tuple(dict.fromkeys(expanded))
        if "observables" in opts:
            opts["observables"] = _string_list(opts["observables"], f"{path}.observables")
        for key in ("generic", "entropy"):
            if key in opts and not isinstance(opts[key], bool):
                _fail(f"{path}.{key}", "expected true/false")

    elif ttype == "maxent-solve":
        if "random" in opts:
            rnd = _mapping(opts["random"], f"{path}.random")
            _known_keys(rnd, _RANDOM_KEYS, f"{path}.random")
            if "count" not in rnd:
                _fail(f"{path}.random.count", "required")
            opts["random"] = {
                "count": _number(rnd["count"], f"{path}.random.count", positive=True, integer=True),
                "max_dim": _number(rnd.get("max_dim", 32), f"{path}.random.max_dim", positive=True, integer=True),
                "alpha_range": _number(rnd.get("alpha_range", 2.0), f"{path}.random.alpha_range", positive=True),
            }
            if opts["random"]["max_dim"] < 3:
                _fail(f"{path}.random.max_dim", "must be at least 3")
            for key in ("observables", "targets", "alpha_star"):
                if key in opts:
                    _fail(f"{path}.{key}", "not allowed together with random")
        else:
            if "observables" not in opts:
                _fail(f"{path}.observables", "required")
            obs = _string_list(opts["observables"], f"{path}.observables")
            opts["observables"] = obs
            if ("targets" in opts) == ("alpha_star" in opts):
                _fail(f"{path}.targets", "give exactly one of targets or alpha_star")
            for key in ("targets", "alpha_star"):
                if key in opts:
                    opts[key] = _number_list(opts[key], f"{path}.{key}")
                    if len(opts[key]) != len(obs):
                        _fail(f"{path}.{key}", f"expected {len(obs)} value(s), got {len(opts[key])}")
        if "lambda" in opts:
            opts["lambda"] = _vector_list([opts["lambda"]], f"{path}.lambda", _N_LAMBDA)[0]
        if "max_iter" in opts:
            opts["max_iter"] = _number(opts["max_iter"], f"{path}.max_iter", positive=True, integer=True)
        if "grad_tol" in opts:
            opts["grad_tol"] = _number(opts["grad_tol"], f"{path}.grad_tol", positive=True)

    elif ttype == "dynamics":
        for key in ("t_max", "dt"):
            if key not in opts:
                _fail(f"{path}.{key}", "required")
        opts["t0"] = _number(opts.get("t0", 0.0), f"{path}.t0")
        opts["t_max"] = _number(opts["t_max"], f"{path}.t_max")
        opts["dt"] = _number(opts["dt"], f"{path}.dt", positive=True)
        if opts["t_max"] - opts["t0"] < 2 * opts["dt"]:
            _fail(f"{path}.t_max", "time window must hold at least three grid points")
        stepper = opts.get("stepper", "exact")
        if stepper not in ("exact", "midpoint"):
            _fail(f"{path}.stepper", f"expected exact or midpoint, got {stepper!r}")
        opts["stepper"] = stepper
        h = opts.get("hamiltonian", "model")
        opts["hamiltonian"] = h if isinstance(h, str) else parse_matrix(h, f"{path}.hamiltonian")
        if "observable" not in opts:
            _fail(f"{path}.observable", "required")
        a = opts["observable"]
        opts["observable"] = a if isinstance(a, str) else parse_matrix(a, f"{path}.observable")
        if "lambda" in opts:
            opts["lambda"] = _vector_list([opts["lambda"]], f"{path}.lambda", _N_LAMBDA)[0]
        opts["initial_state"] = _initial_state(opts.get("initial_state", "maximally-mixed"), f"{path}.initial_state")
        if "max_truncation" in opts:
            opts["max_truncation"] = _number(opts["max_truncation"], f"{path}.max_truncation", positive=True)

    else:
        if ens.kind == "generalized":
            _fail(f"{path}.type", "thermo-integration needs a canonical or grand-canonical ensemble")
        for key in ("lambda_min", "lambda_max"):
            if key not in opts:
                _fail(f"{path}.{key}", "required")
            opts[key] = _number(opts[key], f"{path}.{key}")
        opts["index"] = _number(opts.get("index", 0), f"{path}.index", integer=True)
        if not 0 <= opts["index"] < _N_LAMBDA:
            _fail(f"{path}.index", f"lambda index out of range [0, {_N_LAMBDA})")
    return TaskConfig(ttype, opts)


def _initial_state(raw, path: str) -> dict:
    if raw == "maximally-mixed":
        return {"kind": "maximally-mixed"}
    raw = _mapping(raw, path)
    if len(raw) != 1:
        _fail(path, "expected exactly one of vector, thermal, matrix or maximally-mixed")
    (key, val), = raw.items()
    if key == "vector":
        vec = [complex(x) if isinstance(x, str) else x for x in (val if isinstance(val, list) else [])]
        if not vec:
            _fail(f"{path}.vector", "expected a non-empty list")
        return {"kind": "vector", "value": np.asarray(vec, dtype=complex)}
    if key == "thermal":
        return {"kind": "thermal", "value": _number(val, f"{path}.thermal", positive=True)}
    if key == "matrix":
        return {"kind": "matrix", "value": parse_matrix(val, f"{path}.matrix")}
    _fail(f"{path}.{key}", "unknown initial state (expected vector, thermal, matrix or maximally-mixed)")


def _check_names(scn: Scenario):
    """Observable names must exist in the model catalog."""
    try:
        catalog = instantiate(scn.model).observables
    except ConfigurationError as exc:
        _fail("model", str(exc))
    avail = ", ".join(sorted(catalog))

    def need(name, path):
        if name not in catalog:
            _fail(path, f"unknown observable {name!r} for model {scn.model.kind} (available: {avail})")

    for n in scn.ensemble.observables:
        need(n, "ensemble.observables")
    for i, t in enumerate(scn.tasks):
        for n in t.options.get("observables", ()):
            need(n, f"tasks[{i}].observables")
        for key in ("hamiltonian", "observable"):
            v = t.options.get(key)
            if isinstance(v, str) and v != "model":
                need(v, f"tasks[{i}].{key}")
        if t.type == "identity-suite" and scn.model.kind not in _HAS_NUMBER_OP and "N" in t.options.get("observables", ()):
            _fail(f"tasks[{i}].observables", "N requires a model with a number operator")


# ----------------------------------------------------------------------------
# entry points


def parse_scenario(data: Any, source: str = "<scenario>") -> Scenario:
    """Validate an already-parsed YAML document."""
    data = _mapping(data, source)
    _known_keys(data, _TOP_KEYS, source)
    version = data.get("schema_version")
    if version != SCHEMA_VERSION:
        _fail("schema_version", f"expected {SCHEMA_VERSION}, got {version!r}")
    name = data.get("name")
    if not isinstance(name, str) or not name:
        _fail("name", "required non-empty string")
    if "model" not in data:
        _fail("model", "required")
    model = _model(data["model"])
    ens = _ensemble(data.get("ensemble"), model)
    raw_tasks = data.get("tasks") or []
    if not isinstance(raw_tasks, list):
        _fail("tasks", "expected a list")
    tasks = tuple(_task(t, i, model, ens) for i, t in enumerate(raw_tasks))
    tol, quad = _tolerances(data.get("tolerances"))
    out = _mapping(data.get("output"), "output")
    _known_keys(out, {"dir"}, "output")
    fault = _mapping(data.get("fault_injection"), "fault_injection")
    _known_keys(fault, {"flip_rhs_sign"}, "fault_injection")
    flips = _string_list(fault.get("flip_rhs_sign", []), "fault_injection.flip_rhs_sign")
    for f in flips:
        if f not in CATALOG:
            _fail("fault_injection.flip_rhs_sign", f"unknown identity {f!r}")
    seed = _number(data.get("seed", 0), "seed", integer=True)
    scn = Scenario(name, model, ens, tasks, tol, quad, seed, out.get("dir"), frozenset(flips), version)
    _check_names(scn)
    return scn


def load_scenario(path) -> Scenario:
    """Read and validate a scenario file.

    Raises
    ------
    ScenarioError
        On a missing file, a YAML syntax error (with line and column) or a
        schema violation (naming the offending field).
    """
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ScenarioError(f"{path}: cannot read ({exc.strerror})") from exc
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"line {mark.line + 1}, column {mark.column + 1}" if mark is not None else "unknown position"
        problem = getattr(exc, "problem", None) or str(exc)
        raise ScenarioError(f"{path}: parse error at {where}: {problem}") from exc
    return parse_scenario(data, str(path))
