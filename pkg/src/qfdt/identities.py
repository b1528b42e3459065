"""Fluctuation-dissipation identities for exponential-family density matrices.

Each check compares a derivative of an expectation, taken by central
differences with one Richardson level, against a closed-form
right-hand side built from expectations and covariances in the same
state. Rows whose right-hand side is a derivative of ``ln Z`` flip the
roles: the expectation is exact and ``d ln Z`` is differentiated
numerically, with the analytic trace formula kept in ``details``.

The log-density derivative is taken from the explicit exponential-family
form ``log rho = -sum_j alpha_j F_j - ln Z``, never from a numerical
matrix logarithm.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .ensembles import (
    DensityMatrix,
    EnsembleSpec,
    build_generalized,
    canonical_spec,
    grand_canonical_spec,
)
from .exceptions import (
    CompatibilityError,
    ConfigurationError,
    LevelCrossingError,
    NumericalConsistencyError,
    UnknownParameterError,
)
from .operators import (
    COMPAT_TOL,
    OperatorFamily,
    anticommutator,
    commutator,
    commutator_norm,
    identity_family,
    spectral_decompose,
)

log = logging.getLogger(__name__)

IMAG_TOL = 1e-10


@dataclass(frozen=True)
class Tolerances:
    atol: float = 1e-8
    rtol: float = 1e-6
    # relative: h = fd_step * max(1, |gamma|)
    fd_step: float = 1e-5
    compat_tol: float = COMPAT_TOL


DEFAULT_TOL = Tolerances()


@dataclass(frozen=True)
class Param:
    """Handle for a derivative direction: multiplier ``alpha_index`` or ``lambda_index``."""

    kind: str
    index: int = 0

    def __str__(self):
        return f"{self.kind}[{self.index}]"


def alpha(index: int = 0) -> Param:
    return Param("alpha", index)


def lam(index: int = 0) -> Param:
    return Param("lambda", index)


@dataclass(frozen=True)
class IdentityReport:
    identity_id: str
    lhs: float
    rhs: float
    abs_residual: float
    rel_residual: float
    fd_step: Optional[float]
    passed: bool
    atol: float = DEFAULT_TOL.atol
    rtol: float = DEFAULT_TOL.rtol
    params: dict = field(default_factory=dict)
    details: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "identity_id": self.identity_id,
            "params": dict(self.params),
            "lhs": self.lhs,
            "rhs": self.rhs,
            "abs_residual": self.abs_residual,
            "rel_residual": self.rel_residual,
            "fd_step": self.fd_step,
            "atol": self.atol,
            "rtol": self.rtol,
            "pass": self.passed,
            "details": dict(self.details),
        }


def make_report(identity_id, lhs, rhs, tol: Tolerances = DEFAULT_TOL, fd_step=None, params=None, details=None):
    lhs = float(lhs)
    rhs = float(rhs)
    res = abs(lhs - rhs)
    scale = max(abs(lhs), abs(rhs))
    rel = res / scale if scale > 0 else 0.0
    ok = res <= max(tol.atol, tol.rtol * scale)
    log.debug("%s lhs=%.12g rhs=%.12g res=%.3e pass=%s", identity_id, lhs, rhs, res, ok)
    return IdentityReport(identity_id, lhs, rhs, res, rel, fd_step, bool(ok), tol.atol, tol.rtol,
                          dict(params or {}), dict(details or {}))


# ----------------------------------------------------------------------------
# moments


@dataclass(frozen=True)
class Moments:
    mean_a: float
    mean_b: float
    cov_ab: float
    var_a: float


def _rho_matrix(rho):
    return rho.matrix if isinstance(rho, DensityMatrix) else np.asarray(rho)


def expectation(a: np.ndarray, rho) -> float:
    """``Re Tr(A rho)``; the imaginary part must vanish to ``1e-10``."""
    r = _rho_matrix(rho)
    if a.shape != r.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {r.shape}")
    val = np.einsum("ij,ji->", a, r)
    if abs(val.imag) > IMAG_TOL * max(1.0, abs(val.real)):
        raise NumericalConsistencyError(f"expectation has imaginary part {val.imag:.3e}")
    return float(val.real)


def covariance(a: np.ndarray, b: np.ndarray, rho, compat_tol: float = COMPAT_TOL) -> float:
    """``<AB> - <A><B>``.

    At least one of ``a``, ``b`` must commute with ``rho``; then the
    commutator part of the covariance vanishes and the result is real.
    """
    r = _rho_matrix(rho)
    if commutator_norm(a, r) > compat_tol and commutator_norm(b, r) > compat_tol:
        raise CompatibilityError("covariance needs at least one argument compatible with rho")
    return expectation(a @ b, r) - expectation(a, r) * expectation(b, r)


def variance(a: np.ndarray, rho) -> float:
    v = covariance(a, a, rho, compat_tol=np.inf)
    if v < -1e-12:
        log.warning("negative variance %.3e clamped to 0", v)
    return max(v, 0.0)


def moments(a: np.ndarray, b: np.ndarray, rho, compat_tol: float = COMPAT_TOL) -> Moments:
    r = _rho_matrix(rho)
    return Moments(expectation(a, r), expectation(b, r), covariance(a, b, r, compat_tol), variance(a, r))


def covariance_decomposition(a: np.ndarray, b: np.ndarray, rho) -> tuple:
    """``(cov, sym, comm)`` with ``sym = <{dA, dB}>/2`` and ``comm = <[A, B]>/2``.

    ``cov = sym + comm``; ``comm`` is purely imaginary for Hermitian inputs.
    """
    r = _rho_matrix(rho)
    eye = np.eye(a.shape[0])
    da = a - np.trace(a @ r).real * eye
    db = b - np.trace(b @ r).real * eye
    sym = 0.5 * np.trace(anticommutator(da, db) @ r)
    comm = 0.5 * np.trace(commutator(a, b) @ r)
    cov = np.trace(a @ b @ r) - np.trace(a @ r) * np.trace(b @ r)
    return complex(cov), complex(sym), complex(comm)


# ----------------------------------------------------------------------------
# generic Q-FDT


def _check_param(spec: EnsembleSpec, gamma: Param) -> None:
    if gamma.kind == "alpha":
        if not 0 <= gamma.index < spec.n:
            raise UnknownParameterError(f"{gamma}: spec has {spec.n} multipliers")
    elif gamma.kind == "lambda":
        if not 0 <= gamma.index < spec.n_lambda:
            raise UnknownParameterError(f"{gamma}: spec has {spec.n_lambda} lambda parameters")
    else:
        raise UnknownParameterError(f"unknown parameter kind {gamma.kind!r}")


def param_value(spec: EnsembleSpec, gamma: Param) -> float:
    _check_param(spec, gamma)
    src = spec.alphas if gamma.kind == "alpha" else spec.lam
    return float(src[gamma.index])


def with_param(spec: EnsembleSpec, gamma: Param, value: float) -> EnsembleSpec:
    _check_param(spec, gamma)
    if gamma.kind == "alpha":
        a = spec.alphas.copy()
        a[gamma.index] = value
        return spec.with_alphas(a)
    lam_ = spec.lam.copy()
    lam_[gamma.index] = value
    return spec.with_lambda(lam_)


def _step(x: float, tol: Tolerances, step: Optional[float] = None, positive: bool = False) -> float:
    h = tol.fd_step * max(1.0, abs(x)) if step is None else step
    if positive:
        h = min(h, 0.25 * x)
    return h


def _richardson(f: Callable[[float], float], x: float, h: float) -> tuple:
    d1 = (f(x + h) - f(x - h)) / (2 * h)
    d2 = (f(x + h / 2) - f(x - h / 2)) / h
    est = (4 * d2 - d1) / 3
    return est, abs(est - d2)


@dataclass(frozen=True)
class FiniteDifference:
    value: float
    error: float
    step: float


def param_derivative(f: Callable[[EnsembleSpec], float], spec: EnsembleSpec, gamma: Param,
                     step: Optional[float] = None, tol: Tolerances = DEFAULT_TOL) -> FiniteDifference:
    """Central difference of ``f(spec)`` along ``gamma`` with one Richardson level."""
    x0 = param_value(spec, gamma)
    h = _step(x0, tol, step)
    val, err = _richardson(lambda x: f(with_param(spec, gamma, x)), x0, h)
    return FiniteDifference(val, err, h)


def _mean_of(a_family: OperatorFamily) -> Callable[[EnsembleSpec], float]:
    def f(spec):
        rho, _ = build_generalized(spec)
        return expectation(a_family(spec.lam), rho)
    return f


def _log_z(spec: EnsembleSpec) -> float:
    return build_generalized(spec)[1].log_partition


def exponent_derivative(spec: EnsembleSpec, gamma: Param) -> np.ndarray:
    """``d/dgamma sum_j alpha_j F_j``."""
    _check_param(spec, gamma)
    if gamma.kind == "alpha":
        return spec.operators[gamma.index]
    out = np.zeros_like(spec.operators[0])
    for a, fam in zip(spec.alphas, spec.families):
        out = out + a * fam.deriv(spec.lam, gamma.index)
    return out


def dlog_partition(spec: EnsembleSpec, gamma: Param, rho=None) -> float:
    """Analytic ``d ln Z / dgamma = -<d(sum_j alpha_j F_j)/dgamma>``."""
    rho = build_generalized(spec)[0] if rho is None else rho
    return -expectation(exponent_derivative(spec, gamma), rho)


def dlog_rho(spec: EnsembleSpec, gamma: Param, rho=None) -> np.ndarray:
    """``d log rho / dgamma`` from the exponential-family log form."""
    rho = build_generalized(spec)[0] if rho is None else rho
    dk = exponent_derivative(spec, gamma)
    return -dk + expectation(dk, rho) * np.eye(dk.shape[0])


def _operator_derivative(a_family: OperatorFamily, spec: EnsembleSpec, gamma: Param) -> Optional[np.ndarray]:
    if gamma.kind == "lambda":
        return a_family.deriv(spec.lam, gamma.index)
    return None


def qfdt_rhs(a_family: OperatorFamily, spec: EnsembleSpec, gamma: Param,
             compat_tol: float = COMPAT_TOL, sign: float = 1.0) -> float:
    """``<dA/dgamma> + <A dlog(rho)/dgamma>`` evaluated in ``rho(spec)``.

    ``sign`` multiplies the log-density term; it exists only for negative
    controls and is ``1`` in normal use.
    """
    _check_param(spec, gamma)
    rho, _ = build_generalized(spec)
    a = a_family(spec.lam)
    c = commutator_norm(a, rho.matrix)
    if c > compat_tol:
        raise CompatibilityError(f"{a_family.name} does not commute with rho (max|[A, rho]| = {c:.3e})")
    da = _operator_derivative(a_family, spec, gamma)
    first = expectation(da, rho) if da is not None else 0.0
    x = dlog_rho(spec, gamma, rho)
    second = expectation(a @ x, rho)
    return first + sign * second


def qfdt_lhs_fd(a_family: OperatorFamily, spec: EnsembleSpec, gamma: Param,
                step: Optional[float] = None, tol: Tolerances = DEFAULT_TOL) -> FiniteDifference:
    """``d<A>/dgamma`` by central differences on rebuilt ensembles."""
    return param_derivative(_mean_of(a_family), spec, gamma, step, tol)


def check_qfdt(a_family: OperatorFamily, spec: EnsembleSpec, gamma: Param,
               tol: Tolerances = DEFAULT_TOL, flip_sign: bool = False, params=None) -> IdentityReport:
    fd = qfdt_lhs_fd(a_family, spec, gamma, tol=tol)
    rhs = qfdt_rhs(a_family, spec, gamma, tol.compat_tol, sign=-1.0 if flip_sign else 1.0)
    p = {"observable": a_family.name, "gamma": str(gamma)}
    p.update(params or {})
    return make_report("QFDT-GENERIC", fd.value, rhs, tol, fd.step, p, {"fd_error": fd.error})


# ----------------------------------------------------------------------------
# generalized MaxEnt identities


def _t3_one_lambda(spec, k, tol, sign, params):
    gamma = lam(k)
    rho, _ = build_generalized(spec)
    lhs = expectation(exponent_derivative(spec, gamma), rho)
    fd = param_derivative(_log_z, spec, gamma, tol=tol)
    rhs = -sign * fd.value
    details = {"dlnZ_fd": fd.value, "dlnZ_analytic": dlog_partition(spec, gamma, rho), "fd_error": fd.error}
    return lhs, rhs, fd.step, details


def _t3_one_alpha(spec, k, tol, sign, params):
    gamma = alpha(k)
    rho, _ = build_generalized(spec)
    lhs = expectation(spec.operators[k], rho)
    fd = param_derivative(_log_z, spec, gamma, tol=tol)
    rhs = -sign * fd.value
    details = {"dlnZ_fd": fd.value, "dlnZ_analytic": dlog_partition(spec, gamma, rho), "fd_error": fd.error}
    return lhs, rhs, fd.step, details


def _t3_fk_lambda(spec, k, l, tol, sign):
    gamma = lam(l)
    fam = spec.families[k]
    fd = qfdt_lhs_fd(fam, spec, gamma, tol=tol)
    rho, _ = build_generalized(spec)
    fk = spec.operators[k]
    dfk = fam.deriv(spec.lam, l)
    fluct = sum(
        a * covariance(fk, f.deriv(spec.lam, l), rho, tol.compat_tol)
        for a, f in zip(spec.alphas, spec.families)
    )
    rhs = expectation(dfk, rho) - sign * fluct
    return fd.value, rhs, fd.step, {"fd_error": fd.error}


def _t3_fk_alpha(spec, j, l, tol, sign):
    fam = spec.families[j]
    fd = qfdt_lhs_fd(fam, spec, alpha(l), tol=tol)
    rho, _ = build_generalized(spec)
    rhs = -sign * covariance(spec.operators[j], spec.operators[l], rho, tol.compat_tol)
    return fd.value, rhs, fd.step, {"fd_error": fd.error}


# ----------------------------------------------------------------------------
# catalog and dispatch

CATALOG = {
    "T1-ONE-LAMBDA": ("canonical", "<dH/dlambda> = -(1/beta) dlnZ/dlambda |beta", "thermodynamic integration row"),
    "T1-ONE-BETA": ("canonical", "<H> = -dlnZ/dbeta |lambda", "mean energy from Z"),
    "T1-H-LAMBDA": ("canonical", "d<H>/dlambda = <dH/dlambda> - beta Cov(H, dH/dlambda)", ""),
    "T1-H-BETA": ("canonical", "d<H>/dbeta = -Var(H)", "thermodynamic FDT; heat capacity"),
    "T2-ONE-LAMBDA": ("grand-canonical", "<dH/dlambda> = -(1/beta) dlnXi/dlambda |beta,z", "grand potential integration"),
    "T2-ONE-BETA": ("grand-canonical", "<H> = -dlnXi/dbeta |lambda,z", ""),
    "T2-ONE-MU": ("grand-canonical", "<N> = (1/beta) dlnXi/dmu |lambda,beta", ""),
    "T2-H-LAMBDA": ("grand-canonical", "d<H>/dlambda = <dH/dlambda> - beta Cov(H, dH/dlambda)", ""),
    "T2-H-BETA": ("grand-canonical", "d<H>/dbeta |z = -Var(H)", ""),
    "T2-H-MU": ("grand-canonical", "d<H>/dmu = beta Cov(H, N)", ""),
    "T2-N-LAMBDA": ("grand-canonical", "d<N>/dlambda = -beta Cov(N, dH/dlambda)", ""),
    "T2-N-BETA": ("grand-canonical", "d<N>/dbeta |z = -Cov(N, H)", ""),
    "T2-N-MU": ("grand-canonical", "d<N>/dmu = beta Var(N)", "particle-number FDT"),
    "T3-ONE-LAMBDA": ("generalized", "sum_j alpha_j <dF_j/dlambda_k> = -dlnZ/dlambda_k", ""),
    "T3-ONE-ALPHA": ("generalized", "<F_k> = -dlnZ/dalpha_k", ""),
    "T3-FK-LAMBDA": ("generalized", "d<F_k>/dlambda_l = <dF_k/dlambda_l> - sum_j alpha_j Cov(F_k, dF_j/dlambda_l)", ""),
    "T3-FK-ALPHA": ("generalized", "d<F_j>/dalpha_l = -Cov(F_j, F_l)", "MaxEnt Jacobian"),
    "QFDT-GENERIC": ("any", "d<A>/dgamma = <dA/dgamma> + <A dlog(rho)/dgamma>", "compatible A only"),
    "HF-MIXED": ("fixed state", "d<H>/dgamma = <dH/dgamma>", "rho independent of gamma"),
    "HF-PURE": ("eigenstate", "dE_n/dgamma = <n|dH/dgamma|n>", "non-degenerate level"),
}

TABLE1 = [k for k in CATALOG if k.startswith("T1-")]
TABLE2 = [k for k in CATALOG if k.startswith("T2-")]
TABLE3 = [k for k in CATALOG if k.startswith("T3-")]


@dataclass(frozen=True)
class ModelContext:
    """What an identity check needs; unused fields stay ``None``.

    Table 1 uses ``h``, ``beta``, ``lam``; Table 2 adds ``n_op`` and ``mu``;
    Table 3 uses ``spec``.
    """

    h: Optional[OperatorFamily] = None
    beta: Optional[float] = None
    lam: Optional[np.ndarray] = None
    n_op: Optional[np.ndarray] = None
    mu: float = 0.0
    spec: Optional[EnsembleSpec] = None

    def lam_vector(self) -> np.ndarray:
        if self.lam is not None:
            return np.atleast_1d(np.asarray(self.lam, dtype=float))
        return np.zeros(self.h.n_params if self.h is not None else 0)


def _require(ctx: ModelContext, *names):
    missing = [n for n in names if getattr(ctx, n) is None]
    if missing:
        raise ConfigurationError(f"model context lacks {', '.join(missing)}")


def _table1(identity_id, ctx, index, tol, sign):
    _require(ctx, "h", "beta")
    spec = canonical_spec(ctx.h, ctx.beta, ctx.lam_vector())
    beta = ctx.beta
    if identity_id == "T1-ONE-LAMBDA":
        lhs, rhs, h, d = _t3_one_lambda(spec, index, tol, sign, None)
        # sum_j alpha_j <dF_j> with alpha = beta, divided through by beta
        return lhs / beta, rhs / beta, h, d
    if identity_id == "T1-ONE-BETA":
        return _t3_one_alpha(spec, 0, tol, sign, None)
    if identity_id == "T1-H-LAMBDA":
        return _t3_fk_lambda(spec, 0, index, tol, sign)
    if identity_id == "T1-H-BETA":
        return _t3_fk_alpha(spec, 0, 0, tol, sign)
    raise UnknownParameterError(identity_id)


def _table2(identity_id, ctx, index, tol, sign):
    """Grand canonical rows in (beta, mu) coordinates.

    Held fixed: (beta, z) for lambda, (lambda, z) for beta -- so mu moves as
    ln(z)/beta -- and (lambda, beta) for mu.
    """
    _require(ctx, "h", "beta", "n_op")
    h_fam = ctx.h
    beta, mu, lam0 = ctx.beta, ctx.mu, ctx.lam_vector()
    log_fug = beta * mu

    def spec_at(b=beta, m=mu, lv=lam0):
        return grand_canonical_spec(h_fam, ctx.n_op, b, m, lv)

    spec = spec_at()
    rho, _ = build_generalized(spec)
    h_op, n_op = spec.operators

    def mean(op_of_spec, s):
        r, _ = build_generalized(s)
        return expectation(op_of_spec(s), r)

    def along(var, f):
        if var == "lambda":
            x0 = lam0[index]
            hstep = _step(x0, tol)

            def g(x):
                lv = lam0.copy()
                lv[index] = x
                return f(spec_at(lv=lv))
        elif var == "beta":
            x0 = beta
            hstep = _step(x0, tol, positive=True)

            def g(x):
                return f(spec_at(b=x, m=log_fug / x))
        else:
            x0 = mu
            hstep = _step(x0, tol)

            def g(x):
                return f(spec_at(m=x))
        val, err = _richardson(g, x0, hstep)
        return val, err, hstep

    get_h = lambda s: s.operators[0]  # noqa: E731
    get_n = lambda s: s.operators[1]  # noqa: E731
    get_logz = lambda s: build_generalized(s)[1].log_partition  # noqa: E731
    row, var = identity_id.split("-")[1:]
    var = var.lower()

    if row == "ONE":
        d, err, hstep = along(var, get_logz)
        if var == "lambda":
            dh = h_fam.deriv(lam0, index)
            lhs, rhs = expectation(dh, rho), -sign * d / beta
            analytic = -beta * expectation(dh, rho)
        elif var == "beta":
            lhs, rhs = expectation(h_op, rho), -sign * d
            analytic = -expectation(h_op, rho)
        else:
            lhs, rhs = expectation(n_op, rho), sign * d / beta
            analytic = beta * expectation(n_op, rho)
        return lhs, rhs, hstep, {"dlnXi_fd": d, "dlnXi_analytic": analytic, "fd_error": err}

    target = get_h if row == "H" else get_n
    lhs, err, hstep = along(var, lambda s: mean(target, s))
    a = h_op if row == "H" else n_op
    if var == "lambda":
        dh = h_fam.deriv(lam0, index)
        base = expectation(dh, rho) if row == "H" else 0.0
        rhs = base - sign * beta * covariance(a, dh, rho, tol.compat_tol)
    elif var == "beta":
        rhs = -sign * covariance(a, h_op, rho, tol.compat_tol)
    else:
        rhs = sign * beta * covariance(a, n_op, rho, tol.compat_tol)
    return lhs, rhs, hstep, {"fd_error": err}


def _table3(identity_id, ctx, index, index2, tol, sign):
    _require(ctx, "spec")
    spec = ctx.spec
    if identity_id == "T3-ONE-LAMBDA":
        return _t3_one_lambda(spec, index, tol, sign, None)
    if identity_id == "T3-ONE-ALPHA":
        return _t3_one_alpha(spec, index, tol, sign, None)
    if identity_id == "T3-FK-LAMBDA":
        return _t3_fk_lambda(spec, index, index2, tol, sign)
    if identity_id == "T3-FK-ALPHA":
        return _t3_fk_alpha(spec, index, index2, tol, sign)
    raise UnknownParameterError(identity_id)


def check_identity(identity_id: str, ctx: ModelContext, index: int = 0, index2: int = 0,
                   tol: Tolerances = DEFAULT_TOL, flip_sign: bool = False) -> IdentityReport:
    """Evaluate one Table 1/2/3 identity.

    Parameters
    ----------
    identity_id : str
        Key of :data:`CATALOG` (``T1-*``, ``T2-*`` or ``T3-*``).
    ctx : ModelContext
    index, index2 : int
        ``index`` selects lambda_k / F_k (or the lambda for ``*-LAMBDA``
        rows of Tables 1 and 2); ``index2`` is the second index ``l`` of
        the Table 3 second row.
    flip_sign : bool
        Negative control: flips the sign of the fluctuation (or partition
        derivative) term of the right-hand side.
    """
    sign = -1.0 if flip_sign else 1.0
    if identity_id in TABLE1:
        lhs, rhs, h, details = _table1(identity_id, ctx, index, tol, sign)
        params = {"beta": ctx.beta, "lambda": ctx.lam_vector().tolist()}
    elif identity_id in TABLE2:
        lhs, rhs, h, details = _table2(identity_id, ctx, index, tol, sign)
        params = {"beta": ctx.beta, "mu": ctx.mu, "lambda": ctx.lam_vector().tolist()}
    elif identity_id in TABLE3:
        lhs, rhs, h, details = _table3(identity_id, ctx, index, index2, tol, sign)
        params = {"alphas": ctx.spec.alphas.tolist(), "lambda": ctx.spec.lam.tolist()}
    else:
        raise UnknownParameterError(f"unknown identity {identity_id!r}")
    if identity_id.endswith("LAMBDA") or identity_id.startswith("T3"):
        params["index"] = index
    if identity_id.startswith("T3-FK"):
        params["index2"] = index2
    if flip_sign:
        details["flip_sign"] = True
    return make_report(identity_id, lhs, rhs, tol, h, params, details)


# ----------------------------------------------------------------------------
# thermodynamic FDT and Hellmann-Feynman


def heat_capacity(h_family: OperatorFamily, beta: float, lam_=None, k: float = 1.0,
                  tol: Tolerances = DEFAULT_TOL) -> float:
    """``C = Var(H) / (k T^2)`` with ``T = 1/(k beta)``.

    Cross-checked by comparing ``-Var(H)`` with a finite-difference
    ``d<H>/dbeta`` under ``tol``; a mismatch raises
    :class:`NumericalConsistencyError`.
    """
    spec = canonical_spec(h_family, beta, lam_)
    rho, _ = build_generalized(spec)
    var = variance(spec.operators[0], rho)
    fd = param_derivative(_mean_of(h_family), spec, alpha(0), step=_step(beta, tol, positive=True), tol=tol)
    rep = make_report("T1-H-BETA", fd.value, -var, tol, fd.step)
    if not rep.passed:
        raise NumericalConsistencyError(f"heat capacity routes disagree: d<H>/dbeta = {fd.value!r}, -Var(H) = {-var!r}")
    c_var = k * beta**2 * var
    return c_var


def hellmann_feynman_mixed(h_family: OperatorFamily, rho_fixed, index: int = 0, lam_=None,
                           tol: Tolerances = DEFAULT_TOL) -> IdentityReport:
    """``d Tr(H rho)/dgamma`` at fixed ``rho`` against ``<dH/dgamma>``."""
    lam0 = np.zeros(h_family.n_params) if lam_ is None else np.atleast_1d(np.asarray(lam_, dtype=float))
    r = _rho_matrix(rho_fixed)
    x0 = lam0[index]
    h = _step(x0, tol)

    def mean(x):
        lv = lam0.copy()
        lv[index] = x
        return expectation(h_family(lv), r)

    lhs, err = _richardson(mean, x0, h)
    rhs = expectation(h_family.deriv(lam0, index), r)
    return make_report("HF-MIXED", lhs, rhs, tol, h, {"lambda": lam0.tolist(), "index": index}, {"fd_error": err})


DEGENERACY_GAP_TOL = 1e-8


def hellmann_feynman_pure(h_family: OperatorFamily, level: int, index: int = 0, lam_=None,
                          tol: Tolerances = DEFAULT_TOL, gap_tol: float = DEGENERACY_GAP_TOL) -> IdentityReport:
    """``dE_n/dgamma`` against ``<n|dH/dgamma|n>`` for a simple eigenvalue.

    Raises
    ------
    LevelCrossingError
        If level ``n`` comes within ``gap_tol`` of a neighbour, or the
        eigenvector at a stencil point is not continuously connected to the
        central one.
    """
    lam0 = np.zeros(h_family.n_params) if lam_ is None else np.atleast_1d(np.asarray(lam_, dtype=float))
    x0 = lam0[index]
    h = _step(x0, tol)
    center = spectral_decompose(h_family(lam0))
    v0 = center.eigenvectors[:, level]

    def energy(x):
        lv = lam0.copy()
        lv[index] = x
        dec = spectral_decompose(h_family(lv))
        e = dec.eigenvalues
        gaps = [abs(e[level] - e[m]) for m in (level - 1, level + 1) if 0 <= m < len(e)]
        if gaps and min(gaps) <= gap_tol:
            raise LevelCrossingError(f"level {level} degenerate at lambda={x!r} (gap {min(gaps):.3e})")
        overlaps = np.abs(dec.eigenvectors.conj().T @ v0)
        if int(np.argmax(overlaps)) != level:
            raise LevelCrossingError(f"level {level} exchanged with {int(np.argmax(overlaps))} near lambda={x!r}")
        return float(e[level])

    energy(x0)
    lhs, err = _richardson(energy, x0, h)
    dh = h_family.deriv(lam0, index)
    rhs = float(np.real(v0.conj() @ dh @ v0))
    return make_report("HF-PURE", lhs, rhs, tol, h,
                       {"lambda": lam0.tolist(), "index": index, "level": level}, {"fd_error": err})


def standard_observables(h_family: OperatorFamily, n_op=None) -> dict:
    """``I``, ``H``, ``H^2`` and, when given, ``N`` as families over ``h_family``'s parameters."""
    dim = h_family.dim
    obs = {
        "I": identity_family(dim, h_family.n_params),
        "H": h_family,
        "H2": h_family.square("H2"),
    }
    if n_op is not None:
        obs["N"] = OperatorFamily.constant(n_op, h_family.n_params, name="N")
    return obs
