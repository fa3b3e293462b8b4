"""Inverse Ising from independent samples: naive mean-field, TAP, PLM, Boltzmann machine."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .errors import NumericalError, ParameterError
from .model import L_EXACT_MAX, CouplingModel, SampleTable, exact_gibbs_moments
from .stats import MomentSet, sample_moments

log = logging.getLogger(__name__)

METHODS = ("nMF", "TAP", "PLM", "BM", "asyn-nMF", "asyn-TAP", "SHO", "AVE", "KNS")
COND_MAX = 1e12


@dataclass
class InferenceResult:
    theta_star: np.ndarray
    J_star: np.ndarray
    method: str
    hyperparams: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        self.theta_star = np.asarray(self.theta_star, dtype=float)
        self.J_star = np.asarray(self.J_star, dtype=float)
        if self.method not in METHODS:
            raise ParameterError(f"unknown method tag {self.method!r}")
        if not np.all(np.isfinite(self.J_star)):
            raise NumericalError("inferred couplings are not finite", self.diagnostics)

    @property
    def L(self) -> int:
        return self.theta_star.shape[0]

    def as_model(self) -> CouplingModel:
        self_allowed = bool(np.any(np.diag(self.J_star) != 0))
        return CouplingModel(theta=self.theta_star, J=self.J_star, self_allowed=self_allowed,
                             meta={"method": self.method})

    def to_dict(self) -> dict:
        return {
            "L": self.L,
            "theta": self.theta_star.tolist(),
            "J": self.J_star.tolist(),
            "self_allowed": bool(np.any(np.diag(self.J_star) != 0)),
            "meta": {},
            "method": self.method,
            "hyperparams": _jsonable(self.hyperparams),
            "diagnostics": _jsonable(self.diagnostics),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "InferenceResult":
        return cls(theta_star=d["theta"], J_star=d["J"], method=d["method"],
                   hyperparams=d.get("hyperparams", {}), diagnostics=d.get("diagnostics", {}))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def _checked_inverse(c: np.ndarray, what: str = "correlation matrix"):
    cond = float(np.linalg.cond(c))
    if not np.isfinite(cond) or cond > COND_MAX:
        raise NumericalError(
            f"{what} is singular (condition number {cond:.3g}); add a pseudocount",
            {"condition_number": cond})
    return np.linalg.inv(c), cond


def _check_magnetizations(m: np.ndarray):
    if np.any(np.abs(m) >= 1.0):
        bad = np.flatnonzero(np.abs(m) >= 1.0).tolist()
        raise NumericalError(f"|m_i| = 1 for spins {bad}; add a pseudocount",
                             {"frozen_spins": bad})


def infer_nmf(moments: MomentSet) -> InferenceResult:
    """``J* = -(c^-1)`` off the diagonal, ``theta*_i = atanh(m_i) - sum_j J*_ij m_j``."""
    cinv, cond = _checked_inverse(moments.c0)
    _check_magnetizations(moments.m)
    J = -cinv
    np.fill_diagonal(J, 0.0)
    J = (J + J.T) / 2.0
    theta = np.arctanh(moments.m) - J @ moments.m
    return InferenceResult(theta, J, "nMF", {}, {"condition_number": cond})


def _tap_root(m: np.ndarray, rhs: np.ndarray):
    """Solve ``x + 2 m_i m_j x^2 = rhs`` on the branch continuous with ``x = rhs``."""
    a = 2.0 * np.outer(m, m)
    disc = 1.0 + 4.0 * a * rhs
    ok = disc >= 0.0
    root = np.where(ok, 2.0 * rhs / (1.0 + np.sqrt(np.where(ok, disc, 1.0))), rhs)
    return root, ~ok


def infer_tap(moments: MomentSet) -> InferenceResult:
    """TAP couplings from ``J + 2 m_i m_j J^2 = -(c^-1)_ij``.

    Entries with a negative discriminant fall back to the nMF value and are
    listed in ``diagnostics["fallback_entries"]``.
    """
    cinv, cond = _checked_inverse(moments.c0)
    m = moments.m
    _check_magnetizations(m)
    rhs = -cinv
    J, failed = _tap_root(m, rhs)
    np.fill_diagonal(J, 0.0)
    np.fill_diagonal(failed, False)
    J = (J + J.T) / 2.0
    q = 1.0 - m**2
    theta = np.arctanh(m) - J @ m + m * ((J**2) @ q)
    fallback = np.argwhere(failed).tolist()
    return InferenceResult(theta, J, "TAP", {},
                           {"condition_number": cond, "fallback_entries": fallback})


# --- pseudo-likelihood ---------------------------------------------------------

def plm_objective(params: np.ndarray, i: int, states: np.ndarray, w: np.ndarray,
                  lam: float):
    """Average log conditional likelihood of spin ``i`` minus the L2 penalty, and gradient.

    ``params = [theta_i, J_i0, ..., J_i(L-1)]`` with ``J_ii`` ignored (held at 0).
    """
    L = states.shape[1]
    theta = params[0]
    Ji = params[1:].copy()
    Ji[i] = 0.0
    H = theta + states @ Ji
    si = states[:, i]
    # log P(s_i | rest) = s_i H - log(2 cosh H)
    logc = np.logaddexp(H, -H)
    val = w @ (si * H - logc) - lam * (Ji @ Ji + theta * theta)
    r = w * (si - np.tanh(H))
    grad = np.empty(L + 1)
    grad[0] = r.sum() - 2.0 * lam * theta
    grad[1:] = r @ states - 2.0 * lam * Ji
    grad[1 + i] = 0.0
    return val, grad


def infer_plm(table: SampleTable, lam: float | None = None, tol: float = 1e-6,
              max_iter: int = 10_000) -> InferenceResult:
    """Pseudo-likelihood maximization with L2 penalty, one problem per spin.

    Each concave per-spin problem is solved by L-BFGS to gradient norm ``tol``;
    the two estimates of every coupling are averaged.
    """
    if table.N < 1:
        raise ParameterError("empty sample table")
    if lam is None:
        lam = 0.01 / table.N
    if lam < 0:
        raise ParameterError("regularization strength must be >= 0")
    L = table.L
    states = table.states.astype(float)
    w = table.normalized_weights()
    rows = np.zeros((L, L))
    theta = np.zeros(L)
    grad_norms, iters, unconverged = [], [], []
    for i in range(L):
        def fun(x, i=i):
            v, g = plm_objective(x, i, states, w, lam)
            return -v, -g
        res = minimize(fun, np.zeros(L + 1), jac=True, method="L-BFGS-B",
                       options={"maxiter": max_iter, "gtol": tol * 1e-3, "ftol": 1e-15,
                                "maxcor": 30})
        _, g = plm_objective(res.x, i, states, w, lam)
        gn = float(np.linalg.norm(g))
        if gn > tol:
            res2 = _newton_polish(res.x, i, states, w, lam, tol)
            _, g = plm_objective(res2, i, states, w, lam)
            if np.linalg.norm(g) < gn:
                res.x, gn = res2, float(np.linalg.norm(g))
        theta[i] = res.x[0]
        rows[i] = res.x[1:]
        rows[i, i] = 0.0
        grad_norms.append(gn)
        iters.append(int(res.nit))
        if gn > tol:
            unconverged.append(i)
    J = (rows + rows.T) / 2.0
    diagnostics = {"gradient_norms": grad_norms, "iterations": iters,
                   "unconverged_spins": unconverged, "converged": not unconverged}
    return InferenceResult(theta, J, "PLM", {"lambda": lam, "tol": tol}, diagnostics)


def _newton_polish(x, i, states, w, lam, tol, steps=20):
    L = states.shape[1]
    X = np.column_stack([np.ones(states.shape[0]), states])
    keep = np.ones(L + 1, dtype=bool)
    keep[1 + i] = False
    x = x.copy()
    for _ in range(steps):
        val, g = plm_objective(x, i, states, w, lam)
        if np.linalg.norm(g) <= tol * 1e-3:
            break
        H = X @ np.where(keep, x, 0.0)
        q = w * (1.0 - np.tanh(H) ** 2)
        Xk = X[:, keep]
        hess = -(Xk * q[:, None]).T @ Xk - 2.0 * lam * np.eye(keep.sum())
        step = np.linalg.solve(hess, g[keep])
        x[keep] -= step
    return x


# --- Boltzmann machine -------------------------------------------------------

def infer_bm(data, eta: float = 0.5, max_sweeps: int = 200_000, tol: float = 1e-6,
             theta0=None, J0=None, L_max: int = L_EXACT_MAX) -> InferenceResult:
    """Boltzmann-machine learning with exact model averages.

    ``data`` is a ``SampleTable`` or a ``MomentSet``. Each sweep updates
    ``theta += eta (m_data - m_model)`` and ``J += eta (<ss>_data - <ss>_model)``
    until the largest moment mismatch is at most ``tol``.
    """
    moments = data if isinstance(data, MomentSet) else sample_moments(data)
    L = moments.L
    if L > L_max:
        raise ParameterError(f"Boltzmann machine uses exact enumeration; L <= {L_max}")
    if not eta > 0:
        raise ParameterError("learning rate must be positive")
    m_d = moments.m
    s_d = moments.second
    theta = np.zeros(L) if theta0 is None else np.array(theta0, dtype=float)
    J = np.zeros((L, L)) if J0 is None else np.array(J0, dtype=float)
    off = ~np.eye(L, dtype=bool)
    best = np.inf
    growing = 0
    mismatch = np.inf
    sweep = 0
    for sweep in range(1, max_sweeps + 1):
        m_m, c_m, _ = exact_gibbs_moments(CouplingModel(theta, J), L_max)
        s_m = c_m + np.outer(m_m, m_m)
        dm = m_d - m_m
        ds = np.where(off, s_d - s_m, 0.0)
        mismatch = float(max(np.max(np.abs(dm)), np.max(np.abs(ds))))
        if mismatch <= tol:
            break
        # divergence: no new best mismatch for 100 consecutive sweeps
        growing = growing + 1 if mismatch > best else 0
        best = min(best, mismatch)
        if growing >= 100 or not np.isfinite(mismatch):
            raise NumericalError(
                f"Boltzmann machine diverging (mismatch {mismatch:.3g}); use a smaller eta",
                {"sweeps": sweep, "mismatch": mismatch})
        theta = theta + eta * dm
        J = J + eta * ds
        J = (J + J.T) / 2.0
    converged = mismatch <= tol
    if not converged:
        log.warning("BM stopped after %d sweeps with mismatch %.3g", sweep, mismatch)
    return InferenceResult(theta, J, "BM", {"eta": eta, "tol": tol, "max_sweeps": max_sweeps},
                           {"sweeps": sweep, "mismatch": mismatch, "converged": converged})
