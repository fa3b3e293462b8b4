"""Inference of asynchronous kinetic Ising models from trajectories.

Mean-field routes (asyn-nMF, asyn-TAP) use equal-time correlations and their
slope at zero lag. The likelihood routes (SHO on the discretized history, AVE
on time averages) optimize over all couplings including self-couplings.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq, minimize
from scipy.special import expit, log_expit

from . import _kernels
from .dynamics import SpinTrajectory
from .equilibrium import InferenceResult, _check_magnetizations, _checked_inverse
from .errors import NumericalError, ParameterError
from .stats import GridEvents, MomentSet, unique_rows, unpack_states

log = logging.getLogger(__name__)

CUBIC_BOUND = 4.0 / 27.0
_ROWS = 1 << 17


@dataclass
class KineticMatrices:
    A: np.ndarray
    D: np.ndarray
    V: np.ndarray
    F: np.ndarray | None = None


def kinetic_matrices(moments: MomentSet, gamma: float = 1.0) -> KineticMatrices:
    """``A = diag(1 - m^2)``, ``D = C(0) + dC(0)/gamma``, ``V = D C(0)^-1``."""
    if moments.dC0 is None:
        raise ParameterError("moments lack the zero-lag slope dC0; use trajectory_moments")
    cinv, _ = _checked_inverse(moments.c0)
    D = moments.c0 + moments.dC0 / gamma
    return KineticMatrices(A=np.diag(1.0 - moments.m**2), D=D, V=D @ cinv)


def _symmetrized(J):
    J = (J + J.T) / 2.0
    np.fill_diagonal(J, 0.0)
    return J


def infer_asyn_nmf(moments: MomentSet, gamma: float = 1.0,
                   symmetrize: bool = False) -> InferenceResult:
    """``J* = A^-1 D C^-1`` with self-couplings kept unless ``symmetrize``."""
    _check_magnetizations(moments.m)
    cinv, cond = _checked_inverse(moments.c0)
    q = 1.0 - moments.m**2
    D = moments.c0 + moments.dC0 / gamma if moments.dC0 is not None else None
    if D is None:
        raise ParameterError("moments lack the zero-lag slope dC0; use trajectory_moments")
    J = (D @ cinv) / q[:, None]
    if symmetrize:
        J = _symmetrized(J)
    theta = np.arctanh(moments.m) - J @ moments.m
    return InferenceResult(theta, J, "asyn-nMF", {"gamma": gamma, "symmetrize": symmetrize},
                           {"condition_number": cond})


def _cubic_root(b: float) -> float:
    """Smallest nonnegative root of ``F (1 - F)^2 = b`` for ``0 <= b <= 4/27``."""
    if b <= 0.0:
        return 0.0
    f = lambda x: x * (1.0 - x) ** 2 - b
    x = brentq(f, 0.0, 1.0 / 3.0, xtol=1e-16, rtol=4 * np.finfo(float).eps, maxiter=200)
    for _ in range(3):
        d = (1.0 - x) * (1.0 - 3.0 * x)
        if d == 0.0:
            break
        x_new = x - f(x) / d
        if abs(f(x_new)) > abs(f(x)):
            break
        x = x_new
    return x


def infer_asyn_tap(moments: MomentSet, mode: str = "cubic", gamma: float = 1.0,
                   max_iters: int = 10_000, tol: float = 1e-13) -> InferenceResult:
    """Dynamic TAP couplings ``J = V / ((1 - m_i^2)(1 - F_i))``.

    ``cubic`` solves ``F_i (1 - F_i)^2 = b_i`` row by row with
    ``b_i = sum_j V_ij^2 (1 - m_j^2) / (1 - m_i^2)``; rows with ``b_i > 4/27`` keep
    the nMF value and are flagged. ``iterative`` runs ``J <- A(J)^-1 D C^-1`` from
    the nMF solution.
    """
    if mode not in ("cubic", "iterative"):
        raise ParameterError(f"unknown asyn-TAP mode {mode!r}")
    _check_magnetizations(moments.m)
    km = kinetic_matrices(moments, gamma)
    m = moments.m
    q = 1.0 - m**2
    V = km.V
    J_nmf = V / q[:, None]
    diagnostics = {"mode": mode}
    if mode == "cubic":
        b = (V**2 @ q) / q
        F = np.zeros_like(b)
        flagged = []
        for i, bi in enumerate(b):
            if bi > CUBIC_BOUND:
                flagged.append(i)
            else:
                F[i] = _cubic_root(float(bi))
        J = J_nmf / (1.0 - F)[:, None]
        residual = np.abs(F * (1.0 - F) ** 2 - b)
        residual[flagged] = 0.0
        diagnostics.update({"F": F.tolist(), "b": b.tolist(), "fallback_rows": flagged,
                            "max_cubic_residual": float(residual.max(initial=0.0))})
    else:
        # F_i depends on row i only, so rows without a fixed point (b_i > 4/27)
        # are held at the nMF value and flagged, as in cubic mode
        b = (V**2 @ q) / q
        flagged = np.flatnonzero(b > CUBIC_BOUND).tolist()
        active = b <= CUBIC_BOUND
        J = J_nmf.copy()
        change = 0.0
        it = 0
        for it in range(1, max_iters + 1):
            F = np.where(active, q * ((J**2) @ q), 0.0)
            J_new = V / (q * (1.0 - F))[:, None]
            change = float(np.max(np.abs(J_new - J), initial=0.0))
            J = J_new
            if change <= tol:
                break
        F = np.where(active, q * ((J**2) @ q), 0.0)
        diagnostics.update({"F": F.tolist(), "b": b.tolist(), "fallback_rows": flagged,
                            "iterations": it, "final_change": change,
                            "converged": change <= tol})
    offdiag_sq = (J**2) @ q - np.diag(J) ** 2 * q
    theta = np.arctanh(m) - J @ m + m * offdiag_sq
    return InferenceResult(theta, J, "asyn-TAP", {"gamma": gamma, "mode": mode, "tol": tol},
                           diagnostics)


# --- likelihood learning ------------------------------------------------------

def _split(x, L):
    return x[:L], x[L:].reshape(L, L)


def _ascent(fun_grad, x0, optimizer, eta, max_epochs, tol):
    """Maximize a concave-ish objective. Returns ``(x, value, grad_norm, epochs)``."""
    if optimizer == "lbfgs":
        res = minimize(lambda x: tuple(-v for v in fun_grad(x)), x0, jac=True,
                       method="L-BFGS-B",
                       options={"maxiter": max_epochs, "gtol": tol / np.sqrt(x0.size), "ftol": 0.0,
                                "maxcor": 20})
        val, g = fun_grad(res.x)
        return res.x, float(val), float(np.linalg.norm(g)), int(res.nit)
    if optimizer == "gd":
        x = x0.copy()
        val, g = fun_grad(x)
        norms = []
        epoch = 0
        for epoch in range(1, max_epochs + 1):
            gn = float(np.linalg.norm(g))
            norms.append(gn)
            if gn <= tol:
                break
            if len(norms) > 100 and all(a < b for a, b in zip(norms[-101:-1], norms[-100:])):
                raise NumericalError("learning diverges; use a smaller learning rate",
                                     {"epochs": epoch, "gradient_norm": gn})
            x = x + eta * g
            val, g = fun_grad(x)
        return x, float(val), float(np.linalg.norm(g)), epoch
    raise ParameterError(f"unknown optimizer {optimizer!r}")


@dataclass
class SHOData:
    """Discretized history aggregated by distinct grid-point configuration."""

    S: np.ndarray        # U x L, +-1 as float
    W_noflip: np.ndarray  # U x L counts of no-flip transitions
    W_flip: np.ndarray    # U x L counts of flip transitions
    gamma_dt: float
    n_steps: int
    dt: float


def sho_data(grid: GridEvents, gamma: float | None = None) -> SHOData:
    gamma = grid.gamma if gamma is None else gamma
    R, L = grid.packed.shape[0], grid.L
    uniq, inv = unique_rows(grid.packed)
    U = uniq.shape[0]
    flips = np.zeros((R, L))
    if R > 1:
        flips[:-1] = grid.flip_mask()
    noflip = (grid.counts - 1)[:, None].astype(float) + np.zeros((R, L))
    noflip[:-1] += 1.0 - flips[:-1]
    W_nf = np.zeros((U, L))
    W_f = np.zeros((U, L))
    for i in range(L):
        W_nf[:, i] = np.bincount(inv, weights=noflip[:, i], minlength=U)
        W_f[:, i] = np.bincount(inv, weights=flips[:, i], minlength=U)
    S = unpack_states(uniq, L).astype(float)
    return SHOData(S=S, W_noflip=W_nf, W_flip=W_f, gamma_dt=gamma * grid.dt,
                   n_steps=grid.n_steps, dt=grid.dt)


def sho_loglik(theta: np.ndarray, J: np.ndarray, data: SHOData):
    """Discretized history log-likelihood and its exact gradient.

    Each transition of spin i contributes
    ``log[(1 - g dt) delta(s', s) + g dt exp(s' H) / (2 cosh H)]``. Returns
    ``(value, grad_theta, grad_J)``.
    """
    gdt = data.gamma_dt
    L = theta.shape[0]
    val = 0.0
    g_theta = np.zeros(L)
    g_J = np.zeros((L, L))
    log_gdt = np.log(gdt)
    for a in range(0, data.S.shape[0], _ROWS):
        S = data.S[a:a + _ROWS]
        Wn = data.W_noflip[a:a + _ROWS]
        Wf = data.W_flip[a:a + _ROWS]
        H = S @ J.T + theta
        x = 2.0 * S * H
        sp = expit(x)        # sigma(2 s H)
        sm = expit(-x)       # sigma(-2 s H): flip probability factor
        stay = 1.0 - gdt * sm
        val += np.sum(Wn * np.log1p(-gdt * sm)) + np.sum(Wf * (log_gdt + log_expit(-x)))
        G = Wn * (gdt * 2.0 * S * sp * sm / stay) - Wf * (2.0 * S * sp)
        g_theta += G.sum(axis=0)
        g_J += G.T @ S
    return val, g_theta, g_J


def infer_sho(grid: GridEvents, gamma: float | None = None, eta: float = 1.0,
              max_epochs: int = 5000, tol: float = 1e-6, optimizer: str = "lbfgs",
              init: InferenceResult | None = None, data: SHOData | None = None) -> InferenceResult:
    """Maximize the discretized history likelihood (spin-history-only learning).

    The objective is normalized per unit of observed time, so ``eta`` and
    ``tol`` do not depend on the grid step.
    """
    gamma = grid.gamma if gamma is None else gamma
    if gamma * grid.dt > 0.1:
        raise ParameterError("gamma*dt inconsistent with the grid (exceeds 0.1)")
    data = sho_data(grid, gamma) if data is None else data
    L = grid.L
    scale = 1.0 / (gamma * data.n_steps * data.dt)

    def fg(x):
        th, J = _split(x, L)
        v, gt, gJ = sho_loglik(th, J, data)
        return v * scale, np.concatenate([gt, gJ.ravel()]) * scale

    x0 = np.zeros(L + L * L)
    if init is not None:
        x0 = np.concatenate([init.theta_star, init.J_star.ravel()])
    x, val, gn, epochs = _ascent(fg, x0, optimizer, eta, max_epochs, tol)
    theta, J = _split(x, L)
    diagnostics = {"gradient_norm": gn, "epochs": epochs, "objective": val,
                   "converged": gn <= tol, "distinct_configs": int(data.S.shape[0]),
                   "grid_refinements": grid.refinements}
    hyper = {"gamma": gamma, "dt": grid.dt, "eta": eta, "tol": tol, "optimizer": optimizer}
    return InferenceResult(theta, J.copy(), "SHO", hyper, diagnostics)


@dataclass
class PathAverages:
    """Distinct configurations visited by a path and their time fractions."""

    S: np.ndarray
    w: np.ndarray


def path_averages(traj: SpinTrajectory, burn_in: float = 0.0) -> PathAverages:
    s0, times, spins = traj.window(burn_in)
    packed = _kernels.path_segments(s0, spins, (traj.L + 7) // 8)
    edges = np.concatenate([[burn_in], times, [traj.t_end]])
    durations = np.diff(edges)
    uniq, inv = unique_rows(packed)
    w = np.bincount(inv, weights=durations, minlength=uniq.shape[0])
    return PathAverages(S=unpack_states(uniq, traj.L).astype(float), w=w / w.sum())


def ave_objective(theta, J, targets_theta, targets_J, avg: PathAverages):
    """``sum_ij J_ij a_ij + sum_i theta_i a_i0 - <log cosh H_i>`` and its gradient.

    Its gradient is the AVE update ``a_ij - <tanh(H_i) s_j>``.
    """
    val = float(theta @ targets_theta + np.sum(J * targets_J))
    g_theta = targets_theta.copy()
    g_J = targets_J.copy()
    for a in range(0, avg.S.shape[0], _ROWS):
        S = avg.S[a:a + _ROWS]
        w = avg.w[a:a + _ROWS]
        H = S @ J.T + theta
        val -= float(w @ (np.logaddexp(H, -H) - np.log(2.0)).sum(axis=1))
        T = np.tanh(H) * w[:, None]
        g_theta -= T.sum(axis=0)
        g_J -= T.T @ S
    return val, g_theta, g_J


def ave_targets(moments: MomentSet, gamma: float = 1.0):
    """``a_ij = dC_ij(0)/gamma + <s_i s_j>`` and ``a_i0 = dm_i/gamma + m_i``."""
    if moments.dC0 is None:
        raise ParameterError("AVE needs the zero-lag slope dC0")
    dm = moments.dm if moments.dm is not None else np.zeros(moments.L)
    return dm / gamma + moments.m, moments.dC0 / gamma + moments.second


def infer_ave(moments: MomentSet, traj: SpinTrajectory, gamma: float | None = None,
              eta: float = 1.0, max_epochs: int = 5000, tol: float = 1e-6,
              optimizer: str = "lbfgs", burn_in: float | None = None,
              avg: PathAverages | None = None) -> InferenceResult:
    """AVE learning: drive ``dC(0)/gamma + <s_i s_j> - <tanh(H_i) s_j>`` to zero.

    ``<tanh(H_i) s_j>`` is re-evaluated exactly on the piecewise-constant path
    for the current parameters at every epoch.
    """
    gamma = traj.gamma if gamma is None else gamma
    if burn_in is None:
        burn_in = float(moments.meta.get("burn_in", 0.0))
    avg = path_averages(traj, burn_in) if avg is None else avg
    a0, A = ave_targets(moments, gamma)
    L = traj.L

    def fg(x):
        th, J = _split(x, L)
        v, gt, gJ = ave_objective(th, J, a0, A, avg)
        return v, np.concatenate([gt, gJ.ravel()])

    x, val, gn, epochs = _ascent(fg, np.zeros(L + L * L), optimizer, eta, max_epochs, tol)
    theta, J = _split(x, L)
    diagnostics = {"update_norm": gn, "epochs": epochs, "objective": val,
                   "converged": gn <= tol, "distinct_configs": int(avg.S.shape[0])}
    hyper = {"gamma": gamma, "eta": eta, "tol": tol, "optimizer": optimizer,
             "burn_in": burn_in}
    return InferenceResult(theta, J.copy(), "AVE", hyper, diagnostics)
