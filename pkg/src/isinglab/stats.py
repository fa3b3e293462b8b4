"""Sufficient statistics from sample tables and event-list trajectories."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .dynamics import SpinTrajectory
from .errors import NumericalError, ParameterError
from .model import SampleTable

DERIVATIVE_METHODS = ("events", "linear-fit", "two-point")


@dataclass
class MomentSet:
    """Means, equal-time and lagged connected correlations.

    ``dC0[i, j]`` is the slope at ``tau = 0+`` of ``C_ij(tau) = <s_i(t+tau) s_j(t)> - m_i m_j``
    (spin ``i`` at the later time). ``dm`` is the matching slope for the
    means, which vanishes in a stationary state.
    """

    m: np.ndarray
    c0: np.ndarray
    lags: np.ndarray = field(default_factory=lambda: np.zeros(0))
    C_lags: np.ndarray | None = None
    dC0: np.ndarray | None = None
    dm: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.m = np.asarray(self.m, dtype=float)
        self.c0 = np.asarray(self.c0, dtype=float)
        self.lags = np.asarray(self.lags, dtype=float).reshape(-1)
        if self.C_lags is not None:
            self.C_lags = np.asarray(self.C_lags, dtype=float)
        if self.dC0 is not None:
            self.dC0 = np.asarray(self.dC0, dtype=float)
        if self.dm is not None:
            self.dm = np.asarray(self.dm, dtype=float)

    @property
    def L(self) -> int:
        return self.m.shape[0]

    @property
    def second(self) -> np.ndarray:
        """Raw equal-time moments ``<s_i s_j>``."""
        return self.c0 + np.outer(self.m, self.m)

    def to_dict(self) -> dict:
        d = {"L": self.L, "m": self.m.tolist(), "c0": self.c0.tolist(),
             "lags": self.lags.tolist(), "meta": dict(self.meta)}
        for name in ("C_lags", "dC0", "dm"):
            v = getattr(self, name)
            d[name] = None if v is None else v.tolist()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "MomentSet":
        opt = {k: (None if d.get(k) is None else np.asarray(d[k], dtype=float))
               for k in ("C_lags", "dC0", "dm")}
        return cls(m=d["m"], c0=d["c0"], lags=d.get("lags", []), meta=d.get("meta", {}), **opt)


def sample_moments(table: SampleTable, pseudocount: float = 0.0) -> MomentSet:
    """Means and connected correlations of a (weighted) sample table.

    A pseudocount ``lam`` mixes the empirical moments with those of the uniform
    distribution: ``m -> (1-lam) m`` and ``<s_i s_j> -> (1-lam) <s_i s_j>`` off the
    diagonal.
    """
    if table.weights is None and table.N < 2:
        raise ParameterError("need at least two samples")
    if not 0.0 <= pseudocount <= 1.0:
        raise ParameterError("pseudocount must lie in [0, 1]")
    w = table.normalized_weights()
    s = table.states.astype(float)
    m = w @ s
    second = (s * w[:, None]).T @ s
    m = (1.0 - pseudocount) * m
    second = (1.0 - pseudocount) * second
    np.fill_diagonal(second, 1.0)
    c0 = second - np.outer(m, m)
    c0 = (c0 + c0.T) / 2.0
    meta = {"source": "samples", "N": table.N, "pseudocount": pseudocount,
            "weighted": table.weights is not None}
    return MomentSet(m=m, c0=c0, meta=meta)


def estimate_dC0(lags, C_lags, method: str = "linear-fit", fit_points=None) -> np.ndarray:
    """Slope of ``C(tau)`` at zero from lagged correlation matrices.

    ``two-point`` uses ``(C(tau_1) - C(0)) / tau_1`` with the first positive lag;
    ``linear-fit`` is the least-squares slope over ``fit_points`` (default: all lags).
    """
    lags = np.asarray(lags, dtype=float).reshape(-1)
    C_lags = np.asarray(C_lags, dtype=float)
    if C_lags.ndim != 3 or C_lags.shape[0] != lags.size:
        raise ParameterError("C_lags must have one matrix per lag")
    if method == "two-point":
        zero = np.flatnonzero(lags == 0)
        pos = np.flatnonzero(lags > 0)
        if zero.size == 0 or pos.size == 0:
            raise ParameterError("two-point derivative needs lag 0 and a positive lag")
        k = pos[np.argmin(lags[pos])]
        return (C_lags[k] - C_lags[zero[0]]) / lags[k]
    if method == "linear-fit":
        if fit_points is None:
            idx = np.arange(lags.size)
        else:
            idx = []
            for p in np.asarray(fit_points, dtype=float).reshape(-1):
                hit = np.flatnonzero(np.isclose(lags, p, rtol=1e-12, atol=1e-15))
                if hit.size == 0:
                    raise ParameterError(f"fit point {p} is not on the lag grid")
                idx.append(hit[0])
            idx = np.asarray(idx)
        if idx.size < 2:
            raise ParameterError("linear fit needs at least two lags")
        x = lags[idx] - lags[idx].mean()
        y = C_lags[idx]
        return np.tensordot(x, y - y.mean(axis=0), axes=(0, 0)) / (x @ x)
    raise ParameterError(f"unknown derivative method {method!r}")


def default_fit_lags(gamma: float = 1.0, n: int = 4, span: float = 0.6) -> np.ndarray:
    """``n`` equally spaced lags spanning ``[0, span / gamma]``."""
    return np.linspace(0.0, span / gamma, n)


def trajectory_moments(traj: SpinTrajectory, lags=(0.0,), burn_in: float = 0.0,
                       derivative: str = "events", fit_points=None) -> MomentSet:
    """Stationary time averages of an event-list trajectory.

    Means and lagged correlations are exact integrals over the piecewise-constant
    path on ``[burn_in, t_end]``. The slope ``dC0`` is computed from the flip
    events themselves (``derivative="events"``: each flip of spin i contributes
    its jump times the current ``s_j``) or by fitting the lagged correlations.
    """
    if derivative not in DERIVATIVE_METHODS:
        raise ParameterError(f"unknown derivative method {derivative!r}")
    lags = np.unique(np.concatenate([[0.0], np.asarray(lags, dtype=float).reshape(-1)]))
    if derivative != "events" and lags.size < 2:
        lags = np.unique(np.concatenate([lags, default_fit_lags(traj.gamma)]))
    if np.any(lags < 0):
        raise ParameterError("lags must be nonnegative")
    T = traj.t_end - burn_in
    if not T > lags.max():
        raise ParameterError(
            f"trajectory window {T:g} shorter than the largest lag {lags.max():g}")
    s0, times, spins = traj.window(burn_in)
    m = _kernels.time_integrals(s0, times, spins, burn_in, traj.t_end) / T
    C = np.empty((lags.size, traj.L, traj.L))
    for k, tau in enumerate(lags):
        P = _kernels.lagged_products(s0, times, spins, burn_in, traj.t_end, tau)
        C[k] = P / (T - tau) - np.outer(m, m)
    c0 = (C[0] + C[0].T) / 2.0
    C[0] = c0
    if derivative == "events":
        D = _kernels.flip_jumps(s0, times, spins) / T
        dC0, dm = D[:, :traj.L], D[:, traj.L]
    else:
        dC0 = estimate_dC0(lags, C, derivative, fit_points)
        dm = np.zeros(traj.L)
    meta = {"source": "trajectory", "T": T, "burn_in": burn_in, "gamma": traj.gamma,
            "n_events": int(times.size), "derivative": derivative}
    return MomentSet(m=m, c0=c0, lags=lags, C_lags=C, dC0=dC0, dm=dm, meta=meta)


def batch_standard_errors(traj: SpinTrajectory, burn_in: float = 0.0, n_batches: int = 50):
    """Batch-means standard errors of the time-averaged ``m`` and ``c0``."""
    T = traj.t_end - burn_in
    edges = burn_in + T * np.arange(n_batches + 1) / n_batches
    ms, cs = [], []
    for a, b in zip(edges[:-1], edges[1:]):
        sub = _restrict(traj, a, b)
        mom = trajectory_moments(sub, burn_in=0.0)
        ms.append(mom.m)
        cs.append(mom.c0)
    ms, cs = np.array(ms), np.array(cs)
    return ms.std(axis=0, ddof=1) / np.sqrt(n_batches), cs.std(axis=0, ddof=1) / np.sqrt(n_batches)


def _restrict(traj: SpinTrajectory, a: float, b: float) -> SpinTrajectory:
    """The piece of ``traj`` on ``[a, b]``, shifted to start at time zero."""
    s0, times, spins = traj.window(a)
    keep = times <= b
    return SpinTrajectory(L=traj.L, gamma=traj.gamma, t_end=b - a, initial=s0,
                          times=times[keep] - a, spins=spins[keep], scheme=traj.scheme)


# --- grid view ---------------------------------------------------------------

def pack_states(states: np.ndarray) -> np.ndarray:
    """Pack +-1 rows into bytes (bit i of the row set when spin i is +1)."""
    bits = (np.asarray(states) > 0).astype(np.uint8)
    return np.packbits(bits, axis=1, bitorder="little")


def unpack_states(packed: np.ndarray, L: int) -> np.ndarray:
    bits = np.unpackbits(packed, axis=1, bitorder="little", count=L)
    return (2 * bits.astype(np.int8) - 1)


def unique_rows(packed: np.ndarray):
    """Unique packed rows and the inverse index, using integer keys when possible."""
    nbytes = packed.shape[1]
    if nbytes <= 8:
        pad = np.zeros((packed.shape[0], 8), dtype=np.uint8)
        pad[:, :nbytes] = packed
        keys = pad.view(np.uint64).reshape(-1)
        uk, inv = np.unique(keys, return_inverse=True)
        up = uk.view(np.uint8).reshape(-1, 8)[:, :nbytes]
        return np.ascontiguousarray(up), inv.reshape(-1)
    view = np.ascontiguousarray(packed).view(np.dtype((np.void, nbytes))).reshape(-1)
    uv, inv = np.unique(view, return_inverse=True)
    return uv.view(np.uint8).reshape(-1, nbytes), inv.reshape(-1)


@dataclass
class GridEvents:
    """Trajectory read on the regular grid ``t0 + k dt``, ``k = 0..K``.

    Consecutive grid points with identical states are stored once
    (``packed[r]`` with multiplicity ``counts[r]``). The transition from the last
    point of run ``r`` to the first point of run ``r + 1`` carries the flips.
    """

    L: int
    gamma: float
    dt: float
    t0: float
    packed: np.ndarray
    counts: np.ndarray
    n_events_raw: int = 0
    refinements: int = 0

    @property
    def n_points(self) -> int:
        return int(self.counts.sum())

    @property
    def n_steps(self) -> int:
        return self.n_points - 1

    def configs(self) -> np.ndarray:
        return unpack_states(self.packed, self.L)

    def flip_mask(self) -> np.ndarray:
        """``mask[r, i]`` true when spin i flips on the exit transition of run ``r``."""
        diff = self.packed[:-1] ^ self.packed[1:]
        return np.unpackbits(diff, axis=1, bitorder="little", count=self.L).astype(bool)

    def flip_records(self):
        """``(cell, spin, s_before, s_after)`` arrays, one entry per flip record."""
        mask = self.flip_mask()
        runs, spins = np.nonzero(mask)
        cells = np.cumsum(self.counts)[runs] - 1
        conf = self.configs()
        before = conf[runs, spins]
        return cells, spins, before, -before

    @property
    def n_flip_records(self) -> int:
        return int(self.flip_mask().sum())

    @property
    def n_noflip_records(self) -> int:
        return self.n_steps * self.L - self.n_flip_records


def flip_decompose(traj: SpinTrajectory, dt: float, burn_in: float = 0.0,
                   max_refine: int = 30) -> GridEvents:
    """Discretize a trajectory on a grid of step ``dt`` for SHO learning.

    If some spin flips twice inside one grid cell the step is halved and the
    grid rebuilt, at most ``max_refine`` times.
    """
    if not dt > 0:
        raise ParameterError("dt must be positive")
    if traj.gamma * dt > 0.1:
        raise ParameterError(f"gamma*dt = {traj.gamma * dt:g} exceeds 0.1")
    s0, times, spins = traj.window(burn_in)
    T = traj.t_end - burn_in
    rel = times - burn_in
    order = np.argsort(spins, kind="stable")
    for refinement in range(max_refine + 1):
        K = int(np.floor(T / dt * (1 + 1e-12)))
        if K < 1:
            raise ParameterError("grid step longer than the trajectory window")
        cells = np.ceil(rel / dt).astype(np.int64) - 1
        cells = np.maximum(cells, 0)
        cs = cells[order]
        same_spin = spins[order][1:] == spins[order][:-1]
        if not np.any(same_spin & (cs[1:] == cs[:-1])):
            break
        dt /= 2.0
    else:
        raise NumericalError(
            f"grid too coarse: double flips persist after {max_refine} refinements",
            {"dt": dt})
    keep = cells < K
    nbytes = (traj.L + 7) // 8
    packed, counts = _kernels.grid_runs(s0, spins[keep], cells[keep], K, nbytes)
    return GridEvents(L=traj.L, gamma=traj.gamma, dt=dt, t0=burn_in, packed=packed,
                      counts=counts, n_events_raw=int(keep.sum()), refinements=refinement)
