"""Asynchronous Glauber dynamics: Gillespie, discrete-time schemes, master equation."""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import _kernels
from .errors import CapacityError, ParameterError
from .model import CouplingModel, SampleTable, all_states

log = logging.getLogger(__name__)

SCHEMES = ("gillespie", "per-spin-bernoulli", "random-pick")
L_MASTER_MAX = 12
_CHUNK = 1 << 20


@dataclass
class SpinTrajectory:
    """Event-list record of an asynchronous path.

    ``times[e]`` is the time of the ``e``-th flip and ``spins[e]`` the flipped
    spin. The state is right-continuous: at an event time it already holds the
    new value.
    """

    L: int
    gamma: float
    t_end: float
    initial: np.ndarray
    times: np.ndarray
    spins: np.ndarray
    scheme: str = "gillespie"
    seed: int | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.initial = np.asarray(self.initial, dtype=np.int8).reshape(-1)
        self.times = np.asarray(self.times, dtype=np.float64).reshape(-1)
        self.spins = np.asarray(self.spins, dtype=np.int32).reshape(-1)
        if self.initial.shape[0] != self.L:
            raise ParameterError("initial configuration length differs from L")
        if not np.all(np.abs(self.initial) == 1):
            raise ParameterError("initial configuration must be +-1")
        if self.times.shape != self.spins.shape:
            raise ParameterError("times and spins differ in length")
        if self.times.size:
            if np.any(np.diff(self.times) < 0):
                raise ParameterError("event times must be nondecreasing")
            if self.times[0] <= 0 or self.times[-1] > self.t_end:
                raise ParameterError("event times must lie in (0, t_end]")
            if self.spins.min() < 0 or self.spins.max() >= self.L:
                raise ParameterError("spin index out of range")

    @property
    def n_events(self) -> int:
        return int(self.times.size)

    def final_state(self) -> np.ndarray:
        counts = np.bincount(self.spins, minlength=self.L)
        return (self.initial * np.where(counts % 2 == 1, -1, 1)).astype(np.int8)

    def state_at(self, t) -> np.ndarray:
        """Configurations at the given times (rows)."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        out = np.empty((t.size, self.L), dtype=np.int8)
        order = np.argsort(self.spins, kind="stable")
        bounds = np.searchsorted(self.spins[order], np.arange(self.L + 1))
        for i in range(self.L):
            ti = self.times[order[bounds[i]:bounds[i + 1]]]
            n = np.searchsorted(ti, t, side="right")
            out[:, i] = self.initial[i] * np.where(n % 2 == 1, -1, 1)
        return out

    def window(self, t0: float = 0.0):
        """``(state at t0, times, spins)`` for the events in ``(t0, t_end]``."""
        if not 0.0 <= t0 < self.t_end:
            raise ParameterError(f"window start {t0} outside [0, {self.t_end})")
        k = int(np.searchsorted(self.times, t0, side="right"))
        s0 = self.state_at(t0)[0] if k else self.initial.copy()
        return s0, self.times[k:], self.spins[k:]


@dataclass
class DistributionState:
    p: np.ndarray
    time: float
    L: int

    def magnetizations(self) -> np.ndarray:
        return self.p @ all_states(self.L).astype(float)

    def correlations(self) -> np.ndarray:
        s = all_states(self.L).astype(float)
        m = self.p @ s
        return (s * self.p[:, None]).T @ s - np.outer(m, m)


def rate(model: CouplingModel, config, i: int, gamma: float = 1.0) -> float:
    """Glauber flip rate ``gamma/2 [1 - s_i tanh(H_i)]`` of spin ``i``."""
    s = np.asarray(config, dtype=float)
    if not 0 <= i < model.L:
        raise ParameterError(f"spin index {i} out of range")
    h = model.theta[i] + model.J[i] @ s
    return float(_kernels._rate(float(gamma), float(s[i]), float(h)))


def _initial(model: CouplingModel, initial, rng) -> np.ndarray:
    if initial is None:
        return np.where(rng.random(model.L) < 0.5, -1, 1).astype(np.int8)
    s = np.asarray(initial, dtype=np.int8).reshape(-1)
    if s.shape[0] != model.L or not np.all(np.abs(s) == 1):
        raise ParameterError("initial configuration must be a +-1 vector of length L")
    return s.copy()


def simulate_gillespie(model: CouplingModel, gamma: float = 1.0, t_end: float = 1.0,
                       initial=None, seed: int = 0) -> SpinTrajectory:
    """Exact event-driven simulation of the Glauber master equation."""
    if not t_end > 0:
        raise ParameterError("t_end must be positive")
    if not gamma > 0:
        raise ParameterError("gamma must be positive")
    rng = np.random.default_rng(seed)
    s = _initial(model, initial, rng)
    s_init = s.copy()
    H = model.theta + model.J @ s.astype(float)
    J = np.ascontiguousarray(model.J)
    expected = gamma * model.L * t_end / 2.0
    cap = int(min(max(expected * 1.2 + 10.0 * np.sqrt(expected) + 1024, 1024), 1 << 26))
    times_parts, spins_parts = [], []
    t = 0.0
    counter = np.zeros(1, dtype=np.int64)
    u = rng.random(_CHUNK)
    pos = 0
    while True:
        tbuf = np.empty(cap)
        sbuf = np.empty(cap, dtype=np.int32)
        n, used, t, status = _kernels.gillespie_chunk(
            J, model.theta, float(gamma), s, H, t, float(t_end), u[pos:], tbuf, sbuf, counter)
        pos += used
        times_parts.append(tbuf[:n])
        spins_parts.append(sbuf[:n])
        if status == 0:
            break
        if status == 1:
            u = rng.random(_CHUNK)
            pos = 0
    times = np.concatenate(times_parts)
    spins = np.concatenate(spins_parts)
    log.debug("gillespie: %d events up to t=%g", times.size, t_end)
    return SpinTrajectory(L=model.L, gamma=float(gamma), t_end=float(t_end), initial=s_init,
                          times=times, spins=spins, scheme="gillespie", seed=seed)


def simulate_discrete(model: CouplingModel, gamma: float, dt: float, n_steps: int,
                      initial=None, seed: int = 0,
                      scheme: str = "random-pick") -> SpinTrajectory:
    """Fixed-step simulation.

    ``per-spin-bernoulli`` flips every spin independently with probability
    ``omega_i dt`` (requires ``gamma dt <= 0.1``; simultaneous flips share a
    timestamp). ``random-pick`` updates one uniformly chosen spin per step by
    heat bath with probability ``gamma L dt`` (requires ``gamma L dt <= 1``).
    """
    if scheme not in ("per-spin-bernoulli", "random-pick"):
        raise ParameterError(f"unknown discrete scheme {scheme!r}")
    if not (dt > 0 and gamma > 0) or int(n_steps) != n_steps or n_steps < 1:
        raise ParameterError("need dt > 0, gamma > 0 and a positive integer n_steps")
    n_steps = int(n_steps)
    if scheme == "per-spin-bernoulli":
        if gamma * dt > 0.1:
            raise ParameterError(f"gamma*dt = {gamma * dt:g} exceeds 0.1")
        if gamma * dt > 0.01:
            warnings.warn(f"gamma*dt = {gamma * dt:g} > 0.01; discretization bias may be visible",
                          stacklevel=2)
        per_step = model.L
        kernel = _kernels.bernoulli_chunk
    else:
        if gamma * model.L * dt > 1.0 + 1e-12:
            raise ParameterError(f"gamma*L*dt = {gamma * model.L * dt:g} exceeds 1")
        per_step = 3
        kernel = _kernels.random_pick_chunk
    rng = np.random.default_rng(seed)
    s = _initial(model, initial, rng)
    s_init = s.copy()
    H = model.theta + model.J @ s.astype(float)
    J = np.ascontiguousarray(model.J)
    block = max(1, _CHUNK // per_step)
    times_parts, spins_parts = [], []
    step0 = 0
    while step0 < n_steps:
        nb = min(block, n_steps - step0)
        u = rng.random(nb * per_step)
        cap = nb * (model.L if scheme == "per-spin-bernoulli" else 1)
        tbuf = np.empty(cap)
        sbuf = np.empty(cap, dtype=np.int32)
        n = kernel(J, model.theta, float(gamma), float(dt), s, H, step0, nb, u, tbuf, sbuf)
        times_parts.append(tbuf[:n])
        spins_parts.append(sbuf[:n])
        step0 += nb
    return SpinTrajectory(L=model.L, gamma=float(gamma), t_end=n_steps * float(dt),
                          initial=s_init, times=np.concatenate(times_parts),
                          spins=np.concatenate(spins_parts), scheme=scheme, seed=seed,
                          meta={"dt": float(dt), "n_steps": n_steps})


def master_generator(model: CouplingModel, gamma: float = 1.0) -> sp.csr_matrix:
    """Sparse generator ``W`` with ``dp/dt = W p`` over the ``2**L`` states."""
    L = model.L
    states = all_states(L).astype(float)
    H = states @ model.J.T + model.theta
    x = 2.0 * states * H
    rates = gamma * np.exp(-np.logaddexp(0.0, x))
    idx = np.arange(2**L)
    rows, cols, vals = [], [], []
    for i in range(L):
        rows.append(idx ^ (1 << i))
        cols.append(idx)
        vals.append(rates[:, i])
    rows.append(idx)
    cols.append(idx)
    vals.append(-rates.sum(axis=1))
    W = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(2**L, 2**L))
    return W.tocsr()


# Dormand-Prince 5(4) tableau
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])


def _project(p: np.ndarray) -> np.ndarray:
    p = np.where(p < 0.0, 0.0, p)
    return p / p.sum()


def integrate_master_equation(model: CouplingModel, gamma: float, t_end: float,
                              initial_distribution, atol: float = 1e-10,
                              L_max: int = L_MASTER_MAX) -> DistributionState:
    """Integrate the master equation with adaptive Dormand-Prince steps.

    The local error estimate is kept below ``atol`` (max-norm) and the
    probability vector is projected back onto the simplex after every step.
    """
    if model.L > L_max:
        raise CapacityError(f"master equation limited to L <= {L_max}, got {model.L}")
    if t_end < 0:
        raise ParameterError("t_end must be nonnegative")
    p = np.asarray(initial_distribution, dtype=float).reshape(-1)
    if p.shape[0] != 2**model.L or np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
        raise ParameterError("initial distribution must be a probability vector of length 2**L")
    p = _project(p)
    W = master_generator(model, gamma)
    t = 0.0
    h = min(0.1 / (gamma * model.L), t_end) if t_end > 0 else 0.0
    k = np.empty((7, p.size))
    k[0] = W @ p
    while t < t_end:
        h = min(h, t_end - t)
        for s in range(1, 7):
            y = p + h * (np.asarray(_A[s]) @ k[:s])
            k[s] = W @ y
        y5 = p + h * (_B5 @ k)
        err = h * np.max(np.abs((_B5 - _B4) @ k))
        if err <= atol or h < 1e-14:
            t += h
            p = _project(y5)
            k[0] = W @ p
        factor = 0.9 * (atol / err) ** 0.2 if err > 0 else 5.0
        h *= min(5.0, max(0.2, factor))
    return DistributionState(p=p, time=float(t_end), L=model.L)


def sample_snapshots(traj: SpinTrajectory, burn_in: float, interval: float,
                     n_samples: int) -> SampleTable:
    """Configurations read at times ``burn_in + k * interval``, ``k = 0..n_samples-1``."""
    if not interval > 0:
        raise ParameterError("interval must be positive")
    if n_samples < 1 or burn_in < 0:
        raise ParameterError("need n_samples >= 1 and burn_in >= 0")
    if burn_in + n_samples * interval > traj.t_end * (1 + 1e-12):
        raise ParameterError(
            f"trajectory too short: burn_in + n_samples*interval = "
            f"{burn_in + n_samples * interval:g} > t_end = {traj.t_end:g}")
    t = burn_in + interval * np.arange(n_samples)
    return SampleTable(states=traj.state_at(t))
