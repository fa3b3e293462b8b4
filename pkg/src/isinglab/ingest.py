"""Binarization of recorded data into +-1 spin grids.

Spike trains map to ``s_i = +1`` for a random memory period after each spike;
trade-volume series map to ``+1`` in windows whose volume reaches a threshold.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError
from .model import SampleTable
from .stats import GridEvents, MomentSet, pack_states

_TOL = 1e-9


@dataclass
class SpikeTrain:
    """Spike times (seconds) per unit over a recording ``[0, length]``."""

    times: list
    length: float
    units: list | None = None

    def __post_init__(self):
        self.times = [np.asarray(t, dtype=float) for t in self.times]
        if self.units is None:
            self.units = list(range(len(self.times)))
        if self.length <= 0:
            raise ParameterError("recording length must be positive")
        for u, t in zip(self.units, self.times):
            if t.size and (np.any(np.diff(t) < 0) or t[0] < 0 or t[-1] > self.length):
                raise ParameterError(f"spike times of unit {u} must be sorted within [0, length]")

    @property
    def n_units(self) -> int:
        return len(self.times)


@dataclass
class VolumeSeries:
    """Time-stamped trade volumes per instrument over ``[start, end]``."""

    times: list
    volumes: list
    start: float
    end: float
    instruments: list | None = None

    def __post_init__(self):
        self.times = [np.asarray(t, dtype=float) for t in self.times]
        self.volumes = [np.asarray(v, dtype=float) for v in self.volumes]
        if self.instruments is None:
            self.instruments = list(range(len(self.times)))
        if not self.end > self.start:
            raise ParameterError("series end must exceed its start")
        for name, t, v in zip(self.instruments, self.times, self.volumes):
            if t.shape != v.shape:
                raise ParameterError(f"instrument {name}: times and volumes differ in length")
            if np.any(v < 0):
                raise ParameterError(f"instrument {name}: volumes must be >= 0")
            if t.size and (np.any(np.diff(t) < 0) or t[0] < self.start or t[-1] > self.end):
                raise ParameterError(f"instrument {name}: times must be sorted within the series")

    @property
    def n_instruments(self) -> int:
        return len(self.times)

    def average_rates(self) -> np.ndarray:
        """``V_av``: volume per second over the whole series."""
        return np.array([v.sum() for v in self.volumes]) / (self.end - self.start)


@dataclass
class BinaryGrid:
    """+-1 states on a regular time grid (rows are time points)."""

    states: np.ndarray
    dt: float
    t0: float = 0.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=np.int8)
        if self.states.ndim != 2 or not np.all(np.abs(self.states) == 1):
            raise ParameterError("grid states must be a 2-d array of +-1")
        if not self.dt > 0:
            raise ParameterError("dt must be positive")

    @property
    def L(self) -> int:
        return self.states.shape[1]

    @property
    def n_points(self) -> int:
        return self.states.shape[0]

    def sample_table(self) -> SampleTable:
        return SampleTable(self.states.copy())

    def grid_events(self, gamma: float) -> GridEvents:
        """Run-length form consumed by SHO learning."""
        if self.n_points < 2:
            raise ParameterError("need at least two grid points")
        change = np.flatnonzero(np.any(self.states[1:] != self.states[:-1], axis=1)) + 1
        starts = np.concatenate([[0], change])
        counts = np.diff(np.concatenate([starts, [self.n_points]]))
        n_raw = int(np.sum(self.states[1:] != self.states[:-1]))
        return GridEvents(L=self.L, gamma=gamma, dt=self.dt, t0=self.t0,
                          packed=pack_states(self.states[starts]), counts=counts,
                          n_events_raw=n_raw, refinements=0)

    def moments(self) -> MomentSet:
        """Equal-time moments and the zero-lag slope from grid increments.

        ``dC_ij(0) ~ sum_k (s_i(k+1) - s_i(k)) s_j(k) / T``, the grid analogue of
        the event sum used for continuous-time paths.
        """
        if self.n_points < 2:
            raise ParameterError("need at least two grid points")
        s = self.states.astype(float)
        m = s.mean(axis=0)
        second = s.T @ s / s.shape[0]
        c0 = second - np.outer(m, m)
        T = (self.n_points - 1) * self.dt
        ds = s[1:] - s[:-1]
        dC0 = ds.T @ s[:-1] / T
        dm = ds.sum(axis=0) / T
        meta = {"source": "grid", "dt": self.dt, "n_points": self.n_points,
                "derivative": "grid-increments"}
        return MomentSet(m=m, c0=(c0 + c0.T) / 2.0, dC0=dC0, dm=dm, meta=meta)


def binarize_spikes(trains: SpikeTrain, gamma: float, dt: float, seed: int = 0) -> BinaryGrid:
    """``s_i(t) = +1`` on ``[t_f, min(t_{f+1}, t_f + X))``, ``X ~ Exp(mean 1/gamma)`` per spike.

    The grid holds the state at times ``k dt`` for ``k dt < length``. Memory
    periods are drawn unit by unit in spike order and returned in
    ``meta["memories"]``.
    """
    if not dt > 0 or not gamma > 0:
        raise ParameterError("dt and gamma must be positive")
    K = int(np.floor(trains.length / dt * (1.0 - _TOL))) + 1
    rng = np.random.default_rng(seed)
    states = -np.ones((K, trains.n_units), dtype=np.int8)
    memories = []
    for u, t in enumerate(trains.times):
        X = rng.exponential(1.0 / gamma, size=t.size)
        memories.append(X.tolist())
        if t.size == 0:
            continue
        ends = np.minimum(np.append(t[1:], np.inf), t + X)
        # first/last grid index with k dt in [start, end)
        lo = np.ceil(t / dt - _TOL).astype(np.int64)
        hi = np.ceil(ends / dt - _TOL).astype(np.int64)
        lo = np.clip(lo, 0, K)
        hi = np.clip(hi, 0, K)
        diff = np.zeros(K + 1, dtype=np.int64)
        np.add.at(diff, lo, 1)
        np.add.at(diff, hi, -1)
        states[np.cumsum(diff[:K]) > 0, u] = 1
    return BinaryGrid(states, dt, 0.0, {"source": "spikes", "gamma": gamma, "seed": seed,
                                       "units": list(trains.units), "memories": memories})


def _window_sums(t, v, starts, width):
    cs = np.concatenate([[0.0], np.cumsum(v)])
    lo = np.searchsorted(t, starts, side="left")
    hi = np.searchsorted(t, starts + width, side="left")
    return cs[hi] - cs[lo]


def binarize_volumes(series: VolumeSeries, window: float, chi: float, shift: float = 1.0,
                     segments=None) -> BinaryGrid:
    """``+1`` iff the volume in ``[t, t + window)`` is at least ``chi V_av window``.

    Windows start every ``shift`` seconds and must end inside the series (or
    inside each of the optional ``segments``). ``meta["truncated"]`` is set when
    trailing data could not start a full window.
    """
    if not shift > 0 or window < shift:
        raise ParameterError("need window >= shift > 0")
    if not chi > 0:
        raise ParameterError("chi must be positive")
    segments = [(series.start, series.end)] if segments is None else list(segments)
    thresholds = chi * series.average_rates() * window
    blocks, seg_starts, truncated = [], [], False
    for a, b in segments:
        if not (series.start <= a < b <= series.end):
            raise ParameterError(f"segment ({a}, {b}) outside the series")
        n = int(np.floor((b - a - window) / shift * (1.0 + _TOL) + _TOL)) + 1 if b - a >= window else 0
        if n <= 0:
            truncated = True
            continue
        if a + (n - 1) * shift + window < b - _TOL * shift:
            truncated = True
        starts = a + shift * np.arange(n)
        cols = []
        for t, v, th in zip(series.times, series.volumes, thresholds):
            sums = _window_sums(t, v, starts, window)
            # an empty window is never active, even when the threshold is zero
            cols.append(np.where((sums >= th * (1.0 - 1e-12)) & (sums > 0), 1, -1))
        seg_starts.append(sum(x.shape[0] for x in blocks))
        blocks.append(np.stack(cols, axis=1).astype(np.int8))
    L = series.n_instruments
    states = np.concatenate(blocks) if blocks else np.empty((0, L), dtype=np.int8)
    return BinaryGrid(states, shift, segments[0][0],
                      {"source": "volumes", "window": window, "chi": chi, "shift": shift,
                       "truncated": truncated, "segment_offsets": seg_starts,
                       "instruments": list(series.instruments)})


def read_spikes_csv(path, length: float | None = None) -> SpikeTrain:
    """Read ``unit_id,time_s`` rows (header required). Units are ordered by id."""
    rows = _read_csv(path, ("unit_id", "time_s"))
    by_unit: dict = {}
    for r in rows:
        by_unit.setdefault(r["unit_id"], []).append(float(r["time_s"]))
    units = sorted(by_unit, key=_id_key)
    times = [sorted(by_unit[u]) for u in units]
    if length is None:
        length = max((t[-1] for t in times if t), default=0.0)
    return SpikeTrain(times, length, units)


def read_volumes_csv(path, start: float | None = None, end: float | None = None) -> VolumeSeries:
    """Read ``instrument_id,time_s,volume`` rows (header required)."""
    rows = _read_csv(path, ("instrument_id", "time_s", "volume"))
    by_inst: dict = {}
    for r in rows:
        by_inst.setdefault(r["instrument_id"], []).append((float(r["time_s"]), float(r["volume"])))
    insts = sorted(by_inst, key=_id_key)
    times, vols = [], []
    for i in insts:
        pairs = sorted(by_inst[i])
        times.append([p[0] for p in pairs])
        vols.append([p[1] for p in pairs])
    all_t = [x for t in times for x in t]
    if not all_t and (start is None or end is None):
        raise ParameterError("empty volume file; give start and end")
    start = min(all_t) if start is None else start
    end = max(all_t) if end is None else end
    return VolumeSeries(times, vols, start, end, insts)


def _id_key(x: str):
    return (0, int(x), "") if x.lstrip("-").isdigit() else (1, 0, x)


def _read_csv(path, columns):
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or any(c not in reader.fieldnames for c in columns):
            raise ParameterError(f"{path}: expected header with columns {','.join(columns)}")
        return [{c: r[c].strip() for c in columns} for r in reader]
