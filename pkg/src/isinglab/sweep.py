"""Reconstruction-error sweeps for kinetic inference (MSE versus one parameter).

A cell generates an SK model, simulates a Glauber trajectory, runs the
selected methods and scores them by MSE. Data length counts single-spin
update attempts: ``n`` updates at rate ``gamma`` per spin span
``t_end = n / (gamma L)``.
"""
from __future__ import annotations

import csv
import logging
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from ._parallel import ordered_map
from .dynamics import simulate_gillespie
from .errors import IsingLabError, ParameterError
from .kinetic import infer_asyn_nmf, infer_asyn_tap, infer_ave, infer_sho
from .metrics import mse
from .model import CouplingModel, SKParams, generate_sk
from .stats import flip_decompose, trajectory_moments

log = logging.getLogger(__name__)

AXES = ("data-length", "size", "field", "g")
SWEEP_METHODS = ("nmf", "tap", "sho", "ave")
UPDATES_PER_SPIN = 5e5


@dataclass
class PipelineConfig:
    """One point of a sweep."""

    L: int = 20
    g: float = 0.3
    k: float = 1.0
    theta: float = 0.0
    n_updates: float = 1e7
    gamma: float = 1.0
    burn_in: float = 10.0
    sho_dt: float = 1e-3
    methods: tuple = SWEEP_METHODS
    model_seed: int = 0
    sim_seed: int = 0

    def __post_init__(self):
        bad = [m for m in self.methods if m not in SWEEP_METHODS]
        if bad:
            raise ParameterError(f"unknown sweep methods {bad}")
        if self.n_updates <= 0 or self.gamma <= 0:
            raise ParameterError("n_updates and gamma must be positive")

    @property
    def t_end(self) -> float:
        return self.burn_in + self.n_updates / (self.gamma * self.L)


def pipeline_model(cfg: PipelineConfig) -> CouplingModel:
    base = generate_sk(SKParams(L=cfg.L, g=cfg.g, k=cfg.k, seed=cfg.model_seed))
    return CouplingModel(np.full(cfg.L, float(cfg.theta)), base.J, meta=base.meta)


def run_pipeline(cfg: PipelineConfig) -> dict:
    """MSE of every requested method on one simulated trajectory.

    Returns ``{"mse": {method: value}, "errors": {method: message}, "seconds": {...}}``.
    """
    model = pipeline_model(cfg)
    traj = simulate_gillespie(model, cfg.gamma, cfg.t_end, seed=cfg.sim_seed)
    moments = trajectory_moments(traj, burn_in=cfg.burn_in)
    out = {"mse": {}, "errors": {}, "seconds": {}, "n_events": traj.n_events}
    runners = {
        "nmf": lambda: infer_asyn_nmf(moments, cfg.gamma),
        "tap": lambda: infer_asyn_tap(moments, "cubic", cfg.gamma),
        "sho": lambda: infer_sho(flip_decompose(traj, cfg.sho_dt / cfg.gamma, cfg.burn_in)),
        "ave": lambda: infer_ave(moments, traj, cfg.gamma, burn_in=cfg.burn_in),
    }
    for method in cfg.methods:
        t0 = time.perf_counter()
        try:
            res = runners[method]()
            out["mse"][method] = mse(model.J, res.J_star)
        except IsingLabError as exc:
            out["errors"][method] = str(exc)
            log.warning("method %s failed: %s", method, exc)
        out["seconds"][method] = time.perf_counter() - t0
    return out


def replica_seed(seed: int, index: int) -> int:
    """Seed of cell/replica ``index`` from one ``SeedSequence([seed, index])`` stream."""
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


@dataclass
class SweepConfig:
    axis: str
    values: list
    base: PipelineConfig = field(default_factory=PipelineConfig)
    replicas: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.axis not in AXES:
            raise ParameterError(f"sweep axis must be one of {AXES}")
        if self.replicas < 1:
            raise ParameterError("replicas must be >= 1")
        if not self.values:
            raise ParameterError("sweep needs at least one value")

    def cells(self) -> list[PipelineConfig]:
        """Configs in cell order (value-major, replica-minor)."""
        out = []
        for a, v in enumerate(self.values):
            for rep in range(self.replicas):
                idx = a * self.replicas + rep
                s = replica_seed(self.seed, idx)
                cfg = replace(self.base, model_seed=s, sim_seed=s + 1)
                if self.axis == "data-length":
                    cfg = replace(cfg, n_updates=float(v))
                elif self.axis == "size":
                    cfg = replace(cfg, L=int(v), n_updates=UPDATES_PER_SPIN * int(v))
                elif self.axis == "field":
                    cfg = replace(cfg, theta=float(v))
                else:
                    cfg = replace(cfg, g=float(v))
                out.append(cfg)
        return out


@dataclass
class SweepRow:
    value: float
    method: str
    mse_mean: float
    mse_stderr: float
    n_ok: int
    n_failed: int


def run_sweep(sc: SweepConfig, workers: int | None = None) -> tuple[list[SweepRow], list[dict]]:
    """Run every cell; returns aggregated rows and the per-cell results."""
    cells = sc.cells()
    results = ordered_map(run_pipeline, cells, workers)
    rows = []
    for a, v in enumerate(sc.values):
        chunk = results[a * sc.replicas:(a + 1) * sc.replicas]
        for method in sc.base.methods:
            vals = np.array([r["mse"][method] for r in chunk if method in r["mse"]])
            n = vals.size
            mean = float(vals.mean()) if n else float("nan")
            se = float(vals.std(ddof=1) / np.sqrt(n)) if n > 1 else float("nan")
            rows.append(SweepRow(float(v), method, mean, se, n, len(chunk) - n))
    per_cell = [{"cell": i, "config": asdict(c), **r} for i, (c, r) in enumerate(zip(cells, results))]
    return rows, per_cell


def write_sweep_csv(path, axis: str, rows: list[SweepRow]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([axis, "method", "mse_mean", "mse_stderr", "n_ok", "n_failed"])
        for r in rows:
            w.writerow([f"{r.value:.17g}", r.method, f"{r.mse_mean:.17g}",
                        f"{r.mse_stderr:.17g}", r.n_ok, r.n_failed])


def loglog_slope(x, y) -> float:
    """Least-squares slope of ``log y`` against ``log x``."""
    return float(np.polyfit(np.log(np.asarray(x, float)), np.log(np.asarray(y, float)), 1)[0])
