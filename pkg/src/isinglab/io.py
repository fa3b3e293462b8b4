"""File formats.

* JSON documents (models, inference results, moments, reports, manifests).
* Trajectory: one JSON header line, then ``time,spin_index`` CSV rows.
* Sample/grid table: one JSON header line, then one ``+``/``-`` string per row.
* Population snapshots: one JSON header line, then one line per snapshot,
  ``generation genome genome ...`` with genomes as ``+``/``-`` strings.

Floats in CSV are written with 17 significant digits.
"""
from __future__ import annotations

import io as _io
import json
from pathlib import Path

import numpy as np

from .dynamics import SpinTrajectory
from .equilibrium import InferenceResult, _jsonable
from .errors import ParameterError
from .ingest import BinaryGrid
from .model import CouplingModel, SampleTable
from .popgen import PopulationSnapshot
from .stats import MomentSet

TRAJ_FORMAT = "isinglab-trajectory"
TABLE_FORMAT = "isinglab-samples"
GRID_FORMAT = "isinglab-grid"
SNAP_FORMAT = "isinglab-snapshots"


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(_jsonable(obj), indent=2) + "\n")


def read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise ParameterError(f"no such file: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ParameterError(f"{path}: invalid JSON ({exc})") from exc


def read_model(path) -> CouplingModel:
    """A model file, or the model part of an inference-result file."""
    d = read_json(path)
    try:
        return CouplingModel.from_dict(d)
    except KeyError as exc:
        raise ParameterError(f"{path}: missing key {exc}") from exc


def read_result(path) -> InferenceResult:
    d = read_json(path)
    if "method" not in d:
        raise ParameterError(f"{path}: not an inference result")
    return InferenceResult.from_dict(d)


def read_moments(path) -> MomentSet:
    d = read_json(path)
    try:
        return MomentSet.from_dict(d)
    except KeyError as exc:
        raise ParameterError(f"{path}: missing key {exc}") from exc


def _header(fh, expected: str, path) -> dict:
    line = fh.readline()
    try:
        head = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ParameterError(f"{path}: first line must be a JSON header") from exc
    if head.get("format") != expected:
        raise ParameterError(f"{path}: expected format {expected!r}, got {head.get('format')!r}")
    return head


def write_trajectory(path, traj: SpinTrajectory) -> None:
    head = {"format": TRAJ_FORMAT, "L": traj.L, "gamma": traj.gamma, "t_end": traj.t_end,
            "initial": _rows_to_text(traj.initial[None, :]).strip(), "scheme": traj.scheme,
            "seed": traj.seed, "meta": traj.meta}
    with open(path, "w") as fh:
        fh.write(json.dumps(_jsonable(head)) + "\n")
        fh.write("time,spin_index\n")
        if traj.n_events:
            buf = _io.StringIO()
            np.savetxt(buf, np.column_stack([traj.times, traj.spins.astype(float)]),
                       fmt=["%.17g", "%d"], delimiter=",")
            fh.write(buf.getvalue())


def read_trajectory(path) -> SpinTrajectory:
    with open(path) as fh:
        head = _header(fh, TRAJ_FORMAT, path)
        if fh.readline().strip() != "time,spin_index":
            raise ParameterError(f"{path}: missing 'time,spin_index' column header")
        body = fh.read()
    data = (np.loadtxt(_io.StringIO(body), delimiter=",", ndmin=2, dtype=float)
            if body.strip() else np.zeros((0, 2)))
    times = data[:, 0] if data.size else np.zeros(0)
    spins = data[:, 1].astype(np.int64) if data.size else np.zeros(0, dtype=np.int64)
    init = head["initial"]
    init = _text_to_rows([init], head["L"], path)[0] if isinstance(init, str) else init
    return SpinTrajectory(L=head["L"], gamma=head["gamma"], t_end=head["t_end"],
                          initial=np.asarray(init, dtype=np.int8), times=times,
                          spins=spins, scheme=head.get("scheme", "gillespie"),
                          seed=head.get("seed"), meta=head.get("meta", {}))


def _rows_to_text(states: np.ndarray) -> str:
    chars = np.where(states > 0, ord("+"), ord("-")).astype(np.uint8)
    nl = np.full((chars.shape[0], 1), ord("\n"), dtype=np.uint8)
    return np.hstack([chars, nl]).tobytes().decode("ascii")


def _text_to_rows(lines: list[str], L: int, path) -> np.ndarray:
    lines = [ln.strip() for ln in lines if ln.strip()]
    if not lines:
        return np.zeros((0, L), dtype=np.int8)
    if any(len(ln) != L for ln in lines):
        raise ParameterError(f"{path}: every row must have {L} characters")
    raw = np.frombuffer("".join(lines).encode("ascii"), dtype=np.uint8).reshape(len(lines), L)
    if not np.all((raw == ord("+")) | (raw == ord("-"))):
        raise ParameterError(f"{path}: rows may only contain '+' and '-'")
    return np.where(raw == ord("+"), 1, -1).astype(np.int8)


def write_samples(path, table: SampleTable, meta: dict | None = None) -> None:
    head = {"format": TABLE_FORMAT, "L": table.L, "N": table.N,
            "weights": None if table.weights is None else table.weights.tolist(),
            "meta": meta or {}}
    with open(path, "w") as fh:
        fh.write(json.dumps(_jsonable(head)) + "\n")
        fh.write(_rows_to_text(table.states))


def read_samples(path) -> SampleTable:
    """A sample table; grid files are accepted too (rows become samples)."""
    with open(path) as fh:
        first = fh.readline()
        fh.seek(0)
        fmt = json.loads(first).get("format") if first.startswith("{") else None
        if fmt == GRID_FORMAT:
            return read_grid(path).sample_table()
        head = _header(fh, TABLE_FORMAT, path)
        states = _text_to_rows(fh.readlines(), head["L"], path)
    return SampleTable(states, head.get("weights"))


def write_grid(path, grid: BinaryGrid) -> None:
    head = {"format": GRID_FORMAT, "L": grid.L, "n_points": grid.n_points, "dt": grid.dt,
            "t0": grid.t0, "meta": grid.meta}
    with open(path, "w") as fh:
        fh.write(json.dumps(_jsonable(head)) + "\n")
        fh.write(_rows_to_text(grid.states))


def read_grid(path) -> BinaryGrid:
    with open(path) as fh:
        head = _header(fh, GRID_FORMAT, path)
        states = _text_to_rows(fh.readlines(), head["L"], path)
    return BinaryGrid(states, head["dt"], head.get("t0", 0.0), head.get("meta", {}))


def write_snapshots(path, snaps: list[PopulationSnapshot], params: dict) -> None:
    with open(path, "w") as fh:
        fh.write(json.dumps(_jsonable({"format": SNAP_FORMAT, **params})) + "\n")
        for s in snaps:
            genomes = _rows_to_text(s.genomes).split()
            fh.write(f"{s.generation} " + " ".join(genomes) + "\n")


def read_snapshots(path) -> tuple[list[PopulationSnapshot], dict]:
    snaps = []
    with open(path) as fh:
        head = _header(fh, SNAP_FORMAT, path)
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            L = len(parts[1]) if len(parts) > 1 else 0
            snaps.append(PopulationSnapshot(int(parts[0]), _text_to_rows(parts[1:], L, path)))
    head.pop("format")
    return snaps, head


def write_lagged_csv(path, moments: MomentSet) -> None:
    """``lag,i,j,C`` rows, one per lag and matrix entry."""
    if moments.C_lags is None:
        raise ParameterError("moments carry no lagged correlations")
    with open(path, "w") as fh:
        fh.write("lag,i,j,C\n")
        L = moments.L
        for tau, C in zip(moments.lags, moments.C_lags):
            for i in range(L):
                for j in range(L):
                    fh.write(f"{tau:.17g},{i},{j},{C[i, j]:.17g}\n")
