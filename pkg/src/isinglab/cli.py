"""Command-line interface.

Every command that writes an output file also writes ``<output>.manifest.json``
recording the full argument vector and resolved configuration;
``isinglab rerun <manifest>`` repeats the run. Exit codes: 0 success,
2 parameter error, 3 numerical failure (diagnostics JSON still written).
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import io as fio
from .dynamics import (integrate_master_equation, sample_snapshots, simulate_discrete,
                       simulate_gillespie)
from .equilibrium import infer_bm, infer_nmf, infer_plm, infer_tap
from .errors import CapacityError, DomainError, NumericalError, ParameterError
from .ingest import binarize_spikes, binarize_volumes, read_spikes_csv, read_volumes_csv
from .kinetic import infer_asyn_nmf, infer_asyn_tap, infer_ave, infer_sho
from .metrics import evaluate, write_scatter_csv
from .model import CouplingModel, SKParams, generate_sk, gibbs_sample_table
from .popgen import (PRESETS, EvolutionParams, FitnessParams, evolve, infer_fitness_kns,
                     phase_diagram, random_fitness, relative_rmse)
from .stats import DERIVATIVE_METHODS, flip_decompose, sample_moments, trajectory_moments
from .sweep import AXES, SWEEP_METHODS, PipelineConfig, SweepConfig, run_sweep, write_sweep_csv

log = logging.getLogger("isinglab")

INFER_METHODS = ("nmf", "tap", "plm", "bm", "asyn-nmf", "asyn-tap", "sho", "ave")


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


# --- gen / simulate ---------------------------------------------------------

def cmd_gen(args):
    model = generate_sk(SKParams(L=args.L, g=args.g, k=args.k, seed=args.seed))
    if args.theta_range:
        rng = np.random.default_rng([args.seed, 1])
        theta = rng.uniform(-args.theta_range, args.theta_range, args.L)
    else:
        theta = np.full(args.L, args.theta)
    model = CouplingModel(theta, model.J, meta=model.meta)
    fio.write_json(args.output, model.to_dict())
    return [args.output]


def cmd_simulate(args):
    model = fio.read_model(args.model)
    initial = None
    if args.initial:
        initial = [1 if c == "+" else -1 for c in args.initial]
    if args.scheme == "master":
        if args.initial_distribution == "uniform":
            p0 = np.full(2**model.L, 2.0**-model.L)
        else:
            if initial is None:
                raise ParameterError("--initial-distribution point needs --initial")
            code = sum(1 << i for i, s in enumerate(initial) if s > 0)
            p0 = np.zeros(2**model.L)
            p0[code] = 1.0
        state = integrate_master_equation(model, args.gamma, args.t_end, p0, atol=args.atol)
        fio.write_json(args.output, {"time": state.time, "L": state.L, "p": state.p.tolist(),
                                     "m": state.magnetizations().tolist(),
                                     "c": state.correlations().tolist()})
        return [args.output]
    if args.scheme == "exact-gibbs":
        fio.write_samples(args.output, gibbs_sample_table(model), {"source": "exact-gibbs"})
        return [args.output]
    t_end = args.t_end
    if args.n_updates is not None:
        t_end = args.n_updates / (args.gamma * model.L)
    if t_end is None:
        raise ParameterError("give --t-end or --n-updates")
    if args.scheme == "gillespie":
        traj = simulate_gillespie(model, args.gamma, t_end, initial, args.seed)
    else:
        if args.dt is None:
            raise ParameterError(f"scheme {args.scheme} needs --dt")
        n_steps = int(round(t_end / args.dt))
        traj = simulate_discrete(model, args.gamma, args.dt, n_steps, initial, args.seed,
                                 args.scheme)
    if args.snapshots:
        interval = args.interval if args.interval else (t_end - args.burn_in) / args.snapshots
        table = sample_snapshots(traj, args.burn_in, interval, args.snapshots)
        fio.write_samples(args.output, table, {"source": "snapshots", "interval": interval})
    else:
        fio.write_trajectory(args.output, traj)
    return [args.output]


# --- moments / infer -----------------------------------------------------------

def _load(path):
    """``(kind, object)`` for a trajectory, sample table, grid or moments file."""
    with open(path) as fh:
        first = fh.readline()
    try:
        head = json.loads(first)
    except json.JSONDecodeError:
        head = None
    fmt = head.get("format") if isinstance(head, dict) else None
    if fmt == fio.TRAJ_FORMAT:
        return "trajectory", fio.read_trajectory(path)
    if fmt == fio.TABLE_FORMAT:
        return "samples", fio.read_samples(path)
    if fmt == fio.GRID_FORMAT:
        return "grid", fio.read_grid(path)
    d = fio.read_json(path)
    if "c0" in d:
        return "moments", fio.read_moments(path)
    raise ParameterError(f"{path}: unrecognized input file")


def _moments_from(kind, obj, args, need_slope=False):
    if kind == "moments":
        if need_slope and obj.dC0 is None:
            raise ParameterError("moments file lacks dC0; compute it from a trajectory")
        return obj
    if kind == "trajectory":
        lags = args.lags if args.lags else (0.0,)
        return trajectory_moments(obj, lags, args.burn_in, args.derivative)
    if kind == "grid" and need_slope:
        return obj.moments()
    table = obj.sample_table() if kind == "grid" else obj
    if need_slope:
        raise ParameterError("kinetic methods need a trajectory, grid or moments file")
    return sample_moments(table, args.pseudocount)


def cmd_moments(args):
    kind, obj = _load(args.input)
    ms = _moments_from(kind, obj, args)
    fio.write_json(args.output, ms.to_dict())
    outs = [args.output]
    if args.lagged_csv:
        fio.write_lagged_csv(args.lagged_csv, ms)
        outs.append(args.lagged_csv)
    return outs


def _run_infer(args):
    kind, obj = _load(args.input)
    m = args.method
    if m in ("nmf", "tap"):
        ms = _moments_from(kind, obj, args)
        return infer_nmf(ms) if m == "nmf" else infer_tap(ms)
    if m == "plm":
        if kind not in ("samples", "grid"):
            raise ParameterError("plm needs a sample table or grid file")
        table = obj.sample_table() if kind == "grid" else obj
        return infer_plm(table, lam=args.lam, tol=args.tol or 1e-6,
                         max_iter=args.max_iter or 10_000)
    if m == "bm":
        data = obj if kind == "moments" else (
            obj.sample_table() if kind == "grid" else obj)
        if kind == "trajectory":
            data = _moments_from(kind, obj, args)
        return infer_bm(data, eta=args.eta or 0.5, max_sweeps=args.max_iter or 200_000,
                        tol=args.tol or 1e-6)
    if m in ("asyn-nmf", "asyn-tap"):
        ms = _moments_from(kind, obj, args, need_slope=True)
        if m == "asyn-nmf":
            return infer_asyn_nmf(ms, args.gamma, symmetrize=args.symmetrize)
        return infer_asyn_tap(ms, args.mode, args.gamma, max_iters=args.max_iter or 10_000,
                              tol=args.tol or 1e-13)
    if m == "sho":
        if kind == "trajectory":
            dt = args.dt if args.dt else 1e-3 / obj.gamma
            grid = flip_decompose(obj, dt, args.burn_in)
        elif kind == "grid":
            grid = obj.grid_events(args.gamma)
        else:
            raise ParameterError("sho needs a trajectory or grid file")
        return infer_sho(grid, args.gamma, eta=args.eta or 1.0,
                         max_epochs=args.max_iter or 5000,
                         tol=args.tol or 1e-6, optimizer=args.optimizer)
    if kind != "trajectory":
        raise ParameterError("ave needs a trajectory file")
    ms = fio.read_moments(args.moments) if args.moments else trajectory_moments(
        obj, burn_in=args.burn_in)
    return infer_ave(ms, obj, args.gamma, eta=args.eta or 1.0,
                     max_epochs=args.max_iter or 5000,
                     tol=args.tol or 1e-6, optimizer=args.optimizer, burn_in=args.burn_in)


def cmd_infer(args):
    res = _run_infer(args)
    fio.write_json(args.output, res.to_dict())
    return [args.output]


def cmd_eval(args):
    truth = fio.read_model(args.truth)
    J_star = np.asarray(fio.read_json(args.result)["J"], dtype=float)
    report = evaluate(truth.J, J_star, ks=args.k, symmetrize=args.symmetrize)
    text = json.dumps(report.to_dict(), indent=2)
    outs = []
    if args.output:
        Path(args.output).write_text(text + "\n")
        outs.append(args.output)
    else:
        print(text)
    if args.scatter:
        write_scatter_csv(args.scatter, truth.J, J_star)
        outs.append(args.scatter)
    return outs


def cmd_sweep(args):
    base = PipelineConfig(L=args.L, g=args.g, k=args.k, theta=args.theta,
                          n_updates=args.n_updates, gamma=args.gamma, burn_in=args.burn_in,
                          sho_dt=args.sho_dt, methods=tuple(args.methods.split(",")))
    sc = SweepConfig(args.axis, args.values, base, args.replicas, args.seed)
    rows, cells = run_sweep(sc, args.workers)
    write_sweep_csv(args.output, args.axis, rows)
    outs = [args.output]
    if args.cells_json:
        fio.write_json(args.cells_json, cells)
        outs.append(args.cells_json)
    return outs


# --- popgen ------------------------------------------------------------------

def _evo_params(args) -> tuple[FitnessParams, EvolutionParams]:
    preset = dict(PRESETS[args.preset]) if args.preset else {}
    def pick(name, default):
        v = getattr(args, name)
        return v if v is not None else preset.get(name, default)
    L = pick("L", 25)
    sigma = pick("sigma", 0.004)
    if args.fitness:
        fit = FitnessParams.from_dict(fio.read_json(args.fitness))
    else:
        fit = random_fitness(L, sigma, seed=args.fitness_seed, f_scale=args.f_scale)
    evo = EvolutionParams(L=L, N_pop=pick("N_pop", 500), mu=pick("mu", 0.05), r=pick("r", 0.5),
                          rho=pick("rho", 0.5), T=args.T, record_every=args.record_every,
                          seed=args.seed)
    return fit, evo


def cmd_popgen_evolve(args):
    fit, evo = _evo_params(args)
    snaps = evolve(fit, evo)
    fio.write_snapshots(args.output, snaps, {"evolution": evo.to_dict(),
                                             "fitness": fit.to_dict()})
    return [args.output]


def cmd_popgen_infer(args):
    snaps, head = fio.read_snapshots(args.snapshots)
    evo = EvolutionParams(**head["evolution"])
    res = infer_fitness_kns(snaps, evo, args.dca_method, args.averaging, args.pseudocount,
                            args.burn_in)
    out = res.to_dict()
    if "fitness" in head:
        truth = np.asarray(head["fitness"]["fmat"], dtype=float)
        if np.any(truth != 0):
            out["diagnostics"]["relative_rmse"] = relative_rmse(res.J_star, truth)
    fio.write_json(args.output, out)
    return [args.output]


def cmd_popgen_phase(args):
    fit, evo = _evo_params(args)
    pd = phase_diagram(args.axis1, args.axis1_values, args.r_values, fit, evo, args.seed,
                       args.dca_method, args.pseudocount, args.burn_in, args.workers)
    with open(args.output, "w") as fh:
        fh.write(f"{args.axis1},r,score_singletime,score_alltime\n")
        for v1, r, a, b in pd.rows():
            fh.write(f"{v1:.17g},{r:.17g},{a:.17g},{b:.17g}\n")
    return [args.output]


# --- binarize ----------------------------------------------------------------

def cmd_binarize_spikes(args):
    trains = read_spikes_csv(args.input, args.length)
    grid = binarize_spikes(trains, args.gamma, args.dt, args.seed)
    fio.write_grid(args.output, grid)
    return [args.output]


def cmd_binarize_volumes(args):
    series = read_volumes_csv(args.input, args.start, args.end)
    segments = None
    if args.segments:
        vals = args.segments
        if len(vals) % 2:
            raise ParameterError("--segments needs start,end pairs")
        segments = list(zip(vals[::2], vals[1::2]))
    grid = binarize_volumes(series, args.window, args.chi, args.shift, segments)
    if grid.meta.get("truncated"):
        log.warning("volume binarization truncated: trailing data shorter than one window")
    fio.write_grid(args.output, grid)
    return [args.output]


# --- parser ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="isinglab", description="Inverse Ising and kinetic Ising toolkit")
    p.add_argument("--version", action="version", version=f"isinglab {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate an SK coupling model")
    g.add_argument("--L", type=int, required=True)
    g.add_argument("--g", type=float, required=True)
    g.add_argument("--k", type=float, default=0.0, help="asymmetry degree")
    g.add_argument("--theta", type=float, default=0.0, help="uniform external field")
    g.add_argument("--theta-range", type=float, default=0.0,
                   help="draw fields uniformly in [-a, a] instead")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("-o", "--output", required=True)
    g.set_defaults(func=cmd_gen)

    s = sub.add_parser("simulate", help="simulate Glauber dynamics")
    s.add_argument("--model", required=True)
    s.add_argument("--scheme", default="gillespie",
                   choices=("gillespie", "random-pick", "per-spin-bernoulli", "master",
                            "exact-gibbs"))
    s.add_argument("--gamma", type=float, default=1.0)
    s.add_argument("--t-end", type=float)
    s.add_argument("--n-updates", type=float, help="data length; t_end = n/(gamma L)")
    s.add_argument("--dt", type=float, help="step of the discrete schemes")
    s.add_argument("--initial", help="initial configuration as a +/- string")
    s.add_argument("--initial-distribution", choices=("uniform", "point"), default="uniform")
    s.add_argument("--atol", type=float, default=1e-10)
    s.add_argument("--snapshots", type=int, default=0,
                   help="write this many snapshots as a sample table instead of the path")
    s.add_argument("--interval", type=float)
    s.add_argument("--burn-in", type=float, default=0.0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("-o", "--output", required=True)
    s.set_defaults(func=cmd_simulate)

    def moment_opts(q):
        q.add_argument("--burn-in", type=float, default=0.0)
        q.add_argument("--lags", type=_floats, help="comma-separated lags")
        q.add_argument("--derivative", choices=DERIVATIVE_METHODS, default="events")
        q.add_argument("--pseudocount", type=float, default=0.0)

    mo = sub.add_parser("moments", help="compute a moments file")
    mo.add_argument("--input", required=True)
    moment_opts(mo)
    mo.add_argument("--lagged-csv", help="also export C(tau) per lag as CSV")
    mo.add_argument("-o", "--output", required=True)
    mo.set_defaults(func=cmd_moments)

    i = sub.add_parser("infer", help="infer fields and couplings")
    i.add_argument("--method", required=True, choices=INFER_METHODS)
    i.add_argument("--input", required=True, help="trajectory, sample, grid or moments file")
    i.add_argument("--moments", help="precomputed moments for ave")
    moment_opts(i)
    i.add_argument("--gamma", type=float, default=1.0)
    i.add_argument("--lam", type=float, help="PLM L2 strength (default 0.01/N)")
    i.add_argument("--eta", type=float, help="learning rate")
    i.add_argument("--tol", type=float)
    i.add_argument("--max-iter", type=int, help="iteration/epoch cap (method default if omitted)")
    i.add_argument("--mode", choices=("cubic", "iterative"), default="cubic")
    i.add_argument("--symmetrize", action="store_true")
    i.add_argument("--dt", type=float, help="SHO grid step")
    i.add_argument("--optimizer", choices=("lbfgs", "gd"), default="lbfgs")
    i.add_argument("-o", "--output", required=True)
    i.set_defaults(func=cmd_infer)

    e = sub.add_parser("eval", help="score inferred couplings against a ground truth")
    e.add_argument("--truth", required=True)
    e.add_argument("--result", required=True)
    e.add_argument("--k", type=lambda t: [int(x) for x in t.split(",")], default=[10, 20, 50])
    e.add_argument("--symmetrize", action="store_true")
    e.add_argument("--scatter", help="write i,j,true,inferred CSV")
    e.add_argument("-o", "--output")
    e.set_defaults(func=cmd_eval)

    w = sub.add_parser("sweep", help="MSE of kinetic methods versus one parameter")
    w.add_argument("--axis", required=True, choices=AXES)
    w.add_argument("--values", required=True, type=_floats)
    w.add_argument("--methods", default=",".join(SWEEP_METHODS))
    w.add_argument("--replicas", type=int, default=1)
    w.add_argument("--L", type=int, default=20)
    w.add_argument("--g", type=float, default=0.3)
    w.add_argument("--k", type=float, default=1.0)
    w.add_argument("--theta", type=float, default=0.0)
    w.add_argument("--n-updates", type=float, default=1e7)
    w.add_argument("--gamma", type=float, default=1.0)
    w.add_argument("--burn-in", type=float, default=10.0)
    w.add_argument("--sho-dt", type=float, default=1e-3)
    w.add_argument("--seed", type=int, default=0)
    w.add_argument("--workers", type=int, help="default: ISINGLAB_THREADS or 1")
    w.add_argument("--cells-json", help="also write per-cell results")
    w.add_argument("-o", "--output", required=True)
    w.set_defaults(func=cmd_sweep)

    pg = sub.add_parser("popgen", help="population genetics simulation and fitness inference")
    pgs = pg.add_subparsers(dest="popgen_command", required=True)

    def evo_opts(q):
        q.add_argument("--preset", choices=sorted(PRESETS))
        q.add_argument("--L", type=int)
        q.add_argument("--N-pop", dest="N_pop", type=int)
        q.add_argument("--mu", type=float)
        q.add_argument("--r", type=float)
        q.add_argument("--rho", type=float)
        q.add_argument("--sigma", type=float)
        q.add_argument("--f-scale", type=float, default=0.0, help="std of additive fitness")
        q.add_argument("--fitness", help="fitness JSON instead of random epistasis")
        q.add_argument("--fitness-seed", type=int, default=0)
        q.add_argument("--T", type=int, default=2500, help="generations")
        q.add_argument("--record-every", type=int, default=5)
        q.add_argument("--seed", type=int, default=0)

    def kns_opts(q):
        q.add_argument("--dca-method", choices=("nMF", "PLM"), default="nMF")
        q.add_argument("--pseudocount", type=float, help="default 1/N_pop")
        q.add_argument("--burn-in", type=float, default=0.2, help="fraction of snapshots dropped")

    ev = pgs.add_parser("evolve")
    evo_opts(ev)
    ev.add_argument("-o", "--output", required=True)
    ev.set_defaults(func=cmd_popgen_evolve)

    pi = pgs.add_parser("infer")
    pi.add_argument("--snapshots", required=True)
    kns_opts(pi)
    pi.add_argument("--averaging", choices=("singletime", "alltime"), default="singletime")
    pi.add_argument("-o", "--output", required=True)
    pi.set_defaults(func=cmd_popgen_infer)

    pp = pgs.add_parser("phase-diagram")
    evo_opts(pp)
    kns_opts(pp)
    pp.add_argument("--axis1", choices=("mu", "sigma"), required=True)
    pp.add_argument("--axis1-values", type=_floats, required=True)
    pp.add_argument("--r-values", type=_floats, required=True)
    pp.add_argument("--workers", type=int)
    pp.add_argument("-o", "--output", required=True)
    pp.set_defaults(func=cmd_popgen_phase)

    b = sub.add_parser("binarize", help="convert recorded data to a +-1 grid")
    bs = b.add_subparsers(dest="binarize_command", required=True)
    sp = bs.add_parser("spikes")
    sp.add_argument("--input", required=True, help="CSV with unit_id,time_s")
    sp.add_argument("--gamma", type=float, required=True, help="memory rate (1/s)")
    sp.add_argument("--dt", type=float, required=True)
    sp.add_argument("--length", type=float, help="recording length (default: last spike)")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("-o", "--output", required=True)
    sp.set_defaults(func=cmd_binarize_spikes)
    vo = bs.add_parser("volumes")
    vo.add_argument("--input", required=True, help="CSV with instrument_id,time_s,volume")
    vo.add_argument("--window", type=float, required=True)
    vo.add_argument("--chi", type=float, required=True)
    vo.add_argument("--shift", type=float, default=1.0)
    vo.add_argument("--start", type=float)
    vo.add_argument("--end", type=float)
    vo.add_argument("--segments", type=_floats, help="start,end,start,end,...")
    vo.add_argument("-o", "--output", required=True)
    vo.set_defaults(func=cmd_binarize_volumes)

    r = sub.add_parser("rerun", help="repeat a run from its manifest")
    r.add_argument("manifest")
    r.set_defaults(func=None)
    return p


def _config(args) -> dict:
    return {k: v for k, v in vars(args).items() if k != "func"}


def _write_manifest(args, argv, outputs):
    if not outputs:
        return
    manifest = {"isinglab_version": __version__, "argv": list(argv), "config": _config(args),
                "outputs": [str(o) for o in outputs]}
    fio.write_json(f"{outputs[0]}.manifest.json", manifest)


def _write_diagnostics(args, exc: NumericalError):
    out = getattr(args, "output", None)
    if not out:
        return None
    path = f"{out}.diagnostics.json"
    fio.write_json(path, {"error": str(exc), "diagnostics": exc.diagnostics,
                          "config": _config(args)})
    return path


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "rerun":
        try:
            manifest = fio.read_json(args.manifest)
        except ParameterError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 2
        return main(manifest["argv"])
    try:
        outputs = args.func(args)
    except NumericalError as exc:
        path = _write_diagnostics(args, exc)
        print(f"numerical failure: {exc}", file=sys.stderr)
        if path:
            print(f"diagnostics written to {path}", file=sys.stderr)
        return 3
    except (ParameterError, DomainError, CapacityError) as exc:
        print(f"parameter error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"parameter error: {exc}", file=sys.stderr)
        return 2
    _write_manifest(args, argv, outputs)
    return 0


if __name__ == "__main__":
    sys.exit(main())
