"""Finite haploid populations under mutation, recombination, drift and selection.

Fitness is ``F(s) = F0 + sum_i f_i s_i + sum_{i<j} f_ij s_i s_j``. In the
quasi-linkage-equilibrium regime genome snapshots follow a Gibbs distribution
whose couplings relate to epistasis by ``f_ij = J_ij r c_ij`` (KNS relation),
which is what ``infer_fitness_kns`` inverts.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from ._parallel import ordered_map
from .equilibrium import InferenceResult, infer_nmf, infer_plm
from .errors import NumericalError, ParameterError
from .model import SampleTable
from .stats import sample_moments

log = logging.getLogger(__name__)

DCA_METHODS = ("nMF", "PLM")
AVERAGING = ("singletime", "alltime")
PRESETS = {
    # allele-frequency time course example
    "time-development": dict(L=25, N_pop=200, mu=0.01, r=0.1, rho=0.5, sigma=0.002),
    # scatter and phase-diagram examples; N_pop large enough for invertible snapshots
    "scatter": dict(L=25, N_pop=500, mu=0.05, r=0.5, rho=0.5, sigma=0.004),
}


@dataclass
class FitnessParams:
    f: np.ndarray
    fmat: np.ndarray
    F0: float = 0.0
    sigma: float = 0.0

    def __post_init__(self):
        self.f = np.asarray(self.f, dtype=float)
        self.fmat = np.asarray(self.fmat, dtype=float)
        L = self.f.shape[0]
        if self.fmat.shape != (L, L):
            raise ParameterError(f"fmat must be {L}x{L}")
        if not np.allclose(self.fmat, self.fmat.T, atol=0.0) or np.any(np.diag(self.fmat) != 0):
            raise ParameterError("fmat must be symmetric with zero diagonal")

    @property
    def L(self) -> int:
        return self.f.shape[0]

    def fitness(self, genomes: np.ndarray) -> np.ndarray:
        s = genomes.astype(float)
        # sum over i<j of a symmetric zero-diagonal matrix is half the full quadratic form
        return self.F0 + s @ self.f + 0.5 * np.einsum("ni,ij,nj->n", s, self.fmat, s)

    def to_dict(self) -> dict:
        return {"F0": self.F0, "f": self.f.tolist(), "fmat": self.fmat.tolist(),
                "sigma": self.sigma}

    @classmethod
    def from_dict(cls, d: dict) -> "FitnessParams":
        return cls(f=d["f"], fmat=d["fmat"], F0=d.get("F0", 0.0), sigma=d.get("sigma", 0.0))


@dataclass
class EvolutionParams:
    L: int
    N_pop: int
    mu: float
    r: float
    rho: float
    T: int
    record_every: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.L < 1 or self.T < 0 or self.record_every < 1:
            raise ParameterError("need L >= 1, T >= 0, record_every >= 1")
        if self.N_pop < 2:
            raise ParameterError("N_pop must be >= 2")
        if not 0.0 <= self.mu <= 1.0:
            raise ParameterError("mu must lie in [0, 1]")
        if not 0.0 <= self.r <= 1.0:
            raise ParameterError("r must lie in [0, 1]")
        if not 0.0 <= self.rho <= 0.5:
            raise ParameterError("rho must lie in [0, 0.5]")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in
                ("L", "N_pop", "mu", "r", "rho", "T", "record_every", "seed")}


@dataclass
class PopulationSnapshot:
    generation: int
    genomes: np.ndarray

    def __post_init__(self):
        self.genomes = np.asarray(self.genomes, dtype=np.int8)
        if self.genomes.ndim != 2 or not np.all(np.abs(self.genomes) == 1):
            raise ParameterError("genomes must be an N_pop x L matrix of +-1")


def random_fitness(L: int, sigma: float, seed: int = 0, f_scale: float = 0.0,
                   F0: float = 0.0) -> FitnessParams:
    """Gaussian epistasis ``f_ij ~ N(0, sigma^2)`` for ``i<j``, additive ``f_i ~ N(0, f_scale^2)``."""
    if sigma < 0 or f_scale < 0:
        raise ParameterError("sigma and f_scale must be >= 0")
    rng = np.random.default_rng(seed)
    iu = np.triu_indices(L, 1)
    fmat = np.zeros((L, L))
    fmat[iu] = sigma * rng.standard_normal(iu[0].size)
    fmat = fmat + fmat.T
    f = f_scale * rng.standard_normal(L)
    return FitnessParams(f=f, fmat=fmat, F0=F0, sigma=sigma)


def crossover_patterns(n: int, L: int, rho: float, rng: np.random.Generator) -> np.ndarray:
    """``n`` Markov crossover patterns (bool; True = inherit from the first parent)."""
    first = rng.random(n) < 0.5
    if L == 1:
        return first[:, None]
    switches = rng.random((n, L - 1)) < rho
    parity = np.concatenate([np.zeros((n, 1), dtype=np.int64),
                             np.cumsum(switches, axis=1)], axis=1) & 1
    return first[:, None] ^ parity.astype(bool)


def crossover_cij(rho: float, L: int) -> np.ndarray:
    """Probability that loci i and j come from different parents: ``(1 - (1-2 rho)^|i-j|)/2``."""
    if not 0.0 <= rho <= 0.5:
        raise ParameterError("rho must lie in [0, 0.5]")
    d = np.abs(np.subtract.outer(np.arange(L), np.arange(L)))
    c = 0.5 * (1.0 - (1.0 - 2.0 * rho) ** d)
    np.fill_diagonal(c, 0.0)
    return c


def crossover_cij_mc(rho: float, L: int, n_patterns: int, seed: int = 0, batch: int = 100_000):
    """Monte-Carlo estimate of ``c_ij`` and its standard error from sampled patterns."""
    rng = np.random.default_rng(seed)
    acc = np.zeros((L, L))
    done = 0
    while done < n_patterns:
        n = min(batch, n_patterns - done)
        xi = crossover_patterns(n, L, rho, rng).astype(float)
        same = xi.T @ xi + (1.0 - xi).T @ (1.0 - xi)
        acc += n - same
        done += n
    c = acc / n_patterns
    se = np.sqrt(c * (1.0 - c) / n_patterns)
    return c, se


def _generation(pop, fit: FitnessParams, evo: EvolutionParams, rng):
    N, L = pop.shape
    F = fit.fitness(pop)
    w = np.exp(F - F.max())
    p = w / w.sum()
    recomb = rng.random(N) < evo.r
    mothers = rng.choice(N, size=N, p=p)
    fathers = rng.choice(N, size=N, p=p)
    xi = crossover_patterns(N, L, evo.rho, rng)
    child = pop[mothers].copy()
    nr = np.flatnonzero(recomb)
    if nr.size:
        child[nr] = np.where(xi[nr], pop[mothers[nr]], pop[fathers[nr]])
    if evo.mu > 0:
        child[rng.random((N, L)) < evo.mu] *= -1
    return child


def evolve(fit: FitnessParams, evo: EvolutionParams, initial=None) -> list[PopulationSnapshot]:
    """Discrete-generation Wright-Fisher evolution.

    Each offspring either recombines two fitness-weighted parents (probability
    ``r``) with a Markov crossover pattern or clones one fitness-weighted parent;
    every locus then flips with probability ``mu``. The starting population
    (generation 0) is random unless ``initial`` is given, and snapshots are taken
    at every multiple of ``record_every``.
    """
    if fit.L != evo.L:
        raise ParameterError("fitness and evolution parameters disagree on L")
    rng = np.random.default_rng(evo.seed)
    if initial is None:
        pop = np.where(rng.random((evo.N_pop, evo.L)) < 0.5, 1, -1).astype(np.int8)
    else:
        pop = np.asarray(initial, dtype=np.int8).copy()
        if pop.shape != (evo.N_pop, evo.L) or not np.all(np.abs(pop) == 1):
            raise ParameterError("initial population must be N_pop x L of +-1")
    snaps = [PopulationSnapshot(0, pop.copy())]
    for g in range(1, evo.T + 1):
        pop = _generation(pop, fit, evo, rng)
        if g % evo.record_every == 0:
            snaps.append(PopulationSnapshot(g, pop.copy()))
    return snaps


def _dca(table: SampleTable, dca_method: str, pseudocount: float, plm_lam):
    if dca_method == "nMF":
        return infer_nmf(sample_moments(table, pseudocount))
    return infer_plm(table, lam=plm_lam)


def infer_fitness_kns(snapshots: list[PopulationSnapshot], evo: EvolutionParams,
                      dca_method: str = "nMF", averaging: str = "singletime",
                      pseudocount: float | None = None, burn_in: float = 0.2,
                      plm_lam: float | None = None) -> InferenceResult:
    """Epistatic fitness from genome snapshots, ``f*_ij = J*_ij r c_ij``.

    ``singletime`` infers couplings per snapshot and averages them;
    ``alltime`` pools every retained snapshot into one table and infers once.
    The first ``burn_in`` fraction of snapshots is dropped. ``theta_star`` holds
    the averaged Ising fields, ``J_star`` the epistatic fitness estimate.
    """
    if dca_method not in DCA_METHODS:
        raise ParameterError(f"unknown DCA method {dca_method!r}")
    if averaging not in AVERAGING:
        raise ParameterError(f"unknown averaging mode {averaging!r}")
    if not 0.0 <= burn_in < 1.0:
        raise ParameterError("burn_in must lie in [0, 1)")
    if not snapshots:
        raise ParameterError("need at least one snapshot")
    if pseudocount is None:
        pseudocount = 1.0 / evo.N_pop
    kept = snapshots[int(np.floor(burn_in * len(snapshots))):]
    if not kept:
        kept = snapshots[-1:]
    skipped = []
    if averaging == "alltime":
        table = SampleTable(np.concatenate([s.genomes for s in kept]))
        res = _dca(table, dca_method, pseudocount, plm_lam)
        theta, J = res.theta_star, res.J_star
        used = len(kept)
    else:
        Js, thetas = [], []
        for s in kept:
            try:
                res = _dca(SampleTable(s.genomes), dca_method, pseudocount, plm_lam)
            except NumericalError:
                skipped.append(s.generation)
                continue
            Js.append(res.J_star)
            thetas.append(res.theta_star)
        if not Js:
            raise NumericalError("every snapshot had a singular correlation matrix; "
                                 "use a pseudocount", {"skipped_generations": skipped})
        J = np.mean(Js, axis=0)
        theta = np.mean(thetas, axis=0)
        used = len(Js)
    fstar = J * (evo.r * crossover_cij(evo.rho, evo.L))
    fstar = (fstar + fstar.T) / 2.0
    np.fill_diagonal(fstar, 0.0)
    hyper = {"dca_method": dca_method, "averaging": averaging, "pseudocount": pseudocount,
             "burn_in": burn_in, "r": evo.r, "rho": evo.rho}
    diagnostics = {"snapshots_used": used, "skipped_generations": skipped,
                   "J_ising": J.tolist()}
    return InferenceResult(theta, fstar, "KNS", hyper, diagnostics)


def relative_rmse(estimate: np.ndarray, truth: np.ndarray) -> float:
    """``sqrt(sum (f* - f)^2 / sum f^2)`` over pairs ``i<j``."""
    iu = np.triu_indices(truth.shape[0], 1)
    den = float(np.sum(truth[iu] ** 2))
    if den == 0.0:
        raise ParameterError("relative error undefined for zero true epistasis")
    return float(np.sqrt(np.sum((estimate[iu] - truth[iu]) ** 2) / den))


@dataclass
class PhaseDiagram:
    axis1: str
    axis1_grid: list
    r_grid: list
    singletime: np.ndarray
    alltime: np.ndarray
    failures: list = field(default_factory=list)

    def rows(self):
        """``(axis1 value, r, score_singletime, score_alltime)`` in cell order."""
        for a, v1 in enumerate(self.axis1_grid):
            for b, r in enumerate(self.r_grid):
                yield v1, r, float(self.singletime[a, b]), float(self.alltime[a, b])


def _cell_params(axis1, v1, r, fit, evo, seed, cell):
    if axis1 == "mu":
        cfit = fit
        cevo = replace(evo, mu=float(v1), r=float(r))
    else:
        # rescale one fixed epistasis pattern so cells differ only in strength
        scale = float(v1) / fit.sigma if fit.sigma > 0 else 0.0
        cfit = FitnessParams(f=fit.f, fmat=fit.fmat * scale, F0=fit.F0, sigma=float(v1))
        cevo = replace(evo, r=float(r))
    cell_seed = int(np.random.SeedSequence([seed, cell]).generate_state(1)[0])
    return cfit, replace(cevo, seed=cell_seed)


def _run_cell(args):
    cfit, cevo, dca_method, pseudocount, burn_in = args
    try:
        snaps = evolve(cfit, cevo)
        out = []
        for mode in AVERAGING:
            res = infer_fitness_kns(snaps, cevo, dca_method, mode, pseudocount, burn_in)
            out.append(relative_rmse(res.J_star, cfit.fmat))
        return out[0], out[1], None
    except Exception as exc:  # recorded per cell; the sweep continues
        return np.nan, np.nan, f"{type(exc).__name__}: {exc}"


def phase_diagram(axis1: str, axis1_grid, r_grid, fit: FitnessParams, evo: EvolutionParams,
                  seed: int = 0, dca_method: str = "nMF", pseudocount: float | None = None,
                  burn_in: float = 0.2, workers: int | None = None) -> PhaseDiagram:
    """Relative RMSE of KNS fitness recovery over an (axis1, r) grid.

    ``axis1`` is ``mu`` or ``sigma``. Cell ``k`` (row-major) evolves with the
    seed derived from ``SeedSequence([seed, k])``.
    """
    if axis1 not in ("mu", "sigma"):
        raise ParameterError("axis1 must be 'mu' or 'sigma'")
    axis1_grid, r_grid = list(axis1_grid), list(r_grid)
    if not axis1_grid or not r_grid:
        raise ParameterError("grids must be nonempty")
    if axis1 == "sigma" and fit.sigma <= 0:
        raise ParameterError("sigma axis needs base fitness with sigma > 0")
    jobs = []
    for a, v1 in enumerate(axis1_grid):
        for b, r in enumerate(r_grid):
            cell = a * len(r_grid) + b
            cfit, cevo = _cell_params(axis1, v1, r, fit, evo, seed, cell)
            jobs.append((cfit, cevo, dca_method, pseudocount, burn_in))
    results = ordered_map(_run_cell, jobs, workers)
    shape = (len(axis1_grid), len(r_grid))
    single = np.array([x[0] for x in results]).reshape(shape)
    alltime = np.array([x[1] for x in results]).reshape(shape)
    failures = [{"cell": k, "error": x[2]} for k, x in enumerate(results) if x[2]]
    for f in failures:
        log.warning("phase-diagram cell %d failed: %s", f["cell"], f["error"])
    return PhaseDiagram(axis1, axis1_grid, r_grid, single, alltime, failures)
