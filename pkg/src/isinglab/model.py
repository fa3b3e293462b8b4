"""Coupling models, SK ensembles and exact small-system Gibbs computations.

Conventions used throughout the package:

* spins take values in {-1, +1};
* the inverse temperature is fixed to one;
* the Gibbs weight of a configuration is ``exp(sum_i theta_i s_i + sum_{i<j} J_ij s_i s_j)``
  so that positive couplings favour aligned spins and ``m = tanh(theta)`` for a
  single spin;
* ``J[i, j]`` is the influence of spin ``j`` on spin ``i`` (row = receiving spin).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .errors import CapacityError, DomainError, ParameterError

L_EXACT_MAX = 16


@dataclass
class CouplingModel:
    """Fields ``theta`` and couplings ``J`` of an Ising / kinetic Ising model."""

    theta: np.ndarray
    J: np.ndarray
    self_allowed: bool = False
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=float).reshape(-1)
        self.J = np.asarray(self.J, dtype=float)
        L = self.theta.shape[0]
        if L < 1:
            raise ParameterError("model needs at least one spin")
        if self.J.shape != (L, L):
            raise ParameterError(f"J has shape {self.J.shape}, expected {(L, L)}")
        if not (np.all(np.isfinite(self.theta)) and np.all(np.isfinite(self.J))):
            raise ParameterError("model parameters must be finite")
        if not self.self_allowed and np.any(np.diag(self.J) != 0):
            raise ParameterError("nonzero diagonal in J while self_allowed is False")

    @property
    def L(self) -> int:
        return self.theta.shape[0]

    def is_symmetric(self, tol: float = 1e-12) -> bool:
        scale = max(1.0, float(np.max(np.abs(self.J), initial=0.0)))
        return bool(np.max(np.abs(self.J - self.J.T), initial=0.0) <= tol * scale)

    def local_fields(self, states: np.ndarray) -> np.ndarray:
        """Effective fields ``H_i = theta_i + sum_j J_ij s_j`` for each row of ``states``."""
        states = np.asarray(states, dtype=float)
        return states @ self.J.T + self.theta

    def to_dict(self) -> dict:
        return {
            "L": self.L,
            "theta": self.theta.tolist(),
            "J": self.J.tolist(),
            "self_allowed": bool(self.self_allowed),
            "meta": dict(self.meta),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CouplingModel":
        model = cls(
            theta=d["theta"],
            J=d["J"],
            self_allowed=bool(d.get("self_allowed", False)),
            meta=dict(d.get("meta", {})),
        )
        if "L" in d and int(d["L"]) != model.L:
            raise ParameterError(f"L={d['L']} does not match theta length {model.L}")
        return model


@dataclass
class SKParams:
    L: int
    g: float
    k: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if int(self.L) != self.L or self.L < 2:
            raise ParameterError(f"SK model needs L >= 2, got {self.L}")
        if not self.g > 0:
            raise ParameterError(f"coupling scale g must be positive, got {self.g}")
        if not self.k >= 0:
            raise ParameterError(f"asymmetry k must be >= 0, got {self.k}")
        self.L = int(self.L)


@dataclass
class SampleTable:
    """Rows of +-1 configurations treated as independent samples.

    ``weights`` (optional, nonnegative) turns the table into a weighted sample;
    this is how exact distributions are fed to sample-based estimators.
    """

    states: np.ndarray
    weights: np.ndarray | None = None

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=np.int8)
        if self.states.ndim != 2:
            raise ParameterError("sample table must be two-dimensional")
        if not np.all(np.abs(self.states) == 1):
            raise ParameterError("sample table entries must be +1 or -1")
        if self.weights is not None:
            self.weights = np.asarray(self.weights, dtype=float).reshape(-1)
            if self.weights.shape[0] != self.states.shape[0]:
                raise ParameterError("weights length differs from number of rows")
            if np.any(self.weights < 0) or not self.weights.sum() > 0:
                raise ParameterError("weights must be nonnegative with positive sum")

    @property
    def N(self) -> int:
        return self.states.shape[0]

    @property
    def L(self) -> int:
        return self.states.shape[1]

    def normalized_weights(self) -> np.ndarray:
        if self.weights is None:
            return np.full(self.N, 1.0 / self.N)
        return self.weights / self.weights.sum()


def generate_sk(params: SKParams) -> CouplingModel:
    """Draw ``J = J_s + k J_as`` with Gaussian symmetric and antisymmetric parts.

    Each part has entry variance ``g^2 / (L (1 + k^2))`` so that the off-diagonal
    entries of ``J`` have variance ``g^2 / L`` whatever ``k``.
    """
    L, g, k = params.L, params.g, params.k
    rng = np.random.default_rng(params.seed)
    sd = g / np.sqrt(L * (1.0 + k * k))
    iu = np.triu_indices(L, 1)
    n_pairs = iu[0].size

    sym = np.zeros((L, L))
    sym[iu] = rng.normal(0.0, sd, n_pairs)
    sym = sym + sym.T

    anti = np.zeros((L, L))
    anti[iu] = rng.normal(0.0, sd, n_pairs)
    anti = anti - anti.T

    J = sym + k * anti if k != 0 else sym
    meta = {"generator": "sk", "L": L, "g": g, "k": k, "seed": params.seed}
    return CouplingModel(theta=np.zeros(L), J=J, meta=meta)


def split_symmetry(model: CouplingModel) -> tuple[np.ndarray, np.ndarray]:
    """Return ``((J + J.T) / 2, (J - J.T) / 2)``."""
    J = model.J
    return (J + J.T) / 2.0, (J - J.T) / 2.0


def all_states(L: int) -> np.ndarray:
    """All ``2**L`` configurations as an int8 array; row ``k`` encodes the bits of ``k``."""
    codes = np.arange(2**L, dtype=np.int64)
    bits = (codes[:, None] >> np.arange(L)) & 1
    return (2 * bits - 1).astype(np.int8)


def log_weights(model: CouplingModel, states: np.ndarray) -> np.ndarray:
    """Unnormalized log Gibbs weights for the symmetric part of the couplings."""
    sym, _ = split_symmetry(model)
    sym = sym - np.diag(np.diag(sym))
    s = np.asarray(states, dtype=float)
    return s @ model.theta + 0.5 * np.einsum("ni,ij,nj->n", s, sym, s)


def _check_exact(model: CouplingModel, L_max: int):
    if model.L > L_max:
        raise CapacityError(f"exact enumeration limited to L <= {L_max}, got {model.L}")
    if not model.is_symmetric():
        raise DomainError("Gibbs measure requires symmetric couplings")


def gibbs_distribution(model: CouplingModel, L_max: int = L_EXACT_MAX):
    """Exact Gibbs probabilities over all states: ``(states, probs, logZ)``."""
    _check_exact(model, L_max)
    states = all_states(model.L)
    lw = log_weights(model, states)
    logZ = float(logsumexp(lw))
    return states, np.exp(lw - logZ), logZ


def exact_gibbs_moments(model: CouplingModel, L_max: int = L_EXACT_MAX):
    """Magnetizations, connected correlations and ``log Z`` by full enumeration."""
    states, p, logZ = gibbs_distribution(model, L_max)
    s = states.astype(float)
    m = p @ s
    second = (s * p[:, None]).T @ s
    c = second - np.outer(m, m)
    c = (c + c.T) / 2.0
    return m, c, logZ


def gibbs_sample_table(model: CouplingModel, L_max: int = L_EXACT_MAX) -> SampleTable:
    """The exact Gibbs distribution as an infinitely large weighted sample."""
    states, p, _ = gibbs_distribution(model, L_max)
    return SampleTable(states=states, weights=p)
