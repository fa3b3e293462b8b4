"""Reconstruction quality of inferred couplings.

All scores compare off-diagonal entries only; self-couplings are ignored.
"""
from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import DomainError, ParameterError


def _pair(J_true, J_star):
    a = np.asarray(J_true, dtype=float)
    b = np.asarray(J_star, dtype=float)
    if a.shape != b.shape or a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ParameterError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def _offdiag(J):
    return J[~np.eye(J.shape[0], dtype=bool)]


def mse(J_true, J_star) -> float:
    """``sum_{i != j} (J*_ij - J_ij)^2 / (L (L - 1))``."""
    a, b = _pair(J_true, J_star)
    if a.shape[0] < 2:
        raise ParameterError("need L >= 2")
    return float(np.mean((_offdiag(b) - _offdiag(a)) ** 2))


def similarity_q(J, J_prime) -> float:
    """``Q = sum J_ij J'_ij / sum max(J_ij, J'_ij)^2`` over off-diagonal entries.

    The maximum is taken over the two signed values, which gives ``Q(J, J) = 1``
    and ``Q(J, -J) = -1``.
    """
    a, b = _pair(J, J_prime)
    x, y = _offdiag(a), _offdiag(b)
    den = float(np.sum(np.maximum(x, y) ** 2))
    if den == 0.0:
        raise DomainError("similarity undefined: denominator vanishes")
    return float(np.sum(x * y) / den)


def _top_pairs(J, k):
    iu = np.triu_indices(J.shape[0], 1)
    vals = np.abs(J[iu])
    # stable sort on -|J| keeps index order among ties
    order = np.argsort(-vals, kind="stable")
    return set(order[:k].tolist())


def tpr_k(J_true, J_star, k: int) -> float:
    """Fraction of the ``k`` largest ``|J*|`` pairs (``i<j``) among the ``k`` largest ``|J|``.

    Ties are broken by upper-triangle index order.
    """
    a, b = _pair(J_true, J_star)
    n_pairs = a.shape[0] * (a.shape[0] - 1) // 2
    if not 1 <= k <= n_pairs:
        raise ParameterError(f"k must lie in [1, {n_pairs}]")
    return len(_top_pairs(a, k) & _top_pairs(b, k)) / k


def pearson(J_true, J_star) -> float:
    a, b = _pair(J_true, J_star)
    x, y = _offdiag(a), _offdiag(b)
    if np.std(x) == 0 or np.std(y) == 0:
        raise DomainError("Pearson correlation undefined for constant entries")
    return float(np.corrcoef(x, y)[0, 1])


@dataclass
class EvalReport:
    mse: float
    q_similarity: float | None
    tpr_k: dict
    pearson: float | None
    residuals: dict
    flags: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["tpr_k"] = {str(k): v for k, v in self.tpr_k.items()}
        return d


def evaluate(J_true, J_star, ks=(10, 20, 50), symmetrize: bool = False) -> EvalReport:
    """All scores at once; undefined scores are reported as ``None``."""
    a, b = _pair(J_true, J_star)
    if symmetrize:
        b = (b + b.T) / 2.0
    n_pairs = a.shape[0] * (a.shape[0] - 1) // 2
    res = _offdiag(b) - _offdiag(a)
    try:
        q = similarity_q(a, b)
    except DomainError:
        q = None
    try:
        r = pearson(a, b)
    except DomainError:
        r = None
    tprs = {int(k): tpr_k(a, b, int(k)) for k in ks if 1 <= int(k) <= n_pairs}
    residuals = {"mean": float(res.mean()), "std": float(res.std()),
                 "max_abs": float(np.abs(res).max()),
                 "rmse": float(np.sqrt(np.mean(res**2)))}
    return EvalReport(mse=mse(a, b), q_similarity=q, tpr_k=tprs, pearson=r,
                      residuals=residuals,
                      flags={"diagonal_excluded": True, "symmetrized": symmetrize})


def write_scatter_csv(path, J_true, J_star) -> None:
    """``i,j,true,inferred`` for every off-diagonal pair, 17 significant digits."""
    a, b = _pair(J_true, J_star)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["i", "j", "true", "inferred"])
        L = a.shape[0]
        for i in range(L):
            for j in range(L):
                if i != j:
                    w.writerow([i, j, f"{a[i, j]:.17g}", f"{b[i, j]:.17g}"])


def histogram(values, bins: int = 50):
    """Counts and edges for external plotting."""
    counts, edges = np.histogram(np.asarray(values, dtype=float), bins=bins)
    return counts, edges
