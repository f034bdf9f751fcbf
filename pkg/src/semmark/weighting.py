"""Local Outlier Factor over the surrogate set and the adaptive weight.

Outliers get the full watermark strength delta, dense interior points get
delta - epsilon, and everything between is linearly interpolated by where
its LOF falls inside the surrogate's observed [l_min, l_max] band.

Neighborhoods are k-distance neighborhoods with ties included, reachability
uses reach(p, i) = max(d_k(i), d(p, i)), and the search is exact O(n^2):
surrogate sets stay small and determinism beats speed here.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .encoding import Corpus
from .errors import DimensionMismatch, TooFewPoints

DUPLICATE_DENSITY = 1e12  # density sentinel when d_k(p) == 0 (>= k exact duplicates)


@dataclass
class WeightConfig:
    delta: float = 0.30
    epsilon: float = 0.05
    l_min: float = 1.0
    l_max: float = 1.0

    def __post_init__(self):
        if not (0.0 < self.epsilon < self.delta < 1.0):
            raise ValueError("need 0 < epsilon < delta < 1")
        if self.l_min > self.l_max:
            raise ValueError("l_min must not exceed l_max")

    def to_dict(self) -> dict:
        return {
            "delta": self.delta,
            "epsilon": self.epsilon,
            "l_min": self.l_min,
            "l_max": self.l_max,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "WeightConfig":
        return cls(
            delta=d["delta"], epsilon=d["epsilon"], l_min=d["l_min"], l_max=d["l_max"]
        )


class LofIndex:
    """Precomputed k-distances, densities, and LOFs for the surrogate points."""

    def __init__(self, points: np.ndarray, k: int):
        points = np.asarray(points, dtype=np.float64)
        n = points.shape[0]
        if n < k + 1:
            raise TooFewPoints(f"need at least k+1={k + 1} points, got {n}")
        self.points = points
        self.k = k

        d2 = self._sq_dists(points, points)
        np.fill_diagonal(d2, np.inf)
        dists = np.sqrt(np.maximum(d2, 0.0))

        # k-distance = k-th smallest distance to another point
        part = np.partition(dists, k - 1, axis=1)
        self.k_dist = part[:, k - 1].copy()

        # neighborhoods include ties at the k-distance
        self._neighbors = [np.where(dists[i] <= self.k_dist[i])[0] for i in range(n)]
        self.density = np.empty(n)
        for i in range(n):
            nb = self._neighbors[i]
            reach = np.maximum(self.k_dist[nb], dists[i, nb])
            total = float(reach.sum())
            self.density[i] = DUPLICATE_DENSITY if total == 0.0 else len(nb) / total

        self.point_lof = np.empty(n)
        for i in range(n):
            nb = self._neighbors[i]
            self.point_lof[i] = float(np.mean(self.density[nb] / self.density[i]))

    @property
    def dim(self) -> int:
        return int(self.points.shape[1])

    @staticmethod
    def _sq_dists(a: np.ndarray, b: np.ndarray) -> np.ndarray:
        return (
            np.sum(a**2, axis=1)[:, None]
            - 2.0 * a @ b.T
            + np.sum(b**2, axis=1)[None, :]
        )


def build_lof_index(surrogate: Corpus | np.ndarray, k: int = 50) -> LofIndex:
    points = surrogate.matrix() if isinstance(surrogate, Corpus) else surrogate
    return LofIndex(points, k)


def lof_batch(index: LofIndex, queries: np.ndarray) -> np.ndarray:
    """LOF of each query row against the surrogate set.

    Queries coinciding exactly with an index point exclude those matches
    from their own neighborhood, so querying a surrogate point reproduces
    its precomputed LOF.
    """
    q = np.asarray(queries, dtype=np.float64)
    if q.ndim != 2 or q.shape[1] != index.dim:
        raise DimensionMismatch(f"expected (n, {index.dim}), got {q.shape}")
    d2 = LofIndex._sq_dists(q, index.points)
    exact = d2 <= 0.0
    same_vec = np.zeros_like(exact)
    if exact.any():
        # distance zero can also mean a true duplicate pair in the data;
        # only exact coordinate matches are treated as "self"
        rows, cols = np.where(exact)
        for r, c in zip(rows, cols):
            same_vec[r, c] = bool(np.array_equal(q[r], index.points[c]))
    dists = np.sqrt(np.maximum(d2, 0.0))
    dists[same_vec] = np.inf

    out = np.empty(q.shape[0])
    k = index.k
    for i in range(q.shape[0]):
        row = dists[i]
        kth = np.partition(row, k - 1)[k - 1]
        nb = np.where(row <= kth)[0]
        reach = np.maximum(index.k_dist[nb], row[nb])
        total = float(reach.sum())
        rho_q = DUPLICATE_DENSITY if total == 0.0 else len(nb) / total
        out[i] = float(np.mean(index.density[nb] / rho_q))
    return out


def lof(index: LofIndex, q: np.ndarray) -> float:
    q = np.asarray(q, dtype=np.float64)
    if q.ndim != 1:
        raise DimensionMismatch("lof expects a single vector")
    return float(lof_batch(index, q[None, :])[0])


def fit_weight_bounds(
    index: LofIndex, delta: float = 0.30, epsilon: float = 0.05
) -> WeightConfig:
    """l_min / l_max are the extreme LOFs of the surrogate points themselves."""
    return WeightConfig(
        delta=delta,
        epsilon=epsilon,
        l_min=float(index.point_lof.min()),
        l_max=float(index.point_lof.max()),
    )


def adaptive_weight(l_o: float, cfg: WeightConfig) -> float:
    """Piecewise injection weight in [delta - epsilon, delta], monotone in LOF."""
    if l_o > cfg.l_max:
        return cfg.delta
    if l_o < cfg.l_min:
        return cfg.delta - cfg.epsilon
    if cfg.l_max == cfg.l_min:
        return cfg.delta - cfg.epsilon / 2.0
    frac = (l_o - cfg.l_min) / (cfg.l_max - cfg.l_min)
    return cfg.delta - cfg.epsilon + frac * cfg.epsilon
