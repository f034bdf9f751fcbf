"""Shared linear algebra and statistics.

PCA (via SVD of the centered data matrix), pseudoinverse least-squares maps,
seeded k-means, unit-vector metrics, and a two-sample Kolmogorov-Smirnov
test. Matrices are float32 at rest; every reduction accumulates in float64.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import (
    DimensionMismatch,
    InsufficientSamples,
    NonFinite,
    RankDeficientWarning,
    TooFewPoints,
    ZeroVector,
)
from .rng import SplitMix64


# ---------------------------------------------------------------------------
# vector metrics
# ---------------------------------------------------------------------------

def l2_normalize(v: np.ndarray) -> np.ndarray:
    """Scale v to unit length. Raises ZeroVector on a zero input."""
    v = np.asarray(v)
    n = math.sqrt(float(np.dot(v.astype(np.float64), v.astype(np.float64))))
    if n == 0.0:
        raise ZeroVector("cannot normalize a zero vector")
    return (v / n).astype(v.dtype if v.dtype == np.float64 else np.float32)


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity, accumulated in float64 and clamped to [-1, 1]."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionMismatch(f"cosine: {a.shape} vs {b.shape}")
    na = math.sqrt(float(np.dot(a, a)))
    nb = math.sqrt(float(np.dot(b, b)))
    if na == 0.0 or nb == 0.0:
        raise ZeroVector("cosine of a zero vector is undefined")
    return min(1.0, max(-1.0, float(np.dot(a, b)) / (na * nb)))


def sq_l2_unit(a: np.ndarray, b: np.ndarray) -> float:
    """Squared Euclidean distance between a/|a| and b/|b|; equals 2 - 2 cos."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na = math.sqrt(float(np.dot(a, a)))
    nb = math.sqrt(float(np.dot(b, b)))
    if na == 0.0 or nb == 0.0:
        raise ZeroVector("sq_l2_unit of a zero vector is undefined")
    d = a / na - b / nb
    return float(np.dot(d, d))


def cosine_matrix(x: np.ndarray, y: np.ndarray | None = None) -> np.ndarray:
    """Pairwise cosine similarities between rows of x (and y), in float64."""
    x = np.asarray(x, dtype=np.float64)
    xn = x / np.linalg.norm(x, axis=1, keepdims=True)
    if y is None:
        c = xn @ xn.T
    else:
        y = np.asarray(y, dtype=np.float64)
        yn = y / np.linalg.norm(y, axis=1, keepdims=True)
        c = xn @ yn.T
    return np.clip(c, -1.0, 1.0)


# ---------------------------------------------------------------------------
# PCA
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PcaModel:
    mean: np.ndarray               # (d,)
    components: np.ndarray         # (h, d), orthonormal rows
    explained_variance: np.ndarray  # (h,), nonincreasing

    @property
    def input_dim(self) -> int:
        return int(self.mean.shape[0])

    @property
    def output_dim(self) -> int:
        return int(self.components.shape[0])

    def to_dict(self) -> dict:
        return {
            "mean": self.mean.tolist(),
            "components": self.components.tolist(),
            "explained_variance": self.explained_variance.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PcaModel":
        return cls(
            mean=np.asarray(d["mean"], dtype=np.float64),
            components=np.asarray(d["components"], dtype=np.float64),
            explained_variance=np.asarray(d["explained_variance"], dtype=np.float64),
        )


def fit_pca(data: np.ndarray, target_dim: int) -> PcaModel:
    """Top-target_dim principal subspace of mean-centered data, via SVD."""
    x = np.asarray(data, dtype=np.float64)
    if x.ndim != 2:
        raise DimensionMismatch("fit_pca expects a 2-D matrix")
    n, d = x.shape
    if not (1 <= target_dim <= d):
        raise DimensionMismatch(f"target_dim {target_dim} out of range for {d} columns")
    if n < target_dim:
        raise InsufficientSamples(f"{n} rows < target_dim {target_dim}")
    if not np.all(np.isfinite(x)):
        raise NonFinite("fit_pca input contains non-finite entries")

    mean = x.mean(axis=0)
    centered = x - mean
    _, s, vt = np.linalg.svd(centered, full_matrices=False)
    components = vt[:target_dim]
    # deterministic sign: largest-magnitude entry of each component positive
    idx = np.argmax(np.abs(components), axis=1)
    signs = np.sign(components[np.arange(target_dim), idx])
    signs[signs == 0] = 1.0
    components = components * signs[:, None]
    variance = (s[:target_dim] ** 2) / max(n - 1, 1)
    return PcaModel(mean=mean, components=components, explained_variance=variance)


def pca_transform(model: PcaModel, v: np.ndarray) -> np.ndarray:
    """Project v (or rows of v) onto the principal subspace: C @ (v - mean)."""
    v = np.asarray(v, dtype=np.float64)
    if v.shape[-1] != model.input_dim:
        raise DimensionMismatch(f"expected dim {model.input_dim}, got {v.shape[-1]}")
    return (v - model.mean) @ model.components.T


def pca_inverse_transform(model: PcaModel, y: np.ndarray) -> np.ndarray:
    """Map reduced coordinates back: mean + y @ components."""
    y = np.asarray(y, dtype=np.float64)
    if y.shape[-1] != model.output_dim:
        raise DimensionMismatch(f"expected dim {model.output_dim}, got {y.shape[-1]}")
    return model.mean + y @ model.components


# ---------------------------------------------------------------------------
# two-sample KS test
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class KsResult:
    statistic: float
    p_value: float
    n1: int
    n2: int


def _kolmogorov_sf(lam: float) -> float:
    """Two-sided Kolmogorov survival function 2 * sum (-1)^(k-1) exp(-2 k^2 lam^2)."""
    if lam < 0.01:
        return 1.0
    total = 0.0
    sign = 1.0
    k = 1
    while True:
        term = math.exp(-2.0 * (k * lam) ** 2)
        total += sign * term
        if term < 1e-12:
            break
        sign = -sign
        k += 1
    return min(1.0, max(0.0, 2.0 * total))


def ks_statistic(xs: np.ndarray, ys: np.ndarray) -> float:
    """Sup distance between the two empirical CDFs."""
    xs = np.sort(np.asarray(xs, dtype=np.float64))
    ys = np.sort(np.asarray(ys, dtype=np.float64))
    grid = np.concatenate([xs, ys])
    cdf1 = np.searchsorted(xs, grid, side="right") / xs.size
    cdf2 = np.searchsorted(ys, grid, side="right") / ys.size
    return float(np.max(np.abs(cdf1 - cdf2)))


def ks_two_sample(xs, ys) -> KsResult:
    """Two-sample KS test with the small-sample-corrected asymptotic p-value."""
    xs = np.asarray(list(xs), dtype=np.float64)
    ys = np.asarray(list(ys), dtype=np.float64)
    if xs.size < 2 or ys.size < 2:
        raise InsufficientSamples("ks_two_sample needs at least 2 samples per side")
    if not (np.all(np.isfinite(xs)) and np.all(np.isfinite(ys))):
        raise NonFinite("ks_two_sample input contains non-finite values")
    d = ks_statistic(xs, ys)
    n1, n2 = xs.size, ys.size
    ne = n1 * n2 / (n1 + n2)
    lam = (math.sqrt(ne) + 0.12 + 0.11 / math.sqrt(ne)) * d
    return KsResult(statistic=d, p_value=_kolmogorov_sf(lam), n1=int(n1), n2=int(n2))


# ---------------------------------------------------------------------------
# least squares / pseudoinverse
# ---------------------------------------------------------------------------

def least_squares_map(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """W minimizing ||XW - Y||_F via SVD pseudoinverse.

    Warns (RankDeficientWarning) when X has deficient column rank; the
    pseudoinverse solution is still the Frobenius-optimal one.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 2 or y.ndim != 2 or x.shape[0] != y.shape[0]:
        raise DimensionMismatch(f"incompatible shapes {x.shape} and {y.shape}")
    if x.shape[0] < x.shape[1]:
        raise InsufficientSamples(f"{x.shape[0]} rows < {x.shape[1]} columns")
    s = np.linalg.svd(x, compute_uv=False)
    tol = s[0] * max(x.shape) * np.finfo(np.float64).eps if s.size else 0.0
    if s.size == 0 or s[-1] <= tol:
        warnings.warn("least_squares_map: rank-deficient system", RankDeficientWarning)
    return np.linalg.pinv(x) @ y


# ---------------------------------------------------------------------------
# k-means
# ---------------------------------------------------------------------------

def _sq_dists_to(points: np.ndarray, centers: np.ndarray) -> np.ndarray:
    # (n, k) squared distances, float64
    return (
        np.sum(points**2, axis=1)[:, None]
        - 2.0 * points @ centers.T
        + np.sum(centers**2, axis=1)[None, :]
    )


def kmeans(
    data: np.ndarray, k: int, iters: int = 50, seed: int = 0, return_trace: bool = False
):
    """Lloyd iterations from seeded k-means++ starts; deterministic per seed.

    Returns (assignments, centroids) or, with return_trace, a third element
    holding the per-iteration inertia (nonincreasing). Empty clusters keep
    their previous centroid.
    """
    x = np.asarray(data, dtype=np.float64)
    n = x.shape[0]
    if k > n:
        raise TooFewPoints(f"k={k} exceeds {n} points")
    if k < 1 or iters < 1:
        raise ValueError("k and iters must be >= 1")

    rng = SplitMix64(seed)
    centers = np.empty((k, x.shape[1]), dtype=np.float64)
    centers[0] = x[rng.next_below(n)]
    best = np.sum((x - centers[0]) ** 2, axis=1)
    for j in range(1, k):
        total = float(best.sum())
        if total <= 0.0:
            centers[j] = x[rng.next_below(n)]
            continue
        r = rng.next_float() * total
        idx = int(np.searchsorted(np.cumsum(best), r, side="right"))
        centers[j] = x[min(idx, n - 1)]
        best = np.minimum(best, np.sum((x - centers[j]) ** 2, axis=1))

    assign = None
    trace = []
    for _ in range(iters):
        new_assign = np.argmin(_sq_dists_to(x, centers), axis=1)
        for j in range(k):
            members = x[new_assign == j]
            if members.shape[0] > 0:
                centers[j] = members.mean(axis=0)
        trace.append(kmeans_inertia(x, new_assign, centers))
        converged = assign is not None and np.array_equal(new_assign, assign)
        assign = new_assign
        if converged:
            break
    if return_trace:
        return assign, centers, trace
    return assign, centers


def kmeans_inertia(data: np.ndarray, assign: np.ndarray, centers: np.ndarray) -> float:
    x = np.asarray(data, dtype=np.float64)
    return float(np.sum((x - centers[assign]) ** 2))
