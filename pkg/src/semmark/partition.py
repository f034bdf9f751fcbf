"""Semantic-space partitioning.

PCA-reduce embeddings, hash them against random hyperplanes into 2^c sign
regions, and designate a seeded alpha-fraction of the regions as watermark
regions. Everything is immutable after fit and round-trips through JSON.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .encoding import Corpus
from .errors import BadAlpha, DimensionMismatch, InsufficientSamples
from .numerics import PcaModel, fit_pca, pca_transform
from .rng import SplitMix64, derive_seed, generator

MAX_HASH_BITS = 20


@dataclass(frozen=True)
class RegionId:
    code: int

    def __index__(self) -> int:
        return self.code


@dataclass(frozen=True)
class LshPartitioner:
    pca: PcaModel
    hyperplanes: np.ndarray     # (c, h') standard-normal rows
    watermark_bitmap: bytes     # 2^c bits, bit r = region r is watermarked
    alpha: float
    seed: int

    @property
    def c(self) -> int:
        return int(self.hyperplanes.shape[0])

    @property
    def n_regions(self) -> int:
        return 1 << self.c

    @property
    def input_dim(self) -> int:
        return self.pca.input_dim

    def to_dict(self) -> dict:
        return {
            "pca": self.pca.to_dict(),
            "hyperplanes": self.hyperplanes.tolist(),
            "watermark_bitmap": self.watermark_bitmap.hex(),
            "alpha": self.alpha,
            "seed": self.seed,
            "h_prime": self.pca.output_dim,
            "c": self.c,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LshPartitioner":
        return cls(
            pca=PcaModel.from_dict(d["pca"]),
            hyperplanes=np.asarray(d["hyperplanes"], dtype=np.float64),
            watermark_bitmap=bytes.fromhex(d["watermark_bitmap"]),
            alpha=float(d["alpha"]),
            seed=int(d["seed"]),
        )


def _bitmap_from_regions(regions: set[int], n_regions: int) -> bytes:
    buf = bytearray((n_regions + 7) // 8)
    for r in regions:
        buf[r // 8] |= 1 << (r % 8)
    return bytes(buf)


def bitmap_popcount(bitmap: bytes) -> int:
    return sum(bin(b).count("1") for b in bitmap)


def fit_partitioner(
    surrogate: Corpus, h_prime: int = 6, c: int = 6, alpha: float = 0.5, seed: int = 0
) -> LshPartitioner:
    """Fit PCA on the surrogate corpus, draw c hyperplanes, sample regions.

    Exactly round(alpha * 2^c) regions are chosen without replacement by a
    seeded Fisher-Yates prefix, so the same seed reproduces the region set.
    """
    if not (0.0 < alpha < 1.0):
        raise BadAlpha(f"alpha must lie in (0, 1), got {alpha}")
    if not (1 <= c <= MAX_HASH_BITS):
        raise BadAlpha(f"c must lie in [1, {MAX_HASH_BITS}], got {c}")
    if len(surrogate) < h_prime:
        raise InsufficientSamples(f"{len(surrogate)} rows < h'={h_prime}")

    pca = fit_pca(surrogate.matrix(), h_prime)
    planes = generator(seed, "lsh-hyperplanes").standard_normal((c, h_prime))

    n_regions = 1 << c
    n_marked = round(alpha * n_regions)
    order = list(range(n_regions))
    rng = SplitMix64(derive_seed(seed, "watermark-regions"))
    for i in range(n_regions - 1):
        j = i + rng.next_below(n_regions - i)
        order[i], order[j] = order[j], order[i]
    marked = set(order[:n_marked])

    return LshPartitioner(
        pca=pca,
        hyperplanes=planes,
        watermark_bitmap=_bitmap_from_regions(marked, n_regions),
        alpha=alpha,
        seed=seed,
    )


def region_of(p: LshPartitioner, e_o: np.ndarray) -> RegionId:
    """Sign region of one embedding; bit i=1 is the most significant bit.

    A projection exactly on a hyperplane (dot = 0) yields bit 0: the test is
    strictly 'greater than zero'.
    """
    e = np.asarray(e_o, dtype=np.float64)
    if e.ndim != 1 or e.shape[0] != p.input_dim:
        raise DimensionMismatch(f"expected dim {p.input_dim}, got {e.shape}")
    reduced = pca_transform(p.pca, e)
    code = 0
    for dot in p.hyperplanes @ reduced:
        code = (code << 1) | (1 if dot > 0.0 else 0)
    return RegionId(code)


def regions_of(p: LshPartitioner, mat: np.ndarray) -> np.ndarray:
    """Vectorized region codes for an (n, d) matrix."""
    mat = np.asarray(mat, dtype=np.float64)
    if mat.ndim != 2 or mat.shape[1] != p.input_dim:
        raise DimensionMismatch(f"expected (n, {p.input_dim}), got {mat.shape}")
    reduced = pca_transform(p.pca, mat)
    bits = (reduced @ p.hyperplanes.T) > 0.0
    weights = 1 << np.arange(p.c - 1, -1, -1)
    return bits.astype(np.int64) @ weights


def is_watermark_region(p: LshPartitioner, rid: RegionId | int) -> bool:
    code = int(rid if isinstance(rid, int) else rid.code)
    if not (0 <= code < p.n_regions):
        raise ValueError(f"region code {code} out of range")
    return bool((p.watermark_bitmap[code // 8] >> (code % 8)) & 1)


def region_histogram(p: LshPartitioner, corpus: Corpus) -> np.ndarray:
    """Occupancy count per region over a corpus."""
    counts = np.zeros(p.n_regions, dtype=np.int64)
    if len(corpus) == 0:
        return counts
    codes = regions_of(p, corpus.matrix())
    for code in codes:
        counts[code] += 1
    return counts
