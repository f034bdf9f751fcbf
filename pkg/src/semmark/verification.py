"""Ownership verification.

Build a region-balanced verification set of ordinary texts, query the
suspect encoder, and compare how closely its outputs track the provider's
watermark signals inside vs outside the watermark regions. The verdict is
a two-sample KS test over the two cosine populations plus the mean gaps
delta_cos and delta_l2 (identically -2 * delta_cos on unit vectors).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .encoding import Corpus, Encoder
from .errors import DegenerateLabels, DimensionMismatch, PoolExhausted
from .numerics import ks_two_sample
from .partition import regions_of, is_watermark_region
from .provider import ProviderBundle
from .rng import generator

P_THRESHOLD = 0.05


@dataclass
class VerificationSet:
    watermark_texts: list[str]
    plain_texts: list[str]

    @property
    def m(self) -> int:
        return len(self.watermark_texts)


@dataclass
class VerificationReport:
    p_value: float
    delta_cos: float
    delta_l2: float
    n_w: int
    n_n: int
    cos_w: list[float] = field(repr=False, default_factory=list)
    cos_n: list[float] = field(repr=False, default_factory=list)
    ks_statistic: float = 0.0

    @property
    def delta_cos_x100(self) -> float:
        return 100.0 * self.delta_cos

    @property
    def delta_l2_x100(self) -> float:
        return 100.0 * self.delta_l2

    @property
    def verdict(self) -> str:
        if self.p_value >= P_THRESHOLD:
            return "clean"
        return "watermarked" if self.delta_cos > 0 else "inconclusive"

    def to_dict(self, include_samples: bool = True) -> dict:
        d = {
            "p_value": self.p_value,
            "delta_cos": self.delta_cos,
            "delta_l2": self.delta_l2,
            "delta_cos_x100": self.delta_cos_x100,
            "delta_l2_x100": self.delta_l2_x100,
            "n_w": self.n_w,
            "n_n": self.n_n,
            "ks_statistic": self.ks_statistic,
            "verdict": self.verdict,
        }
        if include_samples:
            d["cos_w"] = self.cos_w
            d["cos_n"] = self.cos_n
        return d

    def save(self, path, include_samples: bool = True) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(include_samples), fh, indent=2)

    def table(self) -> str:
        rows = [
            ("p-value", f"{self.p_value:.3g}"),
            ("delta cos (x100)", f"{self.delta_cos_x100:+.2f}"),
            ("delta L2  (x100)", f"{self.delta_l2_x100:+.2f}"),
            ("samples (w / n)", f"{self.n_w} / {self.n_n}"),
            ("verdict", self.verdict),
        ]
        width = max(len(k) for k, _ in rows)
        return "\n".join(f"{k:<{width}}  {v}" for k, v in rows)


def build_verification_set(
    pool: list[str], bundle: ProviderBundle, m: int = 500, seed: int = 0
) -> VerificationSet:
    """Split a text pool into m watermark-region and m plain-region texts.

    Texts are routed by the region of their ORIGINAL (unwatermarked)
    embedding, in seeded shuffled order; duplicates are dropped so the two
    sides stay disjoint.
    """
    seen = set()
    texts = [t for t in pool if not (t in seen or seen.add(t))]
    order = generator(seed, "verification-pool").permutation(len(texts))
    shuffled = [texts[i] for i in order]

    mat = bundle.encoder.encode(shuffled)
    codes = regions_of(bundle.partitioner, mat)
    side_w: list[str] = []
    side_n: list[str] = []
    for text, code in zip(shuffled, codes):
        if is_watermark_region(bundle.partitioner, int(code)):
            if len(side_w) < m:
                side_w.append(text)
        elif len(side_n) < m:
            side_n.append(text)
        if len(side_w) >= m and len(side_n) >= m:
            break
    if len(side_w) < m or len(side_n) < m:
        raise PoolExhausted(
            f"pool yielded {len(side_w)} watermark / {len(side_n)} plain texts, need {m}",
            n_watermark=len(side_w),
            n_plain=len(side_n),
        )
    return VerificationSet(watermark_texts=side_w, plain_texts=side_n)


def _side_cosines(
    vset_texts: list[str],
    bundle: ProviderBundle,
    suspect: Encoder,
    align: np.ndarray | None,
) -> np.ndarray:
    suspect_out = np.asarray(suspect.encode(vset_texts), dtype=np.float64)
    if align is not None:
        suspect_out = suspect_out @ align
    if suspect_out.shape[1] != bundle.dim:
        raise DimensionMismatch(
            f"suspect dim {suspect_out.shape[1]} != bundle dim {bundle.dim}; "
            "fit an alignment map first"
        )
    originals = bundle.encoder.encode(vset_texts).astype(np.float64)
    signals = bundle.mapper.forward_batch(originals)
    a = suspect_out / np.linalg.norm(suspect_out, axis=1, keepdims=True)
    b = signals / np.linalg.norm(signals, axis=1, keepdims=True)
    return np.clip(np.sum(a * b, axis=1), -1.0, 1.0)


def verify(
    vset: VerificationSet,
    bundle: ProviderBundle,
    suspect: Encoder,
    align: np.ndarray | None = None,
) -> VerificationReport:
    """Compare suspect-vs-watermark-signal similarity across the two sides."""
    cos_w = _side_cosines(vset.watermark_texts, bundle, suspect, align)
    cos_n = _side_cosines(vset.plain_texts, bundle, suspect, align)
    l2_w = 2.0 - 2.0 * cos_w
    l2_n = 2.0 - 2.0 * cos_n
    ks = ks_two_sample(cos_w, cos_n)
    return VerificationReport(
        p_value=ks.p_value,
        delta_cos=float(cos_w.mean() - cos_n.mean()),
        delta_l2=float(l2_w.mean() - l2_n.mean()),
        n_w=int(cos_w.size),
        n_n=int(cos_n.size),
        cos_w=cos_w.tolist(),
        cos_n=cos_n.tolist(),
        ks_statistic=ks.statistic,
    )


# ---------------------------------------------------------------------------
# harmlessness probe
# ---------------------------------------------------------------------------

def _train_probe_accuracy(
    mat: np.ndarray, labels: np.ndarray, seed: int, epochs: int = 200, lr: float = 0.1
) -> float:
    n, d = mat.shape
    classes = np.unique(labels)
    k = classes.size
    y = np.searchsorted(classes, labels)
    order = generator(seed, "probe-split").permutation(n)
    cut = int(0.8 * n)
    tr, ev = order[:cut], order[cut:]

    w = np.zeros((d, k))
    b = np.zeros(k)
    x_tr, y_tr = mat[tr], y[tr]
    onehot = np.eye(k)[y_tr]
    for _ in range(epochs):
        logits = x_tr @ w + b
        logits -= logits.max(axis=1, keepdims=True)
        p = np.exp(logits)
        p /= p.sum(axis=1, keepdims=True)
        g = (p - onehot) / x_tr.shape[0]
        w -= lr * (x_tr.T @ g)
        b -= lr * g.sum(axis=0)
    pred = np.argmax(mat[ev] @ w + b, axis=1)
    return float(np.mean(pred == y[ev]))


def utility_probe(
    original: Corpus, watermarked: Corpus, labels, seed: int = 0
) -> tuple[float, float]:
    """Linear-probe accuracy on both corpora with a shared 80/20 split."""
    labels = np.asarray(labels)
    if labels.shape[0] != len(original) or labels.shape[0] != len(watermarked):
        raise DimensionMismatch("labels must align with both corpora")
    if np.unique(labels).size < 2:
        raise DegenerateLabels("need at least 2 classes")
    acc_orig = _train_probe_accuracy(
        original.matrix().astype(np.float64), labels, seed
    )
    acc_wm = _train_probe_accuracy(
        watermarked.matrix().astype(np.float64), labels, seed
    )
    return acc_orig, acc_wm
