"""Evaluation adversaries.

* cse_attack: cluster victim outputs, score samples by how much their
  within-cluster cosine structure disagrees with a surrogate encoder's,
  and project the top principal components of the suspicious set out of
  every embedding.
* dim_attack: return PCA-reduced embeddings; align_dims fits the
  pseudoinverse map a defender uses to compare them anyway.
* detect_sampling_wrap: a suspect-side filter answering flagged queries
  with random unit vectors; train_detector builds the reference
  natural-vs-garbage text detector it needs.
* train_imitator: ridge-regression model stealing from a surrogate
  encoder onto victim outputs.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .encoding import Corpus, Encoder, SyntheticEncoderConfig, SyntheticEncoder
from .errors import BadDim, CorpusTooSmall, TooFewPoints, TooFewSamples
from .numerics import cosine_matrix, fit_pca, kmeans, least_squares_map, pca_transform
from .rng import generator, hash_text


# ---------------------------------------------------------------------------
# CSE: cluster / select / eliminate
# ---------------------------------------------------------------------------

@dataclass
class CseConfig:
    n_clusters: int = 20
    n_eliminate: int = 8          # 50 at d=1536 in the full-scale setting
    suspicious_fraction: float = 0.5
    surrogate: Encoder | None = None
    seed: int = 0
    kmeans_iters: int = 50

    def __post_init__(self):
        if not (0.0 < self.suspicious_fraction <= 1.0):
            raise ValueError("suspicious_fraction must lie in (0, 1]")


def cse_attack(victim_out: Corpus, texts: list[str], cfg: CseConfig) -> Corpus:
    """Strip shared watermark components from a stolen embedding corpus."""
    if len(victim_out) != len(texts):
        raise TooFewPoints("victim corpus and text list must align")
    if len(victim_out) < cfg.n_clusters:
        raise TooFewPoints(f"{len(victim_out)} points < {cfg.n_clusters} clusters")
    v = victim_out.matrix().astype(np.float64)
    d = v.shape[1]
    if cfg.n_eliminate >= d:
        raise BadDim(f"n_eliminate {cfg.n_eliminate} must be < dim {d}")

    if cfg.n_eliminate == 0:
        out = v / np.linalg.norm(v, axis=1, keepdims=True)
        return Corpus.from_matrix(
            out.astype(np.float32), ids=victim_out.ids(), texts=victim_out.texts()
        )

    s = np.asarray(cfg.surrogate.encode(texts), dtype=np.float64)
    assign, _ = kmeans(v, cfg.n_clusters, iters=cfg.kmeans_iters, seed=cfg.seed)

    cos_v = cosine_matrix(v)
    cos_s = cosine_matrix(s)
    disparity = np.abs(cos_v - cos_s)
    scores = np.zeros(len(victim_out))
    for j in range(cfg.n_clusters):
        members = np.where(assign == j)[0]
        if members.size < 2:
            continue
        sub = disparity[np.ix_(members, members)]
        scores[members] = (sub.sum(axis=1)) / (members.size - 1)

    n_sus = max(cfg.n_eliminate, int(round(cfg.suspicious_fraction * len(victim_out))))
    sus_idx = np.argsort(-scores)[:n_sus]
    pca = fit_pca(v[sus_idx], cfg.n_eliminate)

    out = v - (v @ pca.components.T) @ pca.components
    norms = np.linalg.norm(out, axis=1, keepdims=True)
    norms[norms == 0.0] = 1.0
    out /= norms
    return Corpus.from_matrix(
        out.astype(np.float32), ids=victim_out.ids(), texts=victim_out.texts()
    )


# ---------------------------------------------------------------------------
# dimensionality reduction + alignment
# ---------------------------------------------------------------------------

def dim_attack(corpus: Corpus, d_prime: int) -> Corpus:
    """Return the corpus reduced to d' dimensions by PCA fitted on itself."""
    d = corpus.dim
    if not (0 < d_prime < d):
        raise BadDim(f"d_prime must satisfy 0 < d' < {d}, got {d_prime}")
    pca = fit_pca(corpus.matrix(), d_prime)
    reduced = pca_transform(pca, corpus.matrix())
    return Corpus.from_matrix(
        reduced.astype(np.float32), ids=corpus.ids(), texts=corpus.texts()
    )


def align_dims(train_reduced: Corpus, train_target: Corpus) -> np.ndarray:
    """Least-squares map from reduced suspect outputs back to provider space.

    Fit on non-verification data; verify() then multiplies suspect outputs
    by the returned matrix before comparing.
    """
    if len(train_reduced) != len(train_target):
        raise TooFewSamples("row-aligned corpora required")
    return least_squares_map(train_reduced.matrix(), train_target.matrix())


# ---------------------------------------------------------------------------
# detect-sampling
# ---------------------------------------------------------------------------

@dataclass
class DetectorModel:
    """Two-feature logistic detector: token log-probability + bigram coverage."""

    unigram_logprob: dict[str, float]
    bigrams: set[str]
    floor_logprob: float
    feat_mean: np.ndarray
    feat_std: np.ndarray
    weights: np.ndarray        # (2,)
    bias: float
    threshold: float = 0.5

    def features(self, text: str) -> np.ndarray:
        tokens = text.split()
        if tokens:
            lp = float(
                np.mean([self.unigram_logprob.get(t, self.floor_logprob) for t in tokens])
            )
        else:
            lp = self.floor_logprob
        if len(tokens) >= 2:
            pairs = list(zip(tokens[:-1], tokens[1:]))
            cov = sum(1 for a, b in pairs if f"{a} {b}" in self.bigrams) / len(pairs)
        else:
            cov = 0.0
        return np.array([lp, cov])

    def score(self, text: str) -> float:
        z = (self.features(text) - self.feat_mean) / self.feat_std
        return 1.0 / (1.0 + math.exp(-(float(z @ self.weights) + self.bias)))

    def flags(self, text: str) -> bool:
        return self.score(text) > self.threshold

    def to_dict(self) -> dict:
        return {
            "unigram_logprob": self.unigram_logprob,
            "bigrams": sorted(self.bigrams),
            "floor_logprob": self.floor_logprob,
            "feat_mean": self.feat_mean.tolist(),
            "feat_std": self.feat_std.tolist(),
            "weights": self.weights.tolist(),
            "bias": self.bias,
            "threshold": self.threshold,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DetectorModel":
        return cls(
            unigram_logprob=dict(d["unigram_logprob"]),
            bigrams=set(d["bigrams"]),
            floor_logprob=d["floor_logprob"],
            feat_mean=np.asarray(d["feat_mean"]),
            feat_std=np.asarray(d["feat_std"]),
            weights=np.asarray(d["weights"]),
            bias=d["bias"],
            threshold=d.get("threshold", 0.5),
        )

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path) -> "DetectorModel":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def random_token_texts(vocab: list[str], lengths: list[int], seed: int) -> list[str]:
    """Abnormal queries: concatenations of uniformly sampled vocabulary tokens."""
    rng = generator(seed, "random-token-texts")
    return [
        " ".join(vocab[int(rng.integers(0, len(vocab)))] for _ in range(ln))
        for ln in lengths
    ]


def train_detector(
    normal_texts: list[str], vocab: list[str], seed: int = 0,
    steps: int = 500, lr: float = 0.5,
) -> DetectorModel:
    """Fit the natural-vs-random-token detector by logistic gradient descent."""
    if len(normal_texts) < 1000:
        raise CorpusTooSmall(f"need >= 1000 normal texts, got {len(normal_texts)}")
    if not vocab:
        raise CorpusTooSmall("vocabulary is empty")

    counts: dict[str, int] = {}
    bigrams: set[str] = set()
    total = 0
    for text in normal_texts:
        tokens = text.split()
        total += len(tokens)
        for t in tokens:
            counts[t] = counts.get(t, 0) + 1
        for a, b in zip(tokens[:-1], tokens[1:]):
            bigrams.add(f"{a} {b}")
    vocab_size = len(counts)
    unigram = {
        t: math.log((c + 1) / (total + vocab_size + 1)) for t, c in counts.items()
    }
    floor = math.log(1.0 / (total + vocab_size + 1))

    lengths = [max(1, len(t.split())) for t in normal_texts]
    abnormal = random_token_texts(vocab, lengths, seed)

    proto = DetectorModel(
        unigram_logprob=unigram,
        bigrams=bigrams,
        floor_logprob=floor,
        feat_mean=np.zeros(2),
        feat_std=np.ones(2),
        weights=np.zeros(2),
        bias=0.0,
    )
    feats = np.array([proto.features(t) for t in normal_texts + abnormal])
    labels = np.array([0.0] * len(normal_texts) + [1.0] * len(abnormal))
    mean = feats.mean(axis=0)
    std = feats.std(axis=0)
    std[std == 0.0] = 1.0
    z = (feats - mean) / std

    w = np.zeros(2)
    b = 0.0
    for _ in range(steps):
        p = 1.0 / (1.0 + np.exp(-(z @ w + b)))
        g = p - labels
        w -= lr * (z.T @ g) / len(labels)
        b -= lr * float(g.mean())

    proto.feat_mean = mean
    proto.feat_std = std
    proto.weights = w
    proto.bias = b
    return proto


class DetectSamplingEncoder(Encoder):
    """Suspect wrapper: flagged queries get a seeded random unit vector."""

    kind = "detect-sampling"

    def __init__(self, suspect: Encoder, detector: DetectorModel, seed: int = 0):
        self.suspect = suspect
        self.detector = detector
        self.seed = seed
        self.dim = suspect.dim

    def encode(self, texts: list[str]) -> np.ndarray:
        out = np.asarray(self.suspect.encode(texts), dtype=np.float32)
        self.dim = int(out.shape[1])
        for i, text in enumerate(texts):
            if self.detector.flags(text):
                g = generator(self.seed ^ hash_text(text), "detect-sample").standard_normal(
                    out.shape[1]
                )
                out[i] = (g / np.linalg.norm(g)).astype(np.float32)
        return out


def detect_sampling_wrap(
    suspect: Encoder, detector: DetectorModel, seed: int = 0
) -> DetectSamplingEncoder:
    return DetectSamplingEncoder(suspect, detector, seed)


# ---------------------------------------------------------------------------
# imitation
# ---------------------------------------------------------------------------

class ImitatorModel(Encoder):
    """Affine map from a surrogate encoder's space onto the victim's outputs."""

    kind = "imitator"

    def __init__(self, surrogate: Encoder, w_aug: np.ndarray):
        self.surrogate = surrogate
        self.w_aug = np.asarray(w_aug, dtype=np.float64)  # (s+1, d)
        self.dim = int(self.w_aug.shape[1])

    def encode(self, texts: list[str]) -> np.ndarray:
        x = np.asarray(self.surrogate.encode(texts), dtype=np.float64)
        aug = np.hstack([x, np.ones((x.shape[0], 1))])
        y = aug @ self.w_aug
        norms = np.linalg.norm(y, axis=1, keepdims=True)
        norms[norms == 0.0] = 1.0
        return (y / norms).astype(np.float32)

    def training_mse(self, texts: list[str], targets: Corpus) -> float:
        x = np.asarray(self.surrogate.encode(texts), dtype=np.float64)
        aug = np.hstack([x, np.ones((x.shape[0], 1))])
        pred = aug @ self.w_aug
        return float(np.mean((pred - targets.matrix().astype(np.float64)) ** 2))

    def to_dict(self) -> dict:
        if not isinstance(self.surrogate, SyntheticEncoder):
            raise ValueError("only synthetic-surrogate imitators are serializable")
        return {
            "surrogate": self.surrogate.cfg.to_dict(),
            "w_aug": self.w_aug.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ImitatorModel":
        return cls(
            SyntheticEncoder(SyntheticEncoderConfig.from_dict(d["surrogate"])),
            np.asarray(d["w_aug"]),
        )

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path) -> "ImitatorModel":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def train_imitator(
    texts: list[str],
    victim_outputs: Corpus,
    surrogate: Encoder,
    ridge: float = 1e-3,
) -> ImitatorModel:
    """Ridge least squares from surrogate embeddings (+bias) to victim outputs."""
    if len(texts) != len(victim_outputs):
        raise TooFewSamples("texts and victim outputs must align")
    x = np.asarray(surrogate.encode(texts), dtype=np.float64)
    if x.shape[0] < x.shape[1] + 1:
        raise TooFewSamples(f"{x.shape[0]} samples < {x.shape[1] + 1} features")
    aug = np.hstack([x, np.ones((x.shape[0], 1))])
    y = victim_outputs.matrix().astype(np.float64)
    gram = aug.T @ aug + ridge * np.eye(aug.shape[1])
    w = np.linalg.solve(gram, aug.T @ y)
    return ImitatorModel(surrogate, w)
