"""The watermark mapping network.

A small residual feed-forward net turns an original embedding into its
semantics-derived watermark signal. Training balances two terms:

* consistency: pairwise output cosines track an amplified version of the
  pairwise input cosines, phi(x) = x + tau * (x - xbar), so nearby inputs
  get correlated signals and distant inputs get decorrelated ones;
* similarity: cos(e, M(e)) is pulled toward a fixed margin eta, keeping the
  signal related to, but distinct from, its source.

Forward, backward, and the AdamW optimizer are written out by hand so the
gradients can be validated against central finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .encoding import Corpus
from .errors import BatchTooSmall, CorpusTooSmall, DimensionMismatch, DivergedLoss
from .rng import derive_seed, generator


@dataclass
class MapperTrainConfig:
    tau: float = 1.5
    eta: float = 0.5
    lam: float = 0.5
    lr: float = 3e-3
    epochs: int = 100
    batch: int = 64
    seed: int = 0
    betas: tuple[float, float] = (0.9, 0.999)
    weight_decay: float = 0.01

    def __post_init__(self):
        if not (0.0 < self.eta < 1.0):
            raise ValueError("eta must lie in (0, 1)")
        if self.lam < 0 or self.lr <= 0:
            raise ValueError("lam must be >= 0 and lr > 0")

    def to_dict(self) -> dict:
        return {
            "tau": self.tau,
            "eta": self.eta,
            "lam": self.lam,
            "lr": self.lr,
            "epochs": self.epochs,
            "batch": self.batch,
            "seed": self.seed,
            "betas": list(self.betas),
            "weight_decay": self.weight_decay,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MapperTrainConfig":
        d = dict(d)
        if "betas" in d:
            d["betas"] = tuple(d["betas"])
        return cls(**d)


class MapperModel:
    """Residual blocks x -> x + W2 tanh(W1 x + b1) + b2, then a final affine."""

    def __init__(self, blocks, final_w, final_b, train_config=None, loss_trace=None):
        self.blocks = [tuple(np.asarray(a, dtype=np.float64) for a in blk) for blk in blocks]
        self.final_w = np.asarray(final_w, dtype=np.float64)
        self.final_b = np.asarray(final_b, dtype=np.float64)
        self.train_config = train_config
        self.loss_trace = list(loss_trace) if loss_trace else []

    @property
    def dim(self) -> int:
        return int(self.final_w.shape[0])

    def params(self) -> list[np.ndarray]:
        out = []
        for w1, b1, w2, b2 in self.blocks:
            out.extend([w1, b1, w2, b2])
        out.extend([self.final_w, self.final_b])
        return out

    def forward_batch(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.dim:
            raise DimensionMismatch(f"expected dim {self.dim}, got {x.shape[-1]}")
        for w1, b1, w2, b2 in self.blocks:
            x = x + np.tanh(x @ w1.T + b1) @ w2.T + b2
        return x @ self.final_w.T + self.final_b

    def _forward_cached(self, x: np.ndarray):
        """Forward keeping per-block activations for backprop."""
        cache = []
        for w1, b1, w2, b2 in self.blocks:
            a = np.tanh(x @ w1.T + b1)
            cache.append((x, a))
            x = x + a @ w2.T + b2
        y = x @ self.final_w.T + self.final_b
        return y, (cache, x)

    def _backward(self, grads_y: np.ndarray, ctx) -> list[np.ndarray]:
        cache, x_last = ctx
        g = grads_y
        d_final_w = g.T @ x_last
        d_final_b = g.sum(axis=0)
        dx = g @ self.final_w
        block_grads = []
        for (x_in, a), (w1, b1, w2, b2) in zip(reversed(cache), reversed(self.blocks)):
            dr = dx
            dw2 = dr.T @ a
            db2 = dr.sum(axis=0)
            da = dr @ w2
            dh = da * (1.0 - a * a)
            dw1 = dh.T @ x_in
            db1 = dh.sum(axis=0)
            dx = dx + dh @ w1
            block_grads.append([dw1, db1, dw2, db2])
        grads = []
        for blk in reversed(block_grads):
            grads.extend(blk)
        grads.extend([d_final_w, d_final_b])
        return grads

    def to_dict(self) -> dict:
        return {
            "input_dim": self.dim,
            "activation": "tanh",
            "blocks": [
                {"w1": w1.tolist(), "b1": b1.tolist(), "w2": w2.tolist(), "b2": b2.tolist()}
                for w1, b1, w2, b2 in self.blocks
            ],
            "final": {"w": self.final_w.tolist(), "b": self.final_b.tolist()},
            "train_config": self.train_config.to_dict() if self.train_config else None,
            "loss_trace": self.loss_trace,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MapperModel":
        blocks = [(blk["w1"], blk["b1"], blk["w2"], blk["b2"]) for blk in d["blocks"]]
        cfg = MapperTrainConfig.from_dict(d["train_config"]) if d.get("train_config") else None
        return cls(blocks, d["final"]["w"], d["final"]["b"], cfg, d.get("loss_trace"))


def _plane_rotation(dim: int) -> np.ndarray:
    """Skew-symmetric orthogonal map: rotates every 2-plane by 90 degrees.

    J e is orthogonal to e for every e, and J preserves inner products, so
    eta*I + sqrt(1-eta^2)*J maps any unit vector to a unit vector at angle
    arccos(eta) from it while preserving all pairwise cosines.
    """
    j = np.zeros((dim, dim))
    for i in range(0, dim - 1, 2):
        j[i, i + 1] = -1.0
        j[i + 1, i] = 1.0
    if dim % 2 == 1:
        j[dim - 1, dim - 1] = 0.0
    return j


def init_mapper(dim: int, seed: int, n_blocks: int = 2, eta: float = 0.5) -> MapperModel:
    """Seeded init starting at the similarity optimum.

    The final affine begins as the eta-angle rotation blend, which makes
    cos(e, M(e)) = eta for every input before any training; the residual
    branches start near zero, so training mostly has to learn the pairwise
    amplification.
    """
    rng = generator(seed, "mapper-init")
    scale = 1.0 / np.sqrt(dim)
    blocks = []
    for _ in range(n_blocks):
        w1 = rng.standard_normal((dim, dim)) * scale
        b1 = np.zeros(dim)
        w2 = rng.standard_normal((dim, dim)) * (scale * 0.1)
        b2 = np.zeros(dim)
        blocks.append((w1, b1, w2, b2))
    final_w = eta * np.eye(dim) + np.sqrt(max(0.0, 1.0 - eta * eta)) * _plane_rotation(dim)
    final_w += rng.standard_normal((dim, dim)) * (scale * 0.01)
    final_b = np.zeros(dim)
    return MapperModel(blocks, final_w, final_b)


def mapper_forward(m: MapperModel, e: np.ndarray) -> np.ndarray:
    """Watermark signal for a single embedding (output is not normalized)."""
    e = np.asarray(e, dtype=np.float64)
    if e.ndim != 1:
        raise DimensionMismatch("mapper_forward expects a single vector")
    return m.forward_batch(e[None, :])[0]


def phi(x: float, tau: float, xbar: float) -> float:
    """Amplify x away from the corpus mean cosine; clamp into cosine range."""
    return min(1.0, max(-1.0, x + tau * (x - xbar)))


@dataclass
class PairBatch:
    """A minibatch plus its precomputed input-cosine structure."""

    embeddings: np.ndarray        # (b, d) float64
    input_cosines: np.ndarray     # (b, b) symmetric
    xbar: float

    @classmethod
    def build(cls, embeddings: np.ndarray, xbar: float) -> "PairBatch":
        x = np.asarray(embeddings, dtype=np.float64)
        xn = x / np.linalg.norm(x, axis=1, keepdims=True)
        return cls(embeddings=x, input_cosines=np.clip(xn @ xn.T, -1.0, 1.0), xbar=xbar)


def _pair_targets(batch: PairBatch, tau: float) -> np.ndarray:
    c = batch.input_cosines
    return np.clip(c + tau * (c - batch.xbar), -1.0, 1.0)


def consistency_loss(m: MapperModel, batch: PairBatch, tau: float) -> float:
    """Mean |phi(cos(e_i, e_j)) - cos(M(e_i), M(e_j))| over unordered pairs."""
    b = batch.embeddings.shape[0]
    if b < 2:
        raise BatchTooSmall("consistency_loss needs at least 2 embeddings")
    y = m.forward_batch(batch.embeddings)
    yn = y / np.linalg.norm(y, axis=1, keepdims=True)
    cy = yn @ yn.T
    t = _pair_targets(batch, tau)
    iu = np.triu_indices(b, k=1)
    return float(np.mean(np.abs(t[iu] - cy[iu])))


def similarity_loss(m: MapperModel, batch: PairBatch, eta: float) -> float:
    """Mean |eta - cos(e_i, M(e_i))|."""
    x = batch.embeddings
    y = m.forward_batch(x)
    xn = x / np.linalg.norm(x, axis=1, keepdims=True)
    yn = y / np.linalg.norm(y, axis=1, keepdims=True)
    cos = np.sum(xn * yn, axis=1)
    return float(np.mean(np.abs(eta - cos)))


def total_loss(m: MapperModel, batch: PairBatch, cfg: MapperTrainConfig) -> float:
    return consistency_loss(m, batch, cfg.tau) + cfg.lam * similarity_loss(m, batch, cfg.eta)


def loss_and_grads(m: MapperModel, batch: PairBatch, cfg: MapperTrainConfig):
    """Total loss plus analytic gradients for every parameter."""
    x = batch.embeddings
    b = x.shape[0]
    if b < 2:
        raise BatchTooSmall("need at least 2 embeddings per batch")
    y, ctx = m._forward_cached(x)

    ny = np.linalg.norm(y, axis=1, keepdims=True)
    yn = y / ny
    cy = yn @ yn.T
    t = _pair_targets(batch, cfg.tau)
    iu = np.triu_indices(b, k=1)
    n_pairs = iu[0].size
    l_cons = float(np.mean(np.abs(t[iu] - cy[iu])))

    xn = x / np.linalg.norm(x, axis=1, keepdims=True)
    cos_self = np.sum(xn * yn, axis=1)
    l_sim = float(np.mean(np.abs(cfg.eta - cos_self)))
    loss = l_cons + cfg.lam * l_sim

    # d l_cons / d y: s[i,j] = sign(cy - t) / n_pairs over unordered pairs
    s = np.sign(cy - t) / n_pairs
    np.fill_diagonal(s, 0.0)
    row = np.sum(s * cy, axis=1, keepdims=True)
    g_cons = (s @ yn - row * yn) / ny

    # d l_sim / d y
    coef = (cfg.lam / b) * np.sign(cos_self - cfg.eta)
    g_sim = coef[:, None] * (xn - cos_self[:, None] * yn) / ny

    grads = m._backward(g_cons + g_sim, ctx)
    return loss, grads


def check_gradients(
    m: MapperModel, batch: PairBatch, cfg: MapperTrainConfig, eps: float = 1e-4
) -> float:
    """Max relative error of analytic gradients vs central finite differences."""
    _, grads = loss_and_grads(m, batch, cfg)
    worst = 0.0
    for p, g in zip(m.params(), grads):
        flat = p.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = total_loss(m, batch, cfg)
            flat[i] = orig - eps
            down = total_loss(m, batch, cfg)
            flat[i] = orig
            fd = (up - down) / (2.0 * eps)
            denom = max(abs(fd), abs(gflat[i]), 1e-6)
            worst = max(worst, abs(fd - gflat[i]) / denom)
    return worst


def estimate_mean_cosine(corpus: Corpus, n_pairs: int = 10_000, seed: int = 0) -> float:
    """Mean cosine over seeded random pairs; frozen before training starts."""
    n = len(corpus)
    if n < 2:
        raise CorpusTooSmall("need at least 2 records")
    mat = corpus.matrix().astype(np.float64)
    mat /= np.linalg.norm(mat, axis=1, keepdims=True)
    rng = generator(seed, "xbar-pairs")
    i = rng.integers(0, n, size=n_pairs)
    j = rng.integers(0, n - 1, size=n_pairs)
    j = np.where(j >= i, j + 1, j)
    return float(np.mean(np.sum(mat[i] * mat[j], axis=1)))


class AdamW:
    """Decoupled-weight-decay Adam over a flat parameter list."""

    def __init__(self, params, lr, betas=(0.9, 0.999), weight_decay=0.01, eps=1e-8):
        self.params = params
        self.lr = lr
        self.b1, self.b2 = betas
        self.wd = weight_decay
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self, grads) -> None:
        self.t += 1
        bc1 = 1.0 - self.b1**self.t
        bc2 = 1.0 - self.b2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * (g * g)
            p -= self.lr * ((m / bc1) / (np.sqrt(v / bc2) + self.eps) + self.wd * p)


def train_mapper(corpus: Corpus, cfg: MapperTrainConfig) -> MapperModel:
    """Train the mapping network with AdamW over shuffled minibatches.

    The scaling-center xbar is estimated once from seeded random pairs and
    frozen for the whole run. Returns the model with its per-epoch loss
    trace attached; raises DivergedLoss if the loss goes non-finite.
    """
    n = len(corpus)
    if n < 2 * cfg.batch:
        raise CorpusTooSmall(f"{n} records < 2 * batch ({2 * cfg.batch})")
    xbar = estimate_mean_cosine(corpus, seed=derive_seed(cfg.seed, "xbar"))
    model = init_mapper(corpus.dim, cfg.seed, eta=cfg.eta)
    model.train_config = cfg
    if cfg.epochs == 0:
        return model

    mat = corpus.matrix().astype(np.float64)
    opt = AdamW(model.params(), cfg.lr, cfg.betas, cfg.weight_decay)
    rng = generator(cfg.seed, "mapper-shuffle")
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        epoch_losses = []
        for start in range(0, n, cfg.batch):
            idx = order[start : start + cfg.batch]
            if idx.size < 2:
                continue
            batch = PairBatch.build(mat[idx], xbar)
            loss, grads = loss_and_grads(model, batch, cfg)
            if not np.isfinite(loss):
                raise DivergedLoss(f"non-finite loss at step {opt.t}")
            opt.step(grads)
            epoch_losses.append(loss)
        model.loss_trace.append(float(np.mean(epoch_losses)))

    # Calibrate the mean output norm to 1. Every training term is cosine
    # based, so a global output rescale is loss-neutral; it pins the scale
    # of the injected signal relative to the unit original embedding.
    mean_norm = float(np.mean(np.linalg.norm(model.forward_batch(mat), axis=1)))
    if mean_norm > 0:
        model.final_w /= mean_norm
        model.final_b /= mean_norm
    return model
