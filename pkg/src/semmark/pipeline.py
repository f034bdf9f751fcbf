"""End-to-end experiment plumbing: build a provider, steal it, verify it.

This module wires the library pieces into the seeded desk-scale scenarios
used by the experiment scripts and the acceptance suite: fit everything
from synthetic corpora, train imitators on watermarked or clean outputs,
apply removal attacks, and report verification outcomes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .attacks import (
    CseConfig,
    cse_attack,
    detect_sampling_wrap,
    dim_attack,
    align_dims,
    train_detector,
    train_imitator,
)
from .encoding import (
    Corpus,
    SyntheticEncoder,
    SyntheticEncoderConfig,
    synthetic_texts,
    synthetic_vocab,
)
from .mapper import MapperTrainConfig, train_mapper
from .partition import fit_partitioner, is_watermark_region, regions_of
from .provider import ProviderBundle, WatermarkedEncoder
from .rng import derive_seed
from .verification import VerificationReport, VerificationSet, build_verification_set, verify
from .weighting import build_lof_index, fit_weight_bounds


@dataclass
class PipelineConfig:
    dim: int = 64
    topics: int = 16
    noise_sigma: float = 0.25
    h_prime: int = 6
    c: int = 6
    alpha: float = 0.5
    lof_k: int = 50
    delta: float = 0.30
    epsilon: float = 0.05
    m: int = 500
    mapper_corpus_size: int = 6000
    surrogate_size: int = 2000
    steal_size: int = 5000
    pool_size: int = 5000
    mapper: MapperTrainConfig = field(default_factory=MapperTrainConfig)


def build_bundle(seed: int, cfg: PipelineConfig | None = None) -> ProviderBundle:
    """Fit a complete provider bundle from synthetic corpora, all seeded."""
    cfg = cfg or PipelineConfig()
    enc_cfg = SyntheticEncoderConfig(
        dim=cfg.dim, topics=cfg.topics, noise_sigma=cfg.noise_sigma, seed=seed
    )
    encoder = SyntheticEncoder(enc_cfg)

    mapper_texts = synthetic_texts(cfg.mapper_corpus_size, seed=derive_seed(seed, "mapper-corpus"))
    mapper_corpus = Corpus.from_matrix(encoder.encode(mapper_texts), texts=mapper_texts)
    train_cfg = MapperTrainConfig(**{**cfg.mapper.to_dict(), "seed": seed})
    train_cfg.betas = tuple(train_cfg.betas)
    mapper = train_mapper(mapper_corpus, train_cfg)

    surrogate_texts = synthetic_texts(cfg.surrogate_size, seed=derive_seed(seed, "surrogate"))
    surrogate = Corpus.from_matrix(encoder.encode(surrogate_texts), texts=surrogate_texts)
    partitioner = fit_partitioner(
        surrogate, h_prime=cfg.h_prime, c=cfg.c, alpha=cfg.alpha, seed=seed
    )
    lof_index = build_lof_index(surrogate, k=cfg.lof_k)
    weights = fit_weight_bounds(lof_index, delta=cfg.delta, epsilon=cfg.epsilon)

    config = {
        "seed": seed,
        "encoder": {"kind": "synthetic", "synthetic": enc_cfg.to_dict()},
        "h_prime": cfg.h_prime,
        "c": cfg.c,
        "alpha": cfg.alpha,
        "lof_k": cfg.lof_k,
        "m": cfg.m,
    }
    return ProviderBundle(encoder, partitioner, mapper, lof_index, weights, config)


@dataclass
class Scenario:
    """Everything one seed's experiments share."""

    seed: int
    cfg: PipelineConfig
    bundle: ProviderBundle
    steal_texts: list[str]
    raw_outputs: Corpus          # victim without watermarking
    watermarked_outputs: Corpus  # victim with watermarking
    vset: VerificationSet

    @property
    def attacker_surrogate(self) -> SyntheticEncoder:
        # the attacker's feature model: its own centroid frame, but clean
        # access to the shared per-text semantics (a strong public encoder)
        return SyntheticEncoder(
            SyntheticEncoderConfig(
                dim=self.cfg.dim,
                seed=derive_seed(self.seed, "attacker"),
                shared_fraction=1.0,
            )
        )


def build_scenario(seed: int, cfg: PipelineConfig | None = None) -> Scenario:
    cfg = cfg or PipelineConfig()
    bundle = build_bundle(seed, cfg)
    provider = WatermarkedEncoder(bundle)
    steal_texts = synthetic_texts(cfg.steal_size, seed=derive_seed(seed, "steal"))
    raw = Corpus.from_matrix(bundle.encoder.encode(steal_texts), texts=steal_texts)
    marked = Corpus.from_matrix(provider.encode(steal_texts), texts=steal_texts)
    pool = synthetic_texts(cfg.pool_size, seed=derive_seed(seed, "pool"))
    vset = build_verification_set(pool, bundle, m=cfg.m, seed=seed)
    return Scenario(seed, cfg, bundle, steal_texts, raw, marked, vset)


def verify_imitator_on(scn: Scenario, targets: Corpus) -> VerificationReport:
    imitator = train_imitator(scn.steal_texts, targets, scn.attacker_surrogate)
    return verify(scn.vset, scn.bundle, imitator)


def run_no_attack(scn: Scenario) -> VerificationReport:
    """Imitation on watermarked outputs; the headline detection scenario."""
    return verify_imitator_on(scn, scn.watermarked_outputs)


def run_clean_null(scn: Scenario) -> VerificationReport:
    """Imitation on unwatermarked outputs; must NOT be accused."""
    return verify_imitator_on(scn, scn.raw_outputs)


def run_cse(scn: Scenario) -> VerificationReport:
    attacked = cse_attack(
        scn.watermarked_outputs,
        scn.steal_texts,
        CseConfig(surrogate=scn.attacker_surrogate, seed=scn.seed),
    )
    return verify_imitator_on(scn, attacked)


def run_dim(scn: Scenario, d_prime: int = 48) -> VerificationReport:
    reduced = dim_attack(scn.watermarked_outputs, d_prime)
    imitator = train_imitator(scn.steal_texts, reduced, scn.attacker_surrogate)
    # defender aligns suspect outputs back to provider space on steal data
    suspect_out = Corpus.from_matrix(imitator.encode(scn.steal_texts))
    w_t = align_dims(suspect_out, scn.watermarked_outputs)
    return verify(scn.vset, scn.bundle, imitator, align=w_t)


def run_detect_sampling(scn: Scenario) -> VerificationReport:
    imitator = train_imitator(
        scn.steal_texts, scn.watermarked_outputs, scn.attacker_surrogate
    )
    detector_texts = synthetic_texts(2000, seed=derive_seed(scn.seed, "detector-normal"))
    detector = train_detector(detector_texts, synthetic_vocab(), seed=scn.seed)
    wrapped = detect_sampling_wrap(imitator, detector, seed=scn.seed)
    return verify(scn.vset, scn.bundle, wrapped)


def harmlessness(scn: Scenario) -> float:
    """Mean cos(e_p, e_o) over the samples that actually got watermarked."""
    raw = scn.raw_outputs.matrix().astype(np.float64)
    marked_mat = scn.watermarked_outputs.matrix().astype(np.float64)
    codes = regions_of(scn.bundle.partitioner, raw)
    in_region = np.array(
        [is_watermark_region(scn.bundle.partitioner, int(c)) for c in codes]
    )
    if not in_region.any():
        return 1.0
    return float(np.mean(np.sum(raw[in_region] * marked_mat[in_region], axis=1)))


def topic_labels(scn: Scenario) -> np.ndarray:
    enc = scn.bundle.encoder
    return np.array([enc.topic(t) for t in scn.steal_texts])
