"""Semantic-aware watermarking for embedding services."""

__version__ = "0.1.0"

from .encoding import (
    Corpus,
    EmbeddingRecord,
    Encoder,
    SyntheticEncoder,
    SyntheticEncoderConfig,
    load_corpus,
    save_corpus,
)
from .mapper import MapperModel, MapperTrainConfig, train_mapper
from .partition import LshPartitioner, fit_partitioner, region_of
from .provider import ProviderBundle, inject_embedding, process_text
from .verification import VerificationReport, VerificationSet, build_verification_set, verify
from .weighting import WeightConfig, adaptive_weight, build_lof_index

__all__ = [
    "Corpus",
    "EmbeddingRecord",
    "Encoder",
    "SyntheticEncoder",
    "SyntheticEncoderConfig",
    "load_corpus",
    "save_corpus",
    "MapperModel",
    "MapperTrainConfig",
    "train_mapper",
    "LshPartitioner",
    "fit_partitioner",
    "region_of",
    "ProviderBundle",
    "inject_embedding",
    "process_text",
    "VerificationReport",
    "VerificationSet",
    "build_verification_set",
    "verify",
    "WeightConfig",
    "adaptive_weight",
    "build_lof_index",
]
