"""The defender's runtime: encode, route, and watermark embeddings.

A ProviderBundle holds everything the injection pipeline needs (encoder,
partitioner, mapping network, LOF index, weight bounds) and persists as a
directory of JSON/binary artifacts whose content hashes are recorded in
config.json.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import asdict, dataclass

import numpy as np

from .encoding import (
    Corpus,
    EmbeddingRecord,
    Encoder,
    RemoteEncoder,
    SyntheticEncoder,
    SyntheticEncoderConfig,
    save_binary,
    load_binary,
    save_corpus,
)
from .errors import DimensionMismatch
from .mapper import MapperModel
from .partition import LshPartitioner, is_watermark_region, regions_of
from .weighting import LofIndex, WeightConfig, adaptive_weight, lof_batch

BUNDLE_FILES = ("partition.json", "mapper.json", "lof.bin", "weights.json")


@dataclass
class InjectionTrace:
    region: int
    watermarked: bool
    weight: float | None = None
    lof: float | None = None
    degenerate: bool = False

    def to_dict(self) -> dict:
        return asdict(self)


class ProviderBundle:
    def __init__(
        self,
        encoder: Encoder,
        partitioner: LshPartitioner,
        mapper: MapperModel,
        lof_index: LofIndex,
        weights: WeightConfig,
        config: dict | None = None,
    ):
        if partitioner.input_dim != mapper.dim:
            raise DimensionMismatch("partitioner and mapper dims disagree")
        if lof_index.dim != mapper.dim:
            raise DimensionMismatch("LOF index and mapper dims disagree")
        self.encoder = encoder
        self.partitioner = partitioner
        self.mapper = mapper
        self.lof_index = lof_index
        self.weights = weights
        self.config = config or {}

    @property
    def dim(self) -> int:
        return self.mapper.dim

    # -- persistence --------------------------------------------------------

    def save(self, dirpath) -> None:
        os.makedirs(dirpath, exist_ok=True)
        with open(os.path.join(dirpath, "partition.json"), "w") as fh:
            json.dump(self.partitioner.to_dict(), fh)
        with open(os.path.join(dirpath, "mapper.json"), "w") as fh:
            json.dump(self.mapper.to_dict(), fh)
        save_binary(
            Corpus.from_matrix(self.lof_index.points.astype(np.float32)),
            os.path.join(dirpath, "lof.bin"),
        )
        weights = dict(self.weights.to_dict(), k=self.lof_index.k)
        with open(os.path.join(dirpath, "weights.json"), "w") as fh:
            json.dump(weights, fh)
        write_bundle_config(dirpath, self.config)

    @classmethod
    def load(cls, dirpath, api_key: str | None = None) -> "ProviderBundle":
        config = read_bundle_config(dirpath)
        with open(os.path.join(dirpath, "partition.json")) as fh:
            partitioner = LshPartitioner.from_dict(json.load(fh))
        with open(os.path.join(dirpath, "mapper.json")) as fh:
            mapper = MapperModel.from_dict(json.load(fh))
        with open(os.path.join(dirpath, "weights.json")) as fh:
            wdict = json.load(fh)
        surrogate = load_binary(os.path.join(dirpath, "lof.bin"))
        lof_index = LofIndex(surrogate.matrix(), int(wdict.pop("k")))
        weights = WeightConfig.from_dict(wdict)
        encoder = encoder_from_config(config.get("encoder", {}), api_key=api_key)
        return cls(encoder, partitioner, mapper, lof_index, weights, config)


def encoder_from_config(cfg: dict, api_key: str | None = None) -> Encoder:
    kind = cfg.get("kind", "synthetic")
    if kind == "synthetic":
        return SyntheticEncoder(SyntheticEncoderConfig.from_dict(cfg["synthetic"]))
    if kind == "remote":
        key = api_key or os.environ.get("SEMMARK_API_KEY")
        return RemoteEncoder(cfg["endpoint"], api_key=key)
    raise ValueError(f"unknown encoder kind {kind!r}")


def write_bundle_config(dirpath, config: dict) -> None:
    config = dict(config)
    hashes = {}
    for name in BUNDLE_FILES:
        path = os.path.join(dirpath, name)
        if os.path.exists(path):
            with open(path, "rb") as fh:
                hashes[name] = hashlib.sha256(fh.read()).hexdigest()
    config["hashes"] = hashes
    with open(os.path.join(dirpath, "config.json"), "w") as fh:
        json.dump(config, fh, indent=2)


def read_bundle_config(dirpath) -> dict:
    path = os.path.join(dirpath, "config.json")
    if not os.path.exists(path):
        return {}
    with open(path) as fh:
        return json.load(fh)


# ---------------------------------------------------------------------------
# injection
# ---------------------------------------------------------------------------

def inject_embedding(
    bundle: ProviderBundle, e_o: np.ndarray, weight_override: float | None = None
) -> tuple[np.ndarray, InjectionTrace]:
    """Watermark one embedding.

    Embeddings outside the watermark regions pass through bitwise
    unchanged; inside, the blend (1-u) e_o + u M(e_o) is renormalized.
    """
    e_o = np.asarray(e_o, dtype=np.float32)
    out, traces = inject_batch(bundle, e_o[None, :], weight_override)
    return out[0], traces[0]


def inject_batch(
    bundle: ProviderBundle, mat: np.ndarray, weight_override: float | None = None
) -> tuple[np.ndarray, list[InjectionTrace]]:
    mat = np.asarray(mat, dtype=np.float32)
    if mat.ndim != 2 or mat.shape[1] != bundle.dim:
        raise DimensionMismatch(f"expected (n, {bundle.dim}), got {mat.shape}")
    n = mat.shape[0]
    out = mat.copy()
    codes = regions_of(bundle.partitioner, mat)
    marked = np.array(
        [is_watermark_region(bundle.partitioner, int(c)) for c in codes], dtype=bool
    )
    traces = [
        InjectionTrace(region=int(codes[i]), watermarked=bool(marked[i])) for i in range(n)
    ]
    idx = np.where(marked)[0]
    if idx.size == 0:
        return out, traces

    x = mat[idx].astype(np.float64)
    signals = bundle.mapper.forward_batch(x)
    lofs = lof_batch(bundle.lof_index, x)
    for row, i in enumerate(idx):
        u = (
            weight_override
            if weight_override is not None
            else adaptive_weight(float(lofs[row]), bundle.weights)
        )
        tr = traces[i]
        tr.lof = float(lofs[row])
        tr.weight = float(u)
        mix = (1.0 - u) * x[row] + u * signals[row]
        norm = math.sqrt(float(np.dot(mix, mix)))
        if norm == 0.0:
            tr.degenerate = True
            out[i] = mat[i]
            continue
        out[i] = (mix / norm).astype(np.float32)
    return out, traces


def process_text(bundle: ProviderBundle, text: str) -> tuple[np.ndarray, InjectionTrace]:
    """Full pipeline for one query: encode then inject."""
    e_o = bundle.encoder.encode_one(text)
    return inject_embedding(bundle, e_o)


def process_texts(bundle: ProviderBundle, texts: list[str]):
    mat = bundle.encoder.encode(texts)
    return inject_batch(bundle, mat)


def batch_process(bundle: ProviderBundle, source, out_path=None):
    """Watermark a text list or corpus, order preserving.

    Returns (corpus, traces); when out_path is given also writes the corpus
    (format by extension) and a traces sidecar '<out_path>.traces.jsonl'.
    """
    if isinstance(source, Corpus):
        mat = source.matrix()
        ids = source.ids()
        texts = source.texts()
        if len(source) and mat.shape[1] != bundle.dim:
            raise DimensionMismatch(f"corpus dim {mat.shape[1]} != bundle dim {bundle.dim}")
        out_mat, traces = (
            inject_batch(bundle, mat) if len(source) else (mat, [])
        )
    else:
        texts = list(source)
        ids = [f"t{i}" for i in range(len(texts))]
        if texts:
            out_mat, traces = process_texts(bundle, texts)
        else:
            out_mat, traces = np.zeros((0, bundle.dim), dtype=np.float32), []
    corpus = Corpus(
        [
            EmbeddingRecord(id=i, vec=v, text=t)
            for i, v, t in zip(ids, out_mat, texts)
        ]
    )
    if out_path is not None:
        save_corpus(corpus, out_path)
        with open(f"{out_path}.traces.jsonl", "w") as fh:
            for tr in traces:
                fh.write(json.dumps(tr.to_dict()) + "\n")
    return corpus, traces


class WatermarkedEncoder(Encoder):
    """The provider seen from outside: encode + inject, as one encoder."""

    kind = "provider"

    def __init__(self, bundle: ProviderBundle):
        self.bundle = bundle
        self.dim = bundle.dim

    def encode(self, texts: list[str]) -> np.ndarray:
        if not texts:
            return np.zeros((0, self.dim), dtype=np.float32)
        out, _ = process_texts(self.bundle, texts)
        return out
