"""Text/embedding ingestion, persistence, and the encoder abstraction.

Provides a deterministic synthetic semantic encoder for desk-scale
experiments plus a client for a remote JSON embeddings endpoint. Every
encoder in this package returns unit-norm float32 vectors.
"""

from __future__ import annotations

import json
import math
import struct
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    AuthFailed,
    BadMagic,
    DimMismatch,
    EmptyText,
    MalformedResponse,
    NetworkError,
    ParseError,
    TruncatedFile,
)
from .rng import derive_seed, generator, hash_bytes, hash_text

BINARY_MAGIC = b"SMK1"
BINARY_VERSION = 1


# ---------------------------------------------------------------------------
# corpus types
# ---------------------------------------------------------------------------

@dataclass
class EmbeddingRecord:
    id: str
    vec: np.ndarray
    text: str | None = None


class Corpus:
    """Ordered list of embedding records sharing one dimension, unique ids."""

    def __init__(self, records: list[EmbeddingRecord] | None = None):
        self.records: list[EmbeddingRecord] = []
        self._ids: set[str] = set()
        for r in records or []:
            self.append(r)

    def append(self, record: EmbeddingRecord) -> None:
        vec = np.asarray(record.vec, dtype=np.float32)
        if self.records and vec.shape[0] != self.dim:
            raise DimMismatch(
                f"record {record.id!r} has dim {vec.shape[0]}, corpus dim {self.dim}"
            )
        if record.id in self._ids:
            raise ValueError(f"duplicate record id {record.id!r}")
        record.vec = vec
        self._ids.add(record.id)
        self.records.append(record)

    @property
    def dim(self) -> int:
        if not self.records:
            return 0
        return int(self.records[0].vec.shape[0])

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def __getitem__(self, i):
        return self.records[i]

    def matrix(self) -> np.ndarray:
        """(n, d) float32 view of all vectors."""
        if not self.records:
            return np.zeros((0, 0), dtype=np.float32)
        return np.stack([r.vec for r in self.records])

    def ids(self) -> list[str]:
        return [r.id for r in self.records]

    def texts(self) -> list[str | None]:
        return [r.text for r in self.records]

    @classmethod
    def from_matrix(cls, mat: np.ndarray, ids=None, texts=None) -> "Corpus":
        mat = np.asarray(mat, dtype=np.float32)
        n = mat.shape[0]
        ids = ids if ids is not None else [str(i) for i in range(n)]
        texts = texts if texts is not None else [None] * n
        return cls([EmbeddingRecord(id=i, vec=v, text=t) for i, v, t in zip(ids, mat, texts)])


def normalize_corpus(corpus: Corpus, warn: bool = True) -> int:
    """Renormalize any record whose norm strays from 1; returns count fixed."""
    fixed = 0
    for r in corpus:
        n = float(np.linalg.norm(r.vec.astype(np.float64)))
        if abs(n - 1.0) > 1e-5:
            if n == 0.0:
                raise DimMismatch(f"record {r.id!r} is a zero vector")
            r.vec = (r.vec / n).astype(np.float32)
            fixed += 1
    if fixed and warn:
        import logging

        logging.getLogger(__name__).warning(
            "normalized %d non-unit embeddings at ingestion", fixed
        )
    return fixed


# ---------------------------------------------------------------------------
# encoders
# ---------------------------------------------------------------------------

class Encoder:
    """Common surface: batch-encode texts to an (n, dim) float32 matrix."""

    kind = "abstract"
    dim: int

    def encode(self, texts: list[str]) -> np.ndarray:
        raise NotImplementedError

    def encode_one(self, text: str) -> np.ndarray:
        return self.encode([text])[0]

    def encode_corpus(self, texts: list[str], id_prefix: str = "t") -> Corpus:
        mat = self.encode(texts)
        ids = [f"{id_prefix}{i}" for i in range(len(texts))]
        return Corpus.from_matrix(mat, ids=ids, texts=list(texts))


@dataclass(frozen=True)
class SyntheticEncoderConfig:
    """Topic-centroid-plus-noise toy encoder.

    centroid_gain sets how far apart topic clusters sit relative to the
    per-text noise (norm ratio gain : noise_sigma * sqrt(dim)); the per-text
    noise itself splits into a component every encoder sees the same way
    (shared_fraction of its variance, the text's intrinsic content) and an
    encoder-private remainder (this encoder's idiosyncrasies, which no
    other model can predict). Defaults are calibrated so topic clouds
    straddle several hash regions, imitation is effective but imperfect,
    and the whole verification property suite is satisfiable.
    """

    dim: int = 64
    topics: int = 16
    noise_sigma: float = 0.25
    seed: int = 0
    centroid_gain: float = 3.0
    shared_fraction: float = 0.75

    def __post_init__(self):
        if self.dim < 8:
            raise ValueError("dim must be >= 8")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if self.centroid_gain <= 0:
            raise ValueError("centroid_gain must be > 0")
        if not (0.0 <= self.shared_fraction <= 1.0):
            raise ValueError("shared_fraction must lie in [0, 1]")

    def to_dict(self) -> dict:
        return {
            "dim": self.dim,
            "topics": self.topics,
            "noise_sigma": self.noise_sigma,
            "seed": self.seed,
            "centroid_gain": self.centroid_gain,
            "shared_fraction": self.shared_fraction,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticEncoderConfig":
        return cls(**d)


def _topic_centroids(cfg: SyntheticEncoderConfig) -> np.ndarray:
    rng = generator(cfg.seed, "synthetic-centroids")
    c = rng.standard_normal((cfg.topics, cfg.dim))
    return cfg.centroid_gain * c / np.linalg.norm(c, axis=1, keepdims=True)


def _text_noise(cfg: SyntheticEncoderConfig, text: str) -> np.ndarray:
    shared = generator(hash_text(text), "synthetic-noise").standard_normal(cfg.dim)
    if cfg.shared_fraction >= 1.0:
        return shared
    private = generator(
        hash_text(text, seed=derive_seed(cfg.seed, "private-noise"))
    ).standard_normal(cfg.dim)
    rho = cfg.shared_fraction
    return math.sqrt(rho) * shared + math.sqrt(1.0 - rho) * private


def topic_of(cfg: SyntheticEncoderConfig, text: str) -> int:
    """Topic index: stable hash of the token multiset, order-insensitive."""
    tokens = sorted(text.split())
    return hash_bytes("\x00".join(tokens).encode("utf-8")) % cfg.topics


def synthetic_encode(cfg: SyntheticEncoderConfig, text: str) -> np.ndarray:
    """Deterministic toy semantic embedding: topic centroid plus text noise.

    The noise vector is seeded by the raw text alone, so two encoders with
    different seeds share the per-text component and differ only in their
    centroid frames (distinct services looking at the same semantics).
    """
    if not text:
        raise EmptyText("cannot encode an empty text")
    centroids = _topic_centroids(cfg)
    topic = topic_of(cfg, text)
    v = centroids[topic] + cfg.noise_sigma * _text_noise(cfg, text)
    n = math.sqrt(float(np.dot(v, v)))
    return (v / n).astype(np.float32)


class SyntheticEncoder(Encoder):
    kind = "synthetic"

    def __init__(self, cfg: SyntheticEncoderConfig):
        self.cfg = cfg
        self.dim = cfg.dim
        self._centroids = _topic_centroids(cfg)

    def encode(self, texts: list[str]) -> np.ndarray:
        out = np.empty((len(texts), self.dim), dtype=np.float32)
        sigma = self.cfg.noise_sigma
        for i, text in enumerate(texts):
            if not text:
                raise EmptyText(f"text #{i} is empty")
            topic = topic_of(self.cfg, text)
            v = self._centroids[topic] + sigma * _text_noise(self.cfg, text)
            out[i] = v / math.sqrt(float(np.dot(v, v)))
        return out

    def topic(self, text: str) -> int:
        return topic_of(self.cfg, text)


class RemoteEncoder(Encoder):
    """Client for an EaaS-style JSON endpoint: {"input": [...]} in,
    {"data": [{"index": i, "embedding": [...]}]} out."""

    kind = "remote"

    def __init__(
        self,
        endpoint: str,
        api_key: str | None = None,
        batch_size: int = 128,
        max_in_flight: int = 4,
        retries: int = 3,
        transport=None,
        timeout: float = 30.0,
    ):
        import httpx

        self.endpoint = endpoint
        self.api_key = api_key
        self.batch_size = batch_size
        self.max_in_flight = max_in_flight
        self.retries = retries
        self._client = httpx.Client(transport=transport, timeout=timeout)
        self.dim = -1  # discovered on first response

    def _post_batch(self, texts: list[str]) -> list[list[float]]:
        import httpx

        headers = {}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        last_exc: Exception | None = None
        for attempt in range(self.retries):
            try:
                resp = self._client.post(
                    self.endpoint, json={"input": texts}, headers=headers
                )
            except httpx.HTTPError as exc:
                last_exc = NetworkError(str(exc))
                time.sleep(0.2 * 2**attempt)
                continue
            if resp.status_code in (401, 403):
                raise AuthFailed(f"HTTP {resp.status_code} from {self.endpoint}")
            if resp.status_code >= 500:
                last_exc = NetworkError(f"HTTP {resp.status_code}")
                time.sleep(0.2 * 2**attempt)
                continue
            if resp.status_code != 200:
                raise NetworkError(f"HTTP {resp.status_code}: {resp.text[:200]}")
            try:
                payload = resp.json()
                items = payload["data"]
                out: list[list[float] | None] = [None] * len(texts)
                for item in items:
                    out[int(item["index"])] = item["embedding"]
            except (KeyError, TypeError, ValueError, IndexError) as exc:
                raise MalformedResponse(f"bad response shape: {exc}") from exc
            if any(v is None for v in out):
                raise MalformedResponse("response missing indices")
            return out  # type: ignore[return-value]
        raise last_exc or NetworkError("request failed")

    def encode(self, texts: list[str]) -> np.ndarray:
        if not texts:
            return np.zeros((0, max(self.dim, 0)), dtype=np.float32)
        batches = [
            texts[i : i + self.batch_size] for i in range(0, len(texts), self.batch_size)
        ]
        with ThreadPoolExecutor(max_workers=self.max_in_flight) as pool:
            results = list(pool.map(self._post_batch, batches))
        rows = [np.asarray(v, dtype=np.float32) for batch in results for v in batch]
        mat = np.stack(rows)
        self.dim = int(mat.shape[1])
        return mat


def remote_encode(
    endpoint: str, api_key: str | None, texts: list[str], **kwargs
) -> Corpus:
    """One-shot remote encoding preserving input order."""
    if not texts:
        return Corpus()
    enc = RemoteEncoder(endpoint, api_key=api_key, **kwargs)
    return enc.encode_corpus(texts)


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------

def save_jsonl(corpus: Corpus, path) -> None:
    """One record per line: {"id", "text"?, "vec"}; 9 significant digits."""
    with open(path, "w", encoding="utf-8") as fh:
        for r in corpus:
            obj = {"id": r.id, "vec": [float(f"{x:.9g}") for x in r.vec]}
            if r.text is not None:
                obj["text"] = r.text
            fh.write(json.dumps(obj) + "\n")


def load_jsonl(path) -> Corpus:
    corpus = Corpus()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                rec = EmbeddingRecord(
                    id=obj["id"],
                    vec=np.asarray(obj["vec"], dtype=np.float32),
                    text=obj.get("text"),
                )
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ParseError(f"line {lineno}: {exc}") from exc
            try:
                corpus.append(rec)
            except DimMismatch as exc:
                raise DimMismatch(f"line {lineno}: {exc}") from exc
    return corpus


def save_binary(corpus: Corpus, path) -> None:
    """Compact format: magic, u16 version, u32 dim, u64 count, f32 LE matrix,
    then a length-prefixed UTF-8 id table. Texts are not stored."""
    mat = corpus.matrix()
    with open(path, "wb") as fh:
        fh.write(BINARY_MAGIC)
        fh.write(struct.pack("<HIQ", BINARY_VERSION, corpus.dim, len(corpus)))
        fh.write(mat.astype("<f4").tobytes())
        for r in corpus:
            raw = r.id.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)


def load_binary(path) -> Corpus:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != BINARY_MAGIC:
        raise BadMagic(f"bad magic {data[:4]!r}")
    off = 4
    try:
        version, dim, count = struct.unpack_from("<HIQ", data, off)
    except struct.error as exc:
        raise TruncatedFile(f"truncated header at byte {off}", offset=off) from exc
    if version != BINARY_VERSION:
        raise ParseError(f"unsupported version {version}")
    off += struct.calcsize("<HIQ")
    need = count * dim * 4
    if len(data) < off + need:
        raise TruncatedFile(f"payload truncated at byte {len(data)}", offset=len(data))
    mat = np.frombuffer(data[off : off + need], dtype="<f4").reshape(count, dim)
    off += need
    ids = []
    for _ in range(count):
        if len(data) < off + 4:
            raise TruncatedFile(f"id table truncated at byte {off}", offset=off)
        (ln,) = struct.unpack_from("<I", data, off)
        off += 4
        if len(data) < off + ln:
            raise TruncatedFile(f"id table truncated at byte {off}", offset=off)
        ids.append(data[off : off + ln].decode("utf-8"))
        off += ln
    return Corpus.from_matrix(np.array(mat), ids=ids)


def save_corpus(corpus: Corpus, path) -> None:
    """Dispatch on extension: .jsonl -> JSONL, anything else -> binary."""
    if str(path).endswith(".jsonl"):
        save_jsonl(corpus, path)
    else:
        save_binary(corpus, path)


def load_corpus(path) -> Corpus:
    if str(path).endswith(".jsonl"):
        return load_jsonl(path)
    return load_binary(path)


# ---------------------------------------------------------------------------
# synthetic text pools
# ---------------------------------------------------------------------------

_SYLLABLES = [
    "ba", "be", "bi", "bo", "bu", "da", "de", "di", "do", "du",
    "ka", "ke", "ki", "ko", "ku", "la", "le", "li", "lo", "lu",
    "ma", "me", "mi", "mo", "mu", "na", "ne", "ni", "no", "nu",
    "ra", "re", "ri", "ro", "ru", "sa", "se", "si", "so", "su",
    "ta", "te", "ti", "to", "tu", "va", "ve", "vi", "vo", "vu",
]


def synthetic_vocab(size: int = 400, seed: int = 7) -> list[str]:
    """Deterministic pseudo-word vocabulary."""
    rng = generator(seed, "synthetic-vocab")
    words = []
    seen = set()
    while len(words) < size:
        n_syl = int(rng.integers(2, 5))
        w = "".join(_SYLLABLES[int(rng.integers(0, len(_SYLLABLES)))] for _ in range(n_syl))
        if w not in seen:
            seen.add(w)
            words.append(w)
    return words


_CHAIN_SEED = 4242          # fixed "language": one chain shared by all text pools
_CHAIN_SUCCESSORS = 6
_CHAIN_FOLLOW_P = 0.75


def _language_model(vocab: list[str]):
    """Zipf unigram weights plus a sparse successor table (the 'grammar')."""
    n = len(vocab)
    weights = 1.0 / np.power(np.arange(1, n + 1), 0.8)
    weights /= weights.sum()
    rng = generator(_CHAIN_SEED, "synthetic-language")
    successors = rng.choice(n, size=(n, _CHAIN_SUCCESSORS), p=weights)
    return weights, successors


def synthetic_texts(
    n: int, seed: int = 0, vocab: list[str] | None = None, min_len: int = 4, max_len: int = 12
) -> list[str]:
    """n distinct pseudo-natural texts from a seeded Markov chain.

    Word frequencies are Zipf-distributed and adjacent words mostly follow
    a fixed successor table, so these texts carry the unigram and bigram
    regularities that separate natural queries from random-token strings.
    """
    vocab = vocab if vocab is not None else synthetic_vocab()
    weights, successors = _language_model(vocab)
    nv = len(vocab)
    rng = generator(seed, "synthetic-texts")
    texts: list[str] = []
    seen = set()
    while len(texts) < n:
        ln = int(rng.integers(min_len, max_len + 1))
        idx = int(rng.choice(nv, p=weights))
        words = [vocab[idx]]
        for _ in range(ln - 1):
            if rng.random() < _CHAIN_FOLLOW_P:
                idx = int(successors[idx][int(rng.integers(0, _CHAIN_SUCCESSORS))])
            else:
                idx = int(rng.choice(nv, p=weights))
            words.append(vocab[idx])
        t = " ".join(words)
        if t not in seen:
            seen.add(t)
            texts.append(t)
    return texts
