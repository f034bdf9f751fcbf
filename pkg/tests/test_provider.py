import json
import math

import numpy as np
import pytest

from semmark.encoding import (
    Corpus,
    SyntheticEncoder,
    SyntheticEncoderConfig,
    load_corpus,
    synthetic_texts,
)
from semmark.mapper import MapperModel, MapperTrainConfig, train_mapper
from semmark.numerics import l2_normalize
from semmark.partition import fit_partitioner, is_watermark_region, region_of, regions_of
from semmark.provider import (
    ProviderBundle,
    WatermarkedEncoder,
    batch_process,
    inject_batch,
    inject_embedding,
    process_text,
)
from semmark.weighting import build_lof_index, fit_weight_bounds

SEED = 42


@pytest.fixture(scope="module")
def bundle():
    enc = SyntheticEncoder(SyntheticEncoderConfig(seed=SEED))
    tex_m = synthetic_texts(600, seed=1)
    mapper = train_mapper(
        Corpus.from_matrix(enc.encode(tex_m), texts=tex_m),
        MapperTrainConfig(epochs=5, seed=SEED),
    )
    tex_s = synthetic_texts(500, seed=2)
    surrogate = Corpus.from_matrix(enc.encode(tex_s), texts=tex_s)
    part = fit_partitioner(surrogate, seed=SEED)
    lof_index = build_lof_index(surrogate, k=50)
    weights = fit_weight_bounds(lof_index)
    cfg = {
        "seed": SEED,
        "encoder": {"kind": "synthetic", "synthetic": enc.cfg.to_dict()},
    }
    return ProviderBundle(enc, part, mapper, lof_index, weights, cfg)


def texts_by_region(bundle, want_marked, n=5, seed=0):
    out = []
    for t in synthetic_texts(3000, seed=seed):
        e = bundle.encoder.encode_one(t)
        marked = is_watermark_region(bundle.partitioner, region_of(bundle.partitioner, e))
        if marked == want_marked:
            out.append(t)
            if len(out) == n:
                return out
    raise RuntimeError("not enough texts found")


# ---------------------------------------------------------------------------
# injection
# ---------------------------------------------------------------------------

def test_non_watermark_region_passthrough_bitwise(bundle):
    for t in texts_by_region(bundle, want_marked=False):
        e_o = bundle.encoder.encode_one(t)
        e_p, trace = inject_embedding(bundle, e_o)
        assert np.array_equal(e_p, e_o)
        assert not trace.watermarked
        assert trace.weight is None and trace.lof is None


def test_zero_weight_hook_returns_input_direction(bundle):
    for t in texts_by_region(bundle, want_marked=True):
        e_o = bundle.encoder.encode_one(t)
        e_p, trace = inject_embedding(bundle, e_o, weight_override=0.0)
        assert trace.watermarked
        assert np.allclose(e_p, l2_normalize(e_o), atol=1e-6)


def test_injection_geometry_closed_form():
    # unit e_o, unit e_w with cos = 0.5, u = 0.30:
    # cos(e_p, e_o) = 0.85 / sqrt(0.79)
    e_o = np.zeros(8)
    e_o[0] = 1.0
    e_w = np.zeros(8)
    e_w[0] = 0.5
    e_w[1] = math.sqrt(1 - 0.25)
    u = 0.30
    mix = (1 - u) * e_o + u * e_w
    got = float(mix @ e_o / np.linalg.norm(mix))
    assert got == pytest.approx(0.85 / math.sqrt(0.79), abs=1e-12)
    assert got == pytest.approx(0.9563, abs=1e-3)


def test_watermarked_outputs_unit_norm(bundle):
    texts = synthetic_texts(300, seed=5)
    mat = bundle.encoder.encode(texts)
    out, traces = inject_batch(bundle, mat)
    marked = [i for i, tr in enumerate(traces) if tr.watermarked]
    assert marked
    norms = np.linalg.norm(out[marked].astype(np.float64), axis=1)
    assert np.allclose(norms, 1.0, atol=1e-5)


def test_injection_only_touches_watermark_regions(bundle):
    texts = synthetic_texts(400, seed=6)
    mat = bundle.encoder.encode(texts)
    out, traces = inject_batch(bundle, mat)
    before = regions_of(bundle.partitioner, mat)
    for i, tr in enumerate(traces):
        assert tr.region == before[i]
        if not tr.watermarked:
            assert np.array_equal(out[i], mat[i])
        else:
            assert tr.weight is not None and 0.25 - 1e-9 <= tr.weight <= 0.30 + 1e-9
            assert tr.lof is not None


def test_mean_watermarked_cosine_floor(bundle):
    texts = synthetic_texts(1000, seed=7)
    mat = bundle.encoder.encode(texts)
    out, traces = inject_batch(bundle, mat)
    marked = [i for i, tr in enumerate(traces) if tr.watermarked]
    cos = np.sum(
        out[marked].astype(np.float64) * mat[marked].astype(np.float64), axis=1
    )
    assert cos.mean() >= 0.93


# ---------------------------------------------------------------------------
# text pipeline
# ---------------------------------------------------------------------------

def test_process_text_deterministic(bundle):
    t = synthetic_texts(1, seed=9)[0]
    v1, tr1 = process_text(bundle, t)
    v2, tr2 = process_text(bundle, t)
    assert np.array_equal(v1, v2)
    assert tr1.region == tr2.region


def test_process_text_unwatermarked_is_raw_encoding(bundle):
    t = texts_by_region(bundle, want_marked=False, n=1)[0]
    v, trace = process_text(bundle, t)
    assert not trace.watermarked
    assert np.array_equal(v, bundle.encoder.encode_one(t))


def test_watermarked_fraction_in_band(bundle):
    texts = synthetic_texts(1000, seed=11)
    _, traces = (
        bundle.encoder.encode(texts),
        inject_batch(bundle, bundle.encoder.encode(texts))[1],
    )
    frac = np.mean([tr.watermarked for tr in traces])
    assert 0.35 <= frac <= 0.65


# ---------------------------------------------------------------------------
# batch processing and files
# ---------------------------------------------------------------------------

def test_batch_process_empty(bundle, tmp_path):
    out, traces = batch_process(bundle, [], tmp_path / "o.jsonl")
    assert len(out) == 0 and traces == []
    assert (tmp_path / "o.jsonl").exists()


def test_batch_process_counts_and_order(bundle, tmp_path):
    texts = synthetic_texts(40, seed=13)
    out, traces = batch_process(bundle, texts, tmp_path / "o.jsonl")
    assert len(out) == 40 and len(traces) == 40
    assert out.texts() == texts
    back = load_corpus(tmp_path / "o.jsonl")
    assert back.ids() == out.ids()
    sidecar = (tmp_path / "o.jsonl.traces.jsonl").read_text().strip().splitlines()
    assert len(sidecar) == 40
    assert {"region", "watermarked"} <= set(json.loads(sidecar[0]).keys())


def test_batch_process_rerun_identical(bundle, tmp_path):
    texts = synthetic_texts(25, seed=14)
    batch_process(bundle, texts, tmp_path / "a.smk")
    batch_process(bundle, texts, tmp_path / "b.smk")
    assert (tmp_path / "a.smk").read_bytes() == (tmp_path / "b.smk").read_bytes()


def test_watermarked_encoder_matches_batch(bundle):
    texts = synthetic_texts(20, seed=15)
    enc = WatermarkedEncoder(bundle)
    a = enc.encode(texts)
    b, _ = inject_batch(bundle, bundle.encoder.encode(texts))
    assert np.array_equal(a, b)


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------

def test_bundle_save_load_roundtrip(bundle, tmp_path):
    d = tmp_path / "bundle"
    bundle.save(d)
    for name in ("config.json", "partition.json", "mapper.json", "lof.bin", "weights.json"):
        assert (d / name).exists()
    back = ProviderBundle.load(d)
    texts = synthetic_texts(30, seed=16)
    a, _ = batch_process(bundle, texts)
    b, _ = batch_process(back, texts)
    assert np.allclose(a.matrix(), b.matrix(), atol=1e-6)


def test_bundle_config_hashes(bundle, tmp_path):
    d = tmp_path / "bundle"
    bundle.save(d)
    cfg = json.loads((d / "config.json").read_text())
    assert set(cfg["hashes"]) == {"partition.json", "mapper.json", "lof.bin", "weights.json"}
    import hashlib

    want = hashlib.sha256((d / "mapper.json").read_bytes()).hexdigest()
    assert cfg["hashes"]["mapper.json"] == want
