import numpy as np
import pytest
from fastapi.testclient import TestClient

from semmark.encoding import (
    Corpus,
    RemoteEncoder,
    SyntheticEncoder,
    SyntheticEncoderConfig,
    remote_encode,
    synthetic_texts,
)
from semmark.errors import AuthFailed, MalformedResponse, NetworkError
from semmark.mapper import MapperTrainConfig, train_mapper
from semmark.partition import fit_partitioner
from semmark.provider import ProviderBundle
from semmark.service import create_app
from semmark.weighting import build_lof_index, fit_weight_bounds


@pytest.fixture(scope="module")
def bundle():
    enc = SyntheticEncoder(SyntheticEncoderConfig(seed=3))
    tex = synthetic_texts(500, seed=1)
    mapper = train_mapper(
        Corpus.from_matrix(enc.encode(tex), texts=tex), MapperTrainConfig(epochs=3, seed=3)
    )
    tex_s = synthetic_texts(400, seed=2)
    surrogate = Corpus.from_matrix(enc.encode(tex_s), texts=tex_s)
    lof_index = build_lof_index(surrogate, k=50)
    return ProviderBundle(
        enc,
        fit_partitioner(surrogate, seed=3),
        mapper,
        lof_index,
        fit_weight_bounds(lof_index),
        {"encoder": {"kind": "synthetic", "synthetic": enc.cfg.to_dict()}},
    )


@pytest.fixture(scope="module")
def client(bundle):
    return TestClient(create_app(bundle))


def test_healthz(client):
    r = client.get("/healthz")
    assert r.status_code == 200
    assert r.json() == {"status": "ok"}


def test_empty_input(client):
    r = client.post("/v1/embeddings", json={"input": []})
    assert r.status_code == 200
    assert r.json() == {"data": []}


def test_three_texts(client, bundle):
    texts = synthetic_texts(3, seed=5)
    r = client.post("/v1/embeddings", json={"input": texts})
    assert r.status_code == 200
    data = r.json()["data"]
    assert [item["index"] for item in data] == [0, 1, 2]
    assert all(len(item["embedding"]) == bundle.dim for item in data)


def test_stealth_mode_default(client):
    r = client.post("/v1/embeddings", json={"input": synthetic_texts(1, seed=6)})
    assert "watermark" not in r.json()


def test_watermark_marker_when_stealth_off(bundle):
    c = TestClient(create_app(bundle, stealth=False))
    r = c.post("/v1/embeddings", json={"input": synthetic_texts(1, seed=6)})
    assert r.json()["watermark"] == "semmark"


def test_identical_requests_identical_embeddings(client):
    texts = synthetic_texts(2, seed=7)
    a = client.post("/v1/embeddings", json={"input": texts}).json()["data"]
    b = client.post("/v1/embeddings", json={"input": texts}).json()["data"]
    assert a == b


def test_malformed_body_400(client):
    assert client.post("/v1/embeddings", content=b"{oops").status_code == 400
    assert client.post("/v1/embeddings", json={"input": [1, 2]}).status_code == 400
    assert client.post("/v1/embeddings", json={"nope": []}).status_code == 400


def test_service_key_required(bundle):
    c = TestClient(create_app(bundle, service_key="sekrit"))
    r = c.post("/v1/embeddings", json={"input": ["ba ke"]})
    assert r.status_code == 401
    r = c.post(
        "/v1/embeddings",
        json={"input": ["ba ke"]},
        headers={"Authorization": "Bearer sekrit"},
    )
    assert r.status_code == 200


def test_upstream_failure_maps_to_502(bundle, monkeypatch):
    import semmark.service as service

    class FailingEncoder:
        dim = bundle.dim

        def encode(self, texts):
            raise NetworkError("upstream down")

    app = create_app(bundle, upstream="http://upstream.invalid/v1/embeddings")
    # swap in a deterministic failure instead of hitting the network
    for route in app.router.routes:
        pass
    c = TestClient(app)
    # replace the captured encoder inside the closure via the transport-less
    # RemoteEncoder: patch its _post_batch to raise
    monkeypatch.setattr(
        RemoteEncoder, "_post_batch", lambda self, texts: (_ for _ in ()).throw(NetworkError("down"))
    )
    r = c.post("/v1/embeddings", json={"input": ["ba ke"]})
    assert r.status_code == 502
    assert "retry-after" in {k.lower() for k in r.headers}


# ---------------------------------------------------------------------------
# remote client against the in-process service
# ---------------------------------------------------------------------------

def test_remote_encoder_roundtrip_through_service(bundle):
    import httpx

    app = create_app(bundle)
    tc = TestClient(app)

    def handler(request):
        r = tc.post(
            request.url.path,
            content=request.content,
            headers={"content-type": "application/json"},
        )
        return httpx.Response(r.status_code, json=r.json())

    enc = RemoteEncoder(
        "http://svc/v1/embeddings", transport=httpx.MockTransport(handler)
    )
    texts = synthetic_texts(5, seed=8)
    mat = enc.encode(texts)
    assert mat.shape == (5, bundle.dim)
    direct = tc.post("/v1/embeddings", json={"input": texts}).json()["data"]
    want = np.array([row["embedding"] for row in direct], dtype=np.float32)
    assert np.allclose(mat, want, atol=1e-6)


def test_remote_encode_empty_list_sends_nothing():
    calls = []

    import httpx

    def handler(request):
        calls.append(request)
        return httpx.Response(200, json={"data": []})

    corpus = remote_encode(
        "http://svc/x", None, [], transport=httpx.MockTransport(handler)
    )
    assert len(corpus) == 0
    assert calls == []


def test_remote_encode_reorders_permuted_indices():
    import httpx

    def handler(request):
        return httpx.Response(
            200,
            json={
                "data": [
                    {"index": 1, "embedding": [0.0, 1.0]},
                    {"index": 0, "embedding": [1.0, 0.0]},
                ]
            },
        )

    corpus = remote_encode(
        "http://svc/x", None, ["a", "b"], transport=httpx.MockTransport(handler)
    )
    assert np.allclose(corpus.matrix(), [[1.0, 0.0], [0.0, 1.0]])


def test_remote_encode_fixture_two_vectors():
    import httpx

    fixture = {
        "data": [
            {"index": 0, "embedding": [0.6, 0.8, 0.0]},
            {"index": 1, "embedding": [0.0, 0.6, 0.8]},
        ]
    }

    corpus = remote_encode(
        "http://svc/x",
        "key123",
        ["first", "second"],
        transport=httpx.MockTransport(lambda r: httpx.Response(200, json=fixture)),
    )
    assert len(corpus) == 2
    assert corpus.dim == 3


def test_remote_encode_auth_failed():
    import httpx

    with pytest.raises(AuthFailed):
        remote_encode(
            "http://svc/x",
            "bad",
            ["a"],
            transport=httpx.MockTransport(lambda r: httpx.Response(401)),
        )


def test_remote_encode_malformed_response():
    import httpx

    with pytest.raises(MalformedResponse):
        remote_encode(
            "http://svc/x",
            None,
            ["a"],
            transport=httpx.MockTransport(lambda r: httpx.Response(200, json={"weird": 1})),
        )


def test_remote_encode_retries_then_fails():
    import httpx

    attempts = []

    def handler(request):
        attempts.append(1)
        return httpx.Response(500)

    with pytest.raises(NetworkError):
        remote_encode(
            "http://svc/x", None, ["a"], transport=httpx.MockTransport(handler)
        )
    assert len(attempts) == 3
