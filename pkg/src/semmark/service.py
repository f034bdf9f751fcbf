"""HTTP face of the provider: a drop-in embeddings endpoint.

POST /v1/embeddings with {"input": [texts]} returns watermarked embeddings
in the common EaaS JSON shape. Stealth mode (default) leaves no watermark
marker in responses. The bundle is shared read-only across requests.
"""

from __future__ import annotations

import numpy as np
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .encoding import RemoteEncoder
from .errors import NetworkError
from .provider import ProviderBundle, inject_batch, process_texts


def create_app(
    bundle: ProviderBundle,
    stealth: bool = True,
    service_key: str | None = None,
    upstream: str | None = None,
    upstream_key: str | None = None,
) -> FastAPI:
    app = FastAPI()
    encoder = RemoteEncoder(upstream, api_key=upstream_key) if upstream else bundle.encoder

    @app.get("/healthz")
    def healthz():
        return {"status": "ok"}

    @app.post("/v1/embeddings")
    async def embeddings(request: Request):
        if service_key is not None:
            auth = request.headers.get("authorization", "")
            if auth != f"Bearer {service_key}":
                return JSONResponse(status_code=401, content={"error": "unauthorized"})
        try:
            body = await request.json()
        except Exception:
            return JSONResponse(status_code=400, content={"error": "invalid JSON body"})
        texts = body.get("input") if isinstance(body, dict) else None
        if isinstance(texts, str):
            texts = [texts]
        if not isinstance(texts, list) or any(not isinstance(t, str) or not t for t in texts):
            return JSONResponse(
                status_code=400, content={"error": "input must be a non-empty string list"}
            )
        if not texts:
            payload = {"data": []}
            if not stealth:
                payload["watermark"] = "semmark"
            return payload
        try:
            if encoder is bundle.encoder:
                mat, _ = process_texts(bundle, texts)
            else:
                raw = encoder.encode(texts)
                mat, _ = inject_batch(bundle, raw.astype(np.float32))
        except NetworkError as exc:
            return JSONResponse(
                status_code=502,
                content={"error": f"upstream failure: {exc}"},
                headers={"Retry-After": "1"},
            )
        payload = {
            "data": [
                {"index": i, "embedding": [float(x) for x in row]}
                for i, row in enumerate(mat)
            ]
        }
        if not stealth:
            payload["watermark"] = "semmark"
        return payload

    return app


def serve(
    bundle: ProviderBundle,
    bind_addr: str = "127.0.0.1:8080",
    upstream: str | None = None,
    stealth: bool = True,
    service_key: str | None = None,
) -> None:
    """Run the proxy until interrupted."""
    import uvicorn

    host, _, port = bind_addr.partition(":")
    app = create_app(
        bundle, stealth=stealth, service_key=service_key, upstream=upstream
    )
    uvicorn.run(app, host=host or "127.0.0.1", port=int(port or 8080), log_level="info")
