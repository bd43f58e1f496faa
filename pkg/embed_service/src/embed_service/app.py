"""JSON-over-HTTP surface for the CLIP encoder.

    POST /embed    {"image_b64": <base64 PNG>, "content_hash": optional str}
                   -> {"model": str, "dim": int, "vector": [float, ...],
                       "content_hash": str}
    GET  /health   -> {"model": str, "dim": int}  (503 until weights load)

Errors: 400 malformed request or undecodable image, 413 image over 16 MiB,
503 model not loaded. The service keeps no per-client state; an optional
on-disk cache keyed by the server-computed content hash makes repeated
evaluations cheap.

Environment: EMBED_SERVICE_MODEL (default openai/clip-vit-base-patch32),
EMBED_SERVICE_PREPROCESS (center-crop | squash), EMBED_SERVICE_CACHE_DIR,
EMBED_SERVICE_PORT.
"""

import base64
import binascii
import hashlib
import json
import os
from contextlib import asynccontextmanager
from pathlib import Path

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .encoder import DEFAULT_MODEL, ClipEncoder

MAX_IMAGE_BYTES = 16 * 1024 * 1024


def create_app(model_spec: str | None = None, preprocess: str | None = None,
               cache_dir: str | None = None, defer_load: bool = False) -> FastAPI:
    @asynccontextmanager
    async def lifespan(app: FastAPI):
        if not defer_load:
            app.state.load()
        yield

    app = FastAPI(title="embed-service", lifespan=lifespan)
    app.state.encoder = None
    app.state.model_spec = model_spec or os.environ.get("EMBED_SERVICE_MODEL", DEFAULT_MODEL)
    app.state.preprocess = preprocess or os.environ.get("EMBED_SERVICE_PREPROCESS",
                                                        "center-crop")
    cache_dir = cache_dir if cache_dir is not None \
        else os.environ.get("EMBED_SERVICE_CACHE_DIR")
    app.state.cache_dir = Path(cache_dir) if cache_dir else None

    def load() -> None:
        if app.state.encoder is None:
            app.state.encoder = ClipEncoder(app.state.model_spec, app.state.preprocess)

    app.state.load = load

    @app.get("/health")
    def health():
        encoder = app.state.encoder
        if encoder is None:
            return JSONResponse({"detail": "model not loaded"}, status_code=503)
        return {"model": encoder.model_id, "dim": encoder.dim}

    @app.post("/embed")
    async def embed(request: Request):
        encoder = app.state.encoder
        if encoder is None:
            return JSONResponse({"detail": "model not loaded"}, status_code=503)
        try:
            body = json.loads(await request.body())
        except (json.JSONDecodeError, UnicodeDecodeError):
            return JSONResponse({"detail": "request body must be JSON"}, status_code=400)
        if not isinstance(body, dict) or not isinstance(body.get("image_b64"), str):
            return JSONResponse({"detail": "missing image_b64 field"}, status_code=400)
        try:
            data = base64.b64decode(body["image_b64"], validate=True)
        except (binascii.Error, ValueError):
            return JSONResponse({"detail": "image_b64 is not valid base64"},
                                status_code=400)
        if len(data) > MAX_IMAGE_BYTES:
            return JSONResponse({"detail": "image exceeds 16 MiB"}, status_code=413)

        computed_hash = "sha256:" + hashlib.sha256(data).hexdigest()
        echo_hash = body.get("content_hash") or computed_hash

        cache_dir = app.state.cache_dir
        cache_path = None
        if cache_dir is not None:
            cache_dir.mkdir(parents=True, exist_ok=True)
            cache_path = cache_dir / f"{computed_hash.replace(':', '_')}.json"
            if cache_path.exists():
                cached = json.loads(cache_path.read_text())
                cached["content_hash"] = echo_hash
                return cached

        try:
            vector = encoder.embed_image_bytes(data)
        except Exception:
            return JSONResponse({"detail": "could not decode image"}, status_code=400)

        response = {
            "model": encoder.model_id,
            "dim": encoder.dim,
            "vector": vector.tolist(),
            "content_hash": echo_hash,
        }
        if cache_path is not None:
            cache_path.write_text(json.dumps(
                {k: response[k] for k in ("model", "dim", "vector")}))
        return response

    return app


def main() -> None:
    import uvicorn

    port = int(os.environ.get("EMBED_SERVICE_PORT", "8000"))
    uvicorn.run(create_app(), host="0.0.0.0", port=port)


if __name__ == "__main__":
    main()
