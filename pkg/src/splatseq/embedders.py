"""Image embedders for similarity scoring.

The surrogate embedder is a deterministic, dependency-free stand-in built
from luminance layout, color histograms, and low-frequency DCT magnitudes;
all features are nonnegative, so cosine similarities land in [0, 1]. The
remote embedder is a thin HTTP client for the companion embedding service
(real CLIP features), with retries and a content-hash response cache.
"""

import base64
import hashlib
import io
import threading
import time

import numpy as np
import requests
import scipy.fft
from PIL import Image

from .images import luminance, resize_bilinear, to_uint8

SURROGATE_DIM = 256


class EmbedderError(RuntimeError):
    pass


class EmbedderConnectionError(EmbedderError):
    """Service unreachable after all retry attempts."""


class EmbedderProtocolError(EmbedderError):
    """Service answered, but not with a usable embedding response."""


class EmbedderDimensionError(EmbedderProtocolError):
    """Service returned a vector of unexpected dimension."""


class SurrogateEmbedder:
    """256-d embedding: 8x8 luminance grid (64), 16-bin per-channel color
    histograms (48), and magnitudes of the 12x12 lowest-frequency DCT block
    of the luminance (144).

    Each block is scaled to unit norm before concatenation so no single
    family (in particular the DCT DC term) dominates the cosine; the result
    is L2-normalized and nonnegative, so similarities land in [0, 1]."""

    identifier = "surrogate-v1"
    dim = SURROGATE_DIM

    def embed(self, image: np.ndarray) -> np.ndarray:
        image = np.asarray(image, dtype=np.float64)
        lum = luminance(image)
        lum64 = resize_bilinear(lum, 64, 64)

        grid = lum64.reshape(8, 8, 8, 8).mean(axis=(1, 3)).reshape(64)
        hists = [np.histogram(image[..., c], bins=16, range=(0.0, 1.0))[0]
                 for c in range(3)]
        hist = np.concatenate(hists).astype(np.float64)
        dct = scipy.fft.dctn(lum64, norm="ortho")
        low = np.abs(dct[:12, :12]).reshape(144)

        blocks = [grid, hist, low]
        feat = np.concatenate([b / max(np.linalg.norm(b), 1e-12) for b in blocks])
        return feat / np.linalg.norm(feat)


def image_content_hash(image: np.ndarray) -> str:
    arr = to_uint8(image)
    digest = hashlib.sha256()
    digest.update(str(arr.shape).encode())
    digest.update(arr.tobytes())
    return "sha256:" + digest.hexdigest()


def _encode_png(image: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(to_uint8(image), mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


class RemoteEmbedder:
    """Client for the embedding service's POST /embed endpoint.

    Transient failures are retried (3 attempts, exponential backoff);
    responses are cached by image content hash; at most `max_in_flight`
    requests run concurrently.
    """

    def __init__(self, endpoint: str, expected_dim: int = 512, timeout: float = 30.0,
                 retries: int = 3, retry_delay: float = 0.25, max_in_flight: int = 4,
                 session=None):
        self.endpoint = endpoint.rstrip("/")
        self.expected_dim = expected_dim
        self.timeout = timeout
        self.retries = retries
        self.retry_delay = retry_delay
        self._session = session or requests.Session()
        self._cache: dict[str, np.ndarray] = {}
        self._cache_lock = threading.Lock()
        self._gate = threading.Semaphore(max_in_flight)
        self.identifier = f"remote:{self.endpoint}"

    @property
    def dim(self) -> int:
        return self.expected_dim

    def _post_with_retries(self, payload: dict) -> dict:
        last_exc = None
        for attempt in range(self.retries):
            if attempt:
                time.sleep(self.retry_delay * 2 ** (attempt - 1))
            try:
                with self._gate:
                    resp = self._session.post(f"{self.endpoint}/embed", json=payload,
                                              timeout=self.timeout)
            except requests.RequestException as exc:
                last_exc = exc
                continue
            if resp.status_code >= 500:
                last_exc = EmbedderConnectionError(
                    f"service error {resp.status_code} from {self.endpoint}")
                continue
            if resp.status_code != 200:
                raise EmbedderProtocolError(
                    f"embed request rejected with status {resp.status_code}: {resp.text[:200]}")
            try:
                return resp.json()
            except ValueError as exc:
                raise EmbedderProtocolError(f"non-JSON embed response: {exc}") from exc
        raise EmbedderConnectionError(
            f"embedding service at {self.endpoint} unreachable after "
            f"{self.retries} attempts: {last_exc}")

    def embed(self, image: np.ndarray) -> np.ndarray:
        key = image_content_hash(image)
        with self._cache_lock:
            cached = self._cache.get(key)
        if cached is not None:
            return cached
        payload = {
            "image_b64": base64.b64encode(_encode_png(image)).decode("ascii"),
            "content_hash": key,
        }
        body = self._post_with_retries(payload)
        if not isinstance(body, dict) or "vector" not in body:
            raise EmbedderProtocolError(f"malformed embed response: {str(body)[:200]}")
        vector = np.asarray(body["vector"], dtype=np.float64)
        if vector.ndim != 1 or vector.shape[0] != self.expected_dim:
            raise EmbedderDimensionError(
                f"expected a {self.expected_dim}-d vector, got shape {vector.shape}")
        norm = np.linalg.norm(vector)
        if not np.isfinite(norm) or norm == 0.0:
            raise EmbedderProtocolError("embed response vector is zero or non-finite")
        vector = vector / norm
        with self._cache_lock:
            self._cache[key] = vector
        return vector

    def health_check(self) -> dict:
        try:
            resp = self._session.get(f"{self.endpoint}/health", timeout=self.timeout)
        except requests.RequestException as exc:
            raise EmbedderConnectionError(f"health check failed: {exc}") from exc
        if resp.status_code != 200:
            raise EmbedderConnectionError(f"service not ready: status {resp.status_code}")
        return resp.json()
