"""HTTP clients for remote backend services.

Wire protocol: every role is one POST endpoint taking and returning JSON,
with images and masks as base64 PNG.  Authentication is a bearer token
resolved from the environment variable named in the config; no other auth
scheme is supported.

Endpoint and api-key resolution honor the conventional environment
variables ``ERASEDRAW_<ROLE>_ENDPOINT`` and ``ERASEDRAW_<ROLE>_API_KEY``
(role uppercased), which override the config file.
"""

from __future__ import annotations

import os
import threading
from typing import Any

import httpx
import numpy as np

from insertkit.backends.base import (
    BackendConfig,
    Captioner,
    Embedder,
    Eraser,
    Generator,
    GroundingDetector,
    ObjectProposal,
    Segmenter,
)
from insertkit.backends.parsing import parse_caption_json
from insertkit.backends.retry import invoke_with_retry
from insertkit.core.geometry import BBox
from insertkit.core.image import RasterImage, b64_to_image, image_to_b64
from insertkit.core.mask import BinaryMask, b64_to_mask, mask_to_b64
from insertkit.errors import InvalidArgument, ParseError

ENV_PREFIX = "ERASEDRAW"


def endpoint_env_var(role: str) -> str:
    return f"{ENV_PREFIX}_{role.upper()}_ENDPOINT"


def api_key_env_var(role: str) -> str:
    return f"{ENV_PREFIX}_{role.upper()}_API_KEY"


def resolve_config(role: str, config: BackendConfig) -> BackendConfig:
    """Apply environment overrides for one role."""
    endpoint = os.environ.get(endpoint_env_var(role), config.endpoint)
    api_key_env = config.api_key_env or api_key_env_var(role)
    if endpoint == config.endpoint and api_key_env == config.api_key_env:
        return config
    return BackendConfig(
        endpoint=endpoint,
        api_key_env=api_key_env,
        timeout=config.timeout,
        max_retries=config.max_retries,
        temperature=config.temperature,
        max_in_flight=config.max_in_flight,
    )


class _HttpBackend:
    """Shared plumbing: auth header, retry policy, in-flight bound."""

    role = "backend"

    def __init__(self, config: BackendConfig, client: httpx.Client | None = None):
        self.config = resolve_config(self.role, config)
        self._client = client or httpx.Client(timeout=self.config.timeout)
        self._slots = threading.Semaphore(self.config.max_in_flight)
        self.identifier = f"http-{self.role}:{self.config.endpoint}"

    def _headers(self) -> dict[str, str]:
        headers = {}
        if self.config.api_key_env:
            token = os.environ.get(self.config.api_key_env, "")
            if token:
                headers["Authorization"] = f"Bearer {token}"
        return headers

    def _post(self, path: str, payload: dict[str, Any]) -> dict[str, Any]:
        url = self.config.endpoint.rstrip("/") + path
        headers = self._headers()

        def send() -> httpx.Response:
            with self._slots:
                return self._client.post(url, json=payload, headers=headers)

        response = invoke_with_retry(self.config, send)
        try:
            doc = response.json()
        except Exception as exc:
            raise ParseError(f"backend reply is not JSON: {exc}", raw_text=response.text) from exc
        if not isinstance(doc, dict):
            raise ParseError("backend reply must be a JSON object", raw_text=response.text)
        return doc


class HttpCaptioner(_HttpBackend, Captioner):
    role = "captioner"

    def describe(self, image: RasterImage) -> list[ObjectProposal]:
        doc = self._post("/describe", {"image_b64": image_to_b64(image)})
        raw = doc.get("raw_text")
        if not isinstance(raw, str):
            raise ParseError("describe reply missing raw_text", raw_text=str(doc))
        return parse_caption_json(raw)


class HttpGroundingDetector(_HttpBackend, GroundingDetector):
    """Speaks the 0..999 integer box convention used by grounding models;
    conversion to normalized coordinates happens here, at the client
    boundary."""

    role = "detector"

    def locate(self, image: RasterImage, phrase: str, temperature: float | None = None) -> BBox | None:
        if not phrase or not phrase.strip():
            raise InvalidArgument("grounding phrase must be nonempty")
        doc = self._post(
            "/locate",
            {
                "image_b64": image_to_b64(image),
                "phrase": phrase,
                "temperature": self.config.temperature if temperature is None else temperature,
            },
        )
        box = doc.get("box")
        if box is None:
            return None
        if not isinstance(box, (list, tuple)) or len(box) != 4:
            raise ParseError(f"locate reply box malformed: {box!r}", raw_text=str(doc))
        return BBox.from_thousandths(box)


class HttpSegmenter(_HttpBackend, Segmenter):
    role = "segmenter"

    def segment(self, image: RasterImage, box: BBox) -> BinaryMask:
        doc = self._post(
            "/segment",
            {"image_b64": image_to_b64(image), "box": list(box.to_thousandths())},
        )
        payload = doc.get("mask_b64")
        if not isinstance(payload, str):
            raise ParseError("segment reply missing mask_b64", raw_text=str(doc))
        mask = b64_to_mask(payload)
        if (mask.height, mask.width) != (image.height, image.width):
            raise ParseError("segment reply mask has wrong dimensions", raw_text="<binary>")
        return mask


class HttpEraser(_HttpBackend, Eraser):
    role = "eraser"

    def erase(self, image: RasterImage, mask: BinaryMask) -> RasterImage:
        doc = self._post(
            "/erase",
            {"image_b64": image_to_b64(image), "mask_b64": mask_to_b64(mask)},
        )
        payload = doc.get("image_b64")
        if not isinstance(payload, str):
            raise ParseError("erase reply missing image_b64", raw_text=str(doc))
        out = b64_to_image(payload)
        if (out.height, out.width) != (image.height, image.width):
            raise ParseError("erase reply image has wrong dimensions", raw_text="<binary>")
        return out


class HttpEmbedder(_HttpBackend, Embedder):
    role = "embedder"

    def __init__(self, config: BackendConfig, client: httpx.Client | None = None):
        super().__init__(config, client)
        self.dim = 0  # learned from the first reply

    def _vector(self, doc: dict[str, Any]) -> np.ndarray:
        vec = doc.get("vector")
        if not isinstance(vec, list) or not vec:
            raise ParseError("embed reply missing vector", raw_text=str(doc))
        arr = np.asarray(vec, dtype=np.float64)
        norm = np.linalg.norm(arr)
        if not np.isfinite(norm) or norm < 1e-12:
            raise ParseError("embed reply vector is degenerate", raw_text=str(doc))
        self.dim = arr.size
        return arr / norm

    def embed_image(self, image: RasterImage) -> np.ndarray:
        return self._vector(self._post("/embed", {"image_b64": image_to_b64(image)}))

    def embed_text(self, text: str) -> np.ndarray:
        return self._vector(self._post("/embed", {"text": text}))


class HttpGenerator(_HttpBackend, Generator):
    role = "generator"

    def edit(self, image: RasterImage, instruction: str, n: int = 1, seed: int = 0) -> list[RasterImage]:
        if n < 1:
            raise InvalidArgument(f"candidate count must be >= 1, got {n}")
        doc = self._post(
            "/edit",
            {
                "image_b64": image_to_b64(image),
                "instruction": instruction,
                "n": n,
                "seed": seed,
            },
        )
        payloads = doc.get("images_b64")
        if not isinstance(payloads, list) or len(payloads) != n:
            raise ParseError(f"edit reply must carry exactly {n} images", raw_text=str(doc))
        return [b64_to_image(p) for p in payloads]


HTTP_CLIENTS = {
    "captioner": HttpCaptioner,
    "detector": HttpGroundingDetector,
    "segmenter": HttpSegmenter,
    "eraser": HttpEraser,
    "embedder": HttpEmbedder,
    "generator": HttpGenerator,
}
