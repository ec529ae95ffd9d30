"""Serve a backend suite over the wire protocol.

Mainly used to exercise the HTTP clients against the mock suite without a
network, and to run local demo deployments (`insertkit serve-backends`).
"""

from __future__ import annotations

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from insertkit.backends.base import BackendSuite
from insertkit.backends.parsing import serialize_proposals
from insertkit.core.geometry import BBox
from insertkit.core.image import b64_to_image, image_to_b64
from insertkit.core.mask import b64_to_mask, mask_to_b64
from insertkit.errors import InsertKitError, InvalidArgument


def create_backend_app(suite: BackendSuite) -> FastAPI:
    app = FastAPI(title="insertkit backend suite", docs_url=None, redoc_url=None)

    @app.exception_handler(InsertKitError)
    async def _on_error(request: Request, exc: InsertKitError):
        status = 400 if isinstance(exc, InvalidArgument) else 500
        return JSONResponse(status_code=status, content={"error": str(exc)})

    @app.post("/describe")
    async def describe(payload: dict):
        image = b64_to_image(_require(payload, "image_b64"))
        proposals = suite.captioner.describe(image)
        return {"raw_text": serialize_proposals(proposals)}

    @app.post("/locate")
    async def locate(payload: dict):
        image = b64_to_image(_require(payload, "image_b64"))
        phrase = _require(payload, "phrase")
        temperature = payload.get("temperature")
        box = suite.detector.locate(image, phrase, temperature)
        return {"box": None if box is None else list(box.to_thousandths())}

    @app.post("/segment")
    async def segment(payload: dict):
        image = b64_to_image(_require(payload, "image_b64"))
        box = BBox.from_thousandths(_require(payload, "box"))
        mask = suite.segmenter.segment(image, box)
        return {"mask_b64": mask_to_b64(mask)}

    @app.post("/erase")
    async def erase(payload: dict):
        image = b64_to_image(_require(payload, "image_b64"))
        mask = b64_to_mask(_require(payload, "mask_b64"))
        return {"image_b64": image_to_b64(suite.eraser.erase(image, mask))}

    @app.post("/embed")
    async def embed(payload: dict):
        if "text" in payload:
            vec = suite.embedder.embed_text(payload["text"])
        elif "image_b64" in payload:
            vec = suite.embedder.embed_image(b64_to_image(payload["image_b64"]))
        else:
            raise InvalidArgument("embed payload needs text or image_b64")
        return {"vector": [float(v) for v in vec]}

    @app.post("/edit")
    async def edit(payload: dict):
        if suite.generator is None:
            raise InvalidArgument("this suite has no generator role")
        image = b64_to_image(_require(payload, "image_b64"))
        instruction = _require(payload, "instruction")
        n = int(payload.get("n", 1))
        seed = int(payload.get("seed", 0))
        images = suite.generator.edit(image, instruction, n=n, seed=seed)
        return {"images_b64": [image_to_b64(img) for img in images]}

    return app


def _require(payload: dict, key: str):
    if key not in payload:
        raise InvalidArgument(f"payload missing required field {key!r}")
    return payload[key]
