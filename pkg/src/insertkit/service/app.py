"""HTTP session service for human-steered iterative composition.

REST surface (JSON bodies unless noted; errors are {code, reason} and 502
adds "retriable": true):

    POST /api/sessions            multipart field "image"        -> {id}
    GET  /api/sessions/{id}                                      -> history
    POST /api/sessions/{id}/steps {instruction, n?, seed?, replace?}
                                  -> {candidates: [{id, url, score}]} desc
    POST /api/sessions/{id}/select {candidate_id}                -> history
    POST /api/sessions/{id}/beam  {instructions, k?, n?, seed?}  -> {job_id}
    GET  /api/jobs/{job_id}                 -> {status, trace_url?, error?}
    GET  /healthz                                                -> {status}
    GET  /media/...               static candidate images and beam traces

The session state machine allows exactly one pending candidate set; a second
step request without replace=true gets 409 pending-exists, and selecting
with nothing pending gets 409 no-pending.  Generation runs under the session
lock, so concurrent step requests on one session serialize: one wins, the
other observes the pending set.
"""

from __future__ import annotations

import tempfile
import threading
from contextlib import asynccontextmanager
from dataclasses import dataclass, field
from pathlib import Path

from fastapi import FastAPI, File, Request, UploadFile
from fastapi.exceptions import RequestValidationError
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel

from insertkit.backends.base import Embedder, Generator
from insertkit.compose import EditPlan, beam_search, clip_score, write_beam_trace
from insertkit.core.image import RasterImage
from insertkit.errors import InvalidArgument, ParseError
from insertkit.seeds import derive_seed
from insertkit.service.state import (
    Candidate,
    CommittedStep,
    JobStore,
    PendingSet,
    SessionStore,
)


# Server-derived seeds are masked to 48 bits so every seed in a session
# document survives a JSON round-trip through an IEEE-754 double (the only
# number type browser clients have).  Without this, replaying a recorded
# step from JavaScript would post back a rounded seed and regenerate a
# different image.
_JSON_SAFE_SEED_MASK = (1 << 48) - 1


@dataclass(frozen=True)
class ServiceConfig:
    """Operational limits and storage locations for the session service."""

    max_side: int = 1024  # longest allowed image dimension on upload
    max_candidates: int = 8
    default_candidates: int = 4
    ttl_seconds: float = 86400.0
    sweep_interval: float = 300.0  # <= 0 disables the background sweeper
    media_dir: str | None = None  # None -> fresh temporary directory
    persist_dir: str | None = None  # None -> in-memory only
    cors_origins: tuple[str, ...] = ("*",)


class ApiError(Exception):
    """An error the REST layer renders as {code, reason} JSON."""

    def __init__(self, status: int, code: str, reason: str, retriable: bool | None = None):
        super().__init__(reason)
        self.status = status
        self.code = code
        self.reason = reason
        self.retriable = retriable

    def body(self) -> dict:
        doc = {"code": self.code, "reason": self.reason}
        if self.retriable is not None:
            doc["retriable"] = self.retriable
        return doc


class StepRequest(BaseModel):
    instruction: str
    n: int | None = None
    seed: int | None = None
    replace: bool = False


class SelectRequest(BaseModel):
    candidate_id: str


class BeamRequest(BaseModel):
    instructions: list[str]
    k: int = 3
    n: int = 4
    seed: int = 0


def create_app(
    generator: Generator,
    embedder: Embedder,
    config: ServiceConfig | None = None,
) -> FastAPI:
    """Builds the service around one generator/embedder pair.

    The returned app exposes its stores as ``app.state.sessions`` and
    ``app.state.jobs`` so embedders, tests, and the sweeper can reach them.
    """
    config = config or ServiceConfig()
    media_dir = Path(config.media_dir or tempfile.mkdtemp(prefix="insertkit-media-"))
    store = SessionStore(
        media_dir,
        ttl_seconds=config.ttl_seconds,
        persist_dir=config.persist_dir,
    )
    jobs = JobStore()

    @asynccontextmanager
    async def lifespan(app: FastAPI):
        stop = threading.Event()
        sweeper = None
        if config.sweep_interval > 0:
            def run_sweeper():
                while not stop.wait(config.sweep_interval):
                    store.sweep()

            sweeper = threading.Thread(target=run_sweeper, daemon=True, name="ttl-sweeper")
            sweeper.start()
        try:
            yield
        finally:
            stop.set()
            if sweeper is not None:
                sweeper.join(timeout=config.sweep_interval + 1)

    app = FastAPI(title="insertkit session service", lifespan=lifespan)
    app.state.sessions = store
    app.state.jobs = jobs
    app.state.config = config

    app.add_middleware(
        CORSMiddleware,
        allow_origins=list(config.cors_origins),
        allow_methods=["*"],
        allow_headers=["*"],
    )
    app.mount("/media", StaticFiles(directory=media_dir), name="media")

    @app.exception_handler(ApiError)
    async def handle_api_error(request: Request, exc: ApiError):
        return JSONResponse(status_code=exc.status, content=exc.body())

    @app.exception_handler(RequestValidationError)
    async def handle_validation_error(request: Request, exc: RequestValidationError):
        first = exc.errors()[0] if exc.errors() else {}
        where = ".".join(str(p) for p in first.get("loc", ()))
        reason = f"{where}: {first.get('msg', 'invalid request')}" if where else "invalid request"
        return JSONResponse(
            status_code=400, content={"code": "invalid-request", "reason": reason}
        )

    def require_session(session_id: str):
        session = store.get(session_id)
        if session is None:
            raise ApiError(404, "unknown-session", f"no session {session_id!r}")
        return session

    @app.get("/healthz")
    async def healthz():
        return {"status": "ok", "sessions": store.count()}

    @app.post("/api/sessions", status_code=201)
    async def create_session(image: UploadFile = File(...)):
        payload = await image.read()
        try:
            background = RasterImage.from_bytes(payload)
        except (ParseError, InvalidArgument, ValueError) as exc:
            raise ApiError(400, "decode-failed", f"cannot decode upload: {exc}")
        long_side = max(background.width, background.height)
        if long_side > config.max_side:
            raise ApiError(
                413,
                "too-large",
                f"long side {long_side} exceeds limit {config.max_side}",
            )
        session = store.create(background)
        return {"id": session.id}

    @app.get("/api/sessions/{session_id}")
    async def get_session(session_id: str):
        return require_session(session_id).to_doc()

    @app.post("/api/sessions/{session_id}/steps")
    async def run_step(session_id: str, body: StepRequest):
        session = require_session(session_id)
        instruction = body.instruction.strip()
        if not instruction:
            raise ApiError(400, "invalid-instruction", "instruction must be nonempty")
        n = config.default_candidates if body.n is None else body.n
        if not 1 <= n <= config.max_candidates:
            raise ApiError(
                400,
                "invalid-count",
                f"n must be in [1, {config.max_candidates}], got {n}",
            )

        with session.lock:
            if session.pending is not None and not body.replace:
                raise ApiError(
                    409,
                    "pending-exists",
                    "a pending candidate set exists; select or pass replace=true",
                )
            if body.seed is not None:
                base_seed = body.seed
            else:
                base_seed = _JSON_SAFE_SEED_MASK & derive_seed(
                    session.base_seed, "step", len(session.steps), session.step_counter
                )
            session.step_counter += 1
            try:
                images = generator.edit(session.current_image, instruction, n, base_seed)
            except Exception as exc:
                raise ApiError(
                    502,
                    "backend-unavailable",
                    f"generation failed: {exc}",
                    retriable=True,
                )
            candidates = []
            for i, img in enumerate(images):
                try:
                    score = clip_score(img, instruction, embedder)
                except Exception as exc:
                    raise ApiError(
                        502,
                        "backend-unavailable",
                        f"scoring failed: {exc}",
                        retriable=True,
                    )
                candidates.append(
                    Candidate(
                        id=f"c{len(session.steps)}-{session.step_counter}-{i}",
                        seed=base_seed + i,
                        score=score,
                        image=img,
                        url=store.save_media(img),
                    )
                )
            session.pending = PendingSet(
                instruction=instruction, base_seed=base_seed, candidates=candidates
            )
            store.touch(session)
        ranked = sorted(candidates, key=lambda c: -c.score)
        return {
            "candidates": [
                {"id": c.id, "url": c.url, "score": c.score} for c in ranked
            ]
        }

    @app.post("/api/sessions/{session_id}/select")
    async def select_candidate(session_id: str, body: SelectRequest):
        session = require_session(session_id)
        with session.lock:
            if session.pending is None:
                raise ApiError(409, "no-pending", "no pending candidate set to select from")
            chosen = session.pending.get(body.candidate_id)
            if chosen is None:
                raise ApiError(
                    404, "unknown-candidate", f"no pending candidate {body.candidate_id!r}"
                )
            session.steps.append(
                CommittedStep(
                    instruction=session.pending.instruction,
                    candidate_id=chosen.id,
                    seed=chosen.seed,
                    score=chosen.score,
                    url=chosen.url,
                    alternatives=[
                        {"id": c.id, "url": c.url, "score": c.score, "seed": c.seed}
                        for c in session.pending.candidates
                        if c.id != chosen.id
                    ],
                )
            )
            session.current_image = chosen.image
            session.current_url = chosen.url
            session.pending = None
            store.touch(session)
            store.persist(session)
            return session.to_doc()

    @app.post("/api/sessions/{session_id}/beam", status_code=202)
    async def start_beam(session_id: str, body: BeamRequest):
        session = require_session(session_id)
        with session.lock:
            background = session.current_image
            store.touch(session)
        try:
            plan = EditPlan(
                background=background, instructions=tuple(body.instructions)
            )
            if body.k < 1 or body.n < 1:
                raise InvalidArgument(f"k and n must be >= 1, got k={body.k}, n={body.n}")
        except InvalidArgument as exc:
            raise ApiError(400, "invalid-request", str(exc))
        job = jobs.create(session_id)
        run_dir, url_prefix = store.new_run_dir()

        def run_job():
            jobs.update(job.id, status="running")
            try:
                trace = beam_search(
                    plan, generator, embedder, k=body.k, n=body.n, seed=body.seed
                )
                write_beam_trace(trace, run_dir)
            except Exception as exc:
                jobs.update(job.id, status="failed", error=str(exc))
                return
            jobs.update(job.id, status="done", trace_url=f"{url_prefix}/trace.json")

        threading.Thread(target=run_job, daemon=True, name=f"beam-{job.id}").start()
        return {"job_id": job.id}

    @app.get("/api/jobs/{job_id}")
    async def get_job(job_id: str):
        job = jobs.get(job_id)
        if job is None:
            raise ApiError(404, "unknown-job", f"no job {job_id!r}")
        doc = {"status": job.status}
        if job.trace_url is not None:
            doc["trace_url"] = job.trace_url
        if job.error is not None:
            doc["error"] = job.error
        return doc

    return app
