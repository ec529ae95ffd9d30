"""Session and job state for the HTTP service.

Sessions hold the interactive composition state machine:

    no-pending --run_step--> pending --select_candidate--> no-pending

Every mutation happens under the session's lock, so concurrent requests
serialize per session.  The sweeper is the only deleter and skips sessions
whose lock is held.  Media files (PNG candidates, beam traces) are written
once under unguessable names and never modified.

Optional write-through persistence: committed session state (background,
selected steps with their exact candidate seeds, current image) goes to one
JSON file per session so a restarted process can resume; pending candidate
sets are ephemeral by design and are not persisted.
"""

from __future__ import annotations

import json
import secrets
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

from insertkit.core.image import RasterImage
from insertkit.seeds import stable_text_seed

MEDIA_ROUTE = "/media"


def _token(nbytes: int = 12) -> str:
    return secrets.token_urlsafe(nbytes)


@dataclass
class Candidate:
    id: str
    seed: int  # exact seed that regenerates this image with n=1
    score: float
    image: RasterImage
    url: str


@dataclass
class PendingSet:
    instruction: str
    base_seed: int
    candidates: list[Candidate]

    def get(self, candidate_id: str) -> Candidate | None:
        for cand in self.candidates:
            if cand.id == candidate_id:
                return cand
        return None


@dataclass
class CommittedStep:
    instruction: str
    candidate_id: str
    seed: int
    score: float
    url: str
    # Read-only snapshot of the non-selected candidates, for history views.
    alternatives: list[dict] = field(default_factory=list)


@dataclass
class Session:
    id: str
    background: RasterImage
    background_url: str
    current_image: RasterImage
    current_url: str
    created_at: float
    updated_at: float
    steps: list[CommittedStep] = field(default_factory=list)
    pending: PendingSet | None = None
    step_counter: int = 0  # run_step invocations; feeds default seed derivation
    lock: threading.Lock = field(default_factory=threading.Lock)

    @property
    def base_seed(self) -> int:
        return stable_text_seed(self.id)

    def to_doc(self) -> dict:
        doc = {
            "id": self.id,
            "created_at": self.created_at,
            "updated_at": self.updated_at,
            "background_url": self.background_url,
            "current_image_url": self.current_url,
            "steps": [
                {
                    "instruction": s.instruction,
                    "candidate_id": s.candidate_id,
                    "seed": s.seed,
                    "score": s.score,
                    "url": s.url,
                    "alternatives": s.alternatives,
                }
                for s in self.steps
            ],
            "pending": None,
        }
        if self.pending is not None:
            doc["pending"] = {
                "instruction": self.pending.instruction,
                "candidates": [
                    {"id": c.id, "url": c.url, "score": c.score}
                    for c in sorted(
                        self.pending.candidates, key=lambda c: -c.score
                    )
                ],
            }
        return doc


@dataclass
class JobRecord:
    id: str
    session_id: str
    status: str = "queued"  # queued | running | done | failed
    trace_url: str | None = None
    error: str | None = None


class SessionStore:
    """In-memory session map with media file management, TTL sweeping, and
    optional JSON write-through."""

    def __init__(
        self,
        media_dir: str | Path,
        ttl_seconds: float = 86400.0,
        persist_dir: str | Path | None = None,
    ):
        self.media_dir = Path(media_dir)
        self.media_dir.mkdir(parents=True, exist_ok=True)
        self.ttl_seconds = float(ttl_seconds)
        self.persist_dir = Path(persist_dir) if persist_dir is not None else None
        if self.persist_dir is not None:
            self.persist_dir.mkdir(parents=True, exist_ok=True)
        self._sessions: dict[str, Session] = {}
        self._map_lock = threading.Lock()
        if self.persist_dir is not None:
            self._load_persisted()

    # -- media -----------------------------------------------------------

    def save_media(self, image: RasterImage) -> str:
        """Writes the image under an unguessable name; returns its URL path."""
        name = f"{_token()}.png"
        image.save_png(self.media_dir / name)
        return f"{MEDIA_ROUTE}/{name}"

    def new_run_dir(self) -> tuple[Path, str]:
        """Directory for a beam run's trace + images, and its URL prefix."""
        name = _token()
        path = self.media_dir / name
        path.mkdir(parents=True, exist_ok=False)
        return path, f"{MEDIA_ROUTE}/{name}"

    def _media_path(self, url: str) -> Path:
        return self.media_dir / url.removeprefix(MEDIA_ROUTE + "/")

    # -- sessions --------------------------------------------------------

    def create(self, background: RasterImage) -> Session:
        now = time.time()
        url = self.save_media(background)
        session = Session(
            id=_token(16),
            background=background,
            background_url=url,
            current_image=background,
            current_url=url,
            created_at=now,
            updated_at=now,
        )
        with self._map_lock:
            self._sessions[session.id] = session
        self.persist(session)
        return session

    def get(self, session_id: str) -> Session | None:
        with self._map_lock:
            return self._sessions.get(session_id)

    def touch(self, session: Session) -> None:
        session.updated_at = time.time()

    def sweep(self, now: float | None = None) -> list[str]:
        """Drops sessions idle past the TTL.  A locked session is in use and
        is never deleted; it will be swept on a later pass."""
        now = time.time() if now is None else now
        removed = []
        with self._map_lock:
            for sid, session in list(self._sessions.items()):
                if now - session.updated_at <= self.ttl_seconds:
                    continue
                if not session.lock.acquire(blocking=False):
                    continue
                try:
                    del self._sessions[sid]
                    removed.append(sid)
                finally:
                    session.lock.release()
        for sid in removed:
            self._unpersist(sid)
        return removed

    def count(self) -> int:
        with self._map_lock:
            return len(self._sessions)

    # -- persistence -----------------------------------------------------

    def persist(self, session: Session) -> None:
        if self.persist_dir is None:
            return
        doc = {
            "id": session.id,
            "created_at": session.created_at,
            "updated_at": session.updated_at,
            "step_counter": session.step_counter,
            "background_url": session.background_url,
            "current_url": session.current_url,
            "steps": [
                {
                    "instruction": s.instruction,
                    "candidate_id": s.candidate_id,
                    "seed": s.seed,
                    "score": s.score,
                    "url": s.url,
                    "alternatives": s.alternatives,
                }
                for s in session.steps
            ],
        }
        path = self.persist_dir / f"{session.id}.json"
        path.write_text(json.dumps(doc, indent=2), encoding="utf-8")

    def _unpersist(self, session_id: str) -> None:
        if self.persist_dir is None:
            return
        (self.persist_dir / f"{session_id}.json").unlink(missing_ok=True)

    def _load_persisted(self) -> None:
        for path in sorted(self.persist_dir.glob("*.json")):
            try:
                doc = json.loads(path.read_text(encoding="utf-8"))
                background = RasterImage.load(self._media_path(doc["background_url"]))
                current = RasterImage.load(self._media_path(doc["current_url"]))
                session = Session(
                    id=doc["id"],
                    background=background,
                    background_url=doc["background_url"],
                    current_image=current,
                    current_url=doc["current_url"],
                    created_at=doc["created_at"],
                    updated_at=doc["updated_at"],
                    step_counter=doc.get("step_counter", len(doc["steps"])),
                    steps=[
                        CommittedStep(
                            instruction=s["instruction"],
                            candidate_id=s["candidate_id"],
                            seed=s["seed"],
                            score=s["score"],
                            url=s["url"],
                            alternatives=s.get("alternatives", []),
                        )
                        for s in doc["steps"]
                    ],
                )
            except (OSError, KeyError, ValueError):
                # A torn write from a crash must not block startup.
                path.rename(path.with_suffix(".corrupt"))
                continue
            self._sessions[session.id] = session


class JobStore:
    """Tracks asynchronous beam-run jobs."""

    def __init__(self):
        self._jobs: dict[str, JobRecord] = {}
        self._lock = threading.Lock()

    def create(self, session_id: str) -> JobRecord:
        job = JobRecord(id=_token(), session_id=session_id)
        with self._lock:
            self._jobs[job.id] = job
        return job

    def get(self, job_id: str) -> JobRecord | None:
        with self._lock:
            return self._jobs.get(job_id)

    def update(self, job_id: str, **fields) -> None:
        with self._lock:
            job = self._jobs[job_id]
            for key, value in fields.items():
                setattr(job, key, value)
