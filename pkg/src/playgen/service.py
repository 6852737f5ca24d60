"""Session-based HTTP inference service for interactive play.

One session owns one autoregressive generation stream: the client supplies a
discrete action per step and receives the next generated frame.  Sessions
serialize their own steps (a racing request is rejected with 409, never
queued); different sessions run concurrently against a shared frozen
parameter snapshot.  Idle sessions are reaped after a TTL.

Endpoints (JSON bodies, frames as base64 PNG):
    GET    /checkpoints
    POST   /sessions                {"checkpoint": id, "frame"?: b64}
    POST   /sessions/{id}/step      {"action": int}
    POST   /sessions/{id}/reset
    DELETE /sessions/{id}

Errors carry machine-readable codes:
    UNKNOWN_CHECKPOINT, UNKNOWN_SESSION, SESSION_EXPIRED, OUT_OF_RANGE,
    BAD_FRAME, CONCURRENT_STEP, BAD_REQUEST
"""

from __future__ import annotations

import random
import threading
import time
import uuid
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from .checkpoint import CheckpointError, load_checkpoint
from .imaging import base64_to_frame, frame_to_base64, png_bytes_to_frame
from .model import EnvironmentState, PlayableModel

DEFAULT_TTL_SECONDS = 600.0


class ServiceError(Exception):
    def __init__(self, status: int, code: str, message: str):
        super().__init__(message)
        self.status = status
        self.code = code
        self.message = message


class CreateSessionRequest(BaseModel):
    checkpoint: str
    frame: str | None = None


class StepRequest(BaseModel):
    action: int


@dataclass
class Session:
    id: str
    checkpoint_id: str
    state: EnvironmentState | None
    last_frame: torch.Tensor | None
    initial_frame: torch.Tensor
    step: int = 0
    last_active: float = 0.0
    expired: bool = False
    lock: threading.Lock = field(default_factory=threading.Lock)


@dataclass
class LoadedCheckpoint:
    model: PlayableModel
    step: int
    gallery: list[np.ndarray]


class PlayService:
    """Session registry plus lazily loaded checkpoint models."""

    def __init__(self, checkpoint_dir: str | Path, ttl_seconds: float = DEFAULT_TTL_SECONDS):
        self.checkpoint_dir = Path(checkpoint_dir)
        self.ttl = ttl_seconds
        self._models: dict[str, LoadedCheckpoint] = {}
        self._sessions: dict[str, Session] = {}
        self._registry_lock = threading.Lock()

    # ------------------------------------------------------------------

    def checkpoint_ids(self) -> list[str]:
        return sorted(p.stem for p in self.checkpoint_dir.glob("*.ckpt"))

    def load(self, checkpoint_id: str) -> LoadedCheckpoint:
        with self._registry_lock:
            if checkpoint_id in self._models:
                return self._models[checkpoint_id]
            path = self.checkpoint_dir / f"{checkpoint_id}.ckpt"
            if not path.exists():
                raise ServiceError(404, "UNKNOWN_CHECKPOINT", f"no checkpoint {checkpoint_id!r}")
            try:
                bundle = load_checkpoint(path)
            except CheckpointError as exc:
                raise ServiceError(404, "UNKNOWN_CHECKPOINT", str(exc)) from exc
            bundle.model.eval()
            for p in bundle.model.parameters():
                p.requires_grad_(False)
            gallery = [png_bytes_to_frame(blob) for blob in bundle.gallery]
            loaded = LoadedCheckpoint(bundle.model, bundle.step, gallery)
            self._models[checkpoint_id] = loaded
            return loaded

    # ------------------------------------------------------------------

    def _reap(self) -> None:
        now = time.monotonic()
        for sess in self._sessions.values():
            if not sess.expired and now - sess.last_active > self.ttl:
                sess.expired = True
                sess.state = None
                sess.last_frame = None

    def _get_session(self, session_id: str) -> Session:
        self._reap()
        sess = self._sessions.get(session_id)
        if sess is None:
            raise ServiceError(404, "UNKNOWN_SESSION", f"no session {session_id!r}")
        if sess.expired:
            raise ServiceError(410, "SESSION_EXPIRED", f"session {session_id!r} expired")
        return sess

    def _decode_frame(self, model: PlayableModel, data: str) -> torch.Tensor:
        try:
            frame = base64_to_frame(data)
        except Exception as exc:
            raise ServiceError(400, "BAD_FRAME", f"cannot decode frame image: {exc}") from exc
        cfg = model.cfg
        if frame.shape != (cfg.frame_channels, cfg.height, cfg.width):
            raise ServiceError(
                400,
                "BAD_FRAME",
                f"frame shape {frame.shape} does not match model "
                f"({cfg.frame_channels}, {cfg.height}, {cfg.width})",
            )
        return torch.from_numpy(frame).unsqueeze(0)

    # ------------------------------------------------------------------

    def create_session(self, checkpoint_id: str, frame_b64: str | None) -> dict:
        loaded = self.load(checkpoint_id)
        if frame_b64 is not None:
            frame = self._decode_frame(loaded.model, frame_b64)
        else:
            if not loaded.gallery:
                raise ServiceError(
                    400, "BAD_FRAME", "checkpoint has no bundled gallery; provide a frame"
                )
            frame = torch.from_numpy(random.choice(loaded.gallery)).unsqueeze(0)
        state, initial = loaded.model.start_play(frame)
        sess = Session(
            id=uuid.uuid4().hex,
            checkpoint_id=checkpoint_id,
            state=state,
            last_frame=initial,
            initial_frame=initial,
            last_active=time.monotonic(),
        )
        self._sessions[sess.id] = sess
        return {
            "session_id": sess.id,
            "checkpoint": checkpoint_id,
            "num_actions": loaded.model.cfg.num_actions,
            "step": 0,
            "frame": frame_to_base64(initial[0].numpy()),
        }

    def step_session(self, session_id: str, action: int) -> dict:
        sess = self._get_session(session_id)
        loaded = self.load(sess.checkpoint_id)
        k = loaded.model.cfg.num_actions
        if not (0 <= action < k):
            raise ServiceError(400, "OUT_OF_RANGE", f"action must be in [0, {k})")
        if not sess.lock.acquire(blocking=False):
            raise ServiceError(
                409, "CONCURRENT_STEP", "a step is already in flight for this session"
            )
        try:
            with torch.no_grad():
                state, frame = loaded.model.play_step(sess.state, sess.last_frame, action)
            sess.state = state
            sess.last_frame = frame
            sess.step += 1
            sess.last_active = time.monotonic()
            return {
                "session_id": sess.id,
                "step": sess.step,
                "frame": frame_to_base64(frame[0].numpy()),
            }
        finally:
            sess.lock.release()

    def reset_session(self, session_id: str) -> dict:
        sess = self._get_session(session_id)
        loaded = self.load(sess.checkpoint_id)
        if not sess.lock.acquire(blocking=False):
            raise ServiceError(409, "CONCURRENT_STEP", "session is busy")
        try:
            state, initial = loaded.model.start_play(sess.initial_frame)
            sess.state = state
            sess.last_frame = initial
            sess.step = 0
            sess.last_active = time.monotonic()
            return {
                "session_id": sess.id,
                "step": 0,
                "frame": frame_to_base64(initial[0].numpy()),
            }
        finally:
            sess.lock.release()

    def delete_session(self, session_id: str) -> dict:
        self._reap()
        sess = self._sessions.pop(session_id, None)
        if sess is None:
            raise ServiceError(404, "UNKNOWN_SESSION", f"no session {session_id!r}")
        return {"session_id": session_id, "deleted": True}


def create_app(checkpoint_dir: str | Path, ttl_seconds: float = DEFAULT_TTL_SECONDS) -> FastAPI:
    service = PlayService(checkpoint_dir, ttl_seconds)
    app = FastAPI(title="playgen inference service")
    app.state.service = service

    @app.exception_handler(ServiceError)
    async def _service_error(_: Request, exc: ServiceError):
        return JSONResponse(
            status_code=exc.status,
            content={"error": {"code": exc.code, "message": exc.message}},
        )

    @app.exception_handler(RequestValidationError)
    async def _validation_error(_: Request, exc: RequestValidationError):
        return JSONResponse(
            status_code=400,
            content={"error": {"code": "BAD_REQUEST", "message": str(exc.errors())}},
        )

    @app.get("/checkpoints")
    def list_checkpoints():
        items = []
        for cid in service.checkpoint_ids():
            loaded = service.load(cid)
            items.append(
                {
                    "id": cid,
                    "num_actions": loaded.model.cfg.num_actions,
                    "height": loaded.model.cfg.height,
                    "width": loaded.model.cfg.width,
                    "train_step": loaded.step,
                }
            )
        return {"checkpoints": items}

    @app.post("/sessions", status_code=201)
    def create_session(body: CreateSessionRequest):
        return service.create_session(body.checkpoint, body.frame)

    @app.post("/sessions/{session_id}/step")
    def step(session_id: str, body: StepRequest):
        return service.step_session(session_id, body.action)

    @app.post("/sessions/{session_id}/reset")
    def reset(session_id: str):
        return service.reset_session(session_id)

    @app.delete("/sessions/{session_id}")
    def delete(session_id: str):
        return service.delete_session(session_id)

    return app
