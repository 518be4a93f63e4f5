"""FastAPI service exposing refinement sessions over HTTP.

The service is a thin shell over the refinement module: every handler
decodes PNG payloads, takes the session's lock, and calls the same
functions a direct (in-process) caller would. Because inputs are snapped
to the 8-bit grid on both paths, the HTTP route and the direct route
produce bit-identical prototypes and frames.

Error contract: unknown model or session -> 404; undecodable image,
wrong resolution, bad alpha/steps/class_index/label -> 400; stale
version on commit or reset -> 409; session capacity exceeded -> 429.
"""

from __future__ import annotations

import json
import re
import threading
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np
from fastapi import FastAPI, HTTPException
from fastapi.middleware.cors import CORSMiddleware

from .. import __version__
from ..evaluation import evaluate_fixed_set
from ..images import decode_png_base64, encode_png_base64
from ..network import AutoProtoNet, CheckpointError, checkpoint_info, load_checkpoint
from ..refinement import (
    RefinementSession,
    SessionStoreError,
    classify_images,
    commit_refinement,
    create_session,
    interpolate,
    list_sessions,
    load_session,
    prototype_hashes,
    reset_class,
    visualize_prototypes,
)
from . import schemas

_MODEL_ID = re.compile(r"^[A-Za-z0-9][A-Za-z0-9._-]*$")


@dataclass(frozen=True)
class ServiceConfig:
    """Service settings, loadable from a JSON file."""

    model_dir: str
    session_dir: str | None = None
    host: str = "127.0.0.1"
    port: int = 8765
    cors_origins: tuple[str, ...] = ()
    max_sessions: int = 32

    def __post_init__(self):
        if not self.model_dir:
            raise ValueError("model_dir is required")
        if not 1 <= self.port <= 65535:
            raise ValueError(f"port must lie in [1, 65535], got {self.port}")
        if self.max_sessions < 1:
            raise ValueError("max_sessions must be >= 1")
        object.__setattr__(self, "cors_origins", tuple(self.cors_origins))

    @classmethod
    def from_dict(cls, d: dict) -> "ServiceConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown service config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json_file(cls, path) -> "ServiceConfig":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


class ModelRegistry:
    """Lazy-loading cache of the checkpoints in a directory; a model id is
    a checkpoint's filename without the .ckpt suffix."""

    def __init__(self, model_dir):
        self._dir = Path(model_dir)
        self._lock = threading.Lock()
        self._cache: dict[str, AutoProtoNet] = {}

    def ids(self) -> list[str]:
        if not self._dir.is_dir():
            return []
        return sorted(p.stem for p in self._dir.glob("*.ckpt"))

    def _path(self, model_id: str) -> Path:
        if not _MODEL_ID.match(model_id):
            raise KeyError(model_id)
        path = self._dir / f"{model_id}.ckpt"
        if not path.is_file():
            raise KeyError(model_id)
        return path

    def info(self, model_id: str) -> dict:
        return checkpoint_info(self._path(model_id))

    def get(self, model_id: str) -> AutoProtoNet:
        path = self._path(model_id)
        with self._lock:
            if model_id not in self._cache:
                model, _ = load_checkpoint(path)
                self._cache[model_id] = model
            return self._cache[model_id]


@dataclass
class SessionHandle:
    session: RefinementSession
    lock: threading.Lock


class SessionManager:
    """In-memory session table with optional directory persistence."""

    def __init__(self, registry: ModelRegistry, session_dir, max_sessions: int):
        self._registry = registry
        self._session_dir = Path(session_dir) if session_dir else None
        self._max_sessions = max_sessions
        self._lock = threading.Lock()
        self._handles: dict[str, SessionHandle] = {}

    def __len__(self) -> int:
        with self._lock:
            return len(self._handles)

    def create(self, model: AutoProtoNet, model_id: str, images, labels, names) -> SessionHandle:
        with self._lock:
            if len(self._handles) >= self._max_sessions:
                raise OverflowError(f"session capacity {self._max_sessions} reached")
            session = create_session(
                model,
                images,
                labels,
                class_names=names,
                model_ref=model_id,
                store_dir=self._session_dir,
            )
            handle = SessionHandle(session=session, lock=threading.Lock())
            self._handles[session.session_id] = handle
            return handle

    def get(self, session_id: str) -> SessionHandle:
        with self._lock:
            handle = self._handles.get(session_id)
            if handle is not None:
                return handle
            if self._session_dir is not None and session_id in list_sessions(self._session_dir):
                handle = self._revive(session_id)
                self._handles[session_id] = handle
                return handle
        raise KeyError(session_id)

    def _revive(self, session_id: str) -> SessionHandle:
        manifest = json.loads(
            (self._session_dir / session_id / "session.json").read_text(encoding="utf-8")
        )
        model = self._registry.get(manifest["model_ref"])
        session = load_session(self._session_dir, session_id, model)
        return SessionHandle(session=session, lock=threading.Lock())


def _summary(handle: SessionHandle) -> schemas.SessionSummary:
    session = handle.session
    h, w = session.support_images[0].shape[2:]
    return schemas.SessionSummary(
        session_id=session.session_id,
        version=session.version,
        model_id=session.model_ref or "",
        class_names=list(session.class_names),
        support_counts=[int(s.shape[0]) for s in session.support_images],
        embedding_dim=session.prototypes.dim,
        resolution=(h, w),
        prototype_hashes=prototype_hashes(session),
        num_events=len(session.history),
    )


def _decode_image(payload: str, resolution: tuple[int, int]) -> np.ndarray:
    try:
        image = decode_png_base64(payload)
    except ValueError as exc:
        raise HTTPException(status_code=400, detail=str(exc)) from exc
    if image.shape[1:] != tuple(resolution):
        raise HTTPException(
            status_code=400,
            detail=f"expected a {resolution[0]}x{resolution[1]} image, got "
            f"{image.shape[1]}x{image.shape[2]}",
        )
    return image


def _400(exc: Exception) -> HTTPException:
    return HTTPException(status_code=400, detail=str(exc))


def create_app(config: ServiceConfig) -> FastAPI:
    registry = ModelRegistry(config.model_dir)
    sessions = SessionManager(registry, config.session_dir, config.max_sessions)

    app = FastAPI(title="autoprotonet refinement service", version=__version__)
    app.state.config = config
    app.state.registry = registry
    app.state.sessions = sessions
    if config.cors_origins:
        app.add_middleware(
            CORSMiddleware,
            allow_origins=list(config.cors_origins),
            allow_methods=["*"],
            allow_headers=["*"],
        )

    def _handle_or_404(session_id: str) -> SessionHandle:
        try:
            return sessions.get(session_id)
        except KeyError:
            raise HTTPException(status_code=404, detail=f"no session {session_id!r}")
        except (SessionStoreError, CheckpointError) as exc:
            raise HTTPException(status_code=500, detail=str(exc))

    @app.get("/healthz", response_model=schemas.HealthResponse)
    def healthz() -> schemas.HealthResponse:
        return schemas.HealthResponse(
            status="ok", models=len(registry.ids()), sessions=len(sessions)
        )

    @app.get("/models", response_model=schemas.ModelsResponse)
    def list_models() -> schemas.ModelsResponse:
        infos = []
        for model_id in registry.ids():
            try:
                info = registry.info(model_id)
            except CheckpointError:
                continue  # unreadable checkpoints are not served
            arch = info["architecture"]
            infos.append(
                schemas.ModelInfo(
                    model_id=model_id,
                    resolution=arch.input_resolution,
                    embedding_dim=arch.embedding_dim,
                    metadata=info["metadata"],
                )
            )
        return schemas.ModelsResponse(models=infos)

    @app.post("/sessions", response_model=schemas.SessionSummary)
    def post_session(request: schemas.CreateSessionRequest) -> schemas.SessionSummary:
        try:
            model = registry.get(request.model_id)
        except KeyError:
            raise HTTPException(status_code=404, detail=f"no model {request.model_id!r}")
        except CheckpointError as exc:
            raise HTTPException(status_code=500, detail=str(exc))
        if len(request.classes) < 2:
            raise HTTPException(status_code=400, detail="a session needs at least 2 classes")
        names = [c.name for c in request.classes]
        if len(set(names)) != len(names):
            raise HTTPException(status_code=400, detail="class names must be unique")
        resolution = model.config.input_resolution
        images, labels = [], []
        for k, cls in enumerate(request.classes):
            if not cls.images:
                raise HTTPException(
                    status_code=400, detail=f"class {cls.name!r} has no support images"
                )
            for payload in cls.images:
                images.append(_decode_image(payload, resolution))
                labels.append(k)
        try:
            handle = sessions.create(
                model, request.model_id, np.stack(images), np.asarray(labels), names
            )
        except OverflowError as exc:
            raise HTTPException(status_code=429, detail=str(exc))
        return _summary(handle)

    @app.get("/sessions/{session_id}", response_model=schemas.SessionSummary)
    def get_session(session_id: str) -> schemas.SessionSummary:
        handle = _handle_or_404(session_id)
        with handle.lock:
            return _summary(handle)

    @app.get("/sessions/{session_id}/prototypes", response_model=schemas.PrototypesResponse)
    def get_prototypes(session_id: str) -> schemas.PrototypesResponse:
        handle = _handle_or_404(session_id)
        with handle.lock:
            session = handle.session
            frames = visualize_prototypes(session)
            return schemas.PrototypesResponse(
                session_id=session.session_id,
                version=session.version,
                class_names=list(session.class_names),
                images=[encode_png_base64(frame) for frame in frames],
                prototype_hashes=prototype_hashes(session),
            )

    @app.post("/sessions/{session_id}/interpolate", response_model=schemas.InterpolateResponse)
    def post_interpolate(
        session_id: str, request: schemas.InterpolateRequest
    ) -> schemas.InterpolateResponse:
        handle = _handle_or_404(session_id)
        with handle.lock:
            session = handle.session
            guide = _decode_image(request.guide_image, session.support_images[0].shape[2:])
            try:
                strip = interpolate(session, request.class_index, guide, steps=request.steps)
            except ValueError as exc:
                raise _400(exc)
            return schemas.InterpolateResponse(
                class_index=strip.class_index,
                alphas=list(strip.alphas),
                frames=[encode_png_base64(frame) for frame in strip.frames],
                embeddings=(
                    [[float(v) for v in row] for row in strip.embeddings]
                    if request.include_embeddings
                    else None
                ),
            )

    @app.post("/sessions/{session_id}/commit", response_model=schemas.SessionSummary)
    def post_commit(session_id: str, request: schemas.CommitRequest) -> schemas.SessionSummary:
        handle = _handle_or_404(session_id)
        with handle.lock:
            session = handle.session
            if request.version != session.version:
                raise HTTPException(
                    status_code=409,
                    detail=f"version conflict: request has {request.version}, "
                    f"session is at {session.version}",
                )
            guide = _decode_image(request.guide_image, session.support_images[0].shape[2:])
            try:
                commit_refinement(session, request.class_index, request.alpha, guide)
            except ValueError as exc:
                raise _400(exc)
            return _summary(handle)

    @app.post("/sessions/{session_id}/reset", response_model=schemas.SessionSummary)
    def post_reset(session_id: str, request: schemas.ResetRequest) -> schemas.SessionSummary:
        handle = _handle_or_404(session_id)
        with handle.lock:
            session = handle.session
            if request.version != session.version:
                raise HTTPException(
                    status_code=409,
                    detail=f"version conflict: request has {request.version}, "
                    f"session is at {session.version}",
                )
            try:
                reset_class(session, request.class_index)
            except ValueError as exc:
                raise _400(exc)
            return _summary(handle)

    @app.post("/sessions/{session_id}/classify", response_model=schemas.ClassifyResponse)
    def post_classify(
        session_id: str, request: schemas.ClassifyRequest
    ) -> schemas.ClassifyResponse:
        handle = _handle_or_404(session_id)
        with handle.lock:
            session = handle.session
            resolution = session.support_images[0].shape[2:]
            images = [_decode_image(payload, resolution) for payload in request.images]
            if images:
                distributions = classify_images(session, np.stack(images))
                predicted = [int(np.argmax(row)) for row in distributions]
            else:
                distributions = np.zeros((0, session.way))
                predicted = []
            return schemas.ClassifyResponse(
                session_id=session.session_id,
                version=session.version,
                class_names=list(session.class_names),
                distributions=[[float(v) for v in row] for row in distributions],
                predicted=predicted,
            )

    @app.post("/sessions/{session_id}/evaluate", response_model=schemas.EvaluateResponse)
    def post_evaluate(
        session_id: str, request: schemas.EvaluateRequest
    ) -> schemas.EvaluateResponse:
        handle = _handle_or_404(session_id)
        with handle.lock:
            session = handle.session
            if not request.items:
                raise HTTPException(status_code=400, detail="evaluate needs at least one item")
            resolution = session.support_images[0].shape[2:]
            images, labels = [], []
            for item in request.items:
                if not 0 <= item.label < session.way:
                    raise HTTPException(
                        status_code=400,
                        detail=f"label {item.label} out of range [0, {session.way})",
                    )
                images.append(_decode_image(item.image, resolution))
                labels.append(item.label)
            result = evaluate_fixed_set(session, np.stack(images), np.asarray(labels))
            return schemas.EvaluateResponse(
                session_id=session.session_id,
                version=session.version,
                accuracy=result.accuracy,
                predicted=result.predictions,
                correct=result.correct,
                misclassified_per_class=result.misclassified_per_class,
            )

    return app
