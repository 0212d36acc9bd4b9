"""HTTP service: image-upload sessions, hint validation, previews, render jobs.

Sessions are in-memory (optionally spilled to a data directory for results)
and evicted after an idle TTL. Each session runs at most one render job at a
time; renders for different sessions proceed in parallel on a shared pool.
"""
from __future__ import annotations

import io
import json
import logging
import threading
import time
import uuid
import zipfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as dataclass_field
from pathlib import Path
from tempfile import TemporaryDirectory

import numpy as np
from fastapi import FastAPI, Request, Response
from fastapi.exceptions import RequestValidationError
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from PIL import Image

from .flow import (
    FlowField,
    FlowParams,
    Hint,
    default_sigma,
    dense_flow_from_hints,
)
from .media import write_animation, write_flo
from .render import RenderConfig, render_frame, resize_bilinear
from . import media, render

log = logging.getLogger("fluidmotion.service")

DEFAULT_MAX_UPLOAD = 32 * 1024 * 1024
DEFAULT_SESSION_TTL = 3600.0


class ApiError(Exception):
    def __init__(self, status: int, message: str, field: str | None = None):
        super().__init__(message)
        self.status = status
        self.message = message
        self.field = field

    def response(self) -> JSONResponse:
        body = {"error": {"message": self.message}}
        if self.field:
            body["error"]["field"] = self.field
        return JSONResponse(body, status_code=self.status)


@dataclass
class RenderState:
    status: str = "idle"  # idle | rendering | done | failed
    progress: float = 0.0
    error: str | None = None
    manifest: dict | None = None
    result_path: str | None = None

    def snapshot(self) -> dict:
        out = {"state": self.status, "progress": self.progress}
        if self.error is not None:
            out["error"] = self.error
        if self.manifest is not None:
            out["manifest"] = self.manifest
        return out


@dataclass
class Session:
    id: str
    image: np.ndarray
    created: float = dataclass_field(default_factory=time.monotonic)
    last_access: float = dataclass_field(default_factory=time.monotonic)
    mask: np.ndarray | None = None
    hints: list[Hint] = dataclass_field(default_factory=list)
    sigma: float | None = None
    n_frames: int = 60
    speed_scale: float = 1.0
    fps: float = 30.0
    out_format: str = "animated_png"
    pyramid_levels: int = 4
    loop_mode: str = "none"
    seed: int = 0
    field: FlowField | None = None
    render_state: RenderState = dataclass_field(default_factory=RenderState)
    workdir: TemporaryDirectory | None = None

    @property
    def width(self) -> int:
        return self.image.shape[1]

    @property
    def height(self) -> int:
        return self.image.shape[0]

    def params(self) -> FlowParams:
        sigma = self.sigma if self.sigma is not None else default_sigma(self.width, self.height)
        return FlowParams(sigma=sigma, n_frames=self.n_frames, speed_scale=self.speed_scale)

    def config(self) -> RenderConfig:
        return RenderConfig(n_frames=self.n_frames, loop_mode=self.loop_mode,
                            pyramid_levels=self.pyramid_levels, fps=self.fps,
                            format=self.out_format)


class SessionStore:
    def __init__(self, ttl: float = DEFAULT_SESSION_TTL):
        self.ttl = ttl
        self._sessions: dict[str, Session] = {}
        self._lock = threading.Lock()

    def create(self, image: np.ndarray) -> Session:
        session = Session(id=uuid.uuid4().hex, image=image)
        with self._lock:
            self._evict_locked()
            self._sessions[session.id] = session
        return session

    def get(self, session_id: str) -> Session:
        with self._lock:
            self._evict_locked()
            session = self._sessions.get(session_id)
            if session is None:
                raise ApiError(404, f"unknown session {session_id}")
            session.last_access = time.monotonic()
            return session

    def _evict_locked(self) -> None:
        now = time.monotonic()
        for sid in [s for s, sess in self._sessions.items()
                    if now - sess.last_access > self.ttl
                    and sess.render_state.status != "rendering"]:
            del self._sessions[sid]


def _decode_image_upload(raw: bytes, field: str) -> np.ndarray:
    try:
        with Image.open(io.BytesIO(raw)) as im:
            return np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
    except Exception as exc:
        raise ApiError(400, f"cannot decode image: {exc}", field=field)


def _decode_mask_upload(raw: bytes, field: str) -> np.ndarray:
    try:
        with Image.open(io.BytesIO(raw)) as im:
            return np.asarray(im.convert("L"), dtype=np.float32) / 255.0
    except Exception as exc:
        raise ApiError(400, f"cannot decode mask: {exc}", field=field)


async def _read_upload(request: Request, field: str, max_upload: int) -> bytes:
    content_type = request.headers.get("content-type", "")
    raw: bytes | None = None
    if content_type.startswith("multipart/"):
        form = await request.form()
        upload = form.get(field)
        if upload is None:
            raise ApiError(400, f"multipart field {field!r} missing", field=field)
        raw = await upload.read() if hasattr(upload, "read") else str(upload).encode()
    else:
        raw = await request.body()
    if not raw:
        raise ApiError(400, "empty upload", field=field)
    if len(raw) > max_upload:
        raise ApiError(413, f"upload exceeds limit of {max_upload} bytes", field=field)
    return raw


def _parse_hint_payload(doc, width: int, height: int) -> tuple[list[Hint], dict]:
    if not isinstance(doc, dict):
        raise ApiError(400, "body must be a JSON object")
    allowed = {"hints", "sigma", "n_frames", "speed_scale", "fps", "format",
               "pyramid_levels", "loop_mode", "seed"}
    for key in doc:
        if key not in allowed:
            raise ApiError(400, f"unknown field {key!r}", field=key)
    raw_hints = doc.get("hints")
    if not isinstance(raw_hints, list):
        raise ApiError(400, "hints must be an array", field="hints")

    hints = []
    for i, item in enumerate(raw_hints):
        prefix = f"hints[{i}]"
        if not isinstance(item, dict):
            raise ApiError(400, f"{prefix} must be an object", field=prefix)
        try:
            start = tuple(float(v) for v in item["start"])
            end = tuple(float(v) for v in item["end"])
            speed = float(item.get("speed", 1.0))
            if len(start) != 2 or len(end) != 2:
                raise ValueError("start/end must be [x, y]")
        except (KeyError, TypeError, ValueError) as exc:
            raise ApiError(400, f"{prefix}: {exc}", field=prefix)
        for label, (x, y) in (("start", start), ("end", end)):
            if not (0 <= x < width and 0 <= y < height):
                raise ApiError(400,
                               f"{prefix}.{label} ({x}, {y}) outside image bounds "
                               f"{width}x{height}", field=f"{prefix}.{label}")
        if speed < 0:
            raise ApiError(400, f"{prefix}.speed must be >= 0", field=f"{prefix}.speed")
        hints.append(Hint(start=start, end=end, speed=speed))

    extras = {}
    for key, caster, check in (("sigma", float, lambda v: v > 0),
                               ("n_frames", int, lambda v: v >= 1),
                               ("speed_scale", float, lambda v: True),
                               ("fps", float, lambda v: v > 0),
                               ("pyramid_levels", int, lambda v: v >= 1),
                               ("seed", int, lambda v: True)):
        if key in doc and doc[key] is not None:
            try:
                value = caster(doc[key])
            except (TypeError, ValueError):
                raise ApiError(400, f"{key} must be a {caster.__name__}", field=key)
            if not check(value):
                raise ApiError(400, f"{key} out of range", field=key)
            extras[key] = value
    if "format" in doc:
        if doc["format"] not in media.ANIMATION_FORMATS:
            raise ApiError(400, f"format must be one of {media.ANIMATION_FORMATS}",
                           field="format")
        extras["format"] = doc["format"]
    if "loop_mode" in doc:
        if doc["loop_mode"] not in render.LOOP_MODES:
            raise ApiError(400, f"loop_mode must be one of {render.LOOP_MODES}",
                           field="loop_mode")
        extras["loop_mode"] = doc["loop_mode"]
    return hints, extras


def _field_stats(field: FlowField, mask: np.ndarray) -> dict:
    mag = field.magnitude()
    inside = mask > 0
    return {
        "kind": field.kind,
        "masked_pixels": int(inside.sum()),
        "mean_magnitude": float(mag[inside].mean()) if inside.any() else 0.0,
        "max_magnitude": float(mag.max()),
    }


def _require_flow_ready(session: Session) -> None:
    if session.mask is None:
        raise ApiError(400, "no mask uploaded", field="mask")
    if not session.hints:
        raise ApiError(400, "no hints set", field="hints")


def _recompute_field(session: Session) -> None:
    session.field = dense_flow_from_hints(session.hints, session.mask, session.params())


def _png_bytes(frame: np.ndarray) -> bytes:
    q = np.round(np.clip(frame.astype(np.float64), 0.0, 1.0) * 255.0).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(q).save(buf, format="PNG")
    return buf.getvalue()


def create_app(data_dir: str | None = None,
               max_upload: int = DEFAULT_MAX_UPLOAD,
               session_ttl: float = DEFAULT_SESSION_TTL,
               render_workers: int = 2) -> FastAPI:
    app = FastAPI(title="fluidmotion")
    # The browser annotator is served as static files from elsewhere.
    app.add_middleware(CORSMiddleware, allow_origins=["*"],
                       allow_methods=["*"], allow_headers=["*"])
    store = SessionStore(ttl=session_ttl)
    pool = ThreadPoolExecutor(max_workers=render_workers, thread_name_prefix="render")
    app.state.store = store
    base_dir = Path(data_dir) if data_dir else None
    if base_dir:
        base_dir.mkdir(parents=True, exist_ok=True)

    @app.exception_handler(ApiError)
    async def _api_error(_request, exc: ApiError):
        return exc.response()

    @app.exception_handler(RequestValidationError)
    async def _request_validation(_request, exc: RequestValidationError):
        # Framework-level parse failures follow the same 400 contract.
        first = exc.errors()[0] if exc.errors() else {}
        field = ".".join(str(p) for p in first.get("loc", ()) if p != "query")
        return ApiError(400, first.get("msg", "invalid request"), field or None).response()

    @app.middleware("http")
    async def _log_requests(request: Request, call_next):
        start = time.monotonic()
        response = await call_next(request)
        log.info(json.dumps({
            "method": request.method,
            "path": request.url.path,
            "status": response.status_code,
            "latency_ms": round(1000 * (time.monotonic() - start), 2),
        }))
        return response

    @app.post("/sessions", status_code=201)
    async def create_session(request: Request):
        raw = await _read_upload(request, "image", max_upload)
        image = _decode_image_upload(raw, "image")
        session = store.create(image)
        return {"session_id": session.id,
                "width": session.width, "height": session.height}

    @app.put("/sessions/{session_id}/mask", status_code=204)
    async def put_mask(session_id: str, request: Request):
        session = store.get(session_id)
        raw = await _read_upload(request, "mask", max_upload)
        mask = _decode_mask_upload(raw, "mask")
        if mask.shape != (session.height, session.width):
            raise ApiError(400,
                           f"mask {mask.shape[1]}x{mask.shape[0]} does not match image "
                           f"{session.width}x{session.height}", field="mask")
        session.mask = mask
        if session.hints and mask.max() > 0:
            _recompute_field(session)
        return Response(status_code=204)

    @app.put("/sessions/{session_id}/hints")
    async def put_hints(session_id: str, request: Request):
        session = store.get(session_id)
        try:
            doc = json.loads(await request.body())
        except json.JSONDecodeError as exc:
            raise ApiError(400, f"body is not valid JSON: {exc}")
        hints, extras = _parse_hint_payload(doc, session.width, session.height)
        if session.mask is None:
            raise ApiError(400, "upload a mask before hints", field="mask")
        if not hints:
            raise ApiError(400, "hints array is empty", field="hints")
        if not (session.mask > 0).any():
            raise ApiError(400, "mask selects no pixels", field="mask")

        session.hints = hints
        session.sigma = extras.get("sigma", session.sigma)
        session.n_frames = extras.get("n_frames", session.n_frames)
        session.speed_scale = extras.get("speed_scale", session.speed_scale)
        session.fps = extras.get("fps", session.fps)
        session.out_format = extras.get("format", session.out_format)
        session.pyramid_levels = extras.get("pyramid_levels", session.pyramid_levels)
        session.loop_mode = extras.get("loop_mode", session.loop_mode)
        session.seed = extras.get("seed", session.seed)
        _recompute_field(session)

        return {
            "hints": [{"start": list(h.start), "end": list(h.end), "speed": h.speed}
                      for h in session.hints],
            "params": {"sigma": session.params().sigma, "n_frames": session.n_frames,
                       "speed_scale": session.speed_scale},
            "seed": session.seed,
            "flow": _field_stats(session.field, session.mask),
        }

    @app.post("/sessions/{session_id}/preview")
    async def preview(session_id: str, t: int = 0):
        session = store.get(session_id)
        _require_flow_ready(session)
        if not 0 <= t <= session.n_frames:
            raise ApiError(400, f"t={t} outside [0, {session.n_frames}]", field="t")
        # Fast path: half resolution, one pyramid level fewer.
        h2, w2 = max(1, session.height // 2), max(1, session.width // 2)
        image = resize_bilinear(session.image, h2, w2)
        mask = resize_bilinear(session.mask, h2, w2)
        flow = resize_bilinear(session.field.data, h2, w2) * 0.5
        config = RenderConfig(n_frames=session.n_frames,
                              pyramid_levels=max(1, session.pyramid_levels - 1))
        frame = render_frame(image, mask, FlowField(flow, kind=session.field.kind),
                             t, config)
        return Response(content=_png_bytes(frame), media_type="image/png")

    @app.post("/sessions/{session_id}/render", status_code=202)
    async def start_render(session_id: str):
        session = store.get(session_id)
        _require_flow_ready(session)
        state = session.render_state
        if state.status == "rendering":
            raise ApiError(409, "a render is already running for this session")
        session.render_state = RenderState(status="rendering", progress=0.0)
        pool.submit(_run_render_job, session, base_dir)
        return {"state": "rendering"}

    @app.get("/sessions/{session_id}/status")
    async def status(session_id: str):
        return store.get(session_id).render_state.snapshot()

    @app.get("/sessions/{session_id}/result")
    async def result(session_id: str):
        session = store.get(session_id)
        state = session.render_state
        if state.status == "rendering":
            raise ApiError(409, "render still running")
        if state.status != "done" or state.result_path is None:
            raise ApiError(404, "no result available; start a render first")
        payload = Path(state.result_path).read_bytes()
        return Response(content=payload, media_type="application/zip",
                        headers={"Content-Disposition":
                                 f'attachment; filename="{session_id}.zip"'})

    @app.get("/sessions/{session_id}/flow.flo")
    async def flow_file(session_id: str):
        session = store.get(session_id)
        if session.field is None:
            raise ApiError(404, "no flow computed; upload mask and hints first")
        buf = io.BytesIO()
        write_flo(session.field, buf)
        return Response(content=buf.getvalue(), media_type="application/octet-stream")

    return app


def _run_render_job(session: Session, base_dir: Path | None) -> None:
    from .render import render_sequence

    state = session.render_state
    try:
        if session.workdir is None:
            session.workdir = TemporaryDirectory(prefix=f"fm-{session.id}-")
        out_dir = Path(base_dir or session.workdir.name) / session.id
        out_dir.mkdir(parents=True, exist_ok=True)

        def on_progress(done, total):
            state.progress = done / total

        frames = render_sequence(session.image, session.mask, session.field,
                                 session.config(), progress=on_progress)
        if session.out_format == "png_sequence":
            target = out_dir / "frames"
        else:
            suffix = "png" if session.out_format == "animated_png" else "gif"
            target = out_dir / f"animation.{suffix}"
        manifest = write_animation(frames, target, format=session.out_format,
                                   fps=session.fps)
        zip_path = out_dir / "result.zip"
        with zipfile.ZipFile(zip_path, "w", zipfile.ZIP_DEFLATED) as zf:
            zf.writestr("manifest.json", json.dumps(manifest, indent=2))
            if session.out_format == "png_sequence":
                for name in manifest["files"]:
                    zf.write(target / name, f"frames/{name}")
            else:
                zf.write(target, target.name)
        state.manifest = manifest
        state.result_path = str(zip_path)
        state.progress = 1.0
        state.status = "done"
    except Exception as exc:
        log.exception("render job failed for session %s", session.id)
        state.error = str(exc)
        state.status = "failed"
