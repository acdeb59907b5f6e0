"""Long-running HTTP/WebSocket service for interactive generation and editing.

Endpoints (paths fixed):
  POST /sessions                 {sketch, reference: base64 PNG, camera?} -> {session_id}
  POST /sessions/{id}/edits      {sketch: base64 PNG, camera?} -> edit summary
  GET  /sessions/{id}/frame?cam=<urlencoded camera JSON>&fmt=png|raw
  POST /sessions/{id}/undo
  POST /sessions/{id}/save
  WS   /sessions/{id}/stream     server pushes edit summaries and frames

Errors are JSON {"error": {"code", "message"}} with machine-readable codes:
input_error (400), not_found (404), busy (409), capacity (429),
storage_error (500).

Concurrency: one writer per session (concurrent edits get `busy` or queue when
`queue_edits` is on); reads never mutate state. Sessions are LRU-evicted to
disk at the capacity cap and revived transparently on access.
"""

from __future__ import annotations

import asyncio
import base64
import json
import os
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from fastapi import FastAPI, Query, Request, WebSocket, WebSocketDisconnect
from fastapi.responses import JSONResponse, Response

from .cameras import Camera, default_camera
from .editing import EditSession, apply_edit, create_session
from .errors import (BusyError, CapacityError, InputError, SketchSplatError,
                     StorageError)
from .imgio import INPUT_SIZE, binarize_sketch, decode_png, resample_rgb
from .mesh import default_head_mesh, load_mesh_obj
from .nn.weights import init_weights, load_weights
from .nn.arch import DEFAULT_ARCH
from .raster import rasterize
from .session_store import load_session_dir, save_session_dir

DEFAULT_SEED = 1234


@dataclass
class ServiceConfig:
    session_dir: str = "./sessions"
    capacity: int = 8
    weights_path: str | None = None
    weights_seed: int = DEFAULT_SEED
    mesh_path: str | None = None
    frame_size: int = 512
    queue_edits: bool = False

    @staticmethod
    def from_env() -> "ServiceConfig":
        return ServiceConfig(
            session_dir=os.environ.get("SKETCHSPLAT_SESSION_DIR", "./sessions"),
            capacity=int(os.environ.get("SKETCHSPLAT_CAPACITY", "8")),
            weights_path=os.environ.get("SKETCHSPLAT_WEIGHTS") or None,
            weights_seed=int(os.environ.get("SKETCHSPLAT_SEED", str(DEFAULT_SEED))),
            mesh_path=os.environ.get("SKETCHSPLAT_MESH") or None,
            frame_size=int(os.environ.get("SKETCHSPLAT_FRAME_SIZE", "512")),
            queue_edits=os.environ.get("SKETCHSPLAT_QUEUE_EDITS", "0") == "1",
        )


@dataclass
class _Managed:
    session: EditSession
    write_lock: threading.Lock = field(default_factory=threading.Lock)
    state_lock: threading.Lock = field(default_factory=threading.Lock)
    last_activity: float = field(default_factory=time.monotonic)
    subscribers: list = field(default_factory=list)  # (loop, asyncio.Queue, fmt)

    def touch(self):
        self.last_activity = time.monotonic()


class SessionService:
    """Session registry plus the underlying generation/editing engine."""

    def __init__(self, config: ServiceConfig):
        self.config = config
        self.mesh = load_mesh_obj(config.mesh_path) if config.mesh_path \
            else default_head_mesh()
        self.store = load_weights(config.weights_path) if config.weights_path \
            else init_weights(DEFAULT_ARCH, config.weights_seed)
        self.sessions: dict = {}
        self.registry_lock = threading.Lock()
        Path(config.session_dir).mkdir(parents=True, exist_ok=True)
        self._warm_kernels()

    def _warm_kernels(self) -> None:
        """Trigger JIT compilation once at startup so the first real request
        doesn't pay for it."""
        from .raster import compute_influence_weights, record_contributions
        from .scenes import random_scene
        cam = default_camera((32, 32))
        scene = random_scene(0, 50)
        rasterize(scene, cam)
        mask = np.zeros((32, 32), dtype=bool)
        mask[10:20, 10:20] = True
        compute_influence_weights(scene, cam, mask)
        record_contributions(scene, cam, mask)

    # -- registry ----------------------------------------------------------

    def _session_path(self, session_id: str) -> Path:
        return Path(self.config.session_dir) / session_id

    def _evict_if_needed(self) -> None:
        # caller holds registry_lock
        while len(self.sessions) >= self.config.capacity:
            idle = [(m.last_activity, sid) for sid, m in self.sessions.items()
                    if not m.write_lock.locked()]
            if not idle:
                raise CapacityError("all sessions busy at capacity")
            _, victim = min(idle)
            managed = self.sessions.pop(victim)
            save_session_dir(managed.session, self._session_path(victim))

    def _get(self, session_id: str) -> _Managed:
        with self.registry_lock:
            managed = self.sessions.get(session_id)
            if managed is not None:
                managed.touch()
                return managed
            path = self._session_path(session_id)
            if path.exists():
                session = load_session_dir(path)
                self._evict_if_needed()
                managed = _Managed(session=session)
                self.sessions[session_id] = managed
                return managed
        raise KeyError(session_id)

    # -- operations ---------------------------------------------------------

    def create(self, sketch: np.ndarray, reference: np.ndarray,
               camera: Camera) -> str:
        with self.registry_lock:
            self._evict_if_needed()
        session = create_session(sketch, reference, self.mesh, self.store, camera)
        with self.registry_lock:
            self._evict_if_needed()
            self.sessions[session.session_id] = _Managed(session=session)
        return session.session_id

    def submit_edit(self, session_id: str, sketch: np.ndarray,
                    camera: Camera | None) -> dict:
        managed = self._get(session_id)
        acquired = managed.write_lock.acquire(blocking=self.config.queue_edits)
        if not acquired:
            raise BusyError("an edit is already in progress for this session")
        try:
            session = managed.session
            cam = camera or session.camera
            t0 = time.perf_counter()
            new_set, _, summary = apply_edit(session, sketch, session.reference,
                                             cam, self.mesh, self.store)
            total_ms = (time.perf_counter() - t0) * 1000
            with managed.state_lock:
                managed.touch()
            payload = {
                "session_id": session_id,
                "changed": summary.changed,
                "mask_pixels_2d": summary.mask_pixels_2d,
                "selected_gaussians": summary.selected_gaussians,
                "uv_mask_texels": summary.uv_mask_texels,
                "undo_depth": session.depth,
                "timings_ms": {k: round(v, 2) for k, v in summary.timings_ms.items()},
                "total_ms": round(total_ms, 2),
            }
        finally:
            managed.write_lock.release()
        self._broadcast(managed, payload, new_set, cam)
        return payload

    def frame(self, session_id: str, camera: Camera | None, fmt: str = "png") -> bytes:
        managed = self._get(session_id)
        with managed.state_lock:
            gset = managed.session.current_set(self.mesh)
            cam = camera or managed.session.camera
        frame = rasterize(gset, cam)
        if fmt == "raw":
            header = json.dumps({"width": frame.width, "height": frame.height,
                                 "channels": 4, "dtype": "float32"}).encode()
            body = np.concatenate([frame.rgb.reshape(-1),
                                   frame.alpha.reshape(-1)]).astype("<f4").tobytes()
            return len(header).to_bytes(4, "little") + header + body
        return frame.to_png_bytes()

    def undo(self, session_id: str) -> dict:
        managed = self._get(session_id)
        if not managed.write_lock.acquire(blocking=self.config.queue_edits):
            raise BusyError("an edit is in progress; retry undo afterwards")
        try:
            with managed.state_lock:
                undone = managed.session.undo()
                depth = managed.session.depth
                managed.touch()
        finally:
            managed.write_lock.release()
        return {"session_id": session_id, "undone": undone, "depth": depth}

    def save(self, session_id: str) -> dict:
        managed = self._get(session_id)
        path = self._session_path(session_id)
        with managed.state_lock:
            try:
                save_session_dir(managed.session, path)
            except OSError as exc:
                raise StorageError(f"cannot persist session: {exc}") from exc
        return {"session_id": session_id, "path": str(path)}

    # -- websocket fan-out ---------------------------------------------------

    def subscribe(self, session_id: str, loop, queue, fmt: str):
        managed = self._get(session_id)
        managed.subscribers.append((loop, queue, fmt))
        return managed

    def unsubscribe(self, managed: _Managed, loop, queue):
        managed.subscribers = [(lp, q, f) for lp, q, f in managed.subscribers
                               if q is not queue]

    def _broadcast(self, managed: _Managed, summary: dict, gset, camera) -> None:
        if not managed.subscribers:
            return
        frame = rasterize(gset, camera)
        png_b64 = None
        raw_b64 = None
        for loop, queue, fmt in list(managed.subscribers):
            msg = {"type": "edit", "summary": summary}
            if fmt == "png":
                if png_b64 is None:
                    png_b64 = base64.b64encode(frame.to_png_bytes()).decode()
                msg["frame_png_b64"] = png_b64
            elif fmt == "raw":
                if raw_b64 is None:
                    body = np.concatenate([frame.rgb.reshape(-1),
                                           frame.alpha.reshape(-1)]
                                          ).astype("<f4").tobytes()
                    raw_b64 = base64.b64encode(body).decode()
                msg["frame_raw_b64"] = raw_b64
                msg["frame_shape"] = {"width": frame.width, "height": frame.height,
                                      "channels": 4, "dtype": "float32"}
            try:
                loop.call_soon_threadsafe(queue.put_nowait, msg)
            except RuntimeError:
                pass  # subscriber's loop already gone


# -- HTTP layer --------------------------------------------------------------

def _error(code: str, message: str, status: int) -> JSONResponse:
    return JSONResponse({"error": {"code": code, "message": message}},
                        status_code=status)


def _decode_image_field(body: dict, field_name: str) -> np.ndarray:
    raw = body.get(field_name)
    if not isinstance(raw, str) or not raw:
        raise InputError(f"missing base64 image field {field_name!r}")
    try:
        data = base64.b64decode(raw, validate=True)
    except Exception as exc:
        raise InputError(f"{field_name}: invalid base64: {exc}") from exc
    return decode_png(data)


def create_app(config: ServiceConfig | None = None) -> FastAPI:
    config = config or ServiceConfig.from_env()
    service = SessionService(config)
    app = FastAPI(title="sketchsplat session service")
    app.state.service = service

    @app.exception_handler(SketchSplatError)
    async def _handle_domain(_req: Request, exc: SketchSplatError):
        if isinstance(exc, InputError):
            return _error("input_error", str(exc), 400)
        if isinstance(exc, BusyError):
            return _error("busy", str(exc), 409)
        if isinstance(exc, CapacityError):
            return _error("capacity", str(exc), 429)
        if isinstance(exc, StorageError):
            return _error("storage_error", str(exc), 500)
        return _error("input_error", str(exc), 400)

    def _camera_from_body(body: dict, fallback: Camera | None = None) -> Camera | None:
        cam = body.get("camera")
        if cam is None:
            return fallback
        return Camera.from_json_dict(cam)

    @app.post("/sessions")
    def post_sessions(body: dict):
        sketch = binarize_sketch(_decode_image_field(body, "sketch"))
        reference = resample_rgb(_decode_image_field(body, "reference"), INPUT_SIZE)
        camera = _camera_from_body(
            body, default_camera((config.frame_size, config.frame_size)))
        session_id = service.create(sketch, reference, camera)
        return {"session_id": session_id}

    @app.post("/sessions/{session_id}/edits")
    def post_edit(session_id: str, body: dict):
        sketch = binarize_sketch(_decode_image_field(body, "sketch"))
        camera = _camera_from_body(body)
        try:
            return service.submit_edit(session_id, sketch, camera)
        except KeyError:
            return _error("not_found", f"no session {session_id}", 404)

    @app.get("/sessions/{session_id}/frame")
    def get_frame(session_id: str, cam: str | None = Query(default=None),
                  fmt: str = Query(default="png")):
        camera = Camera.from_json(cam) if cam else None
        if fmt not in ("png", "raw"):
            raise InputError(f"fmt must be png or raw, got {fmt!r}")
        try:
            payload = service.frame(session_id, camera, fmt)
        except KeyError:
            return _error("not_found", f"no session {session_id}", 404)
        media = "image/png" if fmt == "png" else "application/octet-stream"
        return Response(content=payload, media_type=media)

    @app.post("/sessions/{session_id}/undo")
    def post_undo(session_id: str):
        try:
            return service.undo(session_id)
        except KeyError:
            return _error("not_found", f"no session {session_id}", 404)

    @app.post("/sessions/{session_id}/save")
    def post_save(session_id: str):
        try:
            return service.save(session_id)
        except KeyError:
            return _error("not_found", f"no session {session_id}", 404)

    @app.websocket("/sessions/{session_id}/stream")
    async def ws_stream(websocket: WebSocket, session_id: str):
        await websocket.accept()
        loop = asyncio.get_running_loop()
        queue: asyncio.Queue = asyncio.Queue()
        try:
            managed = await asyncio.to_thread(service.subscribe, session_id,
                                              loop, queue, "png")
        except KeyError:
            await websocket.send_json(
                {"type": "error", "code": "not_found",
                 "message": f"no session {session_id}"})
            await websocket.close()
            return
        await websocket.send_json({"type": "hello", "session_id": session_id})

        async def pump_outgoing():
            while True:
                msg = await queue.get()
                await websocket.send_json(msg)

        pump = asyncio.create_task(pump_outgoing())
        try:
            while True:
                text = await websocket.receive_text()
                try:
                    req = json.loads(text)
                except json.JSONDecodeError:
                    await websocket.send_json({"type": "error", "code": "input_error",
                                               "message": "messages must be JSON"})
                    continue
                if req.get("type") == "set_format" and \
                        req.get("format") in ("png", "raw", "none"):
                    service.unsubscribe(managed, loop, queue)
                    managed.subscribers.append((loop, queue, req["format"]))
                    await websocket.send_json({"type": "ack", "format": req["format"]})
                elif req.get("type") == "ping":
                    await websocket.send_json({"type": "pong"})
        except WebSocketDisconnect:
            pass
        finally:
            pump.cancel()
            service.unsubscribe(managed, loop, queue)

    return app


def main() -> None:  # pragma: no cover - manual entry point
    import uvicorn
    host = os.environ.get("SKETCHSPLAT_HOST", "127.0.0.1")
    port = int(os.environ.get("SKETCHSPLAT_PORT", "8787"))
    uvicorn.run(create_app(), host=host, port=port)


if __name__ == "__main__":  # pragma: no cover
    main()
