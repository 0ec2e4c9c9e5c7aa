"""Session-based HTTP inference service.

Exposes the deployment loop to clients: create a session from an image to
get the base prediction, then post scribble masks repeatedly; every post
runs one editor update and advances the session.  Scribbles always come
from the client — the robot user only appears behind an explicit debug
endpoint that requires an uploaded ground-truth mask.

Wire format: JSON envelopes with base64-encoded 8-bit PNGs (see
:mod:`interseg.wire`).  Sessions live in memory, optionally mirrored to
disk, and expire after a TTL.
"""
from __future__ import annotations

import json
import os
import threading
import time
import uuid
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from fastapi import FastAPI, Request
from fastapi.responses import FileResponse, JSONResponse
from pydantic import BaseModel

from . import __version__, wire
from .core import ImageSlice, LabelMap, Prediction, ScribbleMask
from .dataio import fit_to_shape
from .nn import DOWN_FACTOR, UNet, assemble_inter_input, channel_manifest, load_checkpoint
from .robot import RobotUserConfig, generate_scribbles

DEFAULT_TTL = 3600.0

ENV_CHECKPOINT = "INTERSEG_CHECKPOINT"
ENV_HOST = "INTERSEG_HOST"
ENV_PORT = "INTERSEG_PORT"
ENV_TTL = "INTERSEG_SESSION_TTL"
ENV_PERSIST = "INTERSEG_PERSIST_DIR"


class ApiError(Exception):
    def __init__(self, status: int, code: str, message: str):
        super().__init__(message)
        self.status = status
        self.code = code
        self.message = message


class CreateSessionRequest(BaseModel):
    image_png_b64: str


class ScribbleRequest(BaseModel):
    scribbles_png_b64: str
    idempotency_key: str | None = None


class GroundTruthRequest(BaseModel):
    mask_png_b64: str


class RobotScribbleRequest(BaseModel):
    seed: int | None = None


@dataclass
class Session:
    session_id: str
    image_raw: np.ndarray          # original intensities, original shape
    image_model: np.ndarray        # normalized, padded/cropped to model size
    base_probs: np.ndarray         # (C, Hm, Wm)
    current_probs: np.ndarray
    created: float
    last_access: float
    interaction_count: int = 0
    history: list = field(default_factory=list)   # (scribble marks, probs)
    idempotent: dict = field(default_factory=dict)
    gt_labels: np.ndarray | None = None
    robot_calls: int = 0
    lock: threading.RLock = field(default_factory=threading.RLock)

    @property
    def orig_shape(self):
        return self.image_raw.shape

    @property
    def model_shape(self):
        return self.image_model.shape


class EditingService:
    """Model state plus the session store; the FastAPI app delegates here."""

    def __init__(self, bundle=None, *, ttl: float = DEFAULT_TTL,
                 persist_dir=None):
        self.bundle = bundle
        self.base: UNet | None = bundle.require("base") if bundle else None
        self.editor: UNet | None = bundle.require("editor") if bundle else None
        self.median = bundle.median_intensity if bundle else None
        self.ttl = ttl
        self.persist_dir = Path(persist_dir) if persist_dir else None
        self.sessions: dict[str, Session] = {}
        self._store_lock = threading.Lock()
        if self.persist_dir:
            self.persist_dir.mkdir(parents=True, exist_ok=True)
            self._load_persisted()

    # ------------------------------------------------------------- helpers

    @property
    def num_classes(self) -> int:
        return self.base.spec.num_classes

    @property
    def patch_size(self) -> int | None:
        extra = self.bundle.extra if self.bundle else {}
        return extra.get("patch_size")

    def _require_models(self):
        if self.base is None or self.editor is None:
            raise ApiError(503, "no_model", "no checkpoint is loaded")

    def _model_shape(self, shape):
        if self.patch_size:
            return (self.patch_size, self.patch_size)
        up = lambda v: max(DOWN_FACTOR, ((v + DOWN_FACTOR - 1) // DOWN_FACTOR) * DOWN_FACTOR)
        return (up(shape[0]), up(shape[1]))

    def _to_original(self, labels_model: np.ndarray, orig_shape, fill: int = 0):
        """Undo the pad/crop: place the model-size mask back into the
        original geometry (``fill`` where the crop discarded pixels)."""
        h, w = orig_shape
        hm, wm = labels_model.shape
        # undo padding (model larger): center-crop back
        out = labels_model
        if hm > h or wm > w:
            out = fit_to_shape(out, (min(h, hm), min(w, wm)))
        # undo cropping (model smaller): pad back, centered
        if out.shape != (h, w):
            canvas = np.full((h, w), fill, dtype=out.dtype)
            ph = (h - out.shape[0]) // 2
            pw = (w - out.shape[1]) // 2
            canvas[ph:ph + out.shape[0], pw:pw + out.shape[1]] = out
            out = canvas
        return out

    def _sweep(self):
        now = time.time()
        with self._store_lock:
            dead = [sid for sid, s in self.sessions.items()
                    if now - s.last_access > self.ttl]
            for sid in dead:
                self.sessions.pop(sid, None)
                self._drop_persisted(sid)

    def _get(self, session_id: str) -> Session:
        self._sweep()
        with self._store_lock:
            session = self.sessions.get(session_id)
        if session is None:
            raise ApiError(404, "unknown_session", f"no session {session_id!r}")
        session.last_access = time.time()
        return session

    # ---------------------------------------------------------- operations

    def create_session(self, image_b64: str) -> dict:
        self._require_models()
        self._sweep()
        try:
            raw = wire.decode_image_b64(image_b64)
        except wire.WireError as exc:
            raise ApiError(400, "bad_image", str(exc)) from exc
        model_shape = self._model_shape(raw.shape)
        fitted = fit_to_shape(raw, model_shape)
        norm = (fitted / self.median).astype(np.float32) if self.median else fitted
        probs = self.base.forward(norm[None, None])[0]
        session = Session(
            session_id=uuid.uuid4().hex,
            image_raw=raw,
            image_model=norm,
            base_probs=probs,
            current_probs=probs,
            created=time.time(),
            last_access=time.time(),
        )
        with self._store_lock:
            self.sessions[session.session_id] = session
        self._persist(session)
        return {"session_id": session.session_id, **self._prediction_payload(session)}

    def _prediction_payload(self, session: Session) -> dict:
        labels_model = session.current_probs.argmax(axis=0)
        labels = self._to_original(labels_model, session.orig_shape)
        confidence = {}
        for c in range(self.num_classes):
            sel = labels_model == c
            confidence[str(c)] = float(session.current_probs[c][sel].mean()) if sel.any() else 0.0
        payload = {
            "mask_png_b64": wire.encode_mask_b64(labels),
            "interaction_count": session.interaction_count,
            "confidence": confidence,
            "shape": list(session.orig_shape),
            "num_classes": self.num_classes,
        }
        if session.gt_labels is not None:
            payload["dice"] = self._dice_against_gt(session)
        return payload

    def _dice_against_gt(self, session: Session) -> dict:
        from .core import dice

        labels = self._to_original(session.current_probs.argmax(axis=0),
                                   session.orig_shape)
        pred = LabelMap(labels.astype(np.int64), self.num_classes)
        gt = LabelMap(session.gt_labels, self.num_classes)
        return {str(c): round(dice(gt, pred, c), 10) for c in range(self.num_classes)}

    def apply_scribbles(self, session_id: str, scribbles_b64: str,
                        idempotency_key: str | None = None) -> dict:
        self._require_models()
        session = self._get(session_id)
        with session.lock:
            if idempotency_key and idempotency_key in session.idempotent:
                return session.idempotent[idempotency_key]
            try:
                marks = wire.decode_mask_b64(scribbles_b64)
            except wire.WireError as exc:
                raise ApiError(400, "bad_scribbles", str(exc)) from exc
            if marks.shape != session.orig_shape:
                raise ApiError(400, "shape_mismatch",
                               f"scribbles are {list(marks.shape)}, session image "
                               f"is {list(session.orig_shape)}")
            if marks.min() < 0 or marks.max() > self.num_classes:
                raise ApiError(400, "bad_scribbles",
                               f"scribble values must lie in [0, {self.num_classes}]")
            sentinel = self.num_classes
            marks_model = fit_to_shape(marks, session.model_shape, pad_value=sentinel)
            x = assemble_inter_input(
                ImageSlice(session.image_model),
                Prediction(session.current_probs),
                ScribbleMask(marks_model.astype(np.int64), self.num_classes),
            )
            probs = self.editor.forward(x[None])[0]
            session.history.append((marks_model, probs))
            session.current_probs = probs
            session.interaction_count += 1
            payload = self._prediction_payload(session)
            if idempotency_key:
                session.idempotent[idempotency_key] = payload
            self._persist(session)
            return payload

    def get_session(self, session_id: str) -> dict:
        session = self._get(session_id)
        with session.lock:
            history = [
                {"scribbles_png_b64": wire.encode_mask_b64(
                    self._to_original(marks, session.orig_shape)),
                 "mask_png_b64": wire.encode_mask_b64(
                     self._to_original(probs.argmax(axis=0), session.orig_shape))}
                for marks, probs in session.history
            ]
            return {
                "session_id": session.session_id,
                "created": session.created,
                "has_ground_truth": session.gt_labels is not None,
                "history": history,
                **self._prediction_payload(session),
            }

    def reset_session(self, session_id: str) -> dict:
        session = self._get(session_id)
        with session.lock:
            session.current_probs = session.base_probs
            session.history.clear()
            session.idempotent.clear()
            session.interaction_count = 0
            self._persist(session)
            return self._prediction_payload(session)

    def delete_session(self, session_id: str) -> dict:
        self._get(session_id)
        with self._store_lock:
            self.sessions.pop(session_id, None)
        self._drop_persisted(session_id)
        return {"deleted": True, "session_id": session_id}

    def set_ground_truth(self, session_id: str, mask_b64: str) -> dict:
        session = self._get(session_id)
        with session.lock:
            try:
                gt = wire.decode_mask_b64(mask_b64)
            except wire.WireError as exc:
                raise ApiError(400, "bad_mask", str(exc)) from exc
            if gt.shape != session.orig_shape:
                raise ApiError(400, "shape_mismatch",
                               f"mask is {list(gt.shape)}, session image is "
                               f"{list(session.orig_shape)}")
            if gt.min() < 0 or gt.max() >= self.num_classes:
                raise ApiError(400, "bad_mask",
                               f"label values must lie in [0, {self.num_classes - 1}]")
            session.gt_labels = gt.astype(np.int64)
            self._persist(session)
            return {"dice": self._dice_against_gt(session)}

    def robot_scribbles(self, session_id: str, seed: int | None = None) -> dict:
        """Debug endpoint: what the simulated user would scribble now."""
        session = self._get(session_id)
        with session.lock:
            if session.gt_labels is None:
                raise ApiError(400, "no_ground_truth",
                               "upload a ground-truth mask first")
            sentinel = self.num_classes
            gt_model = fit_to_shape(session.gt_labels, session.model_shape,
                                    pad_value=0)
            pred = LabelMap(session.current_probs.argmax(axis=0).astype(np.int64),
                            self.num_classes)
            call_seed = seed if seed is not None else session.robot_calls
            session.robot_calls += 1
            mask = generate_scribbles(pred, LabelMap(gt_model, self.num_classes),
                                      RobotUserConfig(),
                                      np.random.default_rng(call_seed))
            marks = self._to_original(mask.marks, session.orig_shape, fill=sentinel)
            return {"scribbles_png_b64": wire.encode_mask_b64(marks),
                    "sentinel": sentinel}

    def model_info(self) -> dict:
        self._require_models()
        return {
            "version": __version__,
            "num_classes": self.num_classes,
            "sentinel": self.num_classes,
            "patch_size": self.patch_size,
            "median_intensity": self.median,
            "editor_channels": channel_manifest(self.num_classes, "editor"),
            "models": {name: {"params": m.num_params, "step": m.step,
                              "base_channels": m.spec.base_channels}
                       for name, m in self.bundle.models.items()},
        }

    # --------------------------------------------------------- persistence

    def _persist(self, session: Session):
        if not self.persist_dir:
            return
        path = self.persist_dir / f"{session.session_id}.npz"
        arrays = {
            "image_raw": session.image_raw,
            "image_model": session.image_model,
            "base_probs": session.base_probs,
            "current_probs": session.current_probs,
        }
        for i, (marks, probs) in enumerate(session.history):
            arrays[f"hist_marks_{i}"] = marks
            arrays[f"hist_probs_{i}"] = probs
        if session.gt_labels is not None:
            arrays["gt_labels"] = session.gt_labels
        meta = {
            "session_id": session.session_id,
            "created": session.created,
            "last_access": session.last_access,
            "interaction_count": session.interaction_count,
            "n_history": len(session.history),
            "robot_calls": session.robot_calls,
        }
        np.savez_compressed(path, meta=np.asarray(json.dumps(meta)), **arrays)

    def _drop_persisted(self, session_id: str):
        if self.persist_dir:
            (self.persist_dir / f"{session_id}.npz").unlink(missing_ok=True)

    def _load_persisted(self):
        for path in sorted(self.persist_dir.glob("*.npz")):
            try:
                with np.load(path, allow_pickle=False) as data:
                    meta = json.loads(str(data["meta"]))
                    history = [(data[f"hist_marks_{i}"], data[f"hist_probs_{i}"])
                               for i in range(meta["n_history"])]
                    session = Session(
                        session_id=meta["session_id"],
                        image_raw=data["image_raw"],
                        image_model=data["image_model"],
                        base_probs=data["base_probs"],
                        current_probs=data["current_probs"],
                        created=meta["created"],
                        last_access=meta["last_access"],
                        interaction_count=meta["interaction_count"],
                        history=history,
                        robot_calls=meta.get("robot_calls", 0),
                        gt_labels=data["gt_labels"] if "gt_labels" in data else None,
                    )
                self.sessions[session.session_id] = session
            except Exception:
                continue  # a corrupt session file must not block startup


def create_app(checkpoint_path=None, *, bundle=None, ttl: float | None = None,
               persist_dir=None, ui_dir=None) -> FastAPI:
    """Build the FastAPI app; configuration falls back to env vars."""
    if bundle is None:
        checkpoint_path = checkpoint_path or os.environ.get(ENV_CHECKPOINT)
        if checkpoint_path:
            bundle = load_checkpoint(checkpoint_path)
    if ttl is None:
        ttl = float(os.environ.get(ENV_TTL, DEFAULT_TTL))
    if persist_dir is None:
        persist_dir = os.environ.get(ENV_PERSIST) or None
    service = EditingService(bundle, ttl=ttl, persist_dir=persist_dir)
    app = FastAPI(title="interseg editing service", version=__version__)
    app.state.service = service

    @app.exception_handler(ApiError)
    async def _api_error(request: Request, exc: ApiError):
        return JSONResponse(status_code=exc.status,
                            content={"code": exc.code, "message": exc.message})

    @app.get("/v1/healthz")
    def healthz():
        return {"status": "ok", "model_loaded": service.base is not None,
                "sessions": len(service.sessions)}

    @app.get("/v1/model")
    def model_info():
        return service.model_info()

    @app.post("/v1/sessions", status_code=200)
    def create_session(req: CreateSessionRequest):
        return service.create_session(req.image_png_b64)

    @app.get("/v1/sessions/{session_id}")
    def get_session(session_id: str):
        return service.get_session(session_id)

    @app.post("/v1/sessions/{session_id}/scribbles")
    def apply_scribbles(session_id: str, req: ScribbleRequest):
        return service.apply_scribbles(session_id, req.scribbles_png_b64,
                                       req.idempotency_key)

    @app.post("/v1/sessions/{session_id}/reset")
    def reset_session(session_id: str):
        return service.reset_session(session_id)

    @app.delete("/v1/sessions/{session_id}")
    def delete_session(session_id: str):
        return service.delete_session(session_id)

    @app.post("/v1/sessions/{session_id}/ground-truth")
    def set_ground_truth(session_id: str, req: GroundTruthRequest):
        return service.set_ground_truth(session_id, req.mask_png_b64)

    @app.post("/v1/sessions/{session_id}/robot-scribbles")
    def robot_scribbles(session_id: str, req: RobotScribbleRequest | None = None):
        seed = req.seed if req else None
        return service.robot_scribbles(session_id, seed)

    if ui_dir:
        ui_path = Path(ui_dir)

        @app.get("/")
        def index():
            return FileResponse(ui_path / "index.html")

        from fastapi.staticfiles import StaticFiles

        app.mount("/ui", StaticFiles(directory=ui_path), name="ui")

    return app
