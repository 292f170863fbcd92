"""HTTP service for the interactive steering workflow.

Endpoints: browse clips, upload sounds, generate from gain-weighted mixes,
interpolate an image with an audio embedding, and run inversion-based
volume-direction edits. Every generated image is persisted under its
provenance hash and is addressable at /images/{id}; the provenance record
returned with each response regenerates the image bit-identically through
the CLI. The service is read-only over manifests and checkpoints.
"""

from __future__ import annotations

import io
import json
import threading
from collections import OrderedDict
from pathlib import Path

import numpy as np
from fastapi import FastAPI, File, Header, HTTPException, UploadFile
from fastapi.responses import FileResponse, JSONResponse, Response
from pydantic import BaseModel, Field, model_validator

from .pipeline import (
    DEFAULT_INVERSION_LR,
    DEFAULT_INVERSION_STEPS,
    ModelBundle,
    png_bytes,
    provenance_id,
)

MAX_UPLOAD_BYTES = 8 * 1024 * 1024
CACHE_SIZE = 256


class _LRU:
    """Tiny bounded mapping; oldest entries fall out first."""

    def __init__(self, cap: int):
        self.cap = cap
        self._d: OrderedDict = OrderedDict()

    def get(self, key, default=None):
        if key in self._d:
            self._d.move_to_end(key)
            return self._d[key]
        return default

    def put(self, key, value):
        self._d[key] = value
        self._d.move_to_end(key)
        while len(self._d) > self.cap:
            self._d.popitem(last=False)

    def __contains__(self, key):
        return key in self._d

    def items(self):
        return self._d.items()


class SessionState:
    """Per-session caches: uploads, derived embeddings, recent results."""

    def __init__(self, session_id: str, cache_size: int = CACHE_SIZE):
        self.session_id = session_id
        self.uploads = _LRU(cache_size)
        self.recent = _LRU(cache_size)
        self.edit_lock = threading.Lock()


class SourceSpec(BaseModel):
    clip_id: str | None = None
    upload_id: str | None = None
    gain: float = Field(default=1.0, ge=0.0)

    @model_validator(mode="after")
    def _exactly_one_ref(self):
        if (self.clip_id is None) == (self.upload_id is None):
            raise ValueError("exactly one of clip_id/upload_id required")
        return self

    @property
    def ref(self) -> str:
        return f"clip:{self.clip_id}" if self.clip_id else f"upload:{self.upload_id}"


class GenerateRequest(BaseModel):
    sources: list[SourceSpec] = Field(min_length=1)
    seed: int = 0


class InterpolateRequest(BaseModel):
    image_ref: str
    audio_ref: SourceSpec
    lam: float = Field(alias="lambda", ge=0.0, le=1.0)
    seed: int = 0

    model_config = {"populate_by_name": True}


class EditRequest(BaseModel):
    image_ref: str
    audio_ref: SourceSpec
    gain_hi: float = Field(ge=0.0)
    gain_lo: float = Field(ge=0.0)
    lam: float = Field(alias="lambda")
    steps: int = Field(default=DEFAULT_INVERSION_STEPS, ge=0)
    lr: float = Field(default=DEFAULT_INVERSION_LR, gt=0.0)

    model_config = {"populate_by_name": True}

    @model_validator(mode="after")
    def _gains_differ(self):
        if self.gain_hi == self.gain_lo:
            raise ValueError("gain_hi and gain_lo must differ")
        return self


def create_app(bundle: ModelBundle | None = None,
               output_dir: str | Path | None = None,
               cache_size: int = CACHE_SIZE,
               max_upload_bytes: int = MAX_UPLOAD_BYTES,
               ui_dir: str | Path | None = None) -> FastAPI:
    app = FastAPI(title="audioscene steering service", version="0.1.0")
    output_dir = Path(output_dir) if output_dir is not None else Path("service_out")
    images_dir = output_dir / "images"
    uploads_dir = output_dir / "uploads"
    sessions: dict[str, SessionState] = {}
    state_lock = threading.Lock()

    def session(session_id: str | None) -> SessionState:
        key = session_id or "default"
        with state_lock:
            if key not in sessions:
                sessions[key] = SessionState(key, cache_size)
            return sessions[key]

    def require_bundle() -> ModelBundle:
        if bundle is None:
            raise HTTPException(status_code=503, detail="model not loaded")
        return bundle

    def resolve_sources(specs: list[SourceSpec], sess: SessionState) -> list[dict]:
        b = require_bundle()
        out = []
        for spec in specs:
            if spec.clip_id is not None:
                try:
                    b.manifest.get(spec.clip_id)
                except KeyError:
                    raise HTTPException(status_code=404,
                                        detail=f"unknown clip {spec.clip_id!r}")
                out.append({"ref": spec.ref, "gain": spec.gain})
            else:
                path = sess.uploads.get(spec.upload_id)
                if path is None:
                    raise HTTPException(status_code=404,
                                        detail=f"unknown upload {spec.upload_id!r}")
                out.append({"ref": spec.ref, "gain": spec.gain, "path": str(path)})
        return out

    def persist(image, record: dict, sess: SessionState) -> tuple[str, bytes]:
        image_id = provenance_id(record)
        data = png_bytes(image)
        images_dir.mkdir(parents=True, exist_ok=True)
        (images_dir / f"{image_id}.png").write_bytes(data)
        (images_dir / f"{image_id}.json").write_text(
            json.dumps({**record, "image_id": image_id}, indent=2, sort_keys=True))
        sess.recent.put(image_id, record)
        return image_id, data

    @app.get("/clips")
    def list_clips():
        b = require_bundle()
        rows = []
        for rec in b.manifest:
            row = {"clip_id": rec.clip_id, "duration": rec.duration_s}
            if rec.class_label is not None:
                row["label"] = rec.class_label
            rows.append(row)
        return sorted(rows, key=lambda r: r["clip_id"])

    @app.post("/generate")
    def generate_endpoint(req: GenerateRequest,
                          x_session_id: str | None = Header(default=None)):
        sess = session(x_session_id)
        sources = resolve_sources(req.sources, sess)
        uploads = {k: v for k, v in sess.uploads.items()}
        image, record, stats = require_bundle().run_generate(
            sources, seed=req.seed, upload_paths=uploads)
        image_id, _ = persist(image, record, sess)
        return {"image_id": image_id, "image_url": f"/images/{image_id}",
                "condition_stats": stats,
                "provenance": {**record, "image_id": image_id}}

    @app.post("/interpolate")
    def interpolate_endpoint(req: InterpolateRequest,
                             x_session_id: str | None = Header(default=None)):
        sess = session(x_session_id)
        b = require_bundle()
        try:
            b.manifest.get(req.image_ref)
        except KeyError:
            raise HTTPException(status_code=404, detail=f"unknown clip {req.image_ref!r}")
        sources = resolve_sources([req.audio_ref], sess)
        uploads = {k: v for k, v in sess.uploads.items()}
        image, record, stats = b.run_interpolate(
            f"clip:{req.image_ref}", sources, req.lam, seed=req.seed,
            upload_paths=uploads)
        image_id, _ = persist(image, record, sess)
        return {"image_id": image_id, "image_url": f"/images/{image_id}",
                "condition_stats": stats,
                "provenance": {**record, "image_id": image_id}}

    @app.post("/edit")
    def edit_endpoint(req: EditRequest,
                      x_session_id: str | None = Header(default=None)):
        sess = session(x_session_id)
        b = require_bundle()
        try:
            b.manifest.get(req.image_ref)
        except KeyError:
            raise HTTPException(status_code=404, detail=f"unknown clip {req.image_ref!r}")
        sources = resolve_sources([req.audio_ref], sess)
        uploads = {k: v for k, v in sess.uploads.items()}
        # inversion is the one long-running op: one at a time per session
        with sess.edit_lock:
            image, record, stats = b.run_edit(
                f"clip:{req.image_ref}", sources, req.gain_hi, req.gain_lo,
                req.lam, steps=req.steps, lr=req.lr, upload_paths=uploads)
        image_id, _ = persist(image, record, sess)
        return {"image_id": image_id, "image_url": f"/images/{image_id}",
                "inversion_loss": stats["inversion_loss"],
                "provenance": {**record, "image_id": image_id}}

    @app.post("/uploads")
    async def upload_endpoint(file: UploadFile = File(...),
                              x_session_id: str | None = Header(default=None)):
        sess = session(x_session_id)
        data = await file.read()
        if len(data) > max_upload_bytes:
            raise HTTPException(status_code=413, detail="upload too large")
        try:
            from scipy.io import wavfile

            rate, samples = wavfile.read(io.BytesIO(data))
            if np.asarray(samples).shape[0] == 0:
                raise ValueError("empty audio")
        except Exception:
            raise HTTPException(status_code=415, detail="payload is not decodable WAV audio")
        import hashlib

        upload_id = hashlib.sha256(data).hexdigest()[:12]
        uploads_dir.mkdir(parents=True, exist_ok=True)
        path = uploads_dir / f"{upload_id}.wav"
        path.write_bytes(data)
        sess.uploads.put(upload_id, str(path))
        return {"upload_id": upload_id}

    @app.get("/images/{image_id}")
    def image_endpoint(image_id: str):
        path = images_dir / f"{image_id}.png"
        if not path.exists():
            raise HTTPException(status_code=404, detail="unknown image id")
        return FileResponse(path, media_type="image/png")

    @app.get("/images/{image_id}/provenance")
    def provenance_endpoint(image_id: str):
        path = images_dir / f"{image_id}.json"
        if not path.exists():
            raise HTTPException(status_code=404, detail="unknown image id")
        return JSONResponse(json.loads(path.read_text()))

    @app.get("/schema")
    def schema_endpoint():
        return JSONResponse(app.openapi())

    if ui_dir is not None and Path(ui_dir).is_dir():
        from fastapi.staticfiles import StaticFiles

        app.mount("/ui", StaticFiles(directory=str(ui_dir), html=True), name="ui")

    return app
