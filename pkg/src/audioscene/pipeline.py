"""End-to-end inference shared by the CLI and the HTTP service.

A ``ModelBundle`` collects the trained artifacts of one run directory. Every
image it produces carries a provenance record (sources, gains, lambda, seed,
model checksums) sufficient to regenerate the image bit-identically offline:
``regenerate`` replays any record against the same bundle.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .audio import Waveform, compute_log_spectrogram, load_and_standardize, mix
from .encoders import (
    AudioEncoder,
    Embedding,
    ImageEncoder,
    load_audio_encoder,
    load_image,
    load_image_encoder,
)
from .generation import (
    ConditionalImageDecoder,
    GeneratedImage,
    GeneratorLatent,
    generate,
    invert,
    load_decoder,
    sample_noise,
)
from .latent_ops import direction_edit, interpolate, volume_direction
from .manifest import PairManifest, load_manifest

WORKSPACE_FILE = "workspace.json"
DEFAULT_INVERSION_STEPS = 300
DEFAULT_INVERSION_LR = 0.05


def provenance_id(record: dict) -> str:
    """Stable id for a provenance record (canonical JSON hash)."""
    blob = json.dumps(record, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass
class ModelBundle:
    """Loaded artifacts of a run: encoders, decoder, and the clip manifest."""

    audio_encoder: AudioEncoder
    image_encoder: ImageEncoder
    decoder: ConditionalImageDecoder
    manifest: PairManifest
    audio_duration_s: float = 10.0
    run_dir: Path | None = None

    @classmethod
    def load(cls, run_dir: str | Path) -> "ModelBundle":
        run_dir = Path(run_dir)
        ws_path = run_dir / WORKSPACE_FILE
        if not ws_path.exists():
            raise FileNotFoundError(f"no checkpoint found: missing {ws_path}")
        ws = json.loads(ws_path.read_text())
        audio_ckpt = run_dir / ws["audio_encoder"]
        decoder_ckpt = run_dir / ws["decoder"]
        for p, what in [(audio_ckpt, "audio encoder"), (decoder_ckpt, "decoder")]:
            if not p.exists():
                raise FileNotFoundError(f"no checkpoint found: missing {what} at {p}")
        return cls(
            audio_encoder=load_audio_encoder(audio_ckpt),
            image_encoder=load_image_encoder(run_dir / ws["image_encoder"]),
            decoder=load_decoder(decoder_ckpt),
            manifest=load_manifest(run_dir / ws["manifest"]),
            audio_duration_s=float(ws.get("audio_duration_s", 10.0)),
            run_dir=run_dir,
        )

    def checksums(self) -> dict:
        return {
            "audio_encoder": self.audio_encoder.checksum(),
            "image_encoder": self.image_encoder.checksum(),
            "decoder": _decoder_checksum(self.decoder),
        }

    # -- source resolution ---------------------------------------------------

    def resolve_waveform(self, ref: str, upload_paths: dict[str, str] | None = None,
                         stored_path: str | None = None) -> Waveform:
        """Load the waveform behind a ``clip:<id>`` or ``upload:<id>`` ref."""
        kind, _, key = ref.partition(":")
        if kind == "clip":
            rec = self.manifest.get(key)
            return load_and_standardize(rec.audio_path,
                                        target_duration_s=self.audio_duration_s)
        if kind == "upload":
            path = (upload_paths or {}).get(key, stored_path)
            if path is None or not Path(path).exists():
                raise KeyError(f"unknown upload {key!r}")
            return load_and_standardize(path, target_duration_s=self.audio_duration_s)
        raise ValueError(f"unrecognized source ref {ref!r}")

    def clip_image_path(self, clip_id: str) -> Path:
        from .alignment import clip_frame_path

        rec = self.manifest.get(clip_id)
        use_selection = rec.selected_frame_idx is not None
        return clip_frame_path(rec, use_selection)

    def clip_visual_embedding(self, clip_id: str) -> Embedding:
        return self.image_encoder.encode_image(load_image(self.clip_image_path(clip_id)))

    def audio_condition(self, sources: list[dict],
                        upload_paths: dict[str, str] | None = None) -> tuple[Embedding, dict]:
        """mix(scale_volume(...)) -> spectrogram -> audio embedding."""
        if not sources:
            raise ValueError("at least one audio source required")
        waveforms, gains = [], []
        for src in sources:
            waveforms.append(self.resolve_waveform(src["ref"], upload_paths,
                                                   src.get("path")))
            gains.append(float(src.get("gain", 1.0)))
        mixed = mix(waveforms, gains)
        emb = self.audio_encoder.encode(compute_log_spectrogram(mixed))
        stats = {
            "dim": emb.dim,
            "norm": float(np.linalg.norm(emb.vector)),
            "mix_peak": float(np.max(np.abs(mixed.samples))),
        }
        return emb, stats

    # -- image-producing operations -------------------------------------------

    def run_generate(self, sources: list[dict], seed: int = 0,
                     upload_paths: dict[str, str] | None = None):
        condition, stats = self.audio_condition(sources, upload_paths)
        noise = sample_noise(self.decoder.noise_dim, seed)
        image = generate(GeneratorLatent(noise=noise, condition=condition), self.decoder)
        record = {
            "kind": "generate",
            "sources": _normalize_sources(sources),
            "seed": int(seed),
            "duration_s": self.audio_duration_s,
            "model": self.checksums(),
        }
        return image, record, stats

    def run_interpolate(self, image_ref: str, audio_sources: list[dict], lam: float,
                        seed: int = 0, upload_paths: dict[str, str] | None = None):
        clip_id = _require_clip_ref(image_ref)
        zv = self.clip_visual_embedding(clip_id)
        za, stats = self.audio_condition(audio_sources, upload_paths)
        condition = interpolate(zv, za, lam)
        noise = sample_noise(self.decoder.noise_dim, seed)
        image = generate(GeneratorLatent(noise=noise, condition=condition), self.decoder)
        record = {
            "kind": "interpolate",
            "image_ref": image_ref,
            "sources": _normalize_sources(audio_sources),
            "lambda": float(lam),
            "seed": int(seed),
            "duration_s": self.audio_duration_s,
            "model": self.checksums(),
        }
        return image, record, stats

    def run_edit(self, image_ref: str, audio_sources: list[dict], gain_hi: float,
                 gain_lo: float, lam: float,
                 steps: int = DEFAULT_INVERSION_STEPS,
                 lr: float = DEFAULT_INVERSION_LR,
                 upload_paths: dict[str, str] | None = None):
        """Invert the image, move along the volume direction, regenerate."""
        if gain_hi == gain_lo:
            raise ValueError("gain_hi and gain_lo must differ")
        clip_id = _require_clip_ref(image_ref)
        target = load_image(self.clip_image_path(clip_id))
        if target.shape[:2] != (self.decoder.image_size, self.decoder.image_size):
            from PIL import Image as PILImage

            pil = PILImage.fromarray((target * 255).astype(np.uint8)).resize(
                (self.decoder.image_size, self.decoder.image_size), PILImage.BILINEAR)
            target = np.asarray(pil, dtype=np.float32) / 255.0
        inv = invert(target, self.decoder, steps=steps, lr=lr)

        audio = mix([self.resolve_waveform(s["ref"], upload_paths, s.get("path"))
                     for s in audio_sources],
                    [float(s.get("gain", 1.0)) for s in audio_sources])
        vd = volume_direction(audio, self.audio_encoder, gain_hi, gain_lo)
        condition = direction_edit(inv.condition, vd.hi, vd.lo, lam)
        image = generate(GeneratorLatent(noise=inv.noise, condition=condition),
                         self.decoder)
        record = {
            "kind": "edit",
            "image_ref": image_ref,
            "sources": _normalize_sources(audio_sources),
            "gain_hi": float(gain_hi),
            "gain_lo": float(gain_lo),
            "lambda": float(lam),
            "inversion": {"steps": int(steps), "lr": float(lr)},
            "duration_s": self.audio_duration_s,
            "model": self.checksums(),
        }
        return image, record, {"inversion_loss": inv.loss}


def _require_clip_ref(ref: str) -> str:
    kind, _, key = ref.partition(":")
    if kind != "clip" or not key:
        raise ValueError(f"image_ref must be 'clip:<id>', got {ref!r}")
    return key


def _normalize_sources(sources: list[dict]) -> list[dict]:
    out = []
    for src in sources:
        entry = {"ref": src["ref"], "gain": float(src.get("gain", 1.0))}
        if "path" in src and src["path"]:
            entry["path"] = str(src["path"])
        out.append(entry)
    return out


def _decoder_checksum(decoder: ConditionalImageDecoder) -> str:
    h = hashlib.sha256()
    for name, p in sorted(decoder.net_.state_dict().items()):
        h.update(name.encode())
        h.update(np.ascontiguousarray(p.detach().cpu().numpy()).tobytes())
    return h.hexdigest()


def regenerate(record: dict, bundle: ModelBundle,
               upload_paths: dict[str, str] | None = None) -> GeneratedImage:
    """Replay a provenance record; output is bit-identical to the original.

    Refuses to run against a bundle whose model checksums differ from the
    record, since that could silently produce a different image.
    """
    expected = record.get("model")
    if expected and expected != bundle.checksums():
        raise ValueError("model checksums do not match the provenance record")
    kind = record["kind"]
    if kind == "generate":
        image, _, _ = bundle.run_generate(record["sources"], seed=record["seed"],
                                          upload_paths=upload_paths)
    elif kind == "interpolate":
        image, _, _ = bundle.run_interpolate(record["image_ref"], record["sources"],
                                             record["lambda"], seed=record["seed"],
                                             upload_paths=upload_paths)
    elif kind == "edit":
        image, _, _ = bundle.run_edit(record["image_ref"], record["sources"],
                                      record["gain_hi"], record["gain_lo"],
                                      record["lambda"],
                                      steps=record["inversion"]["steps"],
                                      lr=record["inversion"]["lr"],
                                      upload_paths=upload_paths)
    else:
        raise ValueError(f"unknown provenance kind {kind!r}")
    return image


def png_bytes(image: GeneratedImage) -> bytes:
    """Quantize to 8-bit and encode PNG; deterministic for equal pixels."""
    import io

    from PIL import Image as PILImage

    arr = np.clip(image.pixels * 255.0 + 0.5, 0, 255).astype(np.uint8)
    buf = io.BytesIO()
    PILImage.fromarray(arr, mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def write_workspace(run_dir: str | Path, *, audio_encoder: str, image_encoder: str,
                    decoder: str, manifest: str, audio_duration_s: float) -> Path:
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    ws = {
        "audio_encoder": audio_encoder,
        "image_encoder": image_encoder,
        "decoder": decoder,
        "manifest": manifest,
        "audio_duration_s": audio_duration_s,
    }
    path = run_dir / WORKSPACE_FILE
    path.write_text(json.dumps(ws, indent=2, sort_keys=True))
    return path
