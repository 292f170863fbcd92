"""Synthetic paired audio-visual corpora for desk-scale experiments.

Each class owns a shared latent: a chord of sine partials on the audio side
and a colored blob at a class-specific position on the image side. A clip
hides its class event inside a longer background-noise window, with frames
showing the blob only while the event is audible. That makes frame choice
and audio duration matter: the middle frame often misses the event, and a
1 s crop from the start usually hears only background noise.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .audio import Waveform, write_wav
from .encoders import save_image
from .manifest import ClipRecord, PairManifest, save_manifest

SAMPLE_RATE = 16000


@dataclass(frozen=True)
class ClassSpec:
    name: str
    freqs: tuple[float, ...]
    color: tuple[float, float, float]
    center: tuple[float, float]
    radius: float
    grating_angle: float
    grating_freq: float


def _class_specs(n_classes: int, rng: np.random.Generator) -> list[ClassSpec]:
    specs = []
    for c in range(n_classes):
        base = 180.0 * (2.0 ** (c / 3.0))
        freqs = (base, base * 1.5, base * 2.3)
        hue = c / n_classes
        color = (
            0.5 + 0.5 * np.cos(2 * np.pi * hue),
            0.5 + 0.5 * np.cos(2 * np.pi * (hue + 1 / 3)),
            0.5 + 0.5 * np.cos(2 * np.pi * (hue + 2 / 3)),
        )
        angle = 2 * np.pi * c / n_classes
        center = (0.5 + 0.3 * np.cos(angle), 0.5 + 0.3 * np.sin(angle))
        specs.append(ClassSpec(name=f"class_{c:02d}", freqs=freqs,
                               color=tuple(float(x) for x in color),
                               center=tuple(float(x) for x in center),
                               radius=0.14 + 0.08 * (c % 4) / 3.0,
                               grating_angle=np.pi * c / n_classes,
                               grating_freq=4.0 + 3.0 * (c % 3)))
    return specs


def _render_event_audio(spec: ClassSpec, duration_s: float, event_start: float,
                        event_dur: float, rng: np.random.Generator) -> np.ndarray:
    n = int(duration_s * SAMPLE_RATE)
    t = np.arange(n) / SAMPLE_RATE
    samples = 0.02 * rng.standard_normal(n)
    detune = 1.0 + 0.02 * rng.standard_normal()
    env = np.clip((t - event_start) / 0.05, 0, 1) * np.clip((event_start + event_dur - t) / 0.05, 0, 1)
    env = np.clip(env, 0, 1)
    for i, f in enumerate(spec.freqs):
        phase = rng.uniform(0, 2 * np.pi)
        samples += env * (0.25 / (i + 1)) * np.sin(2 * np.pi * f * detune * t + phase)
    return np.clip(samples, -1.0, 1.0).astype(np.float32)


def _render_blob_image(spec: ClassSpec, size: int, rng: np.random.Generator,
                       visible: bool) -> np.ndarray:
    # dark background so the class blob dominates pooled conv features; the
    # blob carries a class-specific grating, which survives spatial pooling
    # where raw position does not
    img = 0.08 + 0.04 * rng.standard_normal((size, size, 3))
    if visible:
        yy, xx = np.mgrid[0:size, 0:size] / size
        jitter = 0.03 * rng.standard_normal(2)
        d2 = (xx - (spec.center[0] + jitter[0])) ** 2 + (yy - (spec.center[1] + jitter[1])) ** 2
        mask = np.exp(-d2 / (2 * spec.radius ** 2))
        u = xx * np.cos(spec.grating_angle) + yy * np.sin(spec.grating_angle)
        texture = 0.7 + 0.3 * np.sin(2 * np.pi * spec.grating_freq * u)
        for ch in range(3):
            img[:, :, ch] = img[:, :, ch] * (1 - mask) + spec.color[ch] * texture * mask
    return np.clip(img, 0.0, 1.0).astype(np.float32)


def _write_clip(root: Path, clip_id: str, spec: ClassSpec, duration_s: float,
                frames_per_clip: int, image_size: int, event_dur: float,
                rng: np.random.Generator) -> ClipRecord:
    event_start = float(rng.uniform(0.2, duration_s - event_dur - 0.2))
    samples = _render_event_audio(spec, duration_s, event_start, event_dur, rng)
    audio_path = root / f"{clip_id}.wav"
    write_wav(audio_path, Waveform(samples=samples, sample_rate=SAMPLE_RATE))

    frames_dir = root / clip_id
    frame_times = (np.arange(frames_per_clip) + 0.5) * duration_s / frames_per_clip
    for i, ft in enumerate(frame_times):
        visible = event_start <= ft <= event_start + event_dur
        img = _render_blob_image(spec, image_size, rng, visible)
        save_image(frames_dir / f"frame_{i:03d}.png", img)

    event_mid = event_start + event_dur / 2.0
    selected = int(np.abs(frame_times - event_mid).argmin())
    return ClipRecord(
        clip_id=clip_id,
        audio_path=str(audio_path),
        duration_s=duration_s,
        frames_dir=str(frames_dir),
        class_label=spec.name,
        selected_frame_idx=selected,
    )


def make_synthetic_corpus(root: str | Path, n_classes: int = 8,
                          train_per_class: int = 25, n_test: int = 50,
                          duration_s: float = 10.0, frames_per_clip: int = 10,
                          image_size: int = 64, event_dur: float = 2.5,
                          seed: int = 0) -> tuple[PairManifest, PairManifest]:
    """Write a paired corpus under ``root`` and return (train, test) manifests.

    Manifests come annotated: ``selected_frame_idx`` points at the frame
    nearest the event midpoint and ``class_label`` is set for evaluation.
    """
    root = Path(root)
    rng = np.random.default_rng(seed)
    specs = _class_specs(n_classes, rng)
    event_dur = min(event_dur, 0.45 * duration_s)  # keep the event inside the clip

    train_records, test_records = [], []
    for c, spec in enumerate(specs):
        for i in range(train_per_class):
            clip_id = f"train_{spec.name}_{i:03d}"
            train_records.append(_write_clip(root / "train", clip_id, spec,
                                             duration_s, frames_per_clip,
                                             image_size, event_dur, rng))
    for j in range(n_test):
        spec = specs[j % n_classes]
        clip_id = f"test_{spec.name}_{j:03d}"
        test_records.append(_write_clip(root / "test", clip_id, spec,
                                        duration_s, frames_per_clip,
                                        image_size, event_dur, rng))

    train_manifest = PairManifest(records=sorted(train_records, key=lambda r: r.clip_id),
                                  split="train")
    test_manifest = PairManifest(records=sorted(test_records, key=lambda r: r.clip_id),
                                 split="test")
    save_manifest(train_manifest, root / "train.jsonl")
    save_manifest(test_manifest, root / "test.jsonl")
    return train_manifest, test_manifest


def make_planted_clips(root: str | Path, n_clips: int = 50,
                       duration_s: float = 10.0, frames_per_clip: int = 10,
                       image_size: int = 64, seed: int = 0):
    """Clips where exactly one frame co-occurs with a short loud audio event.

    Off-event audio is near-silence and off-event frames are dim noise, so
    the planted (loud, bright) moment is the only correlated step. Returns
    the manifest plus the planted frame index per clip.
    """
    root = Path(root)
    rng = np.random.default_rng(seed)
    specs = _class_specs(8, rng)
    slot = duration_s / frames_per_clip

    records, planted = [], {}
    for i in range(n_clips):
        spec = specs[i % len(specs)]
        clip_id = f"planted_{i:03d}"
        frame_idx = int(rng.integers(0, frames_per_clip))
        frame_time = (frame_idx + 0.5) * slot
        event_dur = 0.8 * slot
        event_start = frame_time - event_dur / 2.0

        n = int(duration_s * SAMPLE_RATE)
        t = np.arange(n) / SAMPLE_RATE
        samples = 0.001 * rng.standard_normal(n)
        env = ((t >= event_start) & (t <= event_start + event_dur)).astype(np.float64)
        for k, f in enumerate(spec.freqs):
            samples += env * (0.3 / (k + 1)) * np.sin(2 * np.pi * f * t)
        audio_path = root / f"{clip_id}.wav"
        write_wav(audio_path, Waveform(samples=np.clip(samples, -1, 1).astype(np.float32),
                                       sample_rate=SAMPLE_RATE))

        frames_dir = root / clip_id
        for j in range(frames_per_clip):
            if j == frame_idx:
                img = _render_blob_image(spec, image_size, rng, visible=True)
                img = np.clip(img + 0.3, 0.0, 1.0)
            else:
                img = np.clip(0.05 + 0.02 * rng.standard_normal((image_size, image_size, 3)),
                              0, 1).astype(np.float32)
            save_image(frames_dir / f"frame_{j:03d}.png", img)

        records.append(ClipRecord(clip_id=clip_id, audio_path=str(audio_path),
                                  duration_s=duration_s, frames_dir=str(frames_dir)))
        planted[clip_id] = frame_idx

    manifest = PairManifest(records=sorted(records, key=lambda r: r.clip_id),
                            split="train")
    return manifest, planted
