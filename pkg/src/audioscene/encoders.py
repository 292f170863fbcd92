"""Audio and image encoders plus temporal feature extraction.

The audio encoder is a shallow conv stack over the log-spectrogram followed
by adaptive average pooling over time-frequency and a single linear head.
The image encoder is the frozen anchor of the shared embedding space: either
a seeded random-init conv stack of the same family, or a passthrough over
precomputed per-clip feature files. Image encoder parameters never receive
gradients.

Per-timestep features for correlation scoring come from the pre-pooling
activation grid, mean-pooled over the frequency (audio) or spatial (image)
axes. The stacks deliberately contain no normalization layers so that those
features stay magnitude-sensitive.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from PIL import Image
from torch import nn

from .audio import CANONICAL_RATE, STFT_HOP, STFT_WINDOW, LogSpectrogram

NORM_ATOL = 1e-6


@dataclass(frozen=True)
class Embedding:
    """A modality-tagged vector in the shared latent space."""

    vector: np.ndarray
    modality: str
    normalized: bool = False

    def __post_init__(self):
        vec = np.asarray(self.vector)
        object.__setattr__(self, "vector", vec)
        if vec.ndim != 1 or vec.size < 1:
            raise ValueError("embedding vector must be 1-D and nonempty")
        if not np.all(np.isfinite(vec)):
            raise ValueError("embedding vector contains non-finite entries")
        if self.modality not in ("audio", "visual"):
            raise ValueError(f"modality must be 'audio' or 'visual', got {self.modality!r}")
        if self.normalized and abs(float(np.linalg.norm(vec)) - 1.0) >= NORM_ATOL:
            raise ValueError("embedding flagged normalized but norm differs from 1")

    @property
    def dim(self) -> int:
        return self.vector.size


@dataclass(frozen=True)
class TemporalFeatureSequence:
    """Per-timestep feature vectors with strictly increasing timestamps."""

    features: np.ndarray
    modality: str
    timestamps: np.ndarray

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=np.float32)
        ts = np.asarray(self.timestamps, dtype=np.float64)
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "timestamps", ts)
        if feats.ndim != 2 or feats.shape[0] < 1:
            raise ValueError("features must be a (T, D) matrix with T >= 1")
        if ts.shape != (feats.shape[0],):
            raise ValueError("timestamps must have one entry per timestep")
        if not np.all(np.isfinite(feats)) or not np.all(np.isfinite(ts)):
            raise ValueError("temporal features contain non-finite entries")
        if feats.shape[0] > 1 and not np.all(np.diff(ts) > 0):
            raise ValueError("timestamps must be strictly increasing")

    def __len__(self) -> int:
        return self.features.shape[0]


@dataclass(frozen=True)
class EncoderConfig:
    embed_dim: int = 64
    audio_arch: tuple[int, ...] = (8, 16, 32)
    image_arch: tuple[int, ...] | str = (8, 16, 32)
    image_resolution: int = 64
    seed: int = 0

    def __post_init__(self):
        if self.embed_dim < 2:
            raise ValueError("embed_dim must be >= 2")
        object.__setattr__(self, "audio_arch", tuple(self.audio_arch))
        if self.image_arch != "precomputed":
            object.__setattr__(self, "image_arch", tuple(self.image_arch))
        if self.image_resolution < 8:
            raise ValueError("image_resolution must be >= 8")

    def to_dict(self) -> dict:
        return {
            "embed_dim": self.embed_dim,
            "audio_arch": list(self.audio_arch),
            "image_arch": self.image_arch if self.image_arch == "precomputed"
            else list(self.image_arch),
            "image_resolution": self.image_resolution,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EncoderConfig":
        arch = d["image_arch"]
        return cls(
            embed_dim=int(d["embed_dim"]),
            audio_arch=tuple(d["audio_arch"]),
            image_arch=arch if arch == "precomputed" else tuple(arch),
            image_resolution=int(d["image_resolution"]),
            seed=int(d["seed"]),
        )


def normalize(e: Embedding) -> Embedding:
    """Project onto the unit sphere. Idempotent; rejects the zero vector."""
    norm = float(np.linalg.norm(e.vector.astype(np.float64)))
    if norm == 0.0:
        raise ValueError("cannot normalize zero embedding")
    vec = (e.vector.astype(np.float64) / norm).astype(e.vector.dtype)
    return Embedding(vector=vec, modality=e.modality, normalized=True)


class AudioEncoderNet(nn.Module):
    """Conv stack over (B, 1, T, F) spectrograms -> (B, embed_dim).

    Bias-free so feature magnitude tracks input energy; silence maps to the
    zero embedding instead of a bias vector.
    """

    def __init__(self, arch: tuple[int, ...] = (8, 16, 32), embed_dim: int = 64):
        super().__init__()
        layers: list[nn.Module] = []
        in_ch = 1
        for i, out_ch in enumerate(arch):
            if i == 0:
                # aggressive temporal downsampling on the long input axis
                layers.append(nn.Conv2d(in_ch, out_ch, kernel_size=5,
                                        stride=(4, 2), padding=2, bias=False))
            else:
                layers.append(nn.Conv2d(in_ch, out_ch, kernel_size=3,
                                        stride=2, padding=1, bias=False))
            layers.append(nn.ReLU(inplace=True))
            in_ch = out_ch
        self.features = nn.Sequential(*layers)
        self.head = nn.Linear(in_ch, embed_dim, bias=False)
        self.embed_dim = embed_dim
        self.temporal_dim = in_ch

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        grid = self.features(x)
        pooled = grid.mean(dim=(2, 3))
        return self.head(pooled)

    def temporal_grid(self, x: torch.Tensor) -> torch.Tensor:
        return self.features(x)


class ImageEncoderNet(nn.Module):
    """Conv stack over (B, 3, H, W) images -> (B, embed_dim). Bias-free."""

    def __init__(self, arch: tuple[int, ...] = (8, 16, 32), embed_dim: int = 64):
        super().__init__()
        layers: list[nn.Module] = []
        in_ch = 3
        for out_ch in arch:
            layers.append(nn.Conv2d(in_ch, out_ch, kernel_size=3, stride=2,
                                    padding=1, bias=False))
            layers.append(nn.ReLU(inplace=True))
            in_ch = out_ch
        self.features = nn.Sequential(*layers)
        self.head = nn.Linear(in_ch, embed_dim, bias=False)
        self.embed_dim = embed_dim
        self.temporal_dim = in_ch

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        grid = self.features(x)
        pooled = grid.mean(dim=(2, 3))
        return self.head(pooled)


def param_checksum(net: nn.Module) -> str:
    """SHA-256 over all named parameters; detects any mutation."""
    h = hashlib.sha256()
    for name, p in sorted(net.state_dict().items()):
        h.update(name.encode())
        h.update(np.ascontiguousarray(p.detach().cpu().numpy()).tobytes())
    return h.hexdigest()


class AudioEncoder:
    """Trainable audio encoder wrapping :class:`AudioEncoderNet`."""

    def __init__(self, config: EncoderConfig, net: AudioEncoderNet | None = None):
        self.config = config
        if net is None:
            torch.manual_seed(config.seed)
            net = AudioEncoderNet(config.audio_arch, config.embed_dim)
        self.net = net
        self.net.eval()

    def _check_input(self, spec: LogSpectrogram) -> torch.Tensor:
        x = torch.from_numpy(spec.values.astype(np.float32))
        if not torch.isfinite(x).all():
            raise ValueError("non-finite spectrogram input")
        return x.unsqueeze(0).unsqueeze(0)

    def encode(self, spec: LogSpectrogram) -> Embedding:
        with torch.no_grad():
            vec = self.net(self._check_input(spec))[0].numpy()
        return Embedding(vector=vec, modality="audio", normalized=False)

    def encode_temporal(self, spec: LogSpectrogram) -> TemporalFeatureSequence:
        """Per-time-bin features: pre-pooling grid mean-pooled over frequency."""
        with torch.no_grad():
            grid = self.net.temporal_grid(self._check_input(spec))[0]  # (C, T', F')
        feats = grid.mean(dim=2).T.numpy()  # (T', C)
        duration = (spec.n_frames - 1) * STFT_HOP / CANONICAL_RATE + STFT_WINDOW / CANONICAL_RATE
        t = feats.shape[0]
        timestamps = (np.arange(t) + 0.5) * duration / t
        return TemporalFeatureSequence(features=feats, modality="audio",
                                       timestamps=timestamps)

    def checksum(self) -> str:
        return param_checksum(self.net)


class ImageEncoder:
    """Frozen image encoder: seeded conv stack or precomputed-feature lookup."""

    def __init__(self, config: EncoderConfig, net: ImageEncoderNet | None = None,
                 feature_dir: str | Path | None = None):
        self.config = config
        self.feature_dir = Path(feature_dir) if feature_dir is not None else None
        if config.image_arch == "precomputed":
            if self.feature_dir is None:
                raise ValueError("precomputed image encoder needs a feature_dir")
            self.net = None
        else:
            if net is None:
                # offset so the visual space is not a copy of the audio init
                torch.manual_seed(config.seed + 1)
                net = ImageEncoderNet(config.image_arch, config.embed_dim)
            self.net = net
            self.net.eval()
            for p in self.net.parameters():
                p.requires_grad_(False)

    def _prepare(self, image: np.ndarray) -> torch.Tensor:
        image = np.asarray(image, dtype=np.float32)
        if image.ndim != 3 or image.shape[2] != 3:
            raise ValueError(f"expected an HxWx3 image, got shape {image.shape}")
        res = self.config.image_resolution
        if image.shape[:2] != (res, res):
            pil = Image.fromarray(
                np.clip(image * 255.0, 0, 255).astype(np.uint8), mode="RGB"
            ).resize((res, res), Image.BILINEAR)
            image = np.asarray(pil, dtype=np.float32) / 255.0
        return torch.from_numpy(image).permute(2, 0, 1).unsqueeze(0)

    def encode_image(self, image: np.ndarray) -> Embedding:
        if self.net is None:
            raise ValueError("precomputed image encoder cannot encode raw images")
        with torch.no_grad():
            vec = self.net(self._prepare(image))[0].numpy()
        return Embedding(vector=vec, modality="visual", normalized=False)

    def encode_path(self, path: str | Path) -> Embedding:
        return self.encode_image(load_image(path))

    def encode_clip(self, clip_id: str, image_path: str | Path | None = None) -> Embedding:
        """Precomputed lookup by clip id, or conv encoding of the given image."""
        if self.feature_dir is not None:
            feat_file = self.feature_dir / f"{clip_id}.npy"
            if feat_file.exists():
                vec = np.load(feat_file)
                return Embedding(vector=np.asarray(vec, dtype=np.float32),
                                 modality="visual", normalized=False)
            if self.net is None:
                raise FileNotFoundError(f"no precomputed feature for clip {clip_id!r}")
        if image_path is None:
            raise ValueError(f"clip {clip_id!r}: no image path and no stored feature")
        return self.encode_path(image_path)

    def encode_frames(self, frame_paths: list, duration_s: float) -> TemporalFeatureSequence:
        """Per-frame features from the pre-pooling grid, spatially mean-pooled."""
        if not frame_paths:
            raise ValueError("empty frame list")
        if self.net is None:
            raise ValueError("precomputed image encoder cannot encode frames")
        feats = []
        with torch.no_grad():
            for p in frame_paths:
                x = self._prepare(load_image(p))
                grid = self.net.features(x)[0]  # (C, H', W')
                feats.append(grid.mean(dim=(1, 2)).numpy())
        feats = np.stack(feats)
        n = len(frame_paths)
        timestamps = (np.arange(n) + 0.5) * duration_s / n
        return TemporalFeatureSequence(features=feats, modality="visual",
                                       timestamps=timestamps)

    def checksum(self) -> str:
        if self.net is None:
            return "precomputed"
        return param_checksum(self.net)


def align_sequences(
    a: TemporalFeatureSequence, b: TemporalFeatureSequence
) -> tuple[TemporalFeatureSequence, TemporalFeatureSequence]:
    """Resample both sequences to the shorter one by nearest-timestamp matching.

    The shorter sequence passes through unchanged; each of its timestamps picks
    the entry of the longer sequence with the closest timestamp. Both outputs
    share the shorter sequence's timestamps.
    """
    short, long_, flipped = (a, b, False) if len(a) <= len(b) else (b, a, True)
    idx = np.abs(long_.timestamps[None, :] - short.timestamps[:, None]).argmin(axis=1)
    resampled = TemporalFeatureSequence(
        features=long_.features[idx],
        modality=long_.modality,
        timestamps=short.timestamps.copy(),
    )
    return (short, resampled) if not flipped else (resampled, short)


def build_encoders(config: EncoderConfig,
                   feature_dir: str | Path | None = None) -> tuple[AudioEncoder, ImageEncoder]:
    """Seeded construction of the encoder pair; same seed gives identical init."""
    return AudioEncoder(config), ImageEncoder(config, feature_dir=feature_dir)


def load_image(path: str | Path) -> np.ndarray:
    """Read an image file as HxWx3 float32 in [0, 1]."""
    with Image.open(path) as img:
        arr = np.asarray(img.convert("RGB"), dtype=np.float32) / 255.0
    return arr


def save_image(path: str | Path, image: np.ndarray) -> None:
    """Write an HxWx3 float image in [0, 1] as PNG (deterministic bytes)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arr = np.clip(np.asarray(image, dtype=np.float32) * 255.0 + 0.5, 0, 255).astype(np.uint8)
    Image.fromarray(arr, mode="RGB").save(path, format="PNG")


def save_encoder_checkpoint(path: str | Path, net: nn.Module,
                            config: EncoderConfig, kind: str) -> None:
    """Persist named parameter arrays plus the encoder config."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arrays = {name: p.detach().cpu().numpy() for name, p in net.state_dict().items()}
    meta = json.dumps({"kind": kind, "config": config.to_dict()})
    np.savez(path, __meta__=np.frombuffer(meta.encode(), dtype=np.uint8), **arrays)


def _load_checkpoint(path: str | Path, expected_kind: str):
    data = np.load(Path(path))
    meta = json.loads(bytes(data["__meta__"]).decode())
    if meta["kind"] != expected_kind:
        raise ValueError(f"{path}: checkpoint kind {meta['kind']!r}, "
                         f"expected {expected_kind!r}")
    config = EncoderConfig.from_dict(meta["config"])
    state = {k: torch.from_numpy(data[k]) for k in data.files if k != "__meta__"}
    return config, state


def save_audio_encoder(path: str | Path, enc: AudioEncoder) -> None:
    save_encoder_checkpoint(path, enc.net, enc.config, kind="audio_encoder")


def load_audio_encoder(path: str | Path) -> AudioEncoder:
    config, state = _load_checkpoint(path, "audio_encoder")
    net = AudioEncoderNet(config.audio_arch, config.embed_dim)
    net.load_state_dict(state)
    return AudioEncoder(config, net=net)


def save_image_encoder(path: str | Path, enc: ImageEncoder) -> None:
    if enc.net is None:
        raise ValueError("precomputed image encoder has no parameters to save")
    save_encoder_checkpoint(path, enc.net, enc.config, kind="image_encoder")


def load_image_encoder(path: str | Path) -> ImageEncoder:
    config, state = _load_checkpoint(path, "image_encoder")
    net = ImageEncoderNet(config.image_arch, config.embed_dim)
    net.load_state_dict(state)
    return ImageEncoder(config, net=net)
