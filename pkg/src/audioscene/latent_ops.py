"""Latent-space algebra: image-audio interpolation and volume-direction edits.

All operations act on raw (unnormalized) embeddings, since the generator is
conditioned on raw visual features. Interpolation is the convex combination

    z_new = lambda * z_visual + (1 - lambda) * z_audio

and a direction edit moves an inverted visual latent along the difference of
two audio embeddings taken at different volumes:

    z_new = z_inv + lambda * (z_a1 - z_a2)
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .audio import Waveform, compute_log_spectrogram, scale_volume
from .encoders import AudioEncoder, Embedding
from .validation import check_same_dim


def interpolate(zv: Embedding, za: Embedding, lam: float) -> Embedding:
    """Convex combination of a visual and an audio embedding.

    lam=1 returns the visual vector bit-exactly and lam=0 the audio one;
    the result is tagged visual so the generator accepts it as a condition.
    """
    check_same_dim(zv.vector, za.vector)
    if not np.isfinite(lam) or not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda must be in [0, 1], got {lam}")
    lam = np.float32(lam) if zv.vector.dtype == np.float32 else float(lam)
    vec = lam * zv.vector + (1 - lam) * za.vector
    return Embedding(vector=vec, modality="visual", normalized=False)


def direction_edit(zv_inv: Embedding, za1: Embedding, za2: Embedding,
                   lam: float) -> Embedding:
    """Move a base latent along the difference direction za1 - za2."""
    check_same_dim(zv_inv.vector, za1.vector, za2.vector)
    if not np.isfinite(lam):
        raise ValueError("lambda must be finite")
    lam = np.float32(lam) if zv_inv.vector.dtype == np.float32 else float(lam)
    vec = zv_inv.vector + lam * (za1.vector - za2.vector)
    return Embedding(vector=vec, modality="visual", normalized=False)


@dataclass(frozen=True)
class VolumeDirection:
    """Audio embeddings of the same clip at two gains; delta = hi - lo."""

    hi: Embedding
    lo: Embedding

    @property
    def delta(self) -> np.ndarray:
        return self.hi.vector - self.lo.vector


def volume_direction(audio: Waveform, encoder: AudioEncoder,
                     gain_hi: float, gain_lo: float) -> VolumeDirection:
    """Encode the waveform at two volumes and return the embedding pair."""
    if gain_hi == gain_lo:
        raise ValueError("gain_hi and gain_lo must differ")
    hi = encoder.encode(compute_log_spectrogram(scale_volume(audio, gain_hi)))
    lo = encoder.encode(compute_log_spectrogram(scale_volume(audio, gain_lo)))
    return VolumeDirection(hi=hi, lo=lo)
