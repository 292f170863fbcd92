"""Waveform loading, log-spectrogram computation, and waveform manipulations.

The canonical encoder input is a 1004x257 log-magnitude spectrogram computed
from 10 s of mono audio at 16 kHz. The short-time transform uses a 512-sample
Hann window, hop 159 and no center padding, which is the unique simple
parameterization producing exactly 1004 frames from 160000 samples:

    n_frames = 1 + (160000 - 512) // 159 = 1004,  n_bins = 512 // 2 + 1 = 257

Volume scaling and mixing operate on raw floats; mixes are peak-rescaled only
when the summed signal clips, so relative gains are preserved otherwise.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.io import wavfile
from scipy.signal import get_window, resample_poly

CANONICAL_RATE = 16000
CANONICAL_DURATION_S = 10.0
STFT_WINDOW = 512
STFT_HOP = 159
N_BINS = STFT_WINDOW // 2 + 1
LOG_EPS = 1e-5

_HANN = get_window("hann", STFT_WINDOW, fftbins=True)


@dataclass(frozen=True)
class Waveform:
    """Mono time-domain audio. Samples are nominally in [-1, 1]."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        object.__setattr__(self, "samples", np.asarray(self.samples, dtype=np.float32))
        if self.samples.ndim != 1 or self.samples.size == 0:
            raise ValueError("waveform must be a nonempty 1-D sample array")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("waveform contains non-finite samples")
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")

    @property
    def duration_s(self) -> float:
        return self.samples.size / float(self.sample_rate)


@dataclass(frozen=True)
class LogSpectrogram:
    """Time x frequency matrix of log magnitudes, ln(|STFT| + eps)."""

    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=np.float32))
        if self.values.ndim != 2 or self.values.shape[1] != N_BINS:
            raise ValueError(f"spectrogram must be (T, {N_BINS}), got {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("spectrogram contains non-finite values")

    @property
    def n_frames(self) -> int:
        return self.values.shape[0]

    @property
    def n_bins(self) -> int:
        return self.values.shape[1]


def _to_mono_float(data: np.ndarray) -> np.ndarray:
    if data.dtype.kind == "i":
        scale = float(np.iinfo(data.dtype).max) + 1.0
        data = data.astype(np.float64) / scale
    elif data.dtype.kind == "u":
        scale = (float(np.iinfo(data.dtype).max) + 1.0) / 2.0
        data = (data.astype(np.float64) - scale) / scale
    else:
        data = data.astype(np.float64)
    if data.ndim == 2:
        data = data.mean(axis=1)
    return data


def standardize(
    samples: np.ndarray,
    sample_rate: int,
    target_duration_s: float = CANONICAL_DURATION_S,
    target_rate: int = CANONICAL_RATE,
) -> Waveform:
    """Mono-ize, resample, and fix length by tiling or truncating from the start."""
    samples = _to_mono_float(np.asarray(samples))
    if samples.size == 0:
        raise ValueError("zero-length audio")
    if sample_rate != target_rate:
        g = np.gcd(int(sample_rate), int(target_rate))
        samples = resample_poly(samples, target_rate // g, sample_rate // g)
    n_target = int(round(target_duration_s * target_rate))
    if samples.size >= n_target:
        samples = samples[:n_target]
    else:
        reps = -(-n_target // samples.size)  # ceil division
        samples = np.tile(samples, reps)[:n_target]
    return Waveform(samples=samples.astype(np.float32), sample_rate=target_rate)


def load_and_standardize(
    path: str | Path,
    target_duration_s: float = CANONICAL_DURATION_S,
    target_rate: int = CANONICAL_RATE,
) -> Waveform:
    """Load a WAV file and standardize it to the canonical length and rate.

    Shorter clips are repeated from the start until they fill the target
    duration; longer clips keep only their beginning. Stereo is averaged
    down to mono before anything else.
    """
    rate, data = wavfile.read(Path(path))
    return standardize(data, rate, target_duration_s, target_rate)


def compute_log_spectrogram(w: Waveform, eps: float = LOG_EPS) -> LogSpectrogram:
    """Log-magnitude STFT of a standardized waveform.

    Requires the canonical 16 kHz rate and at least one full analysis window;
    a 10 s input yields exactly (1004, 257). Pure and deterministic.
    """
    if w.sample_rate != CANONICAL_RATE or w.samples.size < STFT_WINDOW:
        raise ValueError(
            "expected canonical waveform: "
            f"rate {CANONICAL_RATE} and >= {STFT_WINDOW} samples, "
            f"got rate {w.sample_rate}, {w.samples.size} samples"
        )
    frames = sliding_window_view(w.samples.astype(np.float64), STFT_WINDOW)[::STFT_HOP]
    mag = np.abs(np.fft.rfft(frames * _HANN, axis=1))
    return LogSpectrogram(values=np.log(mag + eps))


def scale_volume(w: Waveform, gain: float) -> Waveform:
    """Multiply samples by a nonnegative gain. No clipping is applied."""
    if not np.isfinite(gain) or gain < 0:
        raise ValueError("gain must be nonnegative and finite")
    return Waveform(samples=w.samples * np.float32(gain), sample_rate=w.sample_rate)


def mix(ws: list[Waveform], gains: list[float]) -> Waveform:
    """Samplewise sum of gain-scaled waveforms.

    If the summed peak exceeds 1, the whole mix is rescaled by 1/peak so the
    result stays in [-1, 1]; relative gains are untouched otherwise.
    """
    if not ws:
        raise ValueError("cannot mix an empty list of waveforms")
    if len(gains) != len(ws):
        raise ValueError(f"got {len(ws)} waveforms but {len(gains)} gains")
    rate, n = ws[0].sample_rate, ws[0].samples.size
    for w in ws[1:]:
        if w.sample_rate != rate or w.samples.size != n:
            raise ValueError("all waveforms must share sample_rate and length")
    acc = np.zeros(n, dtype=np.float32)
    for w, g in zip(ws, gains):
        if not np.isfinite(g) or g < 0:
            raise ValueError("gain must be nonnegative and finite")
        acc = acc + np.float32(g) * w.samples
    peak = float(np.max(np.abs(acc))) if acc.size else 0.0
    if peak > 1.0:
        acc = acc / np.float32(peak)
    return Waveform(samples=acc, sample_rate=rate)


def write_wav(path: str | Path, w: Waveform) -> None:
    """Write a float32 WAV file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    wavfile.write(path, w.sample_rate, w.samples.astype(np.float32))


# Spectrogram cache: 8-byte header (n_frames, n_bins as little-endian u32),
# then row-major float32 values.

def save_spectrogram_cache(spec: LogSpectrogram, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = struct.pack("<II", spec.n_frames, spec.n_bins)
    with path.open("wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(spec.values, dtype=np.float32).tobytes())


def load_spectrogram_cache(path: str | Path) -> LogSpectrogram:
    with Path(path).open("rb") as fh:
        header = fh.read(8)
        if len(header) != 8:
            raise ValueError(f"{path}: truncated spectrogram cache header")
        n_frames, n_bins = struct.unpack("<II", header)
        values = np.frombuffer(fh.read(), dtype=np.float32)
    if values.size != n_frames * n_bins:
        raise ValueError(f"{path}: spectrogram cache body size mismatch")
    return LogSpectrogram(values=values.reshape(n_frames, n_bins).copy())
