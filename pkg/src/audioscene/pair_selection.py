"""Per-timestep audio-visual correlation scoring and top-k moment selection.

Correlation at step t is the dot product of the visual and audio temporal
feature vectors at that step. The top-1 moment annotates the training frame
for each clip; clips that fail to process are skipped and reported rather
than aborting a whole corpus pass.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .audio import compute_log_spectrogram, load_and_standardize
from .encoders import (
    AudioEncoder,
    ImageEncoder,
    TemporalFeatureSequence,
    align_sequences,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class CorrelationTrace:
    scores: np.ndarray
    timestamps: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.scores, dtype=np.float64)
        t = np.asarray(self.timestamps, dtype=np.float64)
        object.__setattr__(self, "scores", s)
        object.__setattr__(self, "timestamps", t)
        if s.ndim != 1 or s.shape != t.shape or s.size < 1:
            raise ValueError("scores and timestamps must be equal-length 1-D arrays")
        if not (np.all(np.isfinite(s)) and np.all(np.isfinite(t))):
            raise ValueError("correlation trace contains non-finite entries")

    def __len__(self) -> int:
        return self.scores.size


def correlation_trace(qv: TemporalFeatureSequence,
                      qa: TemporalFeatureSequence) -> CorrelationTrace:
    """scores[t] = qv[t] . qa[t] over aligned sequences."""
    if qv.modality != "visual" or qa.modality != "audio":
        raise ValueError("correlation_trace expects (visual, audio) sequences")
    if len(qv) != len(qa):
        raise ValueError(f"sequence lengths differ: {len(qv)} vs {len(qa)}")
    if qv.features.shape[1] != qa.features.shape[1]:
        raise ValueError(
            f"feature dims differ: {qv.features.shape[1]} vs {qa.features.shape[1]}"
        )
    scores = np.einsum("td,td->t", qv.features.astype(np.float64),
                       qa.features.astype(np.float64))
    return CorrelationTrace(scores=scores, timestamps=qv.timestamps)


def top_k_moments(trace: CorrelationTrace, k: int) -> list[tuple[int, float]]:
    """Indices of the k largest scores, descending; ties go to the lower index."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if k > len(trace):
        raise ValueError(f"k exceeds trace length ({k} > {len(trace)})")
    order = sorted(range(len(trace)), key=lambda i: (-trace.scores[i], i))
    return [(i, float(trace.scores[i])) for i in order[:k]]


@dataclass
class SelectionResult:
    selections: dict[str, int]
    report: dict = field(default_factory=dict)


def select_frame_for_clip(qv: TemporalFeatureSequence, qa: TemporalFeatureSequence,
                          frame_timestamps: np.ndarray) -> int:
    """Top-1 aligned moment mapped back to the nearest frame index."""
    qv_al, qa_al = align_sequences(qv, qa)
    trace = correlation_trace(qv_al, qa_al)
    top_idx, _ = top_k_moments(trace, 1)[0]
    t_star = trace.timestamps[top_idx]
    return int(np.abs(np.asarray(frame_timestamps) - t_star).argmin())


def select_training_frames(manifest, encoders: tuple[AudioEncoder, ImageEncoder],
                           k: int = 1, audio_duration_s: float = 10.0) -> SelectionResult:
    """Annotate the top-1 moment frame for every clip in the manifest.

    Per-clip failures are collected into the report instead of raised; the
    selections map feeds :func:`manifest.annotate_selected_frames` directly.
    k > 1 is accepted for inspection but only the top-1 index is selected.
    """
    audio_encoder, image_encoder = encoders
    selections: dict[str, int] = {}
    skipped: dict[str, str] = {}
    for rec in manifest:
        try:
            frames = rec.frame_paths()
            if len(frames) == 1:
                selections[rec.clip_id] = 0
                continue
            w = load_and_standardize(rec.audio_path, target_duration_s=audio_duration_s)
            qa = audio_encoder.encode_temporal(compute_log_spectrogram(w))
            qv = image_encoder.encode_frames(frames, duration_s=rec.duration_s)
            selections[rec.clip_id] = select_frame_for_clip(qv, qa, qv.timestamps)
        except Exception as exc:  # noqa: BLE001  (curation pass must survive bad clips)
            logger.warning("pair selection skipped clip %s: %s", rec.clip_id, exc)
            skipped[rec.clip_id] = str(exc)
    report = {
        "processed": len(selections),
        "skipped": len(skipped),
        "reasons": dict(sorted(skipped.items())),
    }
    return SelectionResult(selections=dict(sorted(selections.items())), report=report)


def save_selections(result: SelectionResult, selections_path: str | Path,
                    report_path: str | Path | None = None) -> None:
    Path(selections_path).parent.mkdir(parents=True, exist_ok=True)
    Path(selections_path).write_text(json.dumps(result.selections, indent=2, sort_keys=True))
    if report_path is not None:
        Path(report_path).write_text(json.dumps(result.report, indent=2, sort_keys=True))


def load_selections(path: str | Path) -> dict[str, int]:
    return {k: int(v) for k, v in json.loads(Path(path).read_text()).items()}
