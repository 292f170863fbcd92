"""Audio-visual pair manifests: ingestion, frame annotation, JSONL persistence.

A manifest is an ordered list of clip records, each pairing one audio file
with either a directory of frame images or a single paired image. Records
are sorted by clip id so that ingesting the same directory twice produces
byte-identical manifests.
"""

from __future__ import annotations

import dataclasses
import json
import logging
from dataclasses import dataclass
from pathlib import Path

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1

AUDIO_EXTENSIONS = {".wav"}
IMAGE_EXTENSIONS = {".png", ".jpg", ".jpeg"}

VALID_SPLITS = ("train", "test")


@dataclass(frozen=True)
class ClipRecord:
    """One audio-visual clip.

    Exactly one of ``frames_dir`` / ``image_path`` is set. ``class_label``
    exists for evaluation only and is never read by training code.
    """

    clip_id: str
    audio_path: str
    duration_s: float
    frames_dir: str | None = None
    image_path: str | None = None
    class_label: str | None = None
    selected_frame_idx: int | None = None

    def __post_init__(self):
        if not self.clip_id:
            raise ValueError("clip_id must be nonempty")
        if (self.frames_dir is None) == (self.image_path is None):
            raise ValueError(
                f"clip {self.clip_id!r}: exactly one of frames_dir/image_path must be set"
            )
        if self.selected_frame_idx is not None and self.selected_frame_idx < 0:
            raise ValueError(f"clip {self.clip_id!r}: selected_frame_idx must be >= 0")
        if not self.duration_s > 0:
            raise ValueError(f"clip {self.clip_id!r}: duration_s must be > 0")

    def frame_paths(self) -> list[Path]:
        """Frame image paths in sorted order; a single-image clip has one."""
        if self.image_path is not None:
            return [Path(self.image_path)]
        frames = sorted(
            p
            for p in Path(self.frames_dir).iterdir()
            if p.suffix.lower() in IMAGE_EXTENSIONS
        )
        if not frames:
            raise ValueError(f"clip {self.clip_id!r}: frames_dir contains no images")
        return frames


@dataclass
class PairManifest:
    records: list[ClipRecord]
    split: str
    schema_version: int = SCHEMA_VERSION

    def __post_init__(self):
        if self.split not in VALID_SPLITS:
            raise ValueError(f"split must be one of {VALID_SPLITS}, got {self.split!r}")
        ids = [r.clip_id for r in self.records]
        if len(set(ids)) != len(ids):
            dupes = sorted({i for i in ids if ids.count(i) > 1})
            raise ValueError(f"duplicate clip_ids in manifest: {dupes}")
        self._by_id = {r.clip_id: r for r in self.records}

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def get(self, clip_id: str) -> ClipRecord:
        try:
            return self._by_id[clip_id]
        except KeyError:
            raise KeyError(f"unknown clip_id {clip_id!r}") from None


def _audio_duration_s(path: Path) -> float:
    """Decode the WAV header/body and return the clip duration in seconds.

    Doubles as the ingest-time check that the audio actually decodes.
    """
    from scipy.io import wavfile

    rate, data = wavfile.read(path)
    n = data.shape[0]
    if n == 0:
        raise ValueError(f"{path}: zero-length audio")
    return n / float(rate)


def ingest_directory(root: str | Path, split: str) -> PairManifest:
    """Scan ``root`` for audio/visual pairs matched by filename stem.

    A stem ``x`` pairs ``x.wav`` with either an image ``x.png``/``x.jpg`` or
    a frame directory ``x/``. Unmatched files are logged and skipped.

    Raises:
        ValueError: if no pairs are found, or a stem pairs ambiguously
            (both an image and a frame directory, or several images).
    """
    root = Path(root)
    if not root.is_dir():
        raise ValueError(f"no pairs found: {root} is not a directory")

    audio: dict[str, Path] = {}
    images: dict[str, list[Path]] = {}
    dirs: dict[str, Path] = {}
    for entry in sorted(root.iterdir()):
        if entry.is_dir():
            dirs[entry.name] = entry
        elif entry.suffix.lower() in AUDIO_EXTENSIONS:
            audio[entry.stem] = entry
        elif entry.suffix.lower() in IMAGE_EXTENSIONS:
            images.setdefault(entry.stem, []).append(entry)

    records = []
    unmatched = []
    for stem in sorted(audio):
        has_img = stem in images
        has_dir = stem in dirs
        if has_img and has_dir:
            raise ValueError(f"ambiguous pairing for stem {stem!r}: image and frame dir")
        if has_img and len(images[stem]) > 1:
            raise ValueError(f"ambiguous pairing for stem {stem!r}: multiple images")
        if not (has_img or has_dir):
            unmatched.append(audio[stem].name)
            continue
        records.append(
            ClipRecord(
                clip_id=stem,
                audio_path=str(audio[stem]),
                duration_s=_audio_duration_s(audio[stem]),
                frames_dir=str(dirs[stem]) if has_dir else None,
                image_path=str(images[stem][0]) if has_img else None,
            )
        )

    unmatched += [p.name for s, ps in images.items() if s not in audio for p in ps]
    unmatched += [d.name for s, d in dirs.items() if s not in audio]
    if unmatched:
        logger.warning("ingest %s: %d unmatched entries skipped: %s",
                       root, len(unmatched), sorted(unmatched))
    if not records:
        raise ValueError(f"no pairs found under {root}")
    return PairManifest(records=records, split=split)


def annotate_selected_frames(
    manifest: PairManifest, selections: dict[str, int]
) -> PairManifest:
    """Return a new manifest with ``selected_frame_idx`` set from ``selections``.

    The input manifest is untouched. Every selection key must name a clip in
    the manifest and every index must be within the clip's frame count.
    """
    for clip_id in selections:
        if clip_id not in manifest._by_id:
            raise ValueError(f"selection for missing clip {clip_id!r}")
    out = []
    for rec in manifest.records:
        if rec.clip_id in selections:
            idx = int(selections[rec.clip_id])
            n_frames = len(rec.frame_paths())
            if not 0 <= idx < n_frames:
                raise ValueError(
                    f"frame index out of range for clip {rec.clip_id!r}: "
                    f"{idx} not in [0, {n_frames})"
                )
            rec = dataclasses.replace(rec, selected_frame_idx=idx)
        out.append(rec)
    return PairManifest(records=out, split=manifest.split,
                        schema_version=manifest.schema_version)


def save_manifest(manifest: PairManifest, path: str | Path) -> None:
    """Write one JSON object per record; each line carries split and version."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for rec in manifest.records:
            row = {"schema_version": manifest.schema_version, "split": manifest.split}
            row.update({k: v for k, v in dataclasses.asdict(rec).items() if v is not None})
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def load_manifest(path: str | Path) -> PairManifest:
    path = Path(path)
    records = []
    split = None
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{lineno}: corrupt manifest line: {exc}") from exc
            version = row.pop("schema_version", None)
            if version != SCHEMA_VERSION:
                raise ValueError(
                    f"{path}:{lineno}: unsupported manifest version {version!r} "
                    f"(reader supports {SCHEMA_VERSION})"
                )
            line_split = row.pop("split", None)
            if split is None:
                split = line_split
            elif line_split != split:
                raise ValueError(f"{path}:{lineno}: inconsistent split label")
            records.append(ClipRecord(**row))
    if split is None:
        raise ValueError(f"{path}: empty manifest file")
    return PairManifest(records=records, split=split)
