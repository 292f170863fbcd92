import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from audioscene.audio import Waveform, write_wav
from audioscene.encoders import save_image
from audioscene.manifest import (
    ClipRecord,
    PairManifest,
    annotate_selected_frames,
    ingest_directory,
    load_manifest,
    save_manifest,
)


def _touch_wav(path, n=1600, rate=16000):
    rng = np.random.default_rng(0)
    write_wav(path, Waveform(samples=rng.uniform(-0.5, 0.5, n).astype(np.float32),
                             sample_rate=rate))


def _touch_png(path):
    save_image(path, np.full((8, 8, 3), 0.5, dtype=np.float32))


@pytest.fixture
def pair_dir(tmp_path):
    _touch_wav(tmp_path / "a.wav")
    _touch_png(tmp_path / "a.png")
    _touch_wav(tmp_path / "b.wav")
    for i in range(4):
        _touch_png(tmp_path / "b" / f"f{i}.png")
    return tmp_path


class TestIngest:
    def test_matches_image_and_frame_dir(self, pair_dir):
        m = ingest_directory(pair_dir, "train")
        assert len(m) == 2
        assert [r.clip_id for r in m] == ["a", "b"]
        assert m.get("a").image_path is not None
        assert m.get("b").frames_dir is not None
        assert m.get("b").duration_s == pytest.approx(0.1)

    def test_unmatched_audio_only_is_error(self, tmp_path):
        _touch_wav(tmp_path / "solo.wav")
        with pytest.raises(ValueError, match="no pairs found"):
            ingest_directory(tmp_path, "train")

    def test_empty_dir(self, tmp_path):
        with pytest.raises(ValueError, match="no pairs found"):
            ingest_directory(tmp_path, "test")

    def test_ambiguous_image_and_dir(self, tmp_path):
        _touch_wav(tmp_path / "x.wav")
        _touch_png(tmp_path / "x.png")
        _touch_png(tmp_path / "x" / "f0.png")
        with pytest.raises(ValueError, match="ambiguous pairing"):
            ingest_directory(tmp_path, "train")

    def test_ambiguous_multiple_images(self, tmp_path):
        _touch_wav(tmp_path / "x.wav")
        _touch_png(tmp_path / "x.png")
        _touch_png(tmp_path / "x.jpg")
        with pytest.raises(ValueError, match="ambiguous pairing"):
            ingest_directory(tmp_path, "train")

    def test_deterministic(self, pair_dir, tmp_path):
        m1 = ingest_directory(pair_dir, "train")
        m2 = ingest_directory(pair_dir, "train")
        p1, p2 = tmp_path / "m1.jsonl", tmp_path / "m2.jsonl"
        save_manifest(m1, p1)
        save_manifest(m2, p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_unmatched_extras_skipped(self, pair_dir, caplog):
        _touch_png(pair_dir / "orphan.png")
        m = ingest_directory(pair_dir, "train")
        assert len(m) == 2


class TestAnnotate:
    def manifest(self, pair_dir):
        return ingest_directory(pair_dir, "train")

    def test_sets_index(self, pair_dir):
        m = self.manifest(pair_dir)
        out = annotate_selected_frames(m, {"b": 3})
        assert out.get("b").selected_frame_idx == 3
        assert m.get("b").selected_frame_idx is None  # original untouched

    def test_out_of_range(self, pair_dir):
        m = self.manifest(pair_dir)
        with pytest.raises(ValueError, match="frame index out of range"):
            annotate_selected_frames(m, {"b": 7})

    def test_missing_clip(self, pair_dir):
        m = self.manifest(pair_dir)
        with pytest.raises(ValueError, match="selection for missing clip"):
            annotate_selected_frames(m, {"zzz": 0})

    def test_empty_selections_identity(self, pair_dir):
        m = self.manifest(pair_dir)
        out = annotate_selected_frames(m, {})
        assert out.records == m.records


clip_records = st.builds(
    ClipRecord,
    clip_id=st.uuids().map(str),
    audio_path=st.text(st.characters(categories=["L", "N"]), min_size=1).map(lambda s: s + ".wav"),
    duration_s=st.floats(0.01, 100, allow_nan=False),
    frames_dir=st.just("frames"),
    image_path=st.none(),
    class_label=st.none() | st.text(st.characters(categories=["L"]), min_size=1, max_size=8),
    selected_frame_idx=st.none() | st.integers(0, 50),
)


class TestRoundTrip:
    @settings(max_examples=50, deadline=None)
    @given(records=st.lists(clip_records, min_size=1, max_size=8,
                            unique_by=lambda r: r.clip_id),
           split=st.sampled_from(["train", "test"]))
    def test_save_load_identity(self, tmp_path_factory, records, split):
        path = tmp_path_factory.mktemp("mf") / "m.jsonl"
        m = PairManifest(records=records, split=split)
        save_manifest(m, path)
        loaded = load_manifest(path)
        assert loaded.records == m.records
        assert loaded.split == m.split
        assert loaded.schema_version == m.schema_version

    def test_corrupt_file(self, tmp_path):
        p = tmp_path / "bad.jsonl"
        p.write_text("{this is not json\n")
        with pytest.raises(ValueError, match="corrupt"):
            load_manifest(p)

    def test_version_mismatch(self, tmp_path):
        p = tmp_path / "old.jsonl"
        row = {"schema_version": 0, "split": "train", "clip_id": "a",
               "audio_path": "a.wav", "duration_s": 1.0, "image_path": "a.png"}
        p.write_text(json.dumps(row) + "\n")
        with pytest.raises(ValueError, match="unsupported manifest version"):
            load_manifest(p)

    def test_inconsistent_split(self, tmp_path):
        p = tmp_path / "mixed.jsonl"
        rows = [
            {"schema_version": 1, "split": "train", "clip_id": "a",
             "audio_path": "a.wav", "duration_s": 1.0, "image_path": "a.png"},
            {"schema_version": 1, "split": "test", "clip_id": "b",
             "audio_path": "b.wav", "duration_s": 1.0, "image_path": "b.png"},
        ]
        p.write_text("\n".join(json.dumps(r) for r in rows) + "\n")
        with pytest.raises(ValueError, match="inconsistent split"):
            load_manifest(p)


class TestRecordInvariants:
    def test_exactly_one_visual_source(self):
        with pytest.raises(ValueError, match="exactly one"):
            ClipRecord(clip_id="x", audio_path="x.wav", duration_s=1.0)
        with pytest.raises(ValueError, match="exactly one"):
            ClipRecord(clip_id="x", audio_path="x.wav", duration_s=1.0,
                       frames_dir="d", image_path="i.png")

    def test_duplicate_ids_rejected(self):
        r = ClipRecord(clip_id="x", audio_path="x.wav", duration_s=1.0, image_path="x.png")
        with pytest.raises(ValueError, match="duplicate"):
            PairManifest(records=[r, r], split="train")
