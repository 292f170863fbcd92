import numpy as np
import pytest

from audioscene.encoders import EncoderConfig, TemporalFeatureSequence, build_encoders
from audioscene.manifest import annotate_selected_frames
from audioscene.pair_selection import (
    CorrelationTrace,
    correlation_trace,
    select_training_frames,
    top_k_moments,
)
from audioscene.synthetic import make_planted_clips


def seq(features, modality, t_max=1.0):
    features = np.asarray(features, dtype=np.float32)
    t = features.shape[0]
    ts = (np.arange(t) + 0.5) * t_max / t
    return TemporalFeatureSequence(features=features, modality=modality, timestamps=ts)


class TestCorrelationTrace:
    def test_unit_vectors_give_ones(self):
        f = np.tile(np.array([1.0, 0.0, 0.0]), (4, 1))
        trace = correlation_trace(seq(f, "visual"), seq(f, "audio"))
        np.testing.assert_allclose(trace.scores, 1.0)

    def test_orthogonal_gives_zero(self):
        qv = seq(np.tile([1.0, 0.0], (3, 1)), "visual")
        qa = seq(np.tile([0.0, 1.0], (3, 1)), "audio")
        np.testing.assert_allclose(correlation_trace(qv, qa).scores, 0.0)

    def test_matches_bruteforce(self):
        rng = np.random.default_rng(0)
        v, a = rng.standard_normal((5, 7)), rng.standard_normal((5, 7))
        trace = correlation_trace(seq(v, "visual"), seq(a, "audio"))
        expected = [float(np.dot(v[t].astype(np.float64), a[t].astype(np.float64)))
                    for t in range(5)]
        np.testing.assert_allclose(trace.scores, expected, atol=1e-5)

    def test_symmetry_of_values(self):
        rng = np.random.default_rng(1)
        v, a = rng.standard_normal((4, 3)), rng.standard_normal((4, 3))
        t1 = correlation_trace(seq(v, "visual"), seq(a, "audio"))
        t2 = correlation_trace(seq(a, "visual"), seq(v, "audio"))
        np.testing.assert_allclose(t1.scores, t2.scores, atol=1e-6)

    def test_mismatched_inputs(self):
        qv = seq(np.ones((3, 2)), "visual")
        with pytest.raises(ValueError, match="lengths differ"):
            correlation_trace(qv, seq(np.ones((4, 2)), "audio"))
        with pytest.raises(ValueError, match="dims differ"):
            correlation_trace(qv, seq(np.ones((3, 5)), "audio"))
        with pytest.raises(ValueError, match="visual, audio"):
            correlation_trace(seq(np.ones((3, 2)), "audio"), seq(np.ones((3, 2)), "audio"))


class TestTopK:
    def trace(self, scores):
        scores = np.asarray(scores, dtype=float)
        return CorrelationTrace(scores=scores, timestamps=np.arange(len(scores), dtype=float))

    def test_top_one(self):
        assert top_k_moments(self.trace([0.1, 0.9, 0.3]), 1) == [(1, 0.9)]

    def test_tie_prefers_lower_index(self):
        assert top_k_moments(self.trace([0.5, 0.5]), 2) == [(0, 0.5), (1, 0.5)]

    def test_matches_sort_oracle(self):
        rng = np.random.default_rng(2)
        scores = rng.standard_normal(100)
        got = top_k_moments(self.trace(scores), 7)
        oracle = sorted(range(100), key=lambda i: (-scores[i], i))[:7]
        assert [i for i, _ in got] == oracle

    def test_full_k_is_permutation(self):
        rng = np.random.default_rng(3)
        scores = rng.choice([0.0, 1.0, 2.0], size=20)
        got = top_k_moments(self.trace(scores), 20)
        assert sorted(i for i, _ in got) == list(range(20))
        vals = [s for _, s in got]
        assert vals == sorted(vals, reverse=True)

    def test_bounds(self):
        t = self.trace([1.0, 2.0])
        with pytest.raises(ValueError, match="k exceeds trace length"):
            top_k_moments(t, 3)
        with pytest.raises(ValueError, match=">= 1"):
            top_k_moments(t, 0)

    def test_argmax_invariant_to_positive_scaling(self):
        rng = np.random.default_rng(4)
        scores = rng.standard_normal(30)
        base = top_k_moments(self.trace(scores), 1)[0][0]
        for c in [0.5, 2.0, 10.0]:
            assert top_k_moments(self.trace(c * c * scores), 1)[0][0] == base


@pytest.fixture(scope="module")
def planted(tmp_path_factory):
    root = tmp_path_factory.mktemp("planted")
    return make_planted_clips(root, n_clips=8, seed=5)


@pytest.fixture(scope="module")
def encoders():
    return build_encoders(EncoderConfig(embed_dim=16, audio_arch=(4, 8),
                                        image_arch=(4, 8), image_resolution=64,
                                        seed=3))


class TestSelectTrainingFrames:
    def test_hits_planted_frames(self, planted, encoders):
        manifest, truth = planted
        result = select_training_frames(manifest, encoders)
        assert result.report["skipped"] == 0
        hits = sum(result.selections[c] == truth[c] for c in truth)
        assert hits >= len(truth) - 1

    def test_selections_feed_annotation(self, planted, encoders):
        manifest, _ = planted
        result = select_training_frames(manifest, encoders)
        annotated = annotate_selected_frames(manifest, result.selections)
        assert all(r.selected_frame_idx is not None for r in annotated)

    def test_bad_clip_skipped_not_fatal(self, planted, encoders, tmp_path):
        manifest, _ = planted
        import dataclasses
        broken = dataclasses.replace(manifest.records[0], clip_id="broken",
                                     audio_path=str(tmp_path / "missing.wav"))
        from audioscene.manifest import PairManifest
        m = PairManifest(records=[broken] + manifest.records[1:3], split="train")
        result = select_training_frames(m, encoders)
        assert result.report["skipped"] == 1
        assert "broken" in result.report["reasons"]
        assert len(result.selections) == 2

    def test_single_image_clip_selects_zero(self, tmp_path, encoders):
        from audioscene.audio import Waveform, write_wav
        from audioscene.encoders import save_image
        from audioscene.manifest import ClipRecord, PairManifest
        rng = np.random.default_rng(0)
        write_wav(tmp_path / "one.wav",
                  Waveform(samples=rng.uniform(-0.3, 0.3, 16000).astype(np.float32),
                           sample_rate=16000))
        save_image(tmp_path / "one.png", np.full((64, 64, 3), 0.6, dtype=np.float32))
        rec = ClipRecord(clip_id="one", audio_path=str(tmp_path / "one.wav"),
                         duration_s=1.0, image_path=str(tmp_path / "one.png"))
        result = select_training_frames(PairManifest(records=[rec], split="train"),
                                        encoders)
        assert result.selections == {"one": 0}
