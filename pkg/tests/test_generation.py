import numpy as np
import pytest

from audioscene.encoders import Embedding
from audioscene.generation import (
    ConditionalImageDecoder,
    GeneratedImage,
    GeneratorLatent,
    RetrievalIndex,
    generate,
    invert,
    load_decoder,
    retrieve,
    sample_noise,
    save_decoder,
)


@pytest.fixture(scope="module")
def blob_corpus():
    """Tiny blob corpus: 4 classes x 12 images at 32x32 with distinct conditions."""
    rng = np.random.default_rng(0)
    images, conds = [], []
    palette = [(0.9, 0.2, 0.2), (0.2, 0.9, 0.2), (0.2, 0.2, 0.9), (0.8, 0.8, 0.1)]
    for c, color in enumerate(palette):
        for i in range(12):
            img = np.full((32, 32, 3), 0.1, dtype=np.float32)
            cx, cy = 8 + 4 * (c % 2) + rng.integers(-2, 3), 8 + 4 * (c // 2) + rng.integers(-2, 3)
            img[cy - 4:cy + 4, cx - 4:cx + 4] = color
            images.append(img)
            cond = np.zeros(8, dtype=np.float32)
            cond[c] = 2.0
            cond[4:] = 0.2 * rng.standard_normal(4)
            conds.append(cond)
    return np.stack(conds), np.stack(images)


@pytest.fixture(scope="module")
def decoder(blob_corpus):
    Z, images = blob_corpus
    dec = ConditionalImageDecoder(cond_dim=8, noise_dim=4, image_size=32,
                                  base_channels=32, epochs=120, seed=0)
    return dec.fit(Z, images)


class TestDecoderTraining:
    def test_loss_decreases(self, decoder):
        assert decoder.history_[-1] < 0.5 * decoder.history_[0]

    def test_reconstruction_quality(self, decoder, blob_corpus):
        Z, images = blob_corpus
        recon = decoder.predict(Z, seed=123)
        mse = float(np.mean((recon - images) ** 2))
        assert mse < 0.01

    def test_zero_epochs_flagged_untrained(self, blob_corpus):
        Z, images = blob_corpus
        dec = ConditionalImageDecoder(cond_dim=8, noise_dim=4, image_size=32,
                                      epochs=0, seed=0).fit(Z, images)
        assert not dec.trained_
        assert dec.history_ == []

    def test_same_seed_same_params(self, blob_corpus):
        Z, images = blob_corpus
        kwargs = dict(cond_dim=8, noise_dim=4, image_size=32, epochs=3, seed=9)
        d1 = ConditionalImageDecoder(**kwargs).fit(Z, images)
        d2 = ConditionalImageDecoder(**kwargs).fit(Z, images)
        for p1, p2 in zip(d1.net_.parameters(), d2.net_.parameters()):
            assert np.array_equal(p1.detach().numpy(), p2.detach().numpy())

    def test_empty_corpus_rejected(self):
        dec = ConditionalImageDecoder(cond_dim=8, image_size=32)
        with pytest.raises(ValueError, match="empty"):
            dec.fit(np.zeros((0, 8)), np.zeros((0, 32, 32, 3)))


class TestGenerate:
    def latent(self, decoder, seed=5):
        cond = Embedding(np.linspace(-1, 1, decoder.cond_dim).astype(np.float32),
                         "visual")
        return GeneratorLatent(noise=sample_noise(decoder.noise_dim, seed), condition=cond)

    def test_deterministic(self, decoder):
        img1 = generate(self.latent(decoder), decoder)
        img2 = generate(self.latent(decoder), decoder)
        assert np.array_equal(img1.pixels, img2.pixels)

    def test_pixel_range(self, decoder):
        img = generate(self.latent(decoder), decoder)
        assert img.pixels.min() >= 0.0 and img.pixels.max() <= 1.0
        assert img.pixels.shape == (32, 32, 3)

    def test_dim_mismatch(self, decoder):
        bad = GeneratorLatent(noise=sample_noise(decoder.noise_dim, 0),
                              condition=Embedding(np.zeros(5), "visual"))
        with pytest.raises(ValueError, match="condition dim"):
            generate(bad, decoder)
        bad_noise = GeneratorLatent(noise=np.zeros(2, dtype=np.float32),
                                    condition=Embedding(np.zeros(8), "visual"))
        with pytest.raises(ValueError, match="noise dim"):
            generate(bad_noise, decoder)

    def test_condition_reconstruction(self, decoder, blob_corpus):
        Z, images = blob_corpus
        img = generate(GeneratorLatent(noise=sample_noise(4, 7),
                                       condition=Embedding(Z[3], "visual")), decoder)
        assert float(np.mean((img.pixels - images[3]) ** 2)) < 0.02


class TestRetrieval:
    def index(self):
        emb = np.eye(4, dtype=np.float32)
        return RetrievalIndex(clip_ids=["c0", "c1", "c2", "c3"],
                              embeddings=emb,
                              image_paths=[f"{i}.png" for i in range(4)])

    def test_exact_match_first(self):
        out = retrieve(Embedding(np.eye(4)[2].astype(np.float32), "audio"), self.index(), k=2)
        assert out[0] == ("c2", pytest.approx(1.0, abs=1e-6))

    def test_orthogonal_ties_by_clip_id(self):
        q = Embedding(np.array([0, 0, 0, 0, 1.0], dtype=np.float32), "audio")
        emb = np.zeros((3, 5), dtype=np.float32)
        emb[0, 0] = emb[1, 1] = emb[2, 2] = 1.0
        idx = RetrievalIndex(clip_ids=["bb", "aa", "cc"], embeddings=emb,
                             image_paths=["x"] * 3)
        out = retrieve(q, idx, k=3)
        assert [c for c, _ in out] == ["aa", "bb", "cc"]
        assert all(abs(s) < 1e-6 for _, s in out)

    def test_matches_bruteforce_ranking(self):
        rng = np.random.default_rng(11)
        emb = rng.standard_normal((100, 16)).astype(np.float32)
        idx = RetrievalIndex(clip_ids=[f"c{i:03d}" for i in range(100)],
                             embeddings=emb, image_paths=["x"] * 100)
        q = rng.standard_normal(16).astype(np.float32)
        out = retrieve(Embedding(q, "audio"), idx, k=100)
        qn = q / np.linalg.norm(q)
        sims = (emb / np.linalg.norm(emb, axis=1, keepdims=True)) @ qn
        oracle = sorted(range(100), key=lambda i: (-sims[i], f"c{i:03d}"))
        assert [c for c, _ in out] == [f"c{i:03d}" for i in oracle]

    def test_empty_index_rejected_at_query(self):
        empty = RetrievalIndex(clip_ids=[], embeddings=np.zeros((0, 4)), image_paths=[])
        with pytest.raises(ValueError, match="empty"):
            retrieve(Embedding(np.ones(4, dtype=np.float32), "audio"), empty, k=1)

    def test_k_bounds(self):
        with pytest.raises(ValueError, match="k must be"):
            retrieve(Embedding(np.ones(4, dtype=np.float32), "audio"), self.index(), k=9)


class TestInversion:
    def test_steps_zero_returns_init(self, decoder):
        img = generate(GeneratorLatent(noise=sample_noise(4, 1),
                                       condition=Embedding(decoder.cond_mean_, "visual")),
                       decoder)
        res = invert(img.pixels, decoder, steps=0)
        assert res.steps_run == 0
        np.testing.assert_array_equal(res.noise, np.zeros(4, dtype=np.float32))
        np.testing.assert_array_equal(res.condition.vector, decoder.cond_mean_)

    def test_self_inversion(self, decoder, blob_corpus):
        Z, _ = blob_corpus
        img = generate(GeneratorLatent(noise=sample_noise(4, 3),
                                       condition=Embedding(Z[5], "visual")), decoder)
        res = invert(img.pixels, decoder, steps=500)
        assert res.loss < 1e-3

    def test_best_iterate_contract(self, decoder):
        rng = np.random.default_rng(2)
        target = rng.uniform(0, 1, (32, 32, 3)).astype(np.float32)
        init = invert(target, decoder, steps=0)
        for steps in (1, 10, 50):
            res = invert(target, decoder, steps=steps)
            assert res.loss <= init.loss + 1e-9

    def test_deterministic(self, decoder, blob_corpus):
        Z, images = blob_corpus
        r1 = invert(images[0], decoder, steps=30)
        r2 = invert(images[0], decoder, steps=30)
        assert r1.loss == r2.loss
        np.testing.assert_array_equal(r1.condition.vector, r2.condition.vector)

    def test_negative_steps(self, decoder):
        with pytest.raises(ValueError, match=">= 0"):
            invert(np.zeros((32, 32, 3), dtype=np.float32), decoder, steps=-1)


class TestDecoderCheckpoint:
    def test_roundtrip(self, decoder, blob_corpus, tmp_path):
        Z, _ = blob_corpus
        save_decoder(decoder, tmp_path / "dec.npz")
        loaded = load_decoder(tmp_path / "dec.npz")
        out1 = decoder.predict(Z[:3], seed=4)
        out2 = loaded.predict(Z[:3], seed=4)
        assert np.array_equal(out1, out2)
        assert loaded.trained_


class TestIndexPersistence:
    def test_roundtrip(self, tmp_path):
        from audioscene.generation import load_index, save_index

        rng = np.random.default_rng(0)
        idx = RetrievalIndex(clip_ids=[f"c{i}" for i in range(5)],
                             embeddings=rng.standard_normal((5, 6)).astype(np.float32),
                             image_paths=[f"img{i}.png" for i in range(5)])
        save_index(idx, tmp_path / "index.npz")
        loaded = load_index(tmp_path / "index.npz")
        assert loaded.clip_ids == idx.clip_ids
        assert loaded.image_paths == idx.image_paths
        np.testing.assert_array_equal(loaded.embeddings, idx.embeddings)
        q = Embedding(rng.standard_normal(6).astype(np.float32), "audio")
        assert retrieve(q, loaded, k=3) == retrieve(q, idx, k=3)


class TestGeneratedImageInvariants:
    def test_range_enforced(self):
        with pytest.raises(ValueError, match="0, 1"):
            GeneratedImage(pixels=np.full((4, 4, 3), 1.5, dtype=np.float32))

    def test_shape_enforced(self):
        with pytest.raises(ValueError, match="HxWx3"):
            GeneratedImage(pixels=np.zeros((4, 4), dtype=np.float32))
