"""Shared fixtures: one synthetic corpus and one trained run per session.

The heavyweight artifacts (corpus on disk, trained aligner, toy decoder)
are session-scoped so the service, CLI, and acceptance suites exercise the
same checkpoints the way a real deployment would.
"""

import json
import time

import pytest

from audioscene.alignment import TrainConfig, train
from audioscene.encoders import EncoderConfig, build_encoders, save_image_encoder
from audioscene.generation import save_decoder, train_toy_decoder
from audioscene.manifest import save_manifest
from audioscene.pipeline import write_workspace
from audioscene.synthetic import make_synthetic_corpus

ENCODER_CONFIG = EncoderConfig(embed_dim=64, audio_arch=(8, 16, 32),
                               image_arch=(8, 16, 32), image_resolution=64, seed=0)

# acceptance tests register one line per criterion; echoed after the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

# config (F) analog: symmetric InfoNCE, frame selection on, full 10 s audio.
# batch 32 gives this 200-clip corpus enough optimizer steps per epoch.
ALIGN_CONFIG = TrainConfig(batch_size=32, lr=1e-3, weight_decay=1e-5,
                           max_epochs=30, early_stop_patience=12,
                           loss_variant="nce_l2", audio_duration_s=10.0,
                           use_frame_selection=True, seed=0)


@pytest.fixture(scope="session")
def toy_corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    train_m, test_m = make_synthetic_corpus(root, n_classes=8, train_per_class=25,
                                            n_test=50, duration_s=10.0,
                                            event_dur=4.0, seed=0)
    return {"root": root, "train": train_m, "test": test_m,
            "cache_dir": root / "spec_cache"}


@pytest.fixture(scope="session")
def toy_run(toy_corpus, tmp_path_factory):
    """Full trained run directory: aligner + frozen image encoder + decoder."""
    run_dir = tmp_path_factory.mktemp("run")
    encoders = build_encoders(ENCODER_CONFIG)

    t0 = time.monotonic()
    result = train(toy_corpus["train"], encoders, ALIGN_CONFIG, out_dir=run_dir,
                   run_id="align", cache_dir=toy_corpus["cache_dir"])
    train_seconds = time.monotonic() - t0

    decoder = train_toy_decoder(toy_corpus["train"], encoders[1],
                                noise_dim=16, image_size=64, base_channels=64,
                                lr=2e-3, epochs=40, batch_size=32, seed=0)
    save_decoder(decoder, run_dir / "decoder.npz")
    save_image_encoder(run_dir / "image_encoder.npz", encoders[1])
    save_manifest(toy_corpus["train"], run_dir / "manifest.jsonl")
    write_workspace(run_dir, audio_encoder="align/audio_encoder_best.npz",
                    image_encoder="image_encoder.npz", decoder="decoder.npz",
                    manifest="manifest.jsonl", audio_duration_s=10.0)
    return {
        "run_dir": run_dir,
        "audio_encoder": result.audio_encoder,
        "image_encoder": encoders[1],
        "decoder": decoder,
        "train_result": result,
        "train_seconds": train_seconds,
    }


@pytest.fixture(scope="session")
def toy_bundle(toy_run):
    from audioscene.pipeline import ModelBundle

    return ModelBundle.load(toy_run["run_dir"])
