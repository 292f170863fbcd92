"""CLI workflow on a miniature corpus: every subcommand end to end."""

import json

import numpy as np
import pytest
import yaml

from audioscene.cli import main


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """synth -> train -> train-decoder on a miniature corpus."""
    root = tmp_path_factory.mktemp("cli")
    corpus = root / "corpus"
    assert main(["synth", "--out", str(corpus), "--classes", "3",
                 "--train-per-class", "4", "--test-clips", "6",
                 "--duration", "2.0", "--seed", "1"]) == 0

    cfg = {
        "run": {"out_dir": str(root / "run"), "seed": 0},
        "data": {"train_manifest": str(corpus / "train.jsonl"),
                 "test_manifest": str(corpus / "test.jsonl")},
        "encoder": {"embed_dim": 16, "audio_arch": [4, 8], "image_arch": [4, 8],
                    "image_resolution": 64, "seed": 0},
        "train": {"batch_size": 8, "max_epochs": 2, "early_stop_patience": 2,
                  "audio_duration_s": 1.0},
        "decoder": {"noise_dim": 4, "base_channels": 16, "epochs": 3,
                    "batch_size": 8, "lr": 0.002, "adversarial_weight": 0.0},
    }
    cfg_path = root / "toy.yaml"
    cfg_path.write_text(yaml.safe_dump(cfg))
    assert main(["train", "--config", str(cfg_path)]) == 0
    assert main(["train-decoder", "--config", str(cfg_path)]) == 0
    return {"root": root, "corpus": corpus, "config": cfg_path,
            "run_dir": root / "run"}


class TestUsage:
    def test_help_exits_zero(self, capsys):
        assert main(["--help"]) == 0
        assert "usage" in capsys.readouterr().out.lower()

    def test_unknown_flag_exits_two(self, capsys):
        assert main(["train", "--bogus-flag"]) == 2

    def test_unknown_subcommand_exits_two(self):
        assert main(["frobnicate"]) == 2


class TestWorkflow:
    def test_train_artifacts(self, workspace):
        run = workspace["run_dir"]
        assert (run / "align" / "audio_encoder_best.npz").exists()
        assert (run / "align" / "train_log.jsonl").exists()
        assert (run / "image_encoder.npz").exists()
        assert (run / "workspace.json").exists()
        artifacts = json.loads((run / "artifacts.json").read_text())
        assert artifacts["command"] == "train-decoder"  # last writer

    def test_eval_after_training(self, workspace):
        out = workspace["root"] / "eval.json"
        assert main(["eval", "--config", str(workspace["config"]),
                     "--out", str(out)]) == 0
        report = json.loads(out.read_text())
        assert "r_at" in report and "frechet" in report

    def test_eval_before_training_exits_one(self, tmp_path, workspace, caplog):
        assert main(["eval", "--config", str(workspace["config"]),
                     "--run", str(tmp_path / "virgin")]) == 1
        assert "no checkpoint found" in caplog.text

    def test_generate_and_reproduce(self, workspace):
        run = workspace["run_dir"]
        manifest = json.loads(
            (workspace["corpus"] / "train.jsonl").read_text().splitlines()[0])
        clip = manifest["clip_id"]
        out1 = workspace["root"] / "img1.png"
        assert main(["generate", "--run", str(run), "--clip", clip,
                     "--gain", "1.5", "--seed", "5", "--out", str(out1)]) == 0
        out2 = workspace["root"] / "img2.png"
        assert main(["generate", "--run", str(run),
                     "--from-provenance", str(out1.with_suffix(".json")),
                     "--out", str(out2)]) == 0
        assert out1.read_bytes() == out2.read_bytes()

    def test_generate_without_sources_exits_one(self, workspace):
        assert main(["generate", "--run", str(workspace["run_dir"]),
                     "--out", str(workspace["root"] / "x.png")]) == 1

    def test_select_pairs(self, workspace):
        out = workspace["root"] / "selections.json"
        annotated = workspace["root"] / "annotated.jsonl"
        assert main(["select-pairs", "--manifest",
                     str(workspace["corpus"] / "train.jsonl"),
                     "--config", str(workspace["config"]),
                     "--out", str(out), "--annotate", str(annotated)]) == 0
        selections = json.loads(out.read_text())
        assert len(selections) == 12
        assert annotated.exists()

    def test_ablate_writes_csv(self, workspace):
        assert main(["ablate", "--config", str(workspace["config"]),
                     "--set", "ablation.max_epochs=1",
                     "--set", "ablation.loss_variants=[nce_l2,l2]",
                     "--set", "ablation.durations=[1.0]"]) == 0
        csv_path = workspace["run_dir"] / "ablation" / "ablation.csv"
        lines = csv_path.read_text().splitlines()
        assert len(lines) == 3  # header + 2 cells

    def test_ingest_subcommand(self, tmp_path):
        from audioscene.audio import Waveform, write_wav
        from audioscene.encoders import save_image

        rng = np.random.default_rng(0)
        for stem in ("u", "v"):
            write_wav(tmp_path / f"{stem}.wav",
                      Waveform(samples=rng.uniform(-0.5, 0.5, 1600).astype(np.float32),
                               sample_rate=16000))
            save_image(tmp_path / f"{stem}.png", np.full((8, 8, 3), 0.4, np.float32))
        out = tmp_path / "m.jsonl"
        assert main(["ingest", "--root", str(tmp_path), "--split", "train",
                     "--out", str(out)]) == 0
        assert len(out.read_text().splitlines()) == 2

    def test_seeded_runs_identical_logs(self, workspace, tmp_path):
        args = ["train", "--config", str(workspace["config"]), "--seed", "3"]
        assert main(args + ["--out", str(tmp_path / "r1")]) == 0
        assert main(args + ["--out", str(tmp_path / "r2")]) == 0

        def numeric_rows(p):
            rows = [json.loads(l) for l in
                    (p / "align" / "train_log.jsonl").read_text().splitlines()]
            return [{k: r[k] for k in ("epoch", "train_loss", "val_loss", "lr")}
                    for r in rows]

        assert numeric_rows(tmp_path / "r1") == numeric_rows(tmp_path / "r2")


class TestConfigOverrides:
    def test_dotted_overrides(self):
        from audioscene.cli import load_config

        cfg = load_config(None, ["train.lr=0.5", "encoder.embed_dim=128",
                                 "ablation.seeds=[0,1,2]"])
        assert cfg["train"]["lr"] == 0.5
        assert cfg["encoder"]["embed_dim"] == 128
        assert cfg["ablation"]["seeds"] == [0, 1, 2]

    def test_bad_override_rejected(self):
        from audioscene.cli import load_config

        with pytest.raises(ValueError, match="key.path=value"):
            load_config(None, ["lr0.5"])
