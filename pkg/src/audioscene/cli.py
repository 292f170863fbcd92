"""Batch entry points: ingest, select-pairs, train, train-decoder, generate,
eval, ablate, serve, plus a synthetic-corpus generator for the toy workflow.

All subcommands honor --seed and write an artifacts.json listing what they
produced. Exit codes: 0 success, 1 domain error, 2 usage error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import yaml

logger = logging.getLogger("audioscene")

DEFAULT_CONFIG = {
    "run": {"out_dir": "runs/toy", "seed": 0},
    "data": {"train_manifest": None, "test_manifest": None},
    "encoder": {"embed_dim": 64, "audio_arch": [8, 16, 32],
                "image_arch": [8, 16, 32], "image_resolution": 64, "seed": 0},
    "train": {"batch_size": 64, "lr": 1e-3, "weight_decay": 1e-5,
              "max_epochs": 50, "early_stop_patience": 8,
              "loss_variant": "nce_l2", "audio_duration_s": 10.0,
              "use_frame_selection": True, "validation_fraction": 0.1},
    "decoder": {"noise_dim": 16, "base_channels": 64, "lr": 2e-3,
                "epochs": 60, "batch_size": 32, "adversarial_weight": 0.0},
    "service": {"host": "127.0.0.1", "port": 8765, "cache_size": 256},
    "ablation": {"loss_variants": ["nce_l2"], "durations": [10.0],
                 "frame_selection": [True], "seeds": [0], "max_epochs": 15},
}


def _deep_update(base: dict, extra: dict) -> dict:
    for k, v in extra.items():
        if isinstance(v, dict) and isinstance(base.get(k), dict):
            _deep_update(base[k], v)
        else:
            base[k] = v
    return base


def load_config(path: str | None, overrides: list[str] | None = None) -> dict:
    cfg = json.loads(json.dumps(DEFAULT_CONFIG))  # deep copy
    if path is not None:
        loaded = yaml.safe_load(Path(path).read_text()) or {}
        if not isinstance(loaded, dict):
            raise ValueError(f"config root must be a mapping: {path}")
        _deep_update(cfg, loaded)
    for item in overrides or []:
        key, sep, raw = item.partition("=")
        if not sep:
            raise ValueError(f"override must look like key.path=value, got {item!r}")
        node = cfg
        parts = key.split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
        node[parts[-1]] = yaml.safe_load(raw)
    return cfg


def _encoder_config(cfg: dict, seed: int | None = None):
    from .encoders import EncoderConfig

    e = cfg["encoder"]
    arch = e["image_arch"]
    return EncoderConfig(
        embed_dim=int(e["embed_dim"]),
        audio_arch=tuple(e["audio_arch"]),
        image_arch=arch if arch == "precomputed" else tuple(arch),
        image_resolution=int(e["image_resolution"]),
        seed=int(e["seed"] if seed is None else seed),
    )


def _train_config(cfg: dict, seed: int, **overrides):
    from .alignment import TrainConfig

    kw = dict(cfg["train"])
    kw["seed"] = seed
    kw.update(overrides)
    kw["audio_duration_s"] = float(kw["audio_duration_s"])
    return TrainConfig(**kw)


def _write_artifacts(out_dir: Path, command: str, seed: int, paths: list[Path],
                     config: dict | None = None) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "artifacts.json").write_text(json.dumps({
        "command": command,
        "seed": seed,
        "artifacts": [str(p) for p in paths],
        "config": config or {},
    }, indent=2, sort_keys=True))


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_ingest(args) -> int:
    from .manifest import ingest_directory, save_manifest

    manifest = ingest_directory(args.root, args.split)
    out = Path(args.out)
    save_manifest(manifest, out)
    logger.info("ingested %d records -> %s", len(manifest), out)
    _write_artifacts(out.parent, "ingest", args.seed, [out])
    return 0


def cmd_synth(args) -> int:
    from .synthetic import make_synthetic_corpus

    root = Path(args.out)
    train_m, test_m = make_synthetic_corpus(
        root, n_classes=args.classes, train_per_class=args.train_per_class,
        n_test=args.test_clips, duration_s=args.duration, seed=args.seed)
    logger.info("synthetic corpus: %d train / %d test under %s",
                len(train_m), len(test_m), root)
    _write_artifacts(root, "synth", args.seed,
                     [root / "train.jsonl", root / "test.jsonl"])
    return 0


def cmd_select_pairs(args) -> int:
    from .encoders import build_encoders, load_audio_encoder
    from .manifest import annotate_selected_frames, load_manifest, save_manifest
    from .pair_selection import save_selections, select_training_frames

    cfg = load_config(args.config, args.set)
    manifest = load_manifest(args.manifest)
    encoders = build_encoders(_encoder_config(cfg, seed=args.seed))
    if args.checkpoint:
        encoders = (load_audio_encoder(args.checkpoint), encoders[1])
    result = select_training_frames(manifest, encoders,
                                    audio_duration_s=float(cfg["train"]["audio_duration_s"]))
    out = Path(args.out)
    report_path = out.with_name(out.stem + "_report.json")
    save_selections(result, out, report_path)
    produced = [out, report_path]
    if args.annotate:
        annotated = annotate_selected_frames(manifest, result.selections)
        save_manifest(annotated, args.annotate)
        produced.append(Path(args.annotate))
    logger.info("selected frames for %d clips (%d skipped)",
                result.report["processed"], result.report["skipped"])
    _write_artifacts(out.parent, "select-pairs", args.seed, produced)
    return 0


def cmd_train(args) -> int:
    from .alignment import train
    from .encoders import build_encoders, save_image_encoder
    from .manifest import load_manifest, save_manifest
    from .pipeline import write_workspace

    cfg = load_config(args.config, args.set)
    seed = args.seed if args.seed is not None else int(cfg["run"]["seed"])
    out_dir = Path(args.out or cfg["run"]["out_dir"])
    train_manifest = cfg["data"]["train_manifest"]
    if train_manifest is None:
        raise ValueError("config data.train_manifest is required")
    manifest = load_manifest(train_manifest)
    encoders = build_encoders(_encoder_config(cfg))
    result = train(manifest, encoders, _train_config(cfg, seed), out_dir=out_dir,
                   run_id="align", cache_dir=out_dir / "spec_cache")

    save_image_encoder(out_dir / "image_encoder.npz", encoders[1])
    save_manifest(manifest, out_dir / "manifest.jsonl")
    ws = write_workspace(out_dir,
                         audio_encoder="align/audio_encoder_best.npz",
                         image_encoder="image_encoder.npz",
                         decoder="decoder.npz",
                         manifest="manifest.jsonl",
                         audio_duration_s=float(cfg["train"]["audio_duration_s"]))
    logger.info("trained %d epochs (best %d); checkpoint %s",
                len(result.history), result.best_epoch, result.checkpoint_path)
    _write_artifacts(out_dir, "train", seed,
                     [result.checkpoint_path, result.log_path,
                      out_dir / "image_encoder.npz", ws], cfg)
    return 0


def cmd_train_decoder(args) -> int:
    from .encoders import load_image_encoder
    from .generation import save_decoder, train_toy_decoder
    from .manifest import load_manifest

    cfg = load_config(args.config, args.set)
    seed = args.seed if args.seed is not None else int(cfg["run"]["seed"])
    out_dir = Path(args.out or cfg["run"]["out_dir"])
    enc_path = out_dir / "image_encoder.npz"
    if not enc_path.exists():
        raise FileNotFoundError(f"no checkpoint found: run `s2s train` first ({enc_path})")
    image_encoder = load_image_encoder(enc_path)
    manifest = load_manifest(out_dir / "manifest.jsonl")
    d = cfg["decoder"]
    decoder = train_toy_decoder(
        manifest, image_encoder,
        use_frame_selection=bool(cfg["train"]["use_frame_selection"]),
        noise_dim=int(d["noise_dim"]), image_size=int(cfg["encoder"]["image_resolution"]),
        base_channels=int(d["base_channels"]), lr=float(d["lr"]),
        epochs=int(d["epochs"]), batch_size=int(d["batch_size"]),
        adversarial_weight=float(d["adversarial_weight"]), seed=seed)
    path = out_dir / "decoder.npz"
    save_decoder(decoder, path)
    logger.info("decoder trained (%d epochs), final loss %.4f -> %s",
                len(decoder.history_), decoder.history_[-1] if decoder.history_ else float("nan"),
                path)
    _write_artifacts(out_dir, "train-decoder", seed, [path], cfg)
    return 0


def cmd_generate(args) -> int:
    from .pipeline import ModelBundle, png_bytes, provenance_id, regenerate

    bundle = ModelBundle.load(args.run)
    out = Path(args.out)
    if args.from_provenance:
        record = json.loads(Path(args.from_provenance).read_text())
        image = regenerate(record, bundle)
        record_out = record
    else:
        if not args.clip:
            raise ValueError("provide --clip (repeatable) or --from-provenance")
        gains = args.gain or []
        if len(gains) < len(args.clip):
            gains = gains + [1.0] * (len(args.clip) - len(gains))
        sources = [{"ref": f"clip:{c}", "gain": float(g)}
                   for c, g in zip(args.clip, gains)]
        image, record_out, _ = bundle.run_generate(sources, seed=args.seed)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_bytes(png_bytes(image))
    prov_path = out.with_suffix(".json")
    prov_path.write_text(json.dumps(
        {**record_out, "image_id": provenance_id(record_out)}, indent=2, sort_keys=True))
    logger.info("wrote %s", out)
    _write_artifacts(out.parent, "generate", args.seed, [out, prov_path])
    return 0


def cmd_eval(args) -> int:
    from .encoders import load_audio_encoder, load_image_encoder
    from .evaluation import evaluate_alignment, save_report
    from .manifest import load_manifest

    cfg = load_config(args.config, args.set)
    run_dir = Path(args.run or cfg["run"]["out_dir"])
    ckpt = run_dir / "align" / "audio_encoder_best.npz"
    if not ckpt.exists():
        raise FileNotFoundError(f"no checkpoint found at {ckpt}")
    test_manifest = args.manifest or cfg["data"]["test_manifest"]
    if test_manifest is None:
        raise ValueError("config data.test_manifest or --manifest is required")
    decoder = None
    if args.image_metrics:
        from .generation import load_decoder

        dec_path = run_dir / "decoder.npz"
        if not dec_path.exists():
            raise FileNotFoundError(f"no checkpoint found: --image-metrics needs {dec_path}")
        decoder = load_decoder(dec_path)
    report = evaluate_alignment(
        load_audio_encoder(ckpt),
        load_image_encoder(run_dir / "image_encoder.npz"),
        load_manifest(test_manifest),
        duration_s=float(cfg["train"]["audio_duration_s"]),
        config={"run": str(run_dir), "split": "test"},
        decoder=decoder)
    out = Path(args.out or run_dir / "eval_report.json")
    save_report(report, out)
    logger.info("R@K %s frechet %.3f IS %.3f -> %s",
                report.r_at, report.frechet, report.inception_score, out)
    _write_artifacts(out.parent, "eval", args.seed, [out])
    return 0


def cmd_ablate(args) -> int:
    from .evaluation import run_ablation_grid
    from .manifest import load_manifest

    cfg = load_config(args.config, args.set)
    out_dir = Path(args.out or cfg["run"]["out_dir"]) / "ablation"
    if cfg["data"]["train_manifest"] is None or cfg["data"]["test_manifest"] is None:
        raise ValueError("ablate needs data.train_manifest and data.test_manifest")
    train_m = load_manifest(cfg["data"]["train_manifest"])
    test_m = load_manifest(cfg["data"]["test_manifest"])
    ab = cfg["ablation"]
    grid = []
    for loss in ab["loss_variants"]:
        for dur in ab["durations"]:
            for sel in ab["frame_selection"]:
                for seed in ab["seeds"]:
                    grid.append(_train_config(cfg, int(seed), loss_variant=loss,
                                              audio_duration_s=float(dur),
                                              use_frame_selection=bool(sel),
                                              max_epochs=int(ab["max_epochs"])))
    rows = run_ablation_grid(train_m, test_m, _encoder_config(cfg), grid,
                             out_dir=out_dir, cache_dir=out_dir / "spec_cache")
    ok = sum(1 for r in rows if r["status"] == "ok")
    logger.info("ablation: %d/%d cells ok -> %s", ok, len(rows), out_dir / "ablation.csv")
    _write_artifacts(out_dir, "ablate", args.seed, [out_dir / "ablation.csv"], cfg)
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .pipeline import ModelBundle
    from .service import create_app

    import os

    cfg = load_config(args.config, args.set)
    run_dir = args.run or os.environ.get("S2S_RUN_DIR") or cfg["run"]["out_dir"]
    port = args.port or int(os.environ.get("S2S_PORT", cfg["service"]["port"]))
    host = os.environ.get("S2S_HOST", cfg["service"]["host"])
    cache_size = int(os.environ.get("S2S_CACHE_SIZE", cfg["service"]["cache_size"]))
    bundle = ModelBundle.load(run_dir)
    app = create_app(bundle, output_dir=Path(run_dir) / "service",
                     cache_size=cache_size, ui_dir=args.ui_dir)
    logger.info("serving %s on %s:%d", run_dir, host, port)
    uvicorn.run(app, host=host, port=port, log_level="warning")
    return 0


# ---------------------------------------------------------------------------
# parser / dispatch
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="s2s",
        description="Sound-to-image generation via audio-to-visual latent alignment")
    parser.add_argument("--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config=True):
        p.add_argument("--seed", type=int, default=None, help="run seed")
        p.add_argument("--set", action="append", metavar="KEY.PATH=VALUE",
                       help="config override (repeatable)")
        if config:
            p.add_argument("--config", help="YAML config file")

    p = sub.add_parser("ingest", help="build a manifest from a paired directory")
    p.add_argument("--root", required=True)
    p.add_argument("--split", choices=["train", "test"], required=True)
    p.add_argument("--out", required=True)
    common(p, config=False)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("synth", help="write a synthetic paired corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--classes", type=int, default=8)
    p.add_argument("--train-per-class", type=int, default=25)
    p.add_argument("--test-clips", type=int, default=50)
    p.add_argument("--duration", type=float, default=10.0)
    common(p, config=False)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("select-pairs", help="annotate top-1 moment frames")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="selections JSON path")
    p.add_argument("--annotate", help="write annotated manifest here")
    p.add_argument("--checkpoint", help="trained audio encoder (default: seeded init)")
    common(p)
    p.set_defaults(func=cmd_select_pairs)

    p = sub.add_parser("train", help="train the audio encoder")
    p.add_argument("--out", help="run directory (default from config)")
    common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("train-decoder", help="train the toy conditional decoder")
    p.add_argument("--out", help="run directory (default from config)")
    common(p)
    p.set_defaults(func=cmd_train_decoder)

    p = sub.add_parser("generate", help="generate an image from clip sources")
    p.add_argument("--run", required=True, help="run directory")
    p.add_argument("--clip", action="append", help="clip id (repeatable)")
    p.add_argument("--gain", action="append", type=float,
                   help="gain per clip (repeatable, default 1.0)")
    p.add_argument("--from-provenance", help="regenerate from a provenance JSON")
    p.add_argument("--out", required=True, help="output PNG path")
    common(p, config=False)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("eval", help="evaluate a trained run on the test split")
    p.add_argument("--run", help="run directory (default from config)")
    p.add_argument("--manifest", help="test manifest (default from config)")
    p.add_argument("--split", choices=["test"], default="test")
    p.add_argument("--out", help="report JSON path")
    p.add_argument("--image-metrics", action="store_true",
                   help="score generated images (needs a trained decoder)")
    common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="run the config grid and write a CSV table")
    p.add_argument("--out", help="output directory (default from config)")
    common(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("serve", help="start the steering HTTP service")
    p.add_argument("--run", help="run directory")
    p.add_argument("--port", type=int)
    p.add_argument("--ui-dir", help="static frontend directory to mount at /ui")
    common(p)
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(stream=sys.stderr, level=logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.verbose:
        logging.getLogger().setLevel(logging.DEBUG)
    if getattr(args, "seed", None) is None:
        args.seed = 0
    try:
        return args.func(args)
    except (ValueError, KeyError, FileNotFoundError, OSError) as exc:
        logger.error("%s", exc)
        return 1


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
