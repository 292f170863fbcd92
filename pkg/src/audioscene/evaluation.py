"""Evaluation metrics and the ablation grid.

Class labels are consumed in this module only. Retrieval quality is scored
against a class-prototype space: one prototype per class, the mean frozen
visual embedding of held-out real images of that class. R@K is the fraction
of queries whose true class ranks in the top K by cosine similarity.

The Fréchet distance between two feature populations fits a Gaussian to
each and evaluates

    ||mu_a - mu_b||^2 + tr(Sig_a + Sig_b - 2 (Sig_a Sig_b)^(1/2))

with the matrix square root taken by eigendecomposition of the symmetrized
product (negative eigenvalue noise is clipped at zero). The inception-style
score exponentiates the mean KL divergence between per-sample class
distributions and their marginal, and is bounded in [1, C].

Desk-scale ablation reports score the audio->prototype retrieval directly in
embedding space; the Fréchet column compares the audio and visual embedding
populations of the test split, and the inception-style column uses a softmax
over prototype similarities as the class distribution. Passing a trained
decoder switches both columns to image level: real-vs-generated image
features for the Fréchet distance, and a small supervised conv classifier
(trained on the evaluation corpus) for the inception-style score.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .encoders import Embedding, ImageEncoder
from .validation import check_finite_array, check_probability_rows

logger = logging.getLogger(__name__)

PROTOTYPE_SOFTMAX_SCALE = 10.0


@dataclass
class EvalReport:
    r_at: dict[int, float]
    frechet: float
    inception_score: float
    n_samples: int
    config: dict = field(default_factory=dict)
    timestamp: str = ""

    def __post_init__(self):
        ks = sorted(self.r_at)
        vals = [self.r_at[k] for k in ks]
        if any(not 0.0 <= v <= 1.0 for v in vals):
            raise ValueError("R@K values must lie in [0, 1]")
        if any(b < a - 1e-12 for a, b in zip(vals, vals[1:])):
            raise ValueError("R@K must be nondecreasing in K")
        if not np.isfinite(self.frechet) or self.frechet < 0:
            raise ValueError("frechet must be finite and >= 0")
        if not np.isfinite(self.inception_score) or self.inception_score < 1.0 - 1e-9:
            raise ValueError("inception_score must be finite and >= 1")
        if not self.timestamp:
            self.timestamp = time.strftime("%Y-%m-%dT%H:%M:%S")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["r_at"] = {str(k): v for k, v in self.r_at.items()}
        return d


@dataclass
class ClassPrototypeSpace:
    class_names: list[str]
    prototypes: np.ndarray
    embedder: ImageEncoder | None = None

    def __post_init__(self):
        protos = np.asarray(self.prototypes, dtype=np.float64)
        if protos.ndim != 2 or protos.shape[0] != len(self.class_names):
            raise ValueError("prototypes must be (C, D) with one row per class")
        if len(self.class_names) < 2:
            raise ValueError("need at least 2 classes")
        check_finite_array(protos, "prototypes")
        self.prototypes = protos

    @property
    def n_classes(self) -> int:
        return len(self.class_names)


def build_prototype_space(manifest, image_encoder: ImageEncoder,
                          use_frame_selection: bool = True) -> ClassPrototypeSpace:
    """Mean visual embedding per class over a labeled manifest."""
    from .alignment import clip_frame_path
    from .encoders import load_image

    by_class: dict[str, list[np.ndarray]] = {}
    for rec in manifest:
        if rec.class_label is None:
            raise ValueError(f"clip {rec.clip_id!r} has no class_label")
        frame = clip_frame_path(rec, use_frame_selection)
        emb = image_encoder.encode_image(load_image(frame))
        by_class.setdefault(rec.class_label, []).append(emb.vector.astype(np.float64))
    names = sorted(by_class)
    protos = np.stack([np.mean(by_class[c], axis=0) for c in names])
    return ClassPrototypeSpace(class_names=names, prototypes=protos,
                               embedder=image_encoder)


def _cosine_to_prototypes(embeddings: np.ndarray,
                          space: ClassPrototypeSpace) -> np.ndarray:
    emb = np.asarray(embeddings, dtype=np.float64)
    check_finite_array(emb, "embeddings")
    e_norm = np.linalg.norm(emb, axis=1, keepdims=True)
    p_norm = np.linalg.norm(space.prototypes, axis=1, keepdims=True)
    e_norm[e_norm == 0] = 1.0
    p_norm[p_norm == 0] = 1.0
    return (emb / e_norm) @ (space.prototypes / p_norm).T


def recall_from_embeddings(embeddings: np.ndarray, true_labels: list[str],
                           space: ClassPrototypeSpace,
                           ks: tuple[int, ...] = (1, 5)) -> dict[int, float]:
    """R@K of the true class under cosine ranking against the prototypes."""
    emb = np.asarray(embeddings, dtype=np.float64)
    if emb.ndim != 2 or emb.shape[0] == 0:
        raise ValueError("embeddings must be a nonempty (N, D) matrix")
    if len(true_labels) != emb.shape[0]:
        raise ValueError("one label per embedding required")
    name_to_idx = {c: i for i, c in enumerate(space.class_names)}
    try:
        targets = np.array([name_to_idx[l] for l in true_labels])
    except KeyError as exc:
        raise ValueError(f"unknown label {exc.args[0]!r}") from None
    sims = _cosine_to_prototypes(emb, space)
    # rank of the true class: number of classes with strictly larger similarity
    true_sims = sims[np.arange(len(targets)), targets]
    ranks = (sims > true_sims[:, None]).sum(axis=1)
    out = {}
    for k in ks:
        if k < 1:
            raise ValueError("K must be >= 1")
        out[int(k)] = float(np.mean(ranks < k))
    return out


def recall_at_k(images, true_labels: list[str], space: ClassPrototypeSpace,
                ks: tuple[int, ...] = (1, 5)) -> dict[int, float]:
    """Embed generated images with the space's embedder, then rank classes."""
    if space.embedder is None:
        raise ValueError("prototype space has no image embedder attached")
    if len(images) == 0:
        raise ValueError("no images to evaluate")
    embs = []
    for img in images:
        pixels = img.pixels if hasattr(img, "pixels") else img
        embs.append(space.embedder.encode_image(pixels).vector)
    return recall_from_embeddings(np.stack(embs), true_labels, space, ks)


# ---------------------------------------------------------------------------
# distribution metrics
# ---------------------------------------------------------------------------

def _sqrtm_psd(m: np.ndarray) -> np.ndarray:
    """Square root of a symmetric PSD matrix; negative eigs clipped at 0."""
    vals, vecs = np.linalg.eigh((m + m.T) / 2.0)
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


def frechet_from_moments(mu_a: np.ndarray, cov_a: np.ndarray,
                         mu_b: np.ndarray, cov_b: np.ndarray) -> float:
    mu_a = np.asarray(mu_a, dtype=np.float64)
    mu_b = np.asarray(mu_b, dtype=np.float64)
    cov_a = np.asarray(cov_a, dtype=np.float64)
    cov_b = np.asarray(cov_b, dtype=np.float64)
    if mu_a.shape != mu_b.shape or cov_a.shape != cov_b.shape:
        raise ValueError("moment shapes must match")
    sqrt_a = _sqrtm_psd(cov_a)
    inner = _sqrtm_psd(sqrt_a @ cov_b @ sqrt_a)
    diff = mu_a - mu_b
    val = float(diff @ diff + np.trace(cov_a) + np.trace(cov_b) - 2.0 * np.trace(inner))
    if val < -1e-6:
        raise ValueError(f"Fréchet distance came out negative: {val}")
    return max(val, 0.0)


def frechet_distance(feats_a: np.ndarray, feats_b: np.ndarray) -> float:
    """Fréchet distance between Gaussian fits of two feature populations."""
    a = np.asarray(feats_a, dtype=np.float64)
    b = np.asarray(feats_b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ValueError("feature matrices must be (N, d) and (M, d)")
    if a.shape[0] < 2 or b.shape[0] < 2:
        raise ValueError("need at least 2 samples per population")
    check_finite_array(a, "feats_a")
    check_finite_array(b, "feats_b")
    return frechet_from_moments(a.mean(axis=0), np.cov(a, rowvar=False),
                                b.mean(axis=0), np.cov(b, rowvar=False))


def inception_style_score(class_probs: np.ndarray) -> float:
    """exp of the mean KL between row distributions and their marginal."""
    p = check_probability_rows(class_probs)
    marginal = p.mean(axis=0)
    safe = p > 0
    logs = np.zeros_like(p)
    logs[safe] = np.log(p[safe] / marginal[None, :].repeat(p.shape[0], axis=0)[safe])
    kl = (p * logs).sum(axis=1)
    return float(np.exp(kl.mean()))


def prototype_class_probs(embeddings: np.ndarray, space: ClassPrototypeSpace,
                          scale: float = PROTOTYPE_SOFTMAX_SCALE) -> np.ndarray:
    """Softmax over scaled prototype cosine similarities, one row per sample."""
    sims = scale * _cosine_to_prototypes(embeddings, space)
    sims -= sims.max(axis=1, keepdims=True)
    e = np.exp(sims)
    return e / e.sum(axis=1, keepdims=True)


class ImageClassifier:
    """Small supervised conv classifier used for image-level scoring.

    Stands in for a fine-tuned large classifier: trained on the labeled
    evaluation corpus, it supplies the class distributions consumed by
    :func:`inception_style_score`.
    """

    def __init__(self, class_names: list[str], channels: tuple[int, ...] = (8, 16),
                 lr: float = 2e-3, epochs: int = 150, batch_size: int = 32,
                 seed: int = 0):
        if len(class_names) < 2:
            raise ValueError("need at least 2 classes")
        self.class_names = list(class_names)
        self.channels = tuple(channels)
        self.lr = lr
        self.epochs = epochs
        self.batch_size = batch_size
        self.seed = seed
        self.net_ = None

    def fit(self, images: np.ndarray, labels: list[str]) -> "ImageClassifier":
        import torch
        from torch import nn

        images = np.asarray(images, dtype=np.float32)
        if images.ndim != 4 or images.shape[0] != len(labels):
            raise ValueError("images must be (N, H, W, 3) with one label per image")
        idx = {c: i for i, c in enumerate(self.class_names)}
        try:
            y = torch.tensor([idx[l] for l in labels])
        except KeyError as exc:
            raise ValueError(f"unknown label {exc.args[0]!r}") from None

        torch.manual_seed(self.seed)
        layers, in_ch = [], 3
        for out_ch in self.channels:
            layers += [nn.Conv2d(in_ch, out_ch, 3, stride=2, padding=1),
                       nn.ReLU(inplace=True)]
            in_ch = out_ch
        layers += [nn.AdaptiveAvgPool2d(1), nn.Flatten(),
                   nn.Linear(in_ch, len(self.class_names))]
        net = nn.Sequential(*layers)

        opt = torch.optim.Adam(net.parameters(), lr=self.lr)
        x = torch.from_numpy(images).permute(0, 3, 1, 2)
        rng = np.random.default_rng(self.seed)
        loss_fn = nn.CrossEntropyLoss()
        for _ in range(self.epochs):
            order = rng.permutation(len(labels))
            for start in range(0, len(order), self.batch_size):
                b = order[start:start + self.batch_size]
                opt.zero_grad()
                loss_fn(net(x[b]), y[b]).backward()
                opt.step()
        net.eval()
        self.net_ = net
        return self

    def predict_probs(self, images: np.ndarray) -> np.ndarray:
        import torch

        if self.net_ is None:
            raise ValueError("classifier is not fitted")
        x = torch.from_numpy(np.asarray(images, dtype=np.float32)).permute(0, 3, 1, 2)
        with torch.no_grad():
            probs = torch.softmax(self.net_(x), dim=1).numpy().astype(np.float64)
        return probs / probs.sum(axis=1, keepdims=True)


# ---------------------------------------------------------------------------
# run-level evaluation and the ablation grid
# ---------------------------------------------------------------------------

def evaluate_alignment(audio_encoder, image_encoder: ImageEncoder, test_manifest,
                       duration_s: float = 10.0, ks: tuple[int, ...] = (1, 5),
                       config: dict | None = None,
                       use_frame_selection: bool = True,
                       decoder=None, classifier: ImageClassifier | None = None) -> EvalReport:
    """Score a trained audio encoder on a labeled test split.

    R@K ranks test audio embeddings against class prototypes built from the
    same split's real images. Without a decoder, the Fréchet column compares
    the audio and visual embedding populations and the inception-style column
    feeds prototype-softmax distributions of the audio embeddings. With a
    decoder, images are generated from each test audio embedding and the
    columns switch to real-vs-generated image features and the supervised
    classifier's class distributions.
    """
    from .audio import compute_log_spectrogram, load_and_standardize
    from .encoders import load_image
    from .alignment import clip_frame_path

    if len(test_manifest) == 0:
        raise ValueError("test manifest is empty")
    space = build_prototype_space(test_manifest, image_encoder,
                                  use_frame_selection=use_frame_selection)
    audio_embs, visual_embs, labels, real_images = [], [], [], []
    for rec in test_manifest:
        w = load_and_standardize(rec.audio_path, target_duration_s=duration_s)
        audio_embs.append(audio_encoder.encode(compute_log_spectrogram(w)).vector)
        frame = clip_frame_path(rec, use_frame_selection)
        img = load_image(frame)
        visual_embs.append(image_encoder.encode_image(img).vector)
        real_images.append(img)
        labels.append(rec.class_label)
    audio_embs = np.stack(audio_embs)
    visual_embs = np.stack(visual_embs)
    ks = tuple(k for k in ks if k <= space.n_classes)

    if decoder is not None:
        from .generation import sample_noise

        noise = np.stack([sample_noise(decoder.noise_dim, i)
                          for i in range(audio_embs.shape[0])])
        gen_images = decoder.predict(audio_embs.astype(np.float32), noise=noise)
        gen_embs = np.stack([image_encoder.encode_image(g).vector for g in gen_images])
        frechet = frechet_distance(visual_embs, gen_embs)
        if classifier is None:
            classifier = ImageClassifier(space.class_names).fit(
                np.stack(real_images), labels)
        is_score = inception_style_score(classifier.predict_probs(gen_images))
    else:
        frechet = frechet_distance(audio_embs, visual_embs)
        is_score = inception_style_score(prototype_class_probs(audio_embs, space))

    return EvalReport(
        r_at=recall_from_embeddings(audio_embs, labels, space, ks),
        frechet=frechet,
        inception_score=is_score,
        n_samples=len(labels),
        config=config or {},
    )


def run_ablation_grid(train_manifest, test_manifest, encoder_config,
                      grid, out_dir: str | Path | None = None,
                      cache_dir: str | Path | None = None) -> list[dict]:
    """Train and evaluate one model per config cell; failures don't stop the grid.

    Returns one row per cell with the config axes and the report columns,
    and writes ``ablation.csv`` under ``out_dir`` when given.
    """
    from .alignment import train
    from .encoders import build_encoders

    rows = []
    for i, cfg in enumerate(grid):
        cell = {
            "cell": i,
            "loss_variant": cfg.loss_variant,
            "use_frame_selection": cfg.use_frame_selection,
            "audio_duration_s": cfg.audio_duration_s,
            "seed": cfg.seed,
        }
        try:
            encoders = build_encoders(encoder_config)
            result = train(train_manifest, encoders, cfg,
                           out_dir=out_dir, run_id=f"cell_{i}", cache_dir=cache_dir)
            report = evaluate_alignment(
                result.audio_encoder, encoders[1], test_manifest,
                duration_s=cfg.audio_duration_s, config=cfg.to_dict(),
                use_frame_selection=cfg.use_frame_selection)
            cell.update({
                "status": "ok",
                "r_at_1": report.r_at.get(1),
                "r_at_5": report.r_at.get(5),
                "frechet": report.frechet,
                "inception_score": report.inception_score,
                "best_epoch": result.best_epoch,
            })
        except Exception as exc:  # noqa: BLE001  (cell failures are recorded)
            logger.warning("ablation cell %d failed: %s", i, exc)
            cell.update({"status": "failed", "error": str(exc)})
        rows.append(cell)

    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        fieldnames = sorted({k for row in rows for k in row})
        with (out_dir / "ablation.csv").open("w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=fieldnames)
            writer.writeheader()
            writer.writerows(rows)
    return rows


def save_report(report: EvalReport, path: str | Path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True))
