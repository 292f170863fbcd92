"""Contrastive audio-to-visual alignment: losses, estimator, training loop.

The audio encoder is trained so its embeddings land next to the paired
frozen visual embeddings. The contrastive term is an InfoNCE of the form

    -log[ exp(-d(a_j, b_j)) / sum_k exp(-d(a_j, b_k)) ],   d(a, b) = ||a - b||_2

over unit-normalized vectors, and the full objective averages the
audio-centric and visual-centric terms over the mini-batch:

    L = (1/2B) * sum_j (L_j^A + L_j^V)

Two ablation variants exist alongside it: a plain L2 regression on raw
embeddings, and the same -log-softmax structure driven by cosine similarity
instead of negative distance. In-batch samples act as the negatives, and
there is no temperature parameter.
"""

from __future__ import annotations

import dataclasses
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .audio import compute_log_spectrogram, load_and_standardize
from .encoders import (
    AudioEncoder,
    AudioEncoderNet,
    Embedding,
    EncoderConfig,
    ImageEncoder,
    load_image,
    save_audio_encoder,
)
from .validation import check_finite_array

LOSS_VARIANTS = ("l2", "nce_cosine", "nce_l2")
ALLOWED_DURATIONS = (1.0, 5.0, 10.0)

# keeps sqrt differentiable when a positive pair collapses to zero distance
_DIST_EPS = 1e-16


@dataclass
class AlignmentBatch:
    """Row-aligned audio/visual embedding matrices from the same clips."""

    audio_embeds: np.ndarray
    visual_embeds: np.ndarray
    clip_ids: list[str]

    def __post_init__(self):
        a = np.asarray(self.audio_embeds, dtype=np.float64)
        v = np.asarray(self.visual_embeds, dtype=np.float64)
        if a.ndim != 2 or v.shape != a.shape or a.shape[0] < 1:
            raise ValueError("audio/visual embeddings must be equal-shape (B, D), B >= 1")
        if len(self.clip_ids) != a.shape[0]:
            raise ValueError("clip_ids length must match batch size")
        check_finite_array(a, "audio_embeds")
        check_finite_array(v, "visual_embeds")
        self.audio_embeds = a
        self.visual_embeds = v


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 64
    lr: float = 1e-3
    weight_decay: float = 1e-5
    max_epochs: int = 50
    early_stop_patience: int = 8
    loss_variant: str = "nce_l2"
    audio_duration_s: float = 10.0
    use_frame_selection: bool = True
    validation_fraction: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1 or self.max_epochs < 0 or self.early_stop_patience < 1:
            raise ValueError("batch_size, max_epochs, early_stop_patience must be positive")
        if self.lr < 0 or self.weight_decay < 0:
            raise ValueError("lr and weight_decay must be nonnegative")
        if self.loss_variant not in LOSS_VARIANTS:
            raise ValueError(f"loss_variant must be one of {LOSS_VARIANTS}")
        if float(self.audio_duration_s) not in ALLOWED_DURATIONS:
            raise ValueError(f"audio_duration_s must be one of {ALLOWED_DURATIONS}")
        if not 0.0 <= self.validation_fraction < 1.0:
            raise ValueError("validation_fraction must be in [0, 1)")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


# ---------------------------------------------------------------------------
# differentiable loss core (torch, dtype follows inputs)
# ---------------------------------------------------------------------------

def unit_rows(x: torch.Tensor) -> torch.Tensor:
    norms = x.norm(dim=1, keepdim=True)
    if (norms == 0).any():
        raise ValueError("cannot normalize zero embedding")
    return x / norms


def _unit_distances(a_hat: torch.Tensor, b_hat: torch.Tensor) -> torch.Tensor:
    """Pairwise ||a_j - b_k|| for unit rows, via d^2 = 2 - 2 cos."""
    sq = (2.0 - 2.0 * (a_hat @ b_hat.T)).clamp_min(0.0)
    return (sq + _DIST_EPS).sqrt()


def info_nce_terms(anchors: torch.Tensor, candidates: torch.Tensor) -> torch.Tensor:
    """Per-anchor InfoNCE values; anchors/candidates are unit-row matrices."""
    if anchors.shape != candidates.shape or anchors.shape[0] < 1:
        raise ValueError("anchors and candidates must be equal-shape with B >= 1")
    d = _unit_distances(anchors, candidates)
    return d.diagonal() + torch.logsumexp(-d, dim=1)


def total_loss_t(audio_raw: torch.Tensor, visual_raw: torch.Tensor) -> torch.Tensor:
    """Symmetric InfoNCE over a batch; rows are normalized internally."""
    a_hat, v_hat = unit_rows(audio_raw), unit_rows(visual_raw)
    d = _unit_distances(a_hat, v_hat)
    audio_centric = d.diagonal() + torch.logsumexp(-d, dim=1)
    visual_centric = d.diagonal() + torch.logsumexp(-d, dim=0)
    return (audio_centric + visual_centric).sum() / (2.0 * d.shape[0])


def l2_loss_t(audio_raw: torch.Tensor, visual_raw: torch.Tensor) -> torch.Tensor:
    """Mean Euclidean distance between raw paired embeddings."""
    sq = ((visual_raw - audio_raw) ** 2).sum(dim=1)
    return (sq + _DIST_EPS).sqrt().mean()


def nce_cosine_loss_t(audio_raw: torch.Tensor, visual_raw: torch.Tensor) -> torch.Tensor:
    """Symmetric -log-softmax over cosine similarities."""
    a_hat, v_hat = unit_rows(audio_raw), unit_rows(visual_raw)
    sim = a_hat @ v_hat.T
    audio_centric = -sim.diagonal() + torch.logsumexp(sim, dim=1)
    visual_centric = -sim.diagonal() + torch.logsumexp(sim, dim=0)
    return (audio_centric + visual_centric).sum() / (2.0 * sim.shape[0])


_LOSS_FNS = {"l2": l2_loss_t, "nce_cosine": nce_cosine_loss_t, "nce_l2": total_loss_t}


def loss_fn(variant: str):
    try:
        return _LOSS_FNS[variant]
    except KeyError:
        raise ValueError(f"loss_variant must be one of {LOSS_VARIANTS}") from None


# ---------------------------------------------------------------------------
# scalar contract surface (numpy in, float out)
# ---------------------------------------------------------------------------

def pairwise_distance(a: Embedding, b: Embedding) -> float:
    """Euclidean distance between unit embeddings; lies in [0, 2]."""
    if not (a.normalized and b.normalized):
        raise ValueError("pairwise_distance requires unit-normalized embeddings")
    if a.dim != b.dim:
        raise ValueError("embedding dimensions differ")
    return float(np.linalg.norm(a.vector.astype(np.float64) - b.vector.astype(np.float64)))


def _as_unit_matrix(rows: np.ndarray, name: str) -> torch.Tensor:
    rows = np.asarray(rows, dtype=np.float64)
    check_finite_array(rows, name)
    norms = np.linalg.norm(rows, axis=1)
    if np.any(np.abs(norms - 1.0) >= 1e-5):
        raise ValueError(f"{name} rows must be unit-norm")
    return torch.from_numpy(rows)


def info_nce(anchor_idx: int, anchors: np.ndarray, candidates: np.ndarray) -> float:
    """InfoNCE for one anchor row against all candidate rows."""
    a = _as_unit_matrix(anchors, "anchors")
    b = _as_unit_matrix(candidates, "candidates")
    if a.shape != b.shape:
        raise ValueError("anchors and candidates must have matching shape")
    if not 0 <= anchor_idx < a.shape[0]:
        raise ValueError("anchor_idx out of range")
    return float(info_nce_terms(a, b)[anchor_idx].item())


def total_loss(batch: AlignmentBatch) -> float:
    return float(total_loss_t(torch.from_numpy(batch.audio_embeds),
                              torch.from_numpy(batch.visual_embeds)).item())


def l2_loss(batch: AlignmentBatch) -> float:
    return float(l2_loss_t(torch.from_numpy(batch.audio_embeds),
                           torch.from_numpy(batch.visual_embeds)).item())


def nce_cosine_loss(batch: AlignmentBatch) -> float:
    return float(nce_cosine_loss_t(torch.from_numpy(batch.audio_embeds),
                                   torch.from_numpy(batch.visual_embeds)).item())


# ---------------------------------------------------------------------------
# estimator
# ---------------------------------------------------------------------------

class AudioVisualAligner(BaseEstimator, TransformerMixin):
    """Trains an audio encoder to match frozen visual embeddings.

    fit(X, y) takes spectrogram arrays X of shape (N, T, F) and visual
    target embeddings y of shape (N, D); transform(X) returns the aligned
    audio embeddings. A held-out fraction of the pairs drives early
    stopping, and the best-epoch parameters are restored after training.
    """

    def __init__(self, embed_dim=64, audio_arch=(8, 16, 32), loss_variant="nce_l2",
                 lr=1e-3, weight_decay=1e-5, batch_size=64, max_epochs=50,
                 early_stop_patience=8, validation_fraction=0.1, seed=0):
        self.embed_dim = embed_dim
        self.audio_arch = audio_arch
        self.loss_variant = loss_variant
        self.lr = lr
        self.weight_decay = weight_decay
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.early_stop_patience = early_stop_patience
        self.validation_fraction = validation_fraction
        self.seed = seed

    def _validate_xy(self, X, y):
        X = np.asarray(X, dtype=np.float32)
        y = np.asarray(y, dtype=np.float32)
        if X.ndim != 3:
            raise ValueError(f"X must be (N, T, F) spectrograms, got shape {X.shape}")
        if y.ndim != 2 or y.shape[0] != X.shape[0]:
            raise ValueError("y must be (N, D) visual embeddings matching X")
        if y.shape[1] != self.embed_dim:
            raise ValueError(f"y has dim {y.shape[1]} but embed_dim={self.embed_dim}")
        check_finite_array(X, "X")
        check_finite_array(y, "y")
        return X, y

    def fit(self, X, y):
        X, y = self._validate_xy(X, y)
        n = X.shape[0]
        criterion = loss_fn(self.loss_variant)

        rng = np.random.default_rng(self.seed)
        perm = rng.permutation(n)
        n_val = int(round(n * self.validation_fraction))
        n_val = min(n_val, n - 1)
        val_idx, train_idx = perm[:n_val], perm[n_val:]

        torch.manual_seed(self.seed)
        net = AudioEncoderNet(tuple(self.audio_arch), self.embed_dim)
        optimizer = torch.optim.Adam(net.parameters(), lr=self.lr,
                                     weight_decay=self.weight_decay)
        X_t = torch.from_numpy(X).unsqueeze(1)
        y_t = torch.from_numpy(y)

        def eval_loss(idx: np.ndarray) -> float:
            net.eval()
            with torch.no_grad():
                losses, counts = [], []
                for start in range(0, len(idx), self.batch_size):
                    b = idx[start:start + self.batch_size]
                    losses.append(criterion(net(X_t[b]), y_t[b]).item() * len(b))
                    counts.append(len(b))
            return float(np.sum(losses) / np.sum(counts))

        history: list[dict] = []
        best_val = float("inf")
        best_state = {k: v.clone() for k, v in net.state_dict().items()}
        best_epoch = 0
        bad_epochs = 0
        for epoch in range(1, self.max_epochs + 1):
            order = train_idx[rng.permutation(len(train_idx))]
            net.train()
            for start in range(0, len(order), self.batch_size):
                b = order[start:start + self.batch_size]
                optimizer.zero_grad()
                loss = criterion(net(X_t[b]), y_t[b])
                loss.backward()
                optimizer.step()
            # post-epoch snapshot over fixed-order batches, so the history is
            # a pure function of the parameters (constant when lr == 0)
            train_loss = eval_loss(train_idx)
            val_loss = eval_loss(val_idx) if n_val > 0 else train_loss
            history.append({"epoch": epoch, "train_loss": train_loss,
                            "val_loss": val_loss, "lr": self.lr})
            if val_loss < best_val - 1e-12:
                best_val = val_loss
                best_state = {k: v.clone() for k, v in net.state_dict().items()}
                best_epoch = epoch
                bad_epochs = 0
            else:
                bad_epochs += 1
                if bad_epochs >= self.early_stop_patience:
                    break

        net.load_state_dict(best_state)
        net.eval()
        self.encoder_ = net
        self.history_ = history
        self.best_epoch_ = best_epoch
        self.n_features_in_ = X.shape[1] * X.shape[2]
        return self

    def transform(self, X) -> np.ndarray:
        check_is_fitted(self, "encoder_")
        X = np.asarray(X, dtype=np.float32)
        if X.ndim != 3:
            raise ValueError(f"X must be (N, T, F) spectrograms, got shape {X.shape}")
        check_finite_array(X, "X")
        self.encoder_.eval()
        outs = []
        with torch.no_grad():
            for start in range(0, X.shape[0], self.batch_size):
                xb = torch.from_numpy(X[start:start + self.batch_size]).unsqueeze(1)
                outs.append(self.encoder_(xb).numpy())
        return np.concatenate(outs, axis=0)

    def score(self, X, y) -> float:
        """Negative alignment loss, so larger is better."""
        X, y = self._validate_xy(X, y)
        za = self.transform(X)
        return -float(loss_fn(self.loss_variant)(
            torch.from_numpy(za.astype(np.float64)),
            torch.from_numpy(y.astype(np.float64))).item())


# ---------------------------------------------------------------------------
# manifest-level training orchestration
# ---------------------------------------------------------------------------

@dataclass
class TrainResult:
    audio_encoder: AudioEncoder
    history: list[dict]
    best_epoch: int
    checkpoint_path: Path | None = None
    log_path: Path | None = None


def clip_frame_path(record, use_frame_selection: bool) -> Path:
    """Training frame for a record: annotated index when selection is on,
    the middle frame otherwise; single-image clips always use their image."""
    frames = record.frame_paths()
    if record.image_path is not None:
        return frames[0]
    if use_frame_selection:
        if record.selected_frame_idx is None:
            raise ValueError(
                f"clip {record.clip_id!r}: frame selection enabled but no "
                "selected_frame_idx annotated"
            )
        return frames[record.selected_frame_idx]
    return frames[len(frames) // 2]


def prepare_training_arrays(manifest, image_encoder: ImageEncoder,
                            config: TrainConfig,
                            cache_dir: str | Path | None = None):
    """Spectrogram and visual-target arrays for every manifest record."""
    from .audio import load_spectrogram_cache, save_spectrogram_cache

    if len(manifest) == 0:
        raise ValueError("manifest is empty")
    specs, targets, clip_ids = [], [], []
    cache_dir = Path(cache_dir) if cache_dir is not None else None
    for rec in manifest:
        cache_file = None
        if cache_dir is not None:
            cache_file = cache_dir / f"{rec.clip_id}_{int(config.audio_duration_s)}s.spec"
        if cache_file is not None and cache_file.exists():
            spec = load_spectrogram_cache(cache_file)
        else:
            w = load_and_standardize(rec.audio_path,
                                     target_duration_s=config.audio_duration_s)
            spec = compute_log_spectrogram(w)
            if cache_file is not None:
                save_spectrogram_cache(spec, cache_file)
        specs.append(spec.values)

        frame = clip_frame_path(rec, config.use_frame_selection)
        if image_encoder.feature_dir is not None:
            emb = image_encoder.encode_clip(rec.clip_id, image_path=frame)
        else:
            emb = image_encoder.encode_image(load_image(frame))
        targets.append(emb.vector)
        clip_ids.append(rec.clip_id)
    return np.stack(specs), np.stack(targets), clip_ids


def train(manifest, encoders: tuple[AudioEncoder, ImageEncoder], config: TrainConfig,
          out_dir: str | Path | None = None, run_id: str = "run",
          cache_dir: str | Path | None = None) -> TrainResult:
    """Train the audio encoder against frozen visual targets.

    Writes ``{run_id}/audio_encoder_best.npz`` and a JSONL training log under
    ``out_dir`` when given. The image encoder is verified frozen via a
    parameter checksum taken before and after the run.
    """
    audio_encoder, image_encoder = encoders
    frozen_before = image_encoder.checksum()

    X, y, _ = prepare_training_arrays(manifest, image_encoder, config, cache_dir)
    aligner = AudioVisualAligner(
        embed_dim=audio_encoder.config.embed_dim,
        audio_arch=audio_encoder.config.audio_arch,
        loss_variant=config.loss_variant,
        lr=config.lr,
        weight_decay=config.weight_decay,
        batch_size=config.batch_size,
        max_epochs=config.max_epochs,
        early_stop_patience=config.early_stop_patience,
        validation_fraction=config.validation_fraction,
        seed=config.seed,
    )
    aligner.fit(X, y)

    if image_encoder.checksum() != frozen_before:
        raise RuntimeError("image encoder parameters changed during training")

    trained = AudioEncoder(audio_encoder.config, net=aligner.encoder_)
    checkpoint_path = log_path = None
    if out_dir is not None:
        run_dir = Path(out_dir) / run_id
        run_dir.mkdir(parents=True, exist_ok=True)
        checkpoint_path = run_dir / "audio_encoder_best.npz"
        save_audio_encoder(checkpoint_path, trained)
        log_path = run_dir / "train_log.jsonl"
        with log_path.open("w", encoding="utf-8") as fh:
            for row in aligner.history_:
                fh.write(json.dumps({**row, "timestamp": time.strftime(
                    "%Y-%m-%dT%H:%M:%S")}) + "\n")
        (run_dir / "train_config.json").write_text(
            json.dumps(config.to_dict(), indent=2))
    return TrainResult(audio_encoder=trained, history=aligner.history_,
                       best_epoch=aligner.best_epoch_,
                       checkpoint_path=checkpoint_path, log_path=log_path)
