"""Image generation from condition embeddings.

Three routes share the G(noise, condition) interface:

* a small trainable decoder (reconstruction-trained, optional adversarial
  term) standing in for a large pretrained conditional GAN;
* a retrieval generator that returns the nearest training image by cosine
  similarity in the visual embedding space;
* latent inversion, recovering (noise, condition) for a given image by
  gradient descent on pixel MSE under a frozen decoder.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted
from torch import nn

from .encoders import Embedding, ImageEncoder, load_image
from .validation import check_finite_array


@dataclass(frozen=True)
class GeneratorLatent:
    """Standard-normal noise plus the condition embedding fed to the decoder."""

    noise: np.ndarray
    condition: Embedding

    def __post_init__(self):
        noise = np.asarray(self.noise, dtype=np.float32)
        object.__setattr__(self, "noise", noise)
        if noise.ndim != 1:
            raise ValueError("noise must be a 1-D vector")
        check_finite_array(noise, "noise")


@dataclass(frozen=True)
class GeneratedImage:
    pixels: np.ndarray
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float32)
        object.__setattr__(self, "pixels", px)
        if px.ndim != 3 or px.shape[2] != 3:
            raise ValueError(f"pixels must be HxWx3, got {px.shape}")
        check_finite_array(px, "pixels")
        if px.min() < 0.0 or px.max() > 1.0:
            raise ValueError("pixels must lie in [0, 1]")


class DecoderNet(nn.Module):
    """(noise, condition) -> image in [0, 1] via upsample-conv stages."""

    def __init__(self, noise_dim: int, cond_dim: int, image_size: int,
                 base_channels: int = 64):
        super().__init__()
        if image_size < 8 or image_size & (image_size - 1):
            raise ValueError("image_size must be a power of two >= 8")
        self.noise_dim = noise_dim
        self.cond_dim = cond_dim
        self.image_size = image_size
        n_up = int(np.log2(image_size // 4))
        chans = [max(8, base_channels // (2 ** i)) for i in range(n_up + 1)]
        self.stem = nn.Linear(noise_dim + cond_dim, chans[0] * 4 * 4)
        blocks = []
        for c_in, c_out in zip(chans[:-1], chans[1:]):
            blocks += [
                nn.Upsample(scale_factor=2, mode="nearest"),
                nn.Conv2d(c_in, c_out, kernel_size=3, padding=1),
                nn.ReLU(inplace=True),
            ]
        blocks.append(nn.Conv2d(chans[-1], 3, kernel_size=3, padding=1))
        self.blocks = nn.Sequential(*blocks)
        self._c0 = chans[0]

    def forward(self, noise: torch.Tensor, cond: torch.Tensor) -> torch.Tensor:
        x = self.stem(torch.cat([noise, cond], dim=1))
        x = torch.relu(x).view(-1, self._c0, 4, 4)
        return torch.sigmoid(self.blocks(x))


class _PatchDiscriminator(nn.Module):
    def __init__(self, channels: int = 32):
        super().__init__()
        self.net = nn.Sequential(
            nn.Conv2d(3, channels, 4, stride=2, padding=1), nn.LeakyReLU(0.2, True),
            nn.Conv2d(channels, channels * 2, 4, stride=2, padding=1), nn.LeakyReLU(0.2, True),
            nn.Conv2d(channels * 2, 1, 4, stride=2, padding=1),
        )

    def forward(self, x):
        return self.net(x).mean(dim=(1, 2, 3))


def sample_noise(dim: int, seed: int) -> np.ndarray:
    g = torch.Generator().manual_seed(int(seed))
    return torch.randn(dim, generator=g).numpy()


class ConditionalImageDecoder(BaseEstimator):
    """Reconstruction-trained conditional decoder with a fit/predict surface.

    fit(Z, images) learns to map (noise, z_visual) back to the source image;
    predict(Z) emits one image per condition row. An optional nonsaturating
    adversarial term can be blended in via ``adversarial_weight``.
    """

    def __init__(self, cond_dim=64, noise_dim=16, image_size=64, base_channels=64,
                 lr=2e-3, epochs=60, batch_size=32, adversarial_weight=0.0, seed=0):
        self.cond_dim = cond_dim
        self.noise_dim = noise_dim
        self.image_size = image_size
        self.base_channels = base_channels
        self.lr = lr
        self.epochs = epochs
        self.batch_size = batch_size
        self.adversarial_weight = adversarial_weight
        self.seed = seed

    def _validate_fit(self, Z, images):
        Z = np.asarray(Z, dtype=np.float32)
        images = np.asarray(images, dtype=np.float32)
        if Z.ndim != 2 or Z.shape[1] != self.cond_dim:
            raise ValueError(f"Z must be (N, {self.cond_dim})")
        if images.shape != (Z.shape[0], self.image_size, self.image_size, 3):
            raise ValueError("images must be (N, H, W, 3) matching image_size")
        if Z.shape[0] == 0:
            raise ValueError("cannot fit a decoder on an empty corpus")
        check_finite_array(Z, "Z")
        check_finite_array(images, "images")
        return Z, images

    def fit(self, Z, images):
        Z, images = self._validate_fit(Z, images)
        torch.manual_seed(self.seed)
        net = DecoderNet(self.noise_dim, self.cond_dim, self.image_size,
                         self.base_channels)
        disc = _PatchDiscriminator() if self.adversarial_weight > 0 else None
        opt = torch.optim.Adam(net.parameters(), lr=self.lr)
        opt_d = (torch.optim.Adam(disc.parameters(), lr=self.lr)
                 if disc is not None else None)
        noise_gen = torch.Generator().manual_seed(self.seed + 1)
        rng = np.random.default_rng(self.seed)

        Z_t = torch.from_numpy(Z)
        imgs_t = torch.from_numpy(images).permute(0, 3, 1, 2)
        n = Z.shape[0]
        history = []
        for _ in range(self.epochs):
            order = rng.permutation(n)
            losses, counts = [], []
            for start in range(0, n, self.batch_size):
                b = order[start:start + self.batch_size]
                zb, xb = Z_t[b], imgs_t[b]
                noise = torch.randn(len(b), self.noise_dim, generator=noise_gen)
                out = net(noise, zb)
                loss = ((out - xb) ** 2).mean()
                if disc is not None:
                    d_fake = disc(out)
                    loss = loss + self.adversarial_weight * nn.functional.softplus(-d_fake).mean()
                opt.zero_grad()
                loss.backward()
                opt.step()
                if disc is not None:
                    d_loss = (nn.functional.softplus(-disc(xb)).mean()
                              + nn.functional.softplus(disc(out.detach())).mean())
                    opt_d.zero_grad()
                    d_loss.backward()
                    opt_d.step()
                losses.append(loss.item() * len(b))
                counts.append(len(b))
            history.append(float(np.sum(losses) / np.sum(counts)))
        net.eval()
        self.net_ = net
        self.history_ = history
        self.trained_ = self.epochs > 0
        self.cond_mean_ = Z.mean(axis=0)
        return self

    def predict(self, Z, noise: np.ndarray | None = None, seed: int = 0) -> np.ndarray:
        check_is_fitted(self, "net_")
        Z = np.asarray(Z, dtype=np.float32)
        if Z.ndim != 2 or Z.shape[1] != self.cond_dim:
            raise ValueError(f"Z must be (N, {self.cond_dim})")
        if noise is None:
            noise = np.stack([sample_noise(self.noise_dim, seed + i)
                              for i in range(Z.shape[0])])
        noise = np.asarray(noise, dtype=np.float32)
        with torch.no_grad():
            out = self.net_(torch.from_numpy(noise), torch.from_numpy(Z))
        return out.permute(0, 2, 3, 1).clamp(0.0, 1.0).numpy()


def generate(latent: GeneratorLatent, decoder: ConditionalImageDecoder) -> GeneratedImage:
    """Deterministic single-image generation from a latent pair."""
    check_is_fitted(decoder, "net_")
    if latent.condition.dim != decoder.cond_dim:
        raise ValueError(
            f"condition dim {latent.condition.dim} != decoder cond_dim {decoder.cond_dim}"
        )
    if latent.noise.size != decoder.noise_dim:
        raise ValueError(
            f"noise dim {latent.noise.size} != decoder noise_dim {decoder.noise_dim}"
        )
    pixels = decoder.predict(latent.condition.vector[None, :].astype(np.float32),
                             noise=latent.noise[None, :])[0]
    return GeneratedImage(pixels=pixels, provenance={
        "condition_modality": latent.condition.modality,
    })


def train_toy_decoder(manifest, image_encoder: ImageEncoder,
                      use_frame_selection: bool = True,
                      **decoder_params) -> ConditionalImageDecoder:
    """Fit the decoder on a manifest's images and their visual embeddings."""
    from .alignment import clip_frame_path

    if len(manifest) == 0:
        raise ValueError("manifest is empty")
    conds, imgs = [], []
    size = decoder_params.get("image_size", 64)
    for rec in manifest:
        frame = clip_frame_path(rec, use_frame_selection)
        img = load_image(frame)
        if img.shape[:2] != (size, size):
            raise ValueError(
                f"clip {rec.clip_id!r}: image is {img.shape[:2]}, decoder wants {size}x{size}"
            )
        conds.append(image_encoder.encode_image(img).vector)
        imgs.append(img)
    decoder_params.setdefault("cond_dim", image_encoder.config.embed_dim)
    dec = ConditionalImageDecoder(**decoder_params)
    return dec.fit(np.stack(conds), np.stack(imgs))


# ---------------------------------------------------------------------------
# retrieval generator
# ---------------------------------------------------------------------------

@dataclass
class RetrievalIndex:
    clip_ids: list[str]
    embeddings: np.ndarray
    image_paths: list[str]

    def __post_init__(self):
        emb = np.asarray(self.embeddings, dtype=np.float32)
        if emb.ndim != 2 or emb.shape[0] != len(self.clip_ids):
            raise ValueError("embeddings must be (N, D) with one row per clip")
        if len(self.image_paths) != len(self.clip_ids):
            raise ValueError("image_paths must match clip_ids")
        check_finite_array(emb, "index embeddings")
        self.embeddings = emb

    def __len__(self) -> int:
        return len(self.clip_ids)


def build_retrieval_index(manifest, image_encoder: ImageEncoder,
                          use_frame_selection: bool = True) -> RetrievalIndex:
    from .alignment import clip_frame_path

    ids, embs, paths = [], [], []
    for rec in manifest:
        frame = clip_frame_path(rec, use_frame_selection)
        embs.append(image_encoder.encode_image(load_image(frame)).vector)
        ids.append(rec.clip_id)
        paths.append(str(frame))
    if not ids:
        raise ValueError("cannot build a retrieval index from an empty manifest")
    return RetrievalIndex(clip_ids=ids, embeddings=np.stack(embs), image_paths=paths)


def retrieve(condition: Embedding, index: RetrievalIndex,
             k: int = 1) -> list[tuple[str, float]]:
    """Top-k entries by cosine similarity; ties break by clip_id order."""
    if len(index) == 0:
        raise ValueError("retrieval index is empty")
    if k < 1 or k > len(index):
        raise ValueError(f"k must be in [1, {len(index)}]")
    q = condition.vector.astype(np.float64)
    qn = np.linalg.norm(q)
    if qn == 0:
        raise ValueError("cannot retrieve with a zero condition")
    q = q / qn
    emb = index.embeddings.astype(np.float64)
    norms = np.linalg.norm(emb, axis=1)
    norms[norms == 0] = 1.0
    sims = (emb / norms[:, None]) @ q
    order = sorted(range(len(index)), key=lambda i: (-sims[i], index.clip_ids[i]))
    return [(index.clip_ids[i], float(sims[i])) for i in order[:k]]


def save_index(index: RetrievalIndex, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savez(path, embeddings=index.embeddings,
             clip_ids=np.array(index.clip_ids),
             image_paths=np.array(index.image_paths))


def load_index(path: str | Path) -> RetrievalIndex:
    data = np.load(Path(path))
    return RetrievalIndex(clip_ids=[str(c) for c in data["clip_ids"]],
                          embeddings=data["embeddings"],
                          image_paths=[str(p) for p in data["image_paths"]])


# ---------------------------------------------------------------------------
# inversion
# ---------------------------------------------------------------------------

@dataclass
class InversionResult:
    noise: np.ndarray
    condition: Embedding
    loss: float
    steps_run: int


def invert(image: np.ndarray, decoder: ConditionalImageDecoder,
           steps: int = 500, lr: float = 0.05,
           optimizer: str = "adam") -> InversionResult:
    """Recover (noise, condition) reconstructing ``image`` under the decoder.

    Starts from zero noise and the mean training condition, and always
    returns the best iterate seen, so the result never reconstructs worse
    than the initialization. steps=0 returns the initialization itself.
    """
    check_is_fitted(decoder, "net_")
    if steps < 0:
        raise ValueError("steps must be >= 0")
    target = np.asarray(image, dtype=np.float32)
    if target.shape != (decoder.image_size, decoder.image_size, 3):
        raise ValueError(f"image must be {decoder.image_size}x{decoder.image_size}x3")
    check_finite_array(target, "image")

    target_t = torch.from_numpy(target).permute(2, 0, 1).unsqueeze(0)
    noise = torch.zeros(1, decoder.noise_dim, requires_grad=True)
    cond = torch.from_numpy(decoder.cond_mean_.copy()).unsqueeze(0).requires_grad_(True)
    if optimizer == "adam":
        opt = torch.optim.Adam([noise, cond], lr=lr)
    elif optimizer == "sgd":
        opt = torch.optim.SGD([noise, cond], lr=lr)
    else:
        raise ValueError("optimizer must be 'adam' or 'sgd'")

    net = decoder.net_
    net.eval()
    best = None
    for _ in range(steps + 1):
        out = net(noise, cond)
        loss = ((out - target_t) ** 2).mean()
        if best is None or loss.item() < best[0]:
            best = (loss.item(), noise.detach().clone(), cond.detach().clone())
        opt.zero_grad()
        loss.backward()
        opt.step()

    loss_val, noise_best, cond_best = best
    return InversionResult(
        noise=noise_best[0].numpy().copy(),
        condition=Embedding(vector=cond_best[0].numpy().copy(), modality="visual"),
        loss=float(loss_val),
        steps_run=steps,
    )


def save_decoder(decoder: ConditionalImageDecoder, path: str | Path) -> None:
    check_is_fitted(decoder, "net_")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arrays = {f"param/{k}": v.detach().cpu().numpy()
              for k, v in decoder.net_.state_dict().items()}
    meta = json.dumps({"params": decoder.get_params(),
                       "trained": bool(decoder.trained_)})
    np.savez(path, __meta__=np.frombuffer(meta.encode(), dtype=np.uint8),
             cond_mean=decoder.cond_mean_, **arrays)


def load_decoder(path: str | Path) -> ConditionalImageDecoder:
    data = np.load(Path(path))
    meta = json.loads(bytes(data["__meta__"]).decode())
    dec = ConditionalImageDecoder(**meta["params"])
    net = DecoderNet(dec.noise_dim, dec.cond_dim, dec.image_size, dec.base_channels)
    state = {k[len("param/"):]: torch.from_numpy(data[k])
             for k in data.files if k.startswith("param/")}
    net.load_state_dict(state)
    net.eval()
    dec.net_ = net
    dec.history_ = []
    dec.trained_ = meta["trained"]
    dec.cond_mean_ = data["cond_mean"]
    return dec
