"""End-to-end optimization of the encoder and patch decoder.

Normal images are augmented with synthetic defects on the fly; the model is
trained to reconstruct its (possibly defected) input patch by patch. After
training, the un-augmented normal images are pushed through the encoder once
more to fill the memory bank.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .decoder import (
    DecoderConfig,
    PatchDecoder,
    build_decoder,
    default_decoder_config,
    patch_outputs,
    patch_view,
)
from .defects import AugmentationConfig, augment_image
from .encoder import Encoder, EncoderConfig, build_encoder, config_digest, encode
from .errors import ConfigError, InputError, NumericalError
from .loss import LossConfig, hybrid_patch_loss
from .memory_bank import MemoryBank

OPTIMIZERS = ("sgd-momentum", "adaptive-moments")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    batch_size: int = 8
    learning_rate: float = 1e-4
    backbone_lr_scale: float = 0.1
    seed: int = 0
    optimizer: str = "adaptive-moments"
    init: str = "random"
    freeze_backbone: bool = False
    deterministic: bool = True

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be positive")
        if self.learning_rate < 0.0:
            raise ConfigError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if not 0.0 < self.backbone_lr_scale <= 1.0:
            raise ConfigError(
                f"backbone_lr_scale must be in (0, 1], got {self.backbone_lr_scale}"
            )
        if self.seed < 0:
            raise ConfigError(f"seed must be >= 0, got {self.seed}")
        if self.optimizer not in OPTIMIZERS:
            raise ConfigError(f"optimizer must be one of {OPTIMIZERS}")
        if self.init not in ("pretrained", "random"):
            raise ConfigError(f"init must be 'pretrained' or 'random', got {self.init!r}")


@dataclass
class TrainResult:
    encoder: Encoder
    decoder: PatchDecoder
    history: list[float]  # per-epoch mean loss


def set_deterministic(flag: bool) -> None:
    """Single-threaded torch execution for bit-reproducible runs."""
    if flag:
        torch.set_num_threads(1)


def _validate_images(images: np.ndarray, encoder_cfg: EncoderConfig) -> None:
    if images.ndim != 4 or images.shape[0] == 0:
        raise InputError(f"expected a nonempty (N, H, W, C) stack, got {images.shape}")
    expected = (encoder_cfg.input_size, encoder_cfg.input_size, encoder_cfg.in_channels)
    if images.shape[1:] != expected:
        raise InputError(f"images {images.shape[1:]} do not match encoder input {expected}")
    lo, hi = float(images.min()), float(images.max())
    if lo < 0.0 or hi > 1.0:
        raise InputError(f"image values must lie in [0, 1], got [{lo}, {hi}]")


def _make_optimizer(encoder: Encoder, decoder: PatchDecoder, cfg: TrainConfig):
    backbone_params = list(encoder.backbone.parameters())
    head_params = list(encoder.head.parameters()) + list(decoder.parameters())
    if cfg.freeze_backbone:
        for p in backbone_params:
            p.requires_grad_(False)
        groups = [{"params": head_params, "lr": cfg.learning_rate}]
    else:
        groups = [
            {"params": head_params, "lr": cfg.learning_rate},
            {"params": backbone_params, "lr": cfg.learning_rate * cfg.backbone_lr_scale},
        ]
    if cfg.optimizer == "sgd-momentum":
        return torch.optim.SGD(groups, lr=cfg.learning_rate, momentum=0.9)
    return torch.optim.Adam(groups, lr=cfg.learning_rate)


def _augment_batch(
    images: np.ndarray,
    indices: np.ndarray,
    aug_cfg: AugmentationConfig,
    seed: int,
    epoch: int,
) -> np.ndarray:
    batch = np.empty_like(images[indices])
    for slot, idx in enumerate(indices):
        sample_seed = int(
            np.random.SeedSequence([seed, 2, epoch, int(idx)]).generate_state(1)[0]
        )
        batch[slot] = augment_image(images[idx], aug_cfg, sample_seed).image
    return batch


def train(
    images: np.ndarray,
    aug_cfg: AugmentationConfig,
    encoder_cfg: EncoderConfig,
    decoder_cfg: DecoderConfig | None,
    loss_cfg: LossConfig,
    train_cfg: TrainConfig,
) -> TrainResult:
    """Optimize encoder and decoder jointly on augmented normal images.

    Returns the trained modules plus the per-epoch mean loss history. Runs
    are reproducible from train_cfg.seed; deterministic mode additionally
    pins torch to one thread.
    """
    _validate_images(images, encoder_cfg)
    set_deterministic(train_cfg.deterministic)
    torch.manual_seed(train_cfg.seed)

    encoder = build_encoder(encoder_cfg, init=train_cfg.init)
    if decoder_cfg is None:
        decoder_cfg = default_decoder_config(
            encoder_cfg.c3, encoder_cfg.patch_px, encoder_cfg.in_channels
        )
    expected_out = (
        encoder_cfg.patch_px[0] * encoder_cfg.patch_px[1] * encoder_cfg.in_channels
    )
    if decoder_cfg.c3 != encoder_cfg.c3 or decoder_cfg.out_dim != expected_out:
        raise ConfigError(
            f"decoder config {decoder_cfg} does not match encoder patch geometry "
            f"(c3={encoder_cfg.c3}, out_dim={expected_out})"
        )
    decoder = build_decoder(decoder_cfg)
    optimizer = _make_optimizer(encoder, decoder, train_cfg)

    n = images.shape[0]
    grid = encoder_cfg.grid
    history: list[float] = []
    encoder.train()
    decoder.train()
    for epoch in range(train_cfg.epochs):
        shuffle_rng = np.random.default_rng(
            np.random.SeedSequence([train_cfg.seed, 1, epoch])
        )
        order = shuffle_rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, train_cfg.batch_size):
            indices = order[start : start + train_cfg.batch_size]
            batch_np = _augment_batch(images, indices, aug_cfg, train_cfg.seed, epoch)
            batch = torch.from_numpy(batch_np).permute(0, 3, 1, 2).contiguous()

            features = encoder(batch)
            flat = decoder(features)
            recon = patch_outputs(flat, encoder_cfg.patch_px, encoder_cfg.in_channels)
            target = patch_view(batch, grid)
            per_image = hybrid_patch_loss(recon, target, loss_cfg)
            batch_loss = per_image.mean()
            if not torch.isfinite(batch_loss):
                stats = flat.detach()
                raise NumericalError(
                    f"non-finite loss at epoch {epoch + 1}, batch starting {start}: "
                    f"recon range [{float(stats.min())}, {float(stats.max())}], "
                    f"target range [{float(batch.min())}, {float(batch.max())}]"
                )
            optimizer.zero_grad()
            batch_loss.backward()
            optimizer.step()
            epoch_loss += float(per_image.detach().sum())
        history.append(epoch_loss / n)
    encoder.eval()
    decoder.eval()
    return TrainResult(encoder=encoder, decoder=decoder, history=history)


def extract_normal_bank(encoder: Encoder, images: np.ndarray) -> MemoryBank:
    """Stack every grid vector of every normal image into the reference set."""
    if images.ndim != 4 or images.shape[0] == 0:
        raise InputError(f"expected a nonempty (N, H, W, C) stack, got {images.shape}")
    gh, gw = encoder.config.grid
    rows = []
    for i in range(images.shape[0]):
        fm = encode(encoder, images[i])
        rows.append(fm.data.reshape(gh * gw, fm.channels))
    vectors = np.concatenate(rows, axis=0).astype(np.float32, copy=False)
    return MemoryBank(
        vectors=vectors,
        config_digest=config_digest(encoder.config),
        grid=(gh, gw),
        n_source_images=images.shape[0],
    )


def save_loss_history(path, history: list[float]) -> None:
    """Write the loss log as CSV with full float precision."""
    lines = ["epoch,mean_loss"]
    for i, value in enumerate(history, start=1):
        lines.append(f"{i},{value!r}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
