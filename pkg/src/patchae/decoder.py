"""Patch segmentation and the per-vector reconstruction head.

Every feature vector of the encoder grid is mapped through the same small
1x1-conv stack to the raw pixels of its own patch; patches are then tiled
back into a full image. Because the head is pointwise, cell (i, j) of the
feature grid can only influence patch (i, j) of the reconstruction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .errors import ConfigError, InputError
from .encoder import FeatureMap


@dataclass
class PatchSet:
    """Row-major list of non-overlapping tiles of one image."""

    patches: list[np.ndarray]
    grid: tuple[int, int]

    def __post_init__(self):
        gh, gw = self.grid
        if len(self.patches) != gh * gw:
            raise InputError(
                f"patch count {len(self.patches)} does not match grid {self.grid}"
            )

    def stacked(self) -> np.ndarray:
        return np.stack(self.patches, axis=0)


def segment(image: np.ndarray, grid: tuple[int, int]) -> PatchSet:
    """Split an image into a grid of equal tiles, row-major."""
    if not isinstance(image, np.ndarray) or image.ndim not in (2, 3):
        raise InputError(f"image must be HxW or HxWxC, got shape {getattr(image, 'shape', None)}")
    gh, gw = grid
    if gh < 1 or gw < 1:
        raise InputError(f"grid dims must be >= 1, got {grid}")
    height, width = image.shape[:2]
    if height % gh != 0 or width % gw != 0:
        raise InputError(f"image {height}x{width} not divisible by grid {gh}x{gw}")
    ph, pw = height // gh, width // gw
    rest = image.shape[2:]
    tiles = image.reshape(gh, ph, gw, pw, *rest).swapaxes(1, 2)
    patches = [tiles[i, j].copy() for i in range(gh) for j in range(gw)]
    return PatchSet(patches=patches, grid=(gh, gw))


def reassemble(patch_set: PatchSet) -> np.ndarray:
    """Invert segment(): tile the patches back into one image."""
    gh, gw = patch_set.grid
    ph, pw = patch_set.patches[0].shape[:2]
    rest = patch_set.patches[0].shape[2:]
    tiles = np.stack(patch_set.patches, axis=0).reshape(gh, gw, ph, pw, *rest)
    return tiles.swapaxes(1, 2).reshape(gh * ph, gw * pw, *rest)


@dataclass(frozen=True)
class DecoderConfig:
    c3: int
    hidden: int
    out_dim: int  # ph * pw * channels of one reconstructed patch

    def __post_init__(self):
        if self.c3 <= 0 or self.hidden <= 0 or self.out_dim <= 0:
            raise ConfigError(f"decoder dims must be positive, got {self}")


def default_decoder_config(c3: int, patch_px: tuple[int, int], channels: int) -> DecoderConfig:
    return DecoderConfig(c3=c3, hidden=2 * c3, out_dim=patch_px[0] * patch_px[1] * channels)


class PatchDecoder(nn.Module):
    """1x1 conv, ReLU, 1x1 conv; no output activation, raw pixel values."""

    def __init__(self, config: DecoderConfig):
        super().__init__()
        self.config = config
        self.layers = nn.Sequential(
            nn.Conv2d(config.c3, config.hidden, 1),
            nn.ReLU(inplace=True),
            nn.Conv2d(config.hidden, config.out_dim, 1),
        )

    def forward(self, features: torch.Tensor) -> torch.Tensor:
        return self.layers(features)


def build_decoder(config: DecoderConfig, seed: int | None = None) -> PatchDecoder:
    if seed is not None:
        torch.manual_seed(seed)
    return PatchDecoder(config)


def _patch_pixels(flat: torch.Tensor, patch_px: tuple[int, int], channels: int) -> torch.Tensor:
    """(N, ph*pw*C, Gh, Gw) -> (N, ph, pw, C, Gh, Gw), the shared layout.

    The per-cell vector layout is patch-row-major with channels fastest:
    index = (py * pw + px) * C + c.
    """
    n, out_dim, gh, gw = flat.shape
    ph, pw = patch_px
    if out_dim != ph * pw * channels:
        raise InputError(
            f"cannot reshape {out_dim} values into {ph}x{pw}x{channels} patches"
        )
    return flat.reshape(n, ph, pw, channels, gh, gw)


def assemble_patches(
    flat: torch.Tensor, patch_px: tuple[int, int], channels: int
) -> torch.Tensor:
    """(N, ph*pw*C, Gh, Gw) per-cell pixel vectors -> (N, H, W, C) images."""
    x = _patch_pixels(flat, patch_px, channels)
    n, ph, pw, c, gh, gw = x.shape
    x = x.permute(0, 4, 1, 5, 2, 3)  # (N, Gh, ph, Gw, pw, C)
    return x.reshape(n, gh * ph, gw * pw, c)


def patch_outputs(
    flat: torch.Tensor, patch_px: tuple[int, int], channels: int
) -> torch.Tensor:
    """(N, ph*pw*C, Gh, Gw) per-cell pixel vectors -> (N, P, ph, pw, C) stacks."""
    x = _patch_pixels(flat, patch_px, channels)
    n, ph, pw, c, gh, gw = x.shape
    x = x.permute(0, 4, 5, 1, 2, 3)  # (N, Gh, Gw, ph, pw, C)
    return x.reshape(n, gh * gw, ph, pw, c)


def decode(decoder: PatchDecoder, features: FeatureMap) -> np.ndarray:
    """Reconstruct the full image from a feature map, patch by patch."""
    if features.channels != decoder.config.c3:
        raise InputError(
            f"feature channels {features.channels} do not match decoder "
            f"input width {decoder.config.c3}"
        )
    ph, pw = features.patch_px
    if decoder.config.out_dim % (ph * pw) != 0:
        raise InputError(
            f"decoder out_dim {decoder.config.out_dim} is not a multiple of the "
            f"patch area {ph}x{pw}"
        )
    channels = decoder.config.out_dim // (ph * pw)
    batch = (
        torch.from_numpy(np.ascontiguousarray(features.data, dtype=np.float32))
        .permute(2, 0, 1)
        .unsqueeze(0)
    )
    was_training = decoder.training
    decoder.eval()
    try:
        with torch.no_grad():
            flat = decoder(batch)
    finally:
        if was_training:
            decoder.train()
    image = assemble_patches(flat, (ph, pw), channels)
    return image.squeeze(0).numpy().astype(np.float32, copy=False)


def patch_view(images: torch.Tensor, grid: tuple[int, int]) -> torch.Tensor:
    """(N, C, H, W) images -> (N, P, ph, pw, C) row-major patch stacks."""
    n, c, height, width = images.shape
    gh, gw = grid
    if height % gh != 0 or width % gw != 0:
        raise InputError(f"image {height}x{width} not divisible by grid {gh}x{gw}")
    ph, pw = height // gh, width // gw
    x = images.reshape(n, c, gh, ph, gw, pw)
    x = x.permute(0, 2, 4, 3, 5, 1)  # (N, Gh, Gw, ph, pw, C)
    return x.reshape(n, gh * gw, ph, pw, c)
