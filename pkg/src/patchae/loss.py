"""Hybrid patch-wise reconstruction loss.

The loss sums, over all patches, the L2 vector norm of the reconstruction
error twice: once on raw pixel values and once after normalizing each patch
to zero mean and unit variance (population statistics). A balance parameter
alpha in [0, 1] weighs the normalized term against the raw term; the
normalized term rewards getting the local contrast right rather than the
absolute intensities.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .errors import ConfigError, InputError
from .decoder import PatchSet


@dataclass(frozen=True)
class LossConfig:
    alpha: float = 0.5
    norm_eps: float = 1e-6
    squared: bool = False  # ablation: squared L2 norms instead of plain norms
    per_channel: bool = False  # normalize per channel instead of over all entries

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"alpha must be in [0, 1], got {self.alpha}")
        if self.norm_eps <= 0.0:
            raise ConfigError(f"norm_eps must be positive, got {self.norm_eps}")


def patch_norm(
    patch: np.ndarray, eps: float = 1e-6, per_channel: bool = False
) -> np.ndarray:
    """Normalize one patch to zero mean, unit variance (population stats).

    A constant patch maps to all zeros: eps keeps the division finite.
    """
    if patch.size == 0:
        raise InputError("patch is empty")
    arr = np.asarray(patch, dtype=np.float64)
    if per_channel and arr.ndim >= 2:
        axes = tuple(range(arr.ndim - 1))
        mean = arr.mean(axis=axes, keepdims=True)
        var = arr.var(axis=axes, keepdims=True)
    else:
        mean = arr.mean()
        var = arr.var()
    return ((arr - mean) / np.sqrt(var + eps)).astype(patch.dtype, copy=False)


def _normalize_t(x: torch.Tensor, eps: float, per_channel: bool) -> torch.Tensor:
    # x: (..., P, ph, pw, C); stats per patch
    if per_channel:
        dims = (-3, -2)
    else:
        dims = (-3, -2, -1)
    mean = x.mean(dim=dims, keepdim=True)
    var = x.var(dim=dims, unbiased=False, keepdim=True)
    return (x - mean) / torch.sqrt(var + eps)


def hybrid_patch_loss(
    recon: torch.Tensor, target: torch.Tensor, config: LossConfig
) -> torch.Tensor:
    """Loss over stacked patches of shape (..., P, ph, pw, C); returns (...).

    The per-patch L2 norm has subgradient 0 at a zero difference, so a
    perfect reconstruction backpropagates zeros instead of NaNs.
    """
    if recon.shape != target.shape:
        raise InputError(f"shape mismatch: recon {tuple(recon.shape)} vs target {tuple(target.shape)}")
    if recon.ndim < 4:
        raise InputError(f"expected (..., P, ph, pw, C) patches, got shape {tuple(recon.shape)}")

    def norm_sum(diff: torch.Tensor) -> torch.Tensor:
        flat = diff.flatten(start_dim=-3)
        if config.squared:
            per_patch = flat.pow(2).sum(dim=-1)
        else:
            per_patch = torch.linalg.vector_norm(flat, dim=-1)
        return per_patch.sum(dim=-1)

    total = recon.new_zeros(recon.shape[:-4])
    if config.alpha > 0.0:
        diff = _normalize_t(recon, config.norm_eps, config.per_channel) - _normalize_t(
            target, config.norm_eps, config.per_channel
        )
        total = total + config.alpha * norm_sum(diff)
    if config.alpha < 1.0:
        total = total + (1.0 - config.alpha) * norm_sum(recon - target)
    return total


def patch_ae_loss(recon: PatchSet, target: PatchSet, config: LossConfig) -> float:
    """Scalar loss between two PatchSets of equal layout."""
    if recon.grid != target.grid:
        raise InputError(f"grid mismatch: {recon.grid} vs {target.grid}")
    r = recon.stacked()
    t = target.stacked()
    if r.shape != t.shape:
        raise InputError(f"patch shape mismatch: {r.shape} vs {t.shape}")
    if r.ndim == 3:  # single-channel patches: add a channel axis
        r = r[..., None]
        t = t[..., None]
    value = hybrid_patch_loss(
        torch.from_numpy(np.ascontiguousarray(r)),
        torch.from_numpy(np.ascontiguousarray(t)),
        config,
    )
    result = float(value)
    if not np.isfinite(result):
        raise InputError("loss is non-finite")
    return result
