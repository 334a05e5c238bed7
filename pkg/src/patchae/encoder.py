"""Feature encoder: backbone stages, multi-scale fusion, 1x1 compression head.

An input image passes through four convolutional stages; the outputs of the
two configured stages are fused (the deeper one upsampled to the shallower
grid, then concatenated) and compressed by two 1x1-conv + ReLU layers into a
grid of feature vectors. Each grid cell corresponds to one image patch of
``grid_stride`` pixels, which is what the patch decoder and the memory bank
rely on.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .errors import ConfigError, InputError, WeightsUnavailableError

# stride of each stage's output grid relative to the input, per backbone
_STAGE_STRIDES = {
    "wideresnet101": {"conv1": 4, "conv2": 8, "conv3": 16, "conv4": 32},
    "scratch-tiny": {"conv1": 2, "conv2": 4, "conv3": 8, "conv4": 16},
}
_WIDERESNET_CHANNELS = {"conv1": 256, "conv2": 512, "conv3": 1024, "conv4": 2048}
_IMAGENET_MEAN = (0.485, 0.456, 0.406)
_IMAGENET_STD = (0.229, 0.224, 0.225)


@dataclass(frozen=True)
class EncoderConfig:
    input_size: int = 224
    backbone: str = "wideresnet101"
    fuse_layers: tuple[str, str] = ("conv3", "conv4")
    c1: int = 1024
    c2: int = 2048
    c3: int = 1024
    in_channels: int = 3
    upsample: str = "nearest"

    def __post_init__(self):
        if self.backbone not in _STAGE_STRIDES:
            raise ConfigError(f"unknown backbone {self.backbone!r}")
        strides = _STAGE_STRIDES[self.backbone]
        lo, hi = self.fuse_layers
        if lo not in strides or hi not in strides or strides[lo] >= strides[hi]:
            raise ConfigError(
                f"fuse_layers must name a shallow/deep stage pair, got {self.fuse_layers}"
            )
        if self.backbone == "scratch-tiny" and tuple(self.fuse_layers) != ("conv3", "conv4"):
            raise ConfigError("scratch-tiny only supports fusing ('conv3', 'conv4')")
        if self.c1 <= 0 or self.c2 <= 0 or self.c3 <= 0:
            raise ConfigError("channel widths must be positive")
        if self.c1 + self.c2 <= self.c3:
            raise ConfigError(
                f"compression must reduce dimension: need c1+c2 > c3, "
                f"got {self.c1}+{self.c2} <= {self.c3}"
            )
        if self.backbone == "wideresnet101":
            expect = (_WIDERESNET_CHANNELS[lo], _WIDERESNET_CHANNELS[hi])
            if (self.c1, self.c2) != expect:
                raise ConfigError(
                    f"wideresnet101 stages {self.fuse_layers} have widths {expect}, "
                    f"config says ({self.c1}, {self.c2})"
                )
            if self.in_channels != 3:
                raise ConfigError("wideresnet101 requires in_channels == 3")
        if self.input_size <= 0 or self.input_size % self.grid_stride != 0:
            raise ConfigError(
                f"input_size {self.input_size} must be a positive multiple of the "
                f"stage stride {self.grid_stride} so the patch grid tiles exactly"
            )
        if self.upsample not in ("nearest", "bilinear"):
            raise ConfigError(f"upsample must be 'nearest' or 'bilinear', got {self.upsample!r}")

    @property
    def grid_stride(self) -> int:
        return _STAGE_STRIDES[self.backbone][self.fuse_layers[0]]

    @property
    def grid(self) -> tuple[int, int]:
        g = self.input_size // self.grid_stride
        return (g, g)

    @property
    def patch_px(self) -> tuple[int, int]:
        return (self.grid_stride, self.grid_stride)

    @property
    def head_hidden(self) -> int:
        # two-layer compression head keeps half the fused width in the middle
        return (self.c1 + self.c2 + 1) // 2


@dataclass
class FeatureMap:
    """Spatial feature grid: data[i, j] describes pixel block (i, j)."""

    data: np.ndarray  # (Gh, Gw, c3) float32
    grid: tuple[int, int]
    patch_px: tuple[int, int]

    def __post_init__(self):
        if self.data.ndim != 3 or self.data.shape[:2] != tuple(self.grid):
            raise InputError(
                f"feature data shape {self.data.shape} does not match grid {self.grid}"
            )
        if not np.isfinite(self.data).all():
            raise InputError("feature map contains non-finite values")

    @property
    def channels(self) -> int:
        return self.data.shape[2]


def config_digest(config: EncoderConfig) -> bytes:
    """32-byte digest of the canonical config encoding; pairs banks with encoders."""
    payload = json.dumps(asdict(config), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(payload.encode("utf-8")).digest()


class ScratchTinyBackbone(nn.Module):
    """Four plain conv stages (3x3, stride 2) for desk-scale runs without weights."""

    def __init__(self, in_channels: int, c1: int, c2: int):
        super().__init__()
        widths = [max(c1 // 2, 1), max((3 * c1) // 4, 1), c1, c2]
        stages = []
        prev = in_channels
        for w in widths:
            stages.append(
                nn.Sequential(nn.Conv2d(prev, w, 3, stride=2, padding=1), nn.ReLU(inplace=True))
            )
            prev = w
        self.stages = nn.ModuleList(stages)

    def forward(self, x):
        outs = {}
        for idx, stage in enumerate(self.stages, start=1):
            x = stage(x)
            outs[f"conv{idx}"] = x
        return outs


class WideResNetBackbone(nn.Module):
    """Stem plus the four residual stages of torchvision's wide_resnet101_2."""

    def __init__(self, pretrained: bool):
        super().__init__()
        import torchvision.models as tvm

        if pretrained:
            try:
                net = tvm.wide_resnet101_2(weights=tvm.Wide_ResNet101_2_Weights.IMAGENET1K_V1)
            except Exception as exc:  # noqa: BLE001 - any load failure must surface
                raise WeightsUnavailableError(
                    f"could not load pretrained wideresnet101 weights: {exc}"
                ) from exc
        else:
            net = tvm.wide_resnet101_2(weights=None)
        self.stem = nn.Sequential(net.conv1, net.bn1, net.relu, net.maxpool)
        self.layer1 = net.layer1
        self.layer2 = net.layer2
        self.layer3 = net.layer3
        self.layer4 = net.layer4

    def forward(self, x):
        x = self.stem(x)
        x1 = self.layer1(x)
        x2 = self.layer2(x1)
        x3 = self.layer3(x2)
        x4 = self.layer4(x3)
        return {"conv1": x1, "conv2": x2, "conv3": x3, "conv4": x4}


class Encoder(nn.Module):
    """Backbone stages + fusion + two 1x1-conv-ReLU compression layers."""

    def __init__(self, config: EncoderConfig, backbone: nn.Module):
        super().__init__()
        self.config = config
        self.backbone = backbone
        fused = config.c1 + config.c2
        self.head = nn.Sequential(
            nn.Conv2d(fused, config.head_hidden, 1),
            nn.ReLU(inplace=True),
            nn.Conv2d(config.head_hidden, config.c3, 1),
            nn.ReLU(inplace=True),
        )
        if config.backbone == "wideresnet101":
            mean = torch.tensor(_IMAGENET_MEAN).view(1, 3, 1, 1)
            std = torch.tensor(_IMAGENET_STD).view(1, 3, 1, 1)
        else:
            mean = torch.zeros(1, config.in_channels, 1, 1)
            std = torch.ones(1, config.in_channels, 1, 1)
        self.register_buffer("input_mean", mean)
        self.register_buffer("input_std", std)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = (x - self.input_mean) / self.input_std
        stages = self.backbone(x)
        shallow = stages[self.config.fuse_layers[0]]
        deep = stages[self.config.fuse_layers[1]]
        if self.config.upsample == "nearest":
            deep = F.interpolate(deep, size=shallow.shape[-2:], mode="nearest")
        else:
            deep = F.interpolate(
                deep, size=shallow.shape[-2:], mode="bilinear", align_corners=False
            )
        fused = torch.cat([shallow, deep], dim=1)
        return self.head(fused)


def build_encoder(
    config: EncoderConfig, init: str = "random", seed: int | None = None
) -> Encoder:
    """Construct an encoder; init is 'pretrained' or 'random'.

    Pretrained init is only available for the wide residual backbone and
    raises WeightsUnavailableError if the weights cannot be loaded; it never
    falls back to random initialization silently.
    """
    if init not in ("pretrained", "random"):
        raise ConfigError(f"init must be 'pretrained' or 'random', got {init!r}")
    if seed is not None:
        torch.manual_seed(seed)
    if config.backbone == "wideresnet101":
        backbone = WideResNetBackbone(pretrained=(init == "pretrained"))
    else:
        if init == "pretrained":
            raise ConfigError("scratch-tiny has no pretrained weights; use init='random'")
        backbone = ScratchTinyBackbone(config.in_channels, config.c1, config.c2)
    return Encoder(config, backbone)


def _image_to_batch(encoder: Encoder, image: np.ndarray) -> torch.Tensor:
    cfg = encoder.config
    expected = (cfg.input_size, cfg.input_size, cfg.in_channels)
    if not isinstance(image, np.ndarray) or image.shape != expected:
        raise InputError(
            f"image shape {getattr(image, 'shape', None)} does not match encoder "
            f"input {expected}"
        )
    if not np.isfinite(image).all():
        raise InputError("image contains non-finite values")
    arr = np.ascontiguousarray(image, dtype=np.float32)
    return torch.from_numpy(arr).permute(2, 0, 1).unsqueeze(0)


def encode(encoder: Encoder, image: np.ndarray) -> FeatureMap:
    """Run the encoder on one HxWxC image in inference mode."""
    batch = _image_to_batch(encoder, image)
    was_training = encoder.training
    encoder.eval()
    try:
        with torch.no_grad():
            out = encoder(batch)
    finally:
        if was_training:
            encoder.train()
    data = out.squeeze(0).permute(1, 2, 0).numpy().astype(np.float32, copy=False)
    return FeatureMap(data=data, grid=encoder.config.grid, patch_px=encoder.config.patch_px)
