"""Procedural desk-scale dataset in the MVTec directory layout.

Generates seeded texture images (train/good, test/good) and defective test
images (test/<kind> plus ground_truth/<kind> masks) so the whole pipeline can
run without downloads. Test-time defects (blots, scratches) are deliberately
a different family from the pasted-crop training augmentations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ConfigError, DataError

TEXTURES = ("stripes", "checker", "perlin-like")
DEFECT_KINDS = ("blot", "scratch")
# generation-time gate: defects must be clearly visible against the texture
MIN_MASK_CONTRAST = 0.1

_SPLIT_TAGS = {"train-good": 0, "test-good": 1, "test-defect": 2}


@dataclass(frozen=True)
class ToySpec:
    n_train: int = 50
    n_test_good: int = 20
    n_test_defect: int = 20
    texture: str = "stripes"
    defect_kind: str = "blot"
    seed: int = 0
    image_size: int = 64
    class_name: str = "toy"

    def __post_init__(self):
        if min(self.n_train, self.n_test_good, self.n_test_defect) < 1:
            raise ConfigError("all toy dataset counts must be >= 1")
        if self.texture not in TEXTURES:
            raise ConfigError(f"texture must be one of {TEXTURES}, got {self.texture!r}")
        if self.defect_kind not in DEFECT_KINDS:
            raise ConfigError(
                f"defect_kind must be one of {DEFECT_KINDS}, got {self.defect_kind!r}"
            )
        if self.image_size < 16:
            raise ConfigError(f"image_size must be >= 16, got {self.image_size}")
        if self.seed < 0:
            raise ConfigError(f"seed must be >= 0, got {self.seed}")


def _sample_rng(spec: ToySpec, split: str, index: int) -> np.random.Generator:
    return np.random.default_rng(
        np.random.SeedSequence([spec.seed, _SPLIT_TAGS[split], index])
    )


def texture_image(spec: ToySpec, rng: np.random.Generator) -> np.ndarray:
    """Render one normal texture image, (S, S, 3) float32 in [0, 1].

    Each texture family has a fixed global structure; per-image variation is
    limited to phase/offset and faint noise so normals stay in-distribution.
    """
    size = spec.image_size
    ys, xs = np.mgrid[0:size, 0:size].astype(np.float64)
    if spec.texture == "stripes":
        theta = math.radians(30.0)
        phase = rng.uniform(0.0, 2.0 * math.pi)
        wave = np.sin(2.0 * math.pi * (xs * math.cos(theta) + ys * math.sin(theta)) / 8.0 + phase)
        base = 0.5 + 0.3 * wave
    elif spec.texture == "checker":
        off_x = int(rng.integers(0, 8))
        off_y = int(rng.integers(0, 8))
        tiles = (((xs + off_x) // 8) + ((ys + off_y) // 8)) % 2
        base = 0.35 + 0.3 * tiles
    else:  # perlin-like value noise: fixed class-level coarse grid, smoothly upsampled
        class_rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 3]))
        coarse = class_rng.uniform(0.25, 0.75, size=(5, 5))
        # per-image variation stays small so normals remain in-distribution
        coarse = np.clip(coarse + rng.normal(0.0, 0.02, size=(5, 5)), 0.0, 1.0)
        grid_pos = np.linspace(0.0, 4.0, size)
        ix = np.clip(grid_pos.astype(int), 0, 3)
        fx = grid_pos - ix
        top = coarse[np.ix_(ix, ix)]
        right = coarse[np.ix_(ix, ix + 1)]
        bottom = coarse[np.ix_(ix + 1, ix)]
        diag = coarse[np.ix_(ix + 1, ix + 1)]
        wx = fx[None, :]
        wy = fx[:, None]
        base = (
            top * (1 - wx) * (1 - wy)
            + right * wx * (1 - wy)
            + bottom * (1 - wx) * wy
            + diag * wx * wy
        )
    base = base + rng.normal(0.0, 0.01, size=base.shape)
    image = np.repeat(np.clip(base, 0.0, 1.0)[:, :, None], 3, axis=2)
    return image.astype(np.float32)


def _defect_mask(kind: str, size: int, rng: np.random.Generator) -> np.ndarray:
    ys, xs = np.mgrid[0:size, 0:size].astype(np.float64)
    if kind == "blot":
        cx = rng.uniform(0.2, 0.8) * size
        cy = rng.uniform(0.2, 0.8) * size
        rx = rng.uniform(0.10, 0.20) * size
        ry = rng.uniform(0.10, 0.20) * size
        return ((xs + 0.5 - cx) / rx) ** 2 + ((ys + 0.5 - cy) / ry) ** 2 <= 1.0
    # scratch: a thin band around a long random segment
    x0, y0 = rng.uniform(0.1, 0.9, size=2) * size
    angle = rng.uniform(0.0, math.pi)
    length = rng.uniform(0.5, 0.9) * size
    x1 = x0 + length * math.cos(angle)
    y1 = y0 + length * math.sin(angle)
    px = xs + 0.5 - x0
    py = ys + 0.5 - y0
    dx, dy = x1 - x0, y1 - y0
    seg_len_sq = dx * dx + dy * dy
    t = np.clip((px * dx + py * dy) / seg_len_sq, 0.0, 1.0)
    dist = np.hypot(px - t * dx, py - t * dy)
    return dist <= 1.5


def toy_defect(
    image: np.ndarray, kind: str, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Stamp one test-time defect; returns (defected image, boolean mask)."""
    size = image.shape[0]
    for _ in range(8):
        mask = _defect_mask(kind, size, rng)
        if not mask.any():
            continue
        local_mean = float(image[mask].mean())
        # push toward the far side of the intensity range for contrast
        level = local_mean - 0.5 if local_mean >= 0.5 else local_mean + 0.5
        fill = np.clip(level + rng.normal(0.0, 0.02, size=(int(mask.sum()), 3)), 0.0, 1.0)
        out = image.copy()
        out[mask] = fill.astype(np.float32)
        contrast = float(np.abs(out[mask] - image[mask]).mean())
        if contrast > MIN_MASK_CONTRAST:
            return out, mask
    raise DataError(f"could not render a visible {kind} defect (contrast <= {MIN_MASK_CONTRAST})")


def toy_sample(spec: ToySpec, split: str, index: int) -> tuple[np.ndarray, np.ndarray | None]:
    """Deterministic sample for (spec, split, index); mask is None for normals."""
    if split not in _SPLIT_TAGS:
        raise ConfigError(f"split must be one of {tuple(_SPLIT_TAGS)}, got {split!r}")
    rng = _sample_rng(spec, split, index)
    image = texture_image(spec, rng)
    if split != "test-defect":
        return image, None
    defected, mask = toy_defect(image, spec.defect_kind, rng)
    return defected, mask


def _save_png(path: Path, array: np.ndarray) -> None:
    data = np.clip(np.round(array * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(data).save(path, format="PNG")


def generate(spec: ToySpec, out_dir: str | Path) -> Path:
    """Write the dataset under out_dir/<class_name> in MVTec layout.

    Identical specs produce byte-identical files. Returns the class directory.
    """
    class_dir = Path(out_dir) / spec.class_name
    layout = {
        "train/good": spec.n_train,
        "test/good": spec.n_test_good,
        f"test/{spec.defect_kind}": spec.n_test_defect,
        f"ground_truth/{spec.defect_kind}": 0,
    }
    try:
        for rel in layout:
            (class_dir / rel).mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create dataset directory under {out_dir}: {exc}") from exc

    for i in range(spec.n_train):
        image, _ = toy_sample(spec, "train-good", i)
        _save_png(class_dir / "train" / "good" / f"{i:03d}.png", image)
    for i in range(spec.n_test_good):
        image, _ = toy_sample(spec, "test-good", i)
        _save_png(class_dir / "test" / "good" / f"{i:03d}.png", image)
    for i in range(spec.n_test_defect):
        image, mask = toy_sample(spec, "test-defect", i)
        _save_png(class_dir / "test" / spec.defect_kind / f"{i:03d}.png", image)
        _save_png(
            class_dir / "ground_truth" / spec.defect_kind / f"{i:03d}_mask.png",
            mask.astype(np.float32),
        )
    return class_dir
