"""Synthetic defect augmentation for normal training images.

Random geometric defects (pasted crops of the image itself, or solid noise
fills) are stamped onto defect-free images so the learned features stay
sensitive to local appearance changes. All randomness is derived from an
explicit integer seed, so the functions are pure and safe to call from
parallel data-loading workers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, InputError

SHAPES = ("rectangle", "ellipse", "scar-strip")
SOURCES = ("same-image-crop", "solid-noise")


@dataclass(frozen=True)
class DefectSpec:
    """Fully resolved parameters of a single defect stamp.

    size is (w_frac, h_frac) as fractions of image width/height in (0, 1];
    angle is degrees in [0, 360); position is the stamp center (cx_frac,
    cy_frac) in [0, 1]; jitter in [0, 1] scales the color perturbation of
    the fill.
    """

    shape: str
    size: tuple[float, float]
    angle: float
    position: tuple[float, float]
    source: str
    jitter: float

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise ConfigError(f"unknown defect shape {self.shape!r}")
        if self.source not in SOURCES:
            raise ConfigError(f"unknown defect source {self.source!r}")
        w, h = self.size
        if not (0.0 < w <= 1.0 and 0.0 < h <= 1.0):
            raise ConfigError(f"defect size fractions must be in (0, 1], got {self.size}")
        if not 0.0 <= self.angle < 360.0:
            raise ConfigError(f"defect angle must be in [0, 360), got {self.angle}")
        cx, cy = self.position
        if not (0.0 <= cx <= 1.0 and 0.0 <= cy <= 1.0):
            raise ConfigError(f"defect position must be in [0, 1], got {self.position}")
        if not 0.0 <= self.jitter <= 1.0:
            raise ConfigError(f"jitter must be in [0, 1], got {self.jitter}")


@dataclass
class AugmentedSample:
    """Image plus the boolean mask of pixels a defect actually touched."""

    image: np.ndarray
    defect_mask: np.ndarray
    is_synthetic: bool


def _check_range(name, lo, hi, bound_lo, bound_hi):
    if lo > hi:
        raise ConfigError(f"{name} range has min > max: ({lo}, {hi})")
    if lo < bound_lo or hi > bound_hi:
        raise ConfigError(
            f"{name} range ({lo}, {hi}) outside allowed [{bound_lo}, {bound_hi}]"
        )


@dataclass(frozen=True)
class AugmentationConfig:
    """Sampling ranges for defect specs plus the stamp application knobs.

    Every axis the augmentation exposes is a hyperparameter: which shapes
    and fill sources to draw from, the size/angle/position/jitter ranges,
    the per-image application probability, and how many stamps at most.
    """

    shapes: tuple[str, ...] = SHAPES
    sources: tuple[str, ...] = ("same-image-crop",)
    size_range: tuple[float, float] = (0.05, 0.3)
    scar_thickness_range: tuple[float, float] = (0.02, 0.05)
    angle_range: tuple[float, float] = (0.0, 360.0)
    position_range: tuple[float, float] = (0.0, 1.0)
    jitter_range: tuple[float, float] = (0.0, 0.1)
    apply_prob: float = 0.5
    max_defects: int = 1

    def __post_init__(self):
        if not self.shapes or any(s not in SHAPES for s in self.shapes):
            raise ConfigError(f"shapes must be a nonempty subset of {SHAPES}")
        if not self.sources or any(s not in SOURCES for s in self.sources):
            raise ConfigError(f"sources must be a nonempty subset of {SOURCES}")
        _check_range("size", *self.size_range, 1e-6, 1.0)
        _check_range("scar_thickness", *self.scar_thickness_range, 1e-6, 1.0)
        _check_range("angle", *self.angle_range, 0.0, 360.0)
        _check_range("position", *self.position_range, 0.0, 1.0)
        _check_range("jitter", *self.jitter_range, 0.0, 1.0)
        if not 0.0 <= self.apply_prob <= 1.0:
            raise ConfigError(f"apply_prob must be in [0, 1], got {self.apply_prob}")
        if self.max_defects < 1:
            raise ConfigError(f"max_defects must be >= 1, got {self.max_defects}")


def sample_defect_spec(rng_seed: int, config: AugmentationConfig) -> DefectSpec:
    """Draw one DefectSpec from the configured ranges.

    Identical (rng_seed, config) pairs yield identical specs. Scar strips
    take their long side from size_range and their short side from
    scar_thickness_range; the other shapes draw both sides from size_range.
    """
    rng = np.random.default_rng(rng_seed)
    shape = str(rng.choice(config.shapes))
    w = float(rng.uniform(*config.size_range))
    if shape == "scar-strip":
        h = float(rng.uniform(*config.scar_thickness_range))
    else:
        h = float(rng.uniform(*config.size_range))
    angle = float(rng.uniform(*config.angle_range))
    if angle >= 360.0:  # uniform(a, 360.0) can return the top endpoint
        angle = 0.0
    cx = float(rng.uniform(*config.position_range))
    cy = float(rng.uniform(*config.position_range))
    source = str(rng.choice(config.sources))
    jitter = float(rng.uniform(*config.jitter_range))
    return DefectSpec(
        shape=shape,
        size=(w, h),
        angle=angle,
        position=(cx, cy),
        source=source,
        jitter=jitter,
    )


def _validate_image(image: np.ndarray) -> np.ndarray:
    if not isinstance(image, np.ndarray) or image.ndim != 3:
        raise InputError(f"image must be an HxWxC array, got {getattr(image, 'shape', None)}")
    if not np.issubdtype(image.dtype, np.floating):
        raise InputError(f"image must be float, got dtype {image.dtype}")
    if image.size == 0:
        raise InputError("image is empty")
    lo, hi = float(image.min()), float(image.max())
    if lo < 0.0 or hi > 1.0:
        raise InputError(f"image values must lie in [0, 1], got [{lo}, {hi}]")
    return image


def _stamp_mask(shape: str, size, angle, position, height, width) -> np.ndarray:
    """Rasterize the rotated stamp over pixel centers, clipped to bounds."""
    w_px = max(size[0] * width, 1.0)
    h_px = max(size[1] * height, 1.0)
    cx = position[0] * width
    cy = position[1] * height
    theta = math.radians(angle)
    cos_t, sin_t = math.cos(theta), math.sin(theta)

    ys, xs = np.mgrid[0:height, 0:width]
    dx = xs + 0.5 - cx
    dy = ys + 0.5 - cy
    # rotate pixel offsets into the stamp frame
    u = cos_t * dx + sin_t * dy
    v = -sin_t * dx + cos_t * dy
    if shape == "ellipse":
        mask = (u / (w_px / 2.0)) ** 2 + (v / (h_px / 2.0)) ** 2 <= 1.0
    else:  # rectangle and scar-strip share the box inside-test
        mask = (np.abs(u) <= w_px / 2.0) & (np.abs(v) <= h_px / 2.0)
    if not mask.any():
        # degenerate stamp smaller than one pixel: keep the center pixel
        iy = min(max(int(cy), 0), height - 1)
        ix = min(max(int(cx), 0), width - 1)
        mask[iy, ix] = True
    return mask


def _fill_same_image_crop(image, mask, spec, rng):
    """Paste a rotated crop of the image itself into the masked region."""
    height, width = image.shape[:2]
    cx = spec.position[0] * width
    cy = spec.position[1] * height
    src_cx = rng.uniform(0.0, 1.0) * width
    src_cy = rng.uniform(0.0, 1.0) * height
    theta = math.radians(spec.angle)
    cos_t, sin_t = math.cos(theta), math.sin(theta)

    ys, xs = np.nonzero(mask)
    dx = xs + 0.5 - cx
    dy = ys + 0.5 - cy
    # map target offsets back through the stamp rotation into source coords
    sx = cos_t * dx + sin_t * dy + src_cx
    sy = -sin_t * dx + cos_t * dy + src_cy
    sx = np.clip(np.floor(sx).astype(np.int64), 0, width - 1)
    sy = np.clip(np.floor(sy).astype(np.int64), 0, height - 1)
    patch = image[sy, sx, :]

    if spec.jitter > 0.0:
        channels = image.shape[2]
        scale = 1.0 + spec.jitter * (rng.random(channels) * 2.0 - 1.0)
        shift = spec.jitter * (rng.random(channels) * 2.0 - 1.0) * 0.5
        patch = patch * scale + shift
    return np.clip(patch, 0.0, 1.0)


def _fill_solid_noise(image, mask, spec, rng):
    """Fill the masked region with one random color plus jittered pixel noise."""
    channels = image.shape[2]
    n = int(mask.sum())
    color = rng.random(channels)
    patch = np.broadcast_to(color, (n, channels)).copy()
    if spec.jitter > 0.0:
        patch = patch + spec.jitter * (rng.random((n, channels)) - 0.5)
    return np.clip(patch, 0.0, 1.0)


def apply_defect(
    image: np.ndarray,
    spec: DefectSpec,
    apply_prob: float,
    rng_seed: int,
) -> AugmentedSample:
    """Stamp the defect described by spec onto the image with probability apply_prob.

    Pixels outside the defect mask are bit-identical to the input; the whole
    output stays in [0, 1]. When the probability draw declines (or
    apply_prob is 0) the image is returned unchanged with an empty mask.
    """
    _validate_image(image)
    if not 0.0 <= apply_prob <= 1.0:
        raise InputError(f"apply_prob must be in [0, 1], got {apply_prob}")
    height, width = image.shape[:2]
    rng = np.random.default_rng(rng_seed)

    mask = np.zeros((height, width), dtype=bool)
    if rng.random() >= apply_prob:
        return AugmentedSample(image=image.copy(), defect_mask=mask, is_synthetic=False)

    mask = _stamp_mask(spec.shape, spec.size, spec.angle, spec.position, height, width)
    out = image.copy()
    if spec.source == "same-image-crop":
        fill = _fill_same_image_crop(image, mask, spec, rng)
    else:
        fill = _fill_solid_noise(image, mask, spec, rng)
    out[mask] = fill.astype(image.dtype, copy=False)
    return AugmentedSample(image=out, defect_mask=mask, is_synthetic=True)


def augment_image(
    image: np.ndarray, config: AugmentationConfig, rng_seed: int
) -> AugmentedSample:
    """Training-loop helper: sample spec(s) and apply them with one seed.

    Draws the number of stamps uniformly in [1, max_defects]; each stamp gets
    its own spec. Masks of individual stamps are OR-ed together.
    """
    seeds = np.random.SeedSequence(rng_seed).generate_state(2 * config.max_defects + 1)
    n_stamps = 1 + int(seeds[-1] % config.max_defects)
    out = image
    mask = np.zeros(image.shape[:2], dtype=bool)
    applied = False
    for k in range(n_stamps):
        spec = sample_defect_spec(int(seeds[2 * k]), config)
        # only the first stamp rolls the apply probability; extra stamps
        # piggyback on an image already chosen for augmentation
        prob = config.apply_prob if k == 0 else (1.0 if applied else 0.0)
        sample = apply_defect(out, spec, prob, int(seeds[2 * k + 1]))
        out = sample.image
        mask |= sample.defect_mask
        applied = applied or sample.is_synthetic
        if not applied:
            break
    return AugmentedSample(image=out, defect_mask=mask, is_synthetic=applied)
