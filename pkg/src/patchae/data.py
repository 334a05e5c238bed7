"""MVTec-style directory ingestion.

Expected layout per class: ``<class>/train/good/*.png`` for training and
``<class>/test/<defect_type>/*.png`` for evaluation, where ``test/good``
holds the normal test images.
"""

from __future__ import annotations

from pathlib import Path
from typing import Iterator

import numpy as np
from PIL import Image

from .errors import DataError

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff")


def load_image(path: str | Path, input_size: int) -> np.ndarray:
    """Load an image as float32 RGB in [0, 1], resized to input_size squared."""
    path = Path(path)
    try:
        with Image.open(path) as img:
            img = img.convert("RGB")
            if img.size != (input_size, input_size):
                img = img.resize((input_size, input_size), Image.BILINEAR)
            arr = np.asarray(img, dtype=np.float32) / 255.0
    except FileNotFoundError as exc:
        raise DataError(f"image not found: {path}") from exc
    except OSError as exc:
        raise DataError(f"cannot read image {path}: {exc}") from exc
    return arr


def list_images(directory: Path) -> list[Path]:
    return sorted(
        p for p in directory.iterdir() if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES
    )


def load_train_images(class_dir: str | Path, input_size: int) -> np.ndarray:
    """All normal training images of one class, stacked (N, S, S, 3)."""
    train_dir = Path(class_dir) / "train" / "good"
    if not train_dir.is_dir():
        raise DataError(f"missing training split: {train_dir}")
    paths = list_images(train_dir)
    if not paths:
        raise DataError(f"no training images under {train_dir}")
    return np.stack([load_image(p, input_size) for p in paths], axis=0)


def iter_test_images(
    class_dir: str | Path, input_size: int
) -> Iterator[tuple[str, str, np.ndarray]]:
    """Yield (image_id, label, image) for every test image, sorted.

    Any subfolder other than ``good`` counts as anomalous.
    """
    test_dir = Path(class_dir) / "test"
    if not test_dir.is_dir():
        raise DataError(f"missing test split: {test_dir}")
    subdirs = sorted(p for p in test_dir.iterdir() if p.is_dir())
    if not subdirs:
        raise DataError(f"no test subfolders under {test_dir}")
    for sub in subdirs:
        label = "normal" if sub.name == "good" else "anomalous"
        for path in list_images(sub):
            yield f"{sub.name}/{path.name}", label, load_image(path, input_size)
