"""Memory bank of normal feature vectors and nearest-neighbor scoring.

All feature vectors extracted from normal training images form the reference
set. A test vector's anomaly score is its exact Euclidean distance to the
nearest reference vector; an image's score is the maximum over its grid.
Distances are computed as explicit differences (no dot-product expansion) so
results match a brute-force scan bit for bit.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, InputError
from .encoder import FeatureMap

_MAGIC = b"PAEBANK1"
_VERSION = 1
_HEADER = struct.Struct("<8sIQIIIQ32s")  # magic, version, N, c3, gh, gw, n_source, digest


@dataclass
class MemoryBank:
    """Immutable N x c3 float32 reference matrix plus provenance metadata."""

    vectors: np.ndarray
    config_digest: bytes
    grid: tuple[int, int]
    n_source_images: int

    def __post_init__(self):
        if self.vectors.ndim != 2 or self.vectors.shape[0] < 1:
            raise InputError(f"bank must be a nonempty 2-D matrix, got {self.vectors.shape}")
        if not np.isfinite(self.vectors).all():
            raise InputError("bank contains non-finite entries")
        if len(self.config_digest) != 32:
            raise InputError("config digest must be 32 bytes")
        self.vectors = np.ascontiguousarray(self.vectors, dtype=np.float32)

    @property
    def size(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]


@dataclass
class ScoreMap:
    """Per-cell anomaly scores; image_score is the (possibly reweighted) max."""

    scores: np.ndarray  # (Gh, Gw) float32
    image_score: float

    def __post_init__(self):
        if self.scores.ndim != 2:
            raise InputError(f"score map must be 2-D, got shape {self.scores.shape}")
        if not np.isfinite(self.scores).all() or (self.scores < 0).any():
            raise InputError("scores must be finite and non-negative")
        if not np.isfinite(self.image_score) or self.image_score < 0:
            raise InputError("image score must be finite and non-negative")


def _check_dim(dim: int, bank: MemoryBank):
    if dim != bank.dim:
        raise InputError(f"query dim {dim} does not match bank dim {bank.dim}")


def nn_distances(queries: np.ndarray, bank: MemoryBank) -> tuple[np.ndarray, np.ndarray]:
    """Exact nearest-neighbor distance and argmin for each query row."""
    if queries.ndim != 2:
        raise InputError(f"queries must be 2-D, got shape {queries.shape}")
    _check_dim(queries.shape[1], bank)
    q = np.ascontiguousarray(queries, dtype=np.float32)
    rows = bank.vectors
    n, d = rows.shape
    # chunk queries so the (chunk, N, d) difference tensor stays ~64 MB
    chunk = max(1, int(16_000_000 // max(n * d, 1)))
    dists = np.empty(q.shape[0], dtype=np.float32)
    idx = np.empty(q.shape[0], dtype=np.int64)
    for start in range(0, q.shape[0], chunk):
        block = q[start : start + chunk]
        sq = ((block[:, None, :] - rows[None, :, :]) ** 2).sum(axis=-1)
        arg = sq.argmin(axis=1)
        take = sq[np.arange(block.shape[0]), arg]
        dists[start : start + chunk] = np.sqrt(take)
        idx[start : start + chunk] = arg
    return dists, idx


def nn_distance(query: np.ndarray, bank: MemoryBank) -> float:
    """Distance from one vector to its nearest bank row."""
    query = np.asarray(query)
    if query.ndim != 1:
        raise InputError(f"query must be 1-D, got shape {query.shape}")
    dists, _ = nn_distances(query[None, :], bank)
    return float(dists[0])


def _reweight_factor(query: np.ndarray, bank: MemoryBank, neighborhood: int) -> float:
    """Softmax rescale over the query's nearest bank neighborhood.

    A singleton neighborhood is a degenerate softmax and leaves the score
    unchanged. Computed as 1 - 1/sum(exp(d_j - d_min)) for stability.
    """
    k = min(neighborhood, bank.size)
    if k <= 1:
        return 1.0
    sq = ((query[None, :].astype(np.float32) - bank.vectors) ** 2).sum(axis=-1)
    nearest = np.sqrt(np.partition(sq, k - 1)[:k].astype(np.float64))
    denom = np.exp(nearest - nearest.min()).sum()
    return float(1.0 - 1.0 / denom)


def score_image(
    features: FeatureMap,
    bank: MemoryBank,
    reweight: bool = False,
    neighborhood: int = 3,
) -> ScoreMap:
    """Score every grid cell of a feature map against the bank.

    With reweight on, the maximal patch distance is rescaled by the softmax
    factor of its bank neighborhood before it becomes the image score; the
    per-cell grid always keeps the raw distances.
    """
    if neighborhood < 1:
        raise InputError(f"neighborhood must be >= 1, got {neighborhood}")
    gh, gw = features.grid
    queries = features.data.reshape(gh * gw, features.channels)
    dists, _ = nn_distances(queries, bank)
    scores = dists.reshape(gh, gw)
    flat_max = int(dists.argmax())
    image_score = float(dists[flat_max])
    if reweight and image_score > 0.0:
        image_score *= _reweight_factor(queries[flat_max], bank, neighborhood)
    return ScoreMap(scores=scores, image_score=image_score)


def coreset_subsample(
    bank: MemoryBank,
    fraction: float,
    seed: int = 0,
    start_index: int | None = None,
) -> MemoryBank:
    """Greedy farthest-point subset of the bank rows.

    The first row is chosen by the seeded RNG (or start_index); each further
    pick maximizes the distance to the rows already kept. fraction == 1.0
    returns the bank unchanged.
    """
    if not 0.0 < fraction <= 1.0:
        raise ConfigError(f"coreset fraction must be in (0, 1], got {fraction}")
    n = bank.size
    target = max(1, int(round(fraction * n)))
    if target >= n:
        return MemoryBank(
            vectors=bank.vectors.copy(),
            config_digest=bank.config_digest,
            grid=bank.grid,
            n_source_images=bank.n_source_images,
        )
    rows = bank.vectors.astype(np.float64)
    if start_index is None:
        start_index = int(np.random.default_rng(seed).integers(n))
    if not 0 <= start_index < n:
        raise InputError(f"start_index {start_index} out of range for bank of {n}")
    selected = [start_index]
    min_dist = np.sqrt(((rows - rows[start_index]) ** 2).sum(axis=1))
    min_dist[start_index] = -np.inf  # never re-pick a selected row
    for _ in range(target - 1):
        pick = int(min_dist.argmax())
        selected.append(pick)
        dist_to_pick = np.sqrt(((rows - rows[pick]) ** 2).sum(axis=1))
        min_dist = np.minimum(min_dist, dist_to_pick)
        min_dist[pick] = -np.inf
    return MemoryBank(
        vectors=bank.vectors[np.array(selected)].copy(),
        config_digest=bank.config_digest,
        grid=bank.grid,
        n_source_images=bank.n_source_images,
    )


def save_bank(path: str | Path, bank: MemoryBank) -> None:
    """Write the bank in the fixed binary layout.

    Header (72 bytes, little-endian): magic ``PAEBANK1`` (8s), version (u32),
    N (u64), c3 (u32), grid height (u32), grid width (u32), source image
    count (u64), encoder config sha256 digest (32s). Payload: N*c3 float32
    values, row-major, little-endian. Identical banks produce identical bytes.
    """
    header = _HEADER.pack(
        _MAGIC,
        _VERSION,
        bank.size,
        bank.dim,
        bank.grid[0],
        bank.grid[1],
        bank.n_source_images,
        bank.config_digest,
    )
    payload = np.ascontiguousarray(bank.vectors, dtype="<f4").tobytes()
    Path(path).write_bytes(header + payload)


def load_bank(path: str | Path) -> MemoryBank:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"bank file not found: {path}")
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise DataError(f"bank file too short: {path}")
    magic, version, n, dim, gh, gw, n_source, digest = _HEADER.unpack_from(raw)
    if magic != _MAGIC:
        raise DataError(f"bad magic number in bank file {path}: {magic!r}")
    if version != _VERSION:
        raise DataError(f"unsupported bank version {version} in {path}")
    expected = _HEADER.size + n * dim * 4
    if len(raw) != expected:
        raise DataError(f"bank file {path} has {len(raw)} bytes, expected {expected}")
    vectors = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size).reshape(n, dim).copy()
    return MemoryBank(
        vectors=vectors,
        config_digest=digest,
        grid=(gh, gw),
        n_source_images=n_source,
    )


def upsample_scores(scores: np.ndarray, size: int) -> np.ndarray:
    """Bilinearly upsample a score grid to size x size pixels (visualization only)."""
    import torch
    import torch.nn.functional as F

    t = torch.from_numpy(np.ascontiguousarray(scores, dtype=np.float32))
    up = F.interpolate(
        t[None, None], size=(size, size), mode="bilinear", align_corners=False
    )
    return up[0, 0].numpy()
