"""Coordinate normalization, Fourier positional encoding, and point sampling."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .volume import Role, Volume, VolumeError


def normalize_coord(i, size: int):
    """Map voxel index i on an axis of `size` voxels to [-1, 1]."""
    if size < 2:
        raise VolumeError(f"axis size must be >= 2, got {size}")
    return 2.0 * np.asarray(i, dtype=np.float64) / (size - 1) - 1.0


def _axis_coords(size: int) -> np.ndarray:
    # single-voxel axes sit at the midpoint
    if size == 1:
        return np.zeros(1)
    return normalize_coord(np.arange(size), size)


def positional_encode(x, levels: int) -> np.ndarray:
    """gamma(x): interleaved (sin(2^l pi x), cos(2^l pi x)) for l = 0..levels-1."""
    if levels < 1:
        raise ValueError(f"levels must be >= 1, got {levels}")
    x = np.asarray(x, dtype=np.float64)
    freqs = (2.0 ** np.arange(levels)) * np.pi
    angles = x[..., None] * freqs
    out = np.empty(x.shape + (2 * levels,))
    out[..., 0::2] = np.sin(angles)
    out[..., 1::2] = np.cos(angles)
    return out


def encode_indices(indices: np.ndarray, dims, levels: int) -> np.ndarray:
    """Encode (n, 3) voxel indices into (n, 6*levels) Fourier features."""
    indices = np.asarray(indices)
    parts = []
    for axis in range(3):
        coords = _axis_coords(dims[axis])[indices[:, axis]]
        parts.append(positional_encode(coords, levels))
    return np.concatenate(parts, axis=-1)


@dataclass
class PointBatch:
    indices: np.ndarray  # (n, 3) voxel index triples
    encoded: np.ndarray  # (n, 6*levels)
    targets: np.ndarray  # (n,) class indices
    volume_id: int = 0

    def __len__(self) -> int:
        return self.targets.size


def sample_points(volume: Volume, count: int, levels: int, rng: np.random.Generator,
                  volume_id: int = 0) -> PointBatch:
    """Draw `count` voxels uniformly with replacement, with coords and targets."""
    if volume.role != Role.LABEL:
        raise VolumeError(f"sample_points expects a label volume, got {volume.role.name}")
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    flat = rng.integers(0, volume.size, size=count)
    X, Y, _ = volume.dims
    x = flat % X
    y = (flat // X) % Y
    z = flat // (X * Y)
    indices = np.stack([x, y, z], axis=1)
    encoded = encode_indices(indices, volume.dims, levels)
    targets = volume.data[flat].astype(np.int64)
    return PointBatch(indices=indices, encoded=encoded, targets=targets, volume_id=volume_id)


def all_points(volume: Volume, levels: int, volume_id: int = 0) -> PointBatch:
    """Enumerate every voxel exactly once in flat layout order."""
    if volume.role != Role.LABEL:
        raise VolumeError(f"all_points expects a label volume, got {volume.role.name}")
    flat = np.arange(volume.size)
    X, Y, _ = volume.dims
    indices = np.stack([flat % X, (flat // X) % Y, flat // (X * Y)], axis=1)
    encoded = encode_indices(indices, volume.dims, levels)
    targets = volume.data.astype(np.int64)
    return PointBatch(indices=indices, encoded=encoded, targets=targets, volume_id=volume_id)
