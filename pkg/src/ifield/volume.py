"""Dense 3D volume container, VOL1 file format, and intensity preprocessing."""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

MAGIC = b"VOL1"


class Role(IntEnum):
    INTENSITY = 0
    LABEL = 1
    SCORE = 2
    MASK = 3


_FLOAT_ROLES = (Role.INTENSITY, Role.SCORE)
_INT_ROLES = (Role.LABEL, Role.MASK)


class VolumeError(ValueError):
    """Invalid volume contents or dimensions."""


class VolumeFormatError(VolumeError):
    """Malformed VOL1 file."""


@dataclass
class Volume:
    """Flat scalar grid with x-fastest layout: index(x,y,z) = x + X*(y + Y*z)."""

    dims: tuple[int, int, int]
    role: Role
    data: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.dims = tuple(int(d) for d in self.dims)
        if len(self.dims) != 3 or any(d < 1 for d in self.dims):
            raise VolumeError(f"dims must be three positive integers, got {self.dims}")
        self.role = Role(self.role)
        data = np.asarray(self.data)
        if self.role in _FLOAT_ROLES:
            if data.dtype not in (np.float32, np.float64):
                data = data.astype(np.float64)
        else:
            if not np.issubdtype(data.dtype, np.integer):
                if not np.all(data == np.round(data)):
                    raise VolumeError(f"{self.role.name} volume requires integer data")
            if np.any(data < 0) or np.any(data > 255):
                raise VolumeError(f"{self.role.name} values out of uint8 range")
            data = data.astype(np.uint8)
        data = data.reshape(-1)
        n = self.dims[0] * self.dims[1] * self.dims[2]
        if data.size != n:
            raise VolumeError(f"data length {data.size} != {n} for dims {self.dims}")
        if self.role == Role.MASK and np.any(data > 1):
            raise VolumeError("mask values must be 0 or 1")
        self.data = data

    @property
    def size(self) -> int:
        return self.data.size

    def index(self, x: int, y: int, z: int) -> int:
        X, Y, _ = self.dims
        return x + X * (y + Y * z)

    def grid(self) -> np.ndarray:
        """View the flat data as a (X, Y, Z) array."""
        return self.data.reshape(self.dims, order="F")

    @classmethod
    def from_grid(cls, grid: np.ndarray, role: Role) -> "Volume":
        grid = np.asarray(grid)
        if grid.ndim != 3:
            raise VolumeError(f"expected 3-D grid, got ndim={grid.ndim}")
        return cls(dims=grid.shape, role=role, data=grid.ravel(order="F"))

    def copy(self) -> "Volume":
        return Volume(self.dims, self.role, self.data.copy())


@dataclass
class PreprocessSpec:
    clip_percentile: float = 98.0
    target_dims: tuple[int, int, int] | None = None

    def __post_init__(self):
        if not 0.0 < self.clip_percentile <= 100.0:
            raise VolumeError(f"clip_percentile must be in (0, 100], got {self.clip_percentile}")


def write_volume(volume: Volume, path) -> None:
    if volume.role in _FLOAT_ROLES:
        payload = volume.data.astype("<f4").tobytes()
    else:
        payload = volume.data.astype(np.uint8).tobytes()
    header = MAGIC + struct.pack("<B3I", int(volume.role), *volume.dims)
    with open(path, "wb") as fh:
        fh.write(header + payload)


def read_volume(path) -> Volume:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 17:
        raise VolumeFormatError(f"{path}: truncated header")
    if raw[:4] != MAGIC:
        raise VolumeFormatError(f"{path}: bad magic {raw[:4]!r}")
    role_tag, x, y, z = struct.unpack("<B3I", raw[4:17])
    try:
        role = Role(role_tag)
    except ValueError:
        raise VolumeFormatError(f"{path}: unknown role tag {role_tag}") from None
    n = x * y * z
    itemsize = 4 if role in _FLOAT_ROLES else 1
    payload = raw[17:]
    if len(payload) != n * itemsize:
        raise VolumeFormatError(
            f"{path}: payload is {len(payload)} bytes, expected {n * itemsize} for dims {(x, y, z)}"
        )
    dtype = "<f4" if role in _FLOAT_ROLES else np.uint8
    data = np.frombuffer(payload, dtype=dtype).copy()
    return Volume(dims=(x, y, z), role=role, data=data)


def nearest_rank_percentile(values: np.ndarray, p: float) -> float:
    """Order statistic at rank ceil(p/100 * n), clamped to the sample maximum."""
    values = np.sort(np.asarray(values, dtype=np.float64).ravel())
    n = values.size
    if n == 0:
        raise VolumeError("percentile of empty data")
    rank = min(math.ceil(p / 100.0 * n), n - 1)
    return float(values[rank])


def clip_normalize(volume: Volume, spec: PreprocessSpec | None = None) -> Volume:
    """Clip at the volume's own p-th percentile, then scale that percentile to 1."""
    if volume.role != Role.INTENSITY:
        raise VolumeError(f"clip_normalize expects an intensity volume, got {volume.role.name}")
    spec = spec or PreprocessSpec()
    scale = nearest_rank_percentile(volume.data, spec.clip_percentile)
    if scale <= 0.0:
        out = np.zeros(volume.size, dtype=np.float64)
    else:
        out = np.minimum(volume.data.astype(np.float64), scale) / scale
    return Volume(volume.dims, Role.INTENSITY, out)


def downsample(volume: Volume, target_dims: tuple[int, int, int]) -> Volume:
    """Block-average resampling; trilinear interpolation for non-integer ratios."""
    if volume.role not in _FLOAT_ROLES:
        raise VolumeError(f"downsample expects a float-valued volume, got {volume.role.name}")
    target_dims = tuple(int(d) for d in target_dims)
    if any(t < 1 for t in target_dims):
        raise VolumeError(f"target dims must be positive, got {target_dims}")
    if any(t > s for t, s in zip(target_dims, volume.dims)):
        raise VolumeError(f"target dims {target_dims} exceed source dims {volume.dims}")
    if target_dims == volume.dims:
        return volume.copy()
    grid = volume.grid().astype(np.float64)
    if all(s % t == 0 for s, t in zip(volume.dims, target_dims)):
        fx, fy, fz = (s // t for s, t in zip(volume.dims, target_dims))
        tx, ty, tz = target_dims
        blocks = grid.reshape(tx, fx, ty, fy, tz, fz)
        out = blocks.mean(axis=(1, 3, 5))
    else:
        out = _trilinear_resample(grid, target_dims)
    return Volume.from_grid(out, volume.role)


def _axis_positions(src: int, tgt: int) -> np.ndarray:
    if tgt == 1:
        return np.array([(src - 1) / 2.0])
    return np.arange(tgt) * (src - 1) / (tgt - 1)


def _trilinear_resample(grid: np.ndarray, target_dims) -> np.ndarray:
    coords = [_axis_positions(s, t) for s, t in zip(grid.shape, target_dims)]
    lows = [np.floor(c).astype(int) for c in coords]
    lows = [np.minimum(lo, s - 2) if s > 1 else np.zeros_like(lo) for lo, s in zip(lows, grid.shape)]
    fracs = [c - lo for c, lo in zip(coords, lows)]
    out = np.zeros(target_dims)
    for dx in (0, 1):
        wx = (fracs[0] if dx else 1.0 - fracs[0])[:, None, None]
        ix = np.minimum(lows[0] + dx, grid.shape[0] - 1)
        for dy in (0, 1):
            wy = (fracs[1] if dy else 1.0 - fracs[1])[None, :, None]
            iy = np.minimum(lows[1] + dy, grid.shape[1] - 1)
            for dz in (0, 1):
                wz = (fracs[2] if dz else 1.0 - fracs[2])[None, None, :]
                iz = np.minimum(lows[2] + dz, grid.shape[2] - 1)
                out += wx * wy * wz * grid[np.ix_(ix, iy, iz)]
    return out
