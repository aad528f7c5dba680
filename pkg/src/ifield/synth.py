"""Deterministic synthetic volume families: healthy anatomies and anomalous twins."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .volume import Role, Volume


class SynthError(ValueError):
    """Invalid generator settings."""


@dataclass
class SynthSpec:
    dims: tuple[int, int, int] = (32, 32, 32)
    n_healthy: int = 8
    n_anomalous: int = 4
    center_jitter: float = 1.5
    axis_base: float = 0.80       # outer semi-axis as fraction of half-extent
    axis_amplitude: float = 0.08
    palette: tuple[float, ...] = (0.25, 0.45, 0.65, 0.85)
    band_edges: tuple[float, ...] = (0.18, 0.38, 0.62)  # inner->outer, in rho units
    transition_width: float = 0.03
    noise_amplitude: float = 0.04
    blob_count: tuple[int, int] = (1, 3)
    blob_radius: tuple[float, float] = (3.0, 5.5)
    seed: int = 0

    def __post_init__(self):
        self.dims = tuple(int(d) for d in self.dims)
        if self.n_healthy < 1:
            raise SynthError("n_healthy must be >= 1")
        if self.blob_radius[0] < 2.0:
            raise SynthError("anomaly radius must be >= 2 voxels")
        gaps = np.diff(np.sort(np.concatenate([[0.0], self.palette])))
        if self.noise_amplitude >= gaps.min() / 2.0:
            raise SynthError("noise amplitude must stay below half the minimum palette gap")
        if any(not 0.0 <= p <= 1.0 for p in self.palette):
            raise SynthError("palette must lie in [0, 1]")


def _family_params(spec: SynthSpec):
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 41]))
    return {
        "axis_freq": rng.uniform(0.5, 1.5, size=3),
        "axis_phase": rng.uniform(0.0, 1.0, size=3),
        "center_freq": rng.uniform(0.5, 1.5, size=3),
        "center_phase": rng.uniform(0.0, 1.0, size=3),
    }


def _family_t(spec: SynthSpec, family_index: int) -> float:
    total = spec.n_healthy + spec.n_anomalous
    return family_index / max(1, total - 1)


def _rho(spec: SynthSpec, family_index: int) -> np.ndarray:
    """Normalized ellipsoidal radius (1.0 at the anatomy boundary)."""
    params = _family_params(spec)
    t = _family_t(spec, family_index)
    centers, semi_axes = [], []
    for a in range(3):
        half = (spec.dims[a] - 1) / 2.0
        centers.append(half + spec.center_jitter
                       * np.sin(2 * np.pi * (params["center_freq"][a] * t
                                             + params["center_phase"][a])))
        semi_axes.append((spec.axis_base + spec.axis_amplitude
                          * np.sin(2 * np.pi * (params["axis_freq"][a] * t
                                                + params["axis_phase"][a]))) * half)
    grids = np.meshgrid(*(np.arange(d, dtype=np.float64) for d in spec.dims), indexing="ij")
    return np.sqrt(sum(((g - c) / s) ** 2 for g, c, s in zip(grids, centers, semi_axes)))


def _level_profile(spec: SynthSpec):
    """Control points for np.interp: shell intensity as a function of rho."""
    w = spec.transition_width
    levels = list(spec.palette)[::-1]  # innermost band is the brightest
    xs, ys = [0.0], [levels[0]]
    boundaries = list(spec.band_edges) + [1.0]
    outer_levels = levels[1:] + [0.0]
    for b, inner_lv, outer_lv in zip(boundaries, levels, outer_levels):
        xs.extend([b - w, b + w])
        ys.extend([inner_lv, outer_lv])
    return np.array(xs), np.array(ys)


def _smooth_noise(spec: SynthSpec, family_index: int) -> np.ndarray:
    """Low-frequency noise from a trilinearly upsampled coarse grid, in +-amplitude."""
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 43, family_index]))
    coarse = rng.uniform(-spec.noise_amplitude, spec.noise_amplitude, size=(5, 5, 5))
    out = coarse
    axes_pos = [np.linspace(0, 4, d) for d in spec.dims]
    for axis, pos in enumerate(axes_pos):
        lo = np.minimum(np.floor(pos).astype(int), 3)
        frac = pos - lo
        shape = [1, 1, 1]
        shape[axis] = -1
        w = frac.reshape(shape)
        out = (1 - w) * np.take(out, lo, axis=axis) + w * np.take(out, lo + 1, axis=axis)
    return out


def _healthy_grid(spec: SynthSpec, family_index: int):
    rho = _rho(spec, family_index)
    xs, ys = _level_profile(spec)
    grid = np.interp(rho, xs, ys)
    inside = rho <= 1.0
    grid = grid + _smooth_noise(spec, family_index) * inside
    return np.clip(grid, 0.0, 1.0), rho


def generate_healthy(spec: SynthSpec, index: int) -> Volume:
    """Concentric smoothed ellipsoidal shells; pure function of (spec.seed, index)."""
    if not 0 <= index < spec.n_healthy:
        raise SynthError(f"healthy index {index} out of range [0, {spec.n_healthy})")
    grid, _ = _healthy_grid(spec, index)
    return Volume.from_grid(grid.astype(np.float32), Role.INTENSITY)


def _band_level(spec: SynthSpec, rho_val: float) -> float:
    levels = list(spec.palette)[::-1]
    for edge, lv in zip(spec.band_edges, levels):
        if rho_val < edge:
            return lv
    return levels[-1] if rho_val <= 1.0 else 0.0


def anomalous_base(spec: SynthSpec, index: int) -> Volume:
    """The unaltered healthy anatomy an anomalous volume is built on."""
    if not 0 <= index < spec.n_anomalous:
        raise SynthError(f"anomalous index {index} out of range [0, {spec.n_anomalous})")
    grid, _ = _healthy_grid(spec, spec.n_healthy + index)
    return Volume.from_grid(grid.astype(np.float32), Role.INTENSITY)


def generate_anomalous(spec: SynthSpec, index: int):
    """Healthy anatomy with 1-3 out-of-context blobs; returns (volume, mask)."""
    if not 0 <= index < spec.n_anomalous:
        raise SynthError(f"anomalous index {index} out of range [0, {spec.n_anomalous})")
    family_index = spec.n_healthy + index
    grid, rho = _healthy_grid(spec, family_index)
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 47, index]))
    mask = np.zeros(spec.dims, dtype=bool)
    n_blobs = int(rng.integers(spec.blob_count[0], spec.blob_count[1] + 1))
    coords = np.meshgrid(*(np.arange(d, dtype=np.float64) for d in spec.dims), indexing="ij")
    candidates = np.argwhere(rho <= 0.5)
    for _ in range(n_blobs):
        blob = None
        for _ in range(200):
            radius = rng.uniform(*spec.blob_radius)
            center = candidates[rng.integers(len(candidates))]
            trial = sum((c - ctr) ** 2 for c, ctr in zip(coords, center)) <= radius ** 2
            # blob must sit strictly inside the anatomy and the image bounds,
            # and must not overlap a previously placed blob
            if np.all(rho[trial] <= 0.95) and _inside_bounds(trial) and not mask[trial].any():
                blob = trial
                break
        if blob is None:
            continue
        level = _pick_blob_level(spec, grid[blob])
        grid[blob] = level
        mask |= blob
    if not mask.any():
        raise SynthError("failed to place any anomaly blob; widen the radius range")
    volume = Volume.from_grid(np.clip(grid, 0.0, 1.0).astype(np.float32), Role.INTENSITY)
    return volume, Volume.from_grid(mask.astype(np.uint8), Role.MASK)


def _inside_bounds(blob: np.ndarray) -> bool:
    idx = np.argwhere(blob)
    return bool(np.all(idx > 0) and np.all(idx < np.array(blob.shape) - 1))


def _pick_blob_level(spec: SynthSpec, covered: np.ndarray) -> float:
    """Intensity level farthest from everything the blob overwrites.

    Background (0.0) counts as a candidate so a blob spanning the full palette
    still has an out-of-context value available.
    """
    lo, hi = covered.min(), covered.max()
    best_level, best_dist = None, -1.0
    for level in (0.0,) + tuple(spec.palette):
        d = min(abs(level - lo), abs(level - hi))
        if lo <= level <= hi:
            d = -1.0
        if d > best_dist:
            best_level, best_dist = level, d
    if best_dist <= 0.0:
        raise SynthError("no palette level is out of context for this blob")
    return best_level
