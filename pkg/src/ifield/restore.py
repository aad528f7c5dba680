"""Latent retrieval for test volumes, restoration, anomaly scoring, post-processing."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import mlp
from .coords import PointBatch, all_points, sample_points
from .mlp import Adam, MlpModel
from .volume import Role, Volume, VolumeError


class RestoreError(ValueError):
    """Model/volume mismatch or invalid inference settings."""


@dataclass
class InferConfig:
    steps: int = 700
    points: int = 16200
    lr: float = 1e-2
    sigma: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if self.steps < 1 or self.points < 1 or self.lr <= 0 or self.sigma <= 0:
            raise RestoreError("inference settings must be positive")


@dataclass
class RetrievalResult:
    z: np.ndarray
    z_init: np.ndarray
    trace: list[float] = field(default_factory=list)

    @property
    def final_objective(self) -> float:
        return self.trace[-1]


def _check_compat(model: MlpModel, volume: Volume, latent_dim: int, levels: int) -> None:
    if volume.role != Role.LABEL:
        raise RestoreError(f"expected a label volume, got {volume.role.name}")
    if latent_dim + 6 * levels != model.input_dim:
        raise RestoreError(
            f"latent_dim {latent_dim} + 6*levels {6 * levels} != model input {model.input_dim}")
    if volume.data.size and int(volume.data.max()) >= model.output_dim:
        raise RestoreError(
            f"volume label {int(volume.data.max())} >= model classes {model.output_dim}")


def objective_on_points(model: MlpModel, z: np.ndarray, batch: PointBatch,
                        sigma: float) -> float:
    """Mean cross-entropy on a fixed point set plus the latent norm penalty."""
    x = np.concatenate(
        [np.broadcast_to(z, (len(batch), z.size)), batch.encoded], axis=1)
    logits = mlp.forward(model, x)
    ce = float(np.mean(mlp.cross_entropy(logits, batch.targets)))
    return ce + float(np.dot(z, z)) / (sigma * sigma)


def retrieve_latent(model: MlpModel, volume: Volume, config: InferConfig,
                    latent_dim: int, levels: int) -> RetrievalResult:
    """Optimize a latent code for a test volume with network parameters frozen.

    Each step resamples `points` voxels; the recorded trace is the stochastic
    per-step objective.
    """
    _check_compat(model, volume, latent_dim, levels)
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 31]))
    z = rng.normal(0.0, 0.01, size=latent_dim)
    z_init = z.copy()
    opt = Adam([z])
    inv_sigma2 = 1.0 / (config.sigma * config.sigma)
    trace = []
    for _ in range(config.steps):
        batch = sample_points(volume, config.points, levels, rng)
        x = np.concatenate(
            [np.broadcast_to(z, (len(batch), latent_dim)), batch.encoded], axis=1)
        mean_ce, _, dx = mlp.backward(model, x, batch.targets)
        trace.append(mean_ce + inv_sigma2 * float(np.dot(z, z)))
        gz = dx[:, :latent_dim].sum(axis=0) + inv_sigma2 * 2.0 * z
        opt.step([z], [gz], config.lr)
    return RetrievalResult(z=z, z_init=z_init, trace=trace)


def _dense_logits(model: MlpModel, z: np.ndarray, volume: Volume, levels: int,
                  chunk: int = 16384):
    batch = all_points(volume, levels)
    out = np.empty((len(batch), model.output_dim))
    for start in range(0, len(batch), chunk):
        enc = batch.encoded[start:start + chunk]
        x = np.concatenate([np.broadcast_to(z, (enc.shape[0], z.size)), enc], axis=1)
        out[start:start + chunk] = mlp.forward(model, x)
    return out, batch.targets


def anomaly_score(model: MlpModel, z: np.ndarray, volume: Volume, levels: int) -> Volume:
    """Per-voxel -log P(observed class) under the retrieved latent."""
    _check_compat(model, volume, z.size, levels)
    logits, targets = _dense_logits(model, z, volume, levels)
    scores = -mlp.log_softmax(logits)[np.arange(targets.size), targets]
    return Volume(volume.dims, Role.SCORE, scores)


def restore_volume(model: MlpModel, z: np.ndarray, dims, levels: int) -> Volume:
    """Argmax-class volume for the given latent; ties go to the lowest class."""
    shell = Volume(dims, Role.LABEL, np.zeros(int(np.prod(dims)), dtype=np.uint8))
    logits, _ = _dense_logits(model, z, shell, levels)
    return Volume(dims, Role.LABEL, np.argmax(logits, axis=1))


def min_filter(grid: np.ndarray, size: int) -> np.ndarray:
    """Stride-1 cubic minimum filter with replicate-edge padding (separable)."""
    _check_filter_size(size)
    r = size // 2
    out = grid.astype(np.float64)
    for axis in range(3):
        padded = _pad_axis(out, axis, r)
        windows = np.lib.stride_tricks.sliding_window_view(padded, size, axis=axis)
        out = windows.min(axis=-1)
    return out


def mean_filter(grid: np.ndarray, size: int) -> np.ndarray:
    """Stride-1 cubic mean filter with replicate-edge padding.

    Accumulates shifted copies in lexicographic offset order so results are
    bit-identical to a naive per-voxel loop over the padded array.
    """
    _check_filter_size(size)
    r = size // 2
    padded = np.pad(grid.astype(np.float64), r, mode="edge")
    total = np.zeros_like(grid, dtype=np.float64)
    sx, sy, sz = grid.shape
    for dx in range(size):
        for dy in range(size):
            for dz in range(size):
                total += padded[dx:dx + sx, dy:dy + sy, dz:dz + sz]
    return total / float(size ** 3)


def _check_filter_size(size: int) -> None:
    if size < 1 or size % 2 == 0:
        raise RestoreError(f"filter size must be odd and >= 1, got {size}")


def _pad_axis(arr: np.ndarray, axis: int, r: int) -> np.ndarray:
    pad = [(0, 0)] * arr.ndim
    pad[axis] = (r, r)
    return np.pad(arr, pad, mode="edge")


def postprocess_scores(scores: Volume, min_size: int = 3, avg_size: int = 15) -> Volume:
    """Min-pool then average-pool the anomaly map, preserving dims."""
    if scores.role != Role.SCORE:
        raise RestoreError(f"expected a score volume, got {scores.role.name}")
    out = mean_filter(min_filter(scores.grid(), min_size), avg_size)
    return Volume.from_grid(out, Role.SCORE)
