"""Joint optimization of network parameters and the per-volume latent table."""
from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, asdict, field

import numpy as np

from . import mlp
from .coords import PointBatch, sample_points
from .mlp import Adam, MlpModel, RowAdam, Layer
from .volume import Role, Volume, VolumeError

CHECKPOINT_MAGIC = b"IFCK"


class TrainingError(ValueError):
    """Inconsistent training inputs or checkpoint contents."""


@dataclass
class TrainConfig:
    epochs: int = 2000
    points_per_volume: int = 16200
    volumes_per_batch: int = 6
    sigma: float = 0.01
    lr_net: float = 5e-4
    lr_latent: float = 1e-3
    lr_halvings: int = 4  # halve both rates every epochs // lr_halvings
    seed: int = 0
    latent_dim: int = 256
    levels: int = 10
    classes: int = 10
    hidden: int = 512
    depth: int = 8
    dropout: float = 0.2
    checkpoint_interval: int = 0  # 0: only the final checkpoint

    def __post_init__(self):
        for name in ("epochs", "points_per_volume", "volumes_per_batch", "latent_dim",
                     "levels", "classes", "hidden", "depth"):
            if getattr(self, name) < 1:
                raise TrainingError(f"{name} must be positive")
        if self.sigma <= 0:
            raise TrainingError("sigma must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise TrainingError("dropout must be in [0, 1)")

    @property
    def input_dim(self) -> int:
        return self.latent_dim + 6 * self.levels

    def layer_sizes(self) -> list[int]:
        return [self.input_dim] + [self.hidden] * (self.depth - 1) + [self.classes]


def init_latents(n: int, d: int, seed: int = 0) -> np.ndarray:
    """(n, d) latent table with i.i.d. N(0, 0.01^2) entries."""
    if n < 1 or d < 1:
        raise TrainingError(f"latent table needs positive shape, got ({n}, {d})")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 17]))
    return rng.normal(0.0, 0.01, size=(n, d))


def assemble_inputs(latents: np.ndarray, batches: list[PointBatch]) -> np.ndarray:
    """Stack [z_i, gamma(p)] rows for every point of every batch."""
    rows = []
    for batch in batches:
        z = latents[batch.volume_id]
        rows.append(np.concatenate(
            [np.broadcast_to(z, (len(batch), z.size)), batch.encoded], axis=1))
    return np.concatenate(rows, axis=0)


def train_objective(model: MlpModel, latents: np.ndarray, batches: list[PointBatch],
                    sigma: float, train: bool = False, rng=None):
    """Batch loss and gradients.

    loss = mean cross-entropy over all points
         + (1 / sigma^2) * mean over the batch's distinct volumes of ||z_i||^2.

    Returns (loss, model grads, {volume_id: latent gradient}).
    """
    if not batches:
        raise TrainingError("empty batch")
    vol_ids = sorted({b.volume_id for b in batches})
    x = assemble_inputs(latents, batches)
    targets = np.concatenate([b.targets for b in batches])
    mean_ce, grads, dx = mlp.backward(model, x, targets, train=train, rng=rng)

    d = latents.shape[1]
    inv_sigma2 = 1.0 / (sigma * sigma)
    reg = inv_sigma2 * np.mean([np.dot(latents[i], latents[i]) for i in vol_ids])
    loss = mean_ce + reg

    z_grads = {i: np.zeros(d) for i in vol_ids}
    offset = 0
    for batch in batches:
        n = len(batch)
        z_grads[batch.volume_id] += dx[offset:offset + n, :d].sum(axis=0)
        offset += n
    for i in vol_ids:
        z_grads[i] += inv_sigma2 * 2.0 * latents[i] / len(vol_ids)
    return loss, grads, z_grads


def train(volumes: list[Volume], config: TrainConfig, checkpoint_dir=None,
          log=None):
    """Train model and latent table on label volumes; returns (model, latents, history)."""
    if not volumes:
        raise TrainingError("no training volumes")
    for i, vol in enumerate(volumes):
        if vol.role != Role.LABEL:
            raise TrainingError(f"volume {i} has role {vol.role.name}, expected LABEL")
        if vol.data.size and int(vol.data.max()) >= config.classes:
            raise TrainingError(
                f"volume {i} has label {int(vol.data.max())} >= classes={config.classes}")

    n = len(volumes)
    model = mlp.init_model(config.layer_sizes(), seed=config.seed, dropout=config.dropout)
    latents = init_latents(n, config.latent_dim, seed=config.seed)
    net_opt = Adam(model.parameters())
    latent_opt = RowAdam(latents.shape)
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 23]))
    halving_period = max(1, config.epochs // max(1, config.lr_halvings))

    history = []
    for epoch in range(config.epochs):
        scale = 0.5 ** (epoch // halving_period)
        lr_net = config.lr_net * scale
        lr_latent = config.lr_latent * scale
        perm = rng.permutation(n)
        epoch_losses = []
        for b_start in range(0, n, config.volumes_per_batch):
            chunk = perm[b_start:b_start + config.volumes_per_batch]
            batches = [
                sample_points(volumes[i], config.points_per_volume, config.levels,
                              rng, volume_id=int(i))
                for i in chunk
            ]
            drop_rng = np.random.default_rng(
                np.random.SeedSequence([config.seed, 29, epoch, b_start]))
            loss, grads, z_grads = train_objective(
                model, latents, batches, config.sigma,
                train=config.dropout > 0.0, rng=drop_rng)
            net_opt.step(model.parameters(), mlp.flatten_grads(grads), lr_net)
            for i in sorted(z_grads):
                latent_opt.step(latents, i, z_grads[i], lr_latent)
            epoch_losses.append(loss)
        history.append(float(np.mean(epoch_losses)))
        if log is not None and (epoch % 50 == 0 or epoch == config.epochs - 1):
            log(f"epoch {epoch}: loss {history[-1]:.6f}")
        if (checkpoint_dir is not None and config.checkpoint_interval > 0
                and (epoch + 1) % config.checkpoint_interval == 0):
            save_checkpoint(os.path.join(checkpoint_dir, f"checkpoint_{epoch + 1:06d}.ifck"),
                            model, latents, config, epoch=epoch + 1)
    if checkpoint_dir is not None:
        save_checkpoint(os.path.join(checkpoint_dir, "checkpoint_final.ifck"),
                        model, latents, config, epoch=config.epochs)
    return model, latents, history


def save_checkpoint(path, model: MlpModel, latents: np.ndarray, config: TrainConfig,
                    epoch: int = 0) -> None:
    """IFCK file: magic, u32 header length, JSON text header, f64 LE blobs."""
    header = {
        "layer_sizes": [model.input_dim] + [l.v.shape[0] for l in model.layers],
        "dropout": model.dropout,
        "latent_dim": int(latents.shape[1]),
        "n_volumes": int(latents.shape[0]),
        "levels": config.levels,
        "classes": config.classes,
        "epoch": int(epoch),
        "seed": config.seed,
        "config": asdict(config),
    }
    header_bytes = json.dumps(header, sort_keys=True).encode()
    blob = bytearray()
    for layer in model.layers:
        for arr in (layer.v, layer.g, layer.b):
            blob += arr.astype("<f8").tobytes()
    blob += latents.astype("<f8").tobytes()
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC + struct.pack("<I", len(header_bytes)))
        fh.write(header_bytes)
        fh.write(bytes(blob))
    os.replace(tmp, path)


def load_checkpoint(path):
    """Returns (model, latents, header dict)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise TrainingError(f"{path}: bad checkpoint magic {raw[:4]!r}")
    (hlen,) = struct.unpack("<I", raw[4:8])
    header = json.loads(raw[8:8 + hlen].decode())
    offset = 8 + hlen

    def take(shape):
        nonlocal offset
        count = int(np.prod(shape))
        arr = np.frombuffer(raw, dtype="<f8", count=count, offset=offset)
        offset += count * 8
        return arr.reshape(shape).astype(np.float64)

    sizes = header["layer_sizes"]
    layers = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        v = take((fan_out, fan_in))
        g = take((fan_out,))
        b = take((fan_out,))
        layers.append(Layer(v=v, g=g, b=b))
    latents = take((header["n_volumes"], header["latent_dim"]))
    if offset != len(raw):
        raise TrainingError(f"{path}: {len(raw) - offset} trailing bytes")
    model = MlpModel(layers=layers, dropout=header.get("dropout", 0.0))
    return model, latents, header
