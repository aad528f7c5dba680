"""k-means intensity codebook, label encoding/decoding, and mode-pooling."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .volume import Role, Volume, VolumeError

DEFAULT_SAMPLE_LIMIT = 2_000_000


class CodebookError(ValueError):
    """Invalid codebook or encoding input."""


@dataclass
class IntensityCodebook:
    """Ordered k-means centroids mapping intensities to class indices."""

    centroids: np.ndarray
    n_samples: int = 0
    seed: int = 0

    def __post_init__(self):
        c = np.asarray(self.centroids, dtype=np.float64).ravel()
        if c.size < 2:
            raise CodebookError("codebook needs at least 2 centroids")
        if np.any(np.diff(c) <= 0):
            raise CodebookError("centroids must be strictly ascending")
        self.centroids = c

    @property
    def k(self) -> int:
        return self.centroids.size

    def save(self, path) -> None:
        lines = [
            f"k = {self.k}",
            "centroids = " + ",".join(repr(float(c)) for c in self.centroids),
            f"n_samples = {self.n_samples}",
            f"seed = {self.seed}",
        ]
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path) -> "IntensityCodebook":
        fields = {}
        with open(path) as fh:
            for line in fh:
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                key, _, value = line.partition("=")
                fields[key.strip()] = value.strip()
        try:
            centroids = np.array([float(v) for v in fields["centroids"].split(",")])
            k = int(fields["k"])
        except (KeyError, ValueError) as exc:
            raise CodebookError(f"{path}: malformed codebook file ({exc})") from None
        if centroids.size != k:
            raise CodebookError(f"{path}: k={k} but {centroids.size} centroids listed")
        return cls(
            centroids=centroids,
            n_samples=int(fields.get("n_samples", 0)),
            seed=int(fields.get("seed", 0)),
        )


def lloyd(values: np.ndarray, init_centroids: np.ndarray, max_iters: int = 100):
    """Run Lloyd's algorithm; returns (centroids, SSE history, assignments).

    Ties in assignment go to the lower centroid index; empty clusters keep
    their previous centroid.
    """
    values = np.asarray(values, dtype=np.float64).ravel()
    centroids = np.asarray(init_centroids, dtype=np.float64).copy()
    k = centroids.size
    assign = np.full(values.size, -1)
    sse_history = []
    for _ in range(max_iters):
        dist = np.abs(values[:, None] - centroids[None, :])
        new_assign = np.argmin(dist, axis=1)
        if np.array_equal(new_assign, assign):
            break
        assign = new_assign
        for c in range(k):
            members = values[assign == c]
            if members.size:
                centroids[c] = members.mean()
        sse_history.append(float(np.sum((values - centroids[assign]) ** 2)))
    return centroids, sse_history, assign


def fit_codebook(
    samples,
    k: int,
    seed: int = 0,
    max_iters: int = 100,
    sample_limit: int = DEFAULT_SAMPLE_LIMIT,
) -> IntensityCodebook:
    """Fit a k-cluster intensity codebook with deterministic quantile init."""
    values = np.asarray(samples, dtype=np.float64).ravel()
    if values.size == 0:
        raise CodebookError("no samples to fit")
    if values.size > sample_limit:
        rng = np.random.default_rng(np.random.SeedSequence([seed, 11]))
        values = rng.choice(values, size=sample_limit, replace=False)
    uniq = np.unique(values)
    if uniq.size < k:
        raise CodebookError(f"need at least k={k} distinct values, got {uniq.size}")
    init = np.quantile(values, (np.arange(k) + 0.5) / k)
    if np.unique(init).size < k:
        # heavily skewed data: fall back to evenly spaced distinct values
        idx = np.round(np.linspace(0, uniq.size - 1, k)).astype(int)
        init = uniq[idx]
    centroids, _, _ = lloyd(values, init, max_iters=max_iters)
    centroids = np.sort(centroids)
    if np.unique(centroids).size < k:
        raise CodebookError("k-means collapsed to duplicate centroids")
    return IntensityCodebook(centroids=centroids, n_samples=values.size, seed=seed)


def encode_values(values: np.ndarray, codebook: IntensityCodebook) -> np.ndarray:
    """Nearest-centroid class index per value; midpoint ties go to the lower index."""
    midpoints = (codebook.centroids[:-1] + codebook.centroids[1:]) / 2.0
    return np.searchsorted(midpoints, np.asarray(values, dtype=np.float64), side="left")


def encode(volume: Volume, codebook: IntensityCodebook) -> Volume:
    if volume.role != Role.INTENSITY:
        raise CodebookError(f"encode expects an intensity volume, got {volume.role.name}")
    labels = encode_values(volume.data, codebook)
    return Volume(volume.dims, Role.LABEL, labels)


def decode(volume: Volume, codebook: IntensityCodebook) -> Volume:
    if volume.role != Role.LABEL:
        raise CodebookError(f"decode expects a label volume, got {volume.role.name}")
    if volume.data.size and int(volume.data.max()) >= codebook.k:
        raise CodebookError(f"label {int(volume.data.max())} out of range for k={codebook.k}")
    return Volume(volume.dims, Role.INTENSITY, codebook.centroids[volume.data])


def mode_pool(volume: Volume, window: int) -> Volume:
    """Non-overlapping window^3 majority filter reducing dims to ceil(dims/window).

    Boundary windows that stick out past the volume are truncated. Count ties
    resolve to the lowest class index.
    """
    if volume.role not in (Role.LABEL, Role.MASK):
        raise CodebookError(f"mode_pool expects label or mask volume, got {volume.role.name}")
    w = int(window)
    if w < 1:
        raise CodebookError(f"window must be >= 1, got {window}")
    if w == 1:
        return volume.copy()
    grid = volume.grid()
    n_classes = int(grid.max()) + 1
    out_dims = tuple(-(-d // w) for d in volume.dims)
    pad = [(0, od * w - d) for od, d in zip(out_dims, volume.dims)]
    sentinel = n_classes  # padded voxels never win the vote
    padded = np.pad(grid, pad, mode="constant", constant_values=sentinel)
    blocks = padded.reshape(out_dims[0], w, out_dims[1], w, out_dims[2], w)
    blocks = blocks.transpose(0, 2, 4, 1, 3, 5).reshape(*out_dims, w * w * w)
    counts = np.stack([(blocks == c).sum(axis=-1) for c in range(n_classes)], axis=-1)
    modes = np.argmax(counts, axis=-1)  # argmax takes the first max: lowest class
    return Volume.from_grid(modes, volume.role)
