"""scikit-learn compatible wrappers around the codebook and the auto-decoder."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from . import quantize, restore, training
from .quantize import IntensityCodebook
from .restore import InferConfig
from .training import TrainConfig
from .volume import Role, Volume


class IntensityQuantizer(TransformerMixin, BaseEstimator):
    """k-means scalar quantizer over intensity values in [0, 1].

    fit() takes a 1-D array of samples (or anything ravel-able); transform()
    maps intensities to class indices, inverse_transform() back to centroids.
    """

    def __init__(self, k=10, max_iters=100, sample_limit=quantize.DEFAULT_SAMPLE_LIMIT,
                 seed=0):
        self.k = k
        self.max_iters = max_iters
        self.sample_limit = sample_limit
        self.seed = seed

    def fit(self, X, y=None):
        self.codebook_ = quantize.fit_codebook(
            np.asarray(X).ravel(), self.k, seed=self.seed,
            max_iters=self.max_iters, sample_limit=self.sample_limit)
        self.centroids_ = self.codebook_.centroids
        return self

    def transform(self, X):
        self._check_fitted()
        return quantize.encode_values(np.asarray(X), self.codebook_)

    def inverse_transform(self, X):
        self._check_fitted()
        labels = np.asarray(X, dtype=np.int64)
        if labels.size and (labels.min() < 0 or labels.max() >= self.codebook_.k):
            raise ValueError(f"labels out of range for k={self.codebook_.k}")
        return self.codebook_.centroids[labels]

    def _check_fitted(self):
        if not hasattr(self, "codebook_"):
            raise NotFittedError("IntensityQuantizer is not fitted yet")


class ImplicitFieldAnomalyDetector(BaseEstimator):
    """Auto-decoder implicit field over encoded label volumes.

    fit() jointly trains the network and one latent code per volume.
    predict() returns the restored label volume for a test volume;
    score_map() the per-voxel anomaly scores.
    """

    def __init__(self, classes=10, latent_dim=256, levels=10, hidden=512, depth=8,
                 dropout=0.2, epochs=2000, points_per_volume=16200,
                 volumes_per_batch=6, sigma=0.01, lr_net=5e-4, lr_latent=1e-3,
                 infer_steps=700, infer_points=16200, infer_lr=1e-2, seed=0):
        self.classes = classes
        self.latent_dim = latent_dim
        self.levels = levels
        self.hidden = hidden
        self.depth = depth
        self.dropout = dropout
        self.epochs = epochs
        self.points_per_volume = points_per_volume
        self.volumes_per_batch = volumes_per_batch
        self.sigma = sigma
        self.lr_net = lr_net
        self.lr_latent = lr_latent
        self.infer_steps = infer_steps
        self.infer_points = infer_points
        self.infer_lr = infer_lr
        self.seed = seed

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs, points_per_volume=self.points_per_volume,
            volumes_per_batch=self.volumes_per_batch, sigma=self.sigma,
            lr_net=self.lr_net, lr_latent=self.lr_latent, seed=self.seed,
            latent_dim=self.latent_dim, levels=self.levels, classes=self.classes,
            hidden=self.hidden, depth=self.depth, dropout=self.dropout)

    def _infer_config(self) -> InferConfig:
        return InferConfig(steps=self.infer_steps, points=self.infer_points,
                           lr=self.infer_lr, sigma=self.sigma, seed=self.seed)

    def fit(self, X, y=None):
        volumes = list(X)
        if not volumes or not all(isinstance(v, Volume) and v.role == Role.LABEL
                                  for v in volumes):
            raise ValueError("fit expects a non-empty list of label volumes")
        self.model_, self.latents_, self.loss_history_ = training.train(
            volumes, self._train_config())
        return self

    def retrieve(self, volume: Volume) -> restore.RetrievalResult:
        self._check_fitted()
        return restore.retrieve_latent(self.model_, volume, self._infer_config(),
                                       self.latent_dim, self.levels)

    def predict(self, volume: Volume) -> Volume:
        z = self.retrieve(volume).z
        return restore.restore_volume(self.model_, z, volume.dims, self.levels)

    def score_map(self, volume: Volume) -> Volume:
        z = self.retrieve(volume).z
        return restore.anomaly_score(self.model_, z, volume, self.levels)

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise NotFittedError("ImplicitFieldAnomalyDetector is not fitted yet")
