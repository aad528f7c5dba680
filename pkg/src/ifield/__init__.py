"""Implicit-field auto-decoder learning and unsupervised volumetric anomaly detection."""

from .volume import (
    Role, Volume, PreprocessSpec, VolumeError, VolumeFormatError,
    read_volume, write_volume, clip_normalize, downsample,
)
from .quantize import IntensityCodebook, CodebookError, fit_codebook, encode, decode, mode_pool
from .coords import normalize_coord, positional_encode, sample_points, all_points, PointBatch
from .mlp import MlpModel, init_model, forward, softmax_posterior, cross_entropy, backward, Adam
from .training import TrainConfig, TrainingError, init_latents, train, train_objective
from .restore import (
    InferConfig, RestoreError, retrieve_latent, anomaly_score, restore_volume,
    postprocess_scores,
)
from .metrics import (
    MetricError, MetricsReport, dice, best_dice, dice_at_threshold, auroc,
    average_precision, fpr_at_recall, evaluate,
)
from .synth import SynthSpec, SynthError, generate_healthy, generate_anomalous
from .estimators import IntensityQuantizer, ImplicitFieldAnomalyDetector

__version__ = "0.1.0"
