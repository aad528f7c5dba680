"""Weight-normalized MLP with analytic backprop and Adam.

Effective weight rows are w_i = g_i * v_i / ||v_i||. Hidden layers use ReLU
and (in train mode) inverted dropout; the last layer emits raw logits.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np


class MlpError(ValueError):
    """Shape or argument mismatch in network operations."""


@dataclass
class Layer:
    v: np.ndarray  # (out, in) direction parameters
    g: np.ndarray  # (out,) per-row scales
    b: np.ndarray  # (out,) biases

    def effective_weights(self) -> np.ndarray:
        norms = np.linalg.norm(self.v, axis=1, keepdims=True)
        return self.g[:, None] * self.v / norms


@dataclass
class MlpModel:
    layers: list[Layer]
    dropout: float = 0.2

    @property
    def input_dim(self) -> int:
        return self.layers[0].v.shape[1]

    @property
    def output_dim(self) -> int:
        return self.layers[-1].v.shape[0]

    def parameters(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            out.extend([layer.v, layer.g, layer.b])
        return out

    def copy(self) -> "MlpModel":
        return MlpModel(
            layers=[Layer(l.v.copy(), l.g.copy(), l.b.copy()) for l in self.layers],
            dropout=self.dropout,
        )


class LayerGrads(NamedTuple):
    dv: np.ndarray
    dg: np.ndarray
    db: np.ndarray


def init_model(layer_sizes, seed: int = 0, dropout: float = 0.2) -> MlpModel:
    """He-scaled Gaussian v, g = ||v|| (so initial effective weights equal v), b = 0."""
    sizes = [int(s) for s in layer_sizes]
    if len(sizes) < 2:
        raise MlpError("need at least input and output sizes")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 5]))
    layers = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        v = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_out, fan_in))
        g = np.linalg.norm(v, axis=1)
        b = np.zeros(fan_out)
        layers.append(Layer(v=v, g=g, b=b))
    return MlpModel(layers=layers, dropout=dropout)


def _dropout_mask(shape, rate: float, rng: np.random.Generator) -> np.ndarray:
    keep = 1.0 - rate
    return (rng.random(shape) < keep) / keep


def _run(model: MlpModel, x: np.ndarray, train: bool, rng):
    """Forward pass keeping the per-layer cache needed for backprop."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if x.shape[1] != model.input_dim:
        raise MlpError(f"input width {x.shape[1]} != model input dim {model.input_dim}")
    if train and model.dropout > 0.0 and rng is None:
        raise MlpError("train-mode forward with dropout needs an rng")
    acts = [x]
    relu_masks = []
    drop_masks = []
    a = x
    for layer in model.layers[:-1]:
        w = layer.effective_weights()
        h = a @ w.T + layer.b
        mask = h > 0
        a = h * mask
        if train and model.dropout > 0.0:
            dmask = _dropout_mask(a.shape, model.dropout, rng)
            a = a * dmask
            drop_masks.append(dmask)
        else:
            drop_masks.append(None)
        relu_masks.append(mask)
        acts.append(a)
    last = model.layers[-1]
    logits = a @ last.effective_weights().T + last.b
    return logits, acts, relu_masks, drop_masks


def forward(model: MlpModel, x: np.ndarray, train: bool = False,
            rng: np.random.Generator | None = None) -> np.ndarray:
    """Logits for a (n, input_dim) batch (or a single input vector)."""
    single = np.asarray(x).ndim == 1
    logits = _run(model, x, train, rng)[0]
    return logits[0] if single else logits


def forward_point(model: MlpModel, z: np.ndarray, encoded_point: np.ndarray,
                  train: bool = False, rng=None) -> np.ndarray:
    return forward(model, np.concatenate([z, encoded_point]), train=train, rng=rng)


def softmax_posterior(logits: np.ndarray) -> np.ndarray:
    """Max-shifted softmax over the last axis."""
    logits = np.asarray(logits, dtype=np.float64)
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    logits = np.asarray(logits, dtype=np.float64)
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def cross_entropy(logits: np.ndarray, targets) -> np.ndarray:
    """-log softmax(logits)[target], computed via stable log-sum-exp."""
    logits = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    targets = np.atleast_1d(np.asarray(targets, dtype=np.int64))
    if np.any(targets < 0) or np.any(targets >= logits.shape[1]):
        raise MlpError(f"target out of range for {logits.shape[1]} classes")
    losses = -log_softmax(logits)[np.arange(targets.size), targets]
    return losses if losses.size > 1 else float(losses[0])


def _weightnorm_grads(layer: Layer, dw: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    norms = np.linalg.norm(layer.v, axis=1, keepdims=True)
    vhat = layer.v / norms
    dg = np.sum(dw * vhat, axis=1)
    dv = (layer.g[:, None] / norms) * (dw - dg[:, None] * vhat)
    return dv, dg


def backward(model: MlpModel, x: np.ndarray, targets: np.ndarray,
             train: bool = False, rng: np.random.Generator | None = None):
    """Gradients of mean cross-entropy over the batch.

    Returns (mean_loss, [LayerGrads per layer], dx) where dx is the gradient
    w.r.t. each input row.
    """
    targets = np.atleast_1d(np.asarray(targets, dtype=np.int64))
    if targets.size == 0:
        raise MlpError("empty batch")
    logits, acts, relu_masks, drop_masks = _run(model, x, train, rng)
    n, n_classes = logits.shape
    if np.any(targets < 0) or np.any(targets >= n_classes):
        raise MlpError(f"target out of range for {n_classes} classes")
    logp = log_softmax(logits)
    mean_loss = float(-logp[np.arange(n), targets].mean())

    delta = np.exp(logp)
    delta[np.arange(n), targets] -= 1.0
    delta /= n

    grads: list[LayerGrads] = [None] * len(model.layers)
    for li in range(len(model.layers) - 1, -1, -1):
        layer = model.layers[li]
        a_prev = acts[li]
        dw = delta.T @ a_prev
        db = delta.sum(axis=0)
        dv, dg = _weightnorm_grads(layer, dw)
        grads[li] = LayerGrads(dv=dv, dg=dg, db=db)
        if li > 0:
            delta = delta @ layer.effective_weights()
            if drop_masks[li - 1] is not None:
                delta = delta * drop_masks[li - 1]
            delta = delta * relu_masks[li - 1]
        else:
            dx = delta @ layer.effective_weights()
    return mean_loss, grads, dx


class Adam:
    """Bias-corrected Adam over a fixed list of parameter arrays (in-place)."""

    def __init__(self, params, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0
        self.beta1, self.beta2, self.eps = beta1, beta2, eps

    def step(self, params, grads, lr: float) -> None:
        if len(params) != len(self.m):
            raise MlpError("parameter list length changed")
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for p, g, m, v in zip(params, grads, self.m, self.v):
            if p.shape != g.shape:
                raise MlpError(f"gradient shape {g.shape} != parameter shape {p.shape}")
            m += (1 - b1) * (g - m)
            v += (1 - b2) * (g * g - v)
            mhat = m / (1 - b1 ** self.t)
            vhat = v / (1 - b2 ** self.t)
            p -= lr * mhat / (np.sqrt(vhat) + self.eps)


class RowAdam:
    """Adam over rows of a table, with per-row step counts for sparse updates."""

    def __init__(self, shape, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.m = np.zeros(shape)
        self.v = np.zeros(shape)
        self.t = np.zeros(shape[0], dtype=np.int64)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps

    def step(self, table: np.ndarray, row: int, grad: np.ndarray, lr: float) -> None:
        b1, b2 = self.beta1, self.beta2
        self.t[row] += 1
        t = self.t[row]
        self.m[row] += (1 - b1) * (grad - self.m[row])
        self.v[row] += (1 - b2) * (grad * grad - self.v[row])
        mhat = self.m[row] / (1 - b1 ** t)
        vhat = self.v[row] / (1 - b2 ** t)
        table[row] -= lr * mhat / (np.sqrt(vhat) + self.eps)


def flatten_grads(grads: list[LayerGrads]) -> list[np.ndarray]:
    out = []
    for g in grads:
        out.extend([g.dv, g.dg, g.db])
    return out
