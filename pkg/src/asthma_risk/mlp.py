"""Feedforward network with Leaky ReLU hidden layers and a sigmoid output.

Trained with Adam on mean binary cross-entropy, inverted dropout on hidden
activations. Weight matrices are stored ``(fan_in, fan_out)`` so a batch
propagates as ``A @ W + b``.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .lasso import sigmoid

BCE_EPS = 1e-12


@dataclass
class MlpConfig:
    hidden_sizes: tuple[int, ...] = (32, 16)
    leaky_alpha: float = 0.1
    dropout_rate: float = 0.5
    learning_rate: float = 0.01
    batch_size: int = 32
    epochs: int = 100
    seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    early_stop_tol: float | None = None
    early_stop_patience: int = 5

    def __post_init__(self):
        self.hidden_sizes = tuple(int(h) for h in self.hidden_sizes)
        if not self.hidden_sizes or any(h < 1 for h in self.hidden_sizes):
            raise ValueError("hidden_sizes must be a non-empty list of positive counts")
        if not 0 <= self.dropout_rate < 1:
            raise ValueError("dropout_rate must lie in [0, 1)")
        if self.learning_rate <= 0 or self.batch_size < 1 or self.epochs < 0:
            raise ValueError("learning_rate > 0, batch_size >= 1 and epochs >= 0 required")
        if not (0 <= self.adam_beta1 < 1 and 0 <= self.adam_beta2 < 1):
            raise ValueError("Adam betas must lie in [0, 1)")


@dataclass
class MlpModel:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    config: MlpConfig
    training_log: list[float] = field(default_factory=list)
    feature_names: list[str] | None = None

    @property
    def n_inputs(self) -> int:
        return self.weights[0].shape[0]

    @property
    def params(self) -> list[np.ndarray]:
        return [*self.weights, *self.biases]

    def to_dict(self) -> dict:
        cfg = asdict(self.config)
        cfg["hidden_sizes"] = list(cfg["hidden_sizes"])
        return {
            "kind": "ann",
            "feature_names": self.feature_names,
            "config": cfg,
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
            "training_log": self.training_log,
        }

    @classmethod
    def from_dict(cls, d) -> "MlpModel":
        return cls([np.asarray(w, float) for w in d["weights"]],
                   [np.asarray(b, float) for b in d["biases"]],
                   MlpConfig(**d["config"]), list(d.get("training_log", [])),
                   d.get("feature_names"))


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0

    @classmethod
    def zeros_like(cls, params: Sequence[np.ndarray]) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], 0)


def leaky_relu(x, alpha: float = 0.1):
    x = np.asarray(x, dtype=float)
    return np.where(x > 0, x, alpha * x)


def leaky_relu_grad(x, alpha: float = 0.1):
    """1 for x > 0, alpha otherwise (alpha at exactly 0)."""
    x = np.asarray(x, dtype=float)
    return np.where(x > 0, 1.0, alpha)


def init_model(n_inputs: int, cfg: MlpConfig, feature_names=None) -> MlpModel:
    """Uniform weights in +-sqrt(6 / fan_in), zero biases."""
    rng = np.random.default_rng([cfg.seed, 3])
    sizes = [n_inputs, *cfg.hidden_sizes, 1]
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes, sizes[1:]):
        limit = math.sqrt(6.0 / fan_in)
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MlpModel(weights, biases, cfg, [], feature_names)


@dataclass
class ForwardCache:
    inputs: np.ndarray
    pre: list[np.ndarray]      # hidden pre-activations
    act: list[np.ndarray]      # hidden activations after dropout
    masks: list[np.ndarray | None]
    logits: np.ndarray
    probs: np.ndarray


def draw_masks(model: MlpModel, n_rows: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Inverted-dropout masks: kept units carry 1 / (1 - rate), dropped ones 0."""
    rate = model.config.dropout_rate
    keep = 1.0 - rate
    return [(rng.random((n_rows, h)) < keep) / keep for h in model.config.hidden_sizes]


def forward(model: MlpModel, X, mode: str = "infer", rng: np.random.Generator | None = None,
            masks: list[np.ndarray] | None = None) -> tuple[np.ndarray, ForwardCache]:
    """Probabilities for each row plus the cache ``backward`` needs.

    ``mode="train"`` applies dropout, using ``masks`` if given, otherwise
    drawing them from ``rng``. ``mode="infer"`` never masks or rescales.
    """
    A = np.asarray(X, dtype=float)
    if A.ndim != 2 or A.shape[1] != model.n_inputs:
        raise ValueError(f"batch width {A.shape[-1]} does not match input size {model.n_inputs}")
    if mode not in ("train", "infer"):
        raise ValueError("mode must be 'train' or 'infer'")
    alpha = model.config.leaky_alpha
    if mode == "train" and masks is None and model.config.dropout_rate > 0:
        if rng is None:
            raise ValueError("train mode needs an rng or explicit masks")
        masks = draw_masks(model, A.shape[0], rng)
    inputs = A
    pre, act, used = [], [], []
    n_hidden = len(model.weights) - 1
    for k in range(n_hidden):
        Z = A @ model.weights[k] + model.biases[k]
        A = np.where(Z > 0, Z, alpha * Z)
        mask = masks[k] if (mode == "train" and masks is not None) else None
        if mask is not None:
            A = A * mask
        pre.append(Z)
        act.append(A)
        used.append(mask)
    logits = (A @ model.weights[-1] + model.biases[-1])[:, 0]
    probs = sigmoid(logits)
    return probs, ForwardCache(inputs, pre, act, used, logits, probs)


def predict_proba(model: MlpModel, X) -> np.ndarray:
    return forward(model, X, "infer")[0]


def bce_loss(probs, labels) -> float:
    p = np.clip(np.asarray(probs, dtype=float), BCE_EPS, 1 - BCE_EPS)
    y = np.asarray(labels, dtype=float)
    return float(np.mean(-(y * np.log(p) + (1 - y) * np.log(1 - p))))


def _backprop(model: MlpModel, cache: ForwardCache, d_logits: np.ndarray):
    alpha = model.config.leaky_alpha
    n_hidden = len(model.weights) - 1
    dW = [None] * len(model.weights)
    db = [None] * len(model.biases)
    G = d_logits[:, None]
    prev = cache.act[-1] if n_hidden else cache.inputs
    dW[-1] = prev.T @ G
    db[-1] = G.sum(axis=0)
    for k in range(n_hidden - 1, -1, -1):
        G = G @ model.weights[k + 1].T
        if cache.masks[k] is not None:
            G = G * cache.masks[k]
        G = G * np.where(cache.pre[k] > 0, 1.0, alpha)
        prev = cache.act[k - 1] if k > 0 else cache.inputs
        dW[k] = prev.T @ G
        db[k] = G.sum(axis=0)
    return dW, db, G


def backward(model: MlpModel, cache: ForwardCache, labels) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Gradients of mean BCE with respect to every weight and bias."""
    y = np.asarray(labels, dtype=float)
    dW, db, _ = _backprop(model, cache, (cache.probs - y) / len(y))
    return dW, db


def input_gradient(model: MlpModel, X) -> np.ndarray:
    """d(logit)/d(input) per row, inference mode."""
    _, cache = forward(model, X, "infer")
    _, _, G = _backprop(model, cache, np.ones(len(cache.logits)))
    return G @ model.weights[0].T


def adam_step(params: list[np.ndarray], grads: list[np.ndarray], state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """One bias-corrected Adam update; returns new parameter list and state."""
    if len(params) != len(grads) or any(p.shape != g.shape for p, g in zip(params, grads)):
        raise ValueError("parameter and gradient shapes differ")
    t = state.t + 1
    c1 = 1 - beta1 ** t
    c2 = 1 - beta2 ** t
    new_p, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * (g * g)
        new_p.append(p - lr * (m / c1) / (np.sqrt(v / c2) + eps))
        new_m.append(m)
        new_v.append(v)
    return new_p, AdamState(new_m, new_v, t)


def train(X, y, cfg: MlpConfig | None = None, feature_names=None) -> MlpModel:
    """Mini-batch Adam for ``cfg.epochs`` epochs with per-epoch seeded shuffling.

    ``training_log`` holds the mean training loss of each epoch (train-mode
    batches). Early stopping is off unless ``cfg.early_stop_tol`` is set.
    """
    cfg = cfg or MlpConfig()
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.shape[0] != len(y):
        raise ValueError("X and y row counts differ")
    model = init_model(X.shape[1], cfg, feature_names)
    if cfg.epochs == 0:
        return model
    if len(np.unique(y)) < 2:
        raise ValueError("training data needs both classes")
    shuffle_rng = np.random.default_rng([cfg.seed, 4])
    mask_rng = np.random.default_rng([cfg.seed, 5])
    params = model.params
    n_layers = len(model.weights)
    state = AdamState.zeros_like(params)
    n = len(y)
    best, stale = math.inf, 0
    for epoch in range(cfg.epochs):
        order = shuffle_rng.permutation(n)
        total = 0.0
        for bi, start in enumerate(range(0, n, cfg.batch_size)):
            idx = order[start:start + cfg.batch_size]
            xb, yb = X[idx], y[idx]
            probs, cache = forward(model, xb, "train", rng=mask_rng)
            loss = bce_loss(probs, yb)
            if not math.isfinite(loss):
                raise FloatingPointError(f"non-finite loss at epoch {epoch}, batch {bi}")
            total += loss * len(idx)
            dW, db = backward(model, cache, yb)
            params, state = adam_step(params, [*dW, *db], state, cfg.learning_rate,
                                      cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
            model.weights = params[:n_layers]
            model.biases = params[n_layers:]
        epoch_loss = total / n
        model.training_log.append(epoch_loss)
        if cfg.early_stop_tol is not None:
            if best - epoch_loss < cfg.early_stop_tol:
                stale += 1
                if stale >= cfg.early_stop_patience:
                    break
            else:
                stale = 0
            best = min(best, epoch_loss)
    return model


def save_model(path: str | Path, model: MlpModel, scaler=None, metadata=None) -> Path:
    d = model.to_dict()
    d["scaler"] = None if scaler is None else scaler.to_dict()
    d["metadata"] = metadata or {}
    path = Path(path)
    path.write_text(json.dumps(d, indent=2) + "\n", encoding="utf-8")
    return path
