"""From-scratch multi-layer perceptron with an Adam trainer.

A small rectifier network maps text embeddings to room-label logits. The
trainer runs mini-batch cross-entropy with Adam (L2 weight decay folded
into the gradient, as in the classic formulation), a step-decay learning
rate schedule, and a fixed seed for both initialization and shuffling, so
a run is bit-reproducible given identical inputs.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import TrainingDivergedError, ValidationError


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    batch_size: int = 512
    learning_rate: float = 1e-4
    adam_betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    weight_decay: float = 1e-3
    lr_step: int = 10
    lr_gamma: float = 0.5
    seed: int = 0

    def __post_init__(self):
        for name in ("epochs", "batch_size", "learning_rate", "lr_step", "lr_gamma"):
            if getattr(self, name) <= 0:
                raise ValidationError(f"{name} must be positive, got {getattr(self, name)}")
        if self.weight_decay < 0 or self.adam_eps <= 0:
            raise ValidationError("weight_decay must be >= 0 and adam_eps > 0")
        b1, b2 = self.adam_betas
        if not (0 <= b1 < 1 and 0 <= b2 < 1):
            raise ValidationError(f"adam_betas must lie in [0, 1), got {self.adam_betas}")

    def lr_at_epoch(self, epoch: int) -> float:
        """Step decay: multiply by lr_gamma every lr_step epochs (epoch 0-based)."""
        return self.learning_rate * self.lr_gamma ** (epoch // self.lr_step)


class MlpHead:
    """Rectifier MLP: linear layers with ReLU between, identity output.

    weights[i] has shape (fan_out, fan_in); parameters are float64.
    """

    def __init__(self, dims: Sequence[int], weights: list[np.ndarray], biases: list[np.ndarray]):
        self.dims = list(dims)
        if len(self.dims) < 2:
            raise ValidationError("network needs at least input and output dims")
        self.weights = weights
        self.biases = biases
        for i, (w, b) in enumerate(zip(weights, biases)):
            expected = (self.dims[i + 1], self.dims[i])
            if w.shape != expected or b.shape != (self.dims[i + 1],):
                raise ValidationError(f"layer {i}: weight shape {w.shape} does not match dims {expected}")
        if not all(np.all(np.isfinite(w)) for w in weights) or not all(
            np.all(np.isfinite(b)) for b in biases
        ):
            raise ValidationError("parameters must be finite")

    @property
    def input_dim(self) -> int:
        return self.dims[0]

    @property
    def output_dim(self) -> int:
        return self.dims[-1]

    @classmethod
    def initialize(cls, dims: Sequence[int], rng: np.random.Generator) -> "MlpHead":
        """Uniform fan-in init: U(-1/sqrt(fan_in), 1/sqrt(fan_in)) per layer."""
        weights, biases = [], []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            bound = 1.0 / math.sqrt(fan_in)
            weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
            biases.append(rng.uniform(-bound, bound, size=fan_out))
        return cls(dims, weights, biases)

    def parameters(self) -> list[np.ndarray]:
        params: list[np.ndarray] = []
        for w, b in zip(self.weights, self.biases):
            params.extend((w, b))
        return params

    def logits(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            x = np.maximum(x @ w.T + b, 0.0)
        return x @ self.weights[-1].T + self.biases[-1]


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def cross_entropy(head: MlpHead, x: np.ndarray, y: np.ndarray) -> float:
    """Mean negative log-likelihood of integer targets y under the head."""
    log_probs = _log_softmax(head.logits(x))
    return float(-log_probs[np.arange(len(y)), y].mean())


def accuracy(head: MlpHead, x: np.ndarray, y: np.ndarray) -> float:
    return float((head.logits(x).argmax(axis=1) == y).mean())


def loss_and_gradients(head: MlpHead, x: np.ndarray, y: np.ndarray) -> tuple[float, list[np.ndarray]]:
    """Cross-entropy loss and its gradient w.r.t. every parameter.

    Gradients come back in parameters() order: (W0, b0, W1, b1, ...).
    Weight decay is not included here; the optimizer adds it.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.asarray(y, dtype=int)
    batch = x.shape[0]

    pre_acts: list[np.ndarray] = []
    acts = [x]
    for w, b in zip(head.weights[:-1], head.biases[:-1]):
        z = acts[-1] @ w.T + b
        pre_acts.append(z)
        acts.append(np.maximum(z, 0.0))
    logits = acts[-1] @ head.weights[-1].T + head.biases[-1]

    log_probs = _log_softmax(logits)
    loss = float(-log_probs[np.arange(batch), y].mean())

    dlogits = np.exp(log_probs)
    dlogits[np.arange(batch), y] -= 1.0
    dlogits /= batch

    grads: list[np.ndarray] = [np.empty(0)] * (2 * len(head.weights))
    upstream = dlogits
    for layer in range(len(head.weights) - 1, -1, -1):
        grads[2 * layer] = upstream.T @ acts[layer]
        grads[2 * layer + 1] = upstream.sum(axis=0)
        if layer > 0:
            upstream = (upstream @ head.weights[layer]) * (pre_acts[layer - 1] > 0)
    return loss, grads


class AdamState:
    """First/second moment accumulators with bias correction."""

    def __init__(self, params: list[np.ndarray]):
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params: list[np.ndarray], grads: list[np.ndarray], lr: float, cfg: TrainConfig) -> None:
        b1, b2 = cfg.adam_betas
        self.t += 1
        for p, g, m, v in zip(params, grads, self.m, self.v):
            if cfg.weight_decay:
                g = g + cfg.weight_decay * p
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            m_hat = m / (1 - b1**self.t)
            v_hat = v / (1 - b2**self.t)
            p -= lr * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)


@dataclass
class TrainingCurve:
    train_loss: list[float] = field(default_factory=list)
    train_accuracy: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    val_accuracy: list[float] = field(default_factory=list)
    learning_rates: list[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "train_loss": self.train_loss,
            "train_accuracy": self.train_accuracy,
            "val_loss": self.val_loss,
            "val_accuracy": self.val_accuracy,
            "learning_rates": self.learning_rates,
        }


def train_classifier(
    x: np.ndarray,
    y: np.ndarray,
    dims: Sequence[int],
    cfg: TrainConfig = TrainConfig(),
    x_val: np.ndarray | None = None,
    y_val: np.ndarray | None = None,
) -> tuple[MlpHead, TrainingCurve]:
    """Train an MLP on (x, y) integer-target rows.

    Raises TrainingDivergedError the moment a batch loss stops being
    finite, with the offending epoch/step in the message.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=int)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValidationError(f"training data must be a nonempty 2-d array, got shape {x.shape}")
    if x.shape[0] != y.shape[0]:
        raise ValidationError(f"{x.shape[0]} rows but {y.shape[0]} targets")
    if x.shape[1] != dims[0]:
        raise ValidationError(f"input dim {x.shape[1]} does not match network dims[0]={dims[0]}")
    if y.min() < 0 or y.max() >= dims[-1]:
        raise ValidationError(f"targets must lie in [0, {dims[-1]}), got [{y.min()}, {y.max()}]")

    rng = np.random.default_rng(cfg.seed)
    head = MlpHead.initialize(dims, rng)
    adam = AdamState(head.parameters())
    curve = TrainingCurve()
    n = x.shape[0]
    step = 0

    for epoch in range(cfg.epochs):
        lr = cfg.lr_at_epoch(epoch)
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            batch_idx = order[start : start + cfg.batch_size]
            loss, grads = loss_and_gradients(head, x[batch_idx], y[batch_idx])
            step += 1
            if not math.isfinite(loss):
                raise TrainingDivergedError("batch loss is not finite", epoch=epoch, step=step, loss=loss)
            adam.step(head.parameters(), grads, lr, cfg)

        curve.learning_rates.append(lr)
        curve.train_loss.append(cross_entropy(head, x, y))
        curve.train_accuracy.append(accuracy(head, x, y))
        if x_val is not None and len(x_val):
            curve.val_loss.append(cross_entropy(head, x_val, y_val))
            curve.val_accuracy.append(accuracy(head, x_val, y_val))
        if not math.isfinite(curve.train_loss[-1]):
            raise TrainingDivergedError(
                "epoch loss is not finite", epoch=epoch, step=step, loss=curve.train_loss[-1]
            )
    return head, curve


# ---------------------------------------------------------------------------
# Persistence


def head_document(
    head: MlpHead,
    label_order: Sequence[str],
    embedder_name: str,
    embedder_dimension: int,
) -> dict:
    if len(label_order) != head.output_dim:
        raise ValidationError(f"{len(label_order)} labels for a {head.output_dim}-way head")
    return {
        "dims": head.dims,
        "weights": [w.tolist() for w in head.weights],
        "biases": [b.tolist() for b in head.biases],
        "embedder": {"name": embedder_name, "dimension": embedder_dimension},
        "label_order": list(label_order),
    }


def save_head(
    path: str | Path,
    head: MlpHead,
    label_order: Sequence[str],
    embedder_name: str,
    embedder_dimension: int,
) -> None:
    doc = head_document(head, label_order, embedder_name, embedder_dimension)
    Path(path).write_text(json.dumps(doc, sort_keys=True) + "\n")


def load_head(path: str | Path) -> tuple[MlpHead, list[str], dict]:
    try:
        doc = json.loads(Path(path).read_text())
        head = MlpHead(
            doc["dims"],
            [np.asarray(w, dtype=float) for w in doc["weights"]],
            [np.asarray(b, dtype=float) for b in doc["biases"]],
        )
        return head, list(doc["label_order"]), dict(doc["embedder"])
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise ValidationError(f"bad classifier head file {path}: {exc}") from exc
