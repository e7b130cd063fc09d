"""Desk-scale differentiable models and local SGD training.

Three model kinds share a flat-parameter interface:

* ``LogisticModel``   -- multinomial logistic regression,
* ``MlpModel``        -- one tanh hidden layer,
* ``QuadraticModel``  -- a fixed quadratic objective 0.5 w'Hw + b'w whose
  exact Hessian is exposed for oracle tests; it has no classifier output.

Losses are mean cross-entropy over the dataset (the quadratic kind returns
its quadratic form and ignores the data).  Gradients are implemented in
closed form and checked against finite differences in the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .data import Dataset
from .errors import DimensionMismatch, TrainingDiverged


@dataclass(frozen=True)
class TrainSpec:
    """Local SGD hyperparameters; `seed` drives batch shuffling."""

    epochs: int = 3
    learning_rate: float = 0.05
    decay: float = 0.995
    batch_size: int = 32
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if not (0 < self.decay <= 1):
            raise ValueError("decay must lie in (0, 1]")

    def lr_at_round(self, round_index: int) -> float:
        """Effective learning rate in communication round t (1-based)."""
        return self.learning_rate * self.decay ** (round_index - 1)

    def for_round(self, round_index: int, seed: int) -> "TrainSpec":
        return replace(self, learning_rate=self.lr_at_round(round_index), seed=seed)


class LogisticModel:
    """Softmax regression: logits = x W' + b."""

    def __init__(self, dim: int, num_classes: int):
        self.dim = dim
        self.num_classes = num_classes

    @property
    def param_dim(self) -> int:
        return self.num_classes * self.dim + self.num_classes

    def _unpack(self, w: np.ndarray):
        C, d = self.num_classes, self.dim
        return w[: C * d].reshape(C, d), w[C * d:]

    def logits(self, w: np.ndarray, x: np.ndarray) -> np.ndarray:
        W, b = self._unpack(w)
        return x @ W.T + b

    def loss(self, w: np.ndarray, x: np.ndarray, y: np.ndarray) -> float:
        return _softmax_loss(self.logits(w, x), y)

    def grad(self, w: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        probs = _softmax(self.logits(w, x))
        probs[np.arange(len(y)), y] -= 1.0
        probs /= len(y)
        gW = probs.T @ x
        gb = probs.sum(axis=0)
        return np.concatenate([gW.ravel(), gb])

    def predict(self, w: np.ndarray, x: np.ndarray) -> np.ndarray:
        return np.argmax(self.logits(w, x), axis=1)


class MlpModel:
    """One tanh hidden layer of width `hidden`."""

    def __init__(self, dim: int, hidden: int, num_classes: int):
        self.dim = dim
        self.hidden = hidden
        self.num_classes = num_classes

    @property
    def param_dim(self) -> int:
        return self.hidden * (self.dim + 1) + self.num_classes * (self.hidden + 1)

    def _unpack(self, w: np.ndarray):
        d, h, C = self.dim, self.hidden, self.num_classes
        i = 0
        W1 = w[i:i + h * d].reshape(h, d); i += h * d
        b1 = w[i:i + h]; i += h
        W2 = w[i:i + C * h].reshape(C, h); i += C * h
        b2 = w[i:]
        return W1, b1, W2, b2

    def logits(self, w: np.ndarray, x: np.ndarray) -> np.ndarray:
        W1, b1, W2, b2 = self._unpack(w)
        return np.tanh(x @ W1.T + b1) @ W2.T + b2

    def loss(self, w: np.ndarray, x: np.ndarray, y: np.ndarray) -> float:
        return _softmax_loss(self.logits(w, x), y)

    def grad(self, w: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        W1, b1, W2, b2 = self._unpack(w)
        a = np.tanh(x @ W1.T + b1)
        probs = _softmax(a @ W2.T + b2)
        probs[np.arange(len(y)), y] -= 1.0
        probs /= len(y)
        gW2 = probs.T @ a
        gb2 = probs.sum(axis=0)
        da = (probs @ W2) * (1.0 - a * a)
        gW1 = da.T @ x
        gb1 = da.sum(axis=0)
        return np.concatenate([gW1.ravel(), gb1, gW2.ravel(), gb2])

    def predict(self, w: np.ndarray, x: np.ndarray) -> np.ndarray:
        return np.argmax(self.logits(w, x), axis=1)


class QuadraticModel:
    """Fixed quadratic objective with an exact, inspectable Hessian."""

    def __init__(self, hessian: np.ndarray, offset: np.ndarray):
        H = np.asarray(hessian, dtype=np.float64)
        b = np.asarray(offset, dtype=np.float64)
        if H.ndim != 2 or H.shape[0] != H.shape[1] or b.shape != (H.shape[0],):
            raise DimensionMismatch("hessian must be square and offset matching")
        self.hessian = H
        self.offset = b

    @property
    def param_dim(self) -> int:
        return self.hessian.shape[0]

    def loss(self, w: np.ndarray, x=None, y=None) -> float:
        return float(0.5 * w @ self.hessian @ w + self.offset @ w)

    def grad(self, w: np.ndarray, x=None, y=None) -> np.ndarray:
        return self.hessian @ w + self.offset


ModelKind = LogisticModel | MlpModel | QuadraticModel


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _softmax_loss(logits: np.ndarray, labels: np.ndarray) -> float:
    z = logits - logits.max(axis=-1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=-1))
    picked = z[np.arange(len(labels)), labels]
    return float(np.mean(log_norm - picked))


def _check_dim(kind: ModelKind, w: np.ndarray) -> np.ndarray:
    w = np.asarray(w, dtype=np.float64)
    if w.shape != (kind.param_dim,):
        raise DimensionMismatch(f"model expects {kind.param_dim} parameters, got {w.shape}")
    return w


def loss_on(kind: ModelKind, w: np.ndarray, data: Dataset) -> float:
    """Mean cross-entropy of the model on `data` (quadratic form for quadratics)."""
    return kind.loss(_check_dim(kind, w), data.features, data.labels)


def grad_on(kind: ModelKind, w: np.ndarray, data: Dataset) -> np.ndarray:
    """Gradient of loss_on with respect to the flat parameters."""
    return kind.grad(_check_dim(kind, w), data.features, data.labels)


def accuracy_on(kind: ModelKind, w: np.ndarray, data: Dataset) -> float:
    """Fraction of argmax-correct predictions; ties resolve to the lowest class."""
    if isinstance(kind, QuadraticModel):
        raise ValueError("quadratic objectives have no classifier output")
    w = _check_dim(kind, w)
    return float(np.mean(kind.predict(w, data.features) == data.labels))


def batch_loss(kind: ModelKind, models: np.ndarray, data: Dataset) -> np.ndarray:
    """loss_on for a stack of M flat parameter vectors, shape (M, p).

    The logistic path is vectorised because subset-utility evaluation calls
    it thousands of times per round; other kinds just loop.
    """
    models = np.asarray(models, dtype=np.float64)
    if isinstance(kind, LogisticModel):
        C, d = kind.num_classes, kind.dim
        W = models[:, : C * d].reshape(-1, C, d)
        b = models[:, C * d:]
        logits = np.einsum("nd,mcd->mnc", data.features, W) + b[:, None, :]
        z = logits - logits.max(axis=-1, keepdims=True)
        log_norm = np.log(np.exp(z).sum(axis=-1))
        picked = z[:, np.arange(len(data)), data.labels]
        return np.mean(log_norm - picked, axis=-1)
    return np.array([loss_on(kind, m, data) for m in models])


def local_train(kind: ModelKind, w: np.ndarray, data: Dataset, spec: TrainSpec) -> np.ndarray:
    """Run `spec.epochs` epochs of mini-batch SGD and return the update w - w_after.

    The caller is responsible for round-level learning-rate decay (see
    TrainSpec.for_round); within one call the rate is constant.
    """
    w = _check_dim(kind, w).copy()
    rng = np.random.default_rng(spec.seed)
    x, y = data.features, data.labels
    n = len(data)
    w_start = w.copy()
    for epoch in range(spec.epochs):
        perm = rng.permutation(n)
        for start in range(0, n, spec.batch_size):
            idx = perm[start:start + spec.batch_size]
            w -= spec.learning_rate * kind.grad(w, x[idx], y[idx])
        if not np.all(np.isfinite(w)):
            raise TrainingDiverged(f"non-finite parameters after epoch {epoch}")
    return w_start - w
