"""One-hidden-layer classifier (sigmoid hidden, softmax output) trained by back-propagation."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)

CLAMP = 1e-12


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class MlpModel:
    w1: np.ndarray  # (hidden, input)
    b1: np.ndarray
    w2: np.ndarray  # (labels, hidden)
    b2: np.ndarray
    lambda_reg: float = 0.0
    loss_kind: str = "binary"  # "binary" (sum of per-label binary CE) or "categorical"

    @property
    def input_dim(self) -> int:
        return self.w1.shape[1]

    @property
    def hidden_dim(self) -> int:
        return self.w1.shape[0]

    @property
    def num_labels(self) -> int:
        return self.w2.shape[0]

    def params(self):
        return [self.w1, self.b1, self.w2, self.b2]

    def copy(self) -> MlpModel:
        return MlpModel(self.w1.copy(), self.b1.copy(), self.w2.copy(), self.b2.copy(),
                        self.lambda_reg, self.loss_kind)


def init_mlp(input_dim: int, hidden_dim: int, num_labels: int, lambda_reg: float = 1e-4,
             seed: int = 0, loss_kind: str = "binary") -> MlpModel:
    """Glorot-uniform weights, zero biases."""
    if min(input_dim, hidden_dim, num_labels) < 1:
        raise ValueError("all layer sizes must be >= 1")
    if lambda_reg < 0:
        raise ValueError("lambda_reg must be non-negative")
    rng = np.random.default_rng(seed)
    a1 = np.sqrt(6.0 / (input_dim + hidden_dim))
    a2 = np.sqrt(6.0 / (hidden_dim + num_labels))
    return MlpModel(
        rng.uniform(-a1, a1, (hidden_dim, input_dim)),
        np.zeros(hidden_dim),
        rng.uniform(-a2, a2, (num_labels, hidden_dim)),
        np.zeros(num_labels),
        float(lambda_reg),
        loss_kind,
    )


def _sigmoid(z):
    # split by sign so exp never overflows
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _forward(model: MlpModel, X):
    hidden = _sigmoid(X @ model.w1.T + model.b1)
    return hidden, _softmax(hidden @ model.w2.T + model.b2)


def forward(model: MlpModel, x) -> np.ndarray:
    """Label probabilities for a feature vector (D,) or batch (N, D)."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != model.input_dim:
        raise ValueError(f"input length {x.shape[-1]} != {model.input_dim}")
    return _forward(model, np.atleast_2d(x))[1].reshape(x.shape[:-1] + (model.num_labels,))


def one_hot(labels, num_labels: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=int)
    y = np.zeros((len(labels), num_labels))
    y[np.arange(len(labels)), labels] = 1.0
    return y


def _data_loss(r, y, kind):
    if kind == "categorical":
        return -np.sum(y * np.log(np.maximum(r, CLAMP))) / len(y)
    return -np.sum(y * np.log(np.maximum(r, CLAMP)) + (1 - y) * np.log(np.maximum(1 - r, CLAMP))) / len(y)


def regularization(model: MlpModel) -> float:
    return model.lambda_reg * (np.sum(model.w1 ** 2) + np.sum(model.w2 ** 2))


def loss(model: MlpModel, X, Y) -> float:
    """Cross-entropy over the batch plus L2 penalty on weights (biases excluded).

    ``Y`` is a one-hot target matrix. The binary form sums
    ``y log r + (1 - y) log(1 - r)`` over every label; log arguments are
    clamped at 1e-12.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    if len(X) == 0:
        raise ValueError("empty batch")
    _, r = _forward(model, X)
    return float(_data_loss(r, Y, model.loss_kind) + regularization(model))


def gradients(model: MlpModel, X, Y) -> list[np.ndarray]:
    """Analytic gradient of :func:`loss` w.r.t. ``[w1, b1, w2, b2]``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    n = len(X)
    if n == 0:
        raise ValueError("empty batch")
    hidden, r = _forward(model, X)
    # clamped log arguments have zero derivative
    inv_r = np.where(r > CLAMP, 1.0 / np.maximum(r, CLAMP), 0.0)
    g = -Y * inv_r  # dL/dr
    if model.loss_kind != "categorical":
        g += (1 - Y) * np.where(1 - r > CLAMP, 1.0 / np.maximum(1 - r, CLAMP), 0.0)
    g /= n
    dz = r * (g - np.sum(g * r, axis=1, keepdims=True))
    lam2 = 2.0 * model.lambda_reg
    dw2 = dz.T @ hidden + lam2 * model.w2
    db2 = dz.sum(axis=0)
    da = (dz @ model.w2) * hidden * (1.0 - hidden)
    dw1 = da.T @ X + lam2 * model.w1
    db1 = da.sum(axis=0)
    return [dw1, db1, dw2, db2]


def predict_topk(model: MlpModel, x, k: int) -> np.ndarray:
    """The ``k`` most probable labels, best first (ties to the lower label)."""
    if not 1 <= k <= model.num_labels:
        raise ValueError(f"k must be in [1, {model.num_labels}]")
    r = forward(model, x)
    return np.argsort(-r, axis=-1, kind="stable")[..., :k]


def accuracy(model: MlpModel, X, labels) -> float:
    if len(X) == 0:
        return float("nan")
    return float(np.mean(np.argmax(forward(model, X), axis=1) == np.asarray(labels)))


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.5
    batch_size: int = 256
    max_epochs: int = 200
    patience: int = 10
    lambda_reg: float = 1e-4
    momentum: float = 0.0
    hidden_dim: int | None = None
    loss_kind: str = "binary"
    seed: int = 0


@dataclass
class TrainReport:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    val_accuracy: list[float] = field(default_factory=list)
    best_epoch: int = 0
    stopping_epoch: int = 0
    test_accuracy: float | None = None

    @property
    def epochs(self) -> int:
        return len(self.train_loss)

    def rows(self):
        for i, (tl, vl, va) in enumerate(zip(self.train_loss, self.val_loss, self.val_accuracy), start=1):
            yield {"epoch": i, "train_loss": tl, "val_loss": vl, "val_accuracy": va}


def train(X_train, y_train, X_val, y_val, num_labels: int, hyper: TrainConfig = TrainConfig(),
          model: MlpModel | None = None) -> tuple[MlpModel, TrainReport]:
    """Mini-batch gradient descent with early stopping on validation loss.

    Returns the model from the epoch with the lowest validation loss. The
    shuffle order and initial weights derive from ``hyper.seed`` only.
    """
    X_train = np.asarray(X_train, dtype=float)
    X_val = np.asarray(X_val, dtype=float)
    Y_train = one_hot(y_train, num_labels)
    Y_val = one_hot(y_val, num_labels)
    if model is None:
        hidden = hyper.hidden_dim or X_train.shape[1]
        model = init_mlp(X_train.shape[1], hidden, num_labels, hyper.lambda_reg, hyper.seed, hyper.loss_kind)
    rng = np.random.default_rng(hyper.seed + 1)
    velocity = [np.zeros_like(p) for p in model.params()]

    report = TrainReport()
    best, best_loss, stale = model.copy(), np.inf, 0
    n = len(X_train)
    # overflow in a divergent run surfaces as TrainingDiverged, not as warnings
    with np.errstate(over="ignore", invalid="ignore"):
        for epoch in range(1, hyper.max_epochs + 1):
            order = rng.permutation(n)
            for start in range(0, n, hyper.batch_size):
                idx = order[start:start + hyper.batch_size]
                grads = gradients(model, X_train[idx], Y_train[idx])
                for p, g, v in zip(model.params(), grads, velocity):
                    v *= hyper.momentum
                    v -= hyper.lr * g
                    p += v
            train_loss = loss(model, X_train, Y_train)
            val_loss = loss(model, X_val, Y_val) if len(X_val) else train_loss
            if not (np.isfinite(train_loss) and np.isfinite(val_loss)):
                raise TrainingDiverged(f"loss became non-finite at epoch {epoch} (lr={hyper.lr})")
            report.train_loss.append(train_loss)
            report.val_loss.append(val_loss)
            report.val_accuracy.append(accuracy(model, X_val, y_val) if len(X_val) else accuracy(model, X_train, y_train))
            log.debug("epoch %d train %.5f val %.5f acc %.4f", epoch, train_loss, val_loss, report.val_accuracy[-1])
            if val_loss < best_loss:
                best, best_loss, stale = model.copy(), val_loss, 0
                report.best_epoch = epoch
            else:
                stale += 1
                if stale >= hyper.patience:
                    break
    report.stopping_epoch = report.epochs
    return best, report
