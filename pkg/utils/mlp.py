"""
Multilayer perceptron binary classifier over clustering-block encodings.

Architecture:
    input -> [Dense + ReLU] x L -> Dense(2) -> softmax

Training:
- Loss: mean over samples of ((p_normal - t_normal)^2 + (p_problem - t_problem)^2) / 2
  against one-hot targets, plus l1_lambda * sum|W_out| on the output layer
- Optimizer: plain gradient descent, full batch unless batch_size is set
- At most max_epochs epochs; the returned model is the snapshot with the
  lowest training loss seen (the untrained initialization included)

Weights are stored as (fan_in, fan_out) matrices so a batch forward pass
is X @ W + b. Everything runs in float64.
"""

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from tools.schemas import MlpConfig
from utils.seeding import stage_rng
from utils.telemetry import CellLabel

logger = logging.getLogger(__name__)

N_CLASSES = 2
MODEL_FORMAT_VERSION = 1


class TrainingDivergedError(ArithmeticError):
    """Training loss became NaN or infinite."""

    def __init__(self, message: str, epoch: int):
        super().__init__(message)
        self.epoch = epoch


@dataclass(frozen=True)
class MlpModel:
    """
    Trained network state.

    Attributes:
        input_dim: Length of the input vector
        widths: Hidden layer widths (empty for L = 0)
        weights: One (fan_in, fan_out) matrix per layer, output layer last
        biases: One bias vector per layer
        best_epoch: Epoch of the returned snapshot (0 = initialization)
        loss_history: Training loss at initialization and after every epoch
    """

    input_dim: int
    widths: Tuple[int, ...]
    weights: Tuple[np.ndarray, ...]
    biases: Tuple[np.ndarray, ...]
    best_epoch: int = 0
    loss_history: Tuple[float, ...] = field(default=(), compare=False)

    def __post_init__(self):
        if len(self.weights) != len(self.widths) + 1 or len(self.biases) != len(self.weights):
            raise ValueError(
                f"Expected {len(self.widths) + 1} weight/bias pairs, got "
                f"{len(self.weights)}/{len(self.biases)}"
            )
        dims = [self.input_dim] + list(self.widths) + [N_CLASSES]
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.shape != (dims[i], dims[i + 1]) or b.shape != (dims[i + 1],):
                raise ValueError(
                    f"Layer {i}: expected W {(dims[i], dims[i + 1])} and b {(dims[i + 1],)}, "
                    f"got {W.shape} and {b.shape}"
                )

    @property
    def best_loss(self) -> float:
        return self.loss_history[self.best_epoch] if self.loss_history else float("nan")


def _frozen(arrays: Sequence[np.ndarray]) -> Tuple[np.ndarray, ...]:
    out = []
    for a in arrays:
        a = np.array(a, dtype=float, copy=True)
        a.setflags(write=False)
        out.append(a)
    return tuple(out)


# ---------------------------------------------------------------------------
# Architecture
# ---------------------------------------------------------------------------

def layer_widths(cfg: MlpConfig) -> List[int]:
    """
    Hidden layer widths.

    Without decreasing units every layer has U_1 units. With decreasing
    units, layer l >= 2 gets floor(U_(l-1) / 2^l) units, or
    floor(U_(l-1) / 2) with `halving`; widths never drop below 1.

    Example:
        U_1 = 100, L = 4, decreasing -> [100, 25, 3, 1]
    """
    if cfg.hidden_layers == 0:
        return []
    widths = [cfg.units_per_layer]
    for l in range(2, cfg.hidden_layers + 1):
        if not cfg.decreasing_units:
            widths.append(cfg.units_per_layer)
            continue
        divisor = 2 if cfg.halving else 2 ** l
        widths.append(max(1, widths[-1] // divisor))
    return widths


def init_model(cfg: MlpConfig, input_dim: Optional[int] = None) -> MlpModel:
    """
    Glorot-uniform weights (limit sqrt(6 / (fan_in + fan_out))), zero biases.

    The draw uses the ("mlp", "init") stream of cfg.seed.
    """
    input_dim = input_dim if input_dim is not None else cfg.input_dim
    if input_dim is None or input_dim < 1:
        raise ValueError(f"input_dim must be a positive integer, got {input_dim}")

    rng = stage_rng(cfg.seed, "mlp", "init")
    widths = layer_widths(cfg)
    dims = [input_dim] + widths + [N_CLASSES]
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MlpModel(
        input_dim=input_dim,
        widths=tuple(widths),
        weights=_frozen(weights),
        biases=_frozen(biases),
    )


# ---------------------------------------------------------------------------
# Forward pass and loss
# ---------------------------------------------------------------------------

def softmax(z: np.ndarray) -> np.ndarray:
    """Row-wise softmax with the max logit subtracted first."""
    z = np.asarray(z, dtype=float)
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _check_input(m: MlpModel, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.shape[-1] != m.input_dim:
        raise ValueError(f"Dimension mismatch: model expects {m.input_dim} inputs, got {X.shape[-1]}")
    return X


def _forward_cache(weights, biases, X: np.ndarray):
    """Pre-activations and activations of every layer (input first)."""
    activations = [X]
    pre = []
    for i, (W, b) in enumerate(zip(weights, biases)):
        z = activations[-1] @ W + b
        pre.append(z)
        if i < len(weights) - 1:
            activations.append(np.maximum(z, 0.0))
    return pre, activations, softmax(pre[-1])


def forward(m: MlpModel, x: np.ndarray) -> np.ndarray:
    """
    Class probabilities (p_normal, p_problematic).

    Accepts a single input vector (returns shape (2,)) or a batch
    (returns shape (n, 2)).
    """
    X = _check_input(m, x)
    single = X.ndim == 1
    _, _, probs = _forward_cache(m.weights, m.biases, np.atleast_2d(X))
    return probs[0] if single else probs


def _targets(y: Sequence[int]) -> np.ndarray:
    y = np.asarray(y, dtype=int)
    t = np.zeros((len(y), N_CLASSES))
    t[np.arange(len(y)), y] = 1.0
    return t


def loss(probs: np.ndarray, label: Union[int, CellLabel], m: Optional[MlpModel] = None, l1_lambda: float = 0.0) -> float:
    """
    Per-sample loss: ((p0 - t0)^2 + (p1 - t1)^2) / 2 plus the L1 term.

    Example:
        >>> loss(np.array([0.5, 0.5]), CellLabel.NORMAL)
        0.25
    """
    p = np.asarray(probs, dtype=float)
    t = _targets([int(label)])[0]
    value = float(0.5 * np.sum((p - t) ** 2))
    if l1_lambda > 0.0:
        if m is None:
            raise ValueError("L1 regularization needs the model")
        value += l1_lambda * float(np.abs(m.weights[-1]).sum())
    return value


def _batch_loss(probs: np.ndarray, targets: np.ndarray, w_out: np.ndarray, l1_lambda: float) -> float:
    value = float(np.mean(0.5 * np.sum((probs - targets) ** 2, axis=1)))
    if l1_lambda > 0.0:
        value += l1_lambda * float(np.abs(w_out).sum())
    return value


def loss_and_gradients(
    m: MlpModel,
    X: np.ndarray,
    y: Sequence[int],
    l1_lambda: float = 0.0
) -> Tuple[float, List[np.ndarray], List[np.ndarray]]:
    """
    Batch loss and its analytic gradients.

    Returns:
        (loss, weight gradients, bias gradients), gradients aligned with
        m.weights / m.biases
    """
    X = np.atleast_2d(_check_input(m, X))
    targets = _targets(y)
    if len(targets) != len(X):
        raise ValueError(f"{len(X)} inputs but {len(targets)} labels")
    return _loss_and_gradients(m.weights, m.biases, X, targets, l1_lambda)


def _loss_and_gradients(weights, biases, X, targets, l1_lambda):
    n = len(X)
    pre, activations, probs = _forward_cache(weights, biases, X)
    value = _batch_loss(probs, targets, weights[-1], l1_lambda)

    # d loss / d probs, then through the softmax Jacobian.
    g = (probs - targets) / n
    delta = probs * (g - np.sum(g * probs, axis=1, keepdims=True))

    grad_w: List[np.ndarray] = [None] * len(weights)
    grad_b: List[np.ndarray] = [None] * len(weights)
    for i in range(len(weights) - 1, -1, -1):
        grad_w[i] = activations[i].T @ delta
        grad_b[i] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ weights[i].T) * (pre[i - 1] > 0.0)

    if l1_lambda > 0.0:
        grad_w[-1] = grad_w[-1] + l1_lambda * np.sign(weights[-1])
    return value, grad_w, grad_b


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

def train(cfg: MlpConfig, X: np.ndarray, y: Sequence[int]) -> MlpModel:
    """
    Train the classifier and return its best state.

    Args:
        cfg: Hyperparameters (input_dim may be None; taken from X)
        X: (n_cells, input_dim) encodings
        y: Labels, 0 = normal, 1 = problematic

    Raises:
        ValueError: fewer than 2 examples, a single class, or shape mismatch
        TrainingDivergedError: loss became non-finite
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray([int(v) for v in y], dtype=int)
    if X.ndim != 2 or len(X) != len(y):
        raise ValueError(f"Expected X (n, d) and n labels, got X {X.shape} and {len(y)} labels")
    if len(y) < 2:
        raise ValueError(f"Training needs at least 2 examples, got {len(y)}")
    if not set(np.unique(y)) <= {0, 1}:
        raise ValueError(f"Labels must be 0 or 1, got {sorted(set(y.tolist()))}")
    if len(np.unique(y)) < 2:
        raise ValueError(
            f"Training labels contain a single class ({CellLabel(int(y[0])).name}); "
            f"both normal and problematic cells are required"
        )
    if cfg.input_dim is not None and cfg.input_dim != X.shape[1]:
        raise ValueError(f"Config input_dim {cfg.input_dim} does not match encodings of width {X.shape[1]}")

    initial = init_model(cfg, input_dim=X.shape[1])
    weights = [np.array(W) for W in initial.weights]
    biases = [np.array(b) for b in initial.biases]
    targets = _targets(y)
    n = len(X)

    _, _, probs = _forward_cache(weights, biases, X)
    history = [_batch_loss(probs, targets, weights[-1], cfg.l1_lambda)]
    best_epoch = 0
    best_state = ([W.copy() for W in weights], [b.copy() for b in biases])

    logger.info(
        f"Training MLP: {n} examples, input {X.shape[1]}, hidden {layer_widths(cfg)}, "
        f"lr {cfg.learning_rate}, {cfg.max_epochs} epochs, "
        f"{'full batch' if cfg.batch_size is None else f'batch {cfg.batch_size}'}"
    )

    for epoch in range(1, cfg.max_epochs + 1):
        if cfg.batch_size is None or cfg.batch_size >= n:
            batches = [np.arange(n)]
        else:
            order = stage_rng(cfg.seed, "mlp", "batches", epoch).permutation(n)
            batches = [order[i:i + cfg.batch_size] for i in range(0, n, cfg.batch_size)]

        for idx in batches:
            _, grad_w, grad_b = _loss_and_gradients(weights, biases, X[idx], targets[idx], cfg.l1_lambda)
            for i in range(len(weights)):
                weights[i] -= cfg.learning_rate * grad_w[i]
                biases[i] -= cfg.learning_rate * grad_b[i]

        _, _, probs = _forward_cache(weights, biases, X)
        epoch_loss = _batch_loss(probs, targets, weights[-1], cfg.l1_lambda)
        if not math.isfinite(epoch_loss):
            raise TrainingDivergedError(f"Training loss became {epoch_loss} at epoch {epoch}", epoch=epoch)
        if not all(np.all(np.isfinite(W)) for W in weights):
            raise TrainingDivergedError(f"Non-finite weights at epoch {epoch}", epoch=epoch)
        history.append(epoch_loss)

        if epoch_loss < history[best_epoch]:
            best_epoch = epoch
            best_state = ([W.copy() for W in weights], [b.copy() for b in biases])
        logger.debug(f"epoch {epoch}: loss {epoch_loss:.6f}")

    if history[best_epoch] != min(history):
        raise RuntimeError("Best-state loss is not the minimum recorded loss")

    logger.info(
        f"MLP trained: best epoch {best_epoch}, loss {history[best_epoch]:.6f} "
        f"(initial {history[0]:.6f}, final {history[-1]:.6f})"
    )
    return MlpModel(
        input_dim=X.shape[1],
        widths=initial.widths,
        weights=_frozen(best_state[0]),
        biases=_frozen(best_state[1]),
        best_epoch=best_epoch,
        loss_history=tuple(history),
    )


# ---------------------------------------------------------------------------
# Inference
# ---------------------------------------------------------------------------

def problematic_scores(m: MlpModel, X: np.ndarray) -> np.ndarray:
    """p_problematic for each row of X."""
    return forward(m, np.atleast_2d(X))[:, 1]


def classify(m: MlpModel, x: np.ndarray, threshold: float = 0.5) -> Tuple[CellLabel, float]:
    """
    Verdict and score of one encoded cell.

    The cell is problematic iff p_problematic > threshold (a score equal
    to the threshold is normal).
    """
    score = float(forward(m, x)[1])
    label = CellLabel.PROBLEMATIC if score > threshold else CellLabel.NORMAL
    return label, score


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------

def save_model(m: MlpModel, npz_path: Union[str, Path], meta_path: Union[str, Path], cfg: Optional[MlpConfig] = None) -> None:
    """Write weight arrays to .npz and shapes/history/config to JSON."""
    npz_path, meta_path = Path(npz_path), Path(meta_path)
    npz_path.parent.mkdir(parents=True, exist_ok=True)

    arrays = {}
    for i, (W, b) in enumerate(zip(m.weights, m.biases)):
        arrays[f"W{i}"] = np.asarray(W)
        arrays[f"b{i}"] = np.asarray(b)
    # np.savez appends .npz when missing; keep the caller's name exact.
    with open(npz_path, "wb") as f:
        np.savez(f, **arrays)

    meta = {
        "format_version": MODEL_FORMAT_VERSION,
        "input_dim": m.input_dim,
        "widths": list(m.widths),
        "best_epoch": m.best_epoch,
        "loss_history": list(m.loss_history),
        "config": cfg.model_dump() if cfg is not None else None,
    }
    with open(meta_path, "w") as f:
        json.dump(meta, f, indent=2, sort_keys=True)


def load_model(npz_path: Union[str, Path], meta_path: Union[str, Path]) -> MlpModel:
    """Read a model written by save_model."""
    with open(meta_path) as f:
        meta = json.load(f)
    if meta.get("format_version") != MODEL_FORMAT_VERSION:
        raise ValueError(f"Unsupported model format {meta.get('format_version')!r} in {meta_path}")

    n_layers = len(meta["widths"]) + 1
    with np.load(npz_path) as data:
        weights = [data[f"W{i}"] for i in range(n_layers)]
        biases = [data[f"b{i}"] for i in range(n_layers)]
    return MlpModel(
        input_dim=int(meta["input_dim"]),
        widths=tuple(int(w) for w in meta["widths"]),
        weights=_frozen(weights),
        biases=_frozen(biases),
        best_epoch=int(meta["best_epoch"]),
        loss_history=tuple(float(v) for v in meta["loss_history"]),
    )
