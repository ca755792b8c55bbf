"""Compact 1-D CNN regressor written directly in numpy.

Four valid (unpadded) convolutions with kernel sizes 13, 11, 9, 7 and output
channels 8, 16, 8, 2. ReLU follows the first three; the final 2-channel map
is averaged over time to give (x, y). With three APs the network has 3018
parameters and a receptive field of 37 samples.

Tensors are channels-last inside this module: a batch is (B, T, C).
"""
from __future__ import annotations

import enum
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from ..errors import Diverged, ShapeError, ValidationError
from ..seeding import derive_rng

KERNEL_SIZES = (13, 11, 9, 7)
CHANNEL_SIZES = (8, 16, 8, 2)
RECEPTIVE_FIELD = sum(KERNEL_SIZES) - len(KERNEL_SIZES) + 1


@dataclass
class CnnModel:
    """Weights ``W[l]`` of shape (out, in, k) and biases ``b[l]`` of shape (out,)."""

    input_channels: int
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @property
    def num_parameters(self) -> int:
        return int(sum(w.size + b.size for w, b in zip(self.weights, self.biases)))

    def parameters(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def to_vector(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.parameters()])

    def set_vector(self, vec: np.ndarray) -> None:
        pos = 0
        for p in self.parameters():
            p[...] = vec[pos: pos + p.size].reshape(p.shape)
            pos += p.size

    def copy(self) -> "CnnModel":
        return CnnModel(self.input_channels, [w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def payload(self) -> dict[str, np.ndarray]:
        d = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            d[f"W{i + 1}"] = w
            d[f"b{i + 1}"] = b
        return d

    @classmethod
    def from_payload(cls, payload: dict[str, np.ndarray]) -> "CnnModel":
        weights = [np.asarray(payload[f"W{i + 1}"], dtype=float) for i in range(len(KERNEL_SIZES))]
        biases = [np.asarray(payload[f"b{i + 1}"], dtype=float) for i in range(len(KERNEL_SIZES))]
        for i, (w, k, c) in enumerate(zip(weights, KERNEL_SIZES, CHANNEL_SIZES)):
            if w.shape[0] != c or w.shape[2] != k:
                raise ShapeError(f"layer {i + 1} weight shape {w.shape} does not match the architecture")
        return cls(weights[0].shape[1], weights, biases)


def init_cnn(input_channels: int, seed: int = 0) -> CnnModel:
    """Uniform init in +-1/sqrt(fan_in) for weights and biases."""
    if input_channels < 1:
        raise ValidationError("input_channels must be >= 1")
    rng = derive_rng(seed, "cnn_init")
    weights, biases = [], []
    c_in = input_channels
    for k, c_out in zip(KERNEL_SIZES, CHANNEL_SIZES):
        bound = 1.0 / math.sqrt(c_in * k)
        weights.append(rng.uniform(-bound, bound, size=(c_out, c_in, k)))
        biases.append(rng.uniform(-bound, bound, size=c_out))
        c_in = c_out
    return CnnModel(input_channels, weights, biases)


def zeros_like(model: CnnModel) -> CnnModel:
    return CnnModel(model.input_channels, [np.zeros_like(w) for w in model.weights],
                    [np.zeros_like(b) for b in model.biases])


def _check_input(model: CnnModel, X) -> np.ndarray:
    X = np.asarray(X)
    if X.ndim != 3:
        raise ShapeError(f"expected a (batch, channels, time) array, got shape {X.shape}")
    if X.shape[1] != model.input_channels:
        raise ShapeError(f"expected {model.input_channels} channels, got {X.shape[1]}")
    if X.shape[2] < RECEPTIVE_FIELD:
        raise ShapeError(f"window length {X.shape[2]} is shorter than the receptive field {RECEPTIVE_FIELD}")
    return X


def _conv(x: np.ndarray, w: np.ndarray, b: np.ndarray):
    """Valid cross-correlation. x: (B, T, C), w: (O, C, k) -> (B, T-k+1, O), cols."""
    bsz, t, c = x.shape
    o, _, k = w.shape
    t_out = t - k + 1
    cols = np.lib.stride_tricks.sliding_window_view(x, k, axis=1).reshape(bsz * t_out, c * k)
    out = cols @ w.reshape(o, c * k).T + b
    return out.reshape(bsz, t_out, o), cols


@dataclass
class _Cache:
    inputs: list  # layer inputs (B, T, C)
    cols: list
    pre: list  # pre-activations


def _forward(model: CnnModel, X: np.ndarray, dtype=np.float64):
    h = np.ascontiguousarray(np.swapaxes(X, 1, 2), dtype=dtype)
    inputs, cols, pre = [], [], []
    last = len(model.weights) - 1
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        inputs.append(h)
        z, c = _conv(h, w.astype(dtype, copy=False), b.astype(dtype, copy=False))
        cols.append(c)
        pre.append(z)
        h = np.maximum(z, 0.0) if i < last else z
    return h.mean(axis=1), _Cache(inputs, cols, pre)


def cnn_feature_maps(model: CnnModel, X) -> np.ndarray:
    """Final 2-channel map before temporal pooling, (B, 2, T_out)."""
    X = _check_input(model, X)
    _, cache = _forward(model, X)
    return np.swapaxes(cache.pre[-1], 1, 2)


def cnn_forward(model: CnnModel, X, single_precision: bool = False) -> np.ndarray:
    """Predict (B, 2) positions from (B, channels, time) windows."""
    X = _check_input(model, X)
    out, _ = _forward(model, X, np.float32 if single_precision else np.float64)
    return out.astype(np.float64)


def cnn_backward(model: CnnModel, cache: _Cache, dpred: np.ndarray) -> CnnModel:
    """Backpropagate ``dpred = dL/dprediction`` (B, 2); returns gradients shaped like the model."""
    grads = zeros_like(model)
    bsz, t_out, o = cache.pre[-1].shape
    dz = np.repeat(dpred[:, None, :] / t_out, t_out, axis=1)
    for i in range(len(model.weights) - 1, -1, -1):
        w = model.weights[i]
        o, c, k = w.shape
        dz2 = dz.reshape(-1, o)
        grads.weights[i][...] = (dz2.T @ cache.cols[i]).reshape(o, c, k)
        grads.biases[i][...] = dz2.sum(axis=0)
        if i == 0:
            break
        dcols = (dz2 @ w.reshape(o, c * k)).reshape(bsz, -1, c, k)
        t_in = cache.inputs[i].shape[1]
        dh = np.zeros((bsz, t_in, c))
        t_o = dcols.shape[1]
        for j in range(k):
            dh[:, j: j + t_o, :] += dcols[:, :, :, j]
        dz = dh * (cache.pre[i - 1] > 0)
    return grads


def mse_loss(pred: np.ndarray, target: np.ndarray) -> float:
    """Mean over batch and both coordinates of the squared error."""
    return float(np.mean((pred - target) ** 2))


def loss_and_grads(model: CnnModel, X, Y) -> tuple[float, CnnModel]:
    X = _check_input(model, X)
    Y = np.asarray(Y, dtype=float)
    if Y.shape != (X.shape[0], 2):
        raise ShapeError(f"labels must be ({X.shape[0]}, 2), got {Y.shape}")
    pred, cache = _forward(model, X)
    diff = pred - Y
    grads = cnn_backward(model, cache, 2.0 * diff / diff.size)
    return float(np.mean(diff ** 2)), grads


# -- training -------------------------------------------------------------------


class Optimizer(str, enum.Enum):
    SGD = "sgd"
    ADAM = "adam"


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 300
    batch_size: int = 32
    learning_rate: float = 1e-3
    optimizer: Optimizer = Optimizer.ADAM
    init: str = "uniform_fan_in"
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    # "constant" or "cosine" (annealed to zero over all steps)
    lr_schedule: str = "constant"

    def __post_init__(self):
        object.__setattr__(self, "optimizer", Optimizer(self.optimizer))
        if self.lr_schedule not in ("constant", "cosine"):
            raise ValidationError(f"unknown lr_schedule {self.lr_schedule!r}")
        if not self.learning_rate >= 0:
            raise ValidationError("learning_rate must be >= 0")
        if self.batch_size < 1:
            raise ValidationError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ValidationError("epochs must be >= 0")
        if self.init != "uniform_fan_in":
            raise ValidationError(f"unknown init scheme {self.init!r}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["optimizer"] = self.optimizer.value
        return d


@dataclass
class TrainResult:
    model: CnnModel
    # history[0] is the loss of the initial model on the full training set,
    # history[e] the mean minibatch loss during epoch e
    history: list[float] = field(default_factory=list)


def train_cnn(X, Y, cfg: TrainConfig = TrainConfig(), model: CnnModel | None = None) -> TrainResult:
    """Minibatch training on normalized windows ``X`` (B, C, T) and labels ``Y`` (B, 2).

    Deterministic for a given (data, cfg): shuffling uses the stream
    ``(cfg.seed, "shuffle", epoch)``.

    Raises:
        Diverged: a minibatch loss became non-finite.
    """
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if len(X) == 0:
        raise ValidationError("training set is empty")
    model = init_cnn(X.shape[1], cfg.seed) if model is None else model.copy()
    _check_input(model, X)
    n = len(X)
    params = model.parameters()
    m1 = [np.zeros_like(p) for p in params]
    m2 = [np.zeros_like(p) for p in params]
    step = 0
    total_steps = cfg.epochs * math.ceil(n / cfg.batch_size)
    init_loss = mse_loss(cnn_forward(model, X), Y)
    history = [init_loss]
    for epoch in range(1, cfg.epochs + 1):
        order = derive_rng(cfg.seed, "shuffle", epoch).permutation(n)
        total = 0.0
        for s in range(0, n, cfg.batch_size):
            idx = order[s: s + cfg.batch_size]
            loss, g = loss_and_grads(model, X[idx], Y[idx])
            if not math.isfinite(loss):
                raise Diverged(epoch, loss)
            total += loss * len(idx)
            lr = cfg.learning_rate
            if cfg.lr_schedule == "cosine":
                lr *= 0.5 * (1.0 + math.cos(math.pi * step / total_steps))
            step += 1
            for p, gp, a, v in zip(params, g.parameters(), m1, m2):
                if cfg.optimizer is Optimizer.SGD:
                    p -= lr * gp
                    continue
                a *= cfg.beta1
                a += (1 - cfg.beta1) * gp
                v *= cfg.beta2
                v += (1 - cfg.beta2) * gp * gp
                a_hat = a / (1 - cfg.beta1 ** step)
                v_hat = v / (1 - cfg.beta2 ** step)
                p -= lr * a_hat / (np.sqrt(v_hat) + cfg.adam_eps)
        epoch_loss = total / n
        if not math.isfinite(epoch_loss):
            raise Diverged(epoch, epoch_loss)
        history.append(epoch_loss)
    return TrainResult(model, history)
