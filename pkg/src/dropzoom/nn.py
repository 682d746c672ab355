"""Dense feed-forward networks in numpy: Xavier init, inverted dropout, Adam.

Layers are stored as parallel lists of weight matrices ``(fan_in, fan_out)``
and bias vectors. Everything runs in float64.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

PROB_CLAMP = 1e-7
HIDDEN_ACTIVATIONS = ("relu",)
OUTPUT_ACTIVATIONS = ("sigmoid", "identity")
LOSSES = ("bce", "mse")


class ShapeError(ValueError):
    pass


class NumericError(ArithmeticError):
    def __init__(self, message: str, layer: int):
        super().__init__(message)
        self.layer = layer


class DivergedError(ArithmeticError):
    def __init__(self, epoch: int, cost: float):
        super().__init__(f"training diverged at epoch {epoch} (cost={cost})")
        self.epoch = epoch
        self.cost = cost


@dataclass(frozen=True)
class MlpConfig:
    input_dim: int
    hidden_layers: int = 6
    hidden_units: int = 16
    dropout_rate: float = 0.0
    hidden_activation: str = "relu"
    output_activation: str = "sigmoid"
    init_seed: int = 0

    def __post_init__(self):
        if self.input_dim < 1:
            raise ValueError("input_dim must be >= 1")
        # 0 hidden layers gives plain logistic/linear regression; used by tests
        if self.hidden_layers < 0:
            raise ValueError("hidden_layers must be >= 0")
        if self.hidden_units < 1:
            raise ValueError("hidden_units must be >= 1")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError(f"dropout_rate must lie in [0, 1), got {self.dropout_rate}")
        if self.hidden_activation not in HIDDEN_ACTIVATIONS:
            raise ValueError(f"unsupported hidden activation {self.hidden_activation!r}")
        if self.output_activation not in OUTPUT_ACTIVATIONS:
            raise ValueError(f"unsupported output activation {self.output_activation!r}")

    @property
    def layer_sizes(self) -> list[int]:
        return [self.input_dim] + [self.hidden_units] * self.hidden_layers + [1]


@dataclass
class MlpModel:
    config: MlpConfig
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def __post_init__(self):
        sizes = self.config.layer_sizes
        if len(self.weights) != len(sizes) - 1 or len(self.biases) != len(sizes) - 1:
            raise ShapeError("layer count does not match config")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (sizes[i], sizes[i + 1]) or b.shape != (sizes[i + 1],):
                raise ShapeError(
                    f"layer {i}: expected W{(sizes[i], sizes[i + 1])}, b({sizes[i + 1]},), "
                    f"got W{w.shape}, b{b.shape}"
                )

    def params(self) -> list[np.ndarray]:
        """Flat parameter list ``[W0, b0, W1, b1, ...]``."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def with_params(self, params: list[np.ndarray]) -> "MlpModel":
        return MlpModel(self.config, list(params[0::2]), list(params[1::2]))

    def copy(self) -> "MlpModel":
        return self.with_params([p.copy() for p in self.params()])


@dataclass(frozen=True)
class AdamConfig:
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    def __post_init__(self):
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("Adam betas must lie in (0, 1)")
        if self.learning_rate <= 0 or self.epsilon <= 0:
            raise ValueError("learning_rate and epsilon must be positive")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 150
    batch_size: int = 128
    adam: AdamConfig = field(default_factory=AdamConfig)
    shuffle_seed: int = 0
    dropout_seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0

    @classmethod
    def zeros_like(cls, params: list[np.ndarray]) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], 0)


@dataclass(frozen=True)
class Metrics:
    cost: float
    accuracy: float


def sigmoid(z: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def xavier_init(fan_in: int, fan_out: int, rng: np.random.Generator) -> np.ndarray:
    """Glorot-uniform matrix with entries in ``[-L, L]``, ``L = sqrt(6 / (fan_in + fan_out))``."""
    if fan_in < 1 or fan_out < 1:
        raise ValueError("fan_in and fan_out must be >= 1")
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def init_model(config: MlpConfig) -> MlpModel:
    rng = np.random.default_rng(config.init_seed)
    sizes = config.layer_sizes
    weights = [xavier_init(a, b, rng) for a, b in zip(sizes[:-1], sizes[1:])]
    biases = [np.zeros(b) for b in sizes[1:]]
    return MlpModel(config, weights, biases)


def sample_masks(model: MlpModel, batch_size: int, rng: np.random.Generator) -> list[np.ndarray] | None:
    """Inverted-dropout masks, one ``(batch, units)`` array per hidden layer.

    Kept units carry the value ``1 / (1 - p)``; dropped units are 0. Returns
    None when the model has no dropout, so training reduces to eval mode.
    """
    p = model.config.dropout_rate
    if p == 0.0:
        return None
    scale = 1.0 / (1.0 - p)
    return [
        (rng.random((batch_size, w.shape[1])) >= p) * scale
        for w in model.weights[:-1]
    ]


def _check_input(model: MlpModel, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != model.config.input_dim:
        raise ShapeError(f"expected batch with {model.config.input_dim} columns, got shape {x.shape}")
    return x


def _forward_cache(model: MlpModel, x: np.ndarray, masks):
    # cache holds (layer input, pre-activation) per layer
    cache = []
    a = x
    n_hidden = len(model.weights) - 1
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = a @ w + b
        cache.append((a, z))
        if i < n_hidden:
            a = np.maximum(z, 0.0)
            if masks is not None:
                a = a * masks[i]
        else:
            a = sigmoid(z) if model.config.output_activation == "sigmoid" else z
    return a[:, 0], cache


def forward(model: MlpModel, x: np.ndarray, rng: np.random.Generator | None = None,
            masks: list[np.ndarray] | None = None) -> np.ndarray:
    """Predict one value per row.

    Eval mode (no ``rng`` and no ``masks``) skips dropout entirely. Passing an
    ``rng`` draws fresh inverted-dropout masks; passing ``masks`` reuses them.
    """
    x = _check_input(model, x)
    if masks is None and rng is not None:
        masks = sample_masks(model, x.shape[0], rng)
    out, _ = _forward_cache(model, x, masks)
    return out


def _check_pair(predictions, labels) -> tuple[np.ndarray, np.ndarray]:
    h = np.asarray(predictions, dtype=np.float64).ravel()
    y = np.asarray(labels, dtype=np.float64).ravel()
    if h.size == 0:
        raise ValueError("empty input")
    if h.shape != y.shape:
        raise ShapeError(f"predictions {h.shape} and labels {y.shape} differ")
    return h, y


def bce_cost(predictions, labels) -> float:
    h, y = _check_pair(predictions, labels)
    h = np.clip(h, PROB_CLAMP, 1.0 - PROB_CLAMP)
    return float(-np.mean(y * np.log(h) + (1.0 - y) * np.log(1.0 - h)))


def mse_cost(predictions, targets) -> float:
    h, y = _check_pair(predictions, targets)
    return float(np.mean((h - y) ** 2))


def binary_accuracy(predictions, labels) -> float:
    """Percent of rows where ``h >= 0.5`` matches the 0/1 label."""
    h, y = _check_pair(predictions, labels)
    return float(100.0 * np.mean((h >= 0.5) == (y == 1.0)))


def _loss_value(loss: str, h: np.ndarray, y: np.ndarray) -> float:
    return bce_cost(h, y) if loss == "bce" else mse_cost(h, y)


def _output_delta(model: MlpModel, loss: str, h: np.ndarray, z: np.ndarray, y: np.ndarray) -> np.ndarray:
    m = h.shape[0]
    sig = model.config.output_activation == "sigmoid"
    if loss == "bce":
        if not sig:
            raise ValueError("bce loss requires a sigmoid output")
        return ((h - y) / m)[:, None]
    if loss != "mse":
        raise ValueError(f"unknown loss {loss!r}")
    d = 2.0 * (h - y) / m
    if sig:
        d = d * h * (1.0 - h)
    return d[:, None]


def _backward_cache(model: MlpModel, cache, masks, delta: np.ndarray) -> list[np.ndarray]:
    grads: list[np.ndarray] = [None] * (2 * len(model.weights))  # type: ignore[list-item]
    for i in range(len(model.weights) - 1, -1, -1):
        a_in, _ = cache[i]
        grads[2 * i] = a_in.T @ delta
        grads[2 * i + 1] = delta.sum(axis=0)
        if i > 0:
            da = delta @ model.weights[i].T
            if masks is not None:
                da = da * masks[i - 1]
            delta = da * (cache[i - 1][1] > 0)
    return grads


def backward(model: MlpModel, x: np.ndarray, labels: np.ndarray,
             masks: list[np.ndarray] | None = None, loss: str = "bce") -> list[np.ndarray]:
    """Batch-averaged gradients in ``model.params()`` order.

    ``masks`` must be the ones used for the matching forward pass (None for
    eval mode).
    """
    x = _check_input(model, x)
    y = np.asarray(labels, dtype=np.float64).ravel()
    if y.shape[0] != x.shape[0]:
        raise ShapeError(f"{x.shape[0]} rows but {y.shape[0]} labels")
    h, cache = _forward_cache(model, x, masks)
    delta = _output_delta(model, loss, h, cache[-1][1][:, 0], y)
    return _backward_cache(model, cache, masks, delta)


def _adam_update(p, g, m, v, t: int, cfg: AdamConfig):
    """One bias-corrected Adam update, in place on ``p``, ``m`` and ``v``."""
    b1, b2 = cfg.beta1, cfg.beta2
    m *= b1
    m += (1.0 - b1) * g
    v *= b2
    v += (1.0 - b2) * (g * g)
    p -= cfg.learning_rate * (m / (1.0 - b1**t)) / (np.sqrt(v / (1.0 - b2**t)) + cfg.epsilon)


def adam_step(params: list[np.ndarray], grads: list[np.ndarray], state: AdamState,
              cfg: AdamConfig) -> tuple[list[np.ndarray], AdamState]:
    """Return updated copies of ``params`` and a new state with ``t + 1``."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ShapeError("params, grads and state differ in length")
    for i, g in enumerate(grads):
        if g.shape != params[i].shape:
            raise ShapeError(f"gradient {i} has shape {g.shape}, expected {params[i].shape}")
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient in layer {i // 2}", layer=i // 2)
    t = state.t + 1
    new_params = [np.array(p, dtype=np.float64) for p in params]
    new_m = [m.copy() for m in state.m]
    new_v = [v.copy() for v in state.v]
    for p, g, m, v in zip(new_params, grads, new_m, new_v):
        _adam_update(p, g, m, v, t, cfg)
    return new_params, AdamState(new_m, new_v, t)


def _flat_views(model: MlpModel) -> tuple[np.ndarray, MlpModel]:
    # one contiguous buffer so the optimizer touches a single array per step
    params = model.params()
    flat = np.concatenate([p.ravel() for p in params])
    views, offset = [], 0
    for p in params:
        views.append(flat[offset:offset + p.size].reshape(p.shape))
        offset += p.size
    return flat, model.with_params(views)


def fit_arrays(model: MlpModel, x: np.ndarray, y: np.ndarray, tcfg: TrainConfig,
               loss: str = "bce") -> MlpModel:
    """Mini-batch Adam over ``tcfg.epochs`` shuffled epochs; the last partial batch is kept.

    Returns a new model; the input model is not modified.
    """
    x = _check_input(model, x)
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.shape[0] == 0 or y.shape[0] != x.shape[0]:
        raise ShapeError("training data must be non-empty with one target per row")
    shuffle_rng = np.random.default_rng(tcfg.shuffle_seed)
    dropout_rng = np.random.default_rng(tcfg.dropout_seed)
    flat, model = _flat_views(model)
    sizes = [p.size for p in model.params()]
    m_acc = np.zeros_like(flat)
    v_acc = np.zeros_like(flat)
    t = 0
    m = x.shape[0]
    bs = tcfg.batch_size
    # overflow shows up as inf/nan and is raised as DivergedError below
    with np.errstate(over="ignore", invalid="ignore"):
        for epoch in range(tcfg.epochs):
            order = shuffle_rng.permutation(m)
            total = 0.0
            for start in range(0, m, bs):
                idx = order[start:start + bs]
                xb, yb = x[idx], y[idx]
                masks = sample_masks(model, len(idx), dropout_rng)
                h, cache = _forward_cache(model, xb, masks)
                total += _loss_value(loss, h, yb) * len(idx)
                delta = _output_delta(model, loss, h, cache[-1][1][:, 0], yb)
                grad = np.concatenate([g.ravel() for g in _backward_cache(model, cache, masks, delta)])
                if not np.all(np.isfinite(grad)):
                    bad = int(np.searchsorted(np.cumsum(sizes), np.flatnonzero(~np.isfinite(grad))[0], side="right"))
                    raise DivergedError(epoch, float("nan")) from NumericError(
                        f"non-finite gradient in layer {bad // 2}", layer=bad // 2)
                t += 1
                _adam_update(flat, grad, m_acc, v_acc, t, tcfg.adam)
            if not math.isfinite(total):
                raise DivergedError(epoch, total)
    return model.copy()


def evaluate(model: MlpModel, x: np.ndarray, labels: np.ndarray) -> Metrics:
    h = forward(model, x)
    return Metrics(bce_cost(h, labels), binary_accuracy(h, labels))


def train(mcfg: MlpConfig, tcfg: TrainConfig, train_set, val_set) -> tuple[MlpModel, Metrics]:
    """Train a fresh classifier and report validation BCE / accuracy in eval mode."""
    if len(train_set.labels) == 0 or len(val_set.labels) == 0:
        raise ValueError("train and validation sets must be non-empty")
    model = fit_arrays(init_model(mcfg), train_set.features, train_set.labels, tcfg, loss="bce")
    metrics = evaluate(model, val_set.features, val_set.labels)
    if not math.isfinite(metrics.cost):
        raise DivergedError(tcfg.epochs - 1, metrics.cost)
    return model, metrics

