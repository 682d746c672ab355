"""Surrogate models fitted to a trial ledger.

Four families, all over the same inputs: log2(hidden units) mapped affinely
from (3, 10) to [0, 1], and the raw dropout rate.

* threshold-filtered linear regression of dropout on log2(units)
* polynomial logistic regression of "good" (low-cost) vs "bad" trials
* surface networks predicting cost or accuracy from a configuration
* an inverse network predicting dropout from (units, cost, accuracy)

The inverse mapping is ill-posed: equal cost and accuracy can be reached
from two different dropout rates at the same width, so no function of
(units, cost, accuracy) recovers dropout. ``fit_inverse`` exists to measure
that failure, not to tune with.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .harness import TrialRecord, completed, normalized_units
from .nn import (AdamConfig, MlpConfig, MlpModel, TrainConfig, _adam_update, _forward_cache, fit_arrays,
                 forward, init_model, sigmoid)
from .sampler import SearchSpace, derive_trial_seed

LOG2_UNITS_LO = 3.0
LOG2_UNITS_HI = 10.0
SURROGATE_LAYERS = 6
SURROGATE_UNITS = 16
SURROGATE_DROPOUT = 0.1


class DegenerateSelectionError(ValueError):
    pass


class FitError(ValueError):
    pass


@dataclass(frozen=True)
class ThresholdSpec:
    kind: str
    value: float

    def __post_init__(self):
        if self.kind == "percentile":
            if not 0 < self.value <= 100:
                raise ValueError(f"percentile must lie in (0, 100], got {self.value}")
        elif self.kind == "numeric":
            if not self.value > 0:
                raise ValueError(f"numeric threshold must be positive, got {self.value}")
        else:
            raise ValueError(f"unknown threshold kind {self.kind!r}")

    def describe(self) -> str:
        return f"{self.value:g}th percentile" if self.kind == "percentile" else f"cost < {self.value:g}"


def nearest_rank(values: Sequence[float], percentile: float) -> float:
    """Nearest-rank percentile: the ``ceil(p/100 * n)``-th smallest value."""
    v = np.sort(np.asarray(values, dtype=np.float64))
    if v.size == 0:
        raise ValueError("no values")
    rank = max(1, math.ceil(percentile / 100.0 * v.size))
    return float(v[rank - 1])


def select_by_threshold(records: Sequence[TrialRecord], spec: ThresholdSpec) -> list[TrialRecord]:
    recs = completed(list(records))
    if not recs:
        raise DegenerateSelectionError("ledger has no completed trials")
    if spec.kind == "numeric":
        chosen = [r for r in recs if r.cost < spec.value]
    else:
        cut = nearest_rank([r.cost for r in recs], spec.value)
        chosen = [r for r in recs if r.cost <= cut]
    if not chosen:
        raise DegenerateSelectionError(f"no trials satisfy threshold {spec.describe()}")
    return chosen


def normalize_inputs(units, dropout) -> np.ndarray:
    return np.column_stack([np.ravel(normalized_units(np.asarray(units, dtype=np.float64))),
                            np.ravel(np.asarray(dropout, dtype=np.float64))])


def _record_inputs(records: Sequence[TrialRecord]) -> np.ndarray:
    return normalize_inputs([r.point.hidden_units for r in records],
                            [r.point.dropout_rate for r in records])


# --- linear -----------------------------------------------------------------

@dataclass(frozen=True)
class LinearModel:
    """``dropout ~ slope * log2(units) + intercept``."""

    slope: float
    intercept: float
    mae: float
    n: int

    def predict(self, units) -> np.ndarray:
        return self.slope * np.log2(np.asarray(units, dtype=np.float64)) + self.intercept


def fit_linear(subset: Sequence[TrialRecord]) -> LinearModel:
    recs = completed(list(subset))
    x = np.log2([r.point.hidden_units for r in recs])
    y = np.array([r.point.dropout_rate for r in recs])
    if len(recs) < 2 or np.ptp(x) == 0:
        raise FitError("linear fit needs at least two distinct unit counts")
    design = np.column_stack([np.ones_like(x), x])
    intercept, slope = np.linalg.solve(design.T @ design, design.T @ y)
    resid = y - (slope * x + intercept)
    return LinearModel(float(slope), float(intercept), float(np.mean(np.abs(resid))), len(recs))


# --- polynomial logistic ----------------------------------------------------

def poly_features(a, b, degree: int) -> np.ndarray:
    """Monomials ``a**(k-j) * b**j`` for k = 0..degree, j = 0..k.

    Scalars give a vector of length ``(degree+1)(degree+2)/2``; arrays give
    one row per element.
    """
    if degree < 1:
        raise ValueError("degree must be >= 1")
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    cols = [a**(k - j) * b**j for k in range(degree + 1) for j in range(k + 1)]
    return np.stack(np.broadcast_arrays(*cols), axis=-1)


@dataclass(frozen=True)
class LogisticConfig:
    learning_rate: float = 0.01
    max_iter: int = 50_000
    grad_tol: float = 1e-6


def fit_logistic_arrays(x: np.ndarray, y: np.ndarray, degree: int,
                        cfg: LogisticConfig = LogisticConfig()) -> tuple[np.ndarray, int]:
    """Full-batch Adam on mean BCE over polynomial features of two inputs.

    Stops when the gradient's max-norm drops below ``cfg.grad_tol`` or after
    ``cfg.max_iter`` steps. Returns the coefficients and the step count.
    """
    y = np.asarray(y, dtype=np.float64).ravel()
    if np.all(y == y[0]):
        raise FitError("logistic fit needs both classes present")
    phi = poly_features(x[:, 0], x[:, 1], degree)
    w = np.zeros(phi.shape[1])
    m_acc = np.zeros_like(w)
    v_acc = np.zeros_like(w)
    adam = AdamConfig(learning_rate=cfg.learning_rate)
    m = len(y)
    it = 0
    for it in range(1, cfg.max_iter + 1):
        grad = phi.T @ (sigmoid(phi @ w) - y) / m
        if np.max(np.abs(grad)) < cfg.grad_tol:
            break
        _adam_update(w, grad, m_acc, v_acc, it, adam)
    return w, it


@dataclass(frozen=True)
class LogisticModel:
    degree: int
    coef: np.ndarray
    percentile: float
    cost_cutoff: float
    train_accuracy: float
    test_accuracy: float | None
    iterations: int

    def __post_init__(self):
        expected = (self.degree + 1) * (self.degree + 2) // 2
        if len(self.coef) != expected:
            raise ValueError(f"degree {self.degree} needs {expected} coefficients, got {len(self.coef)}")

    def predict_proba_normalized(self, x: np.ndarray) -> np.ndarray:
        return sigmoid(poly_features(x[:, 0], x[:, 1], self.degree) @ self.coef)

    def predict_proba(self, units, dropout) -> np.ndarray:
        return self.predict_proba_normalized(normalize_inputs(units, dropout))


def logistic_accuracy(coef: np.ndarray, x: np.ndarray, y: np.ndarray, degree: int) -> float:
    p = sigmoid(poly_features(x[:, 0], x[:, 1], degree) @ coef)
    return float(np.mean((p >= 0.5) == (np.asarray(y) == 1)))


def fit_logistic(records: Sequence[TrialRecord], percentile: float = 25.0, degree: int = 3,
                 cfg: LogisticConfig = LogisticConfig(), holdout: float = 0.2,
                 seed: int = 0) -> LogisticModel:
    """Label trials at or under the cost percentile as 1, fit, and report
    accuracy (as a fraction) on the fitted rows and on a held-out share."""
    recs = completed(list(records))
    if not recs:
        raise FitError("ledger has no completed trials")
    costs = np.array([r.cost for r in recs])
    cut = nearest_rank(costs, percentile)
    y = (costs <= cut).astype(np.float64)
    if y.min() == y.max():
        raise FitError(f"percentile {percentile:g} puts every trial in one class")
    x = _record_inputs(recs)
    train_idx, test_idx = _holdout_indices(len(recs), holdout, seed)
    if np.ptp(y[train_idx]) == 0:
        train_idx, test_idx = np.arange(len(recs)), np.array([], dtype=int)
    coef, iters = fit_logistic_arrays(x[train_idx], y[train_idx], degree, cfg)
    test_acc = logistic_accuracy(coef, x[test_idx], y[test_idx], degree) if len(test_idx) else None
    return LogisticModel(degree, coef, float(percentile), cut,
                         logistic_accuracy(coef, x[train_idx], y[train_idx], degree), test_acc, iters)


# --- neural surrogates --------------------------------------------------------

def _holdout_indices(n: int, fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    if fraction <= 0:
        return np.arange(n), np.array([], dtype=int)
    perm = np.random.default_rng(seed).permutation(n)
    k = max(1, int(round(fraction * n)))
    return np.sort(perm[k:]), np.sort(perm[:k])


def surrogate_train_config(epochs: int = 2000, seed: int = 0) -> TrainConfig:
    return TrainConfig(epochs=epochs, batch_size=128, shuffle_seed=derive_trial_seed(seed, 1),
                       dropout_seed=derive_trial_seed(seed, 2))


def _surrogate_config(input_dim: int, output: str, seed: int) -> MlpConfig:
    return MlpConfig(input_dim=input_dim, hidden_layers=SURROGATE_LAYERS, hidden_units=SURROGATE_UNITS,
                     dropout_rate=SURROGATE_DROPOUT, output_activation=output,
                     init_seed=derive_trial_seed(seed, 0))


@dataclass
class SurfaceSurrogate:
    model: MlpModel
    target: str
    train_mae: float
    held_out_mae: float | None
    n_train: int
    n_test: int
    normalization: dict = field(default_factory=lambda: {"log2_units": [LOG2_UNITS_LO, LOG2_UNITS_HI]})

    def predict_normalized(self, x: np.ndarray) -> np.ndarray:
        out = forward(self.model, x)
        # accuracy targets live on [0, 1]
        return np.clip(out, 0.0, 1.0) if self.target == "accuracy" else out

    def predict(self, units, dropout) -> np.ndarray:
        return self.predict_normalized(normalize_inputs(units, dropout))

    def predict_log2(self, log2_units, dropout) -> np.ndarray:
        x = np.column_stack([(np.ravel(log2_units) - LOG2_UNITS_LO) / (LOG2_UNITS_HI - LOG2_UNITS_LO),
                             np.ravel(dropout)])
        return self.predict_normalized(x)


def _targets(records: Sequence[TrialRecord], target: str) -> np.ndarray:
    if target == "cost":
        return np.array([r.cost for r in records])
    if target == "accuracy":
        return np.array([r.accuracy for r in records]) / 100.0
    raise ValueError(f"unknown surface target {target!r}")


def refit_readout(model: MlpModel, x: np.ndarray, y: np.ndarray, ridge: float = 1e-6) -> MlpModel:
    """Re-solve the linear output layer by ridge least squares on eval-mode features.

    Dropout-trained ReLU stacks shift their activation statistics between
    train and eval mode; with a linear output the shift shows up as a biased,
    mis-scaled prediction. Refitting the last layer on the deterministic
    hidden features removes it without touching the hidden layers.
    """
    if model.config.output_activation != "identity" or model.config.hidden_layers == 0:
        raise ValueError("readout refit needs hidden layers and a linear output")
    _, cache = _forward_cache(model, np.asarray(x, dtype=np.float64), None)
    feats = cache[-1][0]
    design = np.column_stack([feats, np.ones(len(feats))])
    coef = np.linalg.solve(design.T @ design + ridge * np.eye(design.shape[1]), design.T @ y)
    out = model.copy()
    out.weights[-1] = coef[:-1, None]
    out.biases[-1] = coef[-1:].copy()
    return out


def fit_surface(records: Sequence[TrialRecord], target: str = "cost", tcfg: TrainConfig | None = None,
                seed: int = 0, holdout: float = 0.2) -> SurfaceSurrogate:
    """Train the 6x16, dropout-0.1 regression network with MSE on a random
    80% of completed trials; MAE is reported on the remaining 20%.

    The output layer is refitted in eval mode after training (see
    ``refit_readout``).
    """
    recs = completed(list(records))
    if len(recs) < 20:
        raise FitError(f"surface fit needs >= 20 completed trials, got {len(recs)}")
    x = _record_inputs(recs)
    y = _targets(recs, target)
    tcfg = tcfg or surrogate_train_config(seed=seed)
    tr, te = _holdout_indices(len(recs), holdout, seed)
    model = fit_arrays(init_model(_surrogate_config(2, "identity", seed)), x[tr], y[tr], tcfg, loss="mse")
    model = refit_readout(model, x[tr], y[tr])
    sur = SurfaceSurrogate(model, target, 0.0, None, len(tr), len(te))
    sur.train_mae = float(np.mean(np.abs(sur.predict_normalized(x[tr]) - y[tr])))
    if len(te):
        sur.held_out_mae = float(np.mean(np.abs(sur.predict_normalized(x[te]) - y[te])))
    return sur


@dataclass(frozen=True)
class SurfaceGrid:
    """Predictions on a ``len(log2_units) x len(dropout)`` lattice spanning a region."""

    region: SearchSpace
    log2_units: np.ndarray
    dropout: np.ndarray
    values: np.ndarray

    def cell_bounds(self, i: int, j: int) -> tuple[tuple[float, float], tuple[float, float]]:
        """Box around lattice point (i, j): halfway to each neighbour, clipped to the region."""
        return _cell_axis(self.log2_units, i), _cell_axis(self.dropout, j)


def _cell_axis(axis: np.ndarray, i: int) -> tuple[float, float]:
    lo = axis[0] if i == 0 else 0.5 * (axis[i - 1] + axis[i])
    hi = axis[-1] if i == len(axis) - 1 else 0.5 * (axis[i] + axis[i + 1])
    return float(lo), float(hi)


def grid_axes(region: SearchSpace, resolution: int) -> tuple[np.ndarray, np.ndarray]:
    """Inclusive lattices; resolution ``2r - 1`` contains every point of resolution ``r``."""
    if resolution < 2:
        raise ValueError("resolution must be >= 2")
    return (np.linspace(*region.log2_units_range, resolution),
            np.linspace(*region.dropout_range, resolution))


def predict_surface(model, region: SearchSpace, resolution: int = 64) -> SurfaceGrid:
    """Evaluate a surrogate (anything with ``predict_log2``) over the region lattice."""
    lu, dr = grid_axes(region, resolution)
    uu, dd = np.meshgrid(lu, dr, indexing="ij")
    values = np.asarray(model.predict_log2(uu.ravel(), dd.ravel())).reshape(uu.shape)
    return SurfaceGrid(region, lu, dr, values)


@dataclass
class InverseModel:
    model: MlpModel
    train_mae: float
    test_mae: float | None
    n_train: int
    n_test: int
    normalization: dict = field(default_factory=lambda: {"log2_units": [LOG2_UNITS_LO, LOG2_UNITS_HI],
                                                          "accuracy_scale": 0.01})

    def predict_normalized(self, x: np.ndarray) -> np.ndarray:
        eps = 1e-9
        return np.clip(forward(self.model, x), eps, 1.0 - eps)


def _inverse_inputs(units, cost, accuracy) -> np.ndarray:
    return np.column_stack([np.ravel(normalized_units(np.asarray(units, dtype=np.float64))),
                            np.ravel(np.asarray(cost, dtype=np.float64)),
                            np.ravel(np.asarray(accuracy, dtype=np.float64)) / 100.0])


def fit_inverse(records: Sequence[TrialRecord], tcfg: TrainConfig | None = None, seed: int = 0,
                holdout: float = 0.2) -> InverseModel:
    """Regress dropout on (units, cost, accuracy) with a sigmoid-output 6x16 network."""
    recs = completed(list(records))
    if len(recs) < 20:
        raise FitError(f"inverse fit needs >= 20 completed trials, got {len(recs)}")
    x = _inverse_inputs([r.point.hidden_units for r in recs], [r.cost for r in recs],
                        [r.accuracy for r in recs])
    y = np.array([r.point.dropout_rate for r in recs])
    tcfg = tcfg or surrogate_train_config(seed=seed)
    tr, te = _holdout_indices(len(recs), holdout, seed)
    model = fit_arrays(init_model(_surrogate_config(3, "sigmoid", seed)), x[tr], y[tr], tcfg, loss="mse")
    inv = InverseModel(model, 0.0, None, len(tr), len(te))
    inv.train_mae = float(np.mean(np.abs(inv.predict_normalized(x[tr]) - y[tr])))
    if len(te):
        inv.test_mae = float(np.mean(np.abs(inv.predict_normalized(x[te]) - y[te])))
    return inv


def predict_inverse(model: InverseModel, units, desired_cost, desired_accuracy) -> np.ndarray:
    """Dropout in (0, 1) for each width; cost and accuracy broadcast against ``units``."""
    units = np.atleast_1d(np.asarray(units, dtype=np.float64))
    cost = np.broadcast_to(desired_cost, units.shape)
    acc = np.broadcast_to(desired_accuracy, units.shape)
    return model.predict_normalized(_inverse_inputs(units, cost, acc))


# --- serialization ------------------------------------------------------------

def _mlp_doc(model: MlpModel) -> dict:
    c = model.config
    return {
        "architecture": {
            "input_dim": c.input_dim,
            "hidden_layers": c.hidden_layers,
            "hidden_units": c.hidden_units,
            "dropout_rate": c.dropout_rate,
            "hidden_activation": c.hidden_activation,
            "output_activation": c.output_activation,
            "init_seed": str(c.init_seed),
        },
        # row-major, [W0, b0, W1, b1, ...]
        "params": [p.ravel().tolist() for p in model.params()],
    }


def _mlp_from_doc(doc: dict) -> MlpModel:
    a = dict(doc["architecture"])
    a["init_seed"] = int(a["init_seed"])
    cfg = MlpConfig(**a)
    sizes = cfg.layer_sizes
    shapes = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        shapes.extend([(fan_in, fan_out), (fan_out,)])
    if len(shapes) != len(doc["params"]):
        raise ValueError("parameter count does not match architecture")
    params = [np.array(p, dtype=np.float64).reshape(s) for p, s in zip(doc["params"], shapes)]
    return MlpModel(cfg, params[0::2], params[1::2])


def model_to_dict(model) -> dict:
    if isinstance(model, LinearModel):
        return {"family": "linear", "slope": model.slope, "intercept": model.intercept,
                "mae": model.mae, "n": model.n, "x": "log2_units"}
    if isinstance(model, LogisticModel):
        return {"family": "logistic", "degree": model.degree, "coef": model.coef.tolist(),
                "feature_order": "graded-lex, constant first", "percentile": model.percentile,
                "cost_cutoff": model.cost_cutoff, "train_accuracy": model.train_accuracy,
                "test_accuracy": model.test_accuracy, "iterations": model.iterations,
                "normalization": {"log2_units": [LOG2_UNITS_LO, LOG2_UNITS_HI]}}
    if isinstance(model, SurfaceSurrogate):
        return {"family": "surface", "target": model.target, "train_mae": model.train_mae,
                "held_out_mae": model.held_out_mae, "n_train": model.n_train, "n_test": model.n_test,
                "normalization": model.normalization, **_mlp_doc(model.model)}
    if isinstance(model, InverseModel):
        return {"family": "inverse", "train_mae": model.train_mae, "test_mae": model.test_mae,
                "n_train": model.n_train, "n_test": model.n_test,
                "normalization": model.normalization, **_mlp_doc(model.model)}
    raise TypeError(f"cannot serialize {type(model).__name__}")


def model_from_dict(doc: dict):
    family = doc.get("family")
    if family == "linear":
        return LinearModel(doc["slope"], doc["intercept"], doc["mae"], doc["n"])
    if family == "logistic":
        return LogisticModel(doc["degree"], np.array(doc["coef"]), doc["percentile"], doc["cost_cutoff"],
                             doc["train_accuracy"], doc["test_accuracy"], doc["iterations"])
    if family == "surface":
        return SurfaceSurrogate(_mlp_from_doc(doc), doc["target"], doc["train_mae"], doc["held_out_mae"],
                                doc["n_train"], doc["n_test"], doc["normalization"])
    if family == "inverse":
        return InverseModel(_mlp_from_doc(doc), doc["train_mae"], doc["test_mae"], doc["n_train"],
                            doc["n_test"], doc["normalization"])
    raise ValueError(f"unknown model family {family!r}")


def save_model(model, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(model_to_dict(model), indent=1, allow_nan=False) + "\n", encoding="utf-8")


def load_model(path: str | Path):
    return model_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
