"""Trial runner with a crash-tolerant JSON-lines ledger.

Each ledger line is one trial::

    {"trial": 0, "units": 90, "dropout": 0.31, "cost": 0.54, "accuracy": 73.1,
     "epochs": 150, "seed": "1234567890123", "wall_seconds": 0.0}

Diverged trials keep their line with ``cost``/``accuracy`` set to null and an
extra ``"skipped"`` reason. The 64-bit seed is a decimal string so JSON
readers that parse numbers as doubles cannot corrupt it.
"""

from __future__ import annotations

import json
import math
import os
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Protocol

import numpy as np

from .nn import DivergedError, MlpConfig, TrainConfig, train
from .sampler import HyperPoint, SearchSpace, derive_trial_seed, sample_point

FIELDS = ("trial", "units", "dropout", "cost", "accuracy", "epochs", "seed", "wall_seconds")


class LedgerIntegrityError(ValueError):
    pass


class LedgerWarning(UserWarning):
    pass


@dataclass(frozen=True)
class TrialRecord:
    trial_index: int
    point: HyperPoint
    cost: float | None
    accuracy: float | None
    epochs: int
    seed: int
    wall_seconds: float = 0.0
    skipped: str | None = None

    def __post_init__(self):
        if self.skipped is None:
            if self.cost is None or self.accuracy is None:
                raise ValueError("completed trial needs cost and accuracy")
            if not (self.cost >= 0 and math.isfinite(self.cost)):
                raise ValueError(f"cost must be finite and >= 0, got {self.cost}")
            if not 0 <= self.accuracy <= 100:
                raise ValueError(f"accuracy must lie in [0, 100], got {self.accuracy}")

    @property
    def ok(self) -> bool:
        return self.skipped is None

    def to_json(self) -> str:
        doc = {
            "trial": self.trial_index,
            "units": self.point.hidden_units,
            "dropout": self.point.dropout_rate,
            "cost": self.cost,
            "accuracy": self.accuracy,
            "epochs": self.epochs,
            "seed": str(self.seed),
            "wall_seconds": self.wall_seconds,
        }
        if self.skipped is not None:
            doc["skipped"] = self.skipped
        return json.dumps(doc, allow_nan=False)

    @classmethod
    def from_json(cls, line: str) -> "TrialRecord":
        doc = json.loads(line)
        if not isinstance(doc, dict):
            raise ValueError("ledger line is not an object")
        missing = [f for f in FIELDS if f not in doc]
        if missing:
            raise ValueError(f"missing fields {missing}")
        extra = set(doc) - set(FIELDS) - {"skipped"}
        if extra:
            raise ValueError(f"unexpected fields {sorted(extra)}")
        return cls(
            trial_index=int(doc["trial"]),
            point=HyperPoint(int(doc["units"]), float(doc["dropout"])),
            cost=None if doc["cost"] is None else float(doc["cost"]),
            accuracy=None if doc["accuracy"] is None else float(doc["accuracy"]),
            epochs=int(doc["epochs"]),
            seed=int(doc["seed"]),
            wall_seconds=float(doc["wall_seconds"]),
            skipped=doc.get("skipped"),
        )


class Evaluator(Protocol):
    epochs: int

    def evaluate(self, point: HyperPoint, seed: int) -> tuple[float, float]:
        """Return ``(cost, accuracy_percent)``; must be deterministic in its arguments."""
        ...


def normalized_units(units) -> np.ndarray | float:
    """Map log2(units) affinely from (3, 10) onto (0, 1)."""
    return (np.log2(units) - 3.0) / 7.0


@dataclass(frozen=True)
class SimulatedEvaluator:
    """Analytic stand-in for training: ``f = (u - cu)^2 + (d - cd)^2`` in normalized units.

    With ``noise > 0`` the observed cost is ``f + noise + U(-noise, noise)``:
    additive uniform noise shifted up by its amplitude so costs stay
    non-negative. The shift is common to every trial, so rankings match plain
    ``f + U(-noise, noise)``. Accuracy is ``100 * (1 - min(cost, 1))``.
    """

    center_units: float = 0.5
    center_dropout: float = 0.3
    noise: float = 0.0
    epochs: int = 0

    def true_cost(self, units, dropout):
        u = normalized_units(np.asarray(units, dtype=np.float64))
        return (u - self.center_units) ** 2 + (np.asarray(dropout) - self.center_dropout) ** 2

    def evaluate(self, point: HyperPoint, seed: int) -> tuple[float, float]:
        cost = float(self.true_cost(point.hidden_units, point.dropout_rate))
        if self.noise > 0:
            cost += self.noise + float(np.random.default_rng(seed).uniform(-self.noise, self.noise))
        return cost, 100.0 * (1.0 - min(cost, 1.0))


def bowl_evaluator(noise: float = 0.0) -> SimulatedEvaluator:
    return SimulatedEvaluator(0.5, 0.3, noise)


def symmetric_evaluator(noise: float = 0.0) -> SimulatedEvaluator:
    """Bowl centred at dropout 0.5, so ``d`` and ``1 - d`` cost the same."""
    return SimulatedEvaluator(0.5, 0.5, noise)


@dataclass(frozen=True)
class TrainEvaluator:
    """Trains a real classifier per point; init/shuffle/dropout seeds come from the trial seed."""

    train_set: object
    val_set: object
    template: MlpConfig
    tcfg: TrainConfig

    @property
    def epochs(self) -> int:
        return self.tcfg.epochs

    def evaluate(self, point: HyperPoint, seed: int) -> tuple[float, float]:
        mcfg = replace(
            self.template,
            hidden_units=point.hidden_units,
            dropout_rate=point.dropout_rate,
            init_seed=derive_trial_seed(seed, 0),
        )
        tcfg = replace(self.tcfg, shuffle_seed=derive_trial_seed(seed, 1),
                       dropout_seed=derive_trial_seed(seed, 2))
        _, metrics = train(mcfg, tcfg, self.train_set, self.val_set)
        return metrics.cost, metrics.accuracy


def train_evaluator(train_set, val_set, template: MlpConfig, tcfg: TrainConfig) -> TrainEvaluator:
    if template.input_dim != train_set.features.shape[1]:
        template = replace(template, input_dim=train_set.features.shape[1])
    return TrainEvaluator(train_set, val_set, template, tcfg)


def _run_one(evaluator, index: int, point: HyperPoint, seed: int, record_time: bool) -> TrialRecord:
    start = time.perf_counter()
    try:
        cost, acc = evaluator.evaluate(point, seed)
        skipped = None
        if not (math.isfinite(cost) and math.isfinite(acc)):
            cost, acc, skipped = None, None, f"non-finite result cost={cost} accuracy={acc}"
    except (DivergedError, ArithmeticError) as exc:
        cost, acc, skipped = None, None, f"diverged: {exc}"
    wall = time.perf_counter() - start if record_time else 0.0
    return TrialRecord(index, point, cost, acc, evaluator.epochs, seed, wall, skipped)


def _run_one_packed(args):
    return _run_one(*args)


def trial_plan(space: SearchSpace, n: int, master_seed: int) -> list[tuple[HyperPoint, int]]:
    """The (point, seed) stream for trials ``0..n-1``; fixed by ``master_seed`` alone."""
    rng = np.random.default_rng(master_seed & 0xFFFFFFFFFFFFFFFF)
    return [(sample_point(space, rng), derive_trial_seed(master_seed, i)) for i in range(n)]


def run_trials(space: SearchSpace, n: int, evaluator: Evaluator, master_seed: int,
               ledger_path: str | Path, workers: int = 1, record_time: bool = False) -> list[TrialRecord]:
    """Evaluate ``n`` sampled points, appending each record to ``ledger_path``.

    An existing ledger is resumed: its valid records must match the planned
    stream, and evaluation continues at the first missing trial. A corrupt
    trailing line (a crash mid-write) is discarded before appending.

    ``wall_seconds`` is written as 0.0 unless ``record_time`` is set, which
    keeps ledgers byte-identical across reruns.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    ledger_path = Path(ledger_path)
    plan = trial_plan(space, n, master_seed)
    records: list[TrialRecord] = []
    if ledger_path.exists():
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            records = load_ledger(ledger_path)
        for w in caught:
            warnings.warn(w.message, LedgerWarning, stacklevel=2)
        if caught:
            _rewrite(ledger_path, records)
        for r in records:
            if r.trial_index >= n:
                continue
            point, seed = plan[r.trial_index]
            if r.point != point or r.seed != seed:
                raise LedgerIntegrityError(
                    f"{ledger_path}: trial {r.trial_index} does not match master seed {master_seed}"
                )
    done = {r.trial_index for r in records}
    todo = [(i, *plan[i]) for i in range(n) if i not in done]

    ledger_path.parent.mkdir(parents=True, exist_ok=True)
    with ledger_path.open("a", encoding="utf-8") as fh:
        if workers > 1 and len(todo) > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                results = pool.map(_run_one_packed,
                                   [(evaluator, i, p, s, record_time) for i, p, s in todo])
                for rec in results:
                    _append(fh, rec)
                    records.append(rec)
        else:
            for i, p, s in todo:
                rec = _run_one(evaluator, i, p, s, record_time)
                _append(fh, rec)
                records.append(rec)
    records.sort(key=lambda r: r.trial_index)
    return [r for r in records if r.trial_index < n]


def _append(fh, rec: TrialRecord) -> None:
    fh.write(rec.to_json() + "\n")
    fh.flush()
    os.fsync(fh.fileno())


def _rewrite(path: Path, records: list[TrialRecord]) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    with tmp.open("w", encoding="utf-8") as fh:
        for r in records:
            fh.write(r.to_json() + "\n")
    os.replace(tmp, path)


def write_ledger(path: str | Path, records: list[TrialRecord]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    _rewrite(path, sorted(records, key=lambda r: r.trial_index))


def load_ledger(path: str | Path) -> list[TrialRecord]:
    """Parse and validate a ledger, sorted by trial index.

    A malformed final line is dropped with a ``LedgerWarning``; a malformed
    line anywhere else, or a repeated trial index, raises
    ``LedgerIntegrityError``.
    """
    path = Path(path)
    lines = path.read_text(encoding="utf-8").split("\n")
    numbered = [(i + 1, ln) for i, ln in enumerate(lines) if ln.strip()]
    records = []
    seen: set[int] = set()
    for pos, (lineno, line) in enumerate(numbered):
        try:
            rec = TrialRecord.from_json(line)
        except (ValueError, TypeError, KeyError) as exc:
            if pos == len(numbered) - 1:
                warnings.warn(f"{path}:{lineno}: dropping corrupt trailing record ({exc})",
                              LedgerWarning, stacklevel=2)
                break
            raise LedgerIntegrityError(f"{path}:{lineno}: malformed record ({exc})") from None
        if rec.trial_index in seen:
            raise LedgerIntegrityError(f"{path}:{lineno}: duplicate trial index {rec.trial_index}")
        seen.add(rec.trial_index)
        records.append(rec)
    records.sort(key=lambda r: r.trial_index)
    return records


def completed(records: list[TrialRecord]) -> list[TrialRecord]:
    return [r for r in records if r.ok]


def find_nonidentifiable_pairs(records: list[TrialRecord], cost_tol: float, acc_tol: float,
                               dropout_gap: float) -> list[tuple[TrialRecord, TrialRecord]]:
    """Pairs in the same octave of hidden units with near-equal cost and
    accuracy but dropout rates at least ``dropout_gap`` apart.

    Each pair witnesses that dropout cannot be recovered as a function of
    (units, cost, accuracy).
    """
    recs = completed(records)
    if len(recs) < 2:
        return []
    octave = np.array([math.floor(r.point.log2_units) for r in recs])
    cost = np.array([r.cost for r in recs])
    acc = np.array([r.accuracy for r in recs])
    drop = np.array([r.point.dropout_rate for r in recs])
    ok = (
        (octave[:, None] == octave[None, :])
        & (np.abs(cost[:, None] - cost[None, :]) <= cost_tol)
        & (np.abs(acc[:, None] - acc[None, :]) <= acc_tol)
        & (np.abs(drop[:, None] - drop[None, :]) >= dropout_gap)
    )
    ii, jj = np.nonzero(np.triu(ok, k=1))
    return [(recs[i], recs[j]) for i, j in zip(ii, jj)]
