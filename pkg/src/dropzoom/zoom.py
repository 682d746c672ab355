"""Surrogate-guided zoom search.

Each round samples ``budget`` trials inside the current region, fits a cost
surface to every trial seen so far that lies inside the region, predicts the
surface on a lattice, and shrinks the region to the bounding box of the
lattice cells whose predicted cost is in the lowest ``region_quantile``
(padded by ``region_margin`` of the region's span). Budgets shrink round by
round, e.g. 100, then 10, then 5.
"""

from __future__ import annotations

import json
import logging
import math
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .harness import Evaluator, TrialRecord, completed, load_ledger, run_trials
from .nn import DivergedError
from .sampler import HyperPoint, SearchSpace, derive_trial_seed, units_from_exponent
from .surrogates import FitError, SurfaceGrid, fit_surface, predict_surface, surrogate_train_config

log = logging.getLogger(__name__)

SearchRegion = SearchSpace

MIN_SPAN_LOG2 = 0.1
MIN_SPAN_DROPOUT = 0.02


@dataclass(frozen=True)
class ZoomConfig:
    budget_schedule: tuple[int, ...] = (100, 10, 5)
    region_quantile: float = 0.1
    region_margin: float = 0.1
    grid_resolution: int = 64
    master_seed: int = 0
    surrogate_epochs: int = 2000
    min_span: tuple[float, float] = (MIN_SPAN_LOG2, MIN_SPAN_DROPOUT)

    def __post_init__(self):
        sched = tuple(int(b) for b in self.budget_schedule)
        object.__setattr__(self, "budget_schedule", sched)
        if not sched:
            raise ValueError("budget schedule must be non-empty")
        if any(b < 1 for b in sched):
            raise ValueError("budgets must be positive")
        if any(b > a for a, b in zip(sched, sched[1:])):
            raise ValueError(f"budgets must be non-increasing, got {list(sched)}")
        if not 0 < self.region_quantile < 1:
            raise ValueError("region_quantile must lie in (0, 1)")
        if self.region_margin < 0:
            raise ValueError("region_margin must be >= 0")
        if self.grid_resolution < 2:
            raise ValueError("grid_resolution must be >= 2")


def region_spans(region: SearchRegion) -> tuple[float, float]:
    (ulo, uhi), (dlo, dhi) = region.log2_units_range, region.dropout_range
    return uhi - ulo, dhi - dlo


def region_within(inner: SearchRegion, outer: SearchRegion) -> bool:
    (a, b), (c, d) = inner.log2_units_range, inner.dropout_range
    (A, B), (C, D) = outer.log2_units_range, outer.dropout_range
    return A <= a and b <= B and C <= c and d <= D


def _padded_box(u_lo, u_hi, d_lo, d_hi, region: SearchRegion, margin: float) -> SearchRegion:
    su, sd = region_spans(region)
    (rulo, ruhi), (rdlo, rdhi) = region.log2_units_range, region.dropout_range
    u_lo, u_hi = max(rulo, u_lo - margin * su), min(ruhi, u_hi + margin * su)
    d_lo, d_hi = max(rdlo, d_lo - margin * sd), min(rdhi, d_hi + margin * sd)
    return SearchRegion((u_lo, u_hi), (d_lo, d_hi))


def select_region(grid: SurfaceGrid, quantile: float = 0.1, margin: float = 0.1) -> SearchRegion:
    """Bounding box of the lattice cells predicted at or below the ``quantile``
    of all predictions, padded by ``margin`` times each axis span and clipped
    to the grid's region."""
    values = np.asarray(grid.values)
    cut = np.quantile(values, quantile)
    ii, jj = np.nonzero(values <= cut)
    u_lo = min(grid.cell_bounds(i, 0)[0][0] for i in set(ii.tolist()))
    u_hi = max(grid.cell_bounds(i, 0)[0][1] for i in set(ii.tolist()))
    d_lo = min(grid.cell_bounds(0, j)[1][0] for j in set(jj.tolist()))
    d_hi = max(grid.cell_bounds(0, j)[1][1] for j in set(jj.tolist()))
    return _padded_box(u_lo, u_hi, d_lo, d_hi, grid.region, margin)


def region_around(point: HyperPoint, region: SearchRegion, margin: float, resolution: int) -> SearchRegion:
    """Fallback box centred on ``point``; never thinner than one lattice cell."""
    su, sd = region_spans(region)
    hu = max(margin * su, su / (2 * resolution))
    hd = max(margin * sd, sd / (2 * resolution))
    u, d = point.log2_units, point.dropout_rate
    return _padded_box(u - hu, u + hu, d - hd, d + hd, region, 0.0)


def in_region(point: HyperPoint, region: SearchRegion) -> bool:
    return region.contains(point)


def best_record(records: Sequence[TrialRecord]) -> TrialRecord | None:
    """Lowest observed cost; ties go to fewer hidden units, then lower dropout."""
    recs = completed(list(records))
    if not recs:
        return None
    return min(recs, key=lambda r: (r.cost, r.point.hidden_units, r.point.dropout_rate))


def _grid_argmin(grid: SurfaceGrid) -> HyperPoint:
    i, j = np.unravel_index(int(np.argmin(grid.values)), grid.values.shape)
    d = min(float(grid.dropout[j]), float(np.nextafter(1.0, 0.0)))
    return HyperPoint(units_from_exponent(float(grid.log2_units[i])), d)


@dataclass
class ZoomRound:
    index: int
    budget: int
    region: SearchRegion
    records: list[TrialRecord]
    n_fit: int
    surrogate_mae: float | None
    selected: SearchRegion
    best_observed: TrialRecord | None
    best_predicted: HyperPoint | None
    fallback: str | None = None
    ledger: str | None = None
    grid: SurfaceGrid | None = None


@dataclass
class ZoomReport:
    config: ZoomConfig
    space: SearchSpace
    rounds: list[ZoomRound] = field(default_factory=list)

    @property
    def all_records(self) -> list[TrialRecord]:
        return [r for rnd in self.rounds for r in rnd.records]

    @property
    def evaluations(self) -> int:
        return sum(len(rnd.records) for rnd in self.rounds)

    @property
    def best_observed(self) -> TrialRecord | None:
        return best_record(self.all_records)

    @property
    def best_predicted(self) -> HyperPoint | None:
        for rnd in reversed(self.rounds):
            if rnd.best_predicted is not None:
                return rnd.best_predicted
        return None

    @property
    def finished(self) -> bool:
        if len(self.rounds) >= len(self.config.budget_schedule):
            return True
        return bool(self.rounds) and _too_small(self.rounds[-1].selected, self.config)

    def next_region(self) -> SearchRegion:
        return self.rounds[-1].selected if self.rounds else self.space


def _too_small(region: SearchRegion, cfg: ZoomConfig) -> bool:
    su, sd = region_spans(region)
    return su < cfg.min_span[0] and sd < cfg.min_span[1]


def zoom_round(report: ZoomReport, evaluator: Evaluator, ledger_dir: Path,
               region: SearchRegion | None = None) -> ZoomRound:
    """Run the next round of ``report`` in place and return it."""
    cfg = report.config
    r = len(report.rounds)
    budget = cfg.budget_schedule[r]
    region = region or report.next_region()
    round_seed = derive_trial_seed(cfg.master_seed, r)
    ledger = Path(ledger_dir) / f"round_{r}.jsonl"
    records = run_trials(region, budget, evaluator, round_seed, ledger)

    pool = [rec for rec in report.all_records + records if rec.ok and in_region(rec.point, region)]
    best = best_record(report.all_records + records)
    mae = None
    predicted = None
    fallback = None
    grid = None
    try:
        sur = fit_surface(pool, "cost", surrogate_train_config(cfg.surrogate_epochs, round_seed),
                          seed=round_seed)
        mae = sur.held_out_mae
        grid = predict_surface(sur, region, cfg.grid_resolution)
        selected = select_region(grid, cfg.region_quantile, cfg.region_margin)
        predicted = _grid_argmin(grid)
    except (FitError, DivergedError) as exc:
        anchor = best_record(pool) or best
        if anchor is None:
            fallback = f"no completed trials ({exc}); region kept"
            selected = region
        else:
            fallback = f"surrogate unavailable ({exc}); zoomed around best observed point"
            selected = region_around(anchor.point, region, cfg.region_margin, cfg.grid_resolution)
        log.info("round %d: %s", r, fallback)
    rnd = ZoomRound(r, budget, region, records, len(pool), mae, selected, best, predicted, fallback,
                    ledger.name, grid)
    report.rounds.append(rnd)
    return rnd


def zoom_search(space: SearchSpace, cfg: ZoomConfig, evaluator: Evaluator,
                out_dir: str | Path | None = None, report: ZoomReport | None = None,
                max_rounds: int | None = None, region_override: SearchRegion | None = None) -> ZoomReport:
    """Run (or continue) the zoom schedule.

    ``report`` resumes a partial run; ``region_override`` replaces the
    automatically selected region for the first round run by this call;
    ``max_rounds`` caps the rounds run by this call. Round ledgers are written
    to ``out_dir`` (a temporary directory when omitted).
    """
    report = report or ZoomReport(cfg, space)
    if region_override is not None and not region_within(region_override, space):
        raise ValueError("override region must lie inside the search space")
    with tempfile.TemporaryDirectory() as tmp:
        ledger_dir = Path(out_dir) if out_dir is not None else Path(tmp)
        ledger_dir.mkdir(parents=True, exist_ok=True)
        ran = 0
        while not report.finished and (max_rounds is None or ran < max_rounds):
            zoom_round(report, evaluator, ledger_dir, region_override if ran == 0 else None)
            ran += 1
    return report


# --- serialization ------------------------------------------------------------

def _region_doc(region: SearchRegion) -> dict:
    return {"log2_units": list(region.log2_units_range), "dropout": list(region.dropout_range)}


def _region_from(doc: dict) -> SearchRegion:
    return SearchRegion(tuple(doc["log2_units"]), tuple(doc["dropout"]))


def _point_doc(p: HyperPoint | None):
    return None if p is None else {"units": p.hidden_units, "dropout": p.dropout_rate}


def _record_doc(r: TrialRecord | None):
    return None if r is None else json.loads(r.to_json())


def report_to_dict(report: ZoomReport) -> dict:
    cfg = report.config
    best = report.best_observed
    return {
        "config": {
            "budget_schedule": list(cfg.budget_schedule),
            "region_quantile": cfg.region_quantile,
            "region_margin": cfg.region_margin,
            "grid_resolution": cfg.grid_resolution,
            "master_seed": str(cfg.master_seed),
            "surrogate_epochs": cfg.surrogate_epochs,
            "min_span": list(cfg.min_span),
        },
        "space": _region_doc(report.space),
        "rounds": [
            {
                "round": rnd.index,
                "budget": rnd.budget,
                "region": _region_doc(rnd.region),
                "ledger": rnd.ledger,
                "n_trials": len(rnd.records),
                "n_fit": rnd.n_fit,
                "surrogate_mae": rnd.surrogate_mae,
                "fallback": rnd.fallback,
                "selected": _region_doc(rnd.selected),
                "best_observed": _record_doc(rnd.best_observed),
                "best_predicted": _point_doc(rnd.best_predicted),
            }
            for rnd in report.rounds
        ],
        "evaluations": report.evaluations,
        "finished": report.finished,
        "best_observed": _record_doc(best),
        "best_predicted": _point_doc(report.best_predicted),
    }


def save_report(report: ZoomReport, path: str | Path) -> None:
    Path(path).write_text(json.dumps(report_to_dict(report), indent=1, allow_nan=False) + "\n",
                          encoding="utf-8")


def load_report(path: str | Path) -> ZoomReport:
    """Rebuild a report; round records are re-read from the ledgers beside it."""
    path = Path(path)
    doc = json.loads(path.read_text(encoding="utf-8"))
    c = doc["config"]
    cfg = ZoomConfig(tuple(c["budget_schedule"]), c["region_quantile"], c["region_margin"],
                     c["grid_resolution"], int(c["master_seed"]), c["surrogate_epochs"],
                     tuple(c["min_span"]))
    report = ZoomReport(cfg, _region_from(doc["space"]))
    for rd in doc["rounds"]:
        records = load_ledger(path.parent / rd["ledger"])
        bo, bp = rd["best_observed"], rd["best_predicted"]
        report.rounds.append(ZoomRound(
            rd["round"], rd["budget"], _region_from(rd["region"]), records, rd["n_fit"],
            rd["surrogate_mae"], _region_from(rd["selected"]),
            None if bo is None else TrialRecord.from_json(json.dumps(bo)),
            None if bp is None else HyperPoint(bp["units"], bp["dropout"]),
            rd["fallback"], rd["ledger"],
        ))
    return report


def parse_region(text: str) -> SearchRegion:
    """``"ulo,uhi,dlo,dhi"`` with units bounds given in log2."""
    parts = [float(p) for p in text.split(",")]
    if len(parts) != 4 or not all(math.isfinite(p) for p in parts):
        raise ValueError(f"region must be 'ulo,uhi,dlo,dhi', got {text!r}")
    return SearchRegion((parts[0], parts[1]), (parts[2], parts[3]))
