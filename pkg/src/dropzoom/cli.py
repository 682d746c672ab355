"""Command-line front end: ``dropzoom {sweep,fit,zoom,report}``.

Defaults can come from a JSON file (``--config``) whose keys mirror
``RunConfig`` fields; command-line flags override the file.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
import time
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from . import data as data_mod
from .harness import (bowl_evaluator, completed, load_ledger, run_trials,
                      symmetric_evaluator, train_evaluator)
from .nn import MlpConfig, TrainConfig
from .report import (HeatmapSpec, emit_curve_plot, emit_grid_csv, emit_heatmap_svg, emit_linear_fit_plot,
                     emit_scatter_csv, ledger_grid)
from .sampler import SearchSpace
from .surrogates import (DegenerateSelectionError, FitError, ThresholdSpec, fit_inverse, fit_linear,
                         fit_logistic, fit_surface, predict_inverse, predict_surface, save_model,
                         select_by_threshold, surrogate_train_config)
from .zoom import ZoomConfig, load_report, parse_region, save_report, zoom_search

log = logging.getLogger("dropzoom")

SYNTHETIC_KINDS = {"blobs": "separable_blobs", "separable_blobs": "separable_blobs", "annulus": "annulus"}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    dataset: str | None = None
    label_column: str | None = None
    synthetic: str | None = None
    synthetic_rows: int = 1000
    iqr_coefficient: float | None = None
    val_fraction: float = 0.2
    hidden_layers: int = 6
    epochs: int = 150
    batch_size: int = 128
    log2_units_range: tuple[float, float] = (3.0, 10.0)
    dropout_range: tuple[float, float] = (0.0, 1.0)
    out_dir: str = "out"
    master_seed: int | None = None
    workers: int = 1

    @classmethod
    def from_file(cls, path: str | Path) -> "RunConfig":
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"{path}: unknown config keys {sorted(unknown)}")
        cfg = cls(**doc)
        cfg.log2_units_range = tuple(cfg.log2_units_range)
        cfg.dropout_range = tuple(cfg.dropout_range)
        return cfg

    def validate(self, needs_data: bool = True) -> None:
        if self.master_seed is None:
            raise ConfigError("a seed is required (--seed or master_seed in the config file)")
        if needs_data:
            if self.dataset is None and self.synthetic is None:
                raise ConfigError("give --data CSV --label COLUMN or --synthetic KIND")
            if self.dataset is not None:
                if not Path(self.dataset).exists():
                    raise ConfigError(f"dataset {self.dataset} does not exist")
                if not self.label_column:
                    raise ConfigError("--label is required with --data")
            if self.synthetic is not None and self.synthetic not in SYNTHETIC_KINDS:
                raise ConfigError(f"unknown synthetic kind {self.synthetic!r}")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        SearchSpace(self.log2_units_range, self.dropout_range)

    @property
    def space(self) -> SearchSpace:
        return SearchSpace(tuple(self.log2_units_range), tuple(self.dropout_range))


def _pair(text: str) -> tuple[float, float]:
    parts = [float(p) for p in text.split(",")]
    if len(parts) != 2:
        raise argparse.ArgumentTypeError(f"expected 'lo,hi', got {text!r}")
    return parts[0], parts[1]


def _schedule(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(p) for p in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file with RunConfig defaults")
    p.add_argument("--out", dest="out_dir", help="output directory (default: out)")
    p.add_argument("--seed", dest="master_seed", type=int, help="master seed (required)")
    p.add_argument("--data", dest="dataset", help="CSV file with a header row")
    p.add_argument("--label", dest="label_column", help="binary label column in --data")
    p.add_argument("--synthetic", choices=sorted(SYNTHETIC_KINDS), help="use a generated dataset")
    p.add_argument("--rows", dest="synthetic_rows", type=int, help="rows for --synthetic (default 1000)")
    p.add_argument("--iqr", dest="iqr_coefficient", type=float, help="IQR outlier filter coefficient, e.g. 2.5")
    p.add_argument("--val-fraction", type=float)
    p.add_argument("--hidden-layers", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--units-range", dest="log2_units_range", type=_pair,
                   help="log2 hidden-unit interval 'lo,hi' (default 3,10)")
    p.add_argument("--dropout-range", type=_pair, help="dropout interval 'lo,hi' (default 0,1)")
    p.add_argument("--workers", type=int, help="parallel trial processes (default 1)")


def _run_config(args) -> RunConfig:
    cfg = RunConfig.from_file(args.config) if args.config else RunConfig()
    for f in fields(RunConfig):
        value = getattr(args, f.name, None)
        if value is not None:
            setattr(cfg, f.name, value)
    return cfg


def _datasets(cfg: RunConfig):
    if cfg.dataset is not None:
        ds = data_mod.load_csv(cfg.dataset, cfg.label_column)
    else:
        ds = data_mod.make_synthetic(SYNTHETIC_KINDS[cfg.synthetic], cfg.synthetic_rows, seed=cfg.master_seed)
    if cfg.iqr_coefficient is not None:
        ds = data_mod.iqr_filter(ds, cfg.iqr_coefficient)
    train_set, val_set = data_mod.split(ds, cfg.val_fraction, seed=cfg.master_seed)
    (train_set, val_set), _ = data_mod.standardize(train_set, [val_set])
    return train_set, val_set


def _trainer(cfg: RunConfig):
    train_set, val_set = _datasets(cfg)
    template = MlpConfig(input_dim=train_set.features.shape[1], hidden_layers=cfg.hidden_layers)
    return train_evaluator(train_set, val_set, template, TrainConfig(epochs=cfg.epochs, batch_size=cfg.batch_size))


def _ledger_artifacts(records, out: Path, resolution: int, region: SearchSpace) -> list[Path]:
    paths = [emit_scatter_csv(records, out / "scatter.csv")]
    for key in ("cost", "accuracy"):
        grid = ledger_grid(records, key, region, resolution)
        paths.append(emit_heatmap_svg(HeatmapSpec(grid, title=f"observed {key} (nearest trial)", value_label=key),
                                      out / f"{key}_heatmap.svg", overlay=records))
    return paths


def cmd_sweep(args) -> int:
    cfg = _run_config(args)
    cfg.validate()
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    evaluator = _trainer(cfg)
    start = time.perf_counter()
    ledger = out / "ledger.jsonl"
    records = run_trials(cfg.space, args.n, evaluator, cfg.master_seed, ledger, workers=cfg.workers,
                         record_time=args.record_time)
    elapsed = time.perf_counter() - start
    done = completed(records)
    if not done:
        print(f"ledger: {ledger} ({len(records)} trials, all skipped)")
        return 1
    _ledger_artifacts(records, out, args.resolution, cfg.space)
    print(f"ledger: {ledger}")
    print(f"trials: {len(records)} ({len(records) - len(done)} skipped)  "
          f"min cost: {min(r.cost for r in done):.6f}  max accuracy: {max(r.accuracy for r in done):.2f}  "
          f"wall: {elapsed:.1f}s")
    return 0


def cmd_report(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    records = load_ledger(args.ledger)
    region = SearchSpace(args.units_range or (3.0, 10.0), args.dropout_range or (0.0, 1.0))
    for p in _ledger_artifacts(records, out, args.resolution, region):
        print(p)
    return 0


def cmd_fit(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ledger = Path(args.ledger) if args.ledger else out / "ledger.jsonl"
    records = load_ledger(ledger)
    fam = args.family
    try:
        if fam == "linear":
            spec = (ThresholdSpec("numeric", args.threshold) if args.threshold is not None
                    else ThresholdSpec("percentile", args.percentile))
            subset = select_by_threshold(records, spec)
            model = fit_linear(subset)
            save_model(model, out / "model_linear.json")
            emit_linear_fit_plot(subset, model, out / "linear_fit.svg",
                                 title=f"linear fit ({spec.describe()}), MAE {model.mae:.4f}")
            print(f"linear: threshold={spec.describe()} n={model.n} slope={model.slope:.6f} "
                  f"intercept={model.intercept:.6f} mae={model.mae:.6f}")
        elif fam == "logistic":
            model = fit_logistic(records, args.percentile, args.degree, seed=args.seed)
            save_model(model, out / "model_logistic.json")
            grid = predict_surface(_LogisticSurface(model), SearchSpace(), args.resolution)
            emit_heatmap_svg(HeatmapSpec(grid, title=f"P(cost within {args.percentile:g}th percentile), "
                                         f"degree {args.degree}", value_label="P(good)"),
                             out / "logistic_heatmap.svg", overlay=records)
            test = "n/a" if model.test_accuracy is None else f"{model.test_accuracy:.4f}"
            print(f"logistic: percentile={args.percentile:g} degree={args.degree} "
                  f"train_accuracy={model.train_accuracy:.4f} test_accuracy={test}")
        elif fam == "surface":
            model = fit_surface(records, args.target, surrogate_train_config(args.epochs, args.seed), seed=args.seed)
            save_model(model, out / f"model_surface_{args.target}.json")
            grid = predict_surface(model, SearchSpace(), args.resolution)
            if args.target == "accuracy":
                grid = type(grid)(grid.region, grid.log2_units, grid.dropout, grid.values * 100.0)
            emit_grid_csv(grid, out / f"surface_{args.target}_grid.csv", args.target)
            emit_heatmap_svg(HeatmapSpec(grid, title=f"surrogate {args.target}", value_label=args.target),
                             out / f"surface_{args.target}.svg", overlay=records)
            print(f"surface: target={args.target} n_train={model.n_train} n_test={model.n_test} "
                  f"train_mae={model.train_mae:.6f} held_out_mae={model.held_out_mae:.6f}")
        elif fam == "inverse":
            model = fit_inverse(records, surrogate_train_config(args.epochs, args.seed), seed=args.seed)
            save_model(model, out / "model_inverse.json")
            done = completed(records)
            best_cost = min(r.cost for r in done)
            best_acc = max(r.accuracy for r in done)
            lu = np.linspace(3.0, 10.0, 64)
            curve = predict_inverse(model, np.floor(2.0**lu), best_cost, best_acc)
            emit_curve_plot([(math.log2(r.point.hidden_units), r.point.dropout_rate) for r in done],
                            list(zip(lu.tolist(), curve.tolist())), out / "inverse_dropout.svg",
                            title="inverse model: dropout at min cost / max accuracy (ill-posed)")
            print(f"inverse: n_train={model.n_train} n_test={model.n_test} train_mae={model.train_mae:.6f} "
                  f"test_mae={model.test_mae:.6f} (dropout is not a function of units, cost, accuracy)")
    except (DegenerateSelectionError, FitError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


class _LogisticSurface:
    def __init__(self, model):
        self.model = model

    def predict_log2(self, log2_units, dropout):
        x = np.column_stack([(np.ravel(log2_units) - 3.0) / 7.0, np.ravel(dropout)])
        return self.model.predict_proba_normalized(x)


def _zoom_evaluator(args, cfg: RunConfig):
    if args.simulated is not None:
        return bowl_evaluator(args.noise) if args.simulated == "bowl" else symmetric_evaluator(args.noise)
    return _trainer(cfg)


def cmd_zoom(args) -> int:
    cfg = _run_config(args)
    cfg.validate(needs_data=args.simulated is None)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    report_path = out / "zoom_report.json"
    report = None
    if args.resume and report_path.exists():
        report = load_report(report_path)
        zcfg = report.config
    else:
        zcfg = ZoomConfig(args.schedule, args.quantile, args.margin, args.resolution, cfg.master_seed,
                          args.surrogate_epochs)
    override = parse_region(args.region) if args.region else None
    evaluator = _zoom_evaluator(args, cfg)
    report = zoom_search(cfg.space if report is None else report.space, zcfg, evaluator, out,
                         report=report, max_rounds=args.rounds, region_override=override)
    save_report(report, report_path)
    for rnd in report.rounds:
        if rnd.grid is not None:
            emit_heatmap_svg(HeatmapSpec(rnd.grid, title=f"round {rnd.index} surrogate cost", value_label="cost"),
                             out / f"round_{rnd.index}_cost.svg", overlay=rnd.records)
    best = report.best_observed
    state = "finished" if report.finished else f"paused after round {len(report.rounds) - 1}"
    print(f"zoom report: {report_path} ({state}, {report.evaluations} evaluations)")
    if best is None:
        print("no completed trials")
        return 1
    print(f"best observed: units={best.point.hidden_units} dropout={best.point.dropout_rate:.4f} "
          f"cost={best.cost:.6f}")
    if report.best_predicted is not None:
        p = report.best_predicted
        print(f"best predicted: units={p.hidden_units} dropout={p.dropout_rate:.4f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dropzoom", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sweep", help="train n random configurations and write a ledger")
    _add_run_flags(p)
    p.add_argument("--n", type=int, default=64, help="number of trials (default 64)")
    p.add_argument("--record-time", action="store_true",
                   help="store real wall_seconds (ledgers are then no longer byte-reproducible)")
    p.add_argument("--resolution", type=int, default=32, help="heatmap lattice size")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("fit", help="fit a surrogate to a ledger")
    p.add_argument("--ledger", help="ledger path (default OUT/ledger.jsonl)")
    p.add_argument("--out", default="out")
    p.add_argument("--family", required=True, choices=["linear", "logistic", "surface", "inverse"])
    p.add_argument("--percentile", type=float, default=25.0)
    p.add_argument("--threshold", type=float, help="numeric cost threshold (linear family)")
    p.add_argument("--degree", type=int, default=3)
    p.add_argument("--target", choices=["cost", "accuracy"], default="cost")
    p.add_argument("--epochs", type=int, default=2000, help="surrogate training epochs")
    p.add_argument("--seed", type=int, default=0, help="holdout split / init seed (default 0)")
    p.add_argument("--resolution", type=int, default=64)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("zoom", help="surrogate-guided zoom search")
    _add_run_flags(p)
    p.add_argument("--simulated", choices=["bowl", "symmetric"], help="analytic evaluator instead of training")
    p.add_argument("--noise", type=float, default=0.0, help="simulated noise amplitude")
    p.add_argument("--schedule", type=_schedule, default=(100, 10, 5), help="budgets, e.g. 100,10,5")
    p.add_argument("--quantile", type=float, default=0.1)
    p.add_argument("--margin", type=float, default=0.1)
    p.add_argument("--resolution", type=int, default=64)
    p.add_argument("--surrogate-epochs", type=int, default=2000)
    p.add_argument("--region", help="override next round's region: 'ulo,uhi,dlo,dhi' (units in log2)")
    p.add_argument("--resume", action="store_true", help="continue OUT/zoom_report.json")
    p.add_argument("--rounds", type=int, help="run at most this many rounds now")
    p.set_defaults(func=cmd_zoom)

    p = sub.add_parser("report", help="scatter CSV and heatmaps from a ledger")
    p.add_argument("--ledger", required=True)
    p.add_argument("--out", default="out")
    p.add_argument("--resolution", type=int, default=32)
    p.add_argument("--units-range", type=_pair, help="log2 hidden-unit interval 'lo,hi' (default 3,10)")
    p.add_argument("--dropout-range", type=_pair, help="dropout interval 'lo,hi' (default 0,1)")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        parser.error(str(exc))
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
