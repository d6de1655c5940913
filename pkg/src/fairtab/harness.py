"""End-to-end experiment orchestration.

An experiment loads a table, splits it, optionally trains a diffusion
model on the train split, and then for each configured synthetic
increment fits every classifier twice: once with unit weights and once
with group-balancing weights computed on the augmented train set.  All
models are scored on the untouched test split, both at the 0.5
threshold and across a threshold sweep.  Every cell of the
increment x classifier x arm grid either carries a result or an
explicit error record, and reruns with the same configuration produce
byte-identical output files.
"""

from __future__ import annotations

import csv
import json
import platform
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .classifiers import VARIANTS, fit_classifier, uniform_threshold_grid
from .dataset import (
    CATEGORICAL,
    NUMERICAL,
    DataTable,
    concat_tables,
    encode,
    encode_features,
    fit_quantile_transform,
    load_csv,
    load_schema,
    split_table,
)
from .diffusion import DiffusionConfig, sample, train
from .errors import FairtabError, SchemaError
from .metrics import (
    METRIC_NAMES,
    FairnessReport,
    average_odds_difference,
    balanced_accuracy,
    evaluate_predictions,
)
from .reweighing import reweigh

ARMS = ("before", "after")
CANONICAL_ROSTER = ("DT", "GNB", "KNN", "LR", "RF")
TABLE_COLUMNS = ("BA", "SPD", "AOD", "DI", "EOD", "TI")


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything one experiment run needs, resolved and validated."""

    schema_path: str
    data_path: str
    output_dir: str
    split_sizes: tuple[int, int, int]
    split_seed: int = 0
    increments: tuple[int, ...] = (0,)
    roster: tuple[str, ...] = CANONICAL_ROSTER
    classifier_params: dict = field(default_factory=dict)
    thresholds: tuple[float, ...] = ()
    diffusion: DiffusionConfig = field(default_factory=DiffusionConfig)
    protected_column: str | None = None
    privileged_value: str | None = None
    missing_token: str = "?"
    seed: int = 0

    def __post_init__(self):
        if not self.roster:
            raise SchemaError("classifier roster must not be empty")
        unknown = [v for v in self.roster if v not in VARIANTS]
        if unknown:
            raise SchemaError(f"unknown classifier variants: {unknown}")
        if any(n < 0 for n in self.increments):
            raise SchemaError("synthetic increments must be nonnegative")
        if not self.increments:
            raise SchemaError("at least one increment is required")
        if not self.thresholds:
            object.__setattr__(self, "thresholds", tuple(uniform_threshold_grid(101)))
        if any(not 0.0 < t < 1.0 for t in self.thresholds):
            raise SchemaError("thresholds must lie strictly inside (0, 1)")


def load_experiment_config(path) -> ExperimentConfig:
    """Parse a YAML experiment file; relative paths resolve against it."""
    path = Path(path)
    with open(path, "r", encoding="utf-8") as fh:
        raw = yaml.safe_load(fh)
    if not isinstance(raw, dict):
        raise SchemaError(f"experiment config {path} must be a mapping")
    base = path.parent

    def resolve(key: str, must_exist: bool) -> str:
        if key not in raw:
            raise SchemaError(f"experiment config is missing {key!r}")
        p = Path(raw[key])
        if not p.is_absolute():
            p = base / p
        if must_exist and not p.exists():
            raise SchemaError(f"{key} path does not exist: {p}")
        return str(p.resolve())

    split = raw.get("split", {})
    sizes = split.get("sizes")
    if not isinstance(sizes, (list, tuple)) or len(sizes) != 3:
        raise SchemaError("split.sizes must list train, test, and validation row counts")

    thresholds = raw.get("thresholds", 101)
    if isinstance(thresholds, int):
        thresholds = tuple(uniform_threshold_grid(thresholds))
    else:
        thresholds = tuple(float(t) for t in thresholds)

    clf = raw.get("classifiers", {})
    roster = tuple(clf.get("roster", CANONICAL_ROSTER))
    params = {str(k): dict(v) for k, v in clf.get("params", {}).items()}

    protected = raw.get("protected", {}) or {}

    return ExperimentConfig(
        schema_path=resolve("schema", must_exist=True),
        data_path=resolve("data", must_exist=True),
        output_dir=resolve("output_dir", must_exist=False),
        split_sizes=tuple(int(s) for s in sizes),
        split_seed=int(split.get("seed", 0)),
        increments=tuple(int(n) for n in raw.get("increments", [0])),
        roster=roster,
        classifier_params=params,
        thresholds=thresholds,
        diffusion=DiffusionConfig.from_dict(raw.get("diffusion", {}) or {}),
        protected_column=protected.get("column"),
        privileged_value=protected.get("privileged"),
        missing_token=str(raw.get("missing_token", "?")),
        seed=int(raw.get("seed", 0)),
    )


@dataclass(frozen=True)
class CellResult:
    """One point of the experiment grid.

    Exactly one of ``report`` or ``error`` is set; ``curve`` rows are
    (threshold, balanced accuracy, average odds difference) on the test
    split and are present only for resolved cells.
    """

    increment: int
    variant: str
    arm: str
    report: FairnessReport | None = None
    curve: tuple[tuple[float, float, float], ...] = ()
    error: str | None = None

    @property
    def resolved(self) -> bool:
        return self.error is None


@dataclass(frozen=True)
class ExperimentResult:
    increments: tuple[int, ...]
    roster: tuple[str, ...]
    thresholds: tuple[float, ...]
    cells: tuple[CellResult, ...]
    run_log: dict = field(default_factory=dict)

    def cell(self, increment: int, variant: str, arm: str) -> CellResult:
        for c in self.cells:
            if (c.increment, c.variant, c.arm) == (increment, variant, arm):
                return c
        raise KeyError(f"no cell for ({increment}, {variant}, {arm})")


def _derived_seed(*entropy) -> int:
    return int(np.random.SeedSequence(list(entropy)).generate_state(1)[0])


def _sweep(y_true, probs, privileged, thresholds):
    rows = []
    for t in thresholds:
        y_hat = (probs >= t).astype(np.int64)
        try:
            ba = balanced_accuracy(y_true, y_hat)
        except FairtabError:
            ba = float("nan")
        aod = average_odds_difference(y_true, y_hat, privileged)
        rows.append((float(t), float(ba), float(aod)))
    return tuple(rows)


def run_experiment(config: ExperimentConfig) -> ExperimentResult:
    """Run the full pipeline; each grid cell resolves or records its error."""
    schema = load_schema(config.schema_path)
    if config.protected_column is not None:
        if config.privileged_value is None:
            raise SchemaError("protected override needs both column and privileged value")
        schema = schema.with_protected(config.protected_column, config.privileged_value)
    table = load_csv(config.data_path, schema, missing_token=config.missing_token)
    train_split, test_split, valid_split = split_table(
        table, sizes=config.split_sizes, seed=config.split_seed
    )
    # the validation split is held out and unused; kept for model selection
    transform = fit_quantile_transform(train_split)
    encoded_test = encode_features(test_split, transform)
    y_test = test_split.labels
    priv_test = test_split.privileged

    seeds: dict[str, object] = {"root": config.seed}
    model = None
    model_error: str | None = None
    if any(n > 0 for n in config.increments):
        seeds["diffusion"] = _derived_seed(config.seed, 11)
        try:
            model = train(
                encode(train_split, transform),
                transform,
                config=config.diffusion,
                seed=seeds["diffusion"],
            )
        except FairtabError as exc:
            model_error = f"diffusion training failed: {exc}"

    cells: list[CellResult] = []
    sample_seeds: dict[str, int] = {}
    for i, n in enumerate(config.increments):
        stage_error: str | None = None
        augmented = train_split
        if n > 0:
            if model is None:
                stage_error = model_error or "no diffusion model available"
            else:
                seed_n = _derived_seed(config.seed, 13, i)
                sample_seeds[f"increment_{i}_n_{n}"] = seed_n
                try:
                    augmented = concat_tables(train_split, sample(model, n, seed=seed_n))
                except FairtabError as exc:
                    stage_error = f"sampling failed: {exc}"

        arm_inputs: dict[str, object] = {}
        if stage_error is None:
            features = encode_features(augmented, transform)
            labels = augmented.labels
            arm_inputs["before"] = np.ones(augmented.n_rows)
            try:
                arm_inputs["after"] = reweigh(augmented).weights
            except FairtabError as exc:
                arm_inputs["after"] = f"reweighting failed: {exc}"

        for j, variant in enumerate(config.roster):
            for a, arm in enumerate(ARMS):
                if stage_error is not None:
                    cells.append(CellResult(n, variant, arm, error=stage_error))
                    continue
                weights = arm_inputs[arm]
                if isinstance(weights, str):
                    cells.append(CellResult(n, variant, arm, error=weights))
                    continue
                try:
                    clf = fit_classifier(
                        variant,
                        features,
                        labels,
                        weights=weights,
                        params=config.classifier_params.get(variant),
                        seed=_derived_seed(config.seed, 17, i, j, a),
                    )
                    prediction = clf.predict(encoded_test, threshold=0.5)
                    report = evaluate_predictions(y_test, prediction.labels, priv_test)
                    curve = _sweep(
                        y_test, prediction.probabilities, priv_test, config.thresholds
                    )
                    cells.append(CellResult(n, variant, arm, report=report, curve=curve))
                except FairtabError as exc:
                    cells.append(CellResult(n, variant, arm, error=str(exc)))

    run_log = {
        "tool": {"name": "fairtab", "version": __version__},
        "versions": {
            "python": platform.python_version(),
            "numpy": np.__version__,
        },
        "config": {
            "schema": config.schema_path,
            "data": config.data_path,
            "split_sizes": list(config.split_sizes),
            "split_seed": config.split_seed,
            "increments": list(config.increments),
            "roster": list(config.roster),
            "classifier_params": config.classifier_params,
            "threshold_count": len(config.thresholds),
            "diffusion": config.diffusion.to_dict(),
            "protected_column": schema.protected_column,
            "privileged_value": schema.privileged_value,
            "seed": config.seed,
        },
        "seeds": {**seeds, "samples": sample_seeds},
        "rows": {
            "train": train_split.n_rows,
            "test": test_split.n_rows,
            "validation": valid_split.n_rows,
        },
        "grid": {
            "cells": len(cells),
            "errors": sum(1 for c in cells if not c.resolved),
        },
    }
    return ExperimentResult(
        increments=config.increments,
        roster=config.roster,
        thresholds=config.thresholds,
        cells=tuple(cells),
        run_log=run_log,
    )


def _fmt(value: float) -> str:
    if value != value:
        return "nan"
    return f"{value:.6f}"


def emit_tables(result: ExperimentResult, out_dir) -> list[str]:
    """Write one side-by-side comparison CSV per increment plus a long
    results file and an error file; returns the paths written."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written: list[str] = []

    header = ["Model"]
    for arm in ARMS:
        header += [f"{m}_{arm}" for m in TABLE_COLUMNS]
    for n in result.increments:
        path = out_dir / f"comparison_increment_{n}.csv"
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for variant in result.roster:
                row = [variant]
                for arm in ARMS:
                    try:
                        cell = result.cell(n, variant, arm)
                    except KeyError:
                        cell = None
                    if cell is None or cell.report is None:
                        row += [""] * len(TABLE_COLUMNS)
                    else:
                        row += [_fmt(cell.report.value(m)) for m in TABLE_COLUMNS]
                writer.writerow(row)
        written.append(str(path))

    long_path = out_dir / "results_long.csv"
    with open(long_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["increment", "model", "arm", "metric", "value", "verdict"])
        for cell in result.cells:
            if cell.report is None:
                continue
            for m in ("BA",) + METRIC_NAMES:
                verdict = cell.report.verdicts.get(m) if m != "BA" else ""
                writer.writerow(
                    [cell.increment, cell.variant, cell.arm, m,
                     _fmt(cell.report.value(m)), verdict or ""]
                )
    written.append(str(long_path))

    err_path = out_dir / "errors.csv"
    with open(err_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["increment", "model", "arm", "error"])
        for cell in result.cells:
            if cell.error is not None:
                writer.writerow([cell.increment, cell.variant, cell.arm, cell.error])
    written.append(str(err_path))
    return written


def emit_curves(result: ExperimentResult, out_dir) -> list[str]:
    """Write one (threshold, BA, AOD) CSV per resolved grid cell."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written: list[str] = []
    for cell in result.cells:
        if not cell.curve:
            continue
        path = out_dir / f"curve_increment_{cell.increment}_{cell.variant}_{cell.arm}.csv"
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["threshold", "BA", "AOD"])
            for t, ba, aod in cell.curve:
                writer.writerow([_fmt(t), _fmt(ba), _fmt(aod)])
        written.append(str(path))
    return written


def write_run_log(result: ExperimentResult, out_dir) -> str:
    """Dump the run log (config echo, seeds, versions, row counts) as JSON.

    Deliberately carries no timestamps so reruns are byte-identical.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "run_log.json"
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(result.run_log, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return str(path)


@dataclass(frozen=True)
class ColumnDivergence:
    """How far one synthetic column's marginal sits from the original.

    Categorical columns report total-variation distance; numerical
    columns report relative mean and standard-deviation differences and
    a total-variation distance over a coarse shared histogram.
    """

    name: str
    kind: str
    total_variation: float | None = None
    mean_rel_diff: float | None = None
    std_rel_diff: float | None = None
    histogram_distance: float | None = None


@dataclass(frozen=True)
class MarginalComparison:
    columns: tuple[ColumnDivergence, ...]

    def by_name(self, name: str) -> ColumnDivergence:
        for c in self.columns:
            if c.name == name:
                return c
        raise KeyError(name)

    def as_rows(self) -> list[list[str]]:
        rows = [["column", "kind", "total_variation", "mean_rel_diff",
                 "std_rel_diff", "histogram_distance"]]
        for c in self.columns:
            rows.append([
                c.name,
                c.kind,
                "" if c.total_variation is None else _fmt(c.total_variation),
                "" if c.mean_rel_diff is None else _fmt(c.mean_rel_diff),
                "" if c.std_rel_diff is None else _fmt(c.std_rel_diff),
                "" if c.histogram_distance is None else _fmt(c.histogram_distance),
            ])
        return rows


HISTOGRAM_BINS = 10


def _tv(p: np.ndarray, q: np.ndarray) -> float:
    return float(0.5 * np.abs(p - q).sum())


def compare_marginals(original: DataTable, synthetic: DataTable) -> MarginalComparison:
    """Per-column divergence of synthetic marginals from the original."""
    if original.schema != synthetic.schema:
        raise SchemaError("marginal comparison needs tables with the same schema")
    schema = original.schema
    out: list[ColumnDivergence] = []
    for spec in schema.columns:
        if spec.kind == CATEGORICAL:
            j = schema.categorical_columns.index(spec.name)
            k = len(spec.categories)
            p = np.bincount(original.categorical[:, j], minlength=k) / max(original.n_rows, 1)
            q = np.bincount(synthetic.categorical[:, j], minlength=k) / max(synthetic.n_rows, 1)
            out.append(ColumnDivergence(spec.name, CATEGORICAL, total_variation=_tv(p, q)))
        else:
            j = schema.numerical_columns.index(spec.name)
            a = original.numerical[:, j]
            b = synthetic.numerical[:, j]
            mean_rel = abs(float(b.mean() - a.mean())) / max(abs(float(a.mean())), 1e-12)
            std_rel = abs(float(b.std() - a.std())) / max(float(a.std()), 1e-12)
            lo = float(min(a.min(), b.min()))
            hi = float(max(a.max(), b.max()))
            if hi > lo:
                ha, _ = np.histogram(a, bins=HISTOGRAM_BINS, range=(lo, hi))
                hb, _ = np.histogram(b, bins=HISTOGRAM_BINS, range=(lo, hi))
                hist = _tv(ha / ha.sum(), hb / hb.sum())
            else:
                hist = 0.0
            out.append(ColumnDivergence(
                spec.name, NUMERICAL,
                mean_rel_diff=mean_rel, std_rel_diff=std_rel, histogram_distance=hist,
            ))
    return MarginalComparison(columns=tuple(out))


def write_marginal_report(comparison: MarginalComparison, path) -> str:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        csv.writer(fh).writerows(comparison.as_rows())
    return str(path)
