"""Command-line entry points.

Subcommands cover each pipeline stage on its own (ingest,
train-diffusion, sample, reweigh, train-clf, evaluate,
compare-marginals) plus the full orchestrated run (experiment) and a
small synthetic demo dataset generator (demo-data).
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import yaml

from . import __version__
from .classifiers import fit_classifier, load_classifier, save_classifier
from .dataset import (
    encode,
    encode_features,
    fit_quantile_transform,
    load_csv,
    load_schema,
    save_csv,
    split_table,
)
from .demo import write_demo_files
from .diffusion import DiffusionConfig, load_model, sample, save_model, train
from .errors import FairtabError
from .harness import (
    compare_marginals,
    emit_curves,
    emit_tables,
    load_experiment_config,
    run_experiment,
    write_marginal_report,
    write_run_log,
)
from .metrics import METRIC_NAMES, evaluate_predictions
from .reweighing import compute_weights, count_groups, reweigh


def _load_table(args):
    schema = load_schema(args.schema)
    if getattr(args, "protected", None):
        schema = schema.with_protected(args.protected, args.privileged)
    return load_csv(args.data, schema, missing_token=args.missing_token)


def _add_table_args(p, with_protected=False):
    p.add_argument("--data", required=True, help="input CSV file")
    p.add_argument("--schema", required=True, help="schema YAML file")
    p.add_argument("--missing-token", default="?", dest="missing_token",
                   help="cell text treated as missing (default '?')")
    if with_protected:
        p.add_argument("--protected", help="override the protected column")
        p.add_argument("--privileged", help="privileged category for the override")


def cmd_ingest(args) -> int:
    table = _load_table(args)
    print(f"rows: {table.n_rows}")
    print(f"numerical columns: {list(table.schema.numerical_columns)}")
    print(f"categorical columns: {list(table.schema.categorical_columns)}")
    print(f"label: {table.schema.label_column} (favorable {table.schema.favorable_value!r})")
    print(f"protected: {table.schema.protected_column} "
          f"(privileged {table.schema.privileged_value!r})")
    if args.split:
        sizes = tuple(args.split)
        train_t, test_t, valid_t = split_table(table, sizes=sizes, seed=args.seed)
        out = Path(args.out or ".")
        out.mkdir(parents=True, exist_ok=True)
        for name, part in (("train", train_t), ("test", test_t), ("validation", valid_t)):
            path = out / f"{name}.csv"
            save_csv(part, path)
            print(f"wrote {path} ({part.n_rows} rows)")
    elif args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        path = out / "ingested.csv"
        save_csv(table, path)
        print(f"wrote {path} ({table.n_rows} rows)")
    return 0


def cmd_train_diffusion(args) -> int:
    table = _load_table(args)
    config = DiffusionConfig()
    if args.config:
        with open(args.config, "r", encoding="utf-8") as fh:
            config = DiffusionConfig.from_dict(yaml.safe_load(fh) or {})
    transform = fit_quantile_transform(table)
    model = train(encode(table, transform), transform, config=config, seed=args.seed)
    save_model(model, args.out)
    print(f"trained {config.timesteps}-step model on {table.n_rows} rows")
    print(f"final epoch loss: {model.loss_log[-1]:.6f}")
    print(f"wrote {args.out}")
    return 0


def cmd_sample(args) -> int:
    model = load_model(args.model)
    table = sample(model, args.n, seed=args.seed)
    save_csv(table, args.out)
    print(f"wrote {args.out} ({table.n_rows} rows)")
    return 0


def cmd_reweigh(args) -> int:
    table = _load_table(args)
    counts = count_groups(table)
    weights = compute_weights(counts)
    print("group/outcome cell counts and balancing weights:")
    for cell, weight in weights.as_dict().items():
        print(f"  {cell:22s} n={getattr(counts, cell):<8d} weight={weight:.6f}")
    if args.out:
        reweighed = reweigh(table)
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        with open(out, "w", encoding="utf-8") as fh:
            fh.write("row,weight\n")
            for i, w in enumerate(reweighed.weights):
                fh.write(f"{i},{float(w)!r}\n")
        print(f"wrote {out}")
    return 0


def cmd_train_clf(args) -> int:
    table = _load_table(args)
    transform = fit_quantile_transform(table)
    features = encode_features(table, transform)
    weights = reweigh(table).weights if args.reweigh else table.weights
    params = None
    if args.params:
        with open(args.params, "r", encoding="utf-8") as fh:
            params = yaml.safe_load(fh) or {}
    clf = fit_classifier(args.variant, features, table.labels,
                         weights=weights, params=params, seed=args.seed)
    save_classifier(clf, args.out)
    arm = "reweighted" if args.reweigh else "unweighted"
    print(f"fit {args.variant} ({arm}) on {table.n_rows} rows; wrote {args.out}")
    return 0


def cmd_evaluate(args) -> int:
    schema = load_schema(args.schema)
    if args.protected:
        schema = schema.with_protected(args.protected, args.privileged)
    train_table = load_csv(args.train_data, schema, missing_token=args.missing_token)
    test_table = load_csv(args.data, schema, missing_token=args.missing_token)
    transform = fit_quantile_transform(train_table)
    clf = load_classifier(args.model)
    prediction = clf.predict(encode_features(test_table, transform),
                             threshold=args.threshold)
    report = evaluate_predictions(test_table.labels, prediction.labels,
                                  test_table.privileged)
    print(f"BA  {report.balanced_accuracy:.6f}")
    for m in METRIC_NAMES:
        v = report.value(m)
        verdict = report.verdicts.get(m)
        tag = f"  [{verdict}]" if verdict else ""
        print(f"{m:3s} {v:+.6f}{tag}")
    for note in report.notes:
        print(f"note: {note}")
    if args.out:
        rows = [["metric", "value", "verdict"]]
        rows.append(["BA", f"{report.balanced_accuracy:.6f}", ""])
        for m in METRIC_NAMES:
            rows.append([m, f"{report.value(m):.6f}", report.verdicts.get(m) or ""])
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        with open(out, "w", encoding="utf-8") as fh:
            fh.write("\n".join(",".join(r) for r in rows) + "\n")
        print(f"wrote {out}")
    return 0


def cmd_experiment(args) -> int:
    config = load_experiment_config(args.config)
    result = run_experiment(config)
    out = Path(config.output_dir)
    written = emit_tables(result, out)
    written += emit_curves(result, out)
    written.append(write_run_log(result, out))
    if not args.no_figures:
        from .report import render_curve_figures

        written += render_curve_figures(result, out)
    errors = [c for c in result.cells if not c.resolved]
    print(f"grid: {len(result.cells)} cells, {len(errors)} errors")
    for c in errors:
        print(f"  error [{c.increment}/{c.variant}/{c.arm}]: {c.error}")
    for path in written:
        print(f"wrote {path}")
    return 0 if not errors else 3


def cmd_compare_marginals(args) -> int:
    schema = load_schema(args.schema)
    original = load_csv(args.original, schema, missing_token=args.missing_token)
    synthetic = load_csv(args.synthetic, schema, missing_token=args.missing_token)
    comparison = compare_marginals(original, synthetic)
    for row in comparison.as_rows():
        print(",".join(row))
    if args.out:
        print(f"wrote {write_marginal_report(comparison, args.out)}")
        if not args.no_figures:
            from .report import render_marginal_figure

            fig_path = Path(args.out).with_suffix(".png")
            print(f"wrote {render_marginal_figure(comparison, fig_path)}")
    return 0


def cmd_demo_data(args) -> int:
    csv_path, schema_path = write_demo_files(args.out, n=args.n, seed=args.seed)
    print(f"wrote {csv_path}")
    print(f"wrote {schema_path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fairtab",
        description="Fairness-aware tabular augmentation: diffusion-based "
                    "synthesis, group reweighting, and fairness evaluation.",
    )
    parser.add_argument("--version", action="version", version=f"fairtab {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="load, validate, impute, and optionally split a CSV")
    _add_table_args(p, with_protected=True)
    p.add_argument("--split", nargs=3, type=int, metavar=("TRAIN", "TEST", "VALID"),
                   help="write a three-way split with these row counts")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="output directory")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("train-diffusion", help="train a generative model on a table")
    _add_table_args(p)
    p.add_argument("--config", help="YAML with model hyperparameters")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="model bundle path (.npz)")
    p.set_defaults(func=cmd_train_diffusion)

    p = sub.add_parser("sample", help="draw synthetic rows from a trained model")
    p.add_argument("--model", required=True, help="model bundle path")
    p.add_argument("--n", required=True, type=int, help="number of rows to draw")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output CSV path")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("reweigh", help="report group-balancing weights for a table")
    _add_table_args(p, with_protected=True)
    p.add_argument("--out", help="optional per-row weight CSV")
    p.set_defaults(func=cmd_reweigh)

    p = sub.add_parser("train-clf", help="fit one classifier on a table")
    _add_table_args(p, with_protected=True)
    p.add_argument("--variant", required=True, help="DT, GNB, KNN, LR, or RF")
    p.add_argument("--reweigh", action="store_true",
                   help="fit with group-balancing weights")
    p.add_argument("--params", help="YAML with classifier hyperparameters")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="classifier bundle path (.npz)")
    p.set_defaults(func=cmd_train_clf)

    p = sub.add_parser("evaluate", help="score a saved classifier on a test CSV")
    _add_table_args(p, with_protected=True)
    p.add_argument("--train-data", required=True, dest="train_data",
                   help="the CSV the classifier was fit on (rebuilds its "
                        "feature scaling)")
    p.add_argument("--model", required=True, help="classifier bundle path")
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--out", help="optional metric CSV")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("experiment", help="run the full augmentation experiment grid")
    p.add_argument("--config", required=True, help="experiment YAML")
    p.add_argument("--no-figures", action="store_true", dest="no_figures",
                   help="skip PNG rendering")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("compare-marginals",
                       help="per-column divergence between two tables")
    p.add_argument("--original", required=True, help="reference CSV")
    p.add_argument("--synthetic", required=True, help="comparison CSV")
    p.add_argument("--schema", required=True, help="schema YAML file")
    p.add_argument("--missing-token", default="?", dest="missing_token")
    p.add_argument("--out", help="optional report CSV (a .png lands beside it)")
    p.add_argument("--no-figures", action="store_true", dest="no_figures")
    p.set_defaults(func=cmd_compare_marginals)

    p = sub.add_parser("demo-data", help="write a small census-like example dataset")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--n", type=int, default=3000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_demo_data)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (FairtabError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
