"""Deterministic census-like demonstration data.

Generates a small income table whose favorable outcome depends on the
usual covariates but also directly on sex, so the raw data carries a
measurable group disparity for the fairness pipeline to work against.
The generator is seeded and pure, so a fixed (n, seed) pair always
yields byte-identical CSV output.
"""

from __future__ import annotations

import numpy as np

from .dataset import ColumnSpec, DataTable, TableSchema, save_csv, save_schema

WORK_CLASSES = ("private", "government", "self_employed", "?")
OCCUPATIONS = ("service", "clerical", "technical", "managerial", "professional")

# occupation mix per sex; the protected attribute leaks into the
# covariates the way it does in real census tables
_OCC_P_MALE = (0.15, 0.10, 0.30, 0.25, 0.20)
_OCC_P_FEMALE = (0.30, 0.30, 0.15, 0.10, 0.15)
_OCC_SCORE = (-1.0, -0.5, 0.3, 0.9, 1.2)


def demo_schema() -> TableSchema:
    return TableSchema(
        columns=(
            ColumnSpec(name="age", kind="numerical"),
            ColumnSpec(name="education_years", kind="numerical"),
            ColumnSpec(name="hours_per_week", kind="numerical"),
            ColumnSpec(name="work_class", kind="categorical", categories=WORK_CLASSES),
            ColumnSpec(name="occupation", kind="categorical", categories=OCCUPATIONS),
            ColumnSpec(name="sex", kind="categorical", categories=("Male", "Female")),
            ColumnSpec(name="income", kind="categorical", categories=("<=50K", ">50K")),
        ),
        label_column="income",
        favorable_value=">50K",
        protected_column="sex",
        privileged_value="Male",
    )


def make_demo_table(n: int = 3000, seed: int = 0, bias: float = 1.1) -> DataTable:
    """Draw n rows; ``bias`` is the direct log-odds bonus for Male rows."""
    schema = demo_schema()
    rng = np.random.default_rng([seed, 97])

    male = rng.random(n) < 0.67
    age = np.clip(rng.normal(38.0, 12.0, n), 17.0, 90.0).round(0)
    education = np.clip(rng.normal(10.0, 2.6, n), 1.0, 16.0).round(0)
    hours = np.clip(rng.normal(40.0, 11.0, n) + 3.0 * male, 1.0, 99.0).round(0)

    occupation = np.empty(n, dtype=np.int64)
    occupation[male] = rng.choice(len(OCCUPATIONS), size=int(male.sum()), p=_OCC_P_MALE)
    occupation[~male] = rng.choice(len(OCCUPATIONS), size=int((~male).sum()), p=_OCC_P_FEMALE)
    work_class = rng.choice(len(WORK_CLASSES), size=n, p=(0.62, 0.22, 0.12, 0.04))

    score = (
        -3.4
        + 0.022 * (age - 38.0)
        + 0.33 * (education - 10.0)
        + 0.035 * (hours - 40.0)
        + np.asarray(_OCC_SCORE)[occupation]
        + bias * male
        + rng.normal(0.0, 0.9, n)
    )
    favorable = 1.0 / (1.0 + np.exp(-score)) > rng.random(n)

    return DataTable(
        schema=schema,
        numerical=np.column_stack([age, education, hours]),
        categorical=np.column_stack(
            [work_class, occupation, (~male).astype(np.int64), favorable.astype(np.int64)]
        ),
        weights=np.ones(n),
    )


def write_demo_files(directory, n: int = 3000, seed: int = 0) -> tuple[str, str]:
    """Write demo.csv and demo_schema.yaml into ``directory``."""
    from pathlib import Path

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    table = make_demo_table(n=n, seed=seed)
    csv_path = directory / "demo.csv"
    schema_path = directory / "demo_schema.yaml"
    save_csv(table, csv_path)
    save_schema(table.schema, schema_path)
    return str(csv_path), str(schema_path)
