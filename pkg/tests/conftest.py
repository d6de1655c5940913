"""Shared fixtures: small schemas and tables used across the test modules."""

import time

import numpy as np
import pytest

from fairtab.dataset import ColumnSpec, DataTable, TableSchema


def binary_schema(extra_numericals=("x",)):
    """Schema with numerical columns plus a label that doubles as the
    protected attribute (smallest table that supports fairness roles)."""
    cols = [ColumnSpec(name=n, kind="numerical") for n in extra_numericals]
    cols.append(ColumnSpec(name="group", kind="categorical", categories=("a", "b")))
    cols.append(ColumnSpec(name="outcome", kind="categorical", categories=("no", "yes")))
    return TableSchema(
        columns=tuple(cols),
        label_column="outcome",
        favorable_value="yes",
        protected_column="group",
        privileged_value="a",
    )


def random_binary_table(rng, n, schema=None, require_cells=False) -> DataTable:
    """A random table over ``binary_schema``; with ``require_cells`` the
    draw is repeated until every (group, label) cell is populated, so n
    must be at least 4."""
    schema = schema or binary_schema()
    while True:
        num = rng.normal(size=(n, len(schema.numerical_columns)))
        cat = rng.integers(0, 2, size=(n, 2))
        table = DataTable(schema=schema, numerical=num, categorical=cat,
                          weights=np.ones(n))
        if not require_cells:
            return table
        priv = table.privileged
        pos = table.labels == 1
        cells = [priv & pos, priv & ~pos, ~priv & pos, ~priv & ~pos]
        if all(c.any() for c in cells):
            return table


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


def toy_schema() -> TableSchema:
    """Two columns: a bimodal numerical and a 70/30 categorical that
    doubles as label and protected attribute."""
    return TableSchema(
        columns=(
            ColumnSpec(name="amount", kind="numerical"),
            ColumnSpec(name="shade", kind="categorical", categories=("a", "b")),
        ),
        label_column="shade",
        favorable_value="a",
        protected_column="shade",
        privileged_value="a",
    )


def make_toy_table(n: int = 2000, seed: int = 7) -> DataTable:
    """Bimodal amount (N(10,1) and N(30,1), even mixture) with shade drawn
    independently at p = (0.7, 0.3)."""
    schema = toy_schema()
    gen = np.random.default_rng(seed)
    high = gen.random(n) < 0.5
    amount = np.where(high, gen.normal(30.0, 1.0, n), gen.normal(10.0, 1.0, n))
    shade = np.where(gen.random(n) < 0.7, 0, 1)
    return DataTable(
        schema=schema,
        numerical=amount.reshape(-1, 1),
        categorical=shade.reshape(-1, 1).astype(np.int64),
        weights=np.ones(n),
    )


class TrainedToy:
    """Default-config diffusion model on the toy table, trained once per
    test session; records how long training took."""

    def __init__(self):
        from fairtab.dataset import encode, fit_quantile_transform
        from fairtab.diffusion import train

        self.table = make_toy_table()
        self.transform = fit_quantile_transform(self.table)
        encoded = encode(self.table, self.transform)
        start = time.monotonic()
        self.model = train(encoded, self.transform, seed=11)
        self.train_seconds = time.monotonic() - start
        self.sample_seconds = 0.0


@pytest.fixture(scope="session")
def trained_toy():
    return TrainedToy()


@pytest.fixture(scope="session")
def toy_samples(trained_toy):
    """5000 synthetic rows from the toy model, drawn once per session."""
    from fairtab.diffusion import sample

    start = time.monotonic()
    out = sample(trained_toy.model, 5000, seed=21)
    trained_toy.sample_seconds = time.monotonic() - start
    return out


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """One PASS/FAIL line per acceptance criterion at the end of the run."""
    rows = {}
    for outcome, label in (("passed", "PASS"), ("failed", "FAIL"), ("error", "FAIL")):
        for rep in terminalreporter.stats.get(outcome, []):
            nodeid = getattr(rep, "nodeid", "")
            if "test_acceptance.py" in nodeid and "test_criterion_" in nodeid:
                name = nodeid.split("::")[-1]
                rows[name] = label

    if not rows:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for name in sorted(rows, key=lambda s: int(s.split("_")[2])):
        number = name.split("_")[2]
        title = " ".join(name.split("_")[3:])
        terminalreporter.write_line(f"{rows[name]}  criterion {number}: {title}")
