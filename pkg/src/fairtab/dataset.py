"""Mixed-type tables: schema handling, CSV ingestion, splits, and the
numeric encoding used by the generative model and the classifiers.

A table is stored column-blocked: one float matrix for the numerical
columns and one integer matrix of category indices for the categorical
columns, plus a per-row weight vector.  The encoded form is a single
float matrix whose first block holds quantile-Gaussianized numericals
and whose remaining blocks are one-hot groups, one per categorical
column, in schema order.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import ndtri

from .errors import DecodeError, ParseError, SchemaError

logger = logging.getLogger(__name__)

NUMERICAL = "numerical"
CATEGORICAL = "categorical"

# Gaussianized scores are clipped to this band; it corresponds to the
# quantile range resolvable from roughly 1e7 observations.
SCORE_CLIP = 5.2


@dataclass(frozen=True)
class ColumnSpec:
    """One column declaration: a name, a kind, and (if categorical) the
    closed set of admissible category strings."""

    name: str
    kind: str
    categories: tuple[str, ...] = ()

    def __post_init__(self):
        if self.kind not in (NUMERICAL, CATEGORICAL):
            raise SchemaError(f"column {self.name!r}: unknown kind {self.kind!r}")
        if self.kind == CATEGORICAL:
            if len(self.categories) == 0:
                raise SchemaError(f"column {self.name!r}: categorical column needs categories")
            if len(set(self.categories)) != len(self.categories):
                raise SchemaError(f"column {self.name!r}: duplicate categories")
        elif self.categories:
            raise SchemaError(f"column {self.name!r}: numerical column cannot list categories")


@dataclass(frozen=True)
class TableSchema:
    """Column declarations plus the label and protected-attribute roles.

    The label and the protected attribute must both be categorical with
    at least two categories; ``favorable_value`` and ``privileged_value``
    name one category of each.  Rows whose label equals the favorable
    value form the positive class; rows whose protected attribute equals
    the privileged value form the privileged group.
    """

    columns: tuple[ColumnSpec, ...]
    label_column: str
    favorable_value: str
    protected_column: str
    privileged_value: str

    def __post_init__(self):
        names = [c.name for c in self.columns]
        if len(set(names)) != len(names):
            raise SchemaError("duplicate column names in schema")
        if not names:
            raise SchemaError("schema has no columns")
        for role, col, value in (
            ("label", self.label_column, self.favorable_value),
            ("protected attribute", self.protected_column, self.privileged_value),
        ):
            spec = self._find(col, role)
            if spec.kind != CATEGORICAL:
                raise SchemaError(f"{role} column {col!r} must be categorical")
            if len(spec.categories) < 2:
                raise SchemaError(f"{role} column {col!r} needs at least two categories")
            if value not in spec.categories:
                raise SchemaError(f"{role} value {value!r} not a category of {col!r}")

    def _find(self, name: str, role: str) -> ColumnSpec:
        for spec in self.columns:
            if spec.name == name:
                return spec
        raise SchemaError(f"{role} column {name!r} not in schema")

    def column(self, name: str) -> ColumnSpec:
        return self._find(name, "requested")

    @property
    def column_names(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.columns)

    @property
    def numerical_columns(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.columns if c.kind == NUMERICAL)

    @property
    def categorical_columns(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.columns if c.kind == CATEGORICAL)

    def category_index(self, column: str, value: str) -> int:
        spec = self.column(column)
        try:
            return spec.categories.index(value)
        except ValueError:
            raise SchemaError(f"value {value!r} is not a category of column {column!r}") from None

    def with_protected(self, column: str, privileged_value: str) -> "TableSchema":
        """Return a copy with a different protected-attribute designation."""
        return replace(self, protected_column=column, privileged_value=privileged_value)

    def to_dict(self) -> dict:
        cols = []
        for c in self.columns:
            entry: dict = {"name": c.name, "kind": c.kind}
            if c.kind == CATEGORICAL:
                entry["categories"] = list(c.categories)
            cols.append(entry)
        return {
            "columns": cols,
            "label": {"column": self.label_column, "favorable": self.favorable_value},
            "protected": {"column": self.protected_column, "privileged": self.privileged_value},
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "TableSchema":
        try:
            columns = tuple(
                ColumnSpec(
                    name=str(c["name"]),
                    kind=str(c["kind"]),
                    categories=tuple(str(v) for v in c.get("categories", ())),
                )
                for c in raw["columns"]
            )
            return cls(
                columns=columns,
                label_column=str(raw["label"]["column"]),
                favorable_value=str(raw["label"]["favorable"]),
                protected_column=str(raw["protected"]["column"]),
                privileged_value=str(raw["protected"]["privileged"]),
            )
        except (KeyError, TypeError) as exc:
            raise SchemaError(f"malformed schema mapping: {exc}") from exc


def load_schema(path) -> TableSchema:
    """Read a schema from a YAML mapping file."""
    import yaml

    with open(path, "r", encoding="utf-8") as fh:
        raw = yaml.safe_load(fh)
    if not isinstance(raw, dict):
        raise SchemaError(f"{path}: schema file must hold a mapping")
    return TableSchema.from_dict(raw)


def save_schema(schema: TableSchema, path) -> None:
    import yaml

    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(schema.to_dict(), fh, sort_keys=False)


@dataclass(frozen=True)
class DataTable:
    """A weighted mixed-type table.

    ``numerical`` is (n, #numerical) float64 and ``categorical`` is
    (n, #categorical) int64 of category indices, both with columns in
    schema order restricted to their kind.  ``weights`` is (n,) float64,
    nonnegative and finite; fresh tables carry unit weights.
    """

    schema: TableSchema
    numerical: np.ndarray
    categorical: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        n = len(self.weights)
        if self.numerical.shape != (n, len(self.schema.numerical_columns)):
            raise SchemaError("numerical block shape does not match schema")
        if self.categorical.shape != (n, len(self.schema.categorical_columns)):
            raise SchemaError("categorical block shape does not match schema")
        if not np.all(np.isfinite(self.numerical)):
            raise SchemaError("numerical values must be finite")
        if not np.all(np.isfinite(self.weights)) or np.any(self.weights < 0):
            raise SchemaError("weights must be finite and nonnegative")
        for j, name in enumerate(self.schema.categorical_columns):
            k = len(self.schema.column(name).categories)
            col = self.categorical[:, j]
            if col.size and (col.min() < 0 or col.max() >= k):
                raise SchemaError(f"category index out of range in column {name!r}")

    @property
    def n_rows(self) -> int:
        return len(self.weights)

    def _cat_position(self, name: str) -> int:
        return self.schema.categorical_columns.index(name)

    @property
    def labels(self) -> np.ndarray:
        """0/1 vector: 1 where the label equals the favorable value."""
        s = self.schema
        fav = s.category_index(s.label_column, s.favorable_value)
        return (self.categorical[:, self._cat_position(s.label_column)] == fav).astype(np.int64)

    @property
    def privileged(self) -> np.ndarray:
        """Boolean mask of rows in the privileged group."""
        s = self.schema
        pri = s.category_index(s.protected_column, s.privileged_value)
        return self.categorical[:, self._cat_position(s.protected_column)] == pri

    def column_values(self, name: str) -> np.ndarray:
        """Raw values of one column: floats, or category strings."""
        spec = self.schema.column(name)
        if spec.kind == NUMERICAL:
            return self.numerical[:, self.schema.numerical_columns.index(name)].copy()
        idx = self.categorical[:, self._cat_position(name)]
        return np.asarray(spec.categories, dtype=object)[idx]

    def with_weights(self, weights: np.ndarray) -> "DataTable":
        w = np.asarray(weights, dtype=np.float64)
        if w.shape != (self.n_rows,):
            raise SchemaError("weight vector length does not match table")
        return replace(self, weights=w)

    def take(self, indices) -> "DataTable":
        idx = np.asarray(indices)
        return DataTable(
            schema=self.schema,
            numerical=self.numerical[idx],
            categorical=self.categorical[idx],
            weights=self.weights[idx],
        )

    @classmethod
    def from_values(cls, schema: TableSchema, columns: dict) -> "DataTable":
        """Build a table from per-column value lists (categories as strings)."""
        missing = set(schema.column_names) - set(columns)
        if missing:
            raise SchemaError(f"missing columns: {sorted(missing)}")
        sizes = {len(v) for v in columns.values()}
        if len(sizes) > 1:
            raise SchemaError("columns have unequal lengths")
        n = sizes.pop() if sizes else 0
        num = np.empty((n, len(schema.numerical_columns)), dtype=np.float64)
        for j, name in enumerate(schema.numerical_columns):
            num[:, j] = np.asarray(columns[name], dtype=np.float64)
        cat = np.empty((n, len(schema.categorical_columns)), dtype=np.int64)
        for j, name in enumerate(schema.categorical_columns):
            cat[:, j] = [schema.category_index(name, str(v)) for v in columns[name]]
        return cls(schema=schema, numerical=num, categorical=cat, weights=np.ones(n))


def concat_tables(first: DataTable, second: DataTable) -> DataTable:
    """Stack two tables with identical schemas; weights are carried."""
    if first.schema != second.schema:
        raise SchemaError("cannot concatenate tables with different schemas")
    return DataTable(
        schema=first.schema,
        numerical=np.concatenate([first.numerical, second.numerical]),
        categorical=np.concatenate([first.categorical, second.categorical]),
        weights=np.concatenate([first.weights, second.weights]),
    )


def load_csv(path, schema: TableSchema, missing_token: str = "?") -> DataTable:
    """Read a comma-separated file into a table.

    The first row must name exactly the schema's columns (any order).
    Missing categorical cells (equal to ``missing_token``) map to a
    schema-declared category with that token; missing numerical cells
    are imputed with the column median of the observed values.
    """
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: file is empty") from None
        header = [h.strip() for h in header]
        if set(header) != set(schema.column_names) or len(header) != len(schema.column_names):
            raise SchemaError(
                f"{path}: header {header} does not match schema columns {list(schema.column_names)}"
            )
        positions = {name: header.index(name) for name in schema.column_names}

        num_names = schema.numerical_columns
        cat_names = schema.categorical_columns
        cat_maps = []
        for name in cat_names:
            spec = schema.column(name)
            cat_maps.append({v: i for i, v in enumerate(spec.categories)})

        num_rows: list[list[float]] = []
        cat_rows: list[list[int]] = []
        for row in reader:
            if len(row) != len(header):
                raise ParseError(f"{path}: line {reader.line_num}: expected {len(header)} fields, got {len(row)}")
            num_out = []
            for name in num_names:
                cell = row[positions[name]].strip()
                if cell == missing_token:
                    num_out.append(np.nan)
                    continue
                try:
                    num_out.append(float(cell))
                except ValueError:
                    raise ParseError(
                        f"{path}: line {reader.line_num}: column {name!r}: not a number: {cell!r}"
                    ) from None
            cat_out = []
            for name, mapping in zip(cat_names, cat_maps):
                cell = row[positions[name]].strip()
                if cell == missing_token and cell not in mapping:
                    raise SchemaError(
                        f"{path}: column {name!r} has missing values but no {missing_token!r} category"
                    )
                if cell not in mapping:
                    raise SchemaError(
                        f"{path}: line {reader.line_num}: column {name!r}: unknown category {cell!r}"
                    )
                cat_out.append(mapping[cell])
            num_rows.append(num_out)
            cat_rows.append(cat_out)

    if not num_rows:
        raise SchemaError(f"{path}: no data rows")

    num = np.asarray(num_rows, dtype=np.float64).reshape(len(num_rows), len(num_names))
    cat = np.asarray(cat_rows, dtype=np.int64).reshape(len(cat_rows), len(cat_names))
    for j, name in enumerate(num_names):
        col = num[:, j]
        bad = np.isnan(col)
        if bad.all():
            raise SchemaError(f"{path}: column {name!r}: all values missing")
        if bad.any():
            fill = float(np.median(col[~bad]))
            col[bad] = fill
            logger.info("column %r: imputed %d missing values with median %g", name, int(bad.sum()), fill)
    return DataTable(schema=schema, numerical=num, categorical=cat, weights=np.ones(len(num_rows)))


def save_csv(table: DataTable, path) -> None:
    """Write a table as CSV with columns in schema order (weights are not written)."""
    schema = table.schema
    cols = [table.column_values(name) for name in schema.column_names]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(schema.column_names)
        for i in range(table.n_rows):
            writer.writerow([repr(float(c[i])) if isinstance(c[i], float) else str(c[i]) for c in cols])


def split_table(
    table: DataTable, sizes: tuple[int, int, int], seed: int
) -> tuple[DataTable, DataTable, DataTable]:
    """Randomly partition a table into (train, test, validation) parts.

    ``sizes`` must sum to the row count; the shuffle is a seeded
    permutation, so a fixed seed reproduces the same partition.
    """
    train_n, test_n, valid_n = (int(s) for s in sizes)
    if min(train_n, test_n, valid_n) < 0:
        raise SchemaError("split sizes must be nonnegative")
    if train_n + test_n + valid_n != table.n_rows:
        raise SchemaError(
            f"split sizes {sizes} do not sum to the row count {table.n_rows}"
        )
    order = np.random.default_rng(seed).permutation(table.n_rows)
    a, b = train_n, train_n + test_n
    return table.take(order[:a]), table.take(order[a:b]), table.take(order[b:])


@dataclass(frozen=True)
class ColumnTransform:
    """Fitted marginal for one numerical column: sorted distinct values
    paired with their Gaussian scores."""

    name: str
    values: np.ndarray
    scores: np.ndarray
    constant: bool


@dataclass(frozen=True)
class QuantileTransform:
    """Per-column monotone maps from raw values to Gaussian scores.

    Fitting ranks each column's values (ties share their averaged rank),
    converts ranks to probabilities (r - 0.5) / n, and applies the
    standard normal quantile function, clipping scores to +-SCORE_CLIP.
    Transform and inverse interpolate linearly between fitted knots and
    clamp outside the fitted range, so the inverse never extrapolates
    beyond the observed min/max.
    """

    columns: tuple[ColumnTransform, ...]
    log: tuple[str, ...] = field(default_factory=tuple)

    def _get(self, name: str) -> ColumnTransform:
        for ct in self.columns:
            if ct.name == name:
                return ct
        raise SchemaError(f"no fitted transform for column {name!r}")

    @property
    def column_names(self) -> tuple[str, ...]:
        return tuple(ct.name for ct in self.columns)

    def transform(self, name: str, values: np.ndarray) -> np.ndarray:
        ct = self._get(name)
        x = np.asarray(values, dtype=np.float64)
        if ct.constant:
            return np.zeros_like(x)
        return np.interp(x, ct.values, ct.scores)

    def inverse(self, name: str, scores: np.ndarray) -> np.ndarray:
        ct = self._get(name)
        z = np.asarray(scores, dtype=np.float64)
        if ct.constant:
            return np.full_like(z, ct.values[0])
        return np.interp(z, ct.scores, ct.values)


def fit_quantile_transform(table: DataTable) -> QuantileTransform:
    """Fit Gaussianizing marginals on a training table."""
    if table.n_rows == 0:
        raise SchemaError("cannot fit a quantile transform on an empty table")
    n = table.n_rows
    cols = []
    log = []
    for j, name in enumerate(table.schema.numerical_columns):
        values, counts = np.unique(table.numerical[:, j], return_counts=True)
        if len(values) == 1:
            cols.append(ColumnTransform(name=name, values=values, scores=np.zeros(1), constant=True))
            log.append(f"column {name!r}: constant in the fitting data; scores pinned to 0")
            continue
        ends = np.cumsum(counts)
        starts = ends - counts + 1
        mean_rank = (starts + ends) / 2.0
        probs = (mean_rank - 0.5) / n
        scores = np.clip(ndtri(probs), -SCORE_CLIP, SCORE_CLIP)
        cols.append(ColumnTransform(name=name, values=values, scores=scores, constant=False))
    return QuantileTransform(columns=tuple(cols), log=tuple(log))


@dataclass(frozen=True)
class Block:
    """One column's slice of an encoded matrix."""

    name: str
    kind: str
    offset: int
    width: int


@dataclass(frozen=True)
class EncodedLayout:
    """Column-to-slice map for an encoded matrix, plus the source schema."""

    schema: TableSchema
    blocks: tuple[Block, ...]

    @property
    def width(self) -> int:
        return sum(b.width for b in self.blocks)

    @property
    def column_names(self) -> tuple[str, ...]:
        return tuple(b.name for b in self.blocks)

    def block(self, name: str) -> Block:
        for b in self.blocks:
            if b.name == name:
                return b
        raise SchemaError(f"no block for column {name!r}")

    @property
    def numerical_slice(self) -> slice:
        widths = [b.width for b in self.blocks if b.kind == NUMERICAL]
        return slice(0, int(np.sum(widths, dtype=int)))

    def categorical_blocks(self) -> tuple[Block, ...]:
        return tuple(b for b in self.blocks if b.kind == CATEGORICAL)


@dataclass(frozen=True)
class EncodedMatrix:
    """A float matrix plus the layout describing its column blocks."""

    data: np.ndarray
    layout: EncodedLayout

    def __post_init__(self):
        if self.data.ndim != 2 or self.data.shape[1] != self.layout.width:
            raise SchemaError(
                f"encoded data width {self.data.shape} does not match layout width {self.layout.width}"
            )

    @property
    def n_rows(self) -> int:
        return self.data.shape[0]


def build_layout(schema: TableSchema, columns=None) -> EncodedLayout:
    """Layout for an encode of ``columns`` (default: all): the numerical
    block first, then one one-hot group per categorical, in schema order."""
    if columns is None:
        columns = schema.column_names
    chosen = set(columns)
    unknown = chosen - set(schema.column_names)
    if unknown:
        raise SchemaError(f"unknown columns: {sorted(unknown)}")
    blocks = []
    offset = 0
    for name in schema.numerical_columns:
        if name in chosen:
            blocks.append(Block(name=name, kind=NUMERICAL, offset=offset, width=1))
            offset += 1
    for name in schema.categorical_columns:
        if name in chosen:
            k = len(schema.column(name).categories)
            blocks.append(Block(name=name, kind=CATEGORICAL, offset=offset, width=k))
            offset += k
    return EncodedLayout(schema=schema, blocks=tuple(blocks))


def encode(table: DataTable, transform: QuantileTransform, columns=None) -> EncodedMatrix:
    """Encode a table: Gaussianized numericals then one-hot groups."""
    layout = build_layout(table.schema, columns)
    data = np.zeros((table.n_rows, layout.width), dtype=np.float64)
    for b in layout.blocks:
        if b.kind == NUMERICAL:
            j = table.schema.numerical_columns.index(b.name)
            data[:, b.offset] = transform.transform(b.name, table.numerical[:, j])
        else:
            j = table.schema.categorical_columns.index(b.name)
            data[np.arange(table.n_rows), b.offset + table.categorical[:, j]] = 1.0
    return EncodedMatrix(data=data, layout=layout)


def encode_features(table: DataTable, transform: QuantileTransform) -> EncodedMatrix:
    """Encode every column except the label (classifier inputs)."""
    names = [n for n in table.schema.column_names if n != table.schema.label_column]
    return encode(table, transform, columns=names)


def decode(matrix: EncodedMatrix, transform: QuantileTransform) -> DataTable:
    """Map an encoded matrix back to rows; requires a full-schema layout.

    Each one-hot group decodes by argmax; numerical scores invert through
    the fitted transform, which clamps to the fitted min/max.  Non-finite
    entries are rejected.
    """
    layout = matrix.layout
    schema = layout.schema
    if set(layout.column_names) != set(schema.column_names):
        raise DecodeError("layout does not cover every schema column")
    if not np.all(np.isfinite(matrix.data)):
        raise DecodeError("encoded matrix contains non-finite values")
    n = matrix.n_rows
    num = np.zeros((n, len(schema.numerical_columns)), dtype=np.float64)
    cat = np.zeros((n, len(schema.categorical_columns)), dtype=np.int64)
    for b in layout.blocks:
        if b.kind == NUMERICAL:
            j = schema.numerical_columns.index(b.name)
            num[:, j] = transform.inverse(b.name, matrix.data[:, b.offset])
        else:
            j = schema.categorical_columns.index(b.name)
            group = matrix.data[:, b.offset : b.offset + b.width]
            cat[:, j] = np.argmax(group, axis=1)
    return DataTable(schema=schema, numerical=num, categorical=cat, weights=np.ones(n))
