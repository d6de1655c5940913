"""Schema, ingestion, split, quantile transform, and encode/decode checks."""

import numpy as np
import pytest

import oracles
from conftest import binary_schema, random_binary_table
from fairtab.dataset import (
    ColumnSpec,
    DataTable,
    TableSchema,
    build_layout,
    concat_tables,
    decode,
    encode,
    encode_features,
    fit_quantile_transform,
    load_csv,
    load_schema,
    save_csv,
    save_schema,
    split_table,
)
from fairtab.errors import DecodeError, ParseError, SchemaError


def small_schema():
    return TableSchema(
        columns=(
            ColumnSpec(name="age", kind="numerical"),
            ColumnSpec(name="hours", kind="numerical"),
            ColumnSpec(name="work_class", kind="categorical", categories=("gov", "private", "?")),
            ColumnSpec(name="sex", kind="categorical", categories=("Male", "Female")),
            ColumnSpec(name="income", kind="categorical", categories=("<=50K", ">50K")),
        ),
        label_column="income",
        favorable_value=">50K",
        protected_column="sex",
        privileged_value="Male",
    )


class TestSchema:
    def test_roles_must_be_categorical(self):
        with pytest.raises(SchemaError):
            TableSchema(
                columns=(
                    ColumnSpec(name="x", kind="numerical"),
                    ColumnSpec(name="sex", kind="categorical", categories=("m", "f")),
                ),
                label_column="x",
                favorable_value="1",
                protected_column="sex",
                privileged_value="m",
            )

    def test_favorable_value_must_be_a_category(self):
        with pytest.raises(SchemaError):
            TableSchema(
                columns=(ColumnSpec(name="y", kind="categorical", categories=("no", "yes")),),
                label_column="y",
                favorable_value="maybe",
                protected_column="y",
                privileged_value="yes",
            )

    def test_duplicate_columns_rejected(self):
        with pytest.raises(SchemaError):
            TableSchema(
                columns=(
                    ColumnSpec(name="y", kind="categorical", categories=("a", "b")),
                    ColumnSpec(name="y", kind="numerical"),
                ),
                label_column="y",
                favorable_value="a",
                protected_column="y",
                privileged_value="a",
            )

    def test_with_protected_swaps_designation(self):
        schema = small_schema()
        swapped = schema.with_protected("work_class", "gov")
        assert swapped.protected_column == "work_class"
        assert swapped.privileged_value == "gov"
        assert swapped.label_column == schema.label_column

    def test_yaml_round_trip(self, tmp_path):
        schema = small_schema()
        path = tmp_path / "schema.yaml"
        save_schema(schema, path)
        assert load_schema(path) == schema


class TestTable:
    def test_label_and_privileged_vectors(self):
        schema = small_schema()
        table = DataTable.from_values(
            schema,
            {
                "age": [25.0, 40.0, 31.0],
                "hours": [40.0, 50.0, 20.0],
                "work_class": ["gov", "private", "?"],
                "sex": ["Male", "Female", "Male"],
                "income": [">50K", "<=50K", "<=50K"],
            },
        )
        assert table.labels.tolist() == [1, 0, 0]
        assert table.privileged.tolist() == [True, False, True]

    def test_category_index_out_of_range_rejected(self):
        schema = binary_schema()
        with pytest.raises(SchemaError):
            DataTable(
                schema=schema,
                numerical=np.zeros((1, 1)),
                categorical=np.array([[0, 5]]),
                weights=np.ones(1),
            )

    def test_negative_weights_rejected(self):
        schema = binary_schema()
        with pytest.raises(SchemaError):
            DataTable(
                schema=schema,
                numerical=np.zeros((1, 1)),
                categorical=np.zeros((1, 2), dtype=np.int64),
                weights=np.array([-1.0]),
            )

    def test_concat_requires_same_schema(self, rng):
        t1 = random_binary_table(rng, 5)
        t2 = random_binary_table(rng, 3)
        merged = concat_tables(t1, t2)
        assert merged.n_rows == 8
        other = random_binary_table(rng, 2, schema=binary_schema(("x", "y")))
        with pytest.raises(SchemaError):
            concat_tables(t1, other)


class TestLoadCsv:
    def write(self, tmp_path, text):
        path = tmp_path / "data.csv"
        path.write_text(text, encoding="utf-8")
        return path

    def test_reads_rows_and_missing_categorical(self, tmp_path):
        path = self.write(
            tmp_path,
            "age,hours,work_class,sex,income\n"
            "25,40,gov,Male,>50K\n"
            "38,50,?,Female,<=50K\n"
            "52,20,private,Male,<=50K\n",
        )
        table = load_csv(path, small_schema())
        assert table.n_rows == 3
        assert table.column_values("work_class").tolist() == ["gov", "?", "private"]
        assert np.allclose(table.weights, 1.0)

    def test_missing_numerical_gets_column_median(self, tmp_path):
        path = self.write(
            tmp_path,
            "age,hours,work_class,sex,income\n"
            "10,40,gov,Male,>50K\n"
            "?,40,gov,Male,<=50K\n"
            "30,40,gov,Female,<=50K\n",
        )
        table = load_csv(path, small_schema())
        assert table.column_values("age").tolist() == [10.0, 20.0, 30.0]

    def test_unknown_category_names_column_and_value(self, tmp_path):
        path = self.write(
            tmp_path,
            "age,hours,work_class,sex,income\n25,40,circus,Male,>50K\n",
        )
        with pytest.raises(SchemaError, match="work_class.*circus"):
            load_csv(path, small_schema())

    def test_bad_number_reports_line(self, tmp_path):
        path = self.write(
            tmp_path,
            "age,hours,work_class,sex,income\n"
            "25,40,gov,Male,>50K\n"
            "abc,40,gov,Male,>50K\n",
        )
        with pytest.raises(ParseError, match="line 3"):
            load_csv(path, small_schema())

    def test_empty_table_rejected(self, tmp_path):
        path = self.write(tmp_path, "age,hours,work_class,sex,income\n")
        with pytest.raises(SchemaError, match="no data rows"):
            load_csv(path, small_schema())

    def test_header_mismatch_rejected(self, tmp_path):
        path = self.write(tmp_path, "age,hours,work_class,sex\n25,40,gov,Male\n")
        with pytest.raises(SchemaError):
            load_csv(path, small_schema())

    def test_save_load_round_trip(self, tmp_path, rng):
        table = random_binary_table(rng, 20)
        path = tmp_path / "round.csv"
        save_csv(table, path)
        back = load_csv(path, table.schema)
        assert np.array_equal(back.categorical, table.categorical)
        assert np.allclose(back.numerical, table.numerical, rtol=0, atol=0)


class TestSplit:
    def test_census_sized_partition(self):
        schema = binary_schema()
        n = 28048 + 16281 + 6513
        table = DataTable(
            schema=schema,
            numerical=np.arange(n, dtype=np.float64).reshape(-1, 1),
            categorical=np.zeros((n, 2), dtype=np.int64),
            weights=np.ones(n),
        )
        train, test, valid = split_table(table, (28048, 16281, 6513), seed=3)
        assert (train.n_rows, test.n_rows, valid.n_rows) == (28048, 16281, 6513)
        merged = np.sort(
            np.concatenate([train.numerical[:, 0], test.numerical[:, 0], valid.numerical[:, 0]])
        )
        assert np.array_equal(merged, np.arange(n, dtype=np.float64))

    def test_deterministic_under_seed(self, rng):
        table = random_binary_table(rng, 30)
        a1 = split_table(table, (20, 7, 3), seed=11)
        a2 = split_table(table, (20, 7, 3), seed=11)
        for t1, t2 in zip(a1, a2):
            assert np.array_equal(t1.numerical, t2.numerical)
            assert np.array_equal(t1.categorical, t2.categorical)
        b = split_table(table, (20, 7, 3), seed=12)
        assert not all(np.array_equal(x.numerical, y.numerical) for x, y in zip(a1, b))

    def test_sizes_must_sum(self, rng):
        table = random_binary_table(rng, 10)
        with pytest.raises(SchemaError):
            split_table(table, (5, 4, 2), seed=0)


class TestQuantileTransform:
    def table_from_column(self, values):
        schema = binary_schema()
        n = len(values)
        return DataTable(
            schema=schema,
            numerical=np.asarray(values, dtype=np.float64).reshape(-1, 1),
            categorical=np.tile([0, 1], (n, 1)),
            weights=np.ones(n),
        )

    def test_three_point_scores_match_bisection_oracle(self):
        table = self.table_from_column([1.0, 2.0, 3.0])
        qt = fit_quantile_transform(table)
        got = qt.transform("x", np.array([1.0, 2.0, 3.0]))
        want = [oracles.inverse_normal_cdf(p) for p in (1 / 6, 1 / 2, 5 / 6)]
        assert np.allclose(got, want, atol=1e-9)
        assert abs(got[0] - (-0.9674215661017012)) < 1e-9

    def test_ties_share_averaged_rank(self):
        table = self.table_from_column([5.0, 5.0, 7.0])
        qt = fit_quantile_transform(table)
        got = qt.transform("x", np.array([5.0, 5.0, 7.0]))
        assert got[0] == got[1]
        assert abs(got[0] - oracles.inverse_normal_cdf(1 / 3)) < 1e-9
        assert abs(got[2] - oracles.inverse_normal_cdf(5 / 6)) < 1e-9

    def test_round_trip_on_fitted_values(self, rng):
        for _ in range(20):
            n = int(rng.integers(2, 200))
            values = np.round(rng.normal(scale=50, size=n), 2)
            if len(np.unique(values)) < 2:
                continue
            table = self.table_from_column(values)
            qt = fit_quantile_transform(table)
            back = qt.inverse("x", qt.transform("x", values))
            assert np.allclose(back, values, atol=1e-9)

    def test_monotone_nondecreasing(self, rng):
        table = self.table_from_column(rng.normal(size=100))
        qt = fit_quantile_transform(table)
        grid = np.sort(rng.uniform(-4, 4, size=300))
        out = qt.transform("x", grid)
        assert np.all(np.diff(out) >= 0)

    def test_scores_clipped(self):
        table = self.table_from_column(np.arange(50, dtype=np.float64))
        qt = fit_quantile_transform(table)
        out = qt.transform("x", np.array([-1e9, 1e9]))
        assert out[0] >= -5.2 and out[1] <= 5.2

    def test_inverse_clamps_to_fitted_range(self):
        table = self.table_from_column([2.0, 4.0, 9.0])
        qt = fit_quantile_transform(table)
        back = qt.inverse("x", np.array([-30.0, 30.0]))
        assert back.tolist() == [2.0, 9.0]

    def test_constant_column_flagged_and_centered(self):
        table = self.table_from_column([3.0, 3.0, 3.0])
        qt = fit_quantile_transform(table)
        assert qt.columns[0].constant
        assert any("constant" in line for line in qt.log)
        assert np.all(qt.transform("x", np.array([3.0, 8.0])) == 0.0)
        assert np.all(qt.inverse("x", np.array([-2.0, 2.0])) == 3.0)


class TestEncodeDecode:
    def test_layout_widths(self):
        schema = small_schema()
        layout = build_layout(schema)
        assert layout.width == 2 + 3 + 2 + 2
        feature_layout = build_layout(schema, [n for n in schema.column_names if n != "income"])
        assert feature_layout.width == 2 + 3 + 2

    def test_one_hot_groups_sum_to_one(self, rng):
        table = random_binary_table(rng, 40)
        qt = fit_quantile_transform(table)
        mat = encode(table, qt)
        for block in mat.layout.categorical_blocks():
            group = mat.data[:, block.offset : block.offset + block.width]
            assert np.all(group.sum(axis=1) == 1.0)
            assert np.all((group == 0.0) | (group == 1.0))

    def test_numerical_block_comes_first(self, rng):
        table = random_binary_table(rng, 10)
        qt = fit_quantile_transform(table)
        mat = encode(table, qt)
        kinds = [b.kind for b in mat.layout.blocks]
        assert kinds == sorted(kinds, key=lambda k: k != "numerical")

    def test_round_trip(self, rng):
        for _ in range(10):
            table = random_binary_table(rng, int(rng.integers(5, 80)))
            qt = fit_quantile_transform(table)
            back = decode(encode(table, qt), qt)
            assert np.array_equal(back.categorical, table.categorical)
            assert np.allclose(back.numerical, table.numerical, atol=1e-9)
            assert np.all(back.weights == 1.0)

    def test_feature_encode_drops_label(self, rng):
        table = random_binary_table(rng, 12)
        qt = fit_quantile_transform(table)
        mat = encode_features(table, qt)
        assert "outcome" not in mat.layout.column_names
        assert mat.layout.width == 1 + 2

    def test_decode_rejects_non_finite(self, rng):
        table = random_binary_table(rng, 6)
        qt = fit_quantile_transform(table)
        mat = encode(table, qt)
        data = mat.data.copy()
        data[0, 0] = np.nan
        from fairtab.dataset import EncodedMatrix

        with pytest.raises(DecodeError):
            decode(EncodedMatrix(data=data, layout=mat.layout), qt)

    def test_decode_requires_full_layout(self, rng):
        table = random_binary_table(rng, 6)
        qt = fit_quantile_transform(table)
        mat = encode_features(table, qt)
        with pytest.raises(DecodeError):
            decode(mat, qt)
