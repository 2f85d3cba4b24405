import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ambifair.data_model import Dataset
from ambifair.errors import (
    ConfigError,
    ContractError,
    EmptyFileError,
    MissingColumnError,
    MissingValueError,
    NonNumericCellError,
    ZeroVarianceError,
)
from ambifair.ingest import IngestConfig, apply_stats, load_csv, split, standardize


def write(tmp_path, text, name="d.csv"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


class TestLoadCsv:
    def test_label_mapping(self, tmp_path):
        p = write(tmp_path, "x,label,sensitive\n1,yes,a\n2,no,b\n3,yes,a\n")
        d = load_csv(IngestConfig(p, positive_label_value="yes", protected_value="a"))
        assert d.labels.tolist() == [1, -1, 1]
        assert d.sensitive.tolist() == [0, 1, 0]
        assert d.feature_names == ("x",)

    def test_missing_sensitive_column(self, tmp_path):
        p = write(tmp_path, "x,label\n1,1\n")
        with pytest.raises(MissingColumnError) as exc:
            load_csv(IngestConfig(p))
        assert exc.value.column == "sensitive"
        assert "sensitive" in str(exc.value)

    def test_non_numeric_cell_has_context(self, tmp_path):
        p = write(tmp_path, "x,label,sensitive\n1,1,0\nabc,0,1\n")
        with pytest.raises(NonNumericCellError) as exc:
            load_csv(IngestConfig(p))
        assert (exc.value.row, exc.value.column) == (3, "x")

    def test_empty_file(self, tmp_path):
        with pytest.raises(EmptyFileError):
            load_csv(IngestConfig(write(tmp_path, "")))
        with pytest.raises(EmptyFileError):
            load_csv(IngestConfig(write(tmp_path, "x,label,sensitive\n", "h.csv")))

    def test_missing_values(self, tmp_path):
        p = write(tmp_path, "x,label,sensitive\n1,1,0\n,0,1\n2,0,1\n")
        assert load_csv(IngestConfig(p)).n == 2
        with pytest.raises(MissingValueError):
            load_csv(IngestConfig(p, drop_missing=False))

    def test_numeric_label_matching(self, tmp_path):
        p = write(tmp_path, "x,label,sensitive\n1,1.0,0\n2,0,1.0\n")
        d = load_csv(IngestConfig(p))
        assert d.labels.tolist() == [1, -1]
        assert d.sensitive.tolist() == [0, 1]

    def test_one_hot(self, tmp_path):
        p = write(tmp_path, "x,c,label,sensitive\n1,r,1,0\n2,g,0,1\n3,r,1,1\n")
        d = load_csv(IngestConfig(p, categorical_columns=("c",)))
        assert d.feature_names == ("x", "c=g", "c=r")
        assert d.features[:, 1:].tolist() == [[0, 1], [1, 0], [0, 1]]

    def test_compas_shaped(self, tmp_path):
        rng = np.random.default_rng(0)
        X = rng.normal(size=(5287, 7))
        y = rng.integers(0, 2, 5287)
        z = rng.integers(0, 2, 5287)
        head = ",".join([f"f{i}" for i in range(7)] + ["label", "sensitive"])
        body = "\n".join(",".join([*(repr(float(v)) for v in X[i]), str(y[i]), str(z[i])]) for i in range(5287))
        d = load_csv(IngestConfig(write(tmp_path, head + "\n" + body + "\n")))
        assert (d.n, d.d) == (5287, 7)


class TestSplit:
    def test_hundred(self):
        assert split(100, seed=0).sizes() == (50, 25, 25)

    def test_ten_rounding(self):
        assert split(10, seed=3).sizes() == (5, 2, 3)

    def test_deterministic(self):
        a, b = split(57, seed=11), split(57, seed=11)
        for x, y in zip((a.train_idx, a.val_idx, a.test_idx), (b.train_idx, b.val_idx, b.test_idx)):
            assert np.array_equal(x, y)

    def test_seed_changes_assignment(self):
        assert not np.array_equal(split(200, seed=1).train_idx, split(200, seed=2).train_idx)

    def test_too_small(self):
        with pytest.raises(ContractError):
            split(3)

    def test_bad_ratios(self):
        with pytest.raises(ConfigError):
            split(10, ratios=(0.5, 0.5, 0.1))

    @settings(max_examples=500, deadline=None)
    @given(st.integers(4, 3000), st.integers(0, 2**32 - 1))
    def test_partition_invariants(self, n, seed):
        sp = split(n, seed=seed)
        sp.check(n)
        tr, va, te = sp.sizes()
        assert tr == n // 2 and va == int(np.floor(0.25 * n))
        # floor twice leaves at most two extra rows for the test split
        assert 0 <= te - 0.25 * n < 2


class TestStandardize:
    def test_hand_arithmetic(self):
        d = Dataset([[2.0], [4.0]], [1, -1], [0, 1])
        out, stats = standardize(d, [0, 1])
        assert out.features[:, 0].tolist() == [-1.0, 1.0]
        assert stats == {"mean": [3.0], "std": [1.0]}

    def test_idempotent_on_standardized(self):
        rng = np.random.default_rng(0)
        X = rng.normal(size=(50, 3))
        X = (X - X.mean(0)) / X.std(0)
        d = Dataset(X, np.where(rng.random(50) < 0.5, 1, -1), rng.integers(0, 2, 50))
        out, _ = standardize(d)
        assert np.max(np.abs(out.features - X)) < 1e-12

    def test_constant_column(self):
        d = Dataset([[1.0, 2.0], [1.0, 3.0]], [1, -1], [0, 1], ("c", "v"))
        with pytest.raises(ZeroVarianceError) as exc:
            standardize(d)
        assert exc.value.column == "c"

    def test_train_only_statistics(self):
        d = Dataset([[0.0], [2.0], [100.0]], [1, -1, 1], [0, 1, 0])
        out, stats = standardize(d, [0, 1])
        assert stats["mean"] == [1.0]
        assert out.features[2, 0] == pytest.approx(99.0)

    def test_reapply_is_identity_on_stats(self):
        rng = np.random.default_rng(2)
        d = Dataset(rng.normal(3, 5, size=(30, 2)), np.ones(30, int), np.zeros(30, int))
        out, stats = standardize(d)
        again = apply_stats(d, stats)
        assert np.max(np.abs(out.features - again.features)) < 1e-12
