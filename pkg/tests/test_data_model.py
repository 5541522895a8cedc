import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gbcdc.data_model import (
    CompositionResult,
    LocalFit,
    RegressionDataset,
    parse_dataset_csv,
    partition_contiguous,
    partition_shuffled,
    write_dataset_csv,
    read_dataset_csv,
)
from gbcdc.errors import DatasetFormatError, DimensionMismatchError, DomainError, IndivisibleError


def _is_partition(part, n):
    idx = np.concatenate(part.blocks)
    return idx.size == n and np.array_equal(np.sort(idx), np.arange(n))


class TestDataset:
    def test_rejects_nan_and_inf(self):
        for bad in (np.nan, np.inf, -np.inf):
            x = np.ones((3, 2))
            x[1, 0] = bad
            with pytest.raises(DomainError):
                RegressionDataset(x, np.zeros(3))
        with pytest.raises(DomainError):
            RegressionDataset(np.ones((3, 2)), np.array([0.0, np.nan, 1.0]))

    def test_row_mismatch(self):
        with pytest.raises((DimensionMismatchError, DomainError)):
            RegressionDataset(np.ones((3, 2)), np.zeros(4))

    def test_arrays_read_only(self):
        d = RegressionDataset(np.ones((3, 2)), np.zeros(3))
        with pytest.raises(ValueError):
            d.x[0, 0] = 5.0

    def test_batches_follow_partition(self, rng):
        d = RegressionDataset(rng.standard_normal((12, 3)), rng.standard_normal(12))
        part = partition_shuffled(12, 3, seed=4)
        for block, b in zip(part.blocks, d.batches(part)):
            np.testing.assert_array_equal(b.x, d.x[block])
            np.testing.assert_array_equal(b.y, d.y[block])


class TestPartition:
    def test_small_contiguous(self):
        part = partition_contiguous(6, 3)
        assert [b.tolist() for b in part.blocks] == [[0, 1], [2, 3], [4, 5]]

    def test_full_scale_grid(self):
        part = partition_contiguous(10000, 400)
        assert part.N == 400
        assert set(part.sizes) == {25}

    def test_indivisible(self):
        with pytest.raises(IndivisibleError):
            partition_contiguous(7, 3)
        with pytest.raises(IndivisibleError):
            partition_shuffled(7, 3, seed=0)

    def test_lenient_remainder_goes_last(self):
        part = partition_contiguous(7, 3, strict=False)
        assert part.sizes == (2, 2, 3)
        assert _is_partition(part, 7)

    def test_shuffled_small(self):
        a = partition_shuffled(4, 2, seed=0)
        assert a.sizes == (2, 2) and _is_partition(a, 4)
        b = partition_shuffled(4, 2, seed=0)
        for u, v in zip(a.blocks, b.blocks):
            np.testing.assert_array_equal(u, v)
        c = partition_shuffled(4, 2, seed=1)
        assert _is_partition(c, 4)

    @given(st.integers(1, 300), st.integers(1, 40), st.integers(0, 2**31), st.booleans())
    def test_partition_law(self, n, N, seed, shuffled):
        if N > n:
            return
        make = (lambda: partition_shuffled(n, N, seed, strict=False)) if shuffled \
            else (lambda: partition_contiguous(n, N, strict=False))
        part = make()
        assert part.N == N
        assert sum(part.sizes) == n
        assert _is_partition(part, n)


class TestCsv:
    def test_round_trip(self, tmp_path, rng):
        d = RegressionDataset(rng.standard_normal((7, 2)), rng.standard_normal(7), ("a", "b", "y"))
        write_dataset_csv(d, tmp_path / "d.csv")
        back = read_dataset_csv(tmp_path / "d.csv")
        np.testing.assert_array_equal(back.x, d.x)
        np.testing.assert_array_equal(back.y, d.y)
        assert back.names == ("a", "b", "y")

    @pytest.mark.parametrize("text, line", [
        ("x,y\n1,2\n3\n", ":3:"),
        ("x,y\n1,2\n3,abc\n", ":3:"),
        ("x,y\n1,nan\n", ":2:"),
        ("x,y\n1,2\n2,3\n4,5,6\n", ":4:"),
    ])
    def test_errors_name_the_line(self, text, line):
        with pytest.raises(DatasetFormatError, match=line):
            parse_dataset_csv(text)

    def test_empty_and_headless(self):
        with pytest.raises(DatasetFormatError):
            parse_dataset_csv("")
        with pytest.raises(DatasetFormatError):
            parse_dataset_csv("x,y\n")
        with pytest.raises(DatasetFormatError):
            parse_dataset_csv("y\n1\n")


def _fit(rng, p=3):
    g = rng.standard_normal((p, p))
    g = g @ g.T + np.eye(p)
    return LocalFit(rng.standard_normal(p), g, -np.linalg.inv(g), tuple(range(p)), 0.2, 10, "ridge")


class TestLocalFit:
    def test_json_and_csv_round_trip(self, rng):
        fit = _fit(rng)
        for back in (LocalFit.from_json(fit.to_json()), LocalFit.from_csv(fit.to_csv())):
            np.testing.assert_array_equal(back.theta_hat, fit.theta_hat)
            np.testing.assert_array_equal(back.gram, fit.gram)
            np.testing.assert_array_equal(back.v_matrix, fit.v_matrix)
            assert back.support == fit.support and back.kind == fit.kind and back.m == fit.m

    def test_asymmetric_gram_rejected(self, rng):
        fit = _fit(rng)
        g = fit.gram.copy()
        g[0, 1] += 1e-3
        with pytest.raises(DomainError):
            LocalFit(fit.theta_hat, g, fit.v_matrix, fit.support, 0.2, 10, "ridge")

    def test_lasso_invariants(self):
        g = np.eye(3)
        with pytest.raises(DomainError):
            LocalFit(np.array([1.0, 0.5, 0.0]), g, -np.eye(1), (0,), 0.1, 10, "lasso")
        with pytest.raises(DimensionMismatchError):
            LocalFit(np.array([1.0, 0.0, 0.0]), g, -np.eye(2), (0,), 0.1, 10, "lasso")
        LocalFit(np.array([1.0, 0.0, 0.0]), g, -np.eye(1), (0,), 0.1, 10, "lasso")


class TestCompositionResult:
    def test_serialization(self):
        res = CompositionResult(np.array([1.0, 2.0]), np.zeros((2, 2)), np.array([0.1, 0.2]),
                                np.array([0.5, 0.5]), "bc_ge", 8, (0, 2))
        lines = res.to_csv().strip().splitlines()
        assert lines[0] == "k,theta_tilde,var_hat,sigma2_hat"
        assert lines[1].startswith("1,") and lines[2].startswith("3,")
        d = json.loads(res.to_json())
        assert d["schema"] == "gbcdc.composition/1"
        np.testing.assert_array_equal(res.full_vector(3), [1.0, 0.0, 2.0])

    def test_negative_variance_rejected(self):
        with pytest.raises(DomainError):
            CompositionResult(np.array([1.0]), np.zeros((1, 1)), np.array([-0.1]),
                              np.array([0.5]), "bc_ge", 8, (0,))
