import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tca.core import (DataFormatError, Dataset, DegenerateData, DimensionMismatch, InvalidTree,
                      SingularCovariance, SpanningTree, estimate_covariance, load_csv,
                      load_dataset, save_binary, save_csv, transform_sources)


def test_whitened_data_gives_identity(rng):
    x = rng.standard_normal((500, 3))
    x -= x.mean(axis=0)
    evals, evecs = np.linalg.eigh(x.T @ x / len(x))
    z = x @ evecs @ np.diag(evals ** -0.5) @ evecs.T
    cov = estimate_covariance(z)
    assert np.allclose(cov.sigma, np.eye(3), atol=1e-10)
    assert np.allclose(cov.inv_sqrt, np.eye(3), atol=1e-10)


def test_covariance_matches_generator(rng):
    sigma = np.array([[1.0, 0.5], [0.5, 1.0]])
    x = rng.multivariate_normal([0, 0], sigma, size=10000)
    assert np.abs(estimate_covariance(x).sigma - sigma).max() < 0.05


def test_rank_deficient_covariance():
    with pytest.raises(SingularCovariance):
        estimate_covariance(np.array([[0.0, 1.0, 2.0], [1.0, 0.0, 3.0]]))


def test_inverse_square_root_whitens(rng):
    x = rng.standard_normal((400, 4)) @ rng.standard_normal((4, 4))
    cov = estimate_covariance(x)
    assert np.allclose(cov.inv_sqrt @ cov.sigma @ cov.inv_sqrt, np.eye(4), atol=1e-9)
    assert np.allclose(cov.sqrt @ cov.sqrt, cov.sigma, atol=1e-9)


def test_transform_identity_diagonal_and_permutation(rng):
    x = rng.standard_normal((10, 3))
    assert np.array_equal(transform_sources(np.eye(3), x), x)
    out = transform_sources(np.diag([2.0, 1.0, 1.0]), np.ones((1, 3)))
    assert np.allclose(out, [[2.0, 1.0, 1.0]])
    p = np.eye(3)[[2, 0, 1]]
    assert np.array_equal(transform_sources(p, x), x[:, [2, 0, 1]])


def test_transform_shape_mismatch(rng):
    with pytest.raises(DimensionMismatch):
        transform_sources(np.eye(2), rng.standard_normal((5, 3)))


def test_dataset_rejects_nonfinite():
    with pytest.raises(DegenerateData):
        Dataset(np.array([[1.0, np.nan], [0.0, 1.0]]))


def test_tree_validation():
    with pytest.raises(InvalidTree):
        SpanningTree(3, [(0, 1)])
    with pytest.raises(InvalidTree):
        SpanningTree(4, [(0, 1), (1, 2), (0, 2)])
    with pytest.raises(InvalidTree):
        SpanningTree(3, [(0, 0), (1, 2)])
    t = SpanningTree(3, [(2, 1), (1, 0)])
    assert t.edges == ((0, 1), (1, 2))
    assert t.leaves() == [0, 2]


def test_csv_round_trip_and_errors(tmp_path, rng):
    x = rng.standard_normal((20, 3))
    p = tmp_path / "d.csv"
    save_csv(p, x)
    assert np.array_equal(load_csv(p).samples, x)
    bad = tmp_path / "bad.csv"
    bad.write_text("1,2,3\n4,5\n")
    with pytest.raises(DataFormatError) as err:
        load_csv(bad)
    assert err.value.line == 2
    bad.write_text("a,b\n1,2\n3,oops\n")
    with pytest.raises(DataFormatError, match="line 3"):
        load_csv(bad)


def test_binary_round_trip(tmp_path, rng):
    x = rng.standard_normal((7, 2))
    p = tmp_path / "d.bin"
    save_binary(p, x)
    assert np.array_equal(load_dataset(p).samples, x)


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 5), st.integers(0, 10_000))
def test_covariance_is_symmetric_positive(m, seed):
    r = np.random.default_rng(seed)
    x = r.standard_normal((50, m)) @ r.standard_normal((m, m))
    cov = estimate_covariance(x)
    assert np.allclose(cov.sigma, cov.sigma.T)
    assert np.linalg.eigvalsh(cov.sigma).min() > 0
