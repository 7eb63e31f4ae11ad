import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from synthval.dataset import (
    DatasetError,
    ObservationalDataset,
    RngSeed,
    arm_indices,
    load_csv,
    resample_indices,
    resample_xw,
    write_csv,
)

from conftest import make_dataset


def test_four_row_file(four_row_csv):
    d = load_csv(four_row_csv)
    assert (d.n, d.p) == (4, 1)
    assert arm_indices(d, 0).size == arm_indices(d, 1).size == 2
    assert d.column_names == ("x1",)
    assert np.array_equal(d.outcome, [1.0, 2.0, 4.0, 3.0])


def test_all_untreated_file_rejected(tmp_path):
    path = tmp_path / "d.csv"
    path.write_text("x1,w,y\n1,0,1\n2,0,2\n3,0,3\n4,0,4\n")
    with pytest.raises(DatasetError, match="empty treated arm"):
        load_csv(path)


def test_nan_outcome_names_row(tmp_path):
    path = tmp_path / "d.csv"
    path.write_text("x1,w,y\n1,0,1\n2,1,NaN\n3,0,3\n4,1,4\n")
    with pytest.raises(DatasetError, match="row 2") as info:
        load_csv(path)
    assert "y" in str(info.value)


@pytest.mark.parametrize(
    "body, pattern",
    [
        ("x1,w,y\n1,0,1\n2,2,2\n", "row 2"),
        ("x1,w,y\n1,0,1\nabc,1,2\n", "x1"),
        ("x1,y\n1,1\n2,2\n", "missing column 'w'"),
    ],
)
def test_load_errors_are_located(tmp_path, body, pattern):
    path = tmp_path / "d.csv"
    path.write_text(body)
    with pytest.raises(DatasetError, match=pattern):
        load_csv(path)


def test_custom_column_names(tmp_path):
    path = tmp_path / "d.csv"
    path.write_text("treat,a,outcome,b\n0,1,5,2\n1,2,6,3\n")
    d = load_csv(path, treatment_col="treat", outcome_col="outcome")
    assert d.column_names == ("a", "b")
    assert np.array_equal(d.covariates, [[1, 2], [2, 3]])


def test_round_trip(tmp_path):
    d = make_dataset(n=30, p=4, seed=3)
    path = tmp_path / "d.csv"
    write_csv(d, path)
    assert load_csv(path).same_data(d)


def test_storage_is_column_major_and_frozen():
    d = make_dataset(n=10, p=2)
    assert d.covariates.flags.f_contiguous
    with pytest.raises(ValueError):
        d.covariates[0, 0] = 1.0


def test_invariants_enforced():
    X = np.zeros((3, 1))
    with pytest.raises(DatasetError, match="row 3 is not 0 or 1"):
        ObservationalDataset(X, [0, 1, 3], [1.0, 2.0, 3.0])
    with pytest.raises(DatasetError, match="empty untreated arm"):
        ObservationalDataset(X, [1, 1, 1], [1.0, 2.0, 3.0])
    with pytest.raises(DatasetError, match="row counts differ"):
        ObservationalDataset(X, [0, 1], [1.0, 2.0, 3.0])
    with pytest.raises(DatasetError, match="non-finite"):
        ObservationalDataset(np.array([[0.0], [np.inf]]), [0, 1], [1.0, 2.0])


def test_arm_indices_examples():
    d = ObservationalDataset(np.zeros((4, 1)), [0, 1, 0, 1], [1.0, 2.0, 3.0, 4.0])
    assert arm_indices(d, 1).tolist() == [1, 3]
    assert arm_indices(d, 0).tolist() == [0, 2]


@given(st.lists(st.sampled_from([0, 1]), min_size=2, max_size=40).filter(lambda w: 0 < sum(w) < len(w)))
def test_arm_indices_partition(w):
    d = ObservationalDataset(np.zeros((len(w), 1)), w, np.arange(len(w), dtype=float))
    a0, a1 = arm_indices(d, 0), arm_indices(d, 1)
    assert np.intersect1d(a0, a1).size == 0
    assert sorted(np.concatenate([a0, a1]).tolist()) == list(range(len(w)))


def test_single_row_resample_repeats_it():
    # A one-row dataset is not a valid study, so this exercises the index draw.
    assert resample_indices(1, 3, RngSeed(5)).tolist() == [0, 0, 0]


def test_resample_frequencies_binomial():
    n, m = 1000, 100_000
    idx = resample_indices(n, m, RngSeed(11))
    counts = np.bincount(idx, minlength=n)
    p = 1 / n
    se = np.sqrt(m * p * (1 - p))
    # Each row's count lies within 3 SE of m/n (allow the few expected tail rows).
    outside = np.abs(counts - m * p) > 3 * se
    assert outside.mean() < 0.01


def test_resample_xw_pairs_are_observed_rows():
    d = make_dataset(n=50, p=3, seed=2)
    X, w = resample_xw(d, 200, RngSeed(1))
    rows = {tuple(r) + (t,) for r, t in zip(d.covariates, d.treatment)}
    assert all(tuple(r) + (t,) in rows for r, t in zip(X, w))
    X2, w2 = resample_xw(d, 200, RngSeed(1))
    assert np.array_equal(X, X2) and np.array_equal(w, w2)


def test_rng_streams():
    a = RngSeed(7, (1, 2)).generator().random(3)
    b = RngSeed(7).child(1, 2).generator().random(3)
    c = RngSeed(7, (2, 1)).generator().random(3)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
    with pytest.raises(ValueError):
        RngSeed(-1)


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 30), st.integers(1, 4), st.integers(0, 2**32))
def test_round_trip_property(tmp_path_factory, n, p, seed):
    d = make_dataset(n=max(n, 4), p=p, seed=seed)
    path = tmp_path_factory.mktemp("rt") / "d.csv"
    write_csv(d, path)
    assert load_csv(path).same_data(d)
