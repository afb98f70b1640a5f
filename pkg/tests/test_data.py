import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from alsncg.core import RatingsMatrix
from alsncg.data import (
    DataError,
    EmpiricalDistributions,
    build_subset,
    fit_distributions,
    ingest_csv,
    median_window,
    movielens_like,
    sample_synthetic,
    write_csv,
    write_id_maps,
)


def write(tmp_path, text, name="r.csv"):
    path = tmp_path / name
    path.write_text(text)
    return path


def test_ingest_three_lines(tmp_path):
    R = ingest_csv(write(tmp_path, "10,7,4.0\n10,3,3.0\n20,7,5.0\n"))
    assert (R.n_u, R.n_m, R.nnz) == (2, 2, 3)
    np.testing.assert_array_equal(R.user_ids, [10, 20])
    np.testing.assert_array_equal(R.item_ids, [7, 3])
    assert R.by_user(0) == [(0, 4.0), (1, 3.0)]


def test_ingest_header_timestamp_and_crlf(tmp_path):
    R = ingest_csv(write(tmp_path, "userId,movieId,rating,timestamp\r\n1,2,3.5,99\r\n2,2,1.0,100\r\n"), has_header=True)
    assert (R.n_u, R.n_m, R.nnz) == (2, 1, 2)


@pytest.mark.parametrize(
    "text, match",
    [
        ("1,2,3\n1,x,3\n", "line 2"),
        ("1,2\n", "line 1"),
        ("1,2,3\n0,2,3\n", "line 2"),
        ("1,2,3\n2,2,1\n1,2,4\n", "line 3: duplicate"),
        ("", "no ratings"),
    ],
)
def test_ingest_errors(tmp_path, text, match):
    with pytest.raises(DataError, match=match):
        ingest_csv(write(tmp_path, text))


def test_csv_and_id_map_round_trip(tmp_path):
    R = ingest_csv(write(tmp_path, "5,9,4.5\n3,9,2.0\n5,1,1.0\n"))
    write_csv(R, tmp_path / "out.csv")
    back = ingest_csv(tmp_path / "out.csv", has_header=True)
    assert back.triples()[2].tolist() == R.triples()[2].tolist()
    np.testing.assert_array_equal(back.user_ids, R.user_ids)
    write_id_maps(R, tmp_path)
    assert (tmp_path / "users.csv").read_text() == "newId,originalId\n0,5\n1,3\n"


def test_median_window_example():
    counts = np.array([9, 8, 7, 6, 5, 4, 3])
    sel = median_window(counts, np.arange(7), 4)
    np.testing.assert_array_equal(counts[sel], [8, 7, 6, 5])
    with pytest.raises(DataError):
        median_window(counts, np.arange(7), 8)


def test_median_window_ties_by_id():
    sel = median_window(np.array([2, 2, 2, 2]), np.array([40, 10, 30, 20]), 2)
    np.testing.assert_array_equal(sel, [3, 2])  # ids 20, 30: sorted slots 1..2 around c = 2


def test_subset_identity():
    R = movielens_like(30, 12, seed=1, min_count=3)
    S = build_subset(R, R.n_u, R.n_m)
    assert S.nnz == R.nnz
    assert sorted(zip(*[a.tolist() for a in S.triples()])) == sorted(zip(*[a.tolist() for a in R.triples()]))


def naive_subset_ids(R, n_u, n_m):
    # straightforward re-implementation using Python sorting
    users = sorted(range(R.n_u), key=lambda i: (-R.user_counts[i], R.user_ids[i]))
    c = len(users) // 2
    chosen = users[c - n_u // 2 : c - n_u // 2 + n_u]
    cnt = {j: 0 for j in range(R.n_m)}
    for i in chosen:
        for j, _ in R.by_user(i):
            cnt[j] += 1
    items = sorted(range(R.n_m), key=lambda j: (-cnt[j], R.item_ids[j]))
    c = len(items) // 2
    return set(R.user_ids[chosen].tolist()), set(R.item_ids[items[c - n_m // 2 : c - n_m // 2 + n_m]].tolist())


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 1000), st.integers(1, 40), st.integers(1, 25))
def test_subset_matches_naive_selection(seed, n_u, n_m):
    R = movielens_like(60, 30, seed=seed, min_count=2)
    S = build_subset(R, n_u, n_m)
    S.check_consistency()
    assert (S.n_u, S.n_m) == (n_u, n_m)
    users, items = naive_subset_ids(R, n_u, n_m)
    assert set(S.user_ids.tolist()) == users and set(S.item_ids.tolist()) == items


def test_subset_too_large():
    R = movielens_like(10, 5, seed=0, min_count=2)
    with pytest.raises(DataError):
        build_subset(R, 11, 5)


def test_fit_distributions_examples():
    users = np.repeat(np.arange(4), 5)
    items = np.tile(np.arange(5), 4)
    d = fit_distributions(RatingsMatrix.from_triples(4, 5, users, items, np.full(20, 3.0)))
    np.testing.assert_array_equal(d.count_values, [5])
    np.testing.assert_array_equal(d.count_probs, [1.0])
    u = np.concatenate([np.arange(30), np.arange(10)])
    i = np.concatenate([np.zeros(30, int), np.ones(10, int)])
    d = fit_distributions(RatingsMatrix.from_triples(30, 2, u, i, np.ones(40)))
    np.testing.assert_allclose(d.item_probs, [0.75, 0.25])
    with pytest.raises(DataError):
        fit_distributions(RatingsMatrix.from_triples(2, 2, [], [], []))


def test_fit_distributions_normalized():
    d = fit_distributions(movielens_like(200, 50, seed=3))
    for p in (d.count_probs, d.item_probs, d.rating_probs):
        assert abs(p.sum() - 1.0) <= 1e-12 and np.all(p >= 0)


def test_sample_point_mass():
    d = EmpiricalDistributions(np.array([3]), np.array([1.0]), np.full(6, 1 / 6), np.array([4.0]), np.array([1.0]))
    S = sample_synthetic(d, 50, 6, seed=1)
    np.testing.assert_array_equal(S.user_counts, np.full(50, 3))
    assert set(S.user_ratings.tolist()) == {4.0}


def test_sample_deterministic_and_distinct():
    d = fit_distributions(movielens_like(300, 80, seed=2))
    a = sample_synthetic(d, 500, 80, seed=7)
    b = sample_synthetic(d, 500, 80, seed=7)
    for x, y in zip(a.triples(), b.triples()):
        assert x.tobytes() == y.tobytes()
    a.check_consistency()  # from_triples rejects duplicate pairs
    for i in range(a.n_u):
        row = a.user_items[a.user_indptr[i] : a.user_indptr[i + 1]]
        assert np.all(np.diff(row) > 0)
    with pytest.raises(DataError):
        sample_synthetic(d, 10, 81, seed=0)


def test_sample_count_histogram_total_variation():
    d = fit_distributions(movielens_like(2000, 200, seed=5))
    S = sample_synthetic(d, 100_000, 200, seed=11)
    vals, counts = np.unique(S.user_counts, return_counts=True)
    emp = dict(zip(vals.tolist(), (counts / counts.sum()).tolist()))
    src = dict(zip(d.count_values.tolist(), d.count_probs.tolist()))
    tv = 0.5 * sum(abs(emp.get(k, 0.0) - src.get(k, 0.0)) for k in set(emp) | set(src))
    assert tv <= 0.02


@pytest.mark.parametrize("seed", range(5))
def test_sample_reproduces_mean_ratings_per_user(seed):
    src = movielens_like(400, 80, seed=1)
    d = fit_distributions(src)
    S = sample_synthetic(d, src.n_u, src.n_m, seed=seed)
    assert S.nnz / S.n_u == pytest.approx(d.mean_ratings_per_user(), rel=0.05)


def test_sample_impossible_counts():
    d = EmpiricalDistributions(np.array([5]), np.array([1.0]), np.array([0.5, 0.5, 0, 0, 0]), np.array([1.0]), np.array([1.0]))
    with pytest.raises(DataError):
        sample_synthetic(d, 3, 5, seed=0)
