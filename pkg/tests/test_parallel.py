import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from alsncg.als import als_sweep, update_items, update_users
from alsncg.core import FactorModel, RatingsMatrix, SolverConfig, flatten
from alsncg.ncg import als_ncg_solve, gradient
from alsncg.als import als_solve
from alsncg.parallel import (
    BlockExecutor,
    ShuffleStats,
    build_partitioning,
    build_routing_tables,
    load_snapshot,
    parallel_half_sweep,
    save_snapshot,
)
from oracles import brute_routes, random_problem


def test_partition_examples():
    p = build_partitioning(10, 4)
    assert p.block_of(5) == 1
    assert p.sizes == (3, 3, 2, 2)
    assert build_partitioning(10, 3).sizes == (4, 3, 3)
    np.testing.assert_array_equal(p.members(1), [1, 5, 9])
    with pytest.raises(ValueError):
        build_partitioning(10, 0)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 200), st.integers(1, 12))
def test_partition_covers_everything_once(n, nb):
    p = build_partitioning(n, nb)
    allm = np.concatenate([p.members(b) for b in range(nb)]) if n else np.array([], int)
    assert sorted(allm.tolist()) == list(range(n))
    assert max(p.sizes) - min(p.sizes) <= 1


def test_diagonal_matrix_has_no_cross_block_traffic():
    n = 8
    R = RatingsMatrix.from_dense(np.diag(np.arange(1.0, n + 1)), np.eye(n, dtype=bool))
    p = build_partitioning(n, 4)
    T_u, T_m = build_routing_tables(R, p, p)
    assert T_m.cross_block_columns == 0 and T_u.cross_block_columns == 0
    assert set(T_m.routes) == {(b, b) for b in range(4)}


def test_routes_are_deduplicated():
    # item 0 rated by users 0 and 2, both in block 0 of 2
    R = RatingsMatrix.from_triples(4, 1, [0, 2, 1], [0, 0, 0], [1.0, 2.0, 3.0])
    T_u, T_m = build_routing_tables(R, build_partitioning(4, 2), build_partitioning(1, 2))
    np.testing.assert_array_equal(T_m.get(0, 0), [0])
    np.testing.assert_array_equal(T_m.get(0, 1), [0])
    assert T_m.columns_sent == 2


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 5), st.integers(1, 5))
def test_routing_matches_brute_force(seed, nb_u, nb_m):
    R, _ = random_problem(seed, 17, 11, 1, density=0.2)
    pu, pm = build_partitioning(R.n_u, nb_u), build_partitioning(R.n_m, nb_m)
    T_u, T_m = build_routing_tables(R, pu, pm)
    got_m = {k: v.tolist() for k, v in T_m.routes.items()}
    got_u = {k: v.tolist() for k, v in T_u.routes.items()}
    assert got_m == brute_routes(R, nb_m, nb_u, items_to_users=True)
    assert got_u == brute_routes(R, nb_u, nb_m, items_to_users=False)
    # each destination block receives an item at most once, so the
    # volume is bounded by the number of ratings and by n_m * n_blocks
    assert T_m.columns_sent <= min(R.nnz, R.n_m * nb_u)


def test_shuffle_stats():
    R, _ = random_problem(3, 20, 10, 1)
    p = build_partitioning(20, 3)
    q = build_partitioning(10, 3)
    T_u, T_m = build_routing_tables(R, p, q)
    s = ShuffleStats.from_table("users", T_m, 5)
    assert s.columns_sent == T_m.columns_sent
    assert s.scalar_values_sent == 5 * T_m.columns_sent
    assert s.cross_block_columns == sum(len(v) for (a, b), v in T_m.routes.items() if a != b)


@pytest.mark.parametrize("workers", [1, 2, 4, 8])
def test_parallel_half_sweeps_match_serial_bitwise(workers):
    R, x = random_problem(4, 60, 35, 4)
    tables = build_routing_tables(R, build_partitioning(R.n_u, workers), build_partitioning(R.n_m, workers))
    model = FactorModel(x.users.T.copy(), x.items.T.copy())
    U, _ = parallel_half_sweep("users", model, R, 0.1, tables, n_workers=workers)
    assert U.T.tobytes() == update_users(model.M, R, 0.1).tobytes()
    M, _ = parallel_half_sweep("items", FactorModel(U.T.copy(), model.M), R, 0.1, tables, n_workers=workers)
    assert M.T.tobytes() == update_items(U.T, R, 0.1).tobytes()


def test_executor_sweep_and_gradient_match_serial():
    R, x = random_problem(6, 40, 25, 3)
    ex = BlockExecutor(R, n_blocks=3, n_workers=3)
    y, cross = ex.sweep(x, 0.1)
    assert y.to_array().tobytes() == als_sweep(x, R, 0.1).to_array().tobytes()
    assert cross == ex.sweep_shuffle
    assert ex.gradient(x, 0.1).to_array().tobytes() == gradient(x, R, 0.1).to_array().tobytes()


@pytest.mark.parametrize("solver", [als_solve, als_ncg_solve])
def test_solvers_independent_of_worker_count(solver):
    R, _ = random_problem(8, 40, 20, 3)
    ref = None
    for w in (1, 2, 4):
        cfg = SolverConfig(lam=0.1, n_f=3, tol=0.0, max_iters=8, seed=1, n_workers=w)
        model, trace = solver(R, cfg)
        key = (flatten(model).to_array().tobytes(), tuple(trace.losses))
        ref = ref or key
        assert key == ref


@pytest.mark.parametrize("single", [False, True])
def test_snapshot_round_trip(tmp_path, single):
    rng = np.random.default_rng(0)
    model = FactorModel(rng.normal(size=(3, 5)), rng.normal(size=(3, 4)))
    path = tmp_path / "snap.npz"
    save_snapshot(path, model, 12, 7, 1.5, single_precision=single)
    back, header = load_snapshot(path)
    assert header["iter"] == 12 and header["seed"] == 7 and header["n_u"] == 5
    if single:
        np.testing.assert_allclose(back.U, model.U, rtol=1e-7)
        assert header["dtype"] == "float32"
    else:
        assert back.U.tobytes() == model.U.tobytes()
        assert back.M.tobytes() == model.M.tobytes()
