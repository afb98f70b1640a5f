import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from alsncg.als import als_solve, als_sweep, initial_iterate, item_equation, update_items, update_users, user_equation
from alsncg.core import FlatVector, RatingsMatrix, SolverConfig, flatten
from alsncg.ncg import gradient, loss
from oracles import naive_loss, random_problem


def test_single_rating_update():
    # A = 1, v = 2 -> u = 2
    R = RatingsMatrix.from_triples(1, 1, [0], [0], [2.0])
    U = update_users(np.array([[1.0]]), R, 0.0)
    assert U[0, 0] == 2.0


def test_two_ratings_least_squares():
    # m = (1, 1), r = (1, 3): u = (1 + 3) / 2
    R = RatingsMatrix.from_triples(1, 2, [0, 0], [0, 1], [1.0, 3.0])
    U = update_users(np.array([[1.0, 1.0]]), R, 0.0)
    assert U[0, 0] == pytest.approx(2.0, rel=4e-16)


def test_regularized_scalar_update():
    # (m^2 + lam * n) u = r m with one rating
    R = RatingsMatrix.from_triples(1, 1, [0], [0], [3.0])
    U = update_users(np.array([[2.0]]), R, 0.5)
    assert U[0, 0] == pytest.approx(6.0 / 4.5, rel=1e-15)


def test_unrated_item_gets_zero_column():
    R = RatingsMatrix.from_triples(2, 3, [0, 1], [0, 2], [1.0, 2.0])
    M = update_items(np.ones((2, 2)), R, 0.1)
    np.testing.assert_array_equal(M[:, 1], [0.0, 0.0])


def test_equation_matches_dense_assembly():
    R, x = random_problem(0, 15, 9, 3)
    eq = user_equation(x.items.T, R, 0.2, 4)
    js = [j for j, _ in R.by_user(4)]
    rs = np.array([r for _, r in R.by_user(4)])
    Mi = x.items[js].T
    np.testing.assert_allclose(eq.A, Mi @ Mi.T + 0.2 * len(js) * np.eye(3), rtol=1e-13)
    np.testing.assert_allclose(eq.v, Mi @ rs, rtol=1e-13)
    eq_m = item_equation(x.users.T, R, 0.2, 2)
    assert eq_m.A.shape == (3, 3)


@pytest.mark.parametrize("seed", range(4))
def test_half_sweeps_zero_block_gradient(seed):
    R, x = random_problem(seed, 25, 15, 4)
    lam = 0.1
    U = update_users(x.items.T, R, lam)
    y = FlatVector(U.T, x.items)
    g = gradient(y, R, lam)
    assert np.max(np.abs(g.users)) <= 1e-8 * max(1.0, np.max(np.abs(U)))
    M = update_items(U, R, lam)
    z = FlatVector(U.T, M.T)
    assert np.max(np.abs(gradient(z, R, lam).items)) <= 1e-8 * max(1.0, np.max(np.abs(M)))


@pytest.mark.parametrize("seed", range(4))
def test_half_sweep_is_exact_block_minimizer(seed):
    R, x = random_problem(seed, 20, 10, 3)
    lam = 0.1
    U = update_users(x.items.T, R, lam)
    best = naive_loss(FlatVector(U.T, x.items), R, lam)
    rng = np.random.default_rng(seed)
    for _ in range(5):
        pert = FlatVector(U.T + 1e-3 * rng.normal(size=U.T.shape), x.items)
        assert naive_loss(pert, R, lam) >= best


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.01, 1.0))
def test_sweep_never_increases_loss(seed, lam):
    R, x = random_problem(seed, 15, 10, 3)
    y = als_sweep(x, R, lam)
    assert loss(y, R, lam) <= loss(x, R, lam) * (1 + 1e-12)


def test_sweep_is_not_idempotent():
    R, x = random_problem(5, 20, 12, 3)
    y = als_sweep(x, R, 0.1)
    z = als_sweep(y, R, 0.1)
    assert not np.array_equal(y.to_array(), z.to_array())


def test_fixed_point_of_converged_solve():
    R, _ = random_problem(2, 20, 10, 2)
    cfg = SolverConfig(lam=0.1, n_f=2, tol=1e-12, max_iters=20000, seed=0)
    model, trace = als_solve(R, cfg)
    x = flatten(model)
    y = als_sweep(x, R, 0.1)
    assert np.max(np.abs(y.to_array() - x.to_array())) < 1e-6


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000))
def test_column_order_does_not_matter(seed):
    R, x = random_problem(seed, 20, 12, 3)
    order = np.random.default_rng(seed).permutation(R.n_u)
    a = update_users(x.items.T, R, 0.1)
    b = update_users(x.items.T, R, 0.1, order=order)
    assert a.tobytes() == b.tobytes()
    order_m = np.random.default_rng(seed + 1).permutation(R.n_m)
    assert update_items(a, R, 0.1).tobytes() == update_items(a, R, 0.1, order=order_m).tobytes()


def test_rank_one_realizable_converges():
    rng = np.random.default_rng(1)
    u, m = rng.uniform(0.5, 1.5, 7), rng.uniform(0.5, 1.5, 5)
    R = RatingsMatrix.from_dense(np.outer(u, m))
    cfg = SolverConfig(lam=0.0, n_f=1, tol=1e-10, max_iters=5000, seed=3)
    model, trace = als_solve(R, cfg)
    assert trace.converged
    np.testing.assert_allclose(model.U.T @ model.M, np.outer(u, m), rtol=1e-6)


def test_rank_deficient_system_falls_back(caplog):
    # two identical item columns with lam = 0 and n_f = 2 make A singular
    R = RatingsMatrix.from_triples(1, 2, [0, 0], [0, 1], [1.0, 1.0])
    M = np.array([[1.0, 1.0], [1.0, 1.0]])
    with caplog.at_level(logging.WARNING, logger="alsncg"):
        U = update_users(M, R, 0.0)
    assert "least-norm" in caplog.text
    np.testing.assert_allclose(U[:, 0], [0.5, 0.5], rtol=1e-12)


def test_negative_lambda_rejected():
    R, x = random_problem(0, 5, 4, 2)
    with pytest.raises(ValueError):
        update_users(x.items.T, R, -0.1)


def test_initial_iterate_seeded():
    R, _ = random_problem(0, 10, 6, 2)
    a = initial_iterate(R, 3, 7, 0.1)
    b = initial_iterate(R, 3, 7, 0.1)
    c = initial_iterate(R, 3, 8, 0.1)
    assert a.to_array().tobytes() == b.to_array().tobytes()
    assert not np.array_equal(a.to_array(), c.to_array())
    assert np.all((a.items >= 0) & (a.items < 1 / np.sqrt(3)))


def test_trace_and_snapshots(tmp_path):
    R, _ = random_problem(1, 20, 10, 3)
    cfg = SolverConfig(lam=0.1, n_f=3, tol=0.0, max_iters=6, seed=0, trace_every=2,
                       snapshot_every=3, snapshot_dir=str(tmp_path))
    _, trace = als_solve(R, cfg)
    assert list(trace.iters) == [0, 2, 4, 6]
    assert not trace.converged
    assert sorted(p.name for p in tmp_path.iterdir()) == [
        f"als-seed0-iter{k:06d}.npz" for k in (0, 3, 6)
    ]


def test_final_iterate_is_always_snapshotted(tmp_path):
    R, _ = random_problem(1, 20, 10, 3)
    cfg = SolverConfig(lam=0.1, n_f=3, tol=0.0, max_iters=7, seed=0, snapshot_every=5, snapshot_dir=str(tmp_path))
    als_solve(R, cfg)
    assert sorted(p.name for p in tmp_path.iterdir()) == [f"als-seed0-iter{k:06d}.npz" for k in (0, 5, 7)]
