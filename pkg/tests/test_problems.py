import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from anqopt.problems import (IDX_IMAGES, IDX_LABELS, LeastSquares, Logistic, gen_linreg,
                             gen_logreg_synthetic, load_dataset, load_mnist_idx, normalize_rows,
                             prox_l1, reference_solution, ridge_for_kappa, save_dataset, write_idx)


def central_diff(fun, x, h=1e-6):
    g = np.zeros_like(x)
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = h
        g[j] = (fun(x + e) - fun(x - e)) / (2 * h)
    return g


def small_ls(alpha=0.0, seed=0):
    return gen_linreg(m=4, n_per_agent=6, d=5, seed=seed, alpha=alpha)[1]


def test_prox_l1_examples():
    assert prox_l1([3.0, -0.5, 0.2, -2.0], 1.0).tolist() == [2.0, 0.0, 0.0, -1.0]
    assert prox_l1([1.5], 0.0).tolist() == [1.5]
    with pytest.raises(ValueError):
        prox_l1([1.0], -1.0)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=10), st.floats(0, 10))
def test_prox_l1_is_argmin(w, t):
    w = np.array(w)
    x = prox_l1(w, t)
    obj = lambda z: t * np.abs(z).sum() + 0.5 * np.sum((z - w) ** 2)
    rng = np.random.default_rng(0)
    for _ in range(5):
        assert obj(x) <= obj(x + 1e-3 * rng.standard_normal(x.shape)) + 1e-9


def test_least_squares_gradient_matches_fd():
    p = small_ls()
    rng = np.random.default_rng(1)
    for _ in range(10):
        X = rng.standard_normal((p.m, p.d))
        G = p.grad(X)
        for i in range(p.m):
            fd = central_diff(lambda x: p.value(np.vstack([X[:i], x, X[i + 1:]]))[i], X[i].copy())
            assert np.allclose(G[i], fd, atol=1e-5)


def test_logistic_gradient_and_hessian_match_fd():
    _, p = gen_logreg_synthetic(m=3, n_per_agent=8, d=4, seed=2)
    rng = np.random.default_rng(3)
    for _ in range(10):
        x = 3 * rng.standard_normal(p.d)
        g = p.grad_one(1, x)
        assert np.allclose(g, central_diff(lambda z: p.value_one(1, z), x), atol=1e-6)
        H = p.hessian(1, x)
        Hfd = np.column_stack([central_diff(lambda z: p.grad_one(1, z)[j], x) for j in range(p.d)])
        assert np.allclose(H, Hfd, atol=1e-5)
        assert np.allclose(p.grad(np.tile(x, (p.m, 1)))[1], g)


def test_logistic_stable_for_large_margins():
    _, p = gen_logreg_synthetic(m=2, n_per_agent=5, d=3, seed=0)
    X = np.full((2, 3), 1e4)
    assert np.all(np.isfinite(p.value(X))) and np.all(np.isfinite(p.grad(X)))


def test_smoothness_constants_bound_hessians():
    p = small_ls()
    for i in range(p.m):
        ev = np.linalg.eigvalsh(p.hessian(i, None))
        assert ev[-1] <= p.L_i[i] + 1e-9 and ev[0] >= p.mu_i[i] - 1e-9
    _, q = gen_logreg_synthetic(m=3, n_per_agent=10, d=4, seed=1)
    rng = np.random.default_rng(0)
    for _ in range(20):
        x = 5 * rng.standard_normal(q.d)
        for i in range(q.m):
            ev = np.linalg.eigvalsh(q.hessian(i, x))
            assert ev[-1] <= q.L_i[i] + 1e-12 and ev[0] >= q.mu_i[i] - 1e-12


def test_local_argmin_solves_tilted_problem():
    p = small_ls()
    Y = np.random.default_rng(2).standard_normal((p.m, p.d))
    assert np.allclose(p.grad(p.local_argmin(Y)) + Y, 0, atol=1e-9)
    _, q = gen_logreg_synthetic(m=3, n_per_agent=10, d=4, seed=1)
    Yq = 0.1 * np.random.default_rng(3).standard_normal((q.m, q.d))
    assert np.allclose(q.grad(q.local_argmin(Yq)) + Yq, 0, atol=1e-10)


def test_ridge_pins_kappa():
    for kappa in (5.0, 10.0, 50.0):
        _, p = gen_linreg(m=5, n_per_agent=5, d=8, seed=1, kappa_target=kappa)
        assert p.kappa == pytest.approx(kappa, rel=1e-9)
    with pytest.raises(ValueError):
        ridge_for_kappa(np.array([10.0]), np.array([5.0]), 3.0)  # data alone gives 2
    with pytest.raises(ValueError):
        ridge_for_kappa(np.array([10.0]), np.array([5.0]), 1.0)


def test_generator_is_seeded():
    a, pa = gen_linreg(m=3, n_per_agent=4, d=5, seed=9)
    b, pb = gen_linreg(m=3, n_per_agent=4, d=5, seed=9)
    assert np.array_equal(a.U, b.U) and np.array_equal(a.v, b.v)
    assert np.count_nonzero(a.x0_true) == 5 - round(0.7 * 5)


def test_ar1_feature_correlation():
    data, _ = gen_linreg(m=1, n_per_agent=200_000, d=3, beta=0.5, seed=0)
    C = np.corrcoef(data.U[0].T)
    assert C[0, 1] == pytest.approx(0.5, abs=0.01)
    assert C[0, 2] == pytest.approx(0.25, abs=0.01)


@pytest.mark.parametrize("alpha", [0.0, 1e-4, 0.5])
def test_reference_solution_optimality(alpha):
    p = small_ls(alpha)
    x = reference_solution(p)
    g = p.F_grad(x)
    on = x != 0
    assert np.allclose(g[on] + alpha * np.sign(x[on]), 0, atol=1e-9)
    assert np.all(np.abs(g[~on]) <= alpha + 1e-9)


def test_reference_solution_logistic():
    _, p = gen_logreg_synthetic(m=3, n_per_agent=10, d=4, seed=1, alpha=1e-3)
    x = reference_solution(p)
    g = p.F_grad(x)
    on = x != 0
    assert np.allclose(g[on] + 1e-3 * np.sign(x[on]), 0, atol=1e-9)
    assert np.all(np.abs(g[~on]) <= 1e-3 + 1e-9)


def test_normalize_rows():
    U = normalize_rows(np.array([[3.0, 4.0], [0.0, 2.0]]))
    assert np.allclose(np.linalg.norm(U, axis=1), 1)
    with pytest.raises(ValueError):
        normalize_rows(np.zeros((1, 2)))


def test_mnist_idx_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    imgs = rng.integers(1, 255, size=(10, 4, 4), dtype=np.uint8)
    labels = np.array([3, 1, 3, 0, 3, 2, 3, 3, 1, 0], dtype=np.uint8)
    write_idx(tmp_path / "img", imgs, IDX_IMAGES)
    write_idx(tmp_path / "lab", labels, IDX_LABELS)
    data = load_mnist_idx(tmp_path / "img", tmp_path / "lab", 3, m=3)
    assert data.U.shape == (3, 3, 16)
    assert np.allclose(np.linalg.norm(data.U, axis=-1), 1)
    assert data.v.ravel().tolist() == [1, -1, 1, -1, 1, -1, 1, 1, -1]


def test_mnist_idx_errors(tmp_path):
    imgs = np.ones((4, 2, 2), dtype=np.uint8)
    write_idx(tmp_path / "img", imgs, IDX_IMAGES)
    write_idx(tmp_path / "lab", np.zeros(3, dtype=np.uint8), IDX_LABELS)
    with pytest.raises(ValueError):
        load_mnist_idx(tmp_path / "img", tmp_path / "lab", 0, 2)  # count mismatch
    with pytest.raises(ValueError):
        load_mnist_idx(tmp_path / "lab", tmp_path / "lab", 0, 2)  # wrong magic
    raw = (tmp_path / "img").read_bytes()
    (tmp_path / "cut").write_bytes(raw[:-3])
    write_idx(tmp_path / "lab4", np.zeros(4, dtype=np.uint8), IDX_LABELS)
    with pytest.raises(ValueError):
        load_mnist_idx(tmp_path / "cut", tmp_path / "lab4", 0, 2)


def test_dataset_container_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    U = [rng.standard_normal((n, 3)) for n in (2, 5, 1)]
    v = [rng.standard_normal(n) for n in (2, 5, 1)]
    save_dataset(tmp_path / "d.qnds", U, v)
    U2, v2 = load_dataset(tmp_path / "d.qnds")
    assert all(np.array_equal(a, b) for a, b in zip(U, U2))
    assert all(np.array_equal(a, b) for a, b in zip(v, v2))
    raw = (tmp_path / "d.qnds").read_bytes()
    (tmp_path / "bad").write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(ValueError):
        load_dataset(tmp_path / "bad")
    (tmp_path / "short").write_bytes(raw[:-8])
    with pytest.raises(ValueError):
        load_dataset(tmp_path / "short")


def test_problem_shape_validation():
    with pytest.raises(ValueError):
        LeastSquares(np.zeros((2, 3)), np.zeros(2))
    with pytest.raises(ValueError):
        Logistic(np.zeros((2, 3, 4)), np.zeros((2, 2)))
