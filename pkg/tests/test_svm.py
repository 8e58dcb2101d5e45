import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kcascade import svm
from kcascade.errors import InvalidInputError


def project_box_hyperplane(v, y, C):
    """Euclidean projection onto {0 <= a <= C, a.y = 0} by bisection on the multiplier."""
    lo, hi = -1.0, 1.0

    def resid(mu):
        return np.clip(v - mu * y, 0.0, C) @ y

    while resid(lo) < 0:
        lo *= 2
    while resid(hi) > 0:
        hi *= 2
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if resid(mid) > 0:
            lo = mid
        else:
            hi = mid
    return np.clip(v - 0.5 * (lo + hi) * y, 0.0, C)


def pg_oracle(K, y, C, iters=100000):
    """Projected gradient ascent on the dual with a 1/L step."""
    Q = (y[:, None] * y[None, :]) * K
    L = max(np.linalg.eigvalsh(Q).max(), 1e-12)
    a = np.zeros(len(y))
    for _ in range(iters):
        nxt = project_box_hyperplane(a + (1.0 - Q @ a) / L, y, C)
        if np.max(np.abs(nxt - a)) < 1e-14:
            a = nxt
            break
        a = nxt
    return a, svm.dual_objective(a, y, K)


def gaussian_problem(seed, n=None):
    rng = np.random.default_rng(seed)
    n = n or int(rng.integers(3, 9))
    X = rng.standard_normal((n, 2))
    y = np.where(rng.random(n) < 0.5, 1.0, -1.0)
    y[0], y[1] = 1.0, -1.0
    width = rng.uniform(0.5, 3.0)
    K = np.exp(-((X[:, None] - X[None]) ** 2).sum(-1) / width)
    return K, y, float(rng.choice([0.1, 1.0, 10.0]))


def test_two_point_closed_form():
    K = np.eye(2)
    y = np.array([1.0, -1.0])
    m = svm.solve_dual(K, y, C=1e6, tol=1e-12)
    np.testing.assert_allclose(m.alphas, [1.0, 1.0], atol=1e-12)
    assert m.bias == pytest.approx(0.0, abs=1e-12)
    assert svm.decision(m, np.array([1.0, 0.0])) == pytest.approx(1.0, abs=1e-12)
    assert svm.nonzero_support(m) == [0, 1]


def test_two_point_grid_agrees():
    K = np.eye(2)
    y = np.array([1.0, -1.0])
    # feasible set is a1 = a2 = t; scan t on a fine grid
    ts = np.linspace(0, 3, 30001)
    best = ts[np.argmax([svm.dual_objective(np.array([t, t]), y, K) for t in ts])]
    assert best == pytest.approx(1.0, abs=1e-4)


def test_single_class_is_degenerate():
    K = np.eye(3)
    with pytest.warns(RuntimeWarning):
        m = svm.solve_dual(K, np.ones(3))
    assert m.degenerate and np.all(m.alphas == 0) and m.bias == 1.0
    with pytest.warns(RuntimeWarning):
        m = svm.solve_dual(K, -np.ones(3))
    assert m.bias == -1.0
    assert svm.nonzero_support(m) == []
    assert svm.decision(m, np.array([0.3, 0.2, 0.1])) == m.bias


def test_input_errors():
    y = np.array([1.0, -1.0])
    with pytest.raises(InvalidInputError):
        svm.solve_dual(np.array([[1.0, 0.5], [0.4, 1.0]]), y)
    with pytest.raises(InvalidInputError):
        svm.solve_dual(np.eye(2), np.array([1.0, 0.0]))
    with pytest.raises(InvalidInputError):
        svm.solve_dual(np.eye(3), y)
    with pytest.raises(InvalidInputError):
        svm.decision(svm.solve_dual(np.eye(2), y), np.ones(3))


@pytest.mark.parametrize("seed", range(10))
def test_matches_projected_gradient_oracle(seed):
    K, y, C = gaussian_problem(seed)
    m = svm.solve_dual(K, y, C=C, tol=1e-10, max_passes=10000)
    _, ref = pg_oracle(K, y, C)
    assert abs(m.dual_objective(K) - ref) <= 1e-6
    assert np.all(m.alphas >= 0) and np.all(m.alphas <= C)
    assert abs(m.alphas @ y) <= 1e-9


def test_history_non_decreasing_and_constraints():
    K, y, C = gaussian_problem(42, n=8)
    hist = []
    m = svm.solve_dual(K, y, C=C, tol=1e-8, history=hist)
    assert len(hist) == m.iterations + 1
    assert np.all(np.diff(hist) >= -1e-12)
    assert hist[-1] == pytest.approx(m.dual_objective(K), abs=1e-10)


def test_separable_margins():
    rng = np.random.default_rng(7)
    X = np.vstack([rng.normal(-3, 0.3, (10, 2)), rng.normal(3, 0.3, (10, 2))])
    y = np.r_[-np.ones(10), np.ones(10)]
    K = X @ X.T
    tol = 1e-6
    m = svm.solve_dual(K, y, C=1e3, tol=tol)
    assert m.converged
    margins = y * svm.decision(m, K)
    assert np.all(margins >= 1 - 10 * tol)
    free = (m.alphas > 1e-9) & (m.alphas < m.C - 1e-9)
    np.testing.assert_allclose(margins[free], 1.0, atol=10 * tol)


def test_small_c_support_bound():
    K, y, _ = gaussian_problem(3, n=8)
    y = -y
    m = svm.solve_dual(K, y, C=0.01)
    assert len(svm.nonzero_support(m)) <= len(y)
    assert np.all(m.alphas <= 0.01)


def test_indefinite_gram_keeps_constraints():
    rng = np.random.default_rng(0)
    A = rng.standard_normal((6, 6))
    K = A + A.T
    y = np.array([1.0, -1, 1, -1, 1, -1])
    hist = []
    m = svm.solve_dual(K, y, C=2.0, history=hist, max_passes=50)
    assert np.all(m.alphas >= 0) and np.all(m.alphas <= 2.0)
    assert abs(m.alphas @ y) <= 1e-9
    assert np.all(np.diff(hist) >= -1e-12)


def test_warm_start_reaches_same_optimum():
    K, y, C = gaussian_problem(5, n=8)
    cold = svm.solve_dual(K, y, C=C, tol=1e-10)
    warm = svm.solve_dual(K, y, C=C, tol=1e-10, alpha0=cold.alphas)
    assert warm.iterations <= 1
    assert warm.dual_objective(K) == pytest.approx(cold.dual_objective(K), abs=1e-12)


def test_budget_exhaustion_flagged():
    K, y, C = gaussian_problem(8, n=8)
    m = svm.solve_dual(K, y, C=C, tol=1e-14, max_passes=1)
    assert m.iterations <= len(y)
    assert np.all(m.alphas >= 0) and np.all(m.alphas <= C)


def test_predict_ties_negative():
    assert list(svm.predict(np.array([0.5, 0.0, -0.1]))) == [1, -1, -1]


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6))
def test_box_and_equilibrium_property(seed):
    K, y, C = gaussian_problem(seed)
    m = svm.solve_dual(K, y, C=C)
    assert np.all(m.alphas >= 0) and np.all(m.alphas <= C)
    assert abs(m.alphas @ y) <= 1e-9
