import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy.optimize import minimize

from conftest import grid_min
from synthreg.simplex import (
    InvalidInputError,
    InvalidPenaltyError,
    PenaltySpec,
    SolveSpec,
    Weights,
    default_eta,
    penalty_value_and_range,
    project_simplex,
    projected_gradient_norm,
    solve_absolute_oracle,
    solve_affine_ls,
    solve_constrained_ls,
    solve_moments,
)


def test_projection_examples():
    assert np.allclose(project_simplex([0.5, 0.5]), [0.5, 0.5])
    assert np.allclose(project_simplex([1.2, 0.2]), [1.0, 0.0])
    assert np.allclose(project_simplex([3.0] * 4), 0.25)


def test_projection_matches_grid_on_two_points():
    v = np.array([1.2, 0.2])
    a = np.linspace(0, 1, 1001)
    grid = np.column_stack([a, 1 - a])
    best = grid[np.argmin(((grid - v) ** 2).sum(axis=1))]
    assert np.allclose(project_simplex(v), best, atol=1e-3)


@given(arrays(np.float64, st.integers(1, 8), elements=st.floats(-10, 10)))
def test_projection_variational_inequality(v):
    # x is the projection iff <v - x, z - x> <= 0 for every simplex point z;
    # by linearity it is enough to check the vertices
    x = project_simplex(v)
    assert x.min() >= 0 and abs(x.sum() - 1) < 1e-12
    inner = (v - x) @ (np.eye(v.size) - x).T
    assert inner.max() <= 1e-9


@given(arrays(np.float64, st.integers(1, 6), elements=st.floats(-5, 5)))
def test_projection_idempotent(v):
    x = project_simplex(v)
    assert np.allclose(project_simplex(x), x, atol=1e-12)


def test_projection_rejects_bad_input():
    with pytest.raises(InvalidInputError):
        project_simplex([np.nan, 1.0])
    with pytest.raises(InvalidInputError):
        project_simplex([])


def test_single_control_forced():
    spec = SolveSpec(np.array([0.3, -0.9]), np.array([[0.1], [0.4]]))
    assert np.array_equal(solve_constrained_ls(spec).theta, [1.0])


def test_min_norm_tie_break():
    Y = np.array([[0.0, 0.0], [1.0, 1.0]])
    theta = solve_constrained_ls(SolveSpec(np.array([0.5, 0.5]), Y)).theta
    # any theta fits equally well; the tie-break picks the uniform point
    assert np.allclose(theta, [0.5, 0.5], atol=1e-6)


def test_uniform_sample_weights_do_not_move_argmin(rng):
    Y, y0 = rng.uniform(-1, 1, (10, 3)), rng.uniform(-1, 1, 10)
    a = solve_constrained_ls(SolveSpec(y0, Y)).theta
    b = solve_constrained_ls(SolveSpec(y0, Y, sample_weights=np.full(10, 0.37))).theta
    assert np.allclose(a, b, atol=1e-9)


@pytest.mark.parametrize("n", [1, 2, 3])
def test_constrained_ls_matches_grid(rng, n):
    for _ in range(10):
        T = rng.integers(1, 9)
        Y, y0 = rng.uniform(-1, 1, (T, n)), rng.uniform(-1, 1, T)
        theta = solve_constrained_ls(SolveSpec(y0, Y)).theta
        obj = float(((y0 - Y @ theta) ** 2).sum())
        assert obj <= grid_min(y0, Y, n) + 1e-9


def test_constrained_ls_matches_slsqp(rng):
    for _ in range(20):
        n, T = rng.integers(2, 8), rng.integers(2, 30)
        Y, y0 = rng.uniform(-1, 1, (T, n)), rng.uniform(-1, 1, T)
        theta = solve_constrained_ls(SolveSpec(y0, Y)).theta
        f = lambda t: float(((y0 - Y @ t) ** 2).sum())  # noqa: E731
        ref = minimize(
            f, np.full(n, 1 / n), method="SLSQP", bounds=[(0, 1)] * n,
            constraints={"type": "eq", "fun": lambda t: t.sum() - 1}, options={"ftol": 1e-14},
        )
        assert f(theta) <= ref.fun + 1e-9


def test_solution_satisfies_kkt(rng):
    Y, y0 = rng.uniform(-1, 1, (25, 6)), rng.uniform(-1, 1, 25)
    theta = solve_constrained_ls(SolveSpec(y0, Y)).theta
    grad = 2 * Y.T @ (Y @ theta - y0)
    assert projected_gradient_norm(theta, grad) < 1e-7


def test_warm_start_agrees_with_cold(rng):
    Y, y0 = rng.uniform(-1, 1, (30, 5)), rng.uniform(-1, 1, 30)
    cold = solve_constrained_ls(SolveSpec(y0, Y)).theta
    warm = solve_constrained_ls(SolveSpec(y0, Y, warm_start=Weights(np.eye(5)[3]))).theta
    assert np.allclose(cold, warm, atol=1e-8)


def test_solve_moments_scale_invariant(rng):
    Y, y0 = rng.uniform(-1, 1, (12, 4)), rng.uniform(-1, 1, 12)
    a = solve_moments(Y.T @ Y, Y.T @ y0)
    b = solve_moments(1e3 * Y.T @ Y, 1e3 * Y.T @ y0)
    assert np.allclose(a, b, atol=1e-8)


def test_affine_examples():
    spec = SolveSpec(np.full(4, 0.5), np.zeros((4, 1)))
    w = solve_affine_ls(spec)
    assert w.intercept == pytest.approx(0.5) and np.allclose(w.theta, [1.0])
    clipped = solve_affine_ls(SolveSpec(np.full(3, 3.0), np.zeros((3, 2))))
    assert clipped.intercept == pytest.approx(2.0)


def test_affine_exact_fit(rng):
    Y = rng.uniform(-1, 1, (15, 3))
    theta = np.array([0.2, 0.5, 0.3])
    w = solve_affine_ls(SolveSpec(-1.5 + Y @ theta, Y))
    resid = -1.5 + Y @ theta - (w.intercept + Y @ w.theta)
    assert float(resid @ resid) < 1e-12


def test_absolute_oracle_matches_grid(rng):
    for _ in range(10):
        T = rng.integers(1, 9)
        Y, y0 = rng.uniform(-1, 1, (T, 2)), rng.uniform(-1, 1, T)
        _, value = solve_absolute_oracle(y0, Y)
        a = np.linspace(0, 1, 1001)
        grid = np.column_stack([a, 1 - a])
        ref = np.abs(y0[:, None] - Y @ grid.T).sum(axis=0).min()
        assert value <= ref + 1e-9


def test_penalty_ranges():
    value, K = penalty_value_and_range(PenaltySpec("entropy"), 4)
    assert value == pytest.approx(0.0, abs=1e-15) and K == pytest.approx(math.log(4))
    assert penalty_value_and_range(PenaltySpec("ridge"), 2)[1] == pytest.approx(0.25)
    assert PenaltySpec("entropy").value(np.eye(5)[0]) == pytest.approx(math.log(5))


def test_quadratic_range_against_dense_sampling(rng):
    n = 3
    X = rng.uniform(-1, 1, (4, n))
    pen = PenaltySpec.quadratic(np.eye(4), X, x=rng.uniform(-1, 1, 4))
    _, K = penalty_value_and_range(pen, n)
    pts = rng.dirichlet(np.ones(n) * 0.3, size=20000)
    vals = np.array([pen.value(p) for p in pts])
    assert vals.max() - vals.min() <= K + 1e-9
    assert vals.max() - vals.min() >= K - 0.05


def test_quadratic_penalty_validation():
    with pytest.raises(InvalidPenaltyError):
        PenaltySpec("quadratic", H=np.eye(2), X=np.zeros((2, 2)))
    with pytest.raises(InvalidPenaltyError):
        PenaltySpec("lasso")


def test_default_rates():
    assert default_eta("entropy", 4, 100) == pytest.approx(0.11774, abs=1e-5)
    assert default_eta("ridge", 5, 100) == pytest.approx(1 / math.sqrt(2000))
    with pytest.raises(ValueError):
        default_eta("quadratic", 3, 10)
