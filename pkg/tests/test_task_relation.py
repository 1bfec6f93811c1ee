import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from oracles import exact_alpha_row, grid_alpha_min, grid_projection
from smtl.errors import ValidationError
from smtl.task_relation import (
    AlphaObjectiveInputs,
    alpha_row_objective,
    project_to_simplex,
    solve_alpha_row,
    solve_alpha_rows,
    uniform_alpha,
    update_alpha,
)

vectors = arrays(np.float64, st.integers(1, 7), elements=st.floats(-50, 50, allow_nan=False))


def random_inputs(rng, T, reg=None):
    E = rng.uniform(0, 1, (T, T))
    E = (E + E.T) * (1 - np.eye(T))
    reg = rng.choice([0.0, 0.05, 0.3, 1.0, 3.0]) if reg is None else reg
    return AlphaObjectiveInputs(rng.uniform(0, 2, (T, T)), E, reg=reg, lambda_E=rng.uniform(0, 2))


def test_projection_examples():
    np.testing.assert_allclose(project_to_simplex([0.5, 0.5, 0.5]), np.full(3, 1 / 3), atol=1e-15)
    np.testing.assert_array_equal(project_to_simplex([1.2, -0.2]), [1.0, 0.0])
    np.testing.assert_array_equal(grid_projection(np.array([1.2, -0.2]), 0.005), [1.0, 0.0])
    v = np.array([0.2, 0.3, 0.5])
    np.testing.assert_allclose(project_to_simplex(v), v, atol=1e-12)
    with pytest.raises(ValidationError):
        project_to_simplex([])


@given(vectors)
def test_projection_lands_on_simplex_and_is_idempotent(v):
    x = project_to_simplex(v)
    assert np.all(x >= 0) and abs(x.sum() - 1) < 1e-12
    np.testing.assert_allclose(project_to_simplex(x), x, atol=1e-12)


@given(vectors)
def test_projection_satisfies_the_optimality_condition(v):
    # x = P(v) iff (v - x) . (y - x) <= 0 for every simplex vertex y.
    x = project_to_simplex(v)
    for i in range(len(v)):
        y = np.zeros(len(v))
        y[i] = 1
        assert (v - x) @ (y - x) <= 1e-9 * (1 + np.abs(v).max())


def test_row_wise_projection_matches_vector_projection():
    rng = np.random.default_rng(0)
    M = rng.standard_normal((5, 4))
    np.testing.assert_array_equal(project_to_simplex(M), np.array([project_to_simplex(r) for r in M]))


def test_objective_examples():
    inputs = AlphaObjectiveInputs(np.full(3, 0.4), np.zeros((3, 3)), reg=0.0)
    for a in ([1, 0, 0], [0.2, 0.3, 0.5], np.full(3, 1 / 3)):
        assert alpha_row_objective(a, 1, inputs) == pytest.approx(0.4, abs=1e-15)
    E = np.array([[0.0, 2.0], [2.0, 0.0]])
    inputs = AlphaObjectiveInputs(np.array([1.0, 3.0]), E, reg=0.5, lambda_E=0.25)
    assert alpha_row_objective([0, 1], 0, inputs) == pytest.approx(3.0 + 0.25 * 2.0 + 0.5, abs=1e-15)
    with pytest.raises(ValidationError):
        alpha_row_objective([0.6, 0.6], 0, inputs)


@given(st.integers(0, 2**31 - 1))
def test_objective_matches_direct_evaluation(seed):
    rng = np.random.default_rng(seed)
    inputs = random_inputs(rng, 4)
    a = rng.dirichlet(np.ones(4))
    direct = sum(a[i] * (inputs.task_losses[2, i] + inputs.lambda_E * inputs.E[2, i]) for i in range(4))
    direct += inputs.reg * np.sqrt(sum(x * x for x in a))
    assert alpha_row_objective(a, 2, inputs) == pytest.approx(direct, abs=1e-13)


def test_input_validation():
    with pytest.raises(ValidationError):
        AlphaObjectiveInputs(np.array([1.0, -0.1]), np.zeros((2, 2)))
    with pytest.raises(ValidationError):
        AlphaObjectiveInputs(np.array([1.0, np.inf]), np.zeros((2, 2)))
    with pytest.raises(ValidationError):
        AlphaObjectiveInputs(np.ones(3), np.zeros((2, 2)))
    with pytest.raises(ValidationError):
        solve_alpha_row(0, AlphaObjectiveInputs(np.ones(2), np.zeros((2, 2))), steps=0)


def test_symmetric_inputs_converge_to_uniform():
    inputs = AlphaObjectiveInputs(np.full(3, 0.8), np.zeros((3, 3)), reg=1.0)
    row = solve_alpha_row(0, inputs, init=[0.8, 0.1, 0.1])
    np.testing.assert_allclose(row, np.full(3, 1 / 3), atol=1e-3)
    # grid search at 0.01 confirms the uniform point is the minimiser
    assert alpha_row_objective(row, 0, inputs) <= grid_alpha_min(inputs.costs(0), 1.0, 0.01) + 1e-12


def test_dominated_vertex_wins_without_regulariser():
    E = np.array([[0.0, 0.3, 0.4], [0.3, 0.0, 0.1], [0.4, 0.1, 0.0]])
    inputs = AlphaObjectiveInputs(np.array([0.9, 0.2, 0.8]), E, reg=0.0)
    np.testing.assert_allclose(solve_alpha_row(0, inputs), [0, 1, 0], atol=1e-3)


def test_two_cost_linear_case():
    inputs = AlphaObjectiveInputs(np.array([1.0, 2.0]), np.zeros((2, 2)), reg=0.0)
    row = solve_alpha_row(0, inputs)
    np.testing.assert_allclose(row, [1.0, 0.0], atol=1e-12)
    assert alpha_row_objective(row, 0, inputs) == pytest.approx(1.0, abs=1e-12)


@given(st.integers(0, 2**31 - 1), st.integers(1, 6))
def test_solver_matches_closed_form_minimum(seed, T):
    rng = np.random.default_rng(seed)
    inputs = random_inputs(rng, T)
    init = rng.dirichlet(np.ones(T), T)
    A = update_alpha(init, inputs)
    for t in range(T):
        exact = exact_alpha_row(inputs.costs(t), inputs.reg)
        gap = alpha_row_objective(A[t], t, inputs) - alpha_row_objective(exact, t, inputs)
        assert -1e-12 <= gap <= 1e-9
        assert alpha_row_objective(A[t], t, inputs) <= alpha_row_objective(init[t], t, inputs) + 1e-12
        assert np.all(A[t] >= 0) and abs(A[t].sum() - 1) < 1e-12


@pytest.mark.parametrize("seed", range(5))
def test_objective_never_increases_across_iterations(seed):
    rng = np.random.default_rng(seed)
    inputs = random_inputs(rng, 3)
    init = uniform_alpha(3)
    values = [
        [alpha_row_objective(r, t, inputs) for t, r in enumerate(solve_alpha_rows([0, 1, 2], inputs, init, steps=k))]
        for k in range(1, 30)
    ]
    assert np.all(np.diff(np.array(values), axis=0) <= 1e-15)


@pytest.mark.parametrize("seed", range(50))
def test_solver_within_tolerance_of_grid_search(seed):
    rng = np.random.default_rng(1000 + seed)
    inputs = random_inputs(rng, 3)
    A = update_alpha(uniform_alpha(3), inputs)
    for t in range(3):
        assert alpha_row_objective(A[t], t, inputs) <= grid_alpha_min(inputs.costs(t), inputs.reg, 0.02) + 1e-3


def test_identical_tasks_share_weight_equally():
    inputs = AlphaObjectiveInputs(np.full((2, 2), 0.6), np.zeros((2, 2)), reg=1.0)
    np.testing.assert_allclose(update_alpha(np.array([[0.9, 0.1], [0.3, 0.7]]), inputs), np.full((2, 2), 0.5), atol=1e-3)


def test_single_task_is_trivial():
    inputs = AlphaObjectiveInputs(np.array([[0.3]]), np.zeros((1, 1)))
    np.testing.assert_array_equal(update_alpha(np.ones((1, 1)), inputs), [[1.0]])


@pytest.mark.parametrize("seed", range(5))
def test_raising_E_never_raises_the_weight(seed):
    rng = np.random.default_rng(seed)
    base = random_inputs(rng, 3, reg=0.5)
    weights = []
    for e in np.linspace(0.0, 2.0, 10):
        E = base.E.copy()
        E[0, 2] = E[2, 0] = e
        inputs = AlphaObjectiveInputs(base.task_losses, E, base.reg, base.lambda_E)
        weights.append(solve_alpha_row(0, inputs)[2])
    assert np.all(np.diff(weights) <= 1e-9)


@given(st.integers(0, 2**31 - 1))
def test_permuting_tasks_permutes_the_solution(seed):
    rng = np.random.default_rng(seed)
    inputs = random_inputs(rng, 4)
    perm = rng.permutation(4)
    permuted = AlphaObjectiveInputs(
        inputs.task_losses[np.ix_(perm, perm)], inputs.E[np.ix_(perm, perm)], inputs.reg, inputs.lambda_E
    )
    A = update_alpha(uniform_alpha(4), inputs)
    B = update_alpha(uniform_alpha(4), permuted)
    np.testing.assert_allclose(B, A[np.ix_(perm, perm)], atol=1e-7)


@given(st.integers(0, 2**31 - 1))
def test_batched_rows_equal_single_row_solves(seed):
    rng = np.random.default_rng(seed)
    inputs = random_inputs(rng, 4)
    init = rng.dirichlet(np.ones(4), 4)
    A = update_alpha(init, inputs)
    for t in range(4):
        np.testing.assert_array_equal(A[t], solve_alpha_row(t, inputs, init[t]))


def test_overflowing_objective_aborts():
    inputs = AlphaObjectiveInputs(np.full(2, 1e308), np.full((2, 2), 1e308) * (1 - np.eye(2)), reg=1.0)
    with np.errstate(over="ignore"), pytest.raises(FloatingPointError, match="rows"):
        update_alpha(uniform_alpha(2), inputs)
