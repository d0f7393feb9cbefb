import numpy as np
import pytest

from core.brownian import simulate_ensemble
from core.errors import RegressionError, StepSizeError, ValidationError
from core.generators import constant_terminal, make_affine, make_example1, make_fixture
from core.model import make_uniform_grid
from core.solver import BackwardSolver, SchemeSpec, picard_truncation_sequence, solution_distance, solve_backward, stability_metric

E_INV = float(np.exp(-1.0))


@pytest.fixture
def fine_ensemble():
    return simulate_ensemble(make_uniform_grid(1.0, 32), 1, 1000, seed=5)


def test_decay_with_constant_terminal(decay, unit_terminal, fine_ensemble):
    sol = solve_backward(decay, unit_terminal, fine_ensemble)
    assert sol.y0[0] == pytest.approx(E_INV, abs=1e-4)
    assert np.allclose(sol.Z, 0.0, atol=1e-10)
    assert sol.metadata['stepping'] == 'implicit_y'
    assert sol.metadata['fallback_paths'] == 0


def test_explicit_stepping_is_first_order(decay, unit_terminal, fine_ensemble):
    sol = solve_backward(decay, unit_terminal, fine_ensemble, SchemeSpec(stepping='explicit'))
    assert sol.y0[0] == pytest.approx(E_INV, abs=1e-2)


def test_z_of_brownian_terminal(decay, bm_terminal):
    ens = simulate_ensemble(make_uniform_grid(1.0, 32), 1, 10000, seed=21)
    sol = solve_backward(decay, bm_terminal, ens)
    assert sol.y0[0] == pytest.approx(0.0, abs=0.02)
    assert float(np.mean(sol.Z[:, 0, 0, 0])) == pytest.approx(np.exp(-1.0 + 1.0 / 32), abs=0.05)


def test_step_guard_rejects_coarse_grid(unit_terminal):
    ens = simulate_ensemble(make_uniform_grid(1.0, 4), 1, 100, seed=1)
    with pytest.raises(StepSizeError) as info:
        solve_backward(make_affine(1, 1, -20.0), unit_terminal, ens)
    assert 'N =' in str(info.value)


def test_rank_deficient_regression(unit_terminal):
    ens = simulate_ensemble(make_uniform_grid(1.0, 2), 1, 5, seed=1)
    with pytest.raises(RegressionError) as info:
        solve_backward(make_affine(1, 1, 0.0), unit_terminal, ens, SchemeSpec(degree=10))
    assert info.value.rank < info.value.size


def test_bisection_takes_over_from_divergent_iteration(unit_terminal):
    ens = simulate_ensemble(make_uniform_grid(1.0, 2), 1, 50, seed=2)
    sol = solve_backward(make_fixture('linear_drift', -50.0), unit_terminal, ens)
    ratio = (1.0 - 12.5) / 13.5
    assert sol.y0[0] == pytest.approx(ratio ** 2, rel=1e-8)
    assert sol.metadata['fallback_paths'] > 0


def test_solve_is_deterministic(decay, bm_terminal, ensemble):
    a = solve_backward(decay, bm_terminal, ensemble)
    b = solve_backward(decay, bm_terminal, ensemble)
    assert np.array_equal(a.Y, b.Y) and np.array_equal(a.Z, b.Z)


def test_distance_to_itself_is_zero(decay, bm_terminal, ensemble):
    sol = solve_backward(decay, bm_terminal, ensemble)
    assert solution_distance(sol, sol, 2.0).s_p == 0.0
    assert stability_metric(sol, sol, 2.0) == (0.0, 0.0)


def test_distance_needs_shared_ensemble(decay, bm_terminal, grid, ensemble):
    other = simulate_ensemble(grid, 1, ensemble.M, seed=12)
    a = solve_backward(decay, bm_terminal, ensemble)
    b = solve_backward(decay, bm_terminal, other)
    with pytest.raises(ValidationError):
        stability_metric(a, b, 2.0)


def test_truncation_levels_must_increase(decay, unit_terminal, ensemble):
    with pytest.raises(ValidationError):
        picard_truncation_sequence(decay, unit_terminal, [2.0, 1.0], ensemble)
    with pytest.raises(ValidationError):
        picard_truncation_sequence(decay, unit_terminal, [], ensemble)


def test_large_truncation_level_reproduces_example1():
    ens = simulate_ensemble(make_uniform_grid(1.0, 16), 1, 200, seed=3)
    gen, xi = make_example1(), constant_terminal(1.0)
    plain = solve_backward(gen, xi, ens)
    [truncated] = picard_truncation_sequence(gen, xi, [1e6], ens)
    assert truncated.y0[0] == pytest.approx(plain.y0[0], rel=1e-8)
    assert np.allclose(truncated.Y, plain.Y, rtol=1e-7, atol=1e-8)
    assert np.allclose(truncated.Z, plain.Z, rtol=1e-7, atol=1e-8)


def test_truncation_sequence_settles_on_example1():
    ens = simulate_ensemble(make_uniform_grid(1.0, 16), 1, 500, seed=3)
    levels = [1.0, 2.0, 4.0, 8.0, 16.0, 32.0]
    sols = picard_truncation_sequence(make_example1(), constant_terminal(1.0), levels, ens)
    gaps = [solution_distance(a, b, 2.0).s_p for a, b in zip(sols, sols[1:])]
    assert all(later <= earlier + 1e-9 for earlier, later in zip(gaps, gaps[1:]))
    assert gaps[-1] < 0.05 * gaps[0]


def test_truncation_error_of_affine_problem():
    # n = 1 clamps xi = 3 to 1 and c = 2 to 1, so Y - Y^1 = 1 + exp(-(T - t))
    ens = simulate_ensemble(make_uniform_grid(1.0, 32), 1, 200, seed=3)
    sols = picard_truncation_sequence(make_affine(1, 1, -1.0, c=2.0), constant_terminal(3.0), [1.0, 4.0], ens)
    gap = sols[1].Y[:, :, 0] - sols[0].Y[:, :, 0]
    expected = 1.0 + np.exp(-(1.0 - ens.grid.nodes))
    assert np.allclose(gap, expected[None, :], atol=1e-3)
    assert solution_distance(sols[1], sols[0], 2.0).s_p == pytest.approx(2.0, rel=1e-9)


def test_explicit_step_reuses_the_conditional_fit(decay, bm_terminal, ensemble):
    solver = BackwardSolver(decay, bm_terminal, ensemble, SchemeSpec(stepping='explicit'))
    sol = solver.solve()
    for i in (0, ensemble.grid.N - 1):
        t, dt = float(ensemble.grid.nodes[i]), float(ensemble.grid.widths[i])
        fitted = solver.regression.design(t, ensemble.state(i)) @ solver.regression.y_coefficients[i]
        assert np.allclose(sol.Y[:, i], fitted * (1.0 - dt), rtol=1e-12, atol=1e-12)
