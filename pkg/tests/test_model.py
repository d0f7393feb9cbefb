import numpy as np
import pytest

from core.errors import GeneratorEvaluationError, ValidationError
from core.generators import make_example1
from core.model import (BoundProcess, DiscreteSolution, GeneratorSpec, PathEnsemble, SingularForcing, TimeGrid,
                        bootstrap_stderr, empirical_norms, make_graded_grid, make_uniform_grid, path_sup_power,
                        quadratic_variation)


def test_uniform_grid():
    grid = make_uniform_grid(2.0, 4)
    assert grid.N == 4
    assert grid.horizon == 2.0
    assert np.allclose(grid.widths, 0.5)


@pytest.mark.parametrize('nodes', [[0.1, 0.5, 1.0], [0.0, 0.5, 0.5, 1.0], [0.0]])
def test_grid_rejects_bad_nodes(nodes):
    with pytest.raises(ValidationError):
        TimeGrid(np.array(nodes))


def test_graded_grid_refines_near_zero():
    grid = make_graded_grid(1.0, 10, grading=2.0)
    assert grid.nodes[0] == 0.0 and grid.horizon == 1.0
    assert grid.widths[0] < grid.widths[-1]


def test_grid_is_read_only(grid):
    with pytest.raises(ValueError):
        grid.nodes[1] = 0.3


def test_ensemble_must_start_at_origin(grid):
    values = np.ones((3, grid.N + 1, 1))
    with pytest.raises(ValidationError):
        PathEnsemble(grid, 1, 3, values, seed=0)


def test_ensemble_shape_checked(grid):
    with pytest.raises(ValidationError):
        PathEnsemble(grid, 2, 3, np.zeros((3, grid.N + 1, 1)), seed=0)


def test_constant_bound_process_tail(ensemble):
    tails = BoundProcess.constant(2.0).tail_integrals(ensemble)
    assert tails.shape == (ensemble.M, ensemble.grid.N + 1)
    assert np.allclose(tails[:, 0], 2.0)
    assert np.all(tails[:, -1] == 0.0)


def test_forcing_integrates_exactly(ensemble):
    forcing = make_example1().singular_forcing
    tails = BoundProcess(forcing=forcing, label='forcing').tail_integrals(ensemble)
    assert tails[0, 0] == pytest.approx(1.5, rel=1e-12)


def test_clipped_forcing_quadrature_matches_closed_form():
    forcing = make_example1().singular_forcing
    bare = SingularForcing(forcing.name, forcing.value, forcing.cell_integral)
    for level in (0.5, 2.0, 40.0):
        for t0, t1 in ((0.0, 0.0625), (0.0625, 0.125), (0.5, 1.0)):
            exact = forcing.clipped(level).cell_integral(t0, t1)
            assert bare.clipped(level).cell_integral(t0, t1) == pytest.approx(exact, rel=1e-8, abs=1e-12)
    assert forcing.clipped(2.0).cell_integral(0.0, 1.0)[0] == pytest.approx(1.375, rel=1e-12)
    assert forcing.clipped(2.0).value(1e-6)[0] == pytest.approx(2.0, rel=1e-14)
    with pytest.raises(ValidationError):
        forcing.clipped(0.0)


def test_negative_bound_rejected():
    with pytest.raises(ValidationError):
        BoundProcess.constant(-1.0)


def test_generator_shape_mismatch():
    gen = GeneratorSpec('id', 1, 1, lambda t, b, y, z: y)
    with pytest.raises(ValidationError):
        gen.evaluate(0.0, np.zeros((2, 1)), np.zeros((3, 1)), np.zeros((3, 1, 1)))


def test_generator_non_finite_reports_coordinates():
    gen = GeneratorSpec('blowup', 1, 1, lambda t, b, y, z: np.full_like(y, np.inf))
    with pytest.raises(GeneratorEvaluationError) as info:
        gen.evaluate(0.5, np.zeros((2, 1)), np.ones((2, 1)), np.zeros((2, 1, 1)))
    assert info.value.coordinates['t'] == 0.5


def test_forcing_only_in_full_evaluation():
    gen = make_example1()
    b, y, z = np.zeros((1, 1)), np.zeros((1, 1)), np.zeros((1, 1, 1))
    plain = gen.evaluate(0.001, b, y, z)
    full = gen.full_evaluate(0.001, b, y, z)
    assert full[0, 0] - plain[0, 0] == pytest.approx(10.0)
    assert np.all(gen.forcing_value(0.0) == 0.0)


def test_path_functionals():
    Y = np.array([[[1.0], [-3.0], [2.0]]])
    Z = np.array([[[[1.0]], [[2.0]]]])
    assert path_sup_power(Y, 2.0)[0] == 9.0
    assert quadratic_variation(Z, np.array([0.5, 0.25]))[0] == pytest.approx(1.5)


def test_bootstrap_of_constant_is_zero():
    assert bootstrap_stderr(np.full(50, 3.0), np.mean) == 0.0


def test_empirical_norms_of_constant_solution(ensemble):
    N, M = ensemble.grid.N, ensemble.M
    sol = DiscreteSolution(ensemble.grid, np.full((M, N + 1, 1), 2.0), np.zeros((M, N, 1, 1)), ensemble)
    norms = empirical_norms(sol, 2.0)
    assert norms.s_p == pytest.approx(2.0)
    assert norms.m_p == 0.0
    assert norms.stderr_s == pytest.approx(0.0, abs=1e-12)
    assert np.all(sol.y0_stderr == 0.0)


def test_norm_order_must_exceed_one(ensemble):
    N, M = ensemble.grid.N, ensemble.M
    sol = DiscreteSolution(ensemble.grid, np.zeros((M, N + 1, 1)), np.zeros((M, N, 1, 1)), ensemble)
    with pytest.raises(ValidationError):
        empirical_norms(sol, 1.0)


def test_solution_shapes_checked(ensemble):
    N, M = ensemble.grid.N, ensemble.M
    with pytest.raises(ValidationError):
        DiscreteSolution(ensemble.grid, np.zeros((M, N + 1, 1)), np.zeros((M, N + 1, 1, 1)), ensemble)
