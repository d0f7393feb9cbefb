import numpy as np
import pytest

from config import BLOCK_PATHS
from core.brownian import antithetic_pairing, make_ensemble, simulate_ensemble
from core.errors import ValidationError
from core.model import make_uniform_grid


def test_same_seed_same_paths(grid):
    a = simulate_ensemble(grid, 2, 300, seed=5)
    b = simulate_ensemble(grid, 2, 300, seed=5)
    assert np.array_equal(a.values, b.values)
    assert not np.array_equal(a.values, simulate_ensemble(grid, 2, 300, seed=6).values)


def test_thread_count_does_not_change_paths(grid):
    serial = simulate_ensemble(grid, 1, 3 * BLOCK_PATHS + 17, seed=9, threads=1)
    pooled = simulate_ensemble(grid, 1, 3 * BLOCK_PATHS + 17, seed=9, threads=4)
    assert np.array_equal(serial.values, pooled.values)


def test_path_count_prefix_is_stable(grid):
    small = simulate_ensemble(grid, 1, BLOCK_PATHS, seed=3)
    large = simulate_ensemble(grid, 1, BLOCK_PATHS + 44, seed=3)
    assert np.array_equal(small.values, large.values[:BLOCK_PATHS])


def test_increment_moments():
    grid = make_uniform_grid(2.0, 8)
    ens = simulate_ensemble(grid, 1, 20000, seed=1)
    terminal = ens.terminal[:, 0]
    assert abs(terminal.mean()) < 0.05
    assert terminal.var() == pytest.approx(2.0, rel=0.05)
    assert np.all(ens.values[:, 0] == 0.0)


def test_antithetic_pairs_reflect(grid):
    ens = antithetic_pairing(simulate_ensemble(grid, 1, 100, seed=2))
    assert ens.M == 200 and ens.antithetic
    assert np.array_equal(ens.values[100:], -ens.values[:100])
    assert np.allclose(ens.terminal.mean(axis=0), 0.0, atol=1e-15)


def test_make_ensemble_antithetic_needs_even_count(grid):
    assert make_ensemble(grid, 1, 64, seed=4, antithetic=True).M == 64
    with pytest.raises(ValidationError):
        make_ensemble(grid, 1, 63, seed=4, antithetic=True)


@pytest.mark.parametrize('kwargs', [{'M': 0}, {'seed': -1}, {'seed': 2 ** 64}, {'threads': 0}])
def test_rejects_bad_arguments(grid, kwargs):
    args = {'M': 10, 'seed': 1, 'threads': 1, **kwargs}
    with pytest.raises(ValidationError):
        simulate_ensemble(grid, 1, args['M'], args['seed'], args['threads'])
