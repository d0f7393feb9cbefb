import json

import pytest

from core.brownian import simulate_ensemble
from core.generators import brownian_terminal, constant_terminal, make_affine
from core.model import make_uniform_grid


@pytest.fixture
def grid():
    return make_uniform_grid(1.0, 16)


@pytest.fixture
def ensemble(grid):
    return simulate_ensemble(grid, d=1, M=2000, seed=11)


@pytest.fixture
def decay():
    """g = -y: Y_t = E[xi] e^{-(T-t)} for constant xi."""
    return make_affine(1, 1, -1.0)


@pytest.fixture
def unit_terminal():
    return constant_terminal(1.0)


@pytest.fixture
def bm_terminal():
    return brownian_terminal()


@pytest.fixture
def write_config(tmp_path):
    def write(data, name='config.json'):
        path = tmp_path / name
        path.write_text(json.dumps(data), encoding='utf-8')
        return str(path)
    return write
