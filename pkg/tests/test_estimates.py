import pytest

from core.errors import ValidationError
from core.estimates import GrowthBounds, bdg_constant, constant_ledger, verify_prop2, verify_prop3
from core.model import BoundProcess
from core.solver import solve_backward


@pytest.fixture
def bm_solution(decay, bm_terminal, ensemble):
    return solve_backward(decay, bm_terminal, ensemble)


def test_bdg_defaults():
    assert bdg_constant(2.0, None) == pytest.approx(4.0)
    assert bdg_constant(4.0, None) == pytest.approx(1024.0)
    assert bdg_constant(4.0, 3.0) == 3.0
    with pytest.raises(ValidationError):
        bdg_constant(0.0, None)


def test_z_ledger_constants():
    ledger = constant_ledger(2.0, 0.0, 0.0, 1.0, bdg=None, scope='prop2')
    assert ledger.c_p == pytest.approx(4.0)
    assert ledger.C_mu_lambda_p_T == pytest.approx(520.0)
    assert ledger.C_p == pytest.approx(8.0)


def test_ledger_order_ranges():
    with pytest.raises(ValidationError):
        constant_ledger(1.0, 0.0, 0.0, 1.0, scope='prop3')
    with pytest.raises(ValidationError):
        constant_ledger(0.0, 0.0, 0.0, 1.0, scope='prop2')
    with pytest.raises(ValidationError):
        constant_ledger(2.0, 0.0, 0.0, 1.0, scope='prop4')


def test_y_ledger_grows_with_lambda():
    flat = constant_ledger(2.0, 0.0, 0.0, 1.0, bdg=None, scope='prop3')
    steep = constant_ledger(2.0, 0.0, 1.0, 1.0, bdg=None, scope='prop3')
    assert steep.C_lambda_p_T > flat.C_lambda_p_T > 0


def test_z_estimate_holds(bm_solution):
    zero = BoundProcess.zero()
    report = verify_prop2(bm_solution, GrowthBounds(0.0, 0.0, zero, zero), 2.0)
    assert report.passed
    assert 0 < report.ratio < 1
    assert report.terms['f_term'] == 0.0


def test_y_estimate_holds(bm_solution):
    report = verify_prop3(bm_solution, None, 0.0, BoundProcess.zero(), 2.0)
    assert report.passed
    assert report.terms['psi_integral'] == 0.0
    assert report.terms['terminal'] == pytest.approx(1.0, rel=0.15)


def test_estimates_need_their_inputs(bm_solution):
    with pytest.raises(ValidationError):
        verify_prop2(bm_solution, None, 2.0)
    with pytest.raises(ValidationError):
        verify_prop3(bm_solution, None, 0.0, None, 2.0)
    zero = BoundProcess.zero()
    with pytest.raises(ValidationError):
        verify_prop2(bm_solution, GrowthBounds(0.0, 0.0, zero, zero), 2.0, t_index=bm_solution.grid.N + 1)
