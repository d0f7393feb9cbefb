import numpy as np
import pytest

from core.brownian import simulate_ensemble
from core.conditions import (SamplerSpec, check_A1, check_A2, check_claimed, check_continuity_y,
                             check_general_growth, check_integrability, check_lipschitz_z, check_one_sided,
                             check_two_sided, check_weak_monotonicity, condition_margins, draw_samples)
from core.errors import ValidationError
from core.generators import constant_terminal, heavy_tail_terminal, make_affine, make_example1, make_fixture
from core.model import BoundProcess, make_uniform_grid
from core.modulus import ModulusFn


@pytest.fixture
def sampler():
    return SamplerSpec(seed=3, count=3000)


def test_batch_is_reproducible(decay, sampler):
    a, b = draw_samples(decay, sampler), draw_samples(decay, sampler)
    assert a.size == 3000
    assert np.array_equal(a.y1, b.y1) and np.array_equal(a.b, b.b)
    assert np.all(np.abs(a.y1) <= sampler.y_radius)


def test_batch_reaches_close_pairs(decay, sampler):
    batch = draw_samples(decay, sampler)
    gaps = np.linalg.norm(batch.y1 - batch.y2, axis=1)
    assert gaps[gaps > 0].min() < 1e-6


def test_sampler_validation():
    with pytest.raises(ValidationError):
        SamplerSpec(count=0)
    with pytest.raises(ValidationError):
        SamplerSpec(closest=10.0)


def test_decay_is_weakly_monotone(decay, sampler):
    report = check_weak_monotonicity(decay, ModulusFn.linear(1.0), 2.0, sampler)
    assert report.passed
    assert report.max_slack <= 0
    assert report.first_witness is None


def test_square_breaks_linear_modulus(sampler):
    report = check_weak_monotonicity(make_fixture('square'), ModulusFn.linear(1.0), 2.0, sampler)
    assert not report.passed
    witness = report.first_witness
    assert witness.lhs > witness.rhs
    assert len(report.violations) <= 25 <= report.violation_count


def test_sqrt_sign_needs_scaled_root_modulus(sampler):
    gen = make_fixture('sqrt_sign')
    assert not check_one_sided(gen, ModulusFn.power(0.5), 1.0, 'osgood', sampler).passed
    assert check_one_sided(gen, ModulusFn.power(0.5).scaled(np.sqrt(2.0)), 1.0, 'osgood', sampler).passed


def test_example1_one_sided_constantin(sampler):
    gen = make_example1()
    assert check_one_sided(gen, gen.modulus, gen.order, 'constantin', sampler).passed


def test_two_sided_implies_one_sided_on_same_samples(sampler):
    gen = make_fixture('lipschitz_sine')
    batch = draw_samples(gen, sampler)
    rho = ModulusFn.linear(2.0)
    two = check_two_sided(gen, rho, 1.0, 'osgood_prime', sampler, batch)
    one = check_one_sided(gen, rho, 1.0, 'osgood', sampler, batch)
    assert two.passed and one.passed
    lhs_two, _, valid = condition_margins('H1star_prime', gen, batch, rho=rho)
    lhs_one, _, _ = condition_margins('H1star', gen, batch, rho=rho)
    assert np.all(lhs_one[valid] <= lhs_two[valid] + 1e-12)


def test_unknown_variant(decay, sampler):
    with pytest.raises(ValidationError):
        check_one_sided(decay, ModulusFn.linear(1.0), 1.0, 'bogus', sampler)


def test_lipschitz_in_z(sampler):
    assert check_lipschitz_z(make_example1(), 1.0, sampler).passed
    report = check_lipschitz_z(make_fixture('z_square'), 1.0, sampler)
    assert not report.passed
    assert report.first_witness.z2 is not None


def test_linear_growth_conditions(decay, sampler):
    zero = BoundProcess.zero()
    assert check_A1(decay, 0.0, 0.0, zero, zero, 2.0, sampler).passed
    assert not check_A1(make_fixture('linear_drift', 2.0), 1.0, 0.0, zero, zero, 2.0, sampler).passed
    assert check_A2(decay, ModulusFn.linear(1.0), 0.0, zero, 2.0, sampler).passed


def test_continuity_flags_jump(decay, sampler):
    assert check_continuity_y(decay, sampler).passed
    report = check_continuity_y(make_fixture('sign'), sampler)
    assert not report.passed


def test_general_growth(decay):
    ens = simulate_ensemble(make_uniform_grid(1.0, 32), 1, 400, seed=8)
    assert check_general_growth(decay, [1.0, 2.0], ens).passed
    report = check_general_growth(make_fixture('inverse_time'), [1.0], ens)
    assert not report.passed
    assert report.estimate > 0


def test_integrability():
    ens = simulate_ensemble(make_uniform_grid(1.0, 16), 1, 2000, seed=4)
    zero = make_affine(1, 1, 0.0)
    assert check_integrability(constant_terminal(1.0), zero, 2.0, ens).passed
    report = check_integrability(heavy_tail_terminal(1.0), zero, 2.0, ens)
    assert not report.passed
    assert report.notes


def test_integrability_counts_singular_forcing(unit_terminal):
    ens = simulate_ensemble(make_uniform_grid(1.0, 16), 1, 500, seed=4)
    report = check_integrability(unit_terminal, make_example1(), 2.0, ens)
    assert report.passed
    assert report.estimate == pytest.approx(1.0 + (1.0 + 1.5) ** 2)


def test_path_integral_checks_report_gate_margins(decay, unit_terminal):
    ens = simulate_ensemble(make_uniform_grid(1.0, 32), 1, 400, seed=8)
    growth_ok = check_general_growth(decay, [1.0, 2.0], ens)
    growth_bad = check_general_growth(make_fixture('inverse_time'), [1.0], ens)
    assert -0.01 < growth_ok.max_slack <= 0
    # left-point sums of 1/t on strides 4, 2, 1 are the harmonic numbers H_7, H_15, H_31
    harmonic = np.cumsum(1.0 / np.arange(1, 32))
    d1, d2 = harmonic[14] - harmonic[6], harmonic[30] - harmonic[14]
    assert growth_bad.max_slack == pytest.approx(d2 - 0.75 * d1, rel=1e-9)

    integrable = check_integrability(unit_terminal, make_example1(), 2.0, ens)
    wide = simulate_ensemble(make_uniform_grid(1.0, 16), 1, 2000, seed=4)
    heavy = check_integrability(heavy_tail_terminal(1.0), make_affine(1, 1, 0.0), 2.0, wide)
    assert integrable.passed and -1.0 < integrable.max_slack <= 0
    assert not heavy.passed and heavy.max_slack > 0

    coarse = simulate_ensemble(make_uniform_grid(1.0, 2), 1, 50, seed=8)
    assert check_integrability(unit_terminal, make_example1(), 2.0, coarse).max_slack is None


def test_claimed_conditions_of_affine(decay, unit_terminal):
    reports = check_claimed(decay, SamplerSpec(seed=1, count=2000), unit_terminal)
    ids = {r.condition_id for r in reports}
    assert ids == {'H1', 'H1star', 'H2', 'H3', 'H4', 'H5'}
    assert all(r.passed for r in reports)
