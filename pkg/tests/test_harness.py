import numpy as np
import pytest

from core.errors import HarnessError, ValidationError
from core.harness import ExperimentManifest, ProblemSpec, run_experiment

E_INV = float(np.exp(-1.0))


def _decay(terminal='constant', **extra):
    params = {'value': 1.0} if terminal == 'constant' else {}
    return ProblemSpec('affine', terminal, {'a': -1.0}, params, **extra)


def _manifest(kind, problem, **kwargs):
    kwargs.setdefault('N', 16)
    kwargs.setdefault('M', 1000)
    kwargs.setdefault('seed', 3)
    return ExperimentManifest(kind=kind, problem=problem, **kwargs)


def test_uniqueness_across_seeds():
    result = run_experiment(_manifest('uniqueness', _decay(), seeds=[1, 2]))
    assert result.passed
    row = result.tables['pairs'][0]
    assert row['y0_gap'] <= row['noise_floor']
    assert row['s_p'] is None


def test_uniqueness_across_bases_on_common_paths():
    manifest = _manifest('uniqueness', _decay('brownian_terminal'), scheme_variants=[{}, {'degree': 2}])
    result = run_experiment(manifest)
    assert result.passed
    row = result.tables['pairs'][0]
    assert result.gates['distance_within_noise_floor']
    assert 0 < row['s_p'] <= row['path_floor']


def test_uniqueness_flags_a_different_problem():
    manifest = _manifest('uniqueness', _decay(), alt_problem=_decay(terminal_shift=1.0))
    result = run_experiment(manifest)
    assert not result.passed
    assert not result.gates['distance_within_noise_floor']
    row = result.tables['pairs'][-1]
    assert row['y0_gap'] == pytest.approx(E_INV, rel=1e-3)
    assert row['s_p'] == pytest.approx(1.0, rel=1e-9)


def test_uniqueness_distance_gate_sees_past_matching_y0():
    # antithetic paths put both Y0 at zero while the paths are mirror images
    mirrored = ProblemSpec('affine', 'brownian_terminal', {'a': -1.0}, {'scale': -1.0})
    manifest = _manifest('uniqueness', _decay('brownian_terminal'), alt_problem=mirrored, antithetic=True)
    result = run_experiment(manifest)
    assert result.gates['y0_within_noise_floor']
    assert not result.gates['distance_within_noise_floor']
    assert result.tables['pairs'][-1]['s_p'] > 0.5


def test_uniqueness_needs_two_stages():
    with pytest.raises(ValidationError):
        run_experiment(_manifest('uniqueness', _decay()))


def test_stability_under_terminal_shift():
    manifest = _manifest('stability', _decay('brownian_terminal'), eps_schedule=[0.5, 0.25, 0.125, 0.0],
                         terminal_perturbation={'name': 'constant', 'value': 1.0})
    result = run_experiment(manifest)
    assert result.passed
    rows = result.tables['metric']
    assert rows[0]['metric'] == pytest.approx(0.25, rel=1e-6)
    assert rows[1]['ratio_to_previous'] == pytest.approx(0.25, rel=1e-6)
    assert rows[2]['ratio_to_previous'] == pytest.approx(0.25, rel=1e-6)
    assert rows[-1]['metric'] == 0.0


def test_stability_rejects_perturbation_above_shared_z_bound():
    manifest = _manifest('stability', _decay('brownian_terminal'), eps_schedule=[0.5, 0.0],
                         generator_perturbation={'name': 'affine', 'a': 0.0, 'b': 1.0})
    with pytest.raises(HarnessError) as info:
        run_experiment(manifest)
    assert info.value.context['lambda_bar'] == 0.0
    assert info.value.context['lipschitz_z'] == pytest.approx(0.5)


def test_stability_accepts_declared_z_bound():
    manifest = _manifest('stability', _decay('brownian_terminal'), eps_schedule=[0.5, 0.25, 0.0],
                         generator_perturbation={'name': 'affine', 'a': 0.0, 'b': 1.0}, lambda_bar=0.5)
    rows = run_experiment(manifest).tables['metric']
    assert len(rows) == 3
    assert rows[-1]['metric'] == 0.0
    with pytest.raises(ValidationError):
        _manifest('stability', _decay(), eps_schedule=[0.5], lambda_bar=-1.0)


def test_stability_needs_schedule():
    with pytest.raises(ValidationError):
        run_experiment(_manifest('stability', _decay()))


def test_comparison_of_shifted_problem():
    manifest = _manifest('comparison', _decay('brownian_terminal'),
                         alt_problem=_decay('brownian_terminal', drift_shift=0.5, terminal_shift=1.0))
    result = run_experiment(manifest)
    assert result.passed
    summary = result.tables['summary'][0]
    assert summary['violation_fraction'] == 0.0
    assert summary['bihari_bound'] == 0.0
    assert all(r['mean_gap'] > 0 for r in result.tables['nodes'])


def test_comparison_rejects_reversed_terminals():
    manifest = _manifest('comparison', _decay('brownian_terminal', terminal_shift=1.0),
                         alt_problem=_decay('brownian_terminal'))
    with pytest.raises(HarnessError) as info:
        run_experiment(manifest)
    assert 'manifest' in info.value.context


def test_comparison_is_scalar():
    problem = ProblemSpec('affine', 'constant', {'k': 2, 'a': -1.0}, {'value': 1.0, 'k': 2})
    with pytest.raises(ValidationError):
        run_experiment(_manifest('comparison', problem, alt_problem=problem))


def test_convergence_against_closed_form():
    manifest = _manifest('convergence', _decay(), n_schedule=[8, 16, 32], m_schedule=[200], exact_y0=E_INV)
    result = run_experiment(manifest)
    assert result.passed
    errors = [r['error'] for r in result.tables['errors']]
    assert errors[0] > errors[1] > errors[2]


def test_convergence_needs_a_reference():
    with pytest.raises(ValidationError):
        run_experiment(_manifest('convergence', _decay(), n_schedule=[8]))


def test_unknown_kind():
    with pytest.raises(ValidationError):
        ExperimentManifest(kind='bogus', problem=_decay())


@pytest.mark.slow
def test_comparison_of_example1_at_scale():
    base = ProblemSpec('example1', 'constant', {}, {'value': 1.0})
    alt = ProblemSpec('example1', 'constant', {}, {'value': 1.0}, drift_shift=0.5, terminal_shift=1.0)
    manifest = ExperimentManifest(kind='comparison', problem=base, alt_problem=alt, N=32, M=10000, seed=20240601)
    result = run_experiment(manifest)
    assert result.passed
    assert result.tables['summary'][0]['worst_excess'] < 0
