import json
import math

import pytest

from cli.commands import main
from cli.run_config import load_config, parse_config
from core.errors import ConfigError
from core.export_data import DataExporter

DECAY = {'generator': 'affine', 'terminal': 'constant',
         'generator_params': {'a': -1.0}, 'terminal_params': {'value': 1.0}}
SMALL = {'T': 1.0, 'N': 16, 'M': 400, 'seed': 5}


def _run(write_config, tmp_path, data, command, label='run'):
    path = write_config(data)
    code = main([command, '--config', path, '--outdir', str(tmp_path / 'out'), '--label', label])
    return code, tmp_path / 'out'


def _summary(run_dir):
    with open(run_dir / 'summary.json', encoding='utf-8') as f:
        return json.load(f)


def test_unknown_key_is_rejected():
    with pytest.raises(ConfigError):
        parse_config({'command': 'solve', 'problem': DECAY, 'numerics': {}})


def test_empty_condition_list_is_rejected():
    with pytest.raises(ConfigError):
        parse_config({'command': 'check', 'problem': DECAY, 'checks': {'conditions': []}})


def test_subcommand_must_match_config():
    with pytest.raises(ConfigError):
        parse_config({'command': 'solve', 'problem': DECAY}, command='check')


def test_modulus_queries(write_config, tmp_path):
    linear = {'family': 'linear', 'mu': 1.0}
    data = {'command': 'modulus', 'modulus': {'queries': [
        {'op': 'classify', 'rho': linear},
        {'op': 'bihari', 'rho': linear, 'a': 1.0, 'horizon': 1.0},
        {'op': 'lift_order', 'rho': linear, 'p': 1.0, 'q': 2.0, 'label': 'lifted'},
    ]}}
    code, out = _run(write_config, tmp_path, data, 'modulus')
    assert code == 0
    results = [q['result'] for q in _summary(out / 'modulus' / 'run')['queries']]
    assert results[0]['verdict'] == 'diverges'
    assert results[1] == pytest.approx(math.e, rel=1e-8)
    assert (out / 'modulus' / 'run' / 'tables' / 'lifted.csv').exists()


def test_bad_query_arguments(write_config, tmp_path):
    data = {'command': 'modulus', 'modulus': {'queries': [
        {'op': 'classify', 'rho': {'family': 'linear', 'mu': 1.0}, 'horizon': 2.0}]}}
    code, _ = _run(write_config, tmp_path, data, 'modulus')
    assert code == 2


def test_solve_writes_reproducible_outputs(write_config, tmp_path, capsys):
    data = {'command': 'solve', 'problem': DECAY, 'numeric': SMALL}
    code, out = _run(write_config, tmp_path, data, 'solve', 'first')
    assert code == 0
    assert 'Y0[0]' in capsys.readouterr().out
    first = out / 'solve' / 'first'
    assert _summary(first)['y0'][0] == pytest.approx(math.exp(-1.0), abs=1e-3)
    assert (first / 'manifest.json').exists()

    _run(write_config, tmp_path, data, 'solve', 'second')
    second = out / 'solve' / 'second'
    for name in ('summary.json', 'tables/solution.csv'):
        assert (first / name).read_bytes() == (second / name).read_bytes()


def test_written_manifest_reruns_the_solve(write_config, tmp_path):
    data = {'command': 'solve', 'problem': DECAY, 'numeric': SMALL}
    _, out = _run(write_config, tmp_path, data, 'solve', 'first')
    manifest = out / 'solve' / 'first' / 'manifest.json'
    assert DataExporter.load_json(str(manifest))['problem']['generator'] == 'affine'

    code = main(['solve', '--config', str(manifest), '--outdir', str(tmp_path / 'out'), '--label', 'again'])
    assert code == 0
    first, again = out / 'solve' / 'first', out / 'solve' / 'again'
    assert (first / 'summary.json').read_bytes() == (again / 'summary.json').read_bytes()


def test_missing_or_malformed_config(tmp_path):
    with pytest.raises(ConfigError):
        load_config(str(tmp_path / 'absent.json'))
    broken = tmp_path / 'broken.json'
    broken.write_text('{"command": ', encoding='utf-8')
    with pytest.raises(ConfigError):
        load_config(str(broken))


def test_check_needs_a_generator(write_config, tmp_path):
    data = {'command': 'check', 'problem': {'terminal': 'constant'}, 'checks': {'conditions': 'claimed'}}
    code, _ = _run(write_config, tmp_path, data, 'check')
    assert code == 2


def test_check_claimed_conditions(write_config, tmp_path):
    data = {'command': 'check', 'problem': DECAY, 'numeric': SMALL,
            'checks': {'conditions': 'claimed', 'sampler': {'count': 2000}}}
    code, out = _run(write_config, tmp_path, data, 'check')
    assert code == 0
    assert _summary(out / 'check' / 'run')['passed']


def test_check_reports_witness(write_config, tmp_path, capsys):
    problem = dict(DECAY, generator='fixture', generator_params={'kind': 'square'})
    data = {'command': 'check', 'problem': problem, 'numeric': SMALL,
            'checks': {'conditions': ['H1'], 'modulus': {'family': 'linear', 'mu': 1.0}, 'p': 2.0,
                       'sampler': {'count': 2000}}}
    code, out = _run(write_config, tmp_path, data, 'check')
    assert code == 1
    assert 'first witness for H1' in capsys.readouterr().out
    assert (out / 'check' / 'run' / 'tables' / 'conditions.csv').exists()


def test_stability_experiment(write_config, tmp_path):
    problem = dict(DECAY, terminal='brownian_terminal', terminal_params={})
    data = {'command': 'experiment', 'problem': problem, 'numeric': SMALL,
            'experiment': {'kind': 'stability', 'eps_schedule': [0.5, 0.25, 0.0],
                           'terminal_perturbation': {'name': 'constant', 'value': 1.0}}}
    code, out = _run(write_config, tmp_path, data, 'experiment')
    assert code == 0
    summary = _summary(out / 'stability' / 'run')
    assert summary['passed'] and 'wall_clock' not in summary
    assert (out / 'stability' / 'run' / 'tables' / 'metric.csv').exists()


def test_uniqueness_mismatch_fails(write_config, tmp_path):
    data = {'command': 'experiment', 'problem': DECAY, 'numeric': SMALL,
            'experiment': {'kind': 'uniqueness', 'alt_problem': dict(DECAY, terminal_shift=1.0)}}
    code, _ = _run(write_config, tmp_path, data, 'experiment')
    assert code == 1
