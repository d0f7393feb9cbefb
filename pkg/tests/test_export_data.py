import csv
import json

import numpy as np
import pytest

from core.errors import ValidationError
from core.export_data import DataExporter, format_float
from core.solver import solve_backward


@pytest.mark.parametrize('value, text', [
    (0.1, '0.1'),
    (1.0 / 3.0, '0.333333333333'),
    (None, ''),
    (7, '7'),
    (np.float64(2.5), '2.5'),
    ([1.0, 0.5], '1;0.5'),
])
def test_format_float(value, text):
    assert format_float(value) == text


def test_solution_csv_layout(tmp_path, decay, bm_terminal, ensemble):
    sol = solve_backward(decay, bm_terminal, ensemble)
    path = DataExporter.export_solution_csv(sol, 'solution', root=str(tmp_path), max_paths=3)
    with open(path, newline='', encoding='utf-8') as f:
        rows = list(csv.reader(f))
    assert rows[0] == ['path', 'node', 't', 'Y0', 'Z0_0']
    assert len(rows) == 3 * (sol.grid.N + 1) + 1
    last = rows[sol.grid.N + 1]
    assert last[:2] == ['0', str(sol.grid.N)]
    assert last[4] == ''
    assert float(rows[1][3]) == pytest.approx(sol.Y[0, 0, 0], rel=1e-11)


def test_ensemble_dump_restores_paths(tmp_path, ensemble):
    path = DataExporter.export_ensemble(ensemble, 'paths', root=str(tmp_path))
    again = DataExporter.load_ensemble(path)
    assert again.identical_to(ensemble)
    assert again.seed == ensemble.seed


def test_ensemble_dump_rejects_foreign_file(tmp_path):
    path = tmp_path / 'junk.bin'
    path.write_bytes(b'NOTANENS' + bytes(40))
    with pytest.raises(ValidationError):
        DataExporter.load_ensemble(str(path))


def test_json_export_keeps_infinities_readable(tmp_path):
    path = DataExporter.export_to_json({'ratio': float('inf'), 'ids': frozenset({'b', 'a'}),
                                        'values': np.arange(3)}, 'summary', root=str(tmp_path))
    with open(path, encoding='utf-8') as f:
        data = json.load(f)
    assert data == {'ratio': 'inf', 'ids': ['a', 'b'], 'values': [0, 1, 2]}


def test_empty_table_is_skipped(tmp_path):
    assert DataExporter.export_table_csv([], 'nothing', root=str(tmp_path)) is None
