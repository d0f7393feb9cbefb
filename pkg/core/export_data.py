import csv
import json
import logging
import math
import struct
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional

import numpy as np

from config import FLOAT_DIGITS, OUTPUT_ROOT
from core.errors import ValidationError
from core.model import DiscreteSolution, PathEnsemble, TimeGrid

logger = logging.getLogger(__name__)

ENSEMBLE_MAGIC = b'BSDEENS1'
_HEADER = struct.Struct('<8s5Q')


def format_float(value: Any) -> str:
    """12 significant digits, locale independent; None becomes an empty cell."""
    if value is None:
        return ''
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format(float(value), f'.{FLOAT_DIGITS}g')
    if isinstance(value, (list, tuple, np.ndarray)):
        return ';'.join(format_float(v) for v in np.asarray(value).ravel().tolist())
    return str(value)


class DataExporter:

    @staticmethod
    def get_io_dir(root: Optional[str] = None, subfolder: Optional[str] = None) -> Path:
        io_dir = Path(root or OUTPUT_ROOT)
        if subfolder:
            io_dir = io_dir / subfolder
        io_dir.mkdir(parents=True, exist_ok=True)
        return io_dir

    @staticmethod
    def _target(filename: Optional[str], stem: str, suffix: str,
                subfolder: Optional[str], root: Optional[str]) -> Path:
        export_dir = DataExporter.get_io_dir(root, subfolder)
        if filename is None:
            timestamp = datetime.now().strftime("%Y%m%d_%H%M%S")
            filename = f"{stem}_{timestamp}{suffix}"
        if not filename.endswith(suffix):
            filename += suffix
        return export_dir / filename

    @staticmethod
    def export_to_json(data: Dict, filename: str = None, subfolder: str = None, root: str = None) -> str:
        filepath = DataExporter._target(filename, 'summary', '.json', subfolder, root)
        json_data = DataExporter._prepare_for_json(data)
        with open(filepath, 'w', encoding='utf-8') as f:
            json.dump(json_data, f, indent=2, ensure_ascii=False, sort_keys=True)
        logger.debug(f"wrote {filepath}")
        return str(filepath)

    @staticmethod
    def load_json(path: str) -> Dict:
        """Run configs and written manifests share this reader."""
        with open(path, 'r', encoding='utf-8') as f:
            return json.load(f)

    @staticmethod
    def export_table_csv(rows: List[Dict[str, Any]], filename: str = None,
                         subfolder: str = None, root: str = None) -> Optional[str]:
        """One row per dict; the header is the key order of the first row."""
        if not rows:
            return None
        filepath = DataExporter._target(filename, 'table', '.csv', subfolder, root)
        headers = list(rows[0].keys())
        with open(filepath, 'w', newline='', encoding='utf-8') as f:
            writer = csv.writer(f, lineterminator='\n')
            writer.writerow(headers)
            for row in rows:
                writer.writerow([format_float(row.get(h)) for h in headers])
        return str(filepath)

    @staticmethod
    def solution_rows(sol: DiscreteSolution, max_paths: Optional[int] = None) -> Iterable[List[str]]:
        M = sol.M if max_paths is None else min(sol.M, max_paths)
        N = sol.grid.N
        for m in range(M):
            for i in range(N + 1):
                z = sol.Z[m, i].ravel().tolist() if i < N else [None] * (sol.k * sol.d)
                yield [str(m), str(i), format_float(sol.grid.nodes[i])] \
                    + [format_float(v) for v in sol.Y[m, i].tolist()] + [format_float(v) for v in z]

    @staticmethod
    def export_solution_csv(sol: DiscreteSolution, filename: str = None, subfolder: str = None,
                            root: str = None, max_paths: Optional[int] = None) -> str:
        """Columns path, node, t, Y components, Z components (row-major k x d); Z is blank at the last node."""
        filepath = DataExporter._target(filename, 'solution', '.csv', subfolder, root)
        headers = ['path', 'node', 't'] + [f'Y{j}' for j in range(sol.k)] \
            + [f'Z{j}_{l}' for j in range(sol.k) for l in range(sol.d)]
        with open(filepath, 'w', newline='', encoding='utf-8') as f:
            writer = csv.writer(f, lineterminator='\n')
            writer.writerow(headers)
            writer.writerows(DataExporter.solution_rows(sol, max_paths))
        logger.info(f"wrote solution table {filepath}")
        return str(filepath)

    @staticmethod
    def solution_summary(sol: DiscreteSolution, norms: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
        return {
            'y0': sol.y0.tolist(),
            'y0_stderr': sol.y0_stderr.tolist(),
            'node_mean_y': sol.Y.mean(axis=0).tolist(),
            'node_mean_z': sol.Z.mean(axis=0).tolist(),
            'norms': norms or {},
            'metadata': sol.metadata,
        }

    @staticmethod
    def export_condition_reports(reports: List[Any], filename: str = None, subfolder: str = None,
                                 root: str = None) -> str:
        data = {'passed': all(r.passed for r in reports), 'reports': [r.to_dict() for r in reports]}
        return DataExporter.export_to_json(data, filename or 'conditions', subfolder, root)

    @staticmethod
    def export_manifest(manifest: Dict[str, Any], subfolder: str = None, root: str = None) -> str:
        return DataExporter.export_to_json(manifest, 'manifest', subfolder, root)

    @staticmethod
    def export_ensemble(ensemble: PathEnsemble, filename: str = None, subfolder: str = None,
                        root: str = None) -> str:
        """Header (magic, d, M, N, seed, antithetic) as little-endian uint64, then nodes and values as <f8."""
        filepath = DataExporter._target(filename, 'ensemble', '.bin', subfolder, root)
        header = _HEADER.pack(ENSEMBLE_MAGIC, ensemble.d, ensemble.M, ensemble.grid.N,
                              ensemble.seed, int(ensemble.antithetic))
        with open(filepath, 'wb') as f:
            f.write(header)
            f.write(np.ascontiguousarray(ensemble.grid.nodes, dtype='<f8').tobytes())
            f.write(np.ascontiguousarray(ensemble.values, dtype='<f8').tobytes())
        return str(filepath)

    @staticmethod
    def load_ensemble(path: str) -> PathEnsemble:
        with open(path, 'rb') as f:
            raw = f.read()
        if len(raw) < _HEADER.size:
            raise ValidationError(f"{path} is too short for an ensemble header")
        magic, d, M, N, seed, antithetic = _HEADER.unpack_from(raw)
        if magic != ENSEMBLE_MAGIC:
            raise ValidationError(f"{path} is not an ensemble dump (magic {magic!r})")
        body = np.frombuffer(raw, dtype='<f8', offset=_HEADER.size)
        if body.size != (N + 1) + M * (N + 1) * d:
            raise ValidationError(f"{path}: payload size {body.size} does not match d={d}, M={M}, N={N}")
        nodes = body[:N + 1].astype(np.float64)
        values = body[N + 1:].reshape(M, N + 1, d).astype(np.float64)
        return PathEnsemble(TimeGrid(nodes), d, M, values, seed, bool(antithetic))

    @staticmethod
    def _prepare_for_json(data: Any) -> Any:
        if isinstance(data, dict):
            return {str(k): DataExporter._prepare_for_json(v) for k, v in data.items()}
        elif isinstance(data, (list, tuple)):
            return [DataExporter._prepare_for_json(v) for v in data]
        elif isinstance(data, (set, frozenset)):
            return sorted(DataExporter._prepare_for_json(v) for v in data)
        elif isinstance(data, np.ndarray):
            return DataExporter._prepare_for_json(data.tolist())
        elif isinstance(data, np.generic):
            return DataExporter._prepare_for_json(data.item())
        elif isinstance(data, float) and not math.isfinite(data):
            return str(data)
        elif callable(data):
            return getattr(data, '__name__', repr(data))
        else:
            return data
