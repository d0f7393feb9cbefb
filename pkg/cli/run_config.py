"""Strict JSON run configuration: unknown keys are rejected before any compute."""

import json
import logging
from dataclasses import asdict, dataclass, field, fields
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, List, Optional

from config import DEFAULT_NUMERIC, OUTPUT_ROOT
from core.conditions import CONDITION_IDS, SamplerSpec
from core.errors import ConfigError, LabError
from core.export_data import DataExporter
from core.harness import ExperimentManifest, ProblemSpec, ToleranceSpec
from core.solver import SchemeSpec

logger = logging.getLogger(__name__)

COMMANDS = ('solve', 'check', 'experiment', 'modulus')
TOP_KEYS = {'command', 'problem', 'numeric', 'checks', 'experiment', 'modulus', 'output'}
NUMERIC_KEYS = {'T', 'N', 'M', 'seed', 'antithetic', 'threads', 'scheme', 'norm_p', 'export_paths'}
CHECK_KEYS = {'conditions', 'sampler', 'modulus', 'p', 'lambda_bar', 'alpha_list',
              'mu', 'f_constant', 'phi_constant', 'psi', 'integrability_p'}
EXPERIMENT_KEYS = {'kind', 'alt_problem', 'seeds', 'scheme_variants', 'eps_schedule', 'terminal_perturbation',
                   'generator_perturbation', 'verify_conditions', 'comparison_variant', 'n_schedule',
                   'm_schedule', 'exact_y0', 'exact_z', 'lambda_bar', 'tolerance'}
OUTPUT_KEYS = {'outdir', 'label'}


def _strict(block: Any, allowed: set, where: str) -> Dict[str, Any]:
    if not isinstance(block, dict):
        raise ConfigError(f"'{where}' must be an object, got {type(block).__name__}")
    unknown = set(block) - allowed
    if unknown:
        raise ConfigError(f"unknown keys in '{where}': {sorted(unknown)}")
    return dict(block)


def _dataclass_from(cls, block: Any, where: str):
    allowed = {f.name for f in fields(cls)}
    data = _strict(block, allowed, where)
    try:
        return cls(**data)
    except TypeError as exc:
        raise ConfigError(f"bad '{where}' block: {exc}") from exc


def _problem(block: Any, where: str) -> ProblemSpec:
    data = _strict(block, {f.name for f in fields(ProblemSpec)}, where)
    for key in ('generator', 'terminal'):
        if not data.get(key):
            raise ConfigError(f"'{where}.{key}' is required")
    return _dataclass_from(ProblemSpec, data, where)


def _seed(value: Any) -> int:
    if isinstance(value, bool) or not isinstance(value, int) or not 0 <= value < 2 ** 64:
        raise ConfigError(f"seed must be an unsigned 64-bit integer, got {value!r}")
    return value


@dataclass
class NumericBlock:
    T: float = DEFAULT_NUMERIC['T']
    N: int = DEFAULT_NUMERIC['N']
    M: int = DEFAULT_NUMERIC['M']
    seed: int = DEFAULT_NUMERIC['seed']
    antithetic: bool = False
    threads: int = 1
    scheme: SchemeSpec = field(default_factory=SchemeSpec)
    norm_p: float = 2.0
    export_paths: Optional[int] = None


@dataclass
class RunConfig:
    command: str
    numeric: NumericBlock
    problem: Optional[ProblemSpec] = None
    checks: Dict[str, Any] = field(default_factory=dict)
    experiment: Dict[str, Any] = field(default_factory=dict)
    modulus_queries: List[Dict[str, Any]] = field(default_factory=list)
    outdir: str = OUTPUT_ROOT
    label: Optional[str] = None

    def sampler(self) -> SamplerSpec:
        data = dict(self.checks.get('sampler', {}))
        data.setdefault('seed', self.numeric.seed)
        return _dataclass_from(SamplerSpec, data, 'checks.sampler')

    def manifest(self) -> ExperimentManifest:
        exp = dict(self.experiment)
        tolerance = _dataclass_from(ToleranceSpec, exp.pop('tolerance', {}), 'experiment.tolerance')
        alt = exp.pop('alt_problem', None)
        num = self.numeric
        try:
            return ExperimentManifest(
                problem=self.problem, T=num.T, N=num.N, M=num.M, seed=num.seed, antithetic=num.antithetic,
                threads=num.threads, scheme=num.scheme, tolerance=tolerance,
                alt_problem=_problem(alt, 'experiment.alt_problem') if alt is not None else None,
                output={'outdir': self.outdir, 'label': self.label or ''}, **exp,
            )
        except TypeError as exc:
            raise ConfigError(f"bad 'experiment' block: {exc}") from exc

    def run_dir(self) -> Path:
        """<outdir>/<experiment kind or command>/<label or timestamp>."""
        group = self.experiment.get('kind', self.command) if self.command == 'experiment' else self.command
        leaf = self.label or datetime.now().strftime("%Y%m%d_%H%M%S")
        path = Path(self.outdir) / group / leaf
        path.mkdir(parents=True, exist_ok=True)
        return path

    def to_dict(self) -> Dict[str, Any]:
        data = {
            'command': self.command,
            'numeric': asdict(self.numeric),
            'checks': self.checks,
            'experiment': self.experiment,
            'modulus': {'queries': self.modulus_queries},
            'output': {'outdir': self.outdir, 'label': self.label},
        }
        if self.problem is not None:
            data['problem'] = asdict(self.problem)
        return data


def parse_config(data: Dict[str, Any], command: Optional[str] = None,
                 overrides: Optional[Dict[str, Any]] = None) -> RunConfig:
    data = _strict(data, TOP_KEYS, 'config')
    declared = data.get('command')
    if command and declared and declared != command:
        raise ConfigError(f"config is for '{declared}' but the '{command}' subcommand was invoked")
    command = command or declared
    if command not in COMMANDS:
        raise ConfigError(f"command must be one of {COMMANDS}, got {command!r}")
    overrides = {k: v for k, v in (overrides or {}).items() if v is not None}

    numeric = _strict(data.get('numeric', {}), NUMERIC_KEYS, 'numeric')
    scheme = _dataclass_from(SchemeSpec, numeric.pop('scheme', {}), 'numeric.scheme')
    if 'threads' in overrides:
        numeric['threads'] = overrides['threads']
        scheme.threads = overrides['threads']
    if 'seed' in overrides:
        numeric['seed'] = overrides['seed']
    if 'seed' in numeric:
        _seed(numeric['seed'])
    try:
        numeric_block = NumericBlock(scheme=scheme, **numeric)
    except (TypeError, LabError) as exc:
        raise ConfigError(f"bad 'numeric' block: {exc}") from exc

    problem = _problem(data['problem'], 'problem') if 'problem' in data else None
    if command in ('solve', 'check', 'experiment') and problem is None:
        raise ConfigError(f"'{command}' needs a 'problem' block with a generator and a terminal")

    checks = _strict(data.get('checks', {}), CHECK_KEYS, 'checks')
    if command == 'check':
        wanted = checks.get('conditions')
        if wanted != 'claimed':
            if not wanted or not isinstance(wanted, list):
                raise ConfigError("'checks.conditions' must be 'claimed' or a nonempty list of condition ids")
            unknown = set(wanted) - set(CONDITION_IDS)
            if unknown:
                raise ConfigError(f"unknown condition ids {sorted(unknown)}; choose from {list(CONDITION_IDS)}")

    experiment = _strict(data.get('experiment', {}), EXPERIMENT_KEYS, 'experiment')
    if command == 'experiment' and not experiment.get('kind'):
        raise ConfigError("'experiment.kind' is required")

    queries = _strict(data.get('modulus', {}), {'queries'}, 'modulus').get('queries', [])
    if command == 'modulus' and not queries:
        raise ConfigError("'modulus.queries' must list at least one query")

    output = _strict(data.get('output', {}), OUTPUT_KEYS, 'output')
    config = RunConfig(
        command=command, numeric=numeric_block, problem=problem, checks=checks, experiment=experiment,
        modulus_queries=list(queries),
        outdir=overrides.get('outdir', output.get('outdir', OUTPUT_ROOT)),
        label=overrides.get('label', output.get('label')),
    )
    if command == 'experiment':
        config.manifest()
    return config


def load_config(path: str, command: Optional[str] = None, overrides: Optional[Dict[str, Any]] = None) -> RunConfig:
    try:
        data = DataExporter.load_json(path)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    logger.info(f"loaded config {path}")
    return parse_config(data, command, overrides)
