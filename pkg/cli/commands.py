import argparse
import logging
import sys
from dataclasses import asdict, replace
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence

import numpy as np

from cli.run_config import COMMANDS, RunConfig, load_config
from core.brownian import make_ensemble
from core.conditions import (ONE_SIDED, TWO_SIDED, ConditionReport, check_A1, check_A2, check_claimed,
                             check_continuity_y, check_general_growth, check_integrability, check_lipschitz_z,
                             check_one_sided, check_two_sided, check_weak_monotonicity, draw_samples)
from core.errors import ConfigError, LabError
from core.export_data import DataExporter
from core.harness import run_experiment
from core.model import BoundProcess, GeneratorSpec, PathEnsemble, TerminalSpec, empirical_norms, make_uniform_grid
from core.modulus import (DivergenceVerdict, ModulusFn, bihari_bound, comparison_modulus, concave_majorant,
                          constantin_order_ratio, constantin_to_mao, lift_order, linear_growth_bound,
                          mao_to_constantin, osgood_classifier, split_growth_bound, subadditive_envelope)
from core.solver import solve_backward

logger = logging.getLogger(__name__)

TABLES = 'tables'


def _ensemble(config: RunConfig, d: int) -> PathEnsemble:
    num = config.numeric
    return make_ensemble(make_uniform_grid(num.T, num.N), d, num.M, num.seed, num.threads, num.antithetic)


def _write_manifest(config: RunConfig, run_dir: Path) -> None:
    DataExporter.export_manifest(config.to_dict(), root=str(run_dir))


def cmd_solve(config: RunConfig) -> int:
    gen, xi = config.problem.build()
    ensemble = _ensemble(config, gen.d)
    sol = solve_backward(gen, xi, ensemble, config.numeric.scheme)
    norms = empirical_norms(sol, config.numeric.norm_p)

    run_dir = config.run_dir()
    _write_manifest(config, run_dir)
    DataExporter.export_solution_csv(sol, 'solution', TABLES, str(run_dir), config.numeric.export_paths)
    DataExporter.export_to_json(DataExporter.solution_summary(sol, asdict(norms)), 'summary', root=str(run_dir))

    for j, (y, err) in enumerate(zip(sol.y0, sol.y0_stderr)):
        print(f"Y0[{j}] = {y:.10g} +/- {err:.3g}")
    print(f"S_p = {norms.s_p:.6g}, M_p = {norms.m_p:.6g} (p = {norms.p:g})")
    print(f"outputs: {run_dir}")
    return 0


def _bound_process(gen: GeneratorSpec, c: float) -> BoundProcess:
    base = BoundProcess.constant(c)
    if gen.singular_forcing is None:
        return base
    return replace(base, forcing=gen.singular_forcing, label=f'{base.label}+|{gen.singular_forcing.name}|')


def _required(value: Any, what: str) -> Any:
    if value is None:
        raise ConfigError(f"'checks.{what}' is required for the requested conditions")
    return value


def _check_runners(config: RunConfig, gen: GeneratorSpec,
                   xi: TerminalSpec) -> Dict[str, Callable[[], ConditionReport]]:
    checks = config.checks
    sampler = config.sampler()
    batch = draw_samples(gen, sampler)

    rho = ModulusFn.from_record(checks['modulus']) if 'modulus' in checks else gen.modulus
    psi = ModulusFn.from_record(checks['psi']) if 'psi' in checks else None
    order = checks.get('p', gen.order or 1.0)
    p = checks.get('p', config.problem.p)
    lam = checks.get('lambda_bar', gen.lipschitz_z)
    f_proc = _bound_process(gen, checks.get('f_constant', 0.0))
    phi_proc = BoundProcess.constant(checks.get('phi_constant', 0.0))
    alpha_list = checks.get('alpha_list', [1.0, 2.0])

    runners: Dict[str, Callable[[], ConditionReport]] = {
        'H1': lambda: check_weak_monotonicity(gen, _required(rho, 'modulus'), order, sampler, batch),
        'H2': lambda: check_continuity_y(gen, sampler, batch),
        'H3': lambda: check_general_growth(gen, alpha_list, _ensemble(config, gen.d)),
        'H4': lambda: check_lipschitz_z(gen, _required(lam, 'lambda_bar'), sampler, batch),
        'H5': lambda: check_integrability(xi, gen, checks.get('integrability_p', xi.p), _ensemble(config, gen.d)),
        'A1': lambda: check_A1(gen, checks.get('mu', 0.0), _required(lam, 'lambda_bar'), f_proc, phi_proc, p,
                               sampler, batch),
        'A2': lambda: check_A2(gen, _required(psi, 'psi'), _required(lam, 'lambda_bar'), f_proc, p, sampler, batch),
    }
    for variant, cid in ONE_SIDED.items():
        runners[cid] = lambda v=variant: check_one_sided(gen, _required(rho, 'modulus'), order, v, sampler, batch)
    for variant, cid in TWO_SIDED.items():
        runners[cid] = lambda v=variant: check_two_sided(gen, _required(rho, 'modulus'), order, v, sampler, batch)
    return runners


def cmd_check(config: RunConfig) -> int:
    gen, xi = config.problem.build()
    wanted = config.checks['conditions']
    if wanted == 'claimed':
        reports = check_claimed(gen, config.sampler(), xi, config.checks.get('alpha_list', (1.0, 2.0)))
    else:
        runners = _check_runners(config, gen, xi)
        reports = [runners[cid]() for cid in wanted]

    run_dir = config.run_dir()
    _write_manifest(config, run_dir)
    DataExporter.export_condition_reports(reports, 'summary', root=str(run_dir))
    rows = [{'condition': r.condition_id, 'passed': r.passed, 'samples': r.samples,
             'violations': r.violation_count, 'max_slack': r.max_slack, 'estimate': r.estimate} for r in reports]
    DataExporter.export_table_csv(rows, 'conditions', TABLES, str(run_dir))

    for r in reports:
        slack = 'n/a' if r.max_slack is None else f'{r.max_slack:.3g}'
        print(f"{r.condition_id}: {'pass' if r.passed else 'FAIL'} "
              f"({r.violation_count} of {r.samples} samples, max slack {slack})")
    failed = [r for r in reports if not r.passed]
    if failed and failed[0].first_witness is not None:
        print(f"first witness for {failed[0].condition_id}: {failed[0].first_witness.to_dict()}")
    print(f"outputs: {run_dir}")
    return 0 if not failed else 1


def cmd_experiment(config: RunConfig) -> int:
    manifest = config.manifest()
    result = run_experiment(manifest)

    run_dir = config.run_dir()
    _write_manifest(config, run_dir)
    for name, rows in result.tables.items():
        DataExporter.export_table_csv(rows, name, TABLES, str(run_dir))
    summary = result.to_dict()
    summary.pop('wall_clock')
    summary.pop('tables')
    DataExporter.export_to_json(summary, 'summary', root=str(run_dir))
    logger.info(f"{result.kind} finished in {result.wall_clock:.2f}s")

    for gate, ok in result.gates.items():
        print(f"{gate}: {'pass' if ok else 'FAIL'}")
    for note in result.notes:
        print(f"note: {note}")
    print(f"{result.kind}: {'PASSED' if result.passed else 'FAILED'}; outputs: {run_dir}")
    return 0 if result.passed else 1


def _table_arg(query: Dict[str, Any], op: str):
    if 'table' in query:
        table = query.pop('table')
        if not isinstance(table, dict) or set(table) != {'nodes', 'values'}:
            raise ConfigError("'table' must be an object with 'nodes' and 'values'")
        return np.asarray(table['nodes'], dtype=np.float64), np.asarray(table['values'], dtype=np.float64)
    return _rho_arg(query, op)


def _rho_arg(query: Dict[str, Any], op: str) -> ModulusFn:
    if 'rho' not in query:
        raise ConfigError(f"query '{op}' needs 'rho'")
    return ModulusFn.from_record(query.pop('rho'))


QUERY_OPS: Dict[str, tuple] = {
    'evaluate': (_rho_arg, lambda rho, u: rho(np.asarray(u, dtype=np.float64)), {'u'}),
    'classify': (_rho_arg, osgood_classifier, {'p', 'variant'}),
    'bihari': (_rho_arg, lambda rho, a, horizon, multiplier=1.0, reference=1.0:
               bihari_bound(a, rho, horizon, multiplier, reference), {'a', 'horizon', 'multiplier', 'reference'}),
    'lift_order': (_rho_arg, lift_order, {'p', 'q', 'u_max'}),
    'mao_to_constantin': (_rho_arg, mao_to_constantin, {'p', 'u_max'}),
    'constantin_to_mao': (_rho_arg, constantin_to_mao, {'p', 'u_max'}),
    'concave_majorant': (_table_arg, concave_majorant, {'u_max'}),
    'subadditive_envelope': (_table_arg, subadditive_envelope, {'u_max', 'n'}),
    'comparison_modulus': (_rho_arg, comparison_modulus, {'lambda_bar', 'p', 'u_max'}),
    'constantin_order_ratio': (_rho_arg, constantin_order_ratio, {'p', 'q'}),
    'linear_growth_bound': (_rho_arg, linear_growth_bound, {'u_max'}),
    'split_growth_bound': (_rho_arg, split_growth_bound, {'m', 'u_max'}),
}


def run_query(query: Dict[str, Any]) -> Any:
    query = dict(query)
    op = query.pop('op', None)
    if op not in QUERY_OPS:
        raise ConfigError(f"unknown modulus query '{op}'; choose from {sorted(QUERY_OPS)}")
    first, func, allowed = QUERY_OPS[op]
    subject = first(query, op)
    query.pop('label', None)
    unknown = set(query) - allowed
    if unknown:
        raise ConfigError(f"unknown keys for '{op}': {sorted(unknown)}")
    try:
        return func(subject, **query)
    except TypeError as exc:
        raise ConfigError(f"bad arguments for '{op}': {exc}") from exc


def _query_rows(result: Any) -> Optional[List[Dict[str, Any]]]:
    if isinstance(result, ModulusFn):
        nodes, values = result.table()
        return [{'u': u, 'value': v} for u, v in zip(nodes.tolist(), values.tolist())]
    if isinstance(result, DivergenceVerdict):
        return [{'eps': e, 'partial_integral': s} for e, s in result.partial_integrals]
    if isinstance(result, np.ndarray):
        return [{'index': i, 'value': v} for i, v in enumerate(np.ravel(result).tolist())]
    return None


def _describe(result: Any) -> Any:
    if isinstance(result, ModulusFn):
        return {'family': result.family, 'concave_verified': result.concave_verified, 'nodes': result.grid().size}
    if isinstance(result, DivergenceVerdict):
        return {'verdict': result.verdict, 'variant': result.variant, 'p': result.p, 'analytic': result.analytic}
    if isinstance(result, np.ndarray):
        return result.tolist()
    return result


def cmd_modulus(config: RunConfig) -> int:
    run_dir = config.run_dir()
    _write_manifest(config, run_dir)
    summary = []
    for n, query in enumerate(config.modulus_queries):
        if not isinstance(query, dict):
            raise ConfigError(f"modulus query {n} must be an object")
        name = query.get('label') or f"q{n:02d}_{query.get('op')}"
        result = run_query(query)
        rows = _query_rows(result)
        if rows is not None:
            DataExporter.export_table_csv(rows, name, TABLES, str(run_dir))
        described = _describe(result)
        summary.append({'query': query, 'result': described})
        print(f"{name}: {described}")
    DataExporter.export_to_json({'queries': summary}, 'summary', root=str(run_dir))
    print(f"outputs: {run_dir}")
    return 0


HANDLERS = {
    'solve': cmd_solve,
    'check': cmd_check,
    'experiment': cmd_experiment,
    'modulus': cmd_modulus,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='bsde-lab',
                                     description="Monte Carlo laboratory for multidimensional BSDEs "
                                                 "with weakly monotone generators.")
    sub = parser.add_subparsers(dest='command', required=True)
    for command in COMMANDS:
        p = sub.add_parser(command, help=f"run the '{command}' workflow from a JSON config")
        p.add_argument('--config', required=True, help="path to the JSON run configuration")
        p.add_argument('--seed', type=int, help="override numeric.seed")
        p.add_argument('--outdir', help="override output.outdir")
        p.add_argument('--threads', type=int, help="worker threads (results do not depend on it)")
        p.add_argument('--label', help="run directory name instead of a timestamp")
        p.add_argument('-v', '--verbose', action='count', default=0)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format='%(asctime)s %(levelname)s %(name)s: %(message)s')
    overrides = {'seed': args.seed, 'outdir': args.outdir, 'threads': args.threads, 'label': args.label}
    try:
        config = load_config(args.config, args.command, overrides)
        return HANDLERS[args.command](config)
    except LabError as exc:
        logger.error(f"{args.command} failed: {exc}")
        print(f"error: {exc}", file=sys.stderr)
        return 2
