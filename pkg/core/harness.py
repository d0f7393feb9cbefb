"""Reproducible experiments with pass/fail gates: uniqueness, stability, comparison, convergence.

Paired runs share one Brownian ensemble. Every gate is computed from the rows
of the tables it ships with.
"""

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from config import DEFAULT_NUMERIC, SLACK_TOL
from core.brownian import make_ensemble
from core.conditions import SamplerSpec, check_weak_monotonicity, draw_samples, evaluate_batch
from core.errors import HarnessError, InconclusiveDivergenceError, LabError, ModulusError, ValidationError
from core.generators import build_generator, build_terminal, constant_terminal, make_affine, perturb_generator, \
    perturb_terminal
from core.model import DiscreteSolution, GeneratorSpec, PathEnsemble, TerminalSpec, make_uniform_grid
from core.modulus import bihari_bound, comparison_modulus
from core.solver import SchemeSpec, solution_distance, solve_backward, stability_metric

logger = logging.getLogger(__name__)

KINDS = ('uniqueness', 'stability', 'comparison', 'convergence')
COMPARISON_VARIANTS = ('corollary', 'i', 'ii')


@dataclass
class ToleranceSpec:
    noise_multiplier: float = 3.0
    absolute_floor: float = 1e-10
    comparison_fraction: float = 1e-3
    stability_final_ratio: float = 0.05
    convergence_tolerance: float = 1e-3
    z_tolerance: float = 0.05

    def __post_init__(self):
        for name, value in asdict(self).items():
            if not value > 0:
                raise ValidationError(f"tolerance '{name}' must be positive, got {value}")


@dataclass
class ProblemSpec:
    generator: str
    terminal: str
    generator_params: Dict[str, Any] = field(default_factory=dict)
    terminal_params: Dict[str, Any] = field(default_factory=dict)
    p: float = 2.0
    drift_shift: float = 0.0
    terminal_shift: float = 0.0

    def __post_init__(self):
        if not self.p > 1:
            raise ValidationError(f"problem order p must exceed 1, got {self.p}")

    def build(self) -> Tuple[GeneratorSpec, TerminalSpec]:
        gen = build_generator(self.generator, self.generator_params)
        xi = build_terminal(self.terminal, self.terminal_params)
        if xi.k != gen.k:
            raise ValidationError(f"terminal '{self.terminal}' has k={xi.k}, generator '{self.generator}' k={gen.k}")
        if self.drift_shift:
            gen = perturb_generator(gen, make_affine(gen.k, gen.d, 0.0, 0.0, 1.0), self.drift_shift)
        if self.terminal_shift:
            xi = perturb_terminal(xi, constant_terminal(1.0, xi.k, xi.p), self.terminal_shift)
        return gen, xi


@dataclass
class ExperimentManifest:
    kind: str
    problem: ProblemSpec
    T: float = DEFAULT_NUMERIC['T']
    N: int = DEFAULT_NUMERIC['N']
    M: int = DEFAULT_NUMERIC['M']
    seed: int = DEFAULT_NUMERIC['seed']
    antithetic: bool = False
    threads: int = 1
    scheme: SchemeSpec = field(default_factory=SchemeSpec)
    tolerance: ToleranceSpec = field(default_factory=ToleranceSpec)
    alt_problem: Optional[ProblemSpec] = None
    seeds: List[int] = field(default_factory=list)
    scheme_variants: List[Dict[str, Any]] = field(default_factory=list)
    eps_schedule: List[float] = field(default_factory=list)
    terminal_perturbation: Optional[Dict[str, Any]] = None
    generator_perturbation: Optional[Dict[str, Any]] = None
    verify_conditions: bool = True
    comparison_variant: str = 'corollary'
    n_schedule: List[int] = field(default_factory=list)
    m_schedule: List[int] = field(default_factory=list)
    exact_y0: Optional[float] = None
    exact_z: Optional[float] = None
    lambda_bar: Optional[float] = None
    output: Dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValidationError(f"unknown experiment kind '{self.kind}'; choose from {KINDS}")
        if self.comparison_variant not in COMPARISON_VARIANTS:
            raise ValidationError(f"unknown comparison variant '{self.comparison_variant}'")
        if self.M < 1 or self.N < 1 or not self.T > 0:
            raise ValidationError("need T > 0, N >= 1 and M >= 1")
        if self.threads < 1:
            raise ValidationError(f"threads must be positive, got {self.threads}")
        if self.lambda_bar is not None and self.lambda_bar < 0:
            raise ValidationError(f"lambda_bar must be nonnegative, got {self.lambda_bar}")
        known = set(SchemeSpec.__dataclass_fields__)
        for variant in self.scheme_variants:
            unknown = set(variant) - known
            if unknown:
                raise ValidationError(f"unknown scheme fields in variant: {sorted(unknown)}")

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass
class ExperimentResult:
    kind: str
    tables: Dict[str, List[Dict[str, Any]]]
    gates: Dict[str, bool]
    stderr: Dict[str, float]
    wall_clock: float
    manifest: Dict[str, Any]
    notes: List[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(self.gates.values())

    def to_dict(self) -> Dict[str, Any]:
        return {'kind': self.kind, 'passed': self.passed, 'gates': dict(self.gates), 'stderr': dict(self.stderr),
                'wall_clock': self.wall_clock, 'notes': list(self.notes), 'tables': self.tables}


def build_ensemble(manifest: ExperimentManifest, d: int, seed: Optional[int] = None,
                   N: Optional[int] = None, M: Optional[int] = None) -> PathEnsemble:
    grid = make_uniform_grid(manifest.T, N or manifest.N)
    return make_ensemble(grid, d, M or manifest.M, manifest.seed if seed is None else seed,
                         manifest.threads, manifest.antithetic)


def _solve(gen: GeneratorSpec, xi: TerminalSpec, ensemble: PathEnsemble, scheme: SchemeSpec,
           manifest: ExperimentManifest, stage: str) -> DiscreteSolution:
    try:
        return solve_backward(gen, xi, ensemble, scheme)
    except HarnessError:
        raise
    except LabError as exc:
        raise HarnessError(f"{manifest.kind} stage '{stage}' failed: {exc}",
                           {'manifest': manifest.to_dict(), 'stage': stage}) from exc


def _y0_stderr(sol: DiscreteSolution) -> float:
    return float(np.linalg.norm(sol.y0_stderr))


def _path_stderr(sol: DiscreteSolution) -> float:
    if sol.node_stderr is None:
        return 0.0
    return float(np.max(np.linalg.norm(sol.node_stderr, axis=1)))


def run_uniqueness(manifest: ExperimentManifest) -> ExperimentResult:
    """Same problem under several seeds or scheme variants.

    Y0 gaps must stay inside the Y0 noise floor. On shared ensembles the path
    distance S_p must also stay inside the pathwise floor built from the worst
    nodewise regression stderr of both solutions.
    """
    started = time.perf_counter()
    tol = manifest.tolerance
    seeds = manifest.seeds or [manifest.seed]
    variants = manifest.scheme_variants or [{}]
    stages = [(f'seed={s}|{v or "base"}', s, replace(manifest.scheme, **v), manifest.problem)
              for s in seeds for v in variants]
    if manifest.alt_problem is not None:
        stages.append(('alt_problem', seeds[0], replace(manifest.scheme, **variants[0]), manifest.alt_problem))
    if len(stages) < 2:
        raise ValidationError("uniqueness needs at least two seeds, scheme variants or problems")

    ensembles: Dict[int, PathEnsemble] = {}
    solutions = []
    for label, seed, scheme, problem in stages:
        gen, xi = problem.build()
        if seed not in ensembles:
            ensembles[seed] = build_ensemble(manifest, gen.d, seed)
        solutions.append(_solve(gen, xi, ensembles[seed], scheme, manifest, label))

    reference = solutions[0]
    rows = []
    p = manifest.problem.p
    for (label, seed, _, _), sol in zip(stages[1:], solutions[1:]):
        gap = float(np.linalg.norm(sol.y0 - reference.y0))
        floor = tol.noise_multiplier * (_y0_stderr(sol) + _y0_stderr(reference)) + tol.absolute_floor
        row = {'variant': label, 'seed': seed, 'y0': sol.y0.tolist(), 'y0_gap': gap, 'noise_floor': floor,
               's_p': None, 'm_p': None, 'path_floor': None}
        if sol.ensemble.identical_to(reference.ensemble):
            dist = solution_distance(sol, reference, p)
            path_floor = tol.noise_multiplier * (_path_stderr(sol) + _path_stderr(reference)) + tol.absolute_floor
            row.update(s_p=dist.s_p, m_p=dist.m_p, path_floor=path_floor)
            logger.info(f"uniqueness {label}: S_p={dist.s_p:.3e}, path floor={path_floor:.3e}")
        rows.append(row)
        logger.info(f"uniqueness {label}: |dY0|={gap:.3e}, floor={floor:.3e}")

    shared = [r for r in rows if r['s_p'] is not None]
    gates = {'y0_within_noise_floor': all(r['y0_gap'] <= r['noise_floor'] for r in rows),
             'distance_within_noise_floor': all(r['s_p'] <= r['path_floor'] for r in shared)}
    return ExperimentResult('uniqueness', {'pairs': rows}, gates, {'y0_reference': _y0_stderr(reference)},
                            time.perf_counter() - started, manifest.to_dict(),
                            [f"reference variant: {stages[0][0]}, Y0={reference.y0.tolist()}"])


def _perturbations(manifest: ExperimentManifest, gen: GeneratorSpec, xi: TerminalSpec):
    eta = gamma = None
    if manifest.terminal_perturbation:
        spec = dict(manifest.terminal_perturbation)
        eta = build_terminal(spec.pop('name'), spec)
    if manifest.generator_perturbation:
        spec = dict(manifest.generator_perturbation)
        gamma = build_generator(spec.pop('name'), spec)
    return eta, gamma


def _check_shared_bounds(gen_eps: GeneratorSpec, base: GeneratorSpec, eps: float,
                         lambda_bar: Optional[float]) -> None:
    """The perturbed generator must keep the base modulus and the shared z-Lipschitz bound."""
    shared = base.lipschitz_z if lambda_bar is None else lambda_bar
    if shared is not None:
        lam = gen_eps.lipschitz_z
        if lam is None or lam > shared * (1.0 + 1e-12):
            raise HarnessError(f"perturbed generator at eps={eps} has Lipschitz constant {lam} in z, "
                               f"above the shared bound {shared}",
                               {'eps': eps, 'lipschitz_z': lam, 'lambda_bar': shared})
    if base.modulus is None:
        return
    sampler = SamplerSpec(count=2000)
    report = check_weak_monotonicity(gen_eps, base.modulus, min(base.order or 2.0, 2.0), sampler)
    if not report.passed:
        raise HarnessError(f"perturbed generator at eps={eps} violates the shared monotonicity bound",
                           {'report': report.to_dict(), 'eps': eps})


def run_stability(manifest: ExperimentManifest) -> ExperimentResult:
    """Perturbed problems on common paths; the distance to the base solution must shrink with eps."""
    started = time.perf_counter()
    tol = manifest.tolerance
    if not manifest.eps_schedule:
        raise ValidationError("stability needs a nonempty eps_schedule")
    gen, xi = manifest.problem.build()
    eta, gamma = _perturbations(manifest, gen, xi)
    ensemble = build_ensemble(manifest, gen.d)
    base = _solve(gen, xi, ensemble, manifest.scheme, manifest, 'base')
    p = manifest.problem.p

    def stage(eps: float) -> Tuple[float, float]:
        gen_eps = perturb_generator(gen, gamma, eps) if gamma is not None else gen
        xi_eps = perturb_terminal(xi, eta, eps) if eta is not None else xi
        if manifest.verify_conditions and gen_eps is not gen:
            _check_shared_bounds(gen_eps, gen, eps, manifest.lambda_bar)
        sol = _solve(gen_eps, xi_eps, ensemble, manifest.scheme, manifest, f'eps={eps:g}')
        return stability_metric(sol, base, p)

    if manifest.threads > 1:
        with ThreadPoolExecutor(max_workers=manifest.threads) as pool:
            results = list(pool.map(stage, manifest.eps_schedule))
    else:
        results = [stage(eps) for eps in manifest.eps_schedule]

    rows = []
    for n, (eps, (metric, err)) in enumerate(zip(manifest.eps_schedule, results)):
        previous = rows[-1]['metric'] if rows else None
        rows.append({'stage': n, 'eps': eps, 'metric': metric, 'stderr': err,
                     'ratio_to_previous': metric / previous if previous else None})
        logger.info(f"stability eps={eps:g}: metric={metric:.6g} +/- {err:.2g}")

    k = tol.noise_multiplier
    monotone = all(b['metric'] <= a['metric'] + k * (a['stderr'] + b['stderr']) + tol.absolute_floor
                   for a, b in zip(rows, rows[1:]))
    final, initial = rows[-1], rows[0]
    gates = {
        'metric_nonincreasing': monotone,
        'final_metric_small': final['metric'] <= max(k * final['stderr'] + tol.absolute_floor,
                                                     tol.stability_final_ratio * initial['metric']),
        'zero_at_zero_eps': all(r['metric'] == 0.0 for r in rows if r['eps'] == 0),
    }
    return ExperimentResult('stability', {'metric': rows}, gates, {'final': final['stderr']},
                            time.perf_counter() - started, manifest.to_dict())


def _ordering_violations(manifest: ExperimentManifest, gen: GeneratorSpec, gen_alt: GeneratorSpec,
                         sol: DiscreteSolution, sol_alt: DiscreteSolution) -> Tuple[int, int, str]:
    """Count samples where g > g' on the set the chosen comparison variant requires."""
    variant = manifest.comparison_variant
    if variant == 'corollary':
        batch = draw_samples(gen, SamplerSpec(seed=manifest.seed, count=5000, ensemble=sol.ensemble))
        g = evaluate_batch(gen, batch.t, batch.b, batch.y1, batch.z1, full=True)
        g_alt = evaluate_batch(gen_alt, batch.t, batch.b, batch.y1, batch.z1, full=True)
        return int(np.sum(g > g_alt + SLACK_TOL)), batch.size, 'all (y, z) in the sampled box'
    along = sol_alt if variant == 'i' else sol
    count = 0
    for i in range(sol.grid.N):
        t = float(sol.grid.nodes[i])
        b = sol.ensemble.state(i)
        y, z = along.Y[:, i], along.Z[:, i]
        count += int(np.sum(gen.full_evaluate(t, b, y, z) > gen_alt.full_evaluate(t, b, y, z) + SLACK_TOL))
    which = "the second problem's" if variant == 'i' else "the first problem's"
    return count, sol.M * sol.grid.N, f'along {which} solution'


def _comparison_bound(manifest: ExperimentManifest, gen: GeneratorSpec, gen_alt: GeneratorSpec,
                      xi_gap: np.ndarray, notes: List[str]) -> Optional[float]:
    """Bihari bound on E[((y - y')^+)^p] from the comparison modulus; 0 when the terminal gap vanishes."""
    holder = gen_alt if manifest.comparison_variant == 'ii' else gen
    if holder.modulus is None or holder.lipschitz_z is None:
        notes.append('no modulus/Lipschitz metadata for the Bihari comparison bound')
        return None
    p = manifest.problem.p
    a = float(np.mean(np.maximum(xi_gap, 0.0) ** p))
    try:
        return bihari_bound(a, comparison_modulus(holder.modulus, holder.lipschitz_z, p), manifest.T, p)
    except (ModulusError, InconclusiveDivergenceError) as exc:
        notes.append(f'Bihari comparison bound unavailable: {exc}')
        return None


def run_comparison(manifest: ExperimentManifest) -> ExperimentResult:
    """Solutions of two ordered scalar problems on common paths must stay ordered up to noise."""
    started = time.perf_counter()
    tol = manifest.tolerance
    if manifest.alt_problem is None:
        raise ValidationError("comparison needs alt_problem (the dominating problem)")
    gen, xi = manifest.problem.build()
    gen_alt, xi_alt = manifest.alt_problem.build()
    if gen.k != 1 or gen_alt.k != 1:
        raise ValidationError("comparison is one-dimensional: both problems need k = 1")
    if gen.d != gen_alt.d:
        raise ValidationError("both problems must share the Brownian dimension")

    ensemble = build_ensemble(manifest, gen.d)
    xi_gap = (xi.evaluate(ensemble) - xi_alt.evaluate(ensemble))[:, 0]
    if np.any(xi_gap > SLACK_TOL):
        raise HarnessError(f"terminal values are not ordered on {int(np.sum(xi_gap > SLACK_TOL))} paths",
                           {'manifest': manifest.to_dict(), 'worst': float(np.max(xi_gap))})

    sol = _solve(gen, xi, ensemble, manifest.scheme, manifest, 'first')
    sol_alt = _solve(gen_alt, xi_alt, ensemble, manifest.scheme, manifest, 'second')
    bad, checked, where = _ordering_violations(manifest, gen, gen_alt, sol, sol_alt)
    if bad:
        raise HarnessError(f"generator ordering fails on {bad} of {checked} samples ({where})",
                           {'manifest': manifest.to_dict()})

    excess = sol.Y[:, :, 0] - sol_alt.Y[:, :, 0]
    band = tol.noise_multiplier * (sol.node_stderr[:, 0] + sol_alt.node_stderr[:, 0]) + tol.absolute_floor
    flagged = excess > band[None, :]
    fraction = float(np.mean(flagged))
    notes = [f'generator ordering checked {where}: {checked} samples']
    bound = _comparison_bound(manifest, gen, gen_alt, xi_gap, notes)
    rows = [{'node': i, 't': float(sol.grid.nodes[i]), 'mean_gap': float(np.mean(-excess[:, i])),
             'worst_excess': float(np.max(excess[:, i])), 'band': float(band[i]),
             'violations': int(np.sum(flagged[:, i]))} for i in range(sol.grid.N + 1)]
    logger.info(f"comparison: violation fraction {fraction:.2e}, worst excess {float(np.max(excess)):.3e}")
    gates = {'ordered_within_noise': fraction <= tol.comparison_fraction}
    summary = {'violation_fraction': fraction, 'worst_excess': float(np.max(excess)), 'bihari_bound': bound}
    return ExperimentResult('comparison', {'nodes': rows, 'summary': [summary]}, gates,
                            {'y0_first': _y0_stderr(sol), 'y0_second': _y0_stderr(sol_alt)},
                            time.perf_counter() - started, manifest.to_dict(), notes)


def run_convergence(manifest: ExperimentManifest) -> ExperimentResult:
    """Error table over a refinement schedule against a closed form, or self-refinement gaps without one."""
    started = time.perf_counter()
    tol = manifest.tolerance
    n_schedule = manifest.n_schedule or [manifest.N]
    m_schedule = manifest.m_schedule or [manifest.M]
    if len(m_schedule) == 1:
        m_schedule = m_schedule * len(n_schedule)
    if len(m_schedule) != len(n_schedule):
        raise ValidationError("m_schedule must have one entry or as many as n_schedule")
    gen, xi = manifest.problem.build()

    rows = []
    previous = None
    for N, M in zip(n_schedule, m_schedule):
        sol = _solve(gen, xi, build_ensemble(manifest, gen.d, N=N, M=M), manifest.scheme, manifest, f'N={N},M={M}')
        y0 = float(sol.y0[0])
        if manifest.exact_y0 is not None:
            error = abs(y0 - manifest.exact_y0)
        else:
            error = abs(y0 - previous) if previous is not None else None
        z_error = None
        if manifest.exact_z is not None:
            z_error = float(np.max(np.abs(sol.Z.mean(axis=0) - manifest.exact_z)))
        rows.append({'N': N, 'M': M, 'y0': y0, 'y0_stderr': _y0_stderr(sol), 'error': error, 'z_error': z_error})
        logger.info(f"convergence N={N}, M={M}: Y0={y0:.8f}, error={error}, z_error={z_error}")
        previous = y0

    k = tol.noise_multiplier
    scored = [r for r in rows if r['error'] is not None]
    gates = {}
    if scored:
        gates['error_decreasing'] = all(b['error'] <= a['error'] + k * (a['y0_stderr'] + b['y0_stderr'])
                                        + tol.absolute_floor for a, b in zip(scored, scored[1:]))
        gates['final_error_within_tolerance'] = scored[-1]['error'] <= tol.convergence_tolerance
    if manifest.exact_z is not None:
        gates['final_z_error_within_tolerance'] = rows[-1]['z_error'] <= tol.z_tolerance
    if not gates:
        raise ValidationError("convergence needs exact_y0, exact_z or at least two refinement stages")
    return ExperimentResult('convergence', {'errors': rows}, gates, {'final_y0': rows[-1]['y0_stderr']},
                            time.perf_counter() - started, manifest.to_dict())


RUNNERS = {
    'uniqueness': run_uniqueness,
    'stability': run_stability,
    'comparison': run_comparison,
    'convergence': run_convergence,
}


def run_experiment(manifest: ExperimentManifest) -> ExperimentResult:
    return RUNNERS[manifest.kind](manifest)
