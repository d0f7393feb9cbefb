"""Sampling falsifiers for the structural conditions on generators.

A passed report means no counterexample was found in the sampled box; it is
never a proof. Every check draws a SampleBatch (or reuses one) so that
implications between conditions can be tested on identical samples.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import numpy.typing as npt

from config import DEFAULT_SAMPLER, MAX_WITNESSES, SLACK_TOL
from core.brownian import simulate_ensemble
from core.errors import ValidationError
from core.model import BoundProcess, GeneratorSpec, PathEnsemble, TerminalSpec, make_uniform_grid
from core.modulus import ModulusFn

logger = logging.getLogger(__name__)

ONE_SIDED = {'mao': 'H1a', 'constantin': 'H1b', 'osgood': 'H1star'}
TWO_SIDED = {'h1prime': 'H1prime', 'mao_prime': 'H1a_prime',
             'constantin_prime': 'H1b_prime', 'osgood_prime': 'H1star_prime'}
CONDITION_IDS = ('H1', 'H1a', 'H1b', 'H1star', 'H1prime', 'H1a_prime', 'H1b_prime', 'H1star_prime',
                 'H2', 'H3', 'H4', 'H5', 'A1', 'A2')

HEURISTIC_NOTE = 'expectation estimated by Monte Carlo; refinement-stability gate is a heuristic'


@dataclass
class SamplerSpec:
    seed: int = DEFAULT_SAMPLER['seed']
    count: int = DEFAULT_SAMPLER['count']
    y_radius: float = DEFAULT_SAMPLER['y_radius']
    z_radius: float = DEFAULT_SAMPLER['z_radius']
    t_grid: Optional[npt.NDArray[np.float64]] = None
    closest: float = DEFAULT_SAMPLER['closest']
    ensemble: Optional[PathEnsemble] = None

    def __post_init__(self):
        if self.count < 1:
            raise ValidationError(f"sample count must be >= 1, got {self.count}")
        if not (self.y_radius > 0 and self.z_radius > 0):
            raise ValidationError("sampling radii must be positive")
        if not 0 < self.closest < self.y_radius:
            raise ValidationError(f"closeness floor must lie in (0, y_radius), got {self.closest}")
        if self.ensemble is not None:
            self.t_grid = np.asarray(self.ensemble.grid.nodes)
        elif self.t_grid is None:
            self.t_grid = np.linspace(0.0, DEFAULT_SAMPLER['horizon'], DEFAULT_SAMPLER['grid_nodes'])
        self.t_grid = np.asarray(self.t_grid, dtype=np.float64)
        if self.t_grid.ndim != 1 or self.t_grid.size < 1 or np.any(self.t_grid < 0):
            raise ValidationError("t_grid must be a nonempty list of nonnegative times")

    def box(self) -> Dict[str, Any]:
        return {'seed': self.seed, 'count': self.count, 'y_radius': self.y_radius,
                'z_radius': self.z_radius, 'closest': self.closest,
                't_range': [float(self.t_grid.min()), float(self.t_grid.max())],
                'b_source': 'ensemble' if self.ensemble is not None else 'gaussian'}


@dataclass(frozen=True, eq=False)
class SampleBatch:
    t: npt.NDArray[np.float64]
    b: npt.NDArray[np.float64]
    y1: npt.NDArray[np.float64]
    y2: npt.NDArray[np.float64]
    z1: npt.NDArray[np.float64]
    z2: npt.NDArray[np.float64]
    spec: SamplerSpec

    @property
    def size(self) -> int:
        return self.t.size


@dataclass(frozen=True)
class Witness:
    t: float
    b: List[float]
    y1: List[float]
    y2: Optional[List[float]]
    z1: List[float]
    z2: Optional[List[float]]
    lhs: float
    rhs: float

    def to_dict(self) -> Dict[str, Any]:
        return {'t': self.t, 'b': self.b, 'y1': self.y1, 'y2': self.y2,
                'z1': self.z1, 'z2': self.z2, 'lhs': self.lhs, 'rhs': self.rhs}


@dataclass(frozen=True)
class ConditionReport:
    """max_slack is max(lhs - rhs - tolerance); it is <= 0 exactly when nothing was violated.

    Path-integral checks report the margin of their refinement gates, or None when
    the grid is too coarse to grade one.
    """
    condition_id: str
    samples: int
    violations: Tuple[Witness, ...]
    max_slack: Optional[float]
    violation_count: int = 0
    box: Dict[str, Any] = field(default_factory=dict)
    estimate: Optional[float] = None
    notes: Tuple[str, ...] = ()

    @property
    def passed(self) -> bool:
        return self.violation_count == 0

    @property
    def first_witness(self) -> Optional[Witness]:
        return self.violations[0] if self.violations else None

    def to_dict(self) -> Dict[str, Any]:
        return {'condition_id': self.condition_id, 'passed': self.passed, 'samples': self.samples,
                'violation_count': self.violation_count, 'max_slack': self.max_slack,
                'estimate': self.estimate, 'box': self.box, 'notes': list(self.notes),
                'violations': [w.to_dict() for w in self.violations]}


def _coarse_points(k: int, s: SamplerSpec) -> Tuple[npt.NDArray, npt.NDArray]:
    lattice = np.linspace(-s.y_radius, s.y_radius, 7)
    first, second = [], []
    for j in range(k):
        axis = np.eye(k)[j]
        for u in lattice:
            for v in lattice:
                if u != v:
                    first.append(u * axis)
                    second.append(v * axis)
        for e in range(1, 9):
            for sign in (1.0, -1.0):
                first.append(np.zeros(k))
                second.append(sign * 10.0 ** -e * axis)
    return np.array(first), np.array(second)


def _unit_rows(rng: np.random.Generator, n: int, dim: int) -> npt.NDArray[np.float64]:
    v = rng.normal(size=(n, dim))
    norms = np.linalg.norm(v, axis=1, keepdims=True)
    return v / np.where(norms > 0, norms, 1.0)


def _close_to(rng: np.random.Generator, x: npt.NDArray, closest: float, widest: float) -> npt.NDArray:
    n = x.shape[0]
    flat = x.reshape(n, -1)
    r = 10.0 ** rng.uniform(np.log10(closest), np.log10(widest), size=(n, 1))
    return (flat + r * _unit_rows(rng, n, flat.shape[1])).reshape(x.shape)


def draw_samples(gen: GeneratorSpec, s: SamplerSpec) -> SampleBatch:
    """Coarse deterministic pairs first (origin and axis lattice), then random pairs.

    Half of the random pairs are drawn at distances log-uniform down to s.closest.
    """
    k, d = gen.k, gen.d
    rng = np.random.default_rng(s.seed)
    c1, c2 = _coarse_points(k, s)
    n_coarse = min(c1.shape[0], s.count)
    n_rand = s.count - n_coarse
    half = n_rand // 2

    y1 = rng.uniform(-s.y_radius, s.y_radius, size=(n_rand, k))
    y2 = np.concatenate([_close_to(rng, y1[:half], s.closest, s.y_radius),
                         rng.uniform(-s.y_radius, s.y_radius, size=(n_rand - half, k))])
    z1 = rng.uniform(-s.z_radius, s.z_radius, size=(n_rand, k, d))
    z2 = np.concatenate([_close_to(rng, z1[:half], s.closest, s.z_radius),
                         rng.uniform(-s.z_radius, s.z_radius, size=(n_rand - half, k, d))])
    t_idx = rng.integers(0, s.t_grid.size, size=n_rand)

    coarse_idx = np.arange(n_coarse) % s.t_grid.size
    t_idx = np.concatenate([coarse_idx, t_idx])
    t = s.t_grid[t_idx]
    y1 = np.concatenate([c1[:n_coarse], y1])
    y2 = np.concatenate([c2[:n_coarse], y2])
    z1 = np.concatenate([np.zeros((n_coarse, k, d)), z1])
    z2 = np.concatenate([np.zeros((n_coarse, k, d)), z2])

    if s.ensemble is not None:
        paths = rng.integers(0, s.ensemble.M, size=s.count)
        b = s.ensemble.values[paths, t_idx, :]
        if s.ensemble.d != d:
            raise ValidationError(f"ensemble dimension {s.ensemble.d} differs from generator d={d}")
    else:
        b = rng.normal(size=(s.count, d)) * np.sqrt(t)[:, None]
    b[:n_coarse] = 0.0
    return SampleBatch(t, b, y1, y2, z1, z2, s)


def evaluate_batch(gen: GeneratorSpec, t: npt.NDArray, b: npt.NDArray, y: npt.NDArray, z: npt.NDArray,
                   full: bool = False) -> npt.NDArray[np.float64]:
    """Evaluate a batch whose rows carry different times, one call per distinct t."""
    out = np.empty((t.size, gen.k))
    call = gen.full_evaluate if full else gen.evaluate
    for tv in np.unique(t):
        rows = t == tv
        out[rows] = call(float(tv), b[rows], y[rows], z[rows])
    return out


def _y_difference(gen: GeneratorSpec, batch: SampleBatch):
    dy = batch.y1 - batch.y2
    n = np.linalg.norm(dy, axis=1)
    dg = (evaluate_batch(gen, batch.t, batch.b, batch.y1, batch.z1)
          - evaluate_batch(gen, batch.t, batch.b, batch.y2, batch.z1))
    valid = n > 0
    e = dy / np.where(valid, n, 1.0)[:, None]
    return n, dg, np.sum(e * dg, axis=1), valid


def condition_margins(condition_id: str, gen: GeneratorSpec, batch: SampleBatch, rho: Optional[ModulusFn] = None,
                      p: float = 1.0, lambda_bar: float = 0.0, mu: float = 0.0,
                      f_proc: Optional[BoundProcess] = None, phi_proc: Optional[BoundProcess] = None
                      ) -> Tuple[npt.NDArray, npt.NDArray, npt.NDArray]:
    """(lhs, rhs, valid) of the pointwise inequality behind a condition, one entry per sample."""
    if condition_id in ('H1', 'H1a', 'H1b', 'H1star', 'H1prime', 'H1a_prime', 'H1b_prime', 'H1star_prime'):
        if rho is None:
            raise ValidationError(f"{condition_id} needs a modulus")
        if p < 1:
            raise ValidationError(f"order p must be >= 1, got {p}")
        n, dg, inner, valid = _y_difference(gen, batch)
        size = np.linalg.norm(dg, axis=1)
        if condition_id == 'H1':
            return n ** (p - 1) * inner, rho(n ** p), valid
        if condition_id == 'H1prime':
            return n ** (p - 1) * size, rho(n ** p), valid
        lhs = size if condition_id.endswith('_prime') else inner
        if condition_id.startswith('H1a'):
            return lhs, rho(n ** p) ** (1.0 / p), valid
        return lhs, rho(n), valid

    if condition_id == 'H4':
        dz = np.linalg.norm((batch.z1 - batch.z2).reshape(batch.size, -1), axis=1)
        dg = (evaluate_batch(gen, batch.t, batch.b, batch.y1, batch.z1)
              - evaluate_batch(gen, batch.t, batch.b, batch.y1, batch.z2))
        return np.linalg.norm(dg, axis=1), lambda_bar * dz, dz > 0

    f_proc = f_proc or BoundProcess.zero()
    f_t = np.empty(batch.size)
    for tv in np.unique(batch.t):
        rows = batch.t == tv
        f_t[rows] = f_proc.value(float(tv), batch.b[rows])
    g = evaluate_batch(gen, batch.t, batch.b, batch.y1, batch.z1, full=True)
    y_norm = np.linalg.norm(batch.y1, axis=1)
    z_norm = np.linalg.norm(batch.z1.reshape(batch.size, -1), axis=1)
    inner = np.sum(batch.y1 * g, axis=1)

    if condition_id == 'A1':
        phi_proc = phi_proc or BoundProcess.zero()
        phi_t = np.empty(batch.size)
        for tv in np.unique(batch.t):
            rows = batch.t == tv
            phi_t[rows] = phi_proc.value(float(tv), batch.b[rows])
        rhs = mu * y_norm ** 2 + lambda_bar * y_norm * z_norm + y_norm * f_t + phi_t
        return inner, rhs, np.ones(batch.size, dtype=bool)

    if condition_id == 'A2':
        if rho is None:
            raise ValidationError("A2 needs a modulus psi")
        valid = y_norm > 0
        scale = y_norm ** (p - 1)
        lhs = scale * inner / np.where(valid, y_norm, 1.0)
        rhs = rho(y_norm ** p) + lambda_bar * scale * z_norm + scale * f_t
        return lhs, rhs, valid

    raise ValidationError(f"no pointwise inequality for condition '{condition_id}'")


def _witness(batch: SampleBatch, j: int, lhs: float, rhs: float, pair_y: bool, pair_z: bool) -> Witness:
    return Witness(
        t=float(batch.t[j]), b=batch.b[j].tolist(), y1=batch.y1[j].tolist(),
        y2=batch.y2[j].tolist() if pair_y else None,
        z1=batch.z1[j].ravel().tolist(), z2=batch.z2[j].ravel().tolist() if pair_z else None,
        lhs=float(lhs), rhs=float(rhs),
    )


def _sampled_report(condition_id: str, batch: SampleBatch, lhs: npt.NDArray, rhs: npt.NDArray,
                    valid: npt.NDArray, box: Dict[str, Any], pair_y: bool = True, pair_z: bool = False
                    ) -> ConditionReport:
    slack = np.where(valid, lhs - rhs - SLACK_TOL, -np.inf)
    violated = np.nonzero(slack > 0)[0]
    witnesses = tuple(_witness(batch, int(j), lhs[j], rhs[j], pair_y, pair_z) for j in violated[:MAX_WITNESSES])
    max_slack = float(np.max(slack)) if np.any(valid) else -SLACK_TOL
    report = ConditionReport(condition_id, batch.size, witnesses, max_slack, int(violated.size), box)
    logger.info(f"{condition_id}: {batch.size} samples, {violated.size} violations, max slack {max_slack:.3e}")
    return report


def _batch(gen: GeneratorSpec, s: SamplerSpec, batch: Optional[SampleBatch]) -> SampleBatch:
    return batch if batch is not None else draw_samples(gen, s)


def check_weak_monotonicity(gen: GeneratorSpec, rho: ModulusFn, p: float, s: SamplerSpec,
                            batch: Optional[SampleBatch] = None) -> ConditionReport:
    batch = _batch(gen, s, batch)
    lhs, rhs, valid = condition_margins('H1', gen, batch, rho=rho, p=p)
    return _sampled_report('H1', batch, lhs, rhs, valid, {**s.box(), 'p': p, 'rho': rho.family})


def check_one_sided(gen: GeneratorSpec, rho: ModulusFn, p: float, variant: str, s: SamplerSpec,
                    batch: Optional[SampleBatch] = None) -> ConditionReport:
    if variant not in ONE_SIDED:
        raise ValidationError(f"unknown one-sided variant '{variant}'")
    cid = ONE_SIDED[variant]
    batch = _batch(gen, s, batch)
    lhs, rhs, valid = condition_margins(cid, gen, batch, rho=rho, p=p)
    return _sampled_report(cid, batch, lhs, rhs, valid, {**s.box(), 'p': p, 'rho': rho.family})


def check_two_sided(gen: GeneratorSpec, rho: ModulusFn, p: float, variant: str, s: SamplerSpec,
                    batch: Optional[SampleBatch] = None) -> ConditionReport:
    if variant not in TWO_SIDED:
        raise ValidationError(f"unknown two-sided variant '{variant}'")
    cid = TWO_SIDED[variant]
    batch = _batch(gen, s, batch)
    lhs, rhs, valid = condition_margins(cid, gen, batch, rho=rho, p=p)
    return _sampled_report(cid, batch, lhs, rhs, valid, {**s.box(), 'p': p, 'rho': rho.family})


def check_lipschitz_z(gen: GeneratorSpec, lambda_bar: float, s: SamplerSpec,
                      batch: Optional[SampleBatch] = None) -> ConditionReport:
    if lambda_bar < 0:
        raise ValidationError(f"Lipschitz constant must be nonnegative, got {lambda_bar}")
    batch = _batch(gen, s, batch)
    lhs, rhs, valid = condition_margins('H4', gen, batch, lambda_bar=lambda_bar)
    return _sampled_report('H4', batch, lhs, rhs, valid, {**s.box(), 'lambda_bar': lambda_bar},
                           pair_y=False, pair_z=True)


def check_A1(gen: GeneratorSpec, mu: float, lambda_bar: float, f_proc: BoundProcess, phi_proc: BoundProcess,
             p: float, s: SamplerSpec, batch: Optional[SampleBatch] = None) -> ConditionReport:
    if mu < 0 or lambda_bar < 0:
        raise ValidationError("mu and lambda must be nonnegative")
    batch = _batch(gen, s, batch)
    lhs, rhs, valid = condition_margins('A1', gen, batch, mu=mu, lambda_bar=lambda_bar,
                                        f_proc=f_proc, phi_proc=phi_proc)
    box = {**s.box(), 'mu': mu, 'lambda': lambda_bar, 'p': p, 'f': f_proc.label, 'phi': phi_proc.label}
    return _sampled_report('A1', batch, lhs, rhs, valid, box, pair_y=False)


def check_A2(gen: GeneratorSpec, psi: ModulusFn, lambda_bar: float, f_proc: BoundProcess, p: float,
             s: SamplerSpec, batch: Optional[SampleBatch] = None) -> ConditionReport:
    if lambda_bar < 0:
        raise ValidationError("lambda must be nonnegative")
    batch = _batch(gen, s, batch)
    lhs, rhs, valid = condition_margins('A2', gen, batch, rho=psi, p=p, lambda_bar=lambda_bar, f_proc=f_proc)
    box = {**s.box(), 'psi': psi.family, 'lambda': lambda_bar, 'p': p, 'f': f_proc.label}
    return _sampled_report('A2', batch, lhs, rhs, valid, box, pair_y=False)


def check_continuity_y(gen: GeneratorSpec, s: SamplerSpec, batch: Optional[SampleBatch] = None,
                       radii: Sequence[float] = (1e-4, 1e-6), max_points: int = 2000) -> ConditionReport:
    """Oscillation of y -> g over y +/- r e_j; flagged when it does not shrink with r."""
    batch = _batch(gen, s, batch)
    m = min(batch.size, max_points)
    t, b, y, z = batch.t[:m], batch.b[:m], batch.y1[:m], batch.z1[:m]
    base = evaluate_batch(gen, t, b, y, z)
    oscillation = []
    for r in radii:
        values = [base]
        for j in range(gen.k):
            step = r * np.eye(gen.k)[j]
            values.append(evaluate_batch(gen, t, b, y + step, z))
            values.append(evaluate_batch(gen, t, b, y - step, z))
        stack = np.stack(values)
        oscillation.append(np.max(stack.max(axis=0) - stack.min(axis=0), axis=1))
    coarse, fine = oscillation[0], oscillation[-1]
    floor = 1e-6 + 1e-3 * np.linalg.norm(base, axis=1)
    flagged = (fine > floor) & (fine > 0.5 * coarse)
    idx = np.nonzero(flagged)[0]
    witnesses = tuple(
        Witness(float(t[j]), b[j].tolist(), y[j].tolist(), None, z[j].ravel().tolist(), None,
                float(fine[j]), float(floor[j]))
        for j in idx[:MAX_WITNESSES]
    )
    slack = np.where(flagged, fine - floor, np.minimum(fine - floor, 0.5 * coarse - fine))
    notes = (f'oscillation sampled at radii {list(radii)}',)
    return ConditionReport('H2', m, witnesses, float(np.max(slack)) if idx.size else min(float(np.max(slack)), 0.0),
                           int(idx.size), {**s.box(), 'radii': list(radii)}, float(np.max(fine)), notes)


def _refinement_slack(estimates: Sequence[float]) -> Optional[float]:
    """d2 - max(0.75 d1, 1e-3 |last|); positive exactly when the last refinement fails to contract."""
    if len(estimates) < 3:
        return None
    if not np.isfinite(estimates[-1]):
        return math.inf
    d1 = abs(estimates[-2] - estimates[-3])
    d2 = abs(estimates[-1] - estimates[-2])
    return d2 - max(0.75 * d1, 1e-3 * abs(estimates[-1]))


def _strides(N: int) -> List[int]:
    return [4, 2, 1] if N % 4 == 0 else [1]


def _left_point_integral(values: npt.NDArray, nodes: npt.NDArray, stride: int) -> npt.NDArray[np.float64]:
    """Left-point rule on the sub-grid nodes[::stride]; values are per path, per node."""
    picks = np.arange(0, nodes.size - 1, stride)
    widths = np.diff(np.append(nodes[picks], nodes[-1]))
    return values[:, picks] @ widths


def _ball_points(k: int, alpha: float) -> npt.NDArray[np.float64]:
    if k == 1:
        return np.linspace(-alpha, alpha, 41)[:, None]
    rng = np.random.default_rng(0)
    directions = np.concatenate([np.eye(k), -np.eye(k), _unit_rows(rng, 16, k)])
    radii = np.linspace(0.0, alpha, 9)[1:]
    return np.concatenate([np.zeros((1, k)), (radii[:, None, None] * directions[None]).reshape(-1, k)])


def check_general_growth(gen: GeneratorSpec, alpha_list: Sequence[float], ensemble: PathEnsemble,
                         max_paths: int = 2000) -> ConditionReport:
    """E int sup_{|y|<=alpha} |g(t,y,0) - g(t,0,0)| dt by left-point rule, with a refinement gate."""
    if ensemble.d != gen.d:
        raise ValidationError(f"ensemble dimension {ensemble.d} differs from generator d={gen.d}")
    if not alpha_list or min(alpha_list) <= 0:
        raise ValidationError("alpha_list must hold positive radii")
    P = min(ensemble.M, max_paths)
    nodes = ensemble.grid.nodes
    N = ensemble.grid.N
    witnesses, estimates_out, slacks = [], [], []
    for alpha in alpha_list:
        ball = _ball_points(gen.k, float(alpha))
        nb = ball.shape[0]
        sup = np.zeros((P, N))
        for i in range(N):
            b = ensemble.state(i)[:P]
            zero_z = np.zeros((P * nb, gen.k, gen.d))
            rep_b = np.repeat(b, nb, axis=0)
            g_ball = gen.evaluate(float(nodes[i]), rep_b, np.tile(ball, (P, 1)), zero_z).reshape(P, nb, gen.k)
            g0 = gen.evaluate(float(nodes[i]), b, np.zeros((P, gen.k)), zero_z[:P])
            sup[:, i] = np.max(np.linalg.norm(g_ball - g0[:, None, :], axis=2), axis=1)
        estimates = [float(np.mean(_left_point_integral(sup, nodes, s))) for s in _strides(N)]
        estimate = estimates[-1]
        estimates_out.append(estimate)
        slack = math.inf if not np.isfinite(estimate) else _refinement_slack(estimates)
        flagged = slack is not None and slack > 0
        if slack is not None:
            slacks.append(slack)
        if flagged:
            witnesses.append(Witness(float(nodes[-1]), [], [float(alpha)], None, [], None,
                                     estimate, estimates[-2] if len(estimates) > 1 else 0.0))
        logger.info(f"H3 alpha={alpha}: estimates over refinements {estimates}")
    notes = (HEURISTIC_NOTE, f'paths used: {P}', f'estimates per alpha: {estimates_out}')
    return ConditionReport('H3', P * N, tuple(witnesses), max(slacks) if slacks else None, len(witnesses),
                           {'alpha_list': list(alpha_list), **ensemble.describe()},
                           max(estimates_out), notes)


def check_integrability(xi: TerminalSpec, gen: GeneratorSpec, p: float, ensemble: PathEnsemble) -> ConditionReport:
    """E[|xi|^p + (int |g(t,0,0)| dt)^p]; the singular forcing enters through exact cell integrals."""
    if xi.k != gen.k:
        raise ValidationError("terminal and generator dimensions differ")
    if not p > 1:
        raise ValidationError(f"integrability order must exceed 1, got {p}")
    nodes = ensemble.grid.nodes
    N, M = ensemble.grid.N, ensemble.M
    terminal_part = np.linalg.norm(xi.evaluate(ensemble), axis=1) ** p
    origin = np.zeros((M, N))
    for i in range(N):
        origin[:, i] = np.linalg.norm(
            gen.evaluate(float(nodes[i]), ensemble.state(i), np.zeros((M, gen.k)), np.zeros((M, gen.k, gen.d))),
            axis=1)
    forcing = sum(gen.singular_forcing.magnitude_integral(nodes[i], nodes[i + 1]) for i in range(N)) \
        if gen.singular_forcing is not None else 0.0

    estimates = []
    for stride in _strides(N):
        per_path = terminal_part + (_left_point_integral(origin, nodes, stride) + forcing) ** p
        estimates.append(float(np.mean(per_path)))
    per_path = terminal_part + (_left_point_integral(origin, nodes, 1) + forcing) ** p
    estimate = estimates[-1]

    reasons, slacks = [], []
    if not np.isfinite(estimate):
        reasons.append('non-finite estimate')
        slacks.append(math.inf)
    refinement = _refinement_slack(estimates) if np.isfinite(estimate) else None
    if refinement is not None:
        slacks.append(refinement)
        if refinement > 0:
            reasons.append(f'grows under grid refinement: {estimates}')
    if M >= 100 and np.isfinite(estimate):
        dominance = float(np.max(per_path) / np.sum(per_path)) if np.sum(per_path) > 0 else 0.0
        slacks.append(dominance - 0.05)
        if dominance > 0.05:
            reasons.append(f'single path carries {dominance:.1%} of the sample mean')
        nested = [float(np.mean(per_path[:max(M // f, 1)])) for f in (16, 4, 1)]
        growth = min(nested[2] - 1.5 * nested[1], 1.5 * nested[1] - 2.25 * nested[0])
        slacks.append(growth)
        if growth > 0:
            reasons.append(f'grows over nested subsamples: {nested}')
    witnesses = tuple(Witness(float(nodes[-1]), [], [], None, [], None, estimate, 0.0) for _ in reasons[:1])
    notes = (HEURISTIC_NOTE, *reasons, f'forcing integral (exact): {forcing}')
    logger.info(f"H5 p={p}: estimate {estimate:.6g}, flags={len(reasons)}")
    return ConditionReport('H5', M, witnesses, max(slacks) if slacks else None, len(witnesses),
                           {'p': p, **ensemble.describe()}, estimate, notes)


def _default_ensemble(gen: GeneratorSpec, s: SamplerSpec) -> PathEnsemble:
    if s.ensemble is not None:
        return s.ensemble
    horizon = float(s.t_grid.max()) if s.t_grid.max() > 0 else 1.0
    return simulate_ensemble(make_uniform_grid(horizon, 16), gen.d, 500, s.seed)


def check_claimed(gen: GeneratorSpec, s: SamplerSpec, xi: Optional[TerminalSpec] = None,
                  alpha_list: Sequence[float] = (1.0, 2.0)) -> List[ConditionReport]:
    """Run every sampler named in gen.claimed_conditions against the generator's own metadata."""
    batch = draw_samples(gen, s)
    order = gen.order or 1.0
    runners: Dict[str, Callable[[], ConditionReport]] = {
        'H1': lambda: check_weak_monotonicity(gen, gen.modulus, order, s, batch),
        'H1a': lambda: check_one_sided(gen, gen.modulus, order, 'mao', s, batch),
        'H1b': lambda: check_one_sided(gen, gen.modulus, order, 'constantin', s, batch),
        'H1star': lambda: check_one_sided(gen, gen.modulus, order, 'osgood', s, batch),
        'H1prime': lambda: check_two_sided(gen, gen.modulus, order, 'h1prime', s, batch),
        'H1a_prime': lambda: check_two_sided(gen, gen.modulus, order, 'mao_prime', s, batch),
        'H1b_prime': lambda: check_two_sided(gen, gen.modulus, order, 'constantin_prime', s, batch),
        'H1star_prime': lambda: check_two_sided(gen, gen.modulus, order, 'osgood_prime', s, batch),
        'H2': lambda: check_continuity_y(gen, s, batch),
        'H3': lambda: check_general_growth(gen, alpha_list, _default_ensemble(gen, s)),
        'H4': lambda: check_lipschitz_z(gen, gen.lipschitz_z or 0.0, s, batch),
    }
    reports = []
    for cid in sorted(gen.claimed_conditions):
        if cid.startswith('H1') and gen.modulus is None:
            raise ValidationError(f"{gen.name} claims {cid} but declares no modulus")
        if cid in runners:
            reports.append(runners[cid]())
    if xi is not None:
        reports.append(check_integrability(xi, gen, xi.p, _default_ensemble(gen, s)))
    return reports
