"""Backward regression Monte Carlo for multidimensional BSDEs."""

import itertools
import logging
import math
import time
from dataclasses import asdict, dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import numpy.typing as npt
from numpy.polynomial import hermite_e
from scipy import linalg

from config import DEFAULT_SCHEME
from core.errors import GeneratorEvaluationError, ImplicitSolveError, RegressionError, StepSizeError, ValidationError
from core.generators import truncate_problem
from core.model import (DiscreteSolution, EmpiricalNorms, GeneratorSpec, PathEnsemble, TerminalSpec,
                        bootstrap_stderr, empirical_norms, path_sup_power, quadratic_variation)
from core.modulus import split_growth_bound

logger = logging.getLogger(__name__)

STEPPINGS = ('explicit', 'implicit_y', 'auto')


@dataclass
class SchemeSpec:
    stepping: str = DEFAULT_SCHEME['stepping']
    degree: int = DEFAULT_SCHEME['degree']
    tolerance: float = DEFAULT_SCHEME['tolerance']
    max_iter: int = DEFAULT_SCHEME['max_iter']
    damping: float = DEFAULT_SCHEME['damping']
    theta_y: float = DEFAULT_SCHEME['theta_y']
    rcond: float = DEFAULT_SCHEME['rcond']
    step_guard: float = DEFAULT_SCHEME['step_guard']
    threads: int = DEFAULT_SCHEME['threads']

    def __post_init__(self):
        if self.stepping not in STEPPINGS:
            raise ValidationError(f"unknown stepping '{self.stepping}'; choose from {STEPPINGS}")
        if int(self.degree) != self.degree or self.degree < 0:
            raise ValidationError(f"basis degree must be a nonnegative integer, got {self.degree}")
        if not self.tolerance > 0:
            raise ValidationError(f"implicit tolerance must be positive, got {self.tolerance}")
        if self.max_iter < 1:
            raise ValidationError(f"max_iter must be positive, got {self.max_iter}")
        if not 0 < self.damping <= 1:
            raise ValidationError(f"damping must lie in (0, 1], got {self.damping}")
        if not 0 < self.theta_y <= 1:
            raise ValidationError(f"theta_y must lie in (0, 1], got {self.theta_y}")
        if not 0 < self.rcond < 1:
            raise ValidationError(f"rcond must lie in (0, 1), got {self.rcond}")
        if not self.step_guard > 0:
            raise ValidationError(f"step guard must be positive, got {self.step_guard}")
        if self.threads < 1:
            raise ValidationError(f"threads must be positive, got {self.threads}")
        self.degree = int(self.degree)

    def resolved_stepping(self, gen: GeneratorSpec) -> str:
        """'auto' picks the implicit step for generators claiming a monotonicity-type condition."""
        if self.stepping != 'auto':
            return self.stepping
        return 'implicit_y' if any(c.startswith('H1') for c in gen.claimed_conditions) else 'explicit'

    def to_dict(self) -> Dict[str, object]:
        return asdict(self)


class RegressionModel:
    """Least squares on Hermite polynomials of B_t / sqrt(t) with total degree <= degree.

    At t = 0 every path sits at the origin and the basis reduces to the constant.
    """

    def __init__(self, d: int, degree: int, rcond: float):
        self.d = d
        self.degree = degree
        self.rcond = rcond
        self.exponents: List[Tuple[int, ...]] = sorted(
            (e for e in itertools.product(range(degree + 1), repeat=d) if sum(e) <= degree),
            key=lambda e: (sum(e), e),
        )
        self.y_coefficients: Dict[int, npt.NDArray[np.float64]] = {}
        self.z_coefficients: Dict[int, npt.NDArray[np.float64]] = {}
        self.conditions: Dict[int, float] = {}

    @property
    def size(self) -> int:
        return len(self.exponents)

    def describe(self) -> Dict[str, object]:
        return {'basis': 'hermite_e', 'degree': self.degree, 'd': self.d, 'size': self.size}

    def design(self, t: float, b: npt.NDArray) -> npt.NDArray[np.float64]:
        M = b.shape[0]
        if t <= 0:
            return np.ones((M, 1))
        x = b / math.sqrt(t)
        tables = [hermite_e.hermevander(x[:, j], self.degree) for j in range(self.d)]
        columns = []
        for e in self.exponents:
            col = np.ones(M)
            for j, power in enumerate(e):
                if power:
                    col = col * tables[j][:, power]
            columns.append(col)
        return np.column_stack(columns)

    def fit(self, node: int, X: npt.NDArray, targets: npt.NDArray) -> Tuple[npt.NDArray, npt.NDArray]:
        """Pivoted QR solve; returns (coefficients, fitted values)."""
        Q, R, piv = linalg.qr(X, mode='economic', pivoting=True)
        diag = np.abs(np.diag(R))
        condition = float(diag[0] / diag[-1]) if diag[-1] > 0 else math.inf
        rank = int(np.sum(diag > self.rcond * diag[0]))
        if rank < X.shape[1]:
            raise RegressionError(node, rank, X.shape[1], condition)
        coef = np.empty((X.shape[1], targets.shape[1]))
        coef[piv] = linalg.solve_triangular(R, Q.T @ targets)
        self.conditions[node] = max(condition, self.conditions.get(node, 0.0))
        return coef, X @ coef


class BackwardSolver:
    def __init__(self, gen: GeneratorSpec, xi: TerminalSpec, ensemble: PathEnsemble,
                 scheme: Optional[SchemeSpec] = None):
        if xi.k != gen.k:
            raise ValidationError(f"terminal dimension {xi.k} differs from generator dimension {gen.k}")
        if ensemble.d != gen.d:
            raise ValidationError(f"ensemble dimension {ensemble.d} differs from generator d={gen.d}")
        self.gen = gen
        self.xi = xi
        self.ensemble = ensemble
        self.scheme = scheme or SchemeSpec()
        self.stepping = self.scheme.resolved_stepping(gen)
        self.regression = RegressionModel(gen.d, self.scheme.degree, self.scheme.rcond)

        self.iterations: List[int] = []
        self.fallback_paths: int = 0
        self.step_load: Optional[float] = None

    def check_step_size(self) -> Optional[float]:
        """theta * max width * (1 + 2A) from the split growth bound; must stay below the guard."""
        gen = self.gen
        if self.stepping != 'implicit_y' or gen.modulus is None or not gen.modulus.concave_verified:
            return None
        slope, _ = split_growth_bound(gen.modulus, 1.0)
        load = self.scheme.theta_y * float(np.max(self.ensemble.grid.widths)) * slope
        if load > self.scheme.step_guard:
            needed = math.ceil(self.scheme.theta_y * self.ensemble.grid.horizon * slope / self.scheme.step_guard)
            raise StepSizeError(
                f"step too large for {gen.name}: theta*dt*(1+2A) = {load:.4g} > {self.scheme.step_guard}; "
                f"use at least N = {needed} uniform steps"
            )
        return load

    def _fixed_point(self, node: int, t: float, b: npt.NDArray, c: npt.NDArray, z: npt.NDArray,
                     weight: float) -> Tuple[npt.NDArray, npt.NDArray]:
        """Damped iteration y <- (1-w) y + w (c + weight g(y)); returns (y, indices still unconverged)."""
        omega, tol = self.scheme.damping, self.scheme.tolerance
        y = c.copy()
        active = np.arange(c.shape[0])
        scale = 1.0 + np.max(np.abs(c), axis=1)
        used = 0
        for used in range(1, self.scheme.max_iter + 1):
            try:
                target = c[active] + weight * self.gen.evaluate(t, b[active], y[active], z[active])
            except GeneratorEvaluationError:
                logger.debug(f"node {node}: fixed point left the generator's domain, {active.size} paths pending")
                break
            residual = np.max(np.abs(y[active] - target), axis=1)
            done = residual <= tol * scale[active]
            moving = active[~done]
            y[moving] = (1.0 - omega) * y[moving] + omega * target[~done]
            active = moving
            if active.size == 0:
                break
        self.iterations.append(used)
        return y, active

    def _bisect(self, node: int, t: float, b: npt.NDArray, c: npt.NDArray, z: npt.NDArray,
                weight: float) -> npt.NDArray[np.float64]:
        """Scalar fallback: bracket the increasing residual y - c - weight g(y), then bisect."""
        def residual(y):
            return y - c - weight * self.gen.evaluate(t, b, y, z)

        width = 1.0 + np.abs(c)
        lo, hi = c - width, c + width
        try:
            for _ in range(64):
                low_bad = residual(lo) > 0
                high_bad = residual(hi) < 0
                if not (np.any(low_bad) or np.any(high_bad)):
                    break
                lo = np.where(low_bad, lo - width, lo)
                hi = np.where(high_bad, hi + width, hi)
                width = 2.0 * width
            else:
                raise ImplicitSolveError(node, c.shape[0], math.inf)
            for _ in range(2000):
                mid = 0.5 * (lo + hi)
                below = residual(mid) < 0
                lo = np.where(below, mid, lo)
                hi = np.where(below, hi, mid)
                if np.all(hi - lo <= 4 * np.finfo(float).eps * np.maximum(1.0, np.abs(mid))):
                    break
            root = 0.5 * (lo + hi)
            final = np.abs(residual(root))
        except GeneratorEvaluationError as exc:
            raise ImplicitSolveError(node, c.shape[0], math.inf) from exc
        collapsed = hi - lo <= 4 * np.finfo(float).eps * np.maximum(1.0, np.abs(root))
        accepted = collapsed | (final <= self.scheme.tolerance * (1.0 + np.abs(c)))
        if not np.all(accepted):
            raise ImplicitSolveError(node, int(np.sum(~accepted)), float(np.max(final[~accepted])))
        return root

    def _implicit_step(self, node: int, t: float, b: npt.NDArray, c: npt.NDArray, z: npt.NDArray,
                       weight: float) -> npt.NDArray[np.float64]:
        y, pending = self._fixed_point(node, t, b, c, z, weight)
        if pending.size == 0:
            return y
        if self.gen.k != 1:
            r = c[pending] + weight * self.gen.evaluate(t, b[pending], y[pending], z[pending]) - y[pending]
            raise ImplicitSolveError(node, pending.size, float(np.max(np.abs(r))))
        logger.info(f"node {node}: bisection fallback on {pending.size} paths")
        self.fallback_paths += pending.size
        y[pending] = self._bisect(node, t, b[pending], c[pending], z[pending], weight)
        return y

    def solve(self) -> DiscreteSolution:
        started = time.perf_counter()
        self.step_load = self.check_step_size()
        gen, ens, scheme = self.gen, self.ensemble, self.scheme
        grid = ens.grid
        nodes, widths = grid.nodes, grid.widths
        N, M, k, d = grid.N, ens.M, gen.k, gen.d
        theta = scheme.theta_y

        Y = np.empty((M, N + 1, k))
        Z = np.zeros((M, N, k, d))
        stderr = np.zeros((N + 1, k))
        Y[:, N] = self.xi.evaluate(ens)
        dB = ens.increments

        for i in range(N - 1, -1, -1):
            t, dt = float(nodes[i]), float(widths[i])
            b = ens.state(i)
            X = self.regression.design(t, b)
            Y_next = Y[:, i + 1]

            next_coef, cond_next = self.regression.fit(i, X, Y_next)
            z_target = ((Y_next - cond_next)[:, :, None] * dB[:, i, None, :]).reshape(M, k * d) / dt
            z_coef, z_fit = self.regression.fit(i, X, z_target)
            Z[:, i] = z_fit.reshape(M, k, d)
            forcing = gen.forcing_integral(t, t + dt)

            if self.stepping == 'explicit':
                target, y_coef, y_fit = Y_next, next_coef, cond_next
                Y[:, i] = y_fit + dt * gen.evaluate(t, b, y_fit, Z[:, i]) + forcing
            else:
                if theta < 1:
                    z_next = Z[:, i + 1] if i + 1 < N else Z[:, i]
                    g_next = gen.evaluate(float(nodes[i + 1]), ens.state(i + 1), Y_next, z_next)
                    target = Y_next + (1.0 - theta) * dt * g_next
                else:
                    target = Y_next
                y_coef, y_fit = self.regression.fit(i, X, target)
                Y[:, i] = self._implicit_step(i, t, b, y_fit + forcing, Z[:, i], theta * dt)

            stderr[i] = np.std(target - y_fit, axis=0) * math.sqrt(X.shape[1] / M)
            self.regression.y_coefficients[i] = y_coef
            self.regression.z_coefficients[i] = z_coef

        elapsed = time.perf_counter() - started
        logger.info(f"Solved {gen.name} / {self.xi.name}: stepping={self.stepping}, N={N}, M={M}, "
                    f"Y0={Y[:, 0].mean(axis=0).tolist()} in {elapsed:.2f}s")
        metadata = {
            'scheme': scheme.to_dict(),
            'stepping': self.stepping,
            'generator': gen.describe(),
            'terminal': self.xi.describe(),
            'ensemble': ens.describe(),
            'basis': self.regression.describe(),
            'max_condition': max(self.regression.conditions.values(), default=1.0),
            'max_iterations': max(self.iterations, default=0),
            'fallback_paths': self.fallback_paths,
            'step_load': self.step_load,
        }
        return DiscreteSolution(grid, Y, Z, ens, node_stderr=stderr, metadata=metadata)


def solve_backward(gen: GeneratorSpec, xi: TerminalSpec, ensemble: PathEnsemble,
                   scheme: Optional[SchemeSpec] = None) -> DiscreteSolution:
    return BackwardSolver(gen, xi, ensemble, scheme).solve()


def picard_truncation_sequence(gen: GeneratorSpec, xi: TerminalSpec, n_list: Sequence[float],
                               ensemble: PathEnsemble, scheme: Optional[SchemeSpec] = None
                               ) -> List[DiscreteSolution]:
    """Solutions of the problems truncated at each level in n_list, in order."""
    levels = list(n_list)
    if not levels:
        raise ValidationError("n_list must not be empty")
    if min(levels) <= 0 or any(b <= a for a, b in zip(levels, levels[1:])):
        raise ValidationError(f"n_list must be positive and strictly increasing, got {levels}")
    solutions = []
    for n in levels:
        xi_n, gen_n = truncate_problem(xi, gen, n)
        solutions.append(solve_backward(gen_n, xi_n, ensemble, scheme))
    return solutions


def _check_comparable(a: DiscreteSolution, b: DiscreteSolution) -> None:
    if not a.grid.same_as(b.grid):
        raise ValidationError("solutions live on different time grids")
    if not a.ensemble.identical_to(b.ensemble):
        raise ValidationError("solutions were computed on different ensembles")
    if a.Y.shape != b.Y.shape or a.Z.shape != b.Z.shape:
        raise ValidationError(f"solution shapes differ: {a.Y.shape} vs {b.Y.shape}")


def solution_distance(a: DiscreteSolution, b: DiscreteSolution, p: float) -> EmpiricalNorms:
    _check_comparable(a, b)
    diff = DiscreteSolution(a.grid, a.Y - b.Y, a.Z - b.Z, a.ensemble)
    return empirical_norms(diff, p)


def stability_metric(a: DiscreteSolution, b: DiscreteSolution, p: float) -> Tuple[float, float]:
    """E[sup |dY|^p + (sum |dZ|^2 dt)^(p/2)] with its bootstrap standard error."""
    _check_comparable(a, b)
    if not p > 1:
        raise ValidationError(f"metric order must exceed 1, got {p}")
    per_path = (path_sup_power(a.Y - b.Y, p)
                + quadratic_variation(a.Z - b.Z, a.grid.widths) ** (p / 2.0))
    return float(np.mean(per_path)), bootstrap_stderr(per_path, np.mean)
