"""Shared domain types: time grids, Brownian ensembles, generators, terminal data, solutions and norms."""

import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, FrozenSet, Optional, TYPE_CHECKING

import numpy as np
import numpy.typing as npt
from scipy import integrate

from config import BOOTSTRAP_KEY, BOOTSTRAP_RESAMPLES
from core.errors import GeneratorEvaluationError, ValidationError

if TYPE_CHECKING:
    from core.modulus import ModulusFn

logger = logging.getLogger(__name__)

GeneratorMap = Callable[[float, npt.NDArray, npt.NDArray, npt.NDArray], npt.NDArray]
TerminalMap = Callable[[npt.NDArray, npt.NDArray], npt.NDArray]


def _frozen(values: npt.ArrayLike) -> npt.NDArray[np.float64]:
    arr = np.array(values, dtype=np.float64)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class TimeGrid:
    nodes: npt.NDArray[np.float64]

    def __post_init__(self):
        nodes = _frozen(self.nodes)
        if nodes.ndim != 1 or nodes.size < 2:
            raise ValidationError("time grid needs at least two nodes")
        if nodes[0] != 0.0:
            raise ValidationError(f"time grid must start at 0, got {nodes[0]}")
        if not np.all(np.diff(nodes) > 0):
            raise ValidationError("time grid nodes must be strictly increasing")
        object.__setattr__(self, 'nodes', nodes)

    @property
    def horizon(self) -> float:
        return float(self.nodes[-1])

    @property
    def N(self) -> int:
        return self.nodes.size - 1

    @property
    def widths(self) -> npt.NDArray[np.float64]:
        return np.diff(self.nodes)

    def same_as(self, other: 'TimeGrid') -> bool:
        return np.array_equal(self.nodes, other.nodes)

    def describe(self) -> Dict[str, Any]:
        return {'T': self.horizon, 'N': self.N, 'nodes': self.nodes.tolist()}


def make_uniform_grid(T: float, N: int) -> TimeGrid:
    if not T > 0:
        raise ValidationError(f"horizon must be positive, got {T}")
    if int(N) != N or N < 1:
        raise ValidationError(f"number of steps must be a positive integer, got {N}")
    return TimeGrid(np.linspace(0.0, float(T), int(N) + 1))


def make_graded_grid(T: float, N: int, grading: float = 1.5) -> TimeGrid:
    """Nodes T*(i/N)**grading, refined towards t = 0 where singular forcings live."""
    if grading < 1:
        raise ValidationError(f"grading exponent must be >= 1, got {grading}")
    grid = make_uniform_grid(T, N)
    nodes = float(T) * (grid.nodes / float(T)) ** grading
    nodes[-1] = float(T)
    return TimeGrid(nodes)


@dataclass(frozen=True, eq=False)
class PathEnsemble:
    grid: TimeGrid
    d: int
    M: int
    values: npt.NDArray[np.float64]
    seed: int
    antithetic: bool = False

    def __post_init__(self):
        values = _frozen(self.values)
        expected = (self.M, self.grid.N + 1, self.d)
        if values.shape != expected:
            raise ValidationError(f"ensemble values have shape {values.shape}, expected {expected}")
        if self.M < 1 or self.d < 1:
            raise ValidationError("ensemble needs at least one path and one dimension")
        if np.any(values[:, 0, :] != 0.0):
            raise ValidationError("Brownian paths must start at the origin")
        object.__setattr__(self, 'values', values)

    @property
    def increments(self) -> npt.NDArray[np.float64]:
        return np.diff(self.values, axis=1)

    @property
    def terminal(self) -> npt.NDArray[np.float64]:
        return self.values[:, -1, :]

    def state(self, i: int) -> npt.NDArray[np.float64]:
        return self.values[:, i, :]

    def identical_to(self, other: 'PathEnsemble') -> bool:
        return (self is other) or (
            self.grid.same_as(other.grid)
            and self.values.shape == other.values.shape
            and np.array_equal(self.values, other.values)
        )

    def describe(self) -> Dict[str, Any]:
        return {'d': self.d, 'M': self.M, 'seed': self.seed,
                'antithetic': self.antithetic, 'N': self.grid.N, 'T': self.grid.horizon}


@dataclass(frozen=True)
class SingularForcing:
    """Additive t-only term with exact cell integrals.

    Components must keep a constant sign so that |cell integral| equals the
    integral of the magnitude. clipped_integral(t0, t1, level), when given, is the
    closed-form cell integral of the radially clamped term.
    """
    name: str
    value: Callable[[float], npt.NDArray]
    cell_integral: Callable[[float, float], npt.NDArray]
    clipped_integral: Optional[Callable[[float, float, float], npt.NDArray]] = None

    def magnitude_integral(self, t0: float, t1: float) -> float:
        return float(np.linalg.norm(self.cell_integral(t0, t1)))

    def clipped(self, level: float) -> 'SingularForcing':
        """f(t) min(1, level / |f(t)|), still integrated cell by cell.

        Without a closed form the clamped term is bounded, so adaptive quadrature
        of it is accurate to the requested tolerance.
        """
        if not level > 0:
            raise ValidationError(f"clipping level must be positive, got {level}")

        def value(t):
            f = np.asarray(self.value(t), dtype=np.float64)
            norm = float(np.linalg.norm(f))
            return f if norm <= level else f * (level / norm)

        if self.clipped_integral is not None:
            def cell(t0, t1):
                return np.asarray(self.clipped_integral(t0, t1, level), dtype=np.float64)
        else:
            def cell(t0, t1):
                k = np.asarray(self.cell_integral(t0, t1)).size
                # quad never evaluates the endpoints; the floor keeps t > 0 regardless
                floor = np.finfo(np.float64).tiny
                return np.array([
                    integrate.quad(lambda s, j=j: value(max(s, floor))[j], t0, t1,
                                   epsabs=1e-13, epsrel=1e-11, limit=200)[0]
                    for j in range(k)
                ])

        return SingularForcing(name=f'{self.name}|q{level:g}', value=value, cell_integral=cell)


@dataclass(frozen=True)
class BoundProcess:
    """Nonnegative process f_t used on right-hand sides of a priori bounds."""
    func: Optional[Callable[[float, npt.NDArray], npt.NDArray]] = None
    forcing: Optional[SingularForcing] = None
    label: str = 'zero'

    @classmethod
    def zero(cls) -> 'BoundProcess':
        return cls()

    @classmethod
    def constant(cls, c: float) -> 'BoundProcess':
        c = float(c)
        if c < 0:
            raise ValidationError(f"bound process must be nonnegative, got {c}")
        return cls(func=lambda t, b: np.full(b.shape[0], c), label=f'constant({c})')

    def value(self, t: float, b: npt.NDArray) -> npt.NDArray[np.float64]:
        out = np.zeros(b.shape[0])
        if self.func is not None:
            out = out + np.asarray(self.func(t, b), dtype=np.float64)
        if self.forcing is not None and t > 0:
            out = out + float(np.linalg.norm(self.forcing.value(t)))
        return out

    def cell_integrals(self, ensemble: PathEnsemble) -> npt.NDArray[np.float64]:
        """Per path, per cell integral: left-point rule for func, exact for the forcing."""
        nodes = ensemble.grid.nodes
        widths = ensemble.grid.widths
        out = np.zeros((ensemble.M, ensemble.grid.N))
        for i in range(ensemble.grid.N):
            if self.func is not None:
                out[:, i] += np.asarray(self.func(nodes[i], ensemble.state(i)), dtype=np.float64) * widths[i]
            if self.forcing is not None:
                out[:, i] += self.forcing.magnitude_integral(nodes[i], nodes[i + 1])
        return out

    def tail_integrals(self, ensemble: PathEnsemble) -> npt.NDArray[np.float64]:
        """Integral over [t_i, T] per path, shape (M, N+1)."""
        cells = self.cell_integrals(ensemble)
        tails = np.zeros((ensemble.M, ensemble.grid.N + 1))
        tails[:, :-1] = np.cumsum(cells[:, ::-1], axis=1)[:, ::-1]
        return tails


@dataclass(frozen=True, eq=False)
class GeneratorSpec:
    name: str
    k: int
    d: int
    func: GeneratorMap
    lipschitz_z: Optional[float] = None
    modulus: Optional['ModulusFn'] = None
    order: Optional[float] = None
    singular_forcing: Optional[SingularForcing] = None
    claimed_conditions: FrozenSet[str] = frozenset()
    params: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.k < 1 or self.d < 1:
            raise ValidationError(f"generator dimensions must be positive, got k={self.k}, d={self.d}")
        if self.lipschitz_z is not None and self.lipschitz_z < 0:
            raise ValidationError("Lipschitz constant in z must be nonnegative")
        if self.order is not None and self.order < 1:
            raise ValidationError(f"order must be >= 1, got {self.order}")
        object.__setattr__(self, 'claimed_conditions', frozenset(self.claimed_conditions))

    def evaluate(self, t: float, b: npt.NDArray, y: npt.NDArray, z: npt.NDArray) -> npt.NDArray[np.float64]:
        """Batched g(t, b, y, z) without the singular forcing: b (n,d), y (n,k), z (n,k,d) -> (n,k)."""
        n = y.shape[0]
        if b.shape != (n, self.d) or y.shape != (n, self.k) or z.shape != (n, self.k, self.d):
            raise ValidationError(
                f"{self.name}: shapes b{b.shape} y{y.shape} z{z.shape} do not match k={self.k}, d={self.d}"
            )
        try:
            with np.errstate(over='ignore', invalid='ignore'):
                out = np.asarray(self.func(t, b, y, z), dtype=np.float64)
        except (ArithmeticError, ValueError, TypeError) as exc:
            raise GeneratorEvaluationError(f"{self.name} failed at t={t}: {exc}", {'t': t}) from exc
        if out.shape != (n, self.k):
            raise GeneratorEvaluationError(f"{self.name} returned shape {out.shape}, expected {(n, self.k)}")
        bad = ~np.all(np.isfinite(out), axis=1)
        if np.any(bad):
            j = int(np.argmax(bad))
            raise GeneratorEvaluationError(
                f"{self.name} produced a non-finite value at t={t}",
                {'t': t, 'b': b[j].tolist(), 'y': y[j].tolist(), 'z': z[j].tolist()},
            )
        return out

    def forcing_value(self, t: float) -> npt.NDArray[np.float64]:
        if self.singular_forcing is None or t <= 0:
            return np.zeros(self.k)
        return np.asarray(self.singular_forcing.value(t), dtype=np.float64).reshape(self.k)

    def full_evaluate(self, t: float, b: npt.NDArray, y: npt.NDArray, z: npt.NDArray) -> npt.NDArray[np.float64]:
        return self.evaluate(t, b, y, z) + self.forcing_value(t)

    def forcing_integral(self, t0: float, t1: float) -> npt.NDArray[np.float64]:
        if self.singular_forcing is None:
            return np.zeros(self.k)
        return np.asarray(self.singular_forcing.cell_integral(t0, t1), dtype=np.float64).reshape(self.k)

    def at_origin(self, t: float, b: npt.NDArray, forcing: bool = True) -> npt.NDArray[np.float64]:
        """g(t, b, 0, 0), with the forcing value unless forcing=False."""
        n = b.shape[0]
        y, z = np.zeros((n, self.k)), np.zeros((n, self.k, self.d))
        return self.full_evaluate(t, b, y, z) if forcing else self.evaluate(t, b, y, z)

    def describe(self) -> Dict[str, Any]:
        return {
            'name': self.name, 'k': self.k, 'd': self.d, 'params': dict(self.params),
            'lipschitz_z': self.lipschitz_z, 'order': self.order,
            'modulus': self.modulus.to_record() if self.modulus is not None else None,
            'claimed_conditions': sorted(self.claimed_conditions),
            'singular_forcing': self.singular_forcing.name if self.singular_forcing else None,
        }


@dataclass(frozen=True, eq=False)
class TerminalSpec:
    name: str
    k: int
    func: TerminalMap
    p: float = 2.0
    params: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.k < 1:
            raise ValidationError(f"terminal dimension must be positive, got {self.k}")
        if not self.p > 1:
            raise ValidationError(f"integrability order must exceed 1, got {self.p}")

    def evaluate(self, ensemble: PathEnsemble) -> npt.NDArray[np.float64]:
        out = np.asarray(self.func(ensemble.terminal, ensemble.values), dtype=np.float64)
        out = out.reshape(ensemble.M, self.k)
        if not np.all(np.isfinite(out)):
            raise GeneratorEvaluationError(f"terminal {self.name} produced non-finite values")
        return out

    def describe(self) -> Dict[str, Any]:
        return {'name': self.name, 'k': self.k, 'p': self.p, 'params': dict(self.params)}


@dataclass(frozen=True, eq=False)
class DiscreteSolution:
    grid: TimeGrid
    Y: npt.NDArray[np.float64]
    Z: npt.NDArray[np.float64]
    ensemble: PathEnsemble
    node_stderr: Optional[npt.NDArray[np.float64]] = None
    metadata: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        Y = _frozen(self.Y)
        Z = _frozen(self.Z)
        M, N, d = self.ensemble.M, self.grid.N, self.ensemble.d
        if Y.ndim != 3 or Y.shape[:2] != (M, N + 1):
            raise ValidationError(f"Y has shape {Y.shape}, expected ({M}, {N + 1}, k)")
        k = Y.shape[2]
        if Z.shape != (M, N, k, d):
            raise ValidationError(f"Z has shape {Z.shape}, expected {(M, N, k, d)}")
        if not self.grid.same_as(self.ensemble.grid):
            raise ValidationError("solution grid differs from its ensemble grid")
        object.__setattr__(self, 'Y', Y)
        object.__setattr__(self, 'Z', Z)
        if self.node_stderr is not None:
            object.__setattr__(self, 'node_stderr', _frozen(self.node_stderr))

    @property
    def k(self) -> int:
        return self.Y.shape[2]

    @property
    def d(self) -> int:
        return self.Z.shape[3]

    @property
    def M(self) -> int:
        return self.Y.shape[0]

    @property
    def y0(self) -> npt.NDArray[np.float64]:
        return self.Y[:, 0, :].mean(axis=0)

    @property
    def y0_stderr(self) -> npt.NDArray[np.float64]:
        if self.node_stderr is not None:
            return self.node_stderr[0]
        return np.zeros(self.k)


@dataclass(frozen=True)
class EmpiricalNorms:
    s_p: float
    m_p: float
    stderr_s: float
    stderr_m: float
    p: float

    def __post_init__(self):
        for name in ('s_p', 'm_p', 'stderr_s', 'stderr_m'):
            value = getattr(self, name)
            if not (np.isfinite(value) and value >= 0):
                raise ValidationError(f"{name} must be finite and nonnegative, got {value}")


def path_sup_power(Y: npt.NDArray, p: float) -> npt.NDArray[np.float64]:
    """max over nodes of |Y|^p, one value per path."""
    return np.max(np.linalg.norm(Y, axis=2) ** p, axis=1)


def quadratic_variation(Z: npt.NDArray, widths: npt.NDArray) -> npt.NDArray[np.float64]:
    """sum_i |Z_i|^2 * width_i with the Frobenius norm, one value per path."""
    sq = np.sum(Z ** 2, axis=(2, 3))
    return sq @ widths


def bootstrap_stderr(samples: npt.NDArray, statistic: Callable[[npt.NDArray], float],
                     resamples: int = BOOTSTRAP_RESAMPLES, key: int = BOOTSTRAP_KEY) -> float:
    """Path-level bootstrap standard error on a dedicated Philox stream."""
    n = samples.shape[0]
    if n < 2:
        return 0.0
    rng = np.random.Generator(np.random.Philox(key=key))
    stats = np.empty(resamples)
    for r in range(resamples):
        stats[r] = statistic(samples[rng.integers(0, n, n)])
    return float(np.std(stats, ddof=1))


def _root_mean(values: npt.NDArray, p: float) -> float:
    return float(np.mean(values) ** (1.0 / p))


def empirical_norms(sol: DiscreteSolution, p: float) -> EmpiricalNorms:
    if not p > 1:
        raise ValidationError(f"norm order must exceed 1, got {p}")
    if sol.M < 1:
        raise ValidationError("empty ensemble")
    sup_y = path_sup_power(sol.Y, p)
    qv_z = quadratic_variation(sol.Z, sol.grid.widths) ** (p / 2.0)
    return EmpiricalNorms(
        s_p=_root_mean(sup_y, p),
        m_p=_root_mean(qv_z, p),
        stderr_s=bootstrap_stderr(sup_y, lambda s: _root_mean(s, p)),
        stderr_m=bootstrap_stderr(qv_z, lambda s: _root_mean(s, p)),
        p=float(p),
    )
