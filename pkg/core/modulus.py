"""Modulus calculus: the concave functions rho of the weak-monotonicity family of conditions.

Closed-form families (linear, log_osgood, power) and tabulated tables share one
type. Transformations between condition variants return tabulated concave
majorants; the Osgood classifier and the Bihari evaluator use adaptive
quadrature in the logarithmic variable.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Tuple, Union

import numpy as np
import numpy.typing as npt
from scipy import integrate, optimize

from config import (BIHARI_CAP, ENVELOPE_NODES, HULL_RTOL, MODULUS_NODES, MODULUS_U_MAX,
                    MODULUS_U_MIN, OSGOOD_LADDER, QUAD_EPSREL)
from core.errors import InconclusiveDivergenceError, ModulusError, ValidationError

logger = logging.getLogger(__name__)

FAMILIES = ('linear', 'log_osgood', 'power', 'tabulated')
VARIANTS = ('osgood', 'constantin_p')

ArrayOrFloat = Union[float, npt.NDArray[np.float64]]


def standard_nodes(u_max: float = MODULUS_U_MAX, n: int = MODULUS_NODES) -> npt.NDArray[np.float64]:
    """0 followed by n log-spaced nodes on [1e-12, u_max]."""
    if not u_max > MODULUS_U_MIN:
        raise ValidationError(f"u_max must exceed {MODULUS_U_MIN}, got {u_max}")
    return np.concatenate(([0.0], np.geomspace(MODULUS_U_MIN, u_max, n)))


def discrete_slopes(nodes: npt.NDArray, values: npt.NDArray) -> npt.NDArray[np.float64]:
    return np.diff(values) / np.diff(nodes)


def is_concave_table(nodes: npt.NDArray, values: npt.NDArray, rtol: float = 1e-9) -> bool:
    slopes = discrete_slopes(nodes, values)
    if slopes.size < 2:
        return True
    return bool(np.all(slopes[1:] <= slopes[:-1] + rtol * np.abs(slopes[:-1]) + 1e-300))


def star_shape_violation(nodes: npt.NDArray, values: npt.NDArray,
                         rtol: float = HULL_RTOL) -> Optional[Tuple[float, float]]:
    """First pair (x_i, x_j) where f(x)/x increases, or None."""
    positive = nodes > 0
    x = nodes[positive]
    ratio = values[positive] / x
    bad = np.nonzero(ratio[1:] > ratio[:-1] * (1.0 + rtol))[0]
    if bad.size:
        i = int(bad[0])
        return float(x[i]), float(x[i + 1])
    return None


@dataclass(frozen=True, eq=False)
class ModulusFn:
    family: str
    params: Dict[str, float] = field(default_factory=dict)
    scale: float = 1.0
    nodes: Optional[npt.NDArray[np.float64]] = None
    values: Optional[npt.NDArray[np.float64]] = None
    concave_verified: bool = False

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValidationError(f"unknown modulus family '{self.family}'")
        if not (self.scale > 0 and math.isfinite(self.scale)):
            raise ValidationError(f"modulus scale must be positive, got {self.scale}")
        if self.family == 'tabulated':
            self._validate_table()
        else:
            self._validate_params()

    def _validate_params(self):
        p = self.params
        if self.family == 'linear':
            if not p.get('mu', 0) > 0:
                raise ValidationError(f"linear modulus needs mu > 0, got {p.get('mu')}")
        elif self.family == 'power':
            if not p.get('alpha', 0) > 0:
                raise ValidationError(f"power modulus needs alpha > 0, got {p.get('alpha')}")
        elif self.family == 'log_osgood':
            r, delta = p.get('r', 0), p.get('delta', 0)
            if not r > 0:
                raise ValidationError(f"log_osgood exponent must be positive, got {r}")
            if not 0 < delta < 1:
                raise ValidationError(f"log_osgood splice point must lie in (0, 1), got {delta}")
            if delta > math.exp(-r) * (1 + 1e-15):
                raise ModulusError(
                    f"log_osgood(r={r}) is not nondecreasing and concave up to delta={delta}; "
                    f"need delta <= e^-r = {math.exp(-r):.6g}",
                    witness=(delta, math.exp(-r)),
                )

    def _validate_table(self):
        if self.nodes is None or self.values is None:
            raise ValidationError("tabulated modulus needs nodes and values")
        nodes = np.array(self.nodes, dtype=np.float64)
        values = np.array(self.values, dtype=np.float64)
        if nodes.shape != values.shape or nodes.ndim != 1 or nodes.size < 2:
            raise ValidationError("tabulated nodes and values must be 1-d arrays of equal length")
        if nodes[0] != 0.0 or values[0] != 0.0:
            raise ModulusError("tabulated modulus must start at rho(0) = 0", witness=(nodes[0], values[0]))
        if not np.all(np.diff(nodes) > 0):
            raise ValidationError("tabulated nodes must be strictly increasing")
        if not np.all(np.isfinite(values)):
            raise ModulusError("tabulated values must be finite")
        drops = np.nonzero(np.diff(values) < 0)[0]
        if drops.size:
            i = int(drops[0])
            raise ModulusError("tabulated modulus must be nondecreasing",
                               witness=(float(nodes[i]), float(nodes[i + 1])))
        nodes.setflags(write=False)
        values.setflags(write=False)
        object.__setattr__(self, 'nodes', nodes)
        object.__setattr__(self, 'values', values)

    @classmethod
    def linear(cls, mu: float) -> 'ModulusFn':
        return cls('linear', {'mu': float(mu)}, concave_verified=True)

    @classmethod
    def power(cls, alpha: float) -> 'ModulusFn':
        return cls('power', {'alpha': float(alpha)}, concave_verified=alpha <= 1)

    @classmethod
    def log_osgood(cls, r: float, delta: float) -> 'ModulusFn':
        return cls('log_osgood', {'r': float(r), 'delta': float(delta)}, concave_verified=True)

    @classmethod
    def tabulated(cls, nodes: npt.ArrayLike, values: npt.ArrayLike,
                  concave_verified: Optional[bool] = None) -> 'ModulusFn':
        nodes = np.asarray(nodes, dtype=np.float64)
        values = np.asarray(values, dtype=np.float64)
        if concave_verified is None:
            concave_verified = is_concave_table(nodes, values)
        return cls('tabulated', {}, nodes=nodes, values=values, concave_verified=bool(concave_verified))

    @classmethod
    def from_function(cls, f: Callable[[npt.NDArray], npt.NDArray], u_max: float = MODULUS_U_MAX,
                      n: int = MODULUS_NODES) -> 'ModulusFn':
        nodes = standard_nodes(u_max, n)
        values = np.asarray(f(nodes), dtype=np.float64)
        values[0] = 0.0
        return cls.tabulated(nodes, values)

    def scaled(self, c: float) -> 'ModulusFn':
        return ModulusFn(self.family, dict(self.params), self.scale * float(c),
                         self.nodes, self.values, self.concave_verified)

    @property
    def is_analytic(self) -> bool:
        return self.family != 'tabulated'

    def _base(self, u: npt.NDArray) -> npt.NDArray[np.float64]:
        if self.family == 'linear':
            return self.params['mu'] * u
        if self.family == 'power':
            return u ** self.params['alpha']
        if self.family == 'log_osgood':
            r, delta = self.params['r'], self.params['delta']
            L = -math.log(delta)
            head = delta * L ** r
            slope = L ** (r - 1) * (L - r)
            inner = np.clip(u, np.finfo(float).tiny, delta)
            branch = inner * (-np.log(inner)) ** r
            return np.where(u == 0, 0.0, np.where(u <= delta, branch, head + slope * (u - delta)))
        return np.interp(u, self.nodes, self.values)

    def evaluate(self, u: ArrayOrFloat) -> ArrayOrFloat:
        arr = np.asarray(u, dtype=np.float64)
        if np.any(arr < 0) or np.any(np.isnan(arr)):
            raise ValidationError("modulus argument must be nonnegative")
        out = self.scale * self._base(arr)
        if out.ndim == 0:
            return float(out)
        return out

    __call__ = evaluate

    def grid(self, u_max: Optional[float] = None) -> npt.NDArray[np.float64]:
        if self.family == 'tabulated' and u_max is None:
            return np.asarray(self.nodes)
        return standard_nodes(u_max or MODULUS_U_MAX)

    def table(self, u_max: Optional[float] = None) -> Tuple[npt.NDArray, npt.NDArray]:
        nodes = self.grid(u_max)
        return nodes, np.asarray(self.evaluate(nodes))

    def to_record(self) -> Dict[str, Any]:
        record: Dict[str, Any] = {'family': self.family, 'scale': self.scale,
                                  'concave_verified': self.concave_verified}
        if self.family == 'tabulated':
            record['nodes'] = self.nodes.tolist()
            record['values'] = self.values.tolist()
        else:
            record.update(self.params)
        return record

    @classmethod
    def from_record(cls, record: Dict[str, Any]) -> 'ModulusFn':
        record = dict(record)
        family = record.pop('family', None)
        scale = float(record.pop('scale', 1.0))
        concave = record.pop('concave_verified', None)
        try:
            if family == 'linear':
                rho = cls.linear(record.pop('mu'))
            elif family == 'power':
                rho = cls.power(record.pop('alpha'))
            elif family == 'log_osgood':
                rho = cls.log_osgood(record.pop('r'), record.pop('delta'))
            elif family == 'tabulated':
                rho = cls.tabulated(record.pop('nodes'), record.pop('values'), concave)
            else:
                raise ValidationError(f"unknown modulus family '{family}'")
        except KeyError as exc:
            raise ValidationError(f"modulus family '{family}' is missing parameter {exc}") from exc
        if record:
            raise ValidationError(f"unexpected modulus parameters: {sorted(record)}")
        return rho.scaled(scale) if scale != 1.0 else rho


def evaluate(rho: ModulusFn, u: ArrayOrFloat) -> ArrayOrFloat:
    return rho.evaluate(u)


def _require_concave(rho: ModulusFn, what: str) -> None:
    if not rho.concave_verified:
        raise ModulusError(f"{what} needs a modulus verified concave, got {rho.family}")


def linear_growth_bound(rho: ModulusFn, u_max: Optional[float] = None) -> float:
    """Smallest A on the grid with rho(x) <= A(x+1), including the tail beyond the grid."""
    _require_concave(rho, 'linear_growth_bound')
    x, v = rho.table(u_max)
    tail = max(discrete_slopes(x[-2:], v[-2:])[0], 0.0)
    A = max(float(np.max(v / (x + 1.0))), tail)
    if not A > 0:
        raise ModulusError("modulus vanishes on its grid; no positive growth bound")
    if np.any(v > A * (x + 1.0) * (1 + 1e-12)):
        raise ModulusError("linear growth bound failed verification")
    return A


def split_growth_bound(rho: ModulusFn, m: float, u_max: Optional[float] = None) -> Tuple[float, float]:
    if m < 1:
        raise ValidationError(f"split parameter m must be >= 1, got {m}")
    A = linear_growth_bound(rho, u_max)
    slope = m + 2.0 * A
    offset = float(rho(2.0 * A / slope))
    x, v = rho.table(u_max)
    excess = v - (slope * x + offset)
    if np.any(excess > 1e-12 * np.maximum(1.0, v)):
        i = int(np.argmax(excess))
        raise ModulusError("split growth bound failed verification", witness=(float(x[i]), float(v[i])))
    return slope, offset


def _cross(x: npt.NDArray, y: npt.NDArray, o: int, a: int, b: int) -> float:
    return (x[a] - x[o]) * (y[b] - y[o]) - (y[a] - y[o]) * (x[b] - x[o])


def upper_hull(x: npt.NDArray, y: npt.NDArray) -> List[int]:
    """Indices of the upper concave hull of points sorted by x (monotone chain)."""
    hull: List[int] = []
    for i in range(len(x)):
        while len(hull) >= 2 and _cross(x, y, hull[-2], hull[-1], i) >= 0:
            hull.pop()
        hull.append(i)
    return hull


def _hull_values(x: npt.NDArray, y: npt.NDArray) -> npt.NDArray[np.float64]:
    idx = upper_hull(x, y)
    return np.maximum(np.interp(x, x[idx], y[idx]), y)


def _as_table(f: Union[ModulusFn, Tuple[npt.NDArray, npt.NDArray]],
              u_max: Optional[float] = None) -> Tuple[npt.NDArray, npt.NDArray]:
    if isinstance(f, ModulusFn):
        return f.table(u_max)
    nodes, values = (np.asarray(a, dtype=np.float64) for a in f)
    if nodes.shape != values.shape or nodes[0] != 0.0 or values[0] != 0.0:
        raise ModulusError("table must start at (0, 0) with matching shapes")
    if np.any(np.diff(nodes) <= 0):
        raise ValidationError("table nodes must be strictly increasing")
    return nodes, values


def concave_majorant(f: Union[ModulusFn, Tuple[npt.NDArray, npt.NDArray]],
                     u_max: Optional[float] = None) -> ModulusFn:
    """Upper concave hull of a star-shaped table; f <= result <= 2f at every node."""
    nodes, values = _as_table(f, u_max)
    drops = np.nonzero(np.diff(values) < 0)[0]
    if drops.size:
        i = int(drops[0])
        raise ModulusError("input is not nondecreasing", witness=(float(nodes[i]), float(nodes[i + 1])))
    witness = star_shape_violation(nodes, values)
    if witness is not None:
        raise ModulusError(f"f(x)/x increases between {witness[0]:.6g} and {witness[1]:.6g}", witness=witness)
    hull = _hull_values(nodes, values)
    return ModulusFn.tabulated(nodes, hull, concave_verified=is_concave_table(nodes, hull))


def _transform(rho: ModulusFn, bar: Callable[[npt.NDArray], npt.NDArray], u_max: Optional[float]) -> ModulusFn:
    _require_concave(rho, 'modulus transformation')
    nodes = standard_nodes(u_max or (float(rho.nodes[-1]) if rho.family == 'tabulated' else MODULUS_U_MAX))
    values = np.asarray(bar(nodes), dtype=np.float64)
    values[0] = 0.0
    return concave_majorant((nodes, values))


def lift_order(rho: ModulusFn, p: float, q: float, u_max: Optional[float] = None) -> ModulusFn:
    """kappa ~ x^(1-p/q) rho(x^(p/q)): a p-order modulus restated at order q."""
    if p < 1:
        raise ValidationError(f"order p must be >= 1, got {p}")
    if q <= p:
        raise ValidationError(f"target order q={q} must exceed p={p}")
    e = p / q
    return _transform(rho, lambda x: x ** (1.0 - e) * rho(x ** e), u_max)


def mao_to_constantin(rho: ModulusFn, p: float, u_max: Optional[float] = None) -> ModulusFn:
    if p < 1:
        raise ValidationError(f"order p must be >= 1, got {p}")
    return _transform(rho, lambda x: rho(x ** p) ** (1.0 / p), u_max)


def constantin_to_mao(rho: ModulusFn, p: float, u_max: Optional[float] = None) -> ModulusFn:
    if p < 1:
        raise ValidationError(f"order p must be >= 1, got {p}")
    return _transform(rho, lambda x: rho(x ** (1.0 / p)) ** p, u_max)


def subadditive_minorant(values: npt.NDArray) -> npt.NDArray[np.float64]:
    """Largest sub-additive F <= f on a uniform grid: F(j) = min(f(j), min_i F(i) + F(j-i))."""
    F = np.array(values, dtype=np.float64)
    for j in range(2, F.size):
        splits = F[1:j] + F[j - 1:0:-1]
        F[j] = min(F[j], float(np.min(splits)))
    return F


def subadditive_envelope(f: Union[ModulusFn, Tuple[npt.NDArray, npt.NDArray]],
                         u_max: Optional[float] = None, n: int = ENVELOPE_NODES) -> ModulusFn:
    """kappa(u) = concave hull of the sub-additive minorant of f, plus u."""
    nodes, values = _as_table(f, u_max)
    drops = np.nonzero(np.diff(values) < 0)[0]
    if drops.size:
        i = int(drops[0])
        raise ModulusError("input is not nondecreasing", witness=(float(nodes[i]), float(nodes[i + 1])))
    top = float(nodes[-1])
    uniform = np.linspace(0.0, top, n)
    F = subadditive_minorant(np.interp(uniform, nodes, values))
    hull = _hull_values(uniform, F)
    out_nodes = np.union1d(standard_nodes(top), uniform)
    kappa = np.interp(out_nodes, uniform, hull) + out_nodes
    kappa[0] = 0.0
    return ModulusFn.tabulated(out_nodes, kappa)


def comparison_modulus(rho: ModulusFn, lambda_bar: float, p: float, u_max: Optional[float] = None) -> ModulusFn:
    """rho(u) + lambda_bar^2/[(p-1) ^ 1] u, the modulus driving the comparison argument."""
    if not p > 1:
        raise ValidationError(f"comparison needs p > 1, got {p}")
    d = lambda_bar ** 2 / min(p - 1.0, 1.0)
    nodes, values = rho.table(u_max)
    return ModulusFn.tabulated(nodes, values + d * nodes, concave_verified=rho.concave_verified)


def constantin_order_ratio(rho: ModulusFn, p: float, q: float) -> float:
    """inf over (0, 1] of (rho(u)/u)^(q-p); positive means divergence at order q carries to p."""
    if not 1 <= p < q:
        raise ValidationError(f"need 1 <= p < q, got p={p}, q={q}")
    x = standard_nodes(1.0)[1:]
    return float(np.min((np.asarray(rho(x)) / x) ** (q - p)))


@dataclass(frozen=True)
class DivergenceVerdict:
    verdict: str
    partial_integrals: Tuple[Tuple[float, float], ...]
    variant: str = 'osgood'
    p: float = 1.0
    analytic: bool = False

    def __post_init__(self):
        if not self.partial_integrals:
            raise ValidationError("divergence verdict needs at least one partial integral")
        eps = [e for e, _ in self.partial_integrals]
        if any(b >= a for a, b in zip(eps, eps[1:])):
            raise ValidationError("ladder must be strictly decreasing")

    @property
    def diverges(self) -> bool:
        return self.verdict == 'diverges'


def _log_quad(func: Callable[[float], float], a: float, b: float) -> float:
    """integral of func over [a, b] (0 < a < b) computed in the variable s = ln u."""
    value, _ = integrate.quad(lambda s: func(math.exp(s)) * math.exp(s), math.log(a), math.log(b),
                              epsrel=QUAD_EPSREL, epsabs=0.0, limit=200)
    return value


def _analytic_verdict(rho: ModulusFn, p: float, variant: str) -> Optional[str]:
    if rho.family == 'linear':
        return 'diverges'
    if rho.family == 'power':
        return 'diverges' if rho.params['alpha'] >= 1 else 'converges'
    if rho.family == 'log_osgood':
        exponent = rho.params['r'] * (p if variant == 'constantin_p' else 1.0)
        return 'diverges' if exponent <= 1 else 'converges'
    return None


def osgood_classifier(rho: ModulusFn, p: float = 1.0, variant: str = 'osgood',
                      ladder: Tuple[float, ...] = OSGOOD_LADDER) -> DivergenceVerdict:
    if variant not in VARIANTS:
        raise ValidationError(f"unknown integral variant '{variant}'")
    if p < 1:
        raise ValidationError(f"order p must be >= 1, got {p}")
    rungs = np.asarray(ladder, dtype=np.float64)
    if np.any(np.asarray(rho(rungs)) <= 0):
        raise ModulusError("modulus is not positive on the classification ladder")

    if variant == 'osgood':
        integrand = lambda u: 1.0 / rho(u)
    else:
        integrand = lambda u: u ** (p - 1.0) / rho(u) ** p

    partial: List[Tuple[float, float]] = []
    increments: List[float] = []
    upper, total = 1.0, 0.0
    for eps in rungs:
        piece = _log_quad(integrand, float(eps), upper)
        total += piece
        increments.append(piece)
        partial.append((float(eps), total))
        upper = float(eps)

    analytic = _analytic_verdict(rho, p, variant)
    if analytic is not None:
        return DivergenceVerdict(analytic, tuple(partial), variant, p, analytic=True)

    inc = np.asarray(increments[-4:])
    ratios = inc[1:] / np.where(inc[:-1] > 0, inc[:-1], np.inf)
    if np.all(ratios >= 0.5):
        verdict = 'diverges'
    else:
        r = float(np.max(ratios))
        tail = inc[-1] * r / (1.0 - r) if r < 1 else math.inf
        verdict = 'converges' if r <= 0.2 and tail < 1e-3 * total else 'inconclusive'
    logger.debug(f"classifier {variant} p={p}: ratios={ratios.tolist()} -> {verdict}")
    return DivergenceVerdict(verdict, tuple(partial), variant, p, analytic=False)


class BihariEvaluator:
    """G(u) = int_{u0}^u dv / rho(v) and its monotone inverse."""

    def __init__(self, rho: ModulusFn, reference: float = 1.0):
        if not reference > 0:
            raise ValidationError("reference point must be positive")
        self.rho = rho
        self.reference = reference
        self._origin: Optional[float] = None

    def G(self, u: float) -> float:
        if u == 0:
            if self._origin is None:
                value, _ = integrate.quad(lambda v: 1.0 / self.rho(v), 0.0, self.reference,
                                          epsrel=QUAD_EPSREL, limit=200)
                self._origin = -value
            return self._origin
        if u == self.reference:
            return 0.0
        lo, hi = sorted((u, self.reference))
        value = _log_quad(lambda v: 1.0 / self.rho(v), lo, hi)
        return value if u > self.reference else -value

    def invert(self, target: float, lower: float) -> float:
        hi = max(2.0 * lower, self.reference)
        while self.G(hi) < target:
            if hi > BIHARI_CAP:
                return math.inf
            hi *= 2.0
        if self.G(lower) >= target:
            return lower
        return optimize.brentq(lambda u: self.G(u) - target, lower, hi, xtol=1e-300, rtol=4 * np.finfo(float).eps,
                               maxiter=500)


def bihari_bound(a: float, rho: ModulusFn, horizon: float, multiplier: float = 1.0,
                 reference: float = 1.0) -> float:
    """G^{-1}(G(a) + multiplier * horizon); 0 when a = 0 and the Osgood integral diverges."""
    if a < 0 or horizon < 0:
        raise ValidationError(f"a and horizon must be nonnegative, got a={a}, horizon={horizon}")
    if not multiplier > 0:
        raise ValidationError(f"multiplier must be positive, got {multiplier}")
    _require_concave(rho, 'bihari_bound')
    if horizon == 0:
        return float(a)
    if a == 0:
        verdict = osgood_classifier(rho, 1.0, 'osgood')
        if verdict.verdict == 'diverges':
            return 0.0
        if verdict.verdict == 'inconclusive':
            raise InconclusiveDivergenceError(
                "Osgood integral undecided; the bound at a = 0 is not determined"
            )
    elif not rho(a) > 0:
        raise ModulusError(f"modulus must be positive at a={a}")
    evaluator = BihariEvaluator(rho, reference)
    target = evaluator.G(float(a)) + multiplier * horizon
    return float(evaluator.invert(target, float(a)))
