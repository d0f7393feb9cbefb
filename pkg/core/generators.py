import inspect
import logging
import math
from dataclasses import dataclass
from typing import Any, Callable, Dict, Optional, Sequence, Tuple, Union

import numpy as np
import numpy.typing as npt

from core.errors import ConfigError, ValidationError
from core.model import GeneratorSpec, SingularForcing, TerminalSpec
from core.modulus import ModulusFn

logger = logging.getLogger(__name__)

SIGN_CONVENTIONS = ('positive_modulus', 'paper_negative')

ArrayLike = Union[float, Sequence[float], npt.NDArray]


@dataclass
class HFunctionParams:
    pbar: float = 2.0
    delta: Optional[float] = None
    sign_convention: str = 'positive_modulus'

    def __post_init__(self):
        if self.pbar < 1:
            raise ValidationError(f"pbar must be >= 1, got {self.pbar}")
        if self.delta is None:
            self.delta = math.exp(-1.0 - 1.0 / self.pbar) / 2.0
        bound = math.exp(-1.0 / self.pbar)
        if not 0 < self.delta <= bound * (1 + 1e-15):
            raise ValidationError(f"delta must lie in (0, e^(-1/pbar)] = (0, {bound:.6g}], got {self.delta}")
        if self.sign_convention not in SIGN_CONVENTIONS:
            raise ValidationError(f"unknown sign convention '{self.sign_convention}'")
        self._verify_branch()

    def _verify_branch(self) -> None:
        x = np.linspace(self.delta / 256.0, self.delta, 256)
        v = x * (-np.log(x)) ** (1.0 / self.pbar)
        if np.any(np.diff(v) < -1e-15):
            raise ValidationError(f"x|ln x|^(1/pbar) decreases below delta={self.delta}")
        if np.any(np.diff(v, 2) > 1e-15 * np.max(v)):
            raise ValidationError(f"x|ln x|^(1/pbar) is not concave below delta={self.delta}")


def h_modulus(params: HFunctionParams) -> ModulusFn:
    """The positive branch x|ln x|^(1/pbar) with its tangent extension above delta."""
    return ModulusFn.log_osgood(1.0 / params.pbar, params.delta)


def h_function(x: ArrayLike, params: HFunctionParams) -> Union[float, npt.NDArray]:
    value = h_modulus(params)(x)
    return value if params.sign_convention == 'positive_modulus' else -value


def _clipped_cube_root(t0: float, t1: float, level: float) -> npt.NDArray[np.float64]:
    # min(t^(-1/3), level) is flat below the knee t = level^(-3)
    knee = level ** -3.0
    split = min(max(knee, t0), t1)
    return np.array([level * (split - t0) + 1.5 * (t1 ** (2.0 / 3.0) - split ** (2.0 / 3.0))])


def _cube_root_forcing() -> SingularForcing:
    return SingularForcing(
        name='t^(-1/3) 1_{t>0}',
        value=lambda t: np.array([t ** (-1.0 / 3.0)]),
        cell_integral=lambda t0, t1: np.array([1.5 * (t1 ** (2.0 / 3.0) - t0 ** (2.0 / 3.0))]),
        clipped_integral=_clipped_cube_root,
    )


def _flat_norm(z: npt.NDArray) -> npt.NDArray[np.float64]:
    return np.linalg.norm(z.reshape(z.shape[0], -1), axis=1, keepdims=True)


def make_example1(params: Optional[HFunctionParams] = None, d: int = 1) -> GeneratorSpec:
    """h(|y|) - exp(|b| y) + min(exp(-y), 1)|z| + t^(-1/3) 1_{t>0}, k = 1."""
    params = params or HFunctionParams()

    def g(t, b, y, z):
        abs_b = np.linalg.norm(b, axis=1, keepdims=True)
        return (h_function(np.abs(y), params) - np.exp(abs_b * y)
                + np.minimum(np.exp(-y), 1.0) * _flat_norm(z))

    return GeneratorSpec(
        name='example1', k=1, d=d, func=g,
        lipschitz_z=1.0, modulus=h_modulus(params), order=params.pbar,
        singular_forcing=_cube_root_forcing(),
        claimed_conditions=frozenset({'H1b', 'H2', 'H3', 'H4'}),
        params={'pbar': params.pbar, 'delta': params.delta, 'sign_convention': params.sign_convention, 'd': d},
    )


def make_example2(k: int = 2, params: Optional[HFunctionParams] = None, d: int = 1) -> GeneratorSpec:
    """g_i = exp(-y_i) + h(|y|) + sin|z| + |b|.

    Every component carries the same h(|y|) and sin|z| terms, so the one-sided
    bound and the Lipschitz constant in z pick up a factor sqrt(k).
    """
    if k < 1:
        raise ValidationError(f"k must be >= 1, got {k}")
    params = params or HFunctionParams()
    root_k = math.sqrt(k)

    def g(t, b, y, z):
        shared = (h_function(np.linalg.norm(y, axis=1, keepdims=True), params)
                  + np.sin(_flat_norm(z)) + np.linalg.norm(b, axis=1, keepdims=True))
        return np.exp(-y) + shared

    rho = h_modulus(params)
    return GeneratorSpec(
        name='example2', k=k, d=d, func=g,
        lipschitz_z=root_k, modulus=rho if k == 1 else rho.scaled(root_k), order=params.pbar,
        claimed_conditions=frozenset({'H1b', 'H2', 'H3', 'H4'}),
        params={'k': k, 'pbar': params.pbar, 'delta': params.delta,
                'sign_convention': params.sign_convention, 'd': d},
    )


def make_affine(k: int, d: int, a: ArrayLike, bmat: Optional[ArrayLike] = None,
                c: Optional[ArrayLike] = None) -> GeneratorSpec:
    """g = a y + bmat(z) + c with bmat a (k, k, d) tensor acting on z."""
    A = float(a) * np.eye(k) if np.ndim(a) == 0 else np.asarray(a, dtype=np.float64)
    if bmat is None:
        B = np.zeros((k, k, d))
    elif np.ndim(bmat) == 0:
        B = float(bmat) * np.eye(k)[:, :, None] * np.ones(d)
    else:
        B = np.asarray(bmat, dtype=np.float64)
    C = np.zeros(k) if c is None else np.broadcast_to(np.asarray(c, dtype=np.float64), (k,)).copy()
    if A.shape != (k, k) or B.shape != (k, k, d) or C.shape != (k,):
        raise ValidationError(f"affine shapes a{A.shape} b{B.shape} c{C.shape} do not fit k={k}, d={d}")

    def g(t, b, y, z):
        return y @ A.T + np.einsum('ijl,njl->ni', B, z) + C

    a_norm = float(np.linalg.norm(A, 2))
    lam = float(np.linalg.norm(B.reshape(k, k * d), 2))
    modulus = ModulusFn.linear(a_norm) if a_norm > 0 else None
    claims = {'H2', 'H3', 'H4'} | ({'H1', 'H1star'} if modulus is not None else set())
    return GeneratorSpec(
        name='affine', k=k, d=d, func=g, lipschitz_z=lam, modulus=modulus, order=2.0,
        claimed_conditions=frozenset(claims),
        params={'k': k, 'd': d, 'a': A.tolist(), 'b': B.tolist(), 'c': C.tolist()},
    )


def make_fixture(kind: str, coef: float = 1.0) -> GeneratorSpec:
    """Scalar test generators (k = d = 1) that break or stress individual conditions."""
    def inv_t(t):
        return 1.0 / t if t > 0 else 0.0

    table: Dict[str, Tuple[Callable, Optional[float]]] = {
        'square': (lambda t, b, y, z: y ** 2, 0.0),
        'sign': (lambda t, b, y, z: np.sign(y), 0.0),
        'sqrt_sign': (lambda t, b, y, z: np.sqrt(np.abs(y)) * np.sign(y), 0.0),
        'z_square': (lambda t, b, y, z: -y + z[:, :, 0] ** 2, None),
        'lipschitz_sine': (lambda t, b, y, z: -y + np.sin(y), 0.0),
        'exp_perturbed': (lambda t, b, y, z: -y + coef * np.exp(y), 0.0),
        'inverse_time': (lambda t, b, y, z: inv_t(t) * y, 0.0),
        'linear_drift': (lambda t, b, y, z: coef * y, 0.0),
        'sqrt_monotone': (lambda t, b, y, z: -y + coef * np.sqrt(np.abs(y)) * np.sign(y), 0.0),
    }
    if kind not in table:
        raise ValidationError(f"unknown fixture '{kind}'")
    func, lam = table[kind]
    return GeneratorSpec(name=f'fixture:{kind}', k=1, d=1, func=func, lipschitz_z=lam,
                         params={'kind': kind, 'coef': coef})


def truncate_vector(x: npt.ArrayLike, n: float) -> npt.NDArray[np.float64]:
    """Radial clamp x n / max(|x|, n) along the last axis; exact identity where |x| <= n."""
    if not n > 0:
        raise ValidationError(f"truncation level must be positive, got {n}")
    x = np.asarray(x, dtype=np.float64)
    norms = np.linalg.norm(x, axis=-1, keepdims=True)
    return np.where(norms <= n, x, x * (n / np.maximum(norms, n)))


def truncate_problem(xi: TerminalSpec, gen: GeneratorSpec, n: float) -> Tuple[TerminalSpec, GeneratorSpec]:
    """(q_n(xi), g - g(t,0,0) + q_n(g(t,0,0))).

    With a singular forcing f the regular part r of g(t,0,0) and f are clamped
    separately at n/2, so |g_n(t,0,0)| <= n still holds and the forcing keeps
    exact cell integrals. Where a clamp is inactive the correction is exactly zero.
    """
    if xi.k != gen.k:
        raise ValidationError(f"terminal dimension {xi.k} differs from generator dimension {gen.k}")
    forcing = gen.singular_forcing
    level = n if forcing is None else n / 2.0

    def xi_n(terminal, paths):
        return truncate_vector(np.asarray(xi.func(terminal, paths), dtype=np.float64).reshape(-1, xi.k), n)

    def g_n(t, b, y, z):
        origin = gen.at_origin(t, b, forcing=False)
        return gen.evaluate(t, b, y, z) + (truncate_vector(origin, level) - origin)

    trunc_xi = TerminalSpec(name=f'{xi.name}|q{n:g}', k=xi.k, func=xi_n, p=xi.p,
                            params={**xi.params, 'truncation': n})
    trunc_g = GeneratorSpec(
        name=f'{gen.name}|q{n:g}', k=gen.k, d=gen.d, func=g_n,
        lipschitz_z=gen.lipschitz_z, modulus=gen.modulus, order=gen.order,
        singular_forcing=forcing.clipped(level) if forcing is not None else None,
        claimed_conditions=gen.claimed_conditions, params={**gen.params, 'truncation': n},
    )
    return trunc_xi, trunc_g


def perturb_generator(gen: GeneratorSpec, gamma: GeneratorSpec, eps: float) -> GeneratorSpec:
    """g + eps * gamma; the modulus of g is kept, Lipschitz constants add."""
    if (gamma.k, gamma.d) != (gen.k, gen.d):
        raise ValidationError("perturbation dimensions do not match the generator")
    if eps == 0:
        return gen

    def g(t, b, y, z):
        return gen.evaluate(t, b, y, z) + eps * gamma.full_evaluate(t, b, y, z)

    lam = None
    if gen.lipschitz_z is not None and gamma.lipschitz_z is not None:
        lam = gen.lipschitz_z + abs(eps) * gamma.lipschitz_z
    return GeneratorSpec(
        name=f'{gen.name}+{eps:g}*{gamma.name}', k=gen.k, d=gen.d, func=g,
        lipschitz_z=lam, modulus=gen.modulus, order=gen.order,
        singular_forcing=gen.singular_forcing,
        claimed_conditions=gen.claimed_conditions & gamma.claimed_conditions,
        params={'base': gen.describe(), 'perturbation': gamma.describe(), 'eps': eps},
    )


def perturb_terminal(xi: TerminalSpec, eta: TerminalSpec, eps: float) -> TerminalSpec:
    if eta.k != xi.k:
        raise ValidationError("perturbation dimension does not match the terminal condition")
    if eps == 0:
        return xi

    def f(terminal, paths):
        base = np.asarray(xi.func(terminal, paths), dtype=np.float64).reshape(-1, xi.k)
        return base + eps * np.asarray(eta.func(terminal, paths), dtype=np.float64).reshape(-1, xi.k)

    return TerminalSpec(name=f'{xi.name}+{eps:g}*{eta.name}', k=xi.k, func=f, p=xi.p,
                        params={'base': xi.describe(), 'perturbation': eta.describe(), 'eps': eps})


def brownian_terminal(k: int = 1, component: int = 0, scale: float = 1.0, shift: float = 0.0,
                      p: float = 2.0) -> TerminalSpec:
    def f(terminal, paths):
        return np.repeat(shift + scale * terminal[:, component:component + 1], k, axis=1)
    return TerminalSpec('brownian_terminal', k, f, p,
                        {'k': k, 'component': component, 'scale': scale, 'shift': shift})


def constant_terminal(value: ArrayLike = 1.0, k: int = 1, p: float = 2.0) -> TerminalSpec:
    vec = np.broadcast_to(np.asarray(value, dtype=np.float64), (k,)).copy()

    def f(terminal, paths):
        return np.tile(vec, (terminal.shape[0], 1))
    return TerminalSpec('constant', k, f, p, {'value': vec.tolist(), 'k': k})


def brownian_sum_terminal(k: int = 1, shift: float = 0.0, p: float = 2.0) -> TerminalSpec:
    def f(terminal, paths):
        return np.repeat(shift + terminal.sum(axis=1, keepdims=True), k, axis=1)
    return TerminalSpec('brownian_sum', k, f, p, {'k': k, 'shift': shift})


def sine_terminal(k: int = 1, amplitude: float = 1.0, shift: float = 0.0, p: float = 2.0) -> TerminalSpec:
    def f(terminal, paths):
        return np.repeat(shift + amplitude * np.sin(terminal[:, :1]), k, axis=1)
    return TerminalSpec('sine', k, f, p, {'k': k, 'amplitude': amplitude, 'shift': shift})


def heavy_tail_terminal(power: float = 1.0, p: float = 2.0) -> TerminalSpec:
    """|B_T|^(-power): no p-th moment once power * p >= 1."""
    def f(terminal, paths):
        return np.abs(terminal[:, :1]) ** (-power)
    return TerminalSpec('heavy_tail', 1, f, p, {'power': power})


def _example1(pbar: float = 2.0, delta: Optional[float] = None,
              sign_convention: str = 'positive_modulus', d: int = 1) -> GeneratorSpec:
    return make_example1(HFunctionParams(pbar, delta, sign_convention), d)


def _example2(k: int = 2, pbar: float = 2.0, delta: Optional[float] = None,
              sign_convention: str = 'positive_modulus', d: int = 1) -> GeneratorSpec:
    return make_example2(k, HFunctionParams(pbar, delta, sign_convention), d)


def _affine(k: int = 1, d: int = 1, a: Any = -1.0, b: Any = 0.0, c: Any = 0.0) -> GeneratorSpec:
    return make_affine(k, d, a, b, c)


def _zero(k: int = 1, d: int = 1) -> GeneratorSpec:
    return make_affine(k, d, 0.0, 0.0, 0.0)


def _fixture(kind: str, coef: float = 1.0) -> GeneratorSpec:
    return make_fixture(kind, coef)


GENERATORS: Dict[str, Callable[..., GeneratorSpec]] = {
    'example1': _example1,
    'example2': _example2,
    'affine': _affine,
    'zero': _zero,
    'fixture': _fixture,
}

TERMINALS: Dict[str, Callable[..., TerminalSpec]] = {
    'brownian_terminal': brownian_terminal,
    'constant': constant_terminal,
    'brownian_sum': brownian_sum_terminal,
    'sine': sine_terminal,
    'heavy_tail': heavy_tail_terminal,
}


def _build(registry: Dict[str, Callable], kind: str, name: str, params: Optional[Dict[str, Any]]):
    if name not in registry:
        raise ConfigError(f"unknown {kind} '{name}'; choose from {sorted(registry)}")
    builder = registry[name]
    params = dict(params or {})
    try:
        inspect.signature(builder).bind(**params)
    except TypeError as exc:
        raise ConfigError(f"bad parameters for {kind} '{name}': {exc}") from exc
    return builder(**params)


def build_generator(name: str, params: Optional[Dict[str, Any]] = None) -> GeneratorSpec:
    return _build(GENERATORS, 'generator', name, params)


def build_terminal(name: str, params: Optional[Dict[str, Any]] = None) -> TerminalSpec:
    return _build(TERMINALS, 'terminal', name, params)
