"""A priori estimates checked on simulated solutions, with the constants traced through the proofs.

Only unconditional versions (conditioning at time 0) are verified.
"""

import logging
import math
from dataclasses import asdict, dataclass
from typing import Any, Dict, Optional

import numpy as np
from scipy import integrate

from config import BDG_OVERRIDE
from core.errors import ValidationError
from core.model import BoundProcess, DiscreteSolution, path_sup_power, quadratic_variation
from core.modulus import ModulusFn

logger = logging.getLogger(__name__)

SCOPES = ('prop2', 'prop3')


def bdg_constant(q: float, override: Optional[float] = BDG_OVERRIDE) -> float:
    """Upper BDG constant for E sup|M|^q <= C E<M>^(q/2).

    Defaults: 4 sqrt(2/q) for q in (0, 2] and (4 sqrt(q/2))^q above.
    """
    if not q > 0:
        raise ValidationError(f"BDG exponent must be positive, got {q}")
    if override is not None:
        if not override > 0:
            raise ValidationError(f"BDG constant must be positive, got {override}")
        return float(override)
    if q <= 2:
        return 4.0 * math.sqrt(2.0 / q)
    return (4.0 * math.sqrt(q / 2.0)) ** q


@dataclass(frozen=True)
class ConstantLedger:
    p: float
    mu: float
    lam: float
    T: float
    scope: str
    bdg_override: Optional[float]
    c_p_power: float
    c_of_p: Optional[float] = None
    d_lambda_p: Optional[float] = None
    bdg_half: Optional[float] = None
    bdg_one: Optional[float] = None
    c_p: Optional[float] = None
    d_p: Optional[float] = None
    C_mu_lambda_p_T: Optional[float] = None
    C_p: Optional[float] = None
    k_p: Optional[float] = None
    k_prime: Optional[float] = None
    k_double_prime: Optional[float] = None
    C_lambda_p_T: Optional[float] = None

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def constant_ledger(p: float, mu: float, lam: float, T: float, bdg: Optional[float] = BDG_OVERRIDE,
                    scope: str = 'prop2') -> ConstantLedger:
    if scope not in SCOPES:
        raise ValidationError(f"unknown ledger scope '{scope}'")
    if scope == 'prop2' and not p > 0:
        raise ValidationError(f"the z-estimate needs p > 0, got {p}")
    if scope == 'prop3' and not p > 1:
        raise ValidationError(f"the y-estimate needs p > 1, got {p}")
    if mu < 0 or lam < 0 or not T > 0:
        raise ValidationError(f"need mu, lambda >= 0 and T > 0, got mu={mu}, lambda={lam}, T={T}")

    entries: Dict[str, Any] = {'c_p_power': 2.0 ** p}
    if p > 1:
        spread = min(p - 1.0, 1.0)
        entries['c_of_p'] = p * spread / 2.0
        entries['d_lambda_p'] = p * lam ** 2 / spread

    if scope == 'prop2':
        # (a1+...+a4)^(p/2) <= 4^((p/2-1)+) sum a_i^(p/2), applied to 4A sup|y|^2 + 2(int f)^2 + 4 int phi + 4|M|
        c_p = 2.0 ** p * max(1.0, 4.0 ** (p / 2.0 - 1.0))
        bdg_half = bdg_constant(p / 2.0, bdg)
        d_p = c_p * bdg_half
        growth = (mu + lam ** 2) * T + 1.0
        entries.update(bdg_half=bdg_half, c_p=c_p, d_p=d_p,
                       C_mu_lambda_p_T=2.0 * c_p * growth ** (p / 2.0) + d_p ** 2, C_p=2.0 * c_p)
    else:
        bdg_one = bdg_constant(1.0, bdg)
        k_p = 2.0 * p * bdg_one
        k_prime = 2.0 * (1.0 + k_p ** 2 / entries['c_of_p'])
        young = (p / (2.0 * (p - 1.0))) ** ((p - 1.0) / p)
        k_double_prime = (2.0 / p) * (p * k_prime / young) ** p
        C = math.exp(2.0 * k_prime * entries['d_lambda_p'] * T) * max(2.0 * p * k_prime, k_double_prime)
        entries.update(bdg_one=bdg_one, k_p=k_p, k_prime=k_prime, k_double_prime=k_double_prime,
                       C_lambda_p_T=C)

    ledger = ConstantLedger(p=float(p), mu=float(mu), lam=float(lam), T=float(T), scope=scope,
                            bdg_override=bdg, **entries)
    logger.debug(f"ledger {scope} p={p}: {ledger.to_dict()}")
    return ledger


@dataclass(frozen=True)
class GrowthBounds:
    """(mu, lambda, f, phi) of the linear-growth bound on <y, g>."""
    mu: float
    lam: float
    f: BoundProcess
    phi: BoundProcess


@dataclass(frozen=True)
class EstimateReport:
    lhs: float
    rhs: float
    ratio: float
    constants: ConstantLedger
    passed: bool
    t_index: int = 0
    terms: Optional[Dict[str, float]] = None

    def to_dict(self) -> Dict[str, Any]:
        return {'lhs': self.lhs, 'rhs': self.rhs, 'ratio': self.ratio, 'passed': self.passed,
                't_index': self.t_index, 'terms': dict(self.terms or {}), 'constants': self.constants.to_dict()}


def _report(lhs: float, rhs: float, ledger: ConstantLedger, t_index: int, terms: Dict[str, float]) -> EstimateReport:
    if rhs > 0:
        ratio = lhs / rhs
    else:
        ratio = 0.0 if lhs == 0 else math.inf
    report = EstimateReport(float(lhs), float(rhs), float(ratio), ledger, bool(lhs <= rhs), t_index, terms)
    logger.info(f"{ledger.scope} estimate at node {t_index}: lhs={lhs:.6g}, rhs={rhs:.6g}, passed={report.passed}")
    return report


def _tail_integral(proc: BoundProcess, sol: DiscreteSolution, t_index: int):
    return proc.tail_integrals(sol.ensemble)[:, t_index]


def _check_index(sol: DiscreteSolution, t_index: int) -> None:
    if not 0 <= t_index <= sol.grid.N:
        raise ValidationError(f"t_index must lie in [0, {sol.grid.N}], got {t_index}")


def verify_prop2(sol: DiscreteSolution, gen_bounds: Optional[GrowthBounds], p: float, t_index: int = 0,
                 bdg: Optional[float] = BDG_OVERRIDE) -> EstimateReport:
    """E(int_t^T |z|^2)^(p/2) <= C E sup|y|^p + C_p E(int f)^p + C_p E(int phi)^(p/2)."""
    if gen_bounds is None:
        raise ValidationError("the z-estimate needs growth bounds (mu, lambda, f, phi)")
    _check_index(sol, t_index)
    ledger = constant_ledger(p, gen_bounds.mu, gen_bounds.lam, sol.grid.horizon, bdg, 'prop2')
    qv = quadratic_variation(sol.Z[:, t_index:], sol.grid.widths[t_index:])
    lhs = float(np.mean(qv ** (p / 2.0)))
    terms = {
        'sup_y': float(np.mean(path_sup_power(sol.Y[:, t_index:], p))),
        'f_term': float(np.mean(_tail_integral(gen_bounds.f, sol, t_index) ** p)),
        'phi_term': float(np.mean(_tail_integral(gen_bounds.phi, sol, t_index) ** (p / 2.0))),
    }
    rhs = ledger.C_mu_lambda_p_T * terms['sup_y'] + ledger.C_p * (terms['f_term'] + terms['phi_term'])
    return _report(lhs, rhs, ledger, t_index, terms)


def verify_prop3(sol: DiscreteSolution, psi: Optional[ModulusFn], lam: float, f: BoundProcess, p: float,
                 t_index: int = 0, bdg: Optional[float] = BDG_OVERRIDE) -> EstimateReport:
    """E sup_{[t,T]}|y|^p <= C {E|xi|^p + int_t^T psi(E|y_s|^p) ds + E(int f)^p}; psi=None means psi = 0."""
    if f is None:
        raise ValidationError("the y-estimate needs the process f (use BoundProcess.zero())")
    _check_index(sol, t_index)
    ledger = constant_ledger(p, 0.0, lam, sol.grid.horizon, bdg, 'prop3')
    lhs = float(np.mean(path_sup_power(sol.Y[:, t_index:], p)))
    moments = np.mean(np.linalg.norm(sol.Y, axis=2) ** p, axis=0)[t_index:]
    psi_values = np.asarray(psi(moments)) if psi is not None else np.zeros_like(moments)
    terms = {
        'terminal': float(moments[-1]),
        'psi_integral': float(integrate.trapezoid(psi_values, sol.grid.nodes[t_index:])) if moments.size > 1 else 0.0,
        'f_term': float(np.mean(_tail_integral(f, sol, t_index) ** p)),
    }
    rhs = ledger.C_lambda_p_T * (terms['terminal'] + terms['psi_integral'] + terms['f_term'])
    return _report(lhs, rhs, ledger, t_index, terms)
