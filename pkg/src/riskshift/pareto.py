"""Pareto-optimal investment and premium policies.

A Pareto optimum maximises one party's utility subject to a binding
reservation level for the other.  Both problems are solved along a level
curve in capital coordinates ``(v, w)``: the shareholder curve ``w = W(v)``
for the primal problem, the policyholder curve for the dual one.  Along
either curve the derivative of the objective has the sign of the
first-order residual ``E[R u'(terminal wealth)]``, which is used to polish
the golden-section estimate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional

import numpy as np
from scipy.optimize import brentq

from .dist import DEFAULT_QUAD, MarketModel, QuadratureConfig, expect
from .numerics import NumericError, bisect_increasing, golden_section_max, scan_argmax
from .utilities import (
    P_FLOOR_EPS,
    CapitalCoords,
    EconomicParams,
    Policy,
    UtilityPair,
    from_vw,
    gradients,
    log_neg_policyholder_utility,
    policyholder_utility,
    reference_utility,
    shareholder_utility,
    to_vw,
    utilities,
    vw_foc,
    vw_policyholder,
    vw_shareholder,
)

SHAREHOLDER = "shareholder"
POLICYHOLDER = "policyholder"

SH_BINDING = "shareholder-binding"
PH_BINDING = "policyholder-binding"
REG_BINDING = "regulatory-binding"

GAMMA_TOL = 1e-12
GOLDEN_TOL = 1e-9
ROOT_TOL = 1e-14


class DomainError(ValueError):
    """Reservation level or argument outside the admissible range."""


@dataclass(frozen=True)
class CriticalPoint:
    p_crit: float
    gamma_crit_sh: float
    gamma_crit_ph: float
    at_floor: bool  # p_crit == -c0

    def admits_sh(self, gamma: float) -> bool:
        if self.at_floor:
            return gamma > 0
        return gamma >= self.gamma_crit_sh - GAMMA_TOL * max(1.0, abs(self.gamma_crit_sh))

    def admits_ph(self, gamma: float) -> bool:
        if self.at_floor:
            return gamma < self.gamma_crit_ph
        return gamma <= self.gamma_crit_ph + GAMMA_TOL * abs(self.gamma_crit_ph)


@dataclass(frozen=True)
class Reservation:
    side: str
    gamma: float

    def __post_init__(self):
        if self.side not in (SHAREHOLDER, POLICYHOLDER):
            raise ValueError(f"unknown reservation side {self.side!r}")


@dataclass(frozen=True)
class SolveResult:
    policy: Policy
    coords: CapitalCoords
    utilities: UtilityPair
    foc_residual: float
    binding: frozenset
    iterations: int
    flags: frozenset = field(default_factory=frozenset)


def solve_result(pol: Policy, econ, model, cfg, binding, iterations, flags=()) -> SolveResult:
    from .utilities import foc_residual

    return SolveResult(
        policy=pol,
        coords=to_vw(pol, econ.c0),
        utilities=utilities(pol, econ, model, cfg),
        foc_residual=foc_residual(pol, econ, model, cfg),
        binding=frozenset(binding),
        iterations=iterations,
        flags=frozenset(flags),
    )


# --------------------------------------------------------------------------
# sections of the utilities at fixed alpha


def _premium_upper(f, lo: float, start: float = 0.5) -> float:
    """First probe ``hi > lo`` with ``f(hi) >= 0`` on a doubling grid."""
    step = start
    for _ in range(200):
        hi = lo + step
        if f(hi) >= 0:
            return hi
        step *= 2.0
    raise NumericError("premium bracket expansion failed")


def section_argmax(alpha: float, econ: EconomicParams, model: MarketModel,
                   cfg: QuadratureConfig = DEFAULT_QUAD) -> float:
    """Maximiser of the strictly concave ``p -> U_PH(alpha, p)``, possibly -c0."""
    c0 = econ.c0
    dp = lambda p: gradients(Policy(alpha, p), econ, model, cfg)[3]
    p_lo = -c0 + P_FLOOR_EPS
    if dp(p_lo) <= 0:
        return -c0
    p_hi = _premium_upper(lambda p: -dp(p), p_lo, 0.05)
    obj = lambda p: -log_neg_policyholder_utility(Policy(alpha, p), econ, model, cfg)
    x, _, _ = golden_section_max(obj, p_lo, p_hi, tol=GOLDEN_TOL)
    # polish on the derivative, which is strictly decreasing
    a, b = max(p_lo, x - 1e-6), min(p_hi, x + 1e-6)
    if dp(a) > 0 > dp(b):
        x = brentq(dp, a, b, xtol=ROOT_TOL, rtol=1e-15)
    elif dp(p_lo) > 0 > dp(p_hi):
        x = brentq(dp, p_lo, p_hi, xtol=ROOT_TOL, rtol=1e-15)
    return x


@lru_cache(maxsize=256)
def critical_premium(econ: EconomicParams, model: MarketModel,
                     cfg: QuadratureConfig = DEFAULT_QUAD) -> CriticalPoint:
    """Premium maximising the policyholder's utility at full investment."""
    c0 = econ.c0
    slope = expect(lambda x, r: r * econ.u_prime(econ.w0 + c0 - x), model, cfg)
    if slope <= 0:
        return CriticalPoint(-c0, 0.0, reference_utility(econ, model, c0, cfg), True)
    p = section_argmax(1.0, econ, model, cfg)
    pol = Policy(1.0, p)
    return CriticalPoint(
        p,
        shareholder_utility(pol, econ, model, cfg),
        policyholder_utility(pol, econ, model, cfg),
        False,
    )


def sh_level_premium(alpha: float, res: Reservation, econ: EconomicParams, model: MarketModel,
                     cfg: QuadratureConfig = DEFAULT_QUAD) -> float:
    """The unique premium with ``U_SH(alpha, p) = gamma``."""
    if not res.gamma > 0:
        raise DomainError("shareholder reservation level must be positive")
    c0 = econ.c0
    f = lambda p: shareholder_utility(Policy(alpha, p), econ, model, cfg) - res.gamma
    lo = -c0 + P_FLOOR_EPS
    if f(lo) >= 0:
        return lo
    hi = _premium_upper(f, lo, max(res.gamma, 0.1))
    return bisect_increasing(f, lo, hi, xtol=1e-13)


def ph_level_premiums(alpha: float, res: Reservation, econ: EconomicParams, model: MarketModel,
                      cfg: QuadratureConfig = DEFAULT_QUAD) -> list[float]:
    """All premiums with ``U_PH(alpha, p) = gamma``, ascending (at most two)."""
    c0 = econ.c0
    if not res.gamma < 0:
        return []
    target = -math.log(-res.gamma)
    h = lambda p: -log_neg_policyholder_utility(Policy(alpha, p), econ, model, cfg) - target
    p_star = max(section_argmax(alpha, econ, model, cfg), -c0 + P_FLOOR_EPS)
    top = h(p_star)
    if top < -1e-12:
        return []
    if top <= 1e-12:
        return [p_star]
    roots = []
    lo = -c0 + P_FLOOR_EPS
    if lo < p_star and h(lo) < 0:
        roots.append(brentq(h, lo, p_star, xtol=ROOT_TOL, rtol=1e-15))
    hi = _premium_upper(lambda p: -h(p), p_star, 0.05)
    roots.append(brentq(h, p_star, hi, xtol=ROOT_TOL, rtol=1e-15))
    assert len(roots) <= 2
    return roots


def foc_residual(pol: Policy, econ: EconomicParams, model: MarketModel,
                 cfg: QuadratureConfig = DEFAULT_QUAD) -> float:
    from .utilities import foc_residual as _foc

    return _foc(pol, econ, model, cfg)


# --------------------------------------------------------------------------
# shareholder level curve in (v, w)


def w_of_v(v: float, res: Reservation, econ: EconomicParams, model: MarketModel,
           cfg: QuadratureConfig = DEFAULT_QUAD) -> Optional[float]:
    """Total assets ``w >= v`` with ``V_SH(v, w) = gamma``; None if none exists."""
    if v < 0:
        raise DomainError("v must be non-negative")
    f = lambda w: vw_shareholder(v, w, econ, model, cfg) - res.gamma
    lo = max(v, 1e-12)
    if f(lo) > 0:
        return None
    if f(lo) == 0:
        return lo
    hi = _premium_upper(f, lo, max(res.gamma, 0.1))
    return bisect_increasing(f, lo, hi, xtol=ROOT_TOL)


def sh_curve_endpoint(res: Reservation, econ: EconomicParams, model: MarketModel,
                      cfg: QuadratureConfig = DEFAULT_QUAD) -> float:
    """The ``v'`` with ``W(v') = v'`` (full investment on the level curve)."""
    f = lambda v: vw_shareholder(v, v, econ, model, cfg) - res.gamma
    hi = _premium_upper(f, 1e-12, max(res.gamma, 0.1))
    return bisect_increasing(f, 1e-12, hi, xtol=ROOT_TOL)


def w_slope(v: float, w: float, econ, model, cfg=DEFAULT_QUAD) -> float:
    """Implicit slope ``W'(v) = -E[R 1_S] / P[S]`` of the shareholder curve."""
    from .utilities import evaluate_vw

    ev = evaluate_vw(v, w, econ, model, cfg)
    return -ev.r_s / ev.prob_s


def _check_sh(res: Reservation, crit: CriticalPoint):
    if res.side != SHAREHOLDER:
        raise DomainError("expected a shareholder reservation level")
    if not crit.admits_sh(res.gamma):
        raise DomainError(
            f"gamma_SH={res.gamma!r} outside the admissible range (no Pareto optimum exists "
            f"below gamma_crit_SH={crit.gamma_crit_sh!r})"
        )


def _check_ph(res: Reservation, crit: CriticalPoint):
    if res.side != POLICYHOLDER:
        raise DomainError("expected a policyholder reservation level")
    if not crit.admits_ph(res.gamma):
        raise DomainError(
            f"gamma_PH={res.gamma!r} exceeds the maximal policyholder utility "
            f"{crit.gamma_crit_ph!r}"
        )


def _maximise_on_curve(obj, foc, a: float, b: float, n_scan: int):
    """Shared driver: scan, golden-section refine, polish on the FOC sign.

    ``obj`` is the objective along the curve and ``foc`` a function whose
    sign equals that of the objective's derivative.
    """
    xs = np.linspace(a, b, n_scan)
    vals = [obj(x) for x in xs]
    i = int(np.argmax(vals))
    lo, hi = xs[max(i - 1, 0)], xs[min(i + 1, n_scan - 1)]
    x, _, it = golden_section_max(obj, lo, hi, tol=GOLDEN_TOL)
    flags = set()
    diffs = np.diff(vals)
    scale = max(abs(v) for v in vals) or 1.0
    # unimodal: no rise after the first significant fall
    falling = np.nonzero(diffs < -1e-12 * scale)[0]
    if falling.size and np.any(diffs[falling[0]:] > 1e-12 * scale):
        flags.add("unimodality-violated")

    fa, fb = foc(a), foc(b)
    if fa <= 0 and x - a < 2 * (b - a) / (n_scan - 1):
        return a, it, flags
    if fb >= 0 and b - x < 2 * (b - a) / (n_scan - 1):
        return b, it, flags
    glo, ghi = max(a, x - 1e-6), min(b, x + 1e-6)
    flo, fhi = foc(glo), foc(ghi)
    if not (flo > 0 > fhi):
        glo, ghi = lo, hi
        flo, fhi = foc(glo), foc(ghi)
    if flo > 0 > fhi:
        x = brentq(foc, glo, ghi, xtol=ROOT_TOL, rtol=1e-15)
    else:
        flags.add("foc-polish-skipped")
    return x, it, flags


def pareto_primal(res: Reservation, econ: EconomicParams, model: MarketModel,
                  cfg: QuadratureConfig = DEFAULT_QUAD) -> SolveResult:
    """Maximise U_PH subject to ``U_SH >= gamma`` (binding)."""
    crit = critical_premium(econ, model, cfg)
    _check_sh(res, crit)
    v_end = sh_curve_endpoint(res, econ, model, cfg)

    def curve_w(v):
        w = w_of_v(v, res, econ, model, cfg)
        return v if w is None else w

    obj = lambda v: -math.log(-vw_policyholder(v, curve_w(v), econ, model, cfg))
    foc = lambda v: vw_foc(v, curve_w(v), econ, model, cfg)
    v, it, flags = _maximise_on_curve(obj, foc, 0.0, v_end, 64)
    w = curve_w(v)
    pol = from_vw(CapitalCoords(min(v, w), w), econ.c0)
    if v == v_end:
        pol = Policy(1.0, pol.p)
    return solve_result(pol, econ, model, cfg, {SH_BINDING}, it, flags)


# --------------------------------------------------------------------------
# policyholder level curve and the dual problem


def ph_w_of_v(v: float, res: Reservation, econ: EconomicParams, model: MarketModel,
              cfg: QuadratureConfig = DEFAULT_QUAD) -> Optional[float]:
    """Total assets ``w >= v`` with ``V_PH(v, w) = gamma``; None if none exists."""
    target = -math.log(-res.gamma)
    f = lambda w: math.log(-vw_policyholder(v, w, econ, model, cfg)) + target
    lo = max(v, P_FLOOR_EPS)
    if f(lo) > 0:
        return None
    hi = _premium_upper(f, lo, 0.1)
    return bisect_increasing(f, lo, hi, xtol=ROOT_TOL)


def ph_curve_range(res: Reservation, econ: EconomicParams, model: MarketModel,
                   cfg: QuadratureConfig = DEFAULT_QUAD) -> tuple[float, float]:
    """``[v_lo, v_hi]`` on which the policyholder level curve exists."""
    crit = critical_premium(econ, model, cfg)
    c0 = econ.c0
    target = -math.log(-res.gamma)
    # g(v) = -log(-V_PH(v, v)) - target, concave-like with its peak at c0 + p_crit
    g = lambda v: -math.log(-vw_policyholder(v, v, econ, model, cfg)) - target
    v_c = max(c0 + crit.p_crit, P_FLOOR_EPS)
    if g(v_c) < 0:
        v_c = P_FLOOR_EPS
    lo = P_FLOOR_EPS
    v_lo = 0.0
    if g(lo) < 0 and v_c > lo:
        v_lo = brentq(g, lo, v_c, xtol=ROOT_TOL, rtol=1e-15)
    hi = _premium_upper(lambda v: -g(v), v_c, 0.05)
    v_hi = brentq(g, v_c, hi, xtol=ROOT_TOL, rtol=1e-15) if g(v_c) > 0 else v_c
    return v_lo, v_hi


def pareto_dual(res: Reservation, econ: EconomicParams, model: MarketModel,
                cfg: QuadratureConfig = DEFAULT_QUAD) -> SolveResult:
    """Maximise U_SH subject to ``U_PH >= gamma`` (binding)."""
    crit = critical_premium(econ, model, cfg)
    _check_ph(res, crit)
    v_lo, v_hi = ph_curve_range(res, econ, model, cfg)

    def curve_w(v):
        w = ph_w_of_v(v, res, econ, model, cfg)
        return max(v, P_FLOOR_EPS) if w is None else w

    obj = lambda v: vw_shareholder(v, curve_w(v), econ, model, cfg)
    foc = lambda v: vw_foc(v, curve_w(v), econ, model, cfg)
    v, it, flags = _maximise_on_curve(obj, foc, v_lo, v_hi, 128)
    w = curve_w(v)
    pol = from_vw(CapitalCoords(min(v, w), w), econ.c0)
    return solve_result(pol, econ, model, cfg, {PH_BINDING}, it, flags)


def monopoly_level(econ: EconomicParams, model: MarketModel,
                   cfg: QuadratureConfig = DEFAULT_QUAD) -> float:
    """Policyholder outside option ``E[u(w0 - X)]``."""
    return reference_utility(econ, model, 0.0, cfg)


def independence_model_holds(model: MarketModel, tol: float = 1e-12) -> bool:
    """True when X and R are independent with ``E[R] = 0``."""
    return model.rho_corr == 0 and abs(model.mean_r()) <= tol
