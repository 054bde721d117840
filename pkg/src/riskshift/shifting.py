"""Risk shifting with and without a regulatory capital constraint.

Without commitment the shareholder always invests everything in the risky
asset, so the unregulated solution sits on ``alpha = 1``.  A regulator
requires ``rho(L(alpha, p)) <= c0`` for the annual loss
``L(alpha, p) = X - (c0 + p) * alpha * R - p`` and a risk measure ``rho``
(value-at-risk or expected shortfall).  The regulated problem is solved
along the boundary curve ``w -> (v_rho(w), w)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional

import numpy as np
from scipy.optimize import brentq, minimize_scalar

from .dist import (
    DEFAULT_QUAD,
    MarketModel,
    QuadratureConfig,
    kink_coordinate,
    outer_grid,
    trunc_call,
    trunc_mass,
)
from .numerics import NumericError, scan_argmax, ternary_search_max
from .pareto import (
    PH_BINDING,
    REG_BINDING,
    SH_BINDING,
    DomainError,
    Reservation,
    SolveResult,
    _check_ph,
    _check_sh,
    critical_premium,
    ph_level_premiums,
    sh_level_premium,
    solve_result,
)
from .utilities import (
    P_FLOOR_EPS,
    EconomicParams,
    Policy,
    shareholder_utility,
    vw_policyholder,
    vw_shareholder,
)

VAR = "VaR"
ES = "ES"


class Infeasible(Exception):
    """The regulatory constraint admits no policy."""


@dataclass(frozen=True)
class RiskMeasureSpec:
    kind: str
    q: float

    def __post_init__(self):
        kind = {"var": VAR, "es": ES}.get(str(self.kind).lower())
        if kind is None:
            raise ValueError(f"unknown risk measure {self.kind!r}")
        object.__setattr__(self, "kind", kind)
        if not 0 < self.q < 1:
            raise ValueError("confidence level must lie in (0, 1)")

    @property
    def convex(self) -> bool:
        return self.kind == ES

    @property
    def label(self) -> str:
        return f"{self.kind}{100 * self.q:g}"


@dataclass(frozen=True)
class LinearLoss:
    """Loss ``x_coef * X + r_coef * R + cash`` with ``x_coef > 0``."""

    x_coef: float
    r_coef: float
    cash: float

    def __post_init__(self):
        if not self.x_coef > 0:
            raise ValueError("x_coef must be positive")

    def shifted(self, c: float) -> "LinearLoss":
        return LinearLoss(self.x_coef, self.r_coef, self.cash + c)

    def mix(self, other: "LinearLoss", lam: float) -> "LinearLoss":
        """``lam * self + (1 - lam) * other`` on the common (X, R) coupling."""
        return LinearLoss(
            lam * self.x_coef + (1 - lam) * other.x_coef,
            lam * self.r_coef + (1 - lam) * other.r_coef,
            lam * self.cash + (1 - lam) * other.cash,
        )


@dataclass(frozen=True)
class LossSpec:
    """Annual loss ``L(alpha, p)`` of the insurer for a policy."""

    policy: Policy
    econ: EconomicParams

    def linear(self) -> LinearLoss:
        w = self.econ.c0 + self.policy.p
        return LinearLoss(1.0, -w * self.policy.alpha, -self.policy.p)


def _as_linear(loss) -> LinearLoss:
    return loss.linear() if isinstance(loss, LossSpec) else loss


# --------------------------------------------------------------------------
# distribution of the loss


def _x_strike(lin: LinearLoss, l: float, r: np.ndarray) -> np.ndarray:
    return (l - lin.cash - lin.r_coef * r) / lin.x_coef


def loss_cdf(loss, l: float, model: MarketModel, cfg: QuadratureConfig = DEFAULT_QUAD) -> float:
    """P[L <= l]."""
    lin = _as_linear(loss)
    g = outer_grid(model, cfg)
    t = kink_coordinate(_x_strike(lin, l, g.r), g.loc, g.scale)
    return float(np.dot(g.weight, trunc_mass(-np.inf, t, g.k)))


def loss_tail(loss, l: float, model: MarketModel, cfg: QuadratureConfig = DEFAULT_QUAD) -> float:
    """E[(L - l)^+]."""
    lin = _as_linear(loss)
    g = outer_grid(model, cfg)
    calls = trunc_call(_x_strike(lin, l, g.r), g.loc, g.scale, g.k)
    return float(lin.x_coef * np.dot(g.weight, calls))


def _check_level(q: float):
    if not 0 < q < 1:
        raise ValueError("confidence level must lie in (0, 1)")


@lru_cache(maxsize=65536)
def _var(lin: LinearLoss, q: float, model: MarketModel, cfg: QuadratureConfig) -> float:
    f = lambda l: loss_cdf(lin, l, model, cfg) - q
    centre = lin.cash + lin.x_coef * model.mean_x() + lin.r_coef * model.mean_r()
    step = lin.x_coef * model.mean_x() * model.sigma_z + abs(lin.r_coef) * model.sigma_y + 1e-3
    lo, hi = centre - step, centre + step
    for _ in range(200):
        if f(lo) < 0:
            break
        lo -= step
        step *= 2.0
    else:
        raise NumericError("VaR lower bracket expansion failed")
    for _ in range(200):
        if f(hi) >= 0:
            break
        hi += step
        step *= 2.0
    else:
        raise NumericError("VaR upper bracket expansion failed")
    return brentq(f, lo, hi, xtol=1e-15, rtol=1e-15, maxiter=500)


def var(loss, q: float, model: MarketModel, cfg: QuadratureConfig = DEFAULT_QUAD) -> float:
    """Value-at-risk: the q-quantile of the loss."""
    _check_level(q)
    return _var(_as_linear(loss), float(q), model, cfg)


def es(loss, q: float, model: MarketModel, cfg: QuadratureConfig = DEFAULT_QUAD) -> float:
    """Expected shortfall ``VaR_q + E[(L - VaR_q)^+] / (1 - q)``."""
    _check_level(q)
    lin = _as_linear(loss)
    l = _var(lin, float(q), model, cfg)
    return l + loss_tail(lin, l, model, cfg) / (1.0 - q)


def risk_measure(spec: RiskMeasureSpec, loss, model: MarketModel,
                 cfg: QuadratureConfig = DEFAULT_QUAD) -> float:
    if spec.kind == VAR:
        return var(loss, spec.q, model, cfg)
    return es(loss, spec.q, model, cfg)


# --------------------------------------------------------------------------
# regulatory boundary


def _convex_sup(f, upper: float, xtol: float = 1e-14) -> Optional[float]:
    """sup{x in [0, upper] : f(x) <= 0} for convex ``f``; None if empty."""
    if f(upper) <= 0:
        return upper
    if f(0.0) <= 0:
        return brentq(f, 0.0, upper, xtol=xtol, rtol=1e-15)
    res = minimize_scalar(f, bounds=(0.0, upper), method="bounded", options={"xatol": 1e-12})
    x_min = float(res.x)
    if f(x_min) > 0:
        return None
    return brentq(f, x_min, upper, xtol=xtol, rtol=1e-15)


def _market_loss(v: float, w: float) -> LinearLoss:
    # X - v R - w; rho of this is V_R(v, w)
    return LinearLoss(1.0, -v, -w)


def alpha_rho(p: float, spec: RiskMeasureSpec, econ: EconomicParams, model: MarketModel,
              cfg: QuadratureConfig = DEFAULT_QUAD) -> Optional[float]:
    """Largest admissible investment fraction at premium ``p``; None if none."""
    if not p > -econ.c0:
        raise DomainError("premium must exceed -c0")
    f = lambda a: risk_measure(spec, LossSpec(Policy(a, p), econ), model, cfg) - econ.c0
    return _convex_sup(f, 1.0, xtol=1e-15)


def v_rho(w: float, spec: RiskMeasureSpec, econ: EconomicParams, model: MarketModel,
          cfg: QuadratureConfig = DEFAULT_QUAD) -> Optional[float]:
    """Largest admissible risky holding at total assets ``w``; None if none."""
    if not w > 0:
        raise DomainError("w must be positive")
    return _v_rho(float(w), spec, model, cfg)


@lru_cache(maxsize=65536)
def _v_rho(w: float, spec: RiskMeasureSpec, model: MarketModel, cfg: QuadratureConfig):
    f = lambda v: risk_measure(spec, _market_loss(v, w), model, cfg)
    return _convex_sup(f, w)


@lru_cache(maxsize=256)
def feasible_start(spec: RiskMeasureSpec, econ: EconomicParams, model: MarketModel,
                   cfg: QuadratureConfig = DEFAULT_QUAD) -> float:
    """Left end ``w_D`` of the feasible asset interval ``[w_D, inf)``."""
    rho0 = lambda v: risk_measure(spec, LinearLoss(1.0, -v, 0.0), model, cfg)
    # unconstrained minimiser of v -> rho(X - v R) over v >= 0
    hi = 1.0
    while rho0(2 * hi) < rho0(hi) and hi < 1e6:
        hi *= 2
    res = minimize_scalar(rho0, bounds=(0.0, 2 * hi), method="bounded", options={"xatol": 1e-12})
    v_m = float(res.x)
    if rho0(0.0) <= rho0(v_m):
        v_m = 0.0
    r_m = rho0(v_m)
    if r_m >= v_m:
        return r_m
    # below v_m the constrained minimum sits at v = w
    return brentq(lambda w: rho0(w) - w, 0.0, v_m, xtol=1e-15, rtol=1e-15)


@dataclass(frozen=True)
class BoundaryCurve:
    """Samples of the regulatory boundary and the feasible domain ``[start, inf)``.

    ``coords`` is ``"p"`` for ``(p, alpha_rho)`` samples and ``"w"`` for
    ``(w, v_rho)`` samples; infeasible points carry ``None``.
    """

    spec: RiskMeasureSpec
    coords: str
    samples: tuple
    domain_start: float

    def feasible(self) -> list:
        return [(x, y) for x, y in self.samples if y is not None]


def boundary_curve(spec: RiskMeasureSpec, econ: EconomicParams, model: MarketModel,
                   grid, coords: str = "p", cfg: QuadratureConfig = DEFAULT_QUAD) -> BoundaryCurve:
    """Sample ``alpha_rho`` over premiums or ``v_rho`` over asset levels."""
    w_d = feasible_start(spec, econ, model, cfg)
    if coords == "p":
        pts = tuple((float(p), alpha_rho(float(p), spec, econ, model, cfg)) for p in grid)
        return BoundaryCurve(spec, "p", pts, w_d - econ.c0)
    if coords == "w":
        pts = tuple((float(w), v_rho(float(w), spec, econ, model, cfg)) for w in grid)
        return BoundaryCurve(spec, "w", pts, w_d)
    raise ValueError("coords must be 'p' or 'w'")


def var_convexity_report(econ: EconomicParams, model: MarketModel, q: float = 0.995,
                         p_window=(0.70, 1.00), n_alpha: int = 11, n_p: int = 7,
                         cfg: QuadratureConfig = DEFAULT_QUAD) -> dict:
    """Midpoint convexity of ``alpha -> VaR_q(L(alpha, p))`` on a policy window."""
    worst = 0.0
    checks = violations = 0
    alphas = np.linspace(0.0, 1.0, n_alpha)
    for p in np.linspace(*p_window, n_p):
        vals = [var(LossSpec(Policy(a, p), econ), q, model, cfg) for a in alphas]
        for i in range(1, n_alpha - 1):
            gap = vals[i] - 0.5 * (vals[i - 1] + vals[i + 1])
            checks += 1
            if gap > 1e-10:
                violations += 1
            worst = max(worst, gap)
    return {"checks": checks, "violations": violations, "max_gap": worst, "convex": violations == 0}


# --------------------------------------------------------------------------
# solvers


def risk_shift(res: Reservation, econ: EconomicParams, model: MarketModel,
               cfg: QuadratureConfig = DEFAULT_QUAD) -> SolveResult:
    """Unregulated risk-shifting solution ``(1, p_bar)`` with ``U_SH(1, p_bar) = gamma``."""
    crit = critical_premium(econ, model, cfg)
    _check_sh(res, crit)
    p = sh_level_premium(1.0, res, econ, model, cfg)
    out = solve_result(Policy(1.0, p), econ, model, cfg, {SH_BINDING}, 0)
    flags = {"pareto-optimal"} if out.foc_residual >= 0 else {"pareto-suboptimal"}
    return SolveResult(**{**out.__dict__, "flags": frozenset(flags)})


def risk_shift_dual(res: Reservation, econ: EconomicParams, model: MarketModel,
                    cfg: QuadratureConfig = DEFAULT_QUAD) -> SolveResult:
    """Maximise U_SH on ``alpha = 1`` subject to ``U_PH(1, p) >= gamma``."""
    crit = critical_premium(econ, model, cfg)
    _check_ph(res, crit)
    roots = ph_level_premiums(1.0, res, econ, model, cfg)
    if not roots:
        p = crit.p_crit
    else:
        p = roots[-1]
    out = solve_result(Policy(1.0, p), econ, model, cfg, {PH_BINDING}, 0)
    flags = {"pareto-optimal"} if out.foc_residual >= 0 else {"pareto-suboptimal"}
    return SolveResult(**{**out.__dict__, "flags": frozenset(flags)})


class _Curve:
    """Utilities along the regulatory boundary ``w -> (v_rho(w), w)``."""

    def __init__(self, spec, econ, model, cfg):
        self.spec, self.econ, self.model, self.cfg = spec, econ, model, cfg
        self.w_start = feasible_start(spec, econ, model, cfg)

    def v(self, w: float) -> float:
        v = v_rho(w, self.spec, self.econ, self.model, self.cfg)
        if v is None:
            # only reachable through rounding at the left end of the domain
            v = v_rho(w * (1 + 1e-14) + 1e-15, self.spec, self.econ, self.model, self.cfg)
        if v is None:
            raise Infeasible(f"no admissible investment at w={w!r}")
        return v

    def sh(self, w: float) -> float:
        return vw_shareholder(self.v(w), w, self.econ, self.model, self.cfg)

    def ph_score(self, w: float) -> float:
        """-log(-V_PH) along the curve; order-preserving for V_PH."""
        return -math.log(-vw_policyholder(self.v(w), w, self.econ, self.model, self.cfg))

    def upper(self, w_lo: float) -> float:
        """Expand until the policyholder score falls on three consecutive probes."""
        step = 0.01 * max(w_lo, 0.1)
        prev = self.ph_score(w_lo)
        falls = 0
        w = w_lo
        for _ in range(200):
            w += step
            cur = self.ph_score(w)
            falls = falls + 1 if cur < prev else 0
            if falls >= 3:
                return w
            prev = cur
            step *= 2.0
        raise NumericError("upper bracket expansion along the regulatory curve failed")

    def maximise_ph(self, lo: float, hi: float):
        x, fx, it = ternary_search_max(self.ph_score, lo, hi, tol=1e-9)
        sx, sf, _ = scan_argmax(self.ph_score, lo, hi, 128)
        flags = set()
        if sf > fx + 1e-6 * max(abs(fx), 1.0):
            flags.add("scan-refined")
            a = max(lo, sx - (hi - lo) / 127)
            b = min(hi, sx + (hi - lo) / 127)
            x, fx, it2 = ternary_search_max(self.ph_score, a, b, tol=1e-9)
            it += it2
        return x, it, flags


def _regulated_result(curve: _Curve, w: float, binding: set, it: int, flags: set) -> SolveResult:
    econ = curve.econ
    v = curve.v(w)
    alpha = min(v / w, 1.0)
    if alpha < 1.0:
        binding = binding | {REG_BINDING}
    return solve_result(Policy(alpha, w - econ.c0), econ, curve.model, curve.cfg, binding, it, flags)


def regulated_risk_shift(res: Reservation, spec: RiskMeasureSpec, econ: EconomicParams,
                         model: MarketModel, cfg: QuadratureConfig = DEFAULT_QUAD) -> SolveResult:
    """Risk shifting under ``rho(L) <= c0`` with shareholder reservation level."""
    if res.side != "shareholder":
        raise DomainError("expected a shareholder reservation level")
    curve = _Curve(spec, econ, model, cfg)
    w_d = curve.w_start
    if not w_d > 0:
        raise Infeasible("empty feasible domain")
    floor = curve.sh(w_d)
    if res.gamma < floor * (1 - 1e-12):
        raise DomainError(
            f"gamma_SH={res.gamma!r} below the regulated range starting at {floor!r}"
        )
    f = lambda w: curve.sh(w) - res.gamma
    if f(w_d) >= 0:
        w_min = w_d
    else:
        hi = w_d + 0.05
        while f(hi) < 0:
            hi += 2 * (hi - w_d)
        w_min = brentq(f, w_d, hi, xtol=1e-15, rtol=1e-15)
    w_hi = curve.upper(w_min)
    w, it, flags = curve.maximise_ph(w_min, w_hi)
    binding = set()
    if abs(curve.sh(w) - res.gamma) <= 1e-9 * abs(res.gamma):
        binding.add(SH_BINDING)
    return _regulated_result(curve, w, binding, it, flags)


def regulated_dual(res: Reservation, spec: RiskMeasureSpec, econ: EconomicParams,
                   model: MarketModel, cfg: QuadratureConfig = DEFAULT_QUAD) -> SolveResult:
    """Maximise U_SH along the regulatory curve subject to ``U_PH >= gamma``."""
    if res.side != "policyholder":
        raise DomainError("expected a policyholder reservation level")
    if not res.gamma < 0:
        raise DomainError("CARA utility levels are negative")
    curve = _Curve(spec, econ, model, cfg)
    w_d = curve.w_start
    w_hi = curve.upper(w_d)
    w_star, it, flags = curve.maximise_ph(w_d, w_hi)
    target = -math.log(-res.gamma)
    g = lambda w: curve.ph_score(w) - target
    if g(w_star) < -1e-12:
        raise DomainError(f"gamma_PH={res.gamma!r} above the regulated range")
    if g(w_star) <= 0:
        w = w_star
    else:
        hi = w_star + 0.05
        while g(hi) > 0:
            hi += 2 * (hi - w_star)
        w = brentq(g, w_star, hi, xtol=1e-15, rtol=1e-15)
    return _regulated_result(curve, w, {PH_BINDING}, it, flags)


def corollary_point(res: Reservation, spec: RiskMeasureSpec, econ: EconomicParams,
                    model: MarketModel, cfg: QuadratureConfig = DEFAULT_QUAD,
                    bracket: tuple[float, float] = (0.0, 1.0),
                    capital: Optional[float] = None) -> Policy:
    """Intersection of the shareholder level curve with the regulatory boundary.

    ``capital`` overrides the threshold of the risk constraint only (default c0).
    """
    if res.side != "shareholder":
        raise DomainError("expected a shareholder reservation level")
    limit = econ.c0 if capital is None else capital

    def h(a):
        p = sh_level_premium(a, res, econ, model, cfg)
        return risk_measure(spec, LossSpec(Policy(a, p), econ), model, cfg) - limit

    lo, hi = bracket
    if h(1.0) <= 0:
        return Policy(1.0, sh_level_premium(1.0, res, econ, model, cfg))
    if h(0.0) > 0:
        raise Infeasible("the shareholder level curve misses the admissible region")
    if h(lo) > 0 or h(hi) < 0:
        raise DomainError("bracket does not enclose the boundary crossing")
    a = brentq(h, lo, hi, xtol=1e-13, rtol=1e-15)
    return Policy(a, sh_level_premium(a, res, econ, model, cfg))


def regulatory_ok(pol: Policy, spec: RiskMeasureSpec, econ: EconomicParams, model: MarketModel,
                  cfg: QuadratureConfig = DEFAULT_QUAD, tol: float = 1e-12) -> bool:
    return risk_measure(spec, LossSpec(pol, econ), model, cfg) <= econ.c0 + tol
