"""Shareholder and policyholder objectives for the one-period stock insurer.

Two coordinate systems are used throughout: policies ``(alpha, p)`` and
capital coordinates ``(v, w) = ((c0 + p) * alpha, c0 + p)``.  All
expectations are assembled from a single pass over the outer grid
(:func:`evaluate`), in which the solvency event ``X <= w + v R`` splits the
inner integral.

The policyholder has CARA utility ``u(c) = -exp(-beta * c)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .dist import (
    DEFAULT_QUAD,
    EvaluationError,
    MarketModel,
    McConfig,
    QuadratureConfig,
    interval_rule,
    kink_coordinate,
    mc_mean,
    normal_pdf,
    outer_grid,
    sample,
    trunc_mass,
    trunc_put,
)

# "limit p -> -c0" evaluations
P_FLOOR_EPS = 1e-9


@dataclass(frozen=True)
class EconomicParams:
    c0: float
    w0: float = 1.34
    beta: float = 30.0

    def __post_init__(self):
        if not self.c0 > 0:
            raise ValueError("c0 must be positive")
        if not self.beta > 0:
            raise ValueError("beta must be positive")

    def u(self, c):
        return -np.exp(-self.beta * np.asarray(c, dtype=float))

    def u_prime(self, c):
        return self.beta * np.exp(-self.beta * np.asarray(c, dtype=float))


@dataclass(frozen=True)
class Policy:
    alpha: float
    p: float

    def check(self, c0: float) -> "Policy":
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha={self.alpha!r} outside [0, 1]")
        if not self.p > -c0:
            raise ValueError(f"premium p={self.p!r} must exceed -c0={-c0!r}")
        return self


@dataclass(frozen=True)
class CapitalCoords:
    v: float
    w: float


@dataclass(frozen=True)
class UtilityPair:
    u_sh: float
    u_ph: float
    solvency_prob: float


def to_vw(pol: Policy, c0: float) -> CapitalCoords:
    w = c0 + pol.p
    if not w > 0:
        raise ValueError("total assets c0 + p must be positive")
    return CapitalCoords(pol.alpha * w, w)


def from_vw(coords: CapitalCoords, c0: float) -> Policy:
    v, w = coords.v, coords.w
    if not w > 0:
        raise ValueError(f"w={w!r} must be positive")
    if not 0.0 <= v <= w:
        raise ValueError(f"v={v!r} must lie in [0, w={w!r}]")
    return Policy(v / w, w - c0)


# --------------------------------------------------------------------------
# evaluation core


@dataclass(frozen=True)
class Evaluation:
    """Expectations at one point ``(v, w)``; policyholder terms scaled.

    ``g_*`` terms are expectations against ``exp(beta * (X - K)^+)`` on the
    insolvency event, where ``K = w + v R``, divided by ``exp(log_scale)``.
    """

    v: float
    w: float
    u_sh: float  # E[(K - X)^+]
    prob_s: float  # P[S]
    r_s: float  # E[R 1_S]
    log_scale: float
    g_ins: float  # E[exp(beta (X - K)) 1_{S^c}] / scale
    gr_ins: float  # E[R exp(beta (X - K)) 1_{S^c}] / scale
    prob_total: float  # mass of the truncated square

    @property
    def log_g(self) -> float:
        """log E[exp(beta (X - K)^+)]."""
        return math.log(self.prob_s * math.exp(-self.log_scale) + self.g_ins) + self.log_scale


@lru_cache(maxsize=4096)
def _evaluate(v: float, w: float, beta: float, model: MarketModel, cfg: QuadratureConfig) -> Evaluation:
    g = outer_grid(model, cfg)
    k = g.k
    strike = w + v * g.r
    if np.any(strike <= 0):
        raise EvaluationError("non-positive solvency boundary")
    t = np.clip(kink_coordinate(strike, g.loc, g.scale), -k, k)
    mass_s = trunc_mass(-np.inf, t, k)
    put = trunc_put(strike, g.loc, g.scale, k)

    pts, wts = interval_rule(t, np.full_like(t, k), cfg.inner_panels, cfg.nodes_per_panel)
    expo = beta * (np.exp(g.loc[:, None] + g.scale * pts) - strike[:, None]) - 0.5 * pts * pts
    log_scale = float(np.max(expo)) if expo.size else 0.0
    log_scale = max(log_scale, 0.0)
    inner = np.sum(np.exp(expo - log_scale) * wts, axis=1) / math.sqrt(2.0 * math.pi)
    if not np.all(np.isfinite(inner)):
        raise EvaluationError(f"non-finite policyholder integrand at v={v!r}, w={w!r}")

    wgt = g.weight
    total = float(np.sum(wgt) * trunc_mass(-np.inf, np.inf, k))
    return Evaluation(
        v=v,
        w=w,
        u_sh=float(np.dot(wgt, put)),
        prob_s=float(np.dot(wgt, mass_s)),
        r_s=float(np.dot(wgt, g.r * mass_s)),
        log_scale=log_scale,
        g_ins=float(np.dot(wgt, inner)),
        gr_ins=float(np.dot(wgt, g.r * inner)),
        prob_total=total,
    )


def evaluate_vw(v: float, w: float, econ: EconomicParams, model: MarketModel,
                cfg: QuadratureConfig = DEFAULT_QUAD) -> Evaluation:
    if not w > 0 or not 0.0 <= v <= w * (1 + 1e-12):
        raise ValueError(f"(v, w)=({v!r}, {w!r}) outside 0 <= v <= w, w > 0")
    return _evaluate(float(v), float(w), float(econ.beta), model, cfg)


def evaluate(pol: Policy, econ: EconomicParams, model: MarketModel,
             cfg: QuadratureConfig = DEFAULT_QUAD) -> Evaluation:
    pol.check(econ.c0)
    w = econ.c0 + pol.p
    return _evaluate(float(pol.alpha * w), float(w), float(econ.beta), model, cfg)


# --------------------------------------------------------------------------
# (v, w) functionals


def _ph_prefactor_log(ev: Evaluation, econ: EconomicParams) -> float:
    # log of exp(-beta (w0 + c0 - w)) * exp(log_scale)
    return -econ.beta * (econ.w0 + econ.c0 - ev.w) + ev.log_scale


def vw_shareholder(v, w, econ, model, cfg=DEFAULT_QUAD) -> float:
    return evaluate_vw(v, w, econ, model, cfg).u_sh


def vw_policyholder(v, w, econ, model, cfg=DEFAULT_QUAD) -> float:
    ev = evaluate_vw(v, w, econ, model, cfg)
    return -math.exp(-econ.beta * (econ.w0 + econ.c0 - w) + ev.log_g)


def vw_gradients(v, w, econ, model, cfg=DEFAULT_QUAD) -> tuple[float, float, float, float]:
    """(dV_SH/dv, dV_SH/dw, dV_PH/dv, dV_PH/dw)."""
    ev = evaluate_vw(v, w, econ, model, cfg)
    b = econ.beta
    d_v_ph = b * math.exp(_ph_prefactor_log(ev, econ)) * ev.gr_ins
    d_w_ph = -b * math.exp(-b * (econ.w0 + econ.c0 - w)) * ev.prob_s
    return ev.r_s, ev.prob_s, d_v_ph, d_w_ph


def vw_foc(v, w, econ, model, cfg=DEFAULT_QUAD) -> float:
    """E[R u'(w0 + c0 - w - (X - w - vR)^+)]."""
    ev = evaluate_vw(v, w, econ, model, cfg)
    b = econ.beta
    return b * math.exp(-b * (econ.w0 + econ.c0 - w)) * (
        ev.r_s + ev.gr_ins * math.exp(ev.log_scale)
    )


# --------------------------------------------------------------------------
# (alpha, p) functionals


def shareholder_utility(pol: Policy, econ: EconomicParams, model: MarketModel,
                        cfg: QuadratureConfig = DEFAULT_QUAD) -> float:
    """E[((c0 + p)(1 + alpha R) - X)^+]."""
    return evaluate(pol, econ, model, cfg).u_sh


def log_neg_policyholder_utility(pol: Policy, econ: EconomicParams, model: MarketModel,
                                 cfg: QuadratureConfig = DEFAULT_QUAD) -> float:
    """log(-U_PH); finite even where U_PH itself underflows."""
    ev = evaluate(pol, econ, model, cfg)
    return -econ.beta * (econ.w0 - pol.p) + ev.log_g


def policyholder_utility(pol: Policy, econ: EconomicParams, model: MarketModel,
                         cfg: QuadratureConfig = DEFAULT_QUAD) -> float:
    """E[u(w0 - p - (X - (c0 + p)(1 + alpha R))^+)] for CARA u."""
    return -math.exp(log_neg_policyholder_utility(pol, econ, model, cfg))


def utilities(pol: Policy, econ: EconomicParams, model: MarketModel,
              cfg: QuadratureConfig = DEFAULT_QUAD) -> UtilityPair:
    ev = evaluate(pol, econ, model, cfg)
    u_ph = -math.exp(-econ.beta * (econ.w0 - pol.p) + ev.log_g)
    return UtilityPair(ev.u_sh, u_ph, ev.prob_s)


def solvency_probability(pol: Policy, econ: EconomicParams, model: MarketModel,
                         cfg: QuadratureConfig = DEFAULT_QUAD) -> float:
    return evaluate(pol, econ, model, cfg).prob_s


def gradients(pol: Policy, econ: EconomicParams, model: MarketModel,
              cfg: QuadratureConfig = DEFAULT_QUAD) -> tuple[float, float, float, float]:
    """Closed-form partials (dU_SH/da, dU_SH/dp, dU_PH/da, dU_PH/dp)."""
    ev = evaluate(pol, econ, model, cfg)
    w = econ.c0 + pol.p
    b = econ.beta
    # E[R u'(...) 1_{S^c}]
    ru_ins = b * math.exp(_ph_prefactor_log(ev, econ)) * ev.gr_ins
    da_sh = w * ev.r_s
    dp_sh = ev.prob_s + pol.alpha * ev.r_s
    da_ph = w * ru_ins
    dp_ph = -b * math.exp(-b * (econ.w0 - pol.p)) * ev.prob_s + pol.alpha * ru_ins
    return da_sh, dp_sh, da_ph, dp_ph


def foc_residual(pol: Policy, econ: EconomicParams, model: MarketModel,
                 cfg: QuadratureConfig = DEFAULT_QUAD) -> float:
    """E[R u'(w0 - p - (X - (c0 + p)(1 + alpha R))^+)]."""
    pol.check(econ.c0)
    w = econ.c0 + pol.p
    return vw_foc(pol.alpha * w, w, econ, model, cfg)


def certainty_equivalent(u_ph: float, econ: EconomicParams) -> float:
    """Sure wealth with the same CARA utility as ``u_ph``."""
    if not u_ph < 0:
        raise ValueError("CARA utility values must be negative")
    return -math.log(-u_ph) / econ.beta


def certainty_equivalent_of(pol: Policy, econ: EconomicParams, model: MarketModel,
                            cfg: QuadratureConfig = DEFAULT_QUAD) -> float:
    """CE computed from log(-U_PH) directly (no underflow for large beta)."""
    return -log_neg_policyholder_utility(pol, econ, model, cfg) / econ.beta


def reference_utility(econ: EconomicParams, model: MarketModel, extra_assets: float,
                      cfg: QuadratureConfig = DEFAULT_QUAD) -> float:
    """E[u(w0 + extra_assets - X)], e.g. the no-insurance level with 0."""
    g = outer_grid(model, cfg)
    k = g.k
    pts, wts = interval_rule(np.full_like(g.xi1, -k), np.full_like(g.xi1, k),
                             2 * cfg.inner_panels, cfg.nodes_per_panel)
    x = np.exp(g.loc[:, None] + g.scale * pts)
    vals = econ.u(econ.w0 + extra_assets - x) * normal_pdf(pts)
    return float(np.dot(g.weight, np.sum(vals * wts, axis=1)))


def mc_utilities(pol: Policy, econ: EconomicParams, model: MarketModel, mc: McConfig) -> dict:
    """Simulation estimates ``(mean, stderr)`` of U_SH, U_PH and P[S]."""
    pol.check(econ.c0)
    x, r = sample(model, mc)
    assets = (econ.c0 + pol.p) * (1.0 + pol.alpha * r)
    shortfall = np.maximum(x - assets, 0.0)
    return {
        "u_sh": mc_mean(np.maximum(assets - x, 0.0)),
        "u_ph": mc_mean(econ.u(econ.w0 - pol.p - shortfall)),
        "solvency_prob": mc_mean((shortfall == 0.0).astype(float)),
    }
