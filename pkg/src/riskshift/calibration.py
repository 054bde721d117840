"""Fit the one-period model to stand-alone Solvency II capital charges.

The market and insurance charges are 99.5% value-at-risk figures on a
normalised scale.  Under ``c0 + p0 = 1`` the market equation fixes the
monetary scale ``s``; the insurance equation together with ``p0 = E[X]``
then pins the lognormal loss parameters.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np
from scipy.optimize import brentq

from .dist import (
    DEFAULT_QUAD,
    MarketModel,
    McConfig,
    QuadratureConfig,
    expect,
    normal_cdf,
    normal_quantile,
    sample,
)


class CalibrationError(ValueError):
    pass


@dataclass(frozen=True)
class CalibrationInput:
    scr_mkt: float = 2508.0
    scr_ins: float = 4332.0
    scr_corr: float = 0.25
    alpha0: float = 1.0 / 7.0
    mean_R: float = 0.04
    sd_R: float = 0.16
    yz_corr: float = -0.25
    var_level: float = 0.995
    trunc_k: float = 8.0

    def __post_init__(self):
        for name in ("scr_mkt", "scr_ins", "alpha0", "sd_R"):
            if not getattr(self, name) > 0:
                raise CalibrationError(f"{name} must be positive")
        if not self.mean_R > -1:
            raise CalibrationError("mean_R must exceed -1")
        if not 0.5 < self.var_level < 1:
            raise CalibrationError("var_level must lie in (0.5, 1)")
        if not -1 < self.yz_corr < 1 or not -1 <= self.scr_corr <= 1:
            raise CalibrationError("correlations must lie in (-1, 1)")

    @classmethod
    def from_mapping(cls, values: dict) -> "CalibrationInput":
        known = {f.name for f in fields(cls)}
        unknown = set(values) - known
        if unknown:
            raise CalibrationError(f"unknown calibration keys: {sorted(unknown)}")
        return cls(**{k: float(v) for k, v in values.items()})


@dataclass(frozen=True)
class CalibrationOutput:
    scale_s: float
    c0: float
    p0: float
    model: MarketModel
    scr_tot: float
    inputs: CalibrationInput = field(default_factory=CalibrationInput)


def total_scr(scr_mkt: float, scr_ins: float, corr: float = 0.25) -> float:
    return math.sqrt(scr_mkt**2 + 2.0 * corr * scr_mkt * scr_ins + scr_ins**2)


def lognormal_from_moments(mean_r: float, sd_r: float) -> tuple[float, float]:
    """(mu, sigma) of Y such that exp(Y) - 1 has the given mean and sd."""
    g = 1.0 + mean_r
    var = math.log1p(sd_r**2 / g**2)
    return math.log(g) - 0.5 * var, math.sqrt(var)


def market_var_per_unit(alpha0: float, mu_y: float, sigma_y: float, level: float) -> float:
    """VaR_level of -alpha0 * R per unit of total assets, closed form."""
    return alpha0 * -math.expm1(mu_y + sigma_y * normal_quantile(1.0 - level))


def calibrate(inp: CalibrationInput = CalibrationInput()) -> CalibrationOutput:
    mu_y, sigma_y = lognormal_from_moments(inp.mean_R, inp.sd_R)
    scr_tot = total_scr(inp.scr_mkt, inp.scr_ins, inp.scr_corr)

    s = market_var_per_unit(inp.alpha0, mu_y, sigma_y, inp.var_level) / inp.scr_mkt
    if not s > 0:
        raise CalibrationError("non-positive monetary scale")
    c0 = scr_tot * s
    p0 = 1.0 - c0
    if not p0 > 0:
        raise CalibrationError("capital charge exceeds normalised total assets")

    # ln(q/p0) = z*sigma - sigma**2/2 with q the insurance VaR level
    z = normal_quantile(inp.var_level)
    target = math.log((p0 + s * inp.scr_ins) / p0)
    disc = z * z - 2.0 * target
    if disc < 0:
        raise CalibrationError("no positive sigma_Z solves the insurance equation")
    sigma_z = z - math.sqrt(disc)
    if not sigma_z > 0:
        raise CalibrationError("no positive sigma_Z solves the insurance equation")
    # refine the closed-form root on the defining equation
    g = lambda sg: z * sg - 0.5 * sg * sg - target
    lo, hi = 0.5 * sigma_z, min(z, 1.5 * sigma_z)
    if g(lo) < 0 < g(hi):
        sigma_z = brentq(g, lo, hi, xtol=1e-16, rtol=4 * np.finfo(float).eps)
    mu_z = math.log(p0) - 0.5 * sigma_z**2

    model = MarketModel(mu_y, sigma_y, mu_z, sigma_z, inp.yz_corr, inp.trunc_k)
    return CalibrationOutput(s, c0, p0, model, scr_tot, inp)


def verify_calibration(
    out: CalibrationOutput,
    cfg: QuadratureConfig = DEFAULT_QUAD,
    mc: McConfig | None = McConfig(n_samples=1_000_000, seed=42),
) -> dict:
    """Re-evaluate the calibration equations; returns a diagnostics mapping.

    ``residuals`` holds relative residuals of the five equations.  When
    ``mc`` is given, conditional means E[R | X <= c] at nine quantiles of X
    are estimated by simulation as a check of positive conditional returns.
    """
    from .shifting import LossSpec, var
    from .utilities import EconomicParams, Policy

    inp = out.inputs
    m = out.model
    econ = EconomicParams(c0=out.c0, w0=0.0, beta=1.0)
    # market loss -alpha0 (c0 + p0) R: root of its cdf, no quantile function
    a0 = inp.alpha0 * (out.c0 + out.p0)

    def market_cdf(l):
        return normal_cdf(-(math.log1p(-l / a0) - m.mu_y) / m.sigma_y)

    market = brentq(lambda l: market_cdf(l) - inp.var_level, 0.0, a0 * (1 - 1e-15),
                    xtol=1e-18, rtol=1e-15)
    ins = var(LossSpec(Policy(0.0, out.p0), econ), inp.var_level, m, cfg)
    mean_x = expect(lambda x, r: x, m, cfg)
    mean_r = expect(lambda x, r: r, m, cfg)
    var_r = expect(lambda x, r: (r - inp.mean_R) ** 2, m, cfg)

    def rel(a, b):
        return abs(a - b) / abs(b)

    residuals = {
        "scr_mkt": rel(market, out.scale_s * inp.scr_mkt),
        "scr_ins": rel(ins, out.scale_s * inp.scr_ins),
        "scr_tot": rel(out.c0, out.scale_s * out.scr_tot),
        "premium": rel(mean_x, out.p0),
        "normalisation": abs(out.c0 + out.p0 - 1.0),
    }
    report = {
        "residuals": residuals,
        "market_var": market,
        "insurance_var": ins,
        "mean_R": mean_r,
        "sd_R": math.sqrt(var_r),
    }
    if mc is not None:
        x, r = sample(m, mc)
        qs = np.quantile(x, np.linspace(0.1, 0.9, 9))
        report["cond_mean_R"] = [float(r[x <= c].mean()) for c in qs]
    return report


def as_dict(out: CalibrationOutput) -> dict:
    d = {
        "scale_s": out.scale_s,
        "c0": out.c0,
        "p0": out.p0,
        "scr_tot": out.scr_tot,
    }
    d.update({f"model.{k}": v for k, v in asdict(out.model).items()})
    return d


def mc_var_check(out: CalibrationOutput, mc: McConfig = McConfig(),
                 cfg: QuadratureConfig = DEFAULT_QUAD) -> dict:
    """Sample quantile of ``X - p0`` against the quadrature VaR.

    The standard error of the sample quantile is ``sqrt(q(1-q)/n) / f`` with
    ``f`` the loss density at the VaR (central difference of the cdf).
    """
    from .shifting import LossSpec, loss_cdf, var
    from .utilities import EconomicParams, Policy

    q = out.inputs.var_level
    loss = LossSpec(Policy(0.0, out.p0), EconomicParams(c0=out.c0, w0=0.0, beta=1.0))
    quad = var(loss, q, out.model, cfg)
    h = 1e-5 * out.p0
    dens = (loss_cdf(loss, quad + h, out.model, cfg) - loss_cdf(loss, quad - h, out.model, cfg)) / (2 * h)
    x, _ = sample(out.model, mc)
    emp = float(np.quantile(x - out.p0, q))
    se = math.sqrt(q * (1 - q) / mc.n_samples) / dens
    return {"quadrature": quad, "monte_carlo": emp, "stderr": se, "z": (emp - quad) / se}
