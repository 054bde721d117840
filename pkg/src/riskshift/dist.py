"""Expectation engine for the truncated bivariate lognormal (X, R) model.

``R = exp(Y) - 1`` and ``X = exp(Z)`` with ``(Y, Z)`` jointly normal.  Both
coordinates are driven by independent standard normals ``xi1, xi2``::

    Y = mu_y + sigma_y * xi1
    Z = mu_z + sigma_z * (rho * xi1 + sqrt(1 - rho**2) * xi2)

truncated to ``|xi_i| <= trunc_k`` without renormalising.  All expectations
are integrals over the square ``[-k, k]**2`` against the standard normal
density.  Inner integrals over ``xi2`` are done in closed form where possible
and otherwise by composite Gauss-Legendre split at the solvency kink.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Optional

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy import special

SQRT2PI = math.sqrt(2.0 * math.pi)


class EvaluationError(ArithmeticError):
    """An integrand produced a non-finite value."""


# --------------------------------------------------------------------------
# normal special functions


def normal_cdf(x):
    """Standard normal distribution function (scalar or array)."""
    return special.ndtr(x)


def normal_quantile(u):
    """Inverse of :func:`normal_cdf`; ``u`` must lie strictly inside (0, 1)."""
    arr = np.asarray(u, dtype=float)
    if np.any(~((arr > 0.0) & (arr < 1.0))):
        raise ValueError(f"normal_quantile: argument outside (0, 1): {u!r}")
    out = special.ndtri(arr)
    return float(out) if np.ndim(out) == 0 else out


def normal_pdf(x):
    return np.exp(-0.5 * np.square(x)) / SQRT2PI


# --------------------------------------------------------------------------
# configuration types


@dataclass(frozen=True)
class MarketModel:
    """Law of (X, R) through the normal parameters of (Y, Z)."""

    mu_y: float
    sigma_y: float
    mu_z: float
    sigma_z: float
    rho_corr: float
    trunc_k: float = 8.0

    def __post_init__(self):
        if not self.sigma_y > 0 or not self.sigma_z > 0:
            raise ValueError("sigma_y and sigma_z must be positive")
        if not abs(self.rho_corr) < 1:
            raise ValueError("rho_corr must lie in (-1, 1)")
        if not self.trunc_k >= 6:
            raise ValueError("trunc_k must be at least 6")

    @property
    def cond_scale(self) -> float:
        """Standard deviation of Z given xi1."""
        return self.sigma_z * math.sqrt(1.0 - self.rho_corr**2)

    def cond_loc(self, xi1):
        """Mean of Z given xi1."""
        return self.mu_z + self.sigma_z * self.rho_corr * xi1

    def mean_x(self) -> float:
        """Untruncated lognormal mean of X."""
        return math.exp(self.mu_z + 0.5 * self.sigma_z**2)

    def mean_r(self) -> float:
        return math.exp(self.mu_y + 0.5 * self.sigma_y**2) - 1.0


@dataclass(frozen=True)
class QuadratureConfig:
    outer_panels: int = 32
    nodes_per_panel: int = 16
    inner_panels: int = 4
    rel_tol: float = 1e-10

    def __post_init__(self):
        if self.outer_panels < 4 or self.nodes_per_panel < 8 or self.inner_panels < 2:
            raise ValueError("quadrature node counts too small")
        if not 0 < self.rel_tol <= 1e-6:
            raise ValueError("rel_tol must lie in (0, 1e-6]")

    def refined(self) -> "QuadratureConfig":
        return QuadratureConfig(
            2 * self.outer_panels, self.nodes_per_panel, 2 * self.inner_panels, self.rel_tol
        )


@dataclass(frozen=True)
class McConfig:
    n_samples: int = 10_000_000
    seed: int = 42

    def __post_init__(self):
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")


DEFAULT_QUAD = QuadratureConfig()


# --------------------------------------------------------------------------
# Gauss-Legendre rules


@lru_cache(maxsize=None)
def _gl(n: int):
    x, w = leggauss(n)
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def composite_rule(a: float, b: float, panels: int, nodes: int):
    """Composite Gauss-Legendre nodes and weights on ``[a, b]``."""
    x, w = _gl(nodes)
    edges = np.linspace(a, b, panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    pts = (mid[:, None] + half[:, None] * x[None, :]).ravel()
    wts = (half[:, None] * w[None, :]).ravel()
    return pts, wts


def interval_rule(lo, hi, panels: int, nodes: int):
    """Row-wise composite rules on a batch of intervals ``[lo_i, hi_i]``.

    Returns ``(pts, wts)`` of shape ``(len(lo), panels * nodes)``.  Empty
    intervals (``hi <= lo``) get zero weights.
    """
    lo = np.asarray(lo, dtype=float)
    hi = np.maximum(np.asarray(hi, dtype=float), lo)
    x, w = _gl(nodes)
    u = (np.arange(panels)[:, None] + 0.5 * (x[None, :] + 1.0)).ravel() / panels
    wu = np.tile(w, panels) / (2.0 * panels)
    width = (hi - lo)[:, None]
    return lo[:, None] + width * u[None, :], width * wu[None, :]


@dataclass(frozen=True)
class OuterGrid:
    """Outer nodes over xi1 with density-weighted weights and derived values."""

    xi1: np.ndarray
    weight: np.ndarray  # includes phi(xi1)
    r: np.ndarray  # exp(y) - 1
    growth: np.ndarray  # exp(y) = 1 + r
    loc: np.ndarray  # E[Z | xi1]
    scale: float  # sd of Z | xi1
    k: float


_GRID_CACHE: dict = {}


def outer_grid(model: MarketModel, cfg: QuadratureConfig = DEFAULT_QUAD) -> OuterGrid:
    key = (model, cfg.outer_panels, cfg.nodes_per_panel)
    grid = _GRID_CACHE.get(key)
    if grid is None:
        k = model.trunc_k
        xi, w = composite_rule(-k, k, cfg.outer_panels, cfg.nodes_per_panel)
        growth = np.exp(model.mu_y + model.sigma_y * xi)
        grid = OuterGrid(
            xi1=xi,
            weight=w * normal_pdf(xi),
            r=growth - 1.0,
            growth=growth,
            loc=model.cond_loc(xi),
            scale=model.cond_scale,
            k=k,
        )
        if len(_GRID_CACHE) > 64:
            _GRID_CACHE.clear()
        _GRID_CACHE[key] = grid
    return grid


# --------------------------------------------------------------------------
# truncated standard-normal building blocks


def trunc_mass(lo, hi, k: float):
    """P[lo < xi <= hi, |xi| <= k] for standard normal xi."""
    lo = np.clip(lo, -k, k)
    hi = np.clip(hi, -k, k)
    return np.where(hi > lo, special.ndtr(hi) - special.ndtr(lo), 0.0)


def trunc_exp_moment(lo, hi, b, k: float):
    """E[exp(b xi) 1{lo < xi <= hi, |xi| <= k}]."""
    lo = np.clip(lo, -k, k)
    hi = np.clip(hi, -k, k)
    val = math.exp(0.5 * b * b) * (special.ndtr(hi - b) - special.ndtr(lo - b))
    return np.where(hi > lo, val, 0.0)


def kink_coordinate(strike, loc, scale):
    """xi2 at which exp(loc + scale*xi2) equals ``strike``; -inf for strike <= 0."""
    strike = np.asarray(strike, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(strike > 0, (np.log(np.where(strike > 0, strike, 1.0)) - loc) / scale, -np.inf)


def trunc_put(strike, loc, scale, k: float):
    """E[(K - exp(loc + scale*xi))^+ ; |xi| <= k], vectorised over K and loc."""
    t = kink_coordinate(strike, loc, scale)
    below = trunc_mass(-np.inf, t, k)
    mom = np.exp(loc) * trunc_exp_moment(-np.inf, t, scale, k)
    return np.where(np.asarray(strike) > 0, strike * below - mom, 0.0)


def trunc_call(strike, loc, scale, k: float):
    """E[(exp(loc + scale*xi) - K)^+ ; |xi| <= k]; strikes may be negative."""
    t = kink_coordinate(strike, loc, scale)
    above = trunc_mass(t, np.inf, k)
    mom = np.exp(loc) * trunc_exp_moment(t, np.inf, scale, k)
    return mom - strike * above


# --------------------------------------------------------------------------
# closed-form lognormal options (untruncated)


def lognormal_put(strike: float, mu: float, sigma: float) -> float:
    """E[(K - exp(N))^+] for N ~ normal(mu, sigma**2)."""
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    if strike <= 0:
        return 0.0
    if sigma == 0:
        return max(strike - math.exp(mu), 0.0)
    d = (math.log(strike) - mu) / sigma
    return float(strike * special.ndtr(d) - math.exp(mu + 0.5 * sigma**2) * special.ndtr(d - sigma))


def lognormal_call(strike: float, mu: float, sigma: float) -> float:
    """E[(exp(N) - K)^+] via put-call parity."""
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    mean = math.exp(mu + 0.5 * sigma**2)
    if strike <= 0:
        return mean - strike
    return lognormal_put(strike, mu, sigma) + mean - strike


# --------------------------------------------------------------------------
# generic nested quadrature


def expect(
    f: Callable[[np.ndarray, np.ndarray], np.ndarray],
    model: MarketModel,
    cfg: QuadratureConfig = DEFAULT_QUAD,
    kink: Optional[Callable[[np.ndarray], np.ndarray]] = None,
) -> float:
    """Integrate ``f(x, r)`` against the truncated joint law of (X, R).

    ``f`` is called with 2-D arrays (one row per outer node).  ``kink``, if
    given, maps ``r`` to the x-location of a kink of ``f``; the inner
    integral is then split exactly there.
    """
    g = outer_grid(model, cfg)
    k = g.k
    n = cfg.inner_panels
    m = cfg.nodes_per_panel
    lo = np.full_like(g.xi1, -k)
    hi = np.full_like(g.xi1, k)
    if kink is None:
        pts, wts = interval_rule(lo, hi, 2 * n, m)
    else:
        t = np.clip(kink_coordinate(kink(g.r), g.loc, g.scale), -k, k)
        p1, w1 = interval_rule(lo, t, n, m)
        p2, w2 = interval_rule(t, hi, n, m)
        pts, wts = np.hstack([p1, p2]), np.hstack([w1, w2])
    x = np.exp(g.loc[:, None] + g.scale * pts)
    r = np.broadcast_to(g.r[:, None], x.shape)
    vals = np.asarray(f(x, r), dtype=float)
    if not np.all(np.isfinite(vals)):
        i, j = np.argwhere(~np.isfinite(vals))[0]
        raise EvaluationError(
            f"non-finite integrand at x={x[i, j]!r}, r={r[i, j]!r}: {vals[i, j]!r}"
        )
    inner = np.sum(vals * wts * normal_pdf(pts), axis=1)
    return float(np.dot(g.weight, inner))


# --------------------------------------------------------------------------
# Monte Carlo backend


def _trunc_normals(rng: np.random.Generator, n: int, k: float) -> np.ndarray:
    out = rng.standard_normal(n)
    bad = np.abs(out) > k
    while bad.any():
        out[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(out) > k
    return out


def sample_normals(model: MarketModel, cfg: McConfig):
    """Truncated driver normals ``(xi1, xi2)`` for the given seed."""
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    xi1 = _trunc_normals(rng, cfg.n_samples, model.trunc_k)
    xi2 = _trunc_normals(rng, cfg.n_samples, model.trunc_k)
    return xi1, xi2


def sample(model: MarketModel, cfg: McConfig):
    """Draw ``cfg.n_samples`` pairs; returns arrays ``(x, r)``."""
    xi1, xi2 = sample_normals(model, cfg)
    r = np.expm1(model.mu_y + model.sigma_y * xi1)
    x = np.exp(model.cond_loc(xi1) + model.cond_scale * xi2)
    return x, r


def mc_mean(values: np.ndarray):
    """Sample mean and its standard error."""
    values = np.asarray(values, dtype=float)
    return float(values.mean()), float(values.std(ddof=1) / math.sqrt(values.size))
