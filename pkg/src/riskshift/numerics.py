"""Small one-dimensional search routines shared by the solvers."""

from __future__ import annotations

import math
from typing import Callable

from scipy.optimize import brentq

INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0


class NumericError(ArithmeticError):
    pass


def golden_section_max(f: Callable[[float], float], a: float, b: float, tol: float = 1e-9,
                       max_iter: int = 200) -> tuple[float, float, int]:
    """Maximise a unimodal ``f`` on ``[a, b]``.

    Returns ``(x, f(x), iterations)``; the endpoints are compared against the
    interior estimate so that monotone objectives return the boundary.
    """
    fa, fb = f(a), f(b)
    c = b - INV_PHI * (b - a)
    d = a + INV_PHI * (b - a)
    fc, fd = f(c), f(d)
    lo, hi = a, b
    it = 0
    while hi - lo > tol and it < max_iter:
        it += 1
        if fc >= fd:
            hi, d, fd = d, c, fc
            c = hi - INV_PHI * (hi - lo)
            fc = f(c)
        else:
            lo, c, fc = c, d, fd
            d = lo + INV_PHI * (hi - lo)
            fd = f(d)
    x, fx = (c, fc) if fc >= fd else (d, fd)
    if fa >= fx and fa >= fb:
        return a, fa, it
    if fb >= fx:
        return b, fb, it
    return x, fx, it


def ternary_search_max(f: Callable[[float], float], a: float, b: float, tol: float = 1e-9,
                       max_iter: int = 300) -> tuple[float, float, int]:
    """Maximise a quasiconcave ``f`` on ``[a, b]`` by interval trisection."""
    lo, hi = a, b
    it = 0
    while hi - lo > tol and it < max_iter:
        it += 1
        m1 = lo + (hi - lo) / 3.0
        m2 = hi - (hi - lo) / 3.0
        if f(m1) < f(m2):
            lo = m1
        else:
            hi = m2
    x = 0.5 * (lo + hi)
    best = max(((x, f(x)), (a, f(a)), (b, f(b))), key=lambda t: t[1])
    return best[0], best[1], it


def bisect_increasing(f: Callable[[float], float], lo: float, hi: float, xtol: float = 1e-12) -> float:
    """Root of an increasing ``f`` with ``f(lo) <= 0 <= f(hi)``."""
    flo, fhi = f(lo), f(hi)
    if flo > 0 or fhi < 0:
        raise NumericError(f"root not bracketed on [{lo!r}, {hi!r}]: f={flo!r}, {fhi!r}")
    if flo == 0:
        return lo
    if fhi == 0:
        return hi
    return brentq(f, lo, hi, xtol=xtol, rtol=1e-15, maxiter=500)


def expand_upper(f: Callable[[float], float], lo: float, step: float, factor: float = 2.0,
                 max_steps: int = 200) -> float:
    """Smallest probed ``hi = lo + step * factor**k`` with ``f(hi) >= 0``."""
    for _ in range(max_steps):
        hi = lo + step
        if f(hi) >= 0:
            return hi
        step *= factor
    raise NumericError("upper bracket expansion failed")


def scan_argmax(f: Callable[[float], float], a: float, b: float, n: int = 128):
    """Grid maximiser of ``f`` on ``n`` equally spaced points of ``[a, b]``."""
    best_x, best_f = a, -math.inf
    values = []
    for i in range(n):
        x = a + (b - a) * i / (n - 1)
        fx = f(x)
        values.append(fx)
        if fx > best_f:
            best_x, best_f = x, fx
    return best_x, best_f, values
