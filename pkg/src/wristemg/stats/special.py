"""Distribution tails used by the statistical tests.

The regularized incomplete beta function is evaluated by Lentz's modified
continued fraction; F and t tails follow from it.  The studentized range
distribution is a double integral: the range probability of k standard
normals (inner, over z) averaged over the chi-distributed pooled scale
(outer, over s), both by composite Gauss-Legendre quadrature refined until
successive estimates agree to the requested tolerance.
"""

from __future__ import annotations

import math
from functools import lru_cache

import numpy as np
from scipy.optimize import brentq
from scipy.special import gammaln, ndtr

from ..errors import StatsError

_EPS = 1e-16
_TINY = 1e-300
_MAX_ITER = 10000


def _betacf(a: float, b: float, x: float) -> float:
    """Continued fraction for I_x(a, b), modified Lentz."""
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    d = 1.0 / (d if abs(d) > _TINY else _TINY)
    h = d
    for m in range(1, _MAX_ITER + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > _TINY else _TINY)
        c = 1.0 + aa / c
        c = c if abs(c) > _TINY else _TINY
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > _TINY else _TINY)
        c = 1.0 + aa / c
        c = c if abs(c) > _TINY else _TINY
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            return h
    raise StatsError(f"incomplete beta continued fraction did not converge (a={a}, b={b}, x={x})")


def betainc(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta I_x(a, b) for a, b > 0 and 0 <= x <= 1."""
    if a <= 0 or b <= 0:
        raise StatsError("betainc needs a > 0 and b > 0")
    if not 0.0 <= x <= 1.0:
        raise StatsError(f"betainc argument {x} outside [0, 1]")
    if x == 0.0 or x == 1.0:
        return float(x)
    log_front = gammaln(a + b) - gammaln(a) - gammaln(b) + a * math.log(x) + b * math.log1p(-x)
    if x < (a + 1.0) / (a + b + 2.0):
        return float(math.exp(log_front) * _betacf(a, b, x) / a)
    return float(1.0 - math.exp(log_front) * _betacf(b, a, 1.0 - x) / b)


def f_sf(f: float, d1: float, d2: float) -> float:
    """P(F > f) for an F(d1, d2) variable."""
    if d1 <= 0 or d2 <= 0:
        raise StatsError("F degrees of freedom must be positive")
    if f <= 0:
        return 1.0
    if math.isinf(f):
        return 0.0
    return betainc(d2 / 2.0, d1 / 2.0, d2 / (d2 + d1 * f))


def t_sf_two_sided(t: float, df: float) -> float:
    """P(|T| > |t|) for Student's t with ``df`` degrees of freedom."""
    if df <= 0:
        raise StatsError("t degrees of freedom must be positive")
    if math.isinf(t):
        return 0.0
    return betainc(df / 2.0, 0.5, df / (df + t * t))


def t_ppf_two_sided(alpha: float, df: float) -> float:
    """Critical value c with P(|T| > c) = alpha."""
    if not 0 < alpha < 1:
        raise StatsError("alpha must be in (0, 1)")
    hi = 1.0
    while t_sf_two_sided(hi, df) > alpha:
        hi *= 2.0
    return float(brentq(lambda t: t_sf_two_sided(t, df) - alpha, 0.0, hi, xtol=1e-13, rtol=1e-15))


@lru_cache(maxsize=None)
def _gauss_legendre(n: int) -> tuple[np.ndarray, np.ndarray]:
    return np.polynomial.legendre.leggauss(n)


def _composite(f, a: float, b: float, panels: int, order: int = 10) -> float:
    nodes, weights = _gauss_legendre(order)
    edges = np.linspace(a, b, panels + 1)
    half = (edges[1:] - edges[:-1])[:, None] / 2
    mid = (edges[1:] + edges[:-1])[:, None] / 2
    pts = (mid + half * nodes).ravel()
    return float(np.sum((half * weights).ravel() * f(pts)))


def adaptive_quad(f, a: float, b: float, tol: float = 1e-8, panels: int = 8, max_panels: int = 4096) -> float:
    """Composite Gauss-Legendre, doubling panels until two estimates agree within ``tol``."""
    prev = _composite(f, a, b, panels)
    while panels < max_panels:
        panels *= 2
        cur = _composite(f, a, b, panels)
        if abs(cur - prev) < tol:
            return cur
        prev = cur
    raise StatsError("quadrature did not reach the requested tolerance")


_Z_LIMIT = 8.5


def range_cdf_normal(w: np.ndarray, k: int, tol: float = 1e-10) -> np.ndarray:
    """P(range of k iid standard normals <= w), vectorized over w."""
    w = np.atleast_1d(np.asarray(w, dtype=float))
    out = np.zeros_like(w)
    pos = w > 0
    if not pos.any():
        return out
    wp = w[pos]

    def integrand(z):
        phi = np.exp(-0.5 * z * z) / math.sqrt(2 * math.pi)
        inner = ndtr(z[None, :]) - ndtr(z[None, :] - wp[:, None])
        return phi * np.maximum(inner, 0.0) ** (k - 1)

    nodes, weights = _gauss_legendre(10)
    panels = 64
    prev = None
    while True:
        edges = np.linspace(-_Z_LIMIT, _Z_LIMIT + wp.max(), panels + 1)
        half = (edges[1:] - edges[:-1])[:, None] / 2
        mid = (edges[1:] + edges[:-1])[:, None] / 2
        pts = (mid + half * nodes).ravel()
        cur = k * integrand(pts) @ (half * weights).ravel()
        if prev is not None and np.max(np.abs(cur - prev)) < tol:
            break
        if panels >= 4096:
            raise StatsError("range integral did not converge")
        prev, panels = cur, panels * 2
    out[pos] = np.clip(cur, 0.0, 1.0)
    return out


def _scale_log_density(s: np.ndarray, df: float) -> np.ndarray:
    """log density of s = sqrt(chi2_df / df)."""
    return (
        (df / 2) * math.log(df) - gammaln(df / 2) - (df / 2 - 1) * math.log(2)
        + (df - 1) * np.log(s) - df * s * s / 2
    )


def studentized_range_cdf(q: float, k: int, df: float, tol: float = 1e-8) -> float:
    """P(Q <= q) for the studentized range with k groups and df error degrees of freedom."""
    if k < 2 or df <= 0:
        raise StatsError("studentized range needs k >= 2 and df > 0")
    if q <= 0:
        return 0.0
    if math.isinf(q):
        return 1.0
    lo = max(0.0, 1.0 - 8.0 / math.sqrt(df))
    hi = 1.0 + 8.0 / math.sqrt(df)

    def integrand(s):
        s = np.asarray(s)
        dens = np.exp(_scale_log_density(np.maximum(s, 1e-300), df))
        return dens * range_cdf_normal(q * s, k)

    return float(min(1.0, max(0.0, adaptive_quad(integrand, lo, hi, tol))))


def studentized_range_sf(q: float, k: int, df: float) -> float:
    return 1.0 - studentized_range_cdf(q, k, df)


def studentized_range_ppf(p: float, k: int, df: float) -> float:
    """q with P(Q <= q) = p."""
    if not 0 < p < 1:
        raise StatsError("probability must be in (0, 1)")
    hi = 4.0
    while studentized_range_cdf(hi, k, df) < p:
        hi *= 2.0
    return float(brentq(lambda q: studentized_range_cdf(q, k, df) - p, 0.0, hi, xtol=1e-10))
