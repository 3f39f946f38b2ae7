"""Paired two-sided t-test with a self-contained Student t distribution."""

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateSample

ALPHA = 0.05
_EPS = 1e-15
_TINY = 1e-300
_MAX_TERMS = 10_000


def _betacf(a, b, x):
    """Continued fraction for the regularized incomplete beta (modified Lentz)."""
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    d = 1.0 / (d if abs(d) > _TINY else _TINY)
    h = d
    for m in range(1, _MAX_TERMS + 1):
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
    raise ArithmeticError("incomplete beta continued fraction did not converge")


def betainc(a, b, x):
    """Regularized incomplete beta function I_x(a, b)."""
    if not 0.0 <= x <= 1.0:
        raise ValueError("x must lie in [0, 1]")
    if x == 0.0 or x == 1.0:
        return x
    log_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                 + a * math.log(x) + b * math.log1p(-x))
    front = math.exp(log_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def t_sf_two_sided(t, df):
    """P(|T| >= |t|) for Student's t with ``df`` degrees of freedom."""
    if math.isinf(t):
        return 0.0
    return betainc(0.5 * df, 0.5, df / (df + t * t))


def t_cdf(t, df):
    tail = 0.5 * t_sf_two_sided(t, df)
    return 1.0 - tail if t > 0 else tail


@dataclass(frozen=True)
class TTestResult:
    t: float
    p: float
    significant: bool
    n: int


def paired_t_test(a, b, alpha=ALPHA):
    """Two-sided paired t-test of ``a`` against ``b``.

    Raises
    ------
    ValueError
        If the samples differ in length or have fewer than two pairs.
    DegenerateSample
        If every difference is identical, so the sample variance vanishes.
    """
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ValueError(f"paired samples differ in length: {a.size} vs {b.size}")
    n = a.size
    if n < 2:
        raise ValueError("paired t-test needs at least two pairs")
    diff = a - b
    sd = float(np.std(diff, ddof=1))
    if sd == 0.0 or np.all(diff == diff[0]):
        raise DegenerateSample("all paired differences are identical; the t statistic is undefined")
    t = float(diff.mean()) / (sd / math.sqrt(n))
    p = min(1.0, t_sf_two_sided(t, n - 1))
    return TTestResult(t, p, p < alpha, n)
