"""Scalar distribution functions used for inference.

Implemented from scratch so the estimation core has no dependency beyond
numpy; the test suite checks them against independent oracles.
"""
from __future__ import annotations

import math

_SQRT2 = math.sqrt(2.0)

# Acklam's rational approximation to the standard normal quantile,
# refined below to near machine precision with one Halley step.
_A = (-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
      1.383577518672690e+02, -3.066479806614716e+01, 2.506628277459239e+00)
_B = (-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
      6.680131188771972e+01, -1.328068155288572e+01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
      -2.549732539343734e+00, 4.374664141464968e+00, 2.938163982698783e+00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
      3.754408661907416e+00)


def normal_cdf(x: float) -> float:
    """Standard normal CDF."""
    return 0.5 * math.erfc(-x / _SQRT2)


def normal_quantile(p: float) -> float:
    """Inverse standard normal CDF for p in (0, 1)."""
    if not 0.0 < p < 1.0:
        raise ValueError(f"quantile level must be in (0, 1), got {p}")
    p_low = 0.02425
    if p < p_low:
        q = math.sqrt(-2.0 * math.log(p))
        x = ((((( _C[0]*q + _C[1])*q + _C[2])*q + _C[3])*q + _C[4])*q + _C[5]) / \
            ((((_D[0]*q + _D[1])*q + _D[2])*q + _D[3])*q + 1.0)
    elif p <= 1.0 - p_low:
        q = p - 0.5
        r = q * q
        x = ((((( _A[0]*r + _A[1])*r + _A[2])*r + _A[3])*r + _A[4])*r + _A[5]) * q / \
            (((((_B[0]*r + _B[1])*r + _B[2])*r + _B[3])*r + _B[4])*r + 1.0)
    else:
        q = math.sqrt(-2.0 * math.log(1.0 - p))
        x = -((((( _C[0]*q + _C[1])*q + _C[2])*q + _C[3])*q + _C[4])*q + _C[5]) / \
            ((((_D[0]*q + _D[1])*q + _D[2])*q + _D[3])*q + 1.0)
    # One Halley refinement against the exact CDF.
    e = normal_cdf(x) - p
    u = e * math.sqrt(2.0 * math.pi) * math.exp(x * x / 2.0)
    return x - u / (1.0 + x * u / 2.0)


def _lower_gamma_series(s: float, x: float, tol: float, max_iter: int) -> float:
    """Regularized lower incomplete gamma P(s, x) by series, for x < s + 1."""
    if x <= 0.0:
        return 0.0
    term = 1.0 / s
    total = term
    a = s
    for _ in range(max_iter):
        a += 1.0
        term *= x / a
        total += term
        if abs(term) < abs(total) * tol:
            break
    return total * math.exp(-x + s * math.log(x) - math.lgamma(s))


def _upper_gamma_cf(s: float, x: float, tol: float, max_iter: int) -> float:
    """Regularized upper incomplete gamma Q(s, x) by Lentz continued fraction."""
    tiny = 1e-300
    b = x + 1.0 - s
    c = 1.0 / tiny
    d = 1.0 / b
    h = d
    for i in range(1, max_iter + 1):
        an = -i * (i - s)
        b += 2.0
        d = an * d + b
        if abs(d) < tiny:
            d = tiny
        c = b + an / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < tol:
            break
    return h * math.exp(-x + s * math.log(x) - math.lgamma(s))


def regularized_gamma_upper(s: float, x: float, tol: float = 1e-12,
                            max_iter: int = 500) -> float:
    """Q(s, x) = Gamma(s, x) / Gamma(s), the upper tail of the gamma integral."""
    if s <= 0.0:
        raise ValueError("shape must be positive")
    if x <= 0.0:
        return 1.0
    if x < s + 1.0:
        return 1.0 - _lower_gamma_series(s, x, tol, max_iter)
    return _upper_gamma_cf(s, x, tol, max_iter)


def chi2_survival(x: float, df: int) -> float:
    """Upper-tail probability P(X > x) for a chi-square variable with df dof."""
    if df < 1:
        raise ValueError("degrees of freedom must be >= 1")
    return regularized_gamma_upper(df / 2.0, x / 2.0)
