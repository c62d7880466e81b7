"""Standard-normal CDF and quantile without environment-dependent libraries.

``norm_cdf`` uses ``math.erfc`` (correctly rounded to a few ulps on every
CPython build). ``norm_ppf`` starts from Acklam's rational approximation
(relative error below 1.15e-9) and applies one Halley step against
``norm_cdf``, which brings the error to ~1e-15 on (1e-300, 1 - 1e-16).
"""

from __future__ import annotations

import math

_A = (-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
      1.383577518672690e+02, -3.066479806614716e+01, 2.506628277459239e+00)
_B = (-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
      6.680131188771972e+01, -1.328068155288572e+01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
      -2.549732539343734e+00, 4.374664141464968e+00, 2.938163982698783e+00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
      3.754408661907416e+00)
_P_LOW = 0.02425


def norm_cdf(u: float) -> float:
    return 0.5 * math.erfc(-u / math.sqrt(2.0))


def _acklam(p: float) -> float:
    if p < _P_LOW:
        q = math.sqrt(-2.0 * math.log(p))
        return (((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]) / \
               ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0)
    if p > 1.0 - _P_LOW:
        return -_acklam(1.0 - p)
    q = p - 0.5
    r = q * q
    return (((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]) * q / \
           (((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1.0)


def norm_ppf(p: float) -> float:
    """Quantile of the standard normal, p in (0, 1)."""
    if not 0.0 < p < 1.0:
        raise ValueError("p must lie in (0, 1)")
    x = _acklam(p)
    # Halley refinement
    e = norm_cdf(x) - p
    u = e * math.sqrt(2.0 * math.pi) * math.exp(0.5 * x * x)
    return x - u / (1.0 + 0.5 * x * u)


def z_two_sided(level: float) -> float:
    """z_{alpha/2} for a two-sided interval of the given coverage level."""
    if not 0.0 < level < 1.0:
        raise ValueError("level must lie in (0, 1)")
    return norm_ppf(1.0 - 0.5 * (1.0 - level))


def loglog_slope(xs, ys) -> tuple:
    """OLS slope of log y on log x and its standard error (0 for an exact fit)."""
    import numpy as np

    lx = np.log(np.asarray(xs, dtype=float))
    ly = np.log(np.asarray(ys, dtype=float))
    k = lx.size
    xc = lx - lx.mean()
    sxx = float(xc @ xc)
    slope = float(xc @ (ly - ly.mean())) / sxx
    if k < 3:
        return slope, float("nan")
    resid = ly - ly.mean() - slope * xc
    return slope, math.sqrt(float(resid @ resid) / (k - 2) / sxx)
