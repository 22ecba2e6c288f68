"""Numerically stable truncated-normal CDF and inversion in the mean.

Selective confidence intervals routinely evaluate the truncated CDF 10-30
standard deviations into a tail, so all Gaussian masses are computed in
log-space via the scaled complementary error function (scipy's log_ndtr),
with the larger term factored out of differences.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import log_ndtr, ndtri

MU_CAP_SIGMAS = 1000.0  # beyond this the CI endpoint is reported infinite
_BISECT_MAX = 200


class TailDegenerateError(ArithmeticError):
    """The truncation interval carries no representable Gaussian mass."""


def _log_gauss_mass(a: float, b: float) -> float:
    """log P(a < Z < b) for standard normal Z, stable in both tails."""
    if not a < b:
        return -np.inf
    if b <= 0.0:
        # left tail: work with Phi directly
        la, lb = log_ndtr(a), log_ndtr(b)
    elif a >= 0.0:
        # right tail: use the survival function Phi(-x)
        la, lb = log_ndtr(-b), log_ndtr(-a)
    else:
        # interval straddles zero: mass = 1 - Phi(a) - Phi(-b), never tiny
        mass = -np.expm1(log_ndtr(a)) - np.exp(log_ndtr(-b))
        return np.log(mass)
    if la == -np.inf:
        return lb
    if la >= lb:
        return -np.inf
    return lb + np.log1p(-np.exp(la - lb))


@dataclass(frozen=True)
class TruncatedNormal:
    """N(mu, var) truncated to [a, b]; either bound may be infinite."""

    mu: float
    var: float
    a: float
    b: float

    def __post_init__(self):
        if not self.var > 0:
            raise ValueError("variance must be positive")
        if not self.a < self.b:
            raise ValueError("truncation bounds must satisfy a < b")

    @property
    def sigma(self) -> float:
        return float(np.sqrt(self.var))


def cdf(tn: TruncatedNormal, x: float) -> float:
    """F(x; mu, var, a, b), with x clamped to [a, b].

    Raises TailDegenerateError if the truncation mass underflows even in
    log-space, signaling the caller to widen brackets.
    """
    if x <= tn.a:
        return 0.0
    if x >= tn.b:
        return 1.0
    s = tn.sigma
    za = (tn.a - tn.mu) / s
    zb = (tn.b - tn.mu) / s
    zx = (x - tn.mu) / s
    log_den = _log_gauss_mass(za, zb)
    if log_den == -np.inf or not np.isfinite(log_den):
        raise TailDegenerateError(
            f"truncation interval [{tn.a}, {tn.b}] has no mass under N({tn.mu}, {tn.var})"
        )
    log_num = _log_gauss_mass(za, zx)
    if log_num == -np.inf:
        return 0.0
    val = np.exp(min(log_num - log_den, 0.0))
    return float(min(val, 1.0))


def _cdf_safe(x_obs: float, var: float, a: float, b: float, mu: float) -> float:
    """cdf with the degenerate tails mapped to their limiting values in mu."""
    try:
        return cdf(TruncatedNormal(mu, var, a, b), x_obs)
    except TailDegenerateError:
        # mass concentrates at the bound nearest mu; F jumps to 1 (mu far
        # below x_obs) or 0 (mu far above)
        return 1.0 if mu < x_obs else 0.0


def invert_mean(x_obs: float, var: float, a: float, b: float, target: float,
                tol: float = 1e-12) -> float:
    """Solve F(x_obs; mu, var, a, b) = target for mu.

    F is strictly decreasing in mu, so a bracketed bisection applies.  When
    the bracket expansion passes mu = x_obs +/- 1000 sigma the corresponding
    CI endpoint is unbounded and +/-inf is returned.
    """
    if not a < x_obs < b:
        raise ValueError("x_obs must lie strictly inside (a, b)")
    if not 0.0 < target < 1.0:
        raise ValueError("target must be in (0, 1)")
    s = float(np.sqrt(var))
    cap = MU_CAP_SIGMAS * s

    lo, hi = x_obs - 10.0 * s, x_obs + 10.0 * s
    # F(lo) should exceed target, F(hi) fall below it; expand geometrically
    width = 10.0 * s
    while _cdf_safe(x_obs, var, a, b, lo) < target:
        width *= 2.0
        lo = x_obs - width
        if width > cap:
            return -np.inf
    width = 10.0 * s
    while _cdf_safe(x_obs, var, a, b, hi) > target:
        width *= 2.0
        hi = x_obs + width
        if width > cap:
            return np.inf

    for _ in range(_BISECT_MAX):
        mid = 0.5 * (lo + hi)
        f = _cdf_safe(x_obs, var, a, b, mid)
        if abs(f - target) < tol:
            return float(mid)
        if f > target:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-14 * max(1.0, abs(mid)):
            break
    return float(0.5 * (lo + hi))


def normal_quantile(q: float) -> float:
    return float(ndtri(q))
