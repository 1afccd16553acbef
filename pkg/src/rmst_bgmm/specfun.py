"""Lower incomplete gamma function and the closed-form Weibull RMST."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from .errors import DomainError

_EPS = 1e-14
_MAX_ITER = 500
_TINY = 1e-300


@dataclass(frozen=True)
class WeibullParams:
    """S(t) = exp(-(lambda * t) ** (1 / sigma))."""

    sigma: float
    lam: float

    def __post_init__(self):
        if not (np.isfinite(self.sigma) and self.sigma > 0):
            raise DomainError(f"sigma must be positive and finite, got {self.sigma}")
        if not (np.isfinite(self.lam) and self.lam > 0):
            raise DomainError(f"lambda must be positive and finite, got {self.lam}")

    def survival(self, t):
        return np.exp(-(self.lam * np.asarray(t, dtype=float)) ** (1.0 / self.sigma))


def _series(a, x):
    # gamma(a, x) = x^a e^-x sum_k x^k / (a (a+1) ... (a+k))
    term = 1.0 / a
    total = term.copy()
    ap = a.copy()
    active = np.ones(a.shape, dtype=bool)
    for _ in range(_MAX_ITER):
        ap = ap + 1.0
        term = np.where(active, term * x / ap, 0.0)
        total = total + term
        active &= np.abs(term) >= _EPS * np.abs(total)
        if not active.any():
            break
    else:
        raise DomainError("incomplete gamma series did not converge")
    return total * np.exp(a * np.log(x) - x)


def _upper_cf(a, x):
    # Gamma(a, x) by modified Lentz evaluation of the continued fraction
    b = x + 1.0 - a
    c = np.full(a.shape, 1.0 / _TINY)
    d = 1.0 / b
    h = d.copy()
    active = np.ones(a.shape, dtype=bool)
    for i in range(1, _MAX_ITER + 1):
        an = -i * (i - a)
        b = b + 2.0
        d = an * d + b
        d = np.where(np.abs(d) < _TINY, _TINY, d)
        c = b + an / c
        c = np.where(np.abs(c) < _TINY, _TINY, c)
        d = 1.0 / d
        delta = np.where(active, d * c, 1.0)
        h = h * delta
        active &= np.abs(delta - 1.0) >= _EPS
        if not active.any():
            break
    else:
        raise DomainError("incomplete gamma continued fraction did not converge")
    return np.exp(a * np.log(x) - x) * h


def lower_incomplete_gamma(a, x):
    """gamma(a, x) = integral_0^x t^(a-1) e^-t dt (not regularized); broadcasts."""
    a_arr, x_arr = np.broadcast_arrays(np.asarray(a, dtype=float), np.asarray(x, dtype=float))
    if np.any(~np.isfinite(a_arr)) or np.any(a_arr <= 0):
        raise DomainError("lower_incomplete_gamma requires a > 0")
    if np.any(np.isnan(x_arr)) or np.any(x_arr < 0):
        raise DomainError("lower_incomplete_gamma requires x >= 0")
    out = np.zeros(a_arr.shape)
    zero = x_arr == 0
    inf = np.isinf(x_arr)
    use_series = (x_arr < a_arr + 1.0) & ~zero
    use_cf = ~use_series & ~zero & ~inf
    full = np.exp(gammaln(a_arr))
    if use_series.any():
        out[use_series] = _series(a_arr[use_series], x_arr[use_series])
    if use_cf.any():
        out[use_cf] = full[use_cf] - _upper_cf(a_arr[use_cf], x_arr[use_cf])
    out[inf] = full[inf]
    return out if out.ndim else float(out)


def weibull_rmst_vec(sigma, lam, tau):
    """Vectorized (sigma / lambda) * gamma(sigma, (lambda * tau) ** (1 / sigma))."""
    sigma = np.asarray(sigma, dtype=float)
    lam = np.asarray(lam, dtype=float)
    tau = np.asarray(tau, dtype=float)
    if np.any(sigma <= 0) or np.any(lam <= 0):
        raise DomainError("sigma and lambda must be positive")
    if np.any(tau <= 0):
        raise DomainError("tau must be positive")
    return sigma / lam * lower_incomplete_gamma(sigma, (lam * tau) ** (1.0 / sigma))


def weibull_rmst(params: WeibullParams, tau: float) -> float:
    return float(weibull_rmst_vec(params.sigma, params.lam, tau))
