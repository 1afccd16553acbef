"""Frequentist benchmarks: GEE on pseudo-observations and the naive KM difference."""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .data import Dataset
from .errors import InputError, SingleArm
from .gmm import DesignMatrix, _xy, check_rank
from .survival import _km_from_arrays, rmst_from_curve


def _z(confidence: float) -> float:
    if not 0 < confidence < 1:
        raise InputError(f"confidence must lie in (0, 1), got {confidence}")
    return float(norm.ppf(0.5 + confidence / 2))


@dataclass(frozen=True, eq=False)
class GeeFit:
    beta_hat: np.ndarray
    sandwich_cov: np.ndarray
    se: np.ndarray
    ci_lower: np.ndarray
    ci_upper: np.ndarray
    column_names: tuple[str, ...]
    confidence: float = 0.95

    def to_dict(self) -> dict:
        return {
            "confidence": self.confidence,
            "parameters": [
                {"name": name, "estimate": float(b), "se": float(s),
                 "ci_lower": float(lo), "ci_upper": float(hi)}
                for name, b, s, lo, hi in zip(self.column_names, self.beta_hat, self.se,
                                              self.ci_lower, self.ci_upper)
            ],
            "covariance": self.sandwich_cov.tolist(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def gee_fit(X, y, confidence: float = 0.95) -> GeeFit:
    """Identity link, independence working correlation: least squares with a robust covariance."""
    Xv, yv = _xy(X, y)
    n, q = Xv.shape
    if n <= q:
        raise InputError(f"need more subjects ({n}) than parameters ({q})")
    check_rank(Xv)
    names = X.column_names if isinstance(X, DesignMatrix) else tuple(f"beta{j}" for j in range(q))
    bread = Xv.T @ Xv
    beta = np.linalg.solve(bread, Xv.T @ yv)
    r = yv - Xv @ beta
    xr = Xv * r[:, None]
    meat = xr.T @ xr
    half = np.linalg.solve(bread, meat)
    cov = np.linalg.solve(bread, half.T)
    cov = (cov + cov.T) / 2
    se = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    z = _z(confidence)
    return GeeFit(beta, cov, se, beta - z * se, beta + z * se, tuple(names), confidence)


@dataclass(frozen=True)
class KmDifference:
    estimate: float
    se: float
    ci_lower: float
    ci_upper: float
    rmst_arm0: float
    rmst_arm1: float


def _rmst_and_var(time, event, tau):
    curve = _km_from_arrays(time, event)
    area = rmst_from_curve(curve, tau)
    inside = curve.jump_times < tau
    t = curve.jump_times[inside]
    s = curve.survival[inside]
    # area of S on [t_j, tau] for each jump t_j
    knots = np.append(t, tau)
    seg = s * np.diff(knots)
    tail_area = np.cumsum(seg[::-1])[::-1]
    n_j = curve.at_risk[inside].astype(float)
    d_j = curve.events[inside].astype(float)
    with np.errstate(divide="ignore", invalid="ignore"):
        w = np.where(n_j > d_j, d_j / (n_j * (n_j - d_j)), 0.0)
    return area, float(np.sum(tail_area**2 * w))


def km_diff_rmst(data: Dataset, tau: float, confidence: float = 0.95) -> KmDifference:
    """RMST(arm 1) - RMST(arm 0) from per-arm KM curves with the plug-in variance."""
    data.require_nonempty()
    parts = []
    for a in (0, 1):
        mask = data.arm == a
        if not mask.any():
            raise SingleArm(f"arm {a} is empty")
        parts.append(_rmst_and_var(data.time[mask], data.event[mask], tau))
    (r0, v0), (r1, v1) = parts
    est = r1 - r0
    se = float(np.sqrt(v0 + v1))
    z = _z(confidence)
    return KmDifference(est, se, est - z * se, est + z * se, r0, r1)
