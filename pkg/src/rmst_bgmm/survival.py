"""Kaplan-Meier estimation, restricted-mean integration and jackknife pseudo-observations."""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass
from typing import Literal, NamedTuple, Sequence

import numpy as np

from .data import Dataset
from .errors import EmptyDataset, InputError, InsufficientEvents, SingleArm, TauBeyondSupport

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class KmCurve:
    """Product-limit step function, evaluated at its jump (event) times.

    ``at_risk`` and ``events`` are the risk-set size and number of events at
    each jump; ``se`` is the Greenwood standard error of ``survival``.
    """

    jump_times: np.ndarray
    survival: np.ndarray
    at_risk: np.ndarray
    events: np.ndarray
    se: np.ndarray
    last_time: float

    def __call__(self, t):
        """S(t), right-continuous; 1 before the first jump, flat after the last."""
        t = np.asarray(t, dtype=float)
        idx = np.searchsorted(self.jump_times, t, side="right")
        s = np.concatenate(([1.0], self.survival))
        return s[idx]


def _risk_table(time: np.ndarray, event: np.ndarray):
    """Distinct times with risk-set sizes and event counts.

    Censorings tied with events at the same time are still counted at risk,
    i.e. events are processed first.
    """
    uniq, inv = np.unique(time, return_inverse=True)
    d = np.bincount(inv, weights=event.astype(float), minlength=uniq.size)
    cnt = np.bincount(inv, minlength=uniq.size)
    at_risk = time.size - np.concatenate(([0], np.cumsum(cnt)[:-1]))
    return uniq, at_risk.astype(float), d, inv


def km_fit(data: Dataset) -> KmCurve:
    data.require_nonempty()
    return _km_from_arrays(data.time, data.event)


def _km_from_arrays(time: np.ndarray, event: np.ndarray) -> KmCurve:
    if time.size == 0:
        raise EmptyDataset("no records")
    uniq, n_risk, d, _ = _risk_table(time, event)
    surv = np.cumprod(1.0 - d / n_risk)
    with np.errstate(divide="ignore", invalid="ignore"):
        gw = np.cumsum(np.where(d > 0, d / (n_risk * (n_risk - d)), 0.0))
        se = np.where(surv > 0, surv * np.sqrt(gw), 0.0)
    jump = d > 0
    return KmCurve(
        jump_times=uniq[jump],
        survival=surv[jump],
        at_risk=n_risk[jump].astype(int),
        events=d[jump].astype(int),
        se=se[jump],
        last_time=float(uniq[-1]),
    )


def rmst_from_curve(curve: KmCurve, tau: float) -> float:
    """Exact area under the KM step function on [0, tau]."""
    if not tau > 0:
        raise InputError(f"tau must be positive, got {tau}")
    if tau > curve.last_time:
        warnings.warn(
            f"tau={tau:g} exceeds the last observed time {curve.last_time:g}; "
            "integrating the carried-flat tail", TauBeyondSupport, stacklevel=2)
    inside = curve.jump_times < tau
    knots = np.concatenate(([0.0], curve.jump_times[inside], [tau]))
    levels = np.concatenate(([1.0], curve.survival[inside]))
    return float(np.sum(levels * np.diff(knots)))


def _km_area(time: np.ndarray, event: np.ndarray, tau: float) -> float:
    uniq, n_risk, d, _ = _risk_table(time, event)
    surv = np.cumprod(1.0 - d / n_risk)
    inside = uniq < tau
    knots = np.concatenate(([0.0], uniq[inside], [tau]))
    levels = np.concatenate(([1.0], surv[inside]))
    return float(np.sum(levels * np.diff(knots)))


@dataclass(frozen=True, eq=False)
class PseudoObsVector:
    tau: float
    values: np.ndarray

    def __len__(self):
        return self.values.size


def _pseudo_naive(time, event, tau):
    n = time.size
    full = _km_area(time, event, tau)
    loo = np.empty(n)
    keep = np.ones(n, dtype=bool)
    for i in range(n):
        keep[i] = False
        loo[i] = _km_area(time[keep], event[keep], tau)
        keep[i] = True
    return n * full - (n - 1) * loo


def _pseudo_fast(time, event, tau):
    """All leave-one-out KM areas in one sweep.

    Removing subject i (at distinct time index m) decrements the risk set at
    every time <= t_m and, if i is an event, the event count at t_m. Factors
    at earlier times become 1 - d/(n-1) for every such i, so their running
    products are shared; factors after t_m are untouched.
    """
    n = time.size
    e = event.astype(float)
    uniq, n_risk, d, inv = _risk_table(time, event)
    k = uniq.size
    nxt = np.append(uniq[1:], np.inf)
    width = np.clip(np.minimum(nxt, tau) - uniq, 0.0, None)
    head = min(uniq[0], tau)
    h = 1.0 - d / n_risk
    full = head + float(np.sum(np.cumprod(h) * width))

    with np.errstate(divide="ignore", invalid="ignore"):
        h_loo = np.where(n_risk > 1, 1.0 - d / (n_risk - 1.0), 1.0)
    lead = np.cumprod(h_loo)
    lead_area = np.cumsum(lead * width)

    # tail[j] = sum_{l >= j} width_l * prod_{j < r <= l} h_r
    tail = np.empty(k)
    acc = 0.0
    for j in range(k - 1, -1, -1):
        acc = width[j] + (h[j + 1] * acc if j + 1 < k else 0.0)
        tail[j] = acc

    m = inv
    prev_lead = np.where(m > 0, lead[m - 1], 1.0)
    prev_area = np.where(m > 0, lead_area[m - 1], 0.0)
    nm1 = n_risk[m] - 1.0
    with np.errstate(divide="ignore", invalid="ignore"):
        f = np.where(nm1 > 0, 1.0 - (d[m] - e) / nm1, 1.0)
    loo = head + prev_area + prev_lead * f * tail[m]
    return n * full - (n - 1) * loo


def pseudo_obs(data: Dataset, tau: float,
               algorithm: Literal["naive", "fast"] = "fast",
               by_arm: bool = False) -> PseudoObsVector:
    """Jackknife pseudo-values of the KM-integrated RMST at ``tau``.

    ``by_arm=True`` computes them within each treatment arm separately; the
    default pools all subjects, as in the usual pseudo-observation regression.
    """
    data.require_nonempty()
    if not tau > 0:
        raise InputError(f"tau must be positive, got {tau}")
    if data.n < 2:
        raise InputError("pseudo-observations need at least 2 subjects")
    if data.n_events < 1:
        raise InsufficientEvents("pseudo-observations need at least one event")
    impl = {"naive": _pseudo_naive, "fast": _pseudo_fast}.get(algorithm)
    if impl is None:
        raise InputError(f"unknown algorithm {algorithm!r}")
    if not by_arm:
        values = impl(data.time, data.event, tau)
    else:
        values = np.empty(data.n)
        for a in (0, 1):
            idx = np.flatnonzero(data.arm == a)
            if idx.size == 0:
                raise SingleArm("by_arm pseudo-observations need both arms")
            if idx.size == 1:
                raise InputError(f"arm {a} has a single subject")
            values[idx] = impl(data.time[idx], data.event[idx], tau)
    values.flags.writeable = False
    return PseudoObsVector(float(tau), values)


def _arm_maxima(data: Dataset) -> tuple[float, float]:
    present = set(np.unique(data.arm).tolist())
    if present != {0, 1}:
        raise SingleArm(f"both arms required, found {sorted(present)}")
    return (float(data.time[data.arm == 0].max()), float(data.time[data.arm == 1].max()))


def resolve_tau(data: Dataset, requested_tau: float) -> float:
    """Requested tau, or the smaller of the per-arm last observed times if either falls short."""
    data.require_nonempty()
    if not requested_tau > 0:
        raise InputError(f"tau must be positive, got {requested_tau}")
    return min(requested_tau, *_arm_maxima(data))


class TauCandidate(NamedTuple):
    rule: str
    tau: float


def _se_horizon(curve: KmCurve, limit: float) -> float | None:
    # last jump before the Greenwood SE first reaches the limit
    over = np.flatnonzero(curve.se >= limit)
    if over.size == 0:
        return curve.last_time
    first = over[0]
    if first == 0:
        return None
    return float(curve.jump_times[first - 1])


def tau_candidates(data: Dataset, se_limits: Sequence[float] = (0.05, 0.075)) -> list[TauCandidate]:
    """Data-driven restriction times.

    ``p90``: 90th percentile of observed times (linear interpolation).
    ``se<L``: per arm, the largest time before the KM standard error reaches L;
    the smaller of the two arms is kept. ``min_of_max``: min over arms of the
    last observed time.
    """
    data.require_nonempty()
    out = [TauCandidate("p90", float(np.percentile(data.time, 90)))]
    arms = [data.subset(data.arm == a) for a in (0, 1)]
    curves = [km_fit(d) if d.n else None for d in arms]
    for limit in se_limits:
        horizons = [_se_horizon(c, limit) if c is not None else None for c in curves]
        if any(h is None for h in horizons):
            logger.info("rule se<%g omitted: standard error exceeds the limit at the first event", limit)
            continue
        out.append(TauCandidate(f"se<{limit:g}", min(horizons)))
    try:
        out.append(TauCandidate("min_of_max", resolve_tau(data, math.inf)))
    except SingleArm:
        logger.info("rule min_of_max omitted: a single arm is present")
    return out
