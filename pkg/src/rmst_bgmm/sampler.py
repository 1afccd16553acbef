"""Adaptive random-walk Metropolis for the pseudo-posterior, with diagnostics and summaries."""
from __future__ import annotations

import csv
import json
import logging
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.special import ndtri
from scipy.stats import rankdata

from .errors import (DivergentChains, InputError, NonFiniteTarget, TooFewDraws,
                     UnknownParameter)
from .gee import gee_fit
from .gmm import BatchedPosterior, GmmState

logger = logging.getLogger(__name__)

RHAT_THRESHOLD = 1.01
ADAPT_EVERY = 50
MAX_INIT_ATTEMPTS = 100

LogDensity = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class SamplerConfig:
    chains: int = 3
    warmup: int = 1000
    samples: int = 1000
    seed: int = 0
    target_accept: float = 0.30
    init_scale: float = 0.1
    thin: int = 5

    def __post_init__(self):
        if self.chains < 2:
            raise InputError("at least 2 chains are needed for R-hat")
        if self.warmup < 1 or self.samples < 1 or self.thin < 1:
            raise InputError("warmup, samples and thin must be positive")
        if not 0 < self.target_accept < 1:
            raise InputError("target_accept must lie in (0, 1)")
        if not self.init_scale > 0:
            raise InputError("init_scale must be positive")
        if not 0 <= self.seed < 2**64:
            raise InputError("seed must be a 64-bit unsigned integer")


@dataclass(frozen=True, eq=False)
class PosteriorDraws:
    draws: np.ndarray                    # (chains, samples, q)
    parameter_names: tuple[str, ...]
    acceptance_rate: np.ndarray          # per chain, post-warmup
    rhat: np.ndarray
    ess: np.ndarray
    ridge_activations: int = 0

    @property
    def divergent(self) -> bool:
        return bool(np.any(~(self.rhat <= RHAT_THRESHOLD)))

    def pooled(self, name: str | None = None) -> np.ndarray:
        flat = self.draws.reshape(-1, self.draws.shape[-1])
        return flat if name is None else flat[:, self.index(name)]

    def index(self, name: str) -> int:
        try:
            return self.parameter_names.index(name)
        except ValueError:
            raise UnknownParameter(f"unknown parameter {name!r}; have {list(self.parameter_names)}") from None

    def to_csv(self, path: str | Path) -> None:
        c, s, _ = self.draws.shape
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["chain", "iter", *self.parameter_names])
            for i in range(c):
                for t in range(s):
                    w.writerow([i, t, *(repr(float(v)) for v in self.draws[i, t])])


# ---------------------------------------------------------------- diagnostics

def _autocov(x: np.ndarray) -> np.ndarray:
    """Biased autocovariance of each row via FFT."""
    m, n = x.shape
    xc = x - x.mean(axis=1, keepdims=True)
    size = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(xc, size, axis=1)
    return np.fft.irfft(f * np.conj(f), size, axis=1)[:, :n] / n


def _split(x: np.ndarray) -> np.ndarray:
    m, n = x.shape
    half = n // 2
    return np.concatenate([x[:, :half], x[:, n - half:]], axis=0)


def _rank_normalize(x: np.ndarray) -> np.ndarray:
    r = rankdata(x, method="average").reshape(x.shape)
    return ndtri((r - 0.375) / (x.size + 0.25))


def _rhat_basic(x: np.ndarray) -> float:
    m, n = x.shape
    chain_mean = x.mean(axis=1)
    w = x.var(axis=1, ddof=1).mean()
    b = n * chain_mean.var(ddof=1)
    if w <= 0:
        return 1.0 if b <= 0 else math.inf
    var_plus = (n - 1) / n * w + b / n
    return float(math.sqrt(var_plus / w))


def _ess_basic(x: np.ndarray) -> float:
    """Geyer initial-monotone-sequence ESS over chains (rows), capped at m * n."""
    m, n = x.shape
    acov = _autocov(x)
    chain_var = acov[:, 0] * n / (n - 1)
    mean_var = chain_var.mean()
    var_plus = mean_var * (n - 1) / n
    if m > 1:
        var_plus += x.mean(axis=1).var(ddof=1)
    if not var_plus > 0:
        return math.nan
    acov_t = acov.mean(axis=0)
    rho = np.zeros(n)
    rho[0] = 1.0
    rho_even = 1.0
    rho_odd = 1.0 - (mean_var - acov_t[1]) / var_plus if n > 1 else 0.0
    if n > 1:
        rho[1] = rho_odd
    t = 1
    while t < n - 3 and rho_even + rho_odd > 0:
        rho_even = 1.0 - (mean_var - acov_t[t + 1]) / var_plus
        rho_odd = 1.0 - (mean_var - acov_t[t + 2]) / var_plus
        if rho_even + rho_odd >= 0:
            rho[t + 1] = rho_even
            rho[t + 2] = rho_odd
        t += 2
    max_t = t
    if rho_even > 0 and max_t + 1 < n:
        rho[max_t + 1] = rho_even
    t = 1
    while t <= max_t - 2:
        if rho[t + 1] + rho[t + 2] > rho[t - 1] + rho[t]:
            rho[t + 1] = (rho[t - 1] + rho[t]) / 2
            rho[t + 2] = rho[t + 1]
        t += 2
    total = m * n
    tail = rho[max_t + 1] if max_t + 1 < n else 0.0
    tau_hat = -1.0 + 2.0 * rho[:max_t].sum() + tail
    tau_hat = max(tau_hat, 1.0 / math.log10(total))
    return float(min(total / tau_hat, total))


def split_rhat(x: np.ndarray) -> float:
    """Rank-normalized split R-hat (max of bulk and folded) for draws shaped (chains, samples)."""
    x = np.asarray(x, dtype=float)
    if x.shape[1] < 4:
        raise TooFewDraws("R-hat needs at least 4 draws per chain")
    s = _split(x)
    bulk = _rhat_basic(_rank_normalize(s))
    folded = np.abs(s - np.median(s))
    return max(bulk, _rhat_basic(_rank_normalize(folded)))


def ess_bulk(x: np.ndarray) -> float:
    x = np.asarray(x, dtype=float)
    if x.shape[1] < 4:
        raise TooFewDraws("ESS needs at least 4 draws per chain")
    return _ess_basic(_rank_normalize(_split(x)))


def diagnose(draws: PosteriorDraws | np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    arr = draws.draws if isinstance(draws, PosteriorDraws) else np.asarray(draws, dtype=float)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    c, s, q = arr.shape
    if c < 2:
        raise InputError("R-hat needs at least 2 chains")
    if s < 4:
        raise TooFewDraws("diagnostics need at least 4 draws per chain")
    rhat = np.array([split_rhat(arr[:, :, j]) for j in range(q)])
    ess = np.array([ess_bulk(arr[:, :, j]) for j in range(q)])
    return rhat, ess


# ---------------------------------------------------------------- sampling

def _chain_seeds(seed: int, chains: int):
    return np.random.SeedSequence(seed).spawn(chains)


def run_metropolis(log_density: LogDensity, init: np.ndarray, init_cov: np.ndarray,
                   config: SamplerConfig,
                   parameter_names: Sequence[str] | None = None) -> PosteriorDraws:
    """Adaptive random-walk Metropolis, all chains advanced in lockstep.

    ``log_density`` maps a (chains, q) array to (chains,) log densities.
    During warmup the proposal scale follows a Robbins-Monro recursion toward
    ``target_accept`` and the proposal covariance is re-estimated every
    ``ADAPT_EVERY`` iterations from draws after the first quarter of warmup.
    Both are frozen once warmup ends, after which ``samples * thin``
    iterations run and every ``thin``-th state is kept.
    """
    init = np.asarray(init, dtype=float).reshape(-1)
    q = init.size
    c = config.chains
    names = tuple(parameter_names) if parameter_names else tuple(f"beta{j}" for j in range(q))
    rngs = [np.random.default_rng(s) for s in _chain_seeds(config.seed, c)]

    x = np.empty((c, q))
    lp = np.empty(c)
    for i, rng in enumerate(rngs):
        for _ in range(MAX_INIT_ATTEMPTS):
            x[i] = init + config.init_scale * rng.standard_normal(q)
            lp[i] = log_density(x[i][None])[0]
            if np.isfinite(lp[i]):
                break
        else:
            raise NonFiniteTarget(f"chain {i}: no finite starting point after {MAX_INIT_ATTEMPTS} attempts")

    thin = config.thin
    total = config.warmup + config.samples * thin
    noise = np.stack([rng.standard_normal((total, q)) for rng in rngs], axis=1)   # (T, c, q)
    log_u = np.stack([np.log(rng.random(total)) for rng in rngs], axis=1)        # (T, c)

    cov0 = np.asarray(init_cov, dtype=float).reshape(q, q)
    try:
        chol0 = np.linalg.cholesky((cov0 + cov0.T) / 2)
    except np.linalg.LinAlgError:
        chol0 = np.diag(np.sqrt(np.clip(np.diag(cov0), 1e-12, None)))
    chol = np.repeat(chol0[None], c, axis=0)
    log_scale = np.full(c, math.log(2.38 / math.sqrt(q)))

    learn_from = config.warmup // 4
    mean = np.zeros((c, q))
    m2 = np.zeros((c, q, q))
    count = 0

    out = np.empty((c, config.samples, q))
    accepted = np.zeros(c)
    for t in range(total):
        step = np.matmul(chol, noise[t][:, :, None])[..., 0] * np.exp(log_scale)[:, None]
        prop = x + step
        lp_prop = log_density(prop)
        log_alpha = np.where(np.isfinite(lp_prop), lp_prop - lp, -np.inf)
        acc = log_u[t] < log_alpha
        x = np.where(acc[:, None], prop, x)
        lp = np.where(acc, lp_prop, lp)
        if t < config.warmup:
            alpha = np.exp(np.minimum(log_alpha, 0.0))
            log_scale += (t + 1) ** -0.6 * (alpha - config.target_accept)
            if t >= learn_from:
                count += 1
                delta = x - mean
                mean += delta / count
                m2 += delta[:, :, None] * (x - mean)[:, None, :]
                if count >= max(2 * q + 20, ADAPT_EVERY) and count % ADAPT_EVERY == 0:
                    cov = m2 / (count - 1)
                    for i in range(c):
                        ci = cov[i] + 1e-10 * (np.trace(cov[i]) / q + 1e-300) * np.eye(q)
                        try:
                            chol[i] = np.linalg.cholesky(ci)
                        except np.linalg.LinAlgError:
                            pass
        else:
            accepted += acc
            k, r = divmod(t - config.warmup + 1, thin)
            if r == 0:
                out[:, k - 1] = x

    rate = accepted / (config.samples * thin)
    if c >= 2 and config.samples >= 4:
        rhat, ess = diagnose(out)
    else:
        rhat = np.full(q, np.nan)
        ess = np.array([ess_bulk(out[:, :, j]) if config.samples >= 4 else np.nan for j in range(q)])
    draws = PosteriorDraws(out, names, rate, rhat, ess)
    if draws.divergent:
        warnings.warn(f"split R-hat above {RHAT_THRESHOLD}: {np.round(rhat, 4).tolist()}",
                      DivergentChains, stacklevel=2)
    return draws


def sample(state: GmmState, X, y, config: SamplerConfig = SamplerConfig(), *,
           log_target: LogDensity | None = None,
           init: np.ndarray | None = None,
           init_cov: np.ndarray | None = None) -> PosteriorDraws:
    """Sample the GMM pseudo-posterior.

    Chains start at the GEE estimate jittered by ``init_scale``; the GEE
    sandwich covariance seeds the proposal. ``log_target`` (batched) replaces
    the pseudo-posterior, e.g. to calibrate the kernel on a known density.
    """
    posterior = None
    if log_target is None:
        posterior = BatchedPosterior(state, X, y)
        log_target = posterior
    if init is None or init_cov is None:
        fit = gee_fit(X, y)
        init = fit.beta_hat if init is None else init
        init_cov = fit.sandwich_cov if init_cov is None else init_cov
    draws = run_metropolis(log_target, init, init_cov, config, state.parameter_names)
    if posterior is not None and posterior.ridge_activations:
        draws = PosteriorDraws(draws.draws, draws.parameter_names, draws.acceptance_rate,
                               draws.rhat, draws.ess, posterior.ridge_activations)
    return draws


# ---------------------------------------------------------------- summaries

_DIRECTIONS = {
    ">=": np.greater_equal, ">": np.greater,
    "<=": np.less_equal, "<": np.less,
}


@dataclass(frozen=True)
class TailProbability:
    parameter: str
    threshold: float
    direction: str
    probability: float
    mc_se: float


@dataclass(frozen=True, eq=False)
class PosteriorSummary:
    parameter_names: tuple[str, ...]
    mean: np.ndarray
    sd: np.ndarray
    q025: np.ndarray
    q50: np.ndarray
    q975: np.ndarray
    tail_probabilities: list[TailProbability] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "parameters": [
                {"name": n, "mean": float(m), "sd": float(s), "q2.5": float(a),
                 "q50": float(b), "q97.5": float(c)}
                for n, m, s, a, b, c in zip(self.parameter_names, self.mean, self.sd,
                                            self.q025, self.q50, self.q975)
            ],
            "tail_probabilities": [tp.__dict__ for tp in self.tail_probabilities],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def tail_mcse(p: float, ess: float) -> float:
    """Monte Carlo standard error of a posterior probability with effective sample size ``ess``."""
    if p <= 0.0 or p >= 1.0:
        return 0.0
    return math.sqrt(p * (1.0 - p) / ess)


def _indicator_ess(ind: np.ndarray) -> float:
    c, s = ind.shape
    if s >= 4:
        e = _ess_basic(_split(ind))
        if math.isfinite(e):
            return e
    return float(ind.size)


def summarize(draws: PosteriorDraws,
              thresholds: Sequence[tuple[str, str, float]] = ()) -> PosteriorSummary:
    """Pooled means, sds, equal-tailed quantiles and tail probabilities.

    ``thresholds`` holds ``(parameter, direction, value)`` with direction one
    of ``>=``, ``>``, ``<=``, ``<``.
    """
    flat = draws.pooled()
    if flat.size == 0:
        raise InputError("no draws to summarize")
    q025, q50, q975 = np.quantile(flat, [0.025, 0.5, 0.975], axis=0)
    sd = flat.std(axis=0, ddof=1) if flat.shape[0] > 1 else np.zeros(flat.shape[1])
    tails = []
    for name, direction, value in thresholds:
        j = draws.index(name)
        op = _DIRECTIONS.get(direction)
        if op is None:
            raise InputError(f"unknown direction {direction!r}")
        ind = op(draws.draws[:, :, j], value).astype(float)
        p = float(ind.mean())
        tails.append(TailProbability(name, float(value), direction, p, tail_mcse(p, _indicator_ess(ind))))
    return PosteriorSummary(draws.parameter_names, flat.mean(axis=0), sd, q025, q50, q975, tails)
