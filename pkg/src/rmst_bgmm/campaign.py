"""Replicated simulation campaigns: generate, estimate with every method, aggregate."""
from __future__ import annotations

import math
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

from .analysis import ModelSpec
from .errors import DivergentChains, InputError, NumericalError, TauBeyondSupport
from .gee import gee_fit, km_diff_rmst
from .gmm import TREATMENT, GmmState, build_design
from .metrics import ReplicationReport, ReplicationResult, aggregate
from .sampler import SamplerConfig, sample, summarize
from .sim import ScenarioSpec, TrueValues, calibrate_censoring, generate, true_values
from .survival import pseudo_obs, resolve_tau

MASK64 = (1 << 64) - 1
WORKERS_ENV = "RMST_BGMM_WORKERS"
METHODS = ("km", "gee", "gmm")


def splitmix64(x: int) -> int:
    z = (x + 0x9E3779B97F4A7C15) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def derive_seed(master: int, index: int, stream: int = 0) -> int:
    """Independent 64-bit seed for replication ``index`` (and sub-stream) of a campaign."""
    return splitmix64(splitmix64(splitmix64(master & MASK64) ^ index) ^ stream)


def resolve_workers(workers: int | None) -> int:
    if workers is None:
        env = os.environ.get(WORKERS_ENV)
        if env:
            try:
                workers = int(env)
            except ValueError:
                raise InputError(f"{WORKERS_ENV}={env!r} is not an integer") from None
        else:
            workers = 1
    if workers < 1:
        raise InputError("workers must be at least 1")
    return workers


@dataclass(frozen=True)
class CampaignConfig:
    scenario: ScenarioSpec
    n: int
    replications: int
    seed: int = 0
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    models: tuple[ModelSpec, ...] = (ModelSpec(),)
    methods: tuple[str, ...] = METHODS
    workers: int | None = None
    tau: float | None = None
    prior_sd: float = math.sqrt(10.0)
    truth_mc_size: int = 1_000_000

    def __post_init__(self):
        if self.n < 4:
            raise InputError("n must be at least 4")
        if self.replications < 1:
            raise InputError("replications must be at least 1")
        unknown = set(self.methods) - set(METHODS)
        if unknown:
            raise InputError(f"unknown method(s) {sorted(unknown)}")
        if not self.models:
            raise InputError("at least one model is required")

    @property
    def nominal_tau(self) -> float:
        return self.scenario.tau if self.tau is None else float(self.tau)


def target_parameters(columns: Sequence[str], model: ModelSpec) -> dict[str, str]:
    """Map design columns to the truth they estimate (keys of ``truth_lookup``)."""
    out = {}
    if model.interactions:
        e = model.interactions[0]
        if model.encoding == "stratified":
            out[f"{TREATMENT}|{e}=0"] = "delta_minus"
            out[f"{TREATMENT}|{e}=1"] = "delta_plus"
        else:
            out[TREATMENT] = "delta_minus"
            out[f"{TREATMENT}:{e}"] = "delta_interaction"
        out[e] = "beta_E"
    elif TREATMENT in columns:
        out[TREATMENT] = "delta"
    return {c: t for c, t in out.items() if c in columns}


def truth_lookup(tv: TrueValues) -> dict[str, float]:
    out = {"delta": tv.delta}
    out.update(tv.strata)
    if "delta_plus" in tv.strata and "delta_minus" in tv.strata:
        out["delta_interaction"] = tv.strata["delta_plus"] - tv.strata["delta_minus"]
    return out


def _failed() -> ReplicationResult:
    return ReplicationResult(math.nan, math.nan, math.nan, math.nan, converged=False)


def run_replication(config: CampaignConfig, censor_upper: float, index: int) -> dict:
    """One replication. Returns ``{(method, parameter, adjustment): ReplicationResult}``.

    Module-level so it pickles into worker processes. GMM fits whose R-hat
    exceeds the threshold are marked non-converged.
    """
    seed = derive_seed(config.seed, index)
    data = generate(config.scenario, config.n, seed, censor_upper=censor_upper)
    out: dict = {}
    try:
        tau = resolve_tau(data, config.nominal_tau)
    except (InputError, NumericalError):
        return out
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", TauBeyondSupport)
        warnings.simplefilter("ignore", DivergentChains)
        if "km" in config.methods:
            km = km_diff_rmst(data, tau)
            out[("KM", "delta", "-")] = ReplicationResult(km.estimate, km.se, km.ci_lower, km.ci_upper)
        y = pseudo_obs(data, tau)
        for m, model in enumerate(config.models):
            X = build_design(data, model.regression_spec(data))
            targets = target_parameters(X.column_names, model)
            adj = model.label
            if "gee" in config.methods:
                try:
                    g = gee_fit(X, y)
                    for col, param in targets.items():
                        j = X.column(col)
                        out[("GEE", param, adj)] = ReplicationResult(
                            float(g.beta_hat[j]), float(g.se[j]), float(g.ci_lower[j]), float(g.ci_upper[j]))
                except (InputError, NumericalError):
                    for param in targets.values():
                        out[("GEE", param, adj)] = _failed()
            if "gmm" in config.methods:
                sc = config.sampler
                sc = SamplerConfig(sc.chains, sc.warmup, sc.samples, derive_seed(seed, m + 1, 1),
                                   sc.target_accept, sc.init_scale, sc.thin)
                try:
                    draws = sample(GmmState.default(X, config.prior_sd), X, y, sc)
                    s = summarize(draws)
                    ok = not draws.divergent
                    for col, param in targets.items():
                        j = X.column(col)
                        out[("GMM", param, adj)] = ReplicationResult(
                            float(s.mean[j]), float(s.sd[j]), float(s.q025[j]), float(s.q975[j]),
                            converged=ok and s.q025[j] < s.q975[j])
                except (InputError, NumericalError):
                    for param in targets.values():
                        out[("GMM", param, adj)] = _failed()
    return out


def _run_chunk(args) -> list[dict]:
    config, censor_upper, indices = args
    return [run_replication(config, censor_upper, i) for i in indices]


@dataclass
class CampaignResult:
    config: CampaignConfig
    truth: TrueValues
    censor_upper: float
    replications: list[dict]
    reports: list[ReplicationReport]

    def report(self, method: str, parameter: str = "delta", adjustment: str = "-") -> ReplicationReport:
        for r in self.reports:
            if (r.method, r.parameter, r.adjustment) == (method, parameter, adjustment):
                return r
        raise KeyError((method, parameter, adjustment))

    def estimates(self, method: str, parameter: str = "delta", adjustment: str = "-") -> list[ReplicationResult]:
        key = (method, parameter, adjustment)
        return [rep[key] for rep in self.replications if key in rep]


def run_campaign(config: CampaignConfig) -> CampaignResult:
    """Run every replication (in parallel when workers > 1) and aggregate.

    Results depend only on the master seed, never on the worker count.
    """
    workers = resolve_workers(config.workers)
    censor_upper = calibrate_censoring(config.scenario)
    truth = true_values(config.scenario, config.nominal_tau, mc_size=config.truth_mc_size)
    indices = list(range(config.replications))
    if workers == 1 or config.replications == 1:
        reps = [run_replication(config, censor_upper, i) for i in indices]
    else:
        n_chunks = min(config.replications, workers * 4)
        chunks = [indices[k::n_chunks] for k in range(n_chunks)]
        reps_by_index: dict[int, dict] = {}
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for chunk, res in zip(chunks, pool.map(_run_chunk, [(config, censor_upper, c) for c in chunks])):
                reps_by_index.update(zip(chunk, res))
        reps = [reps_by_index[i] for i in indices]

    truths = truth_lookup(truth)
    keys: list[tuple] = []
    for rep in reps:
        for k in rep:
            if k not in keys:
                keys.append(k)
    reports = []
    for method, param, adj in keys:
        results = [rep[(method, param, adj)] for rep in reps if (method, param, adj) in rep]
        if param not in truths:
            continue
        reports.append(aggregate(results, truths[param], method=method, scenario=config.scenario.id,
                                 n=config.n, parameter=param, adjustment=adj,
                                 allow_single=config.replications == 1))
    return CampaignResult(config, truth, censor_upper, reps, reports)
