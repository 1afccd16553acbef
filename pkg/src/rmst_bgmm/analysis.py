"""End-to-end estimation on one dataset: pseudo-observations, GEE, Bayesian GMM, KM difference."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

from .data import Dataset
from .errors import DivergentChains, InputError, TauBeyondSupport
from .gee import gee_fit, km_diff_rmst
from .gmm import INTERCEPT, TREATMENT, GmmState, RegressionSpec, build_design
from .sampler import SamplerConfig, sample, summarize
from .survival import pseudo_obs, resolve_tau, tau_candidates

SCHEMA_VERSION = 1
_TREATMENT_ALIASES = {"a", "arm", "treatment", "trt"}


@dataclass(frozen=True)
class ModelSpec:
    """Covariates by name; ``interactions`` name binary covariates crossed with treatment."""

    covariates: tuple[str, ...] = ()
    interactions: tuple[str, ...] = ()
    encoding: str = "product"

    @property
    def label(self) -> str:
        terms = [c for c in self.covariates if c not in self.interactions]
        terms += [f"A*{e}" for e in self.interactions]
        label = ",".join(terms) if terms else "-"
        if self.interactions and self.encoding == "stratified":
            label += " (stratified)"
        return label

    def regression_spec(self, data: Dataset) -> RegressionSpec:
        return RegressionSpec.from_names(data, self.covariates, self.interactions,
                                         self.encoding if self.interactions else "product")


def parse_model(text: str | None, encoding: str = "product") -> ModelSpec:
    """Parse ``"Z1,Z2,A*E"``: plain names are covariates, ``A*E`` crosses E with treatment."""
    if text is None or not text.strip() or text.strip() == "-":
        return ModelSpec()
    covs: list[str] = []
    inter: list[str] = []
    for term in (t.strip() for t in text.split(",")):
        if not term:
            continue
        if "*" in term:
            left, right = (s.strip() for s in term.split("*", 1))
            if left.lower() in _TREATMENT_ALIASES:
                e = right
            elif right.lower() in _TREATMENT_ALIASES:
                e = left
            else:
                raise InputError(f"interaction {term!r} must involve the treatment (A)")
            inter.append(e)
            if e not in covs:
                covs.append(e)
        elif term.lower() in _TREATMENT_ALIASES:
            continue
        elif term not in covs:
            covs.append(term)
    if encoding not in ("product", "stratified"):
        raise InputError(f"unknown encoding {encoding!r}")
    return ModelSpec(tuple(covs), tuple(inter), encoding)


def parse_tail_prob(text: str) -> tuple[str, str, float]:
    """``PARAM,OP,VALUE`` such as ``arm,>=,0.25``."""
    parts = [p.strip() for p in text.split(",")]
    if len(parts) != 3 or parts[1] not in (">=", ">", "<=", "<"):
        raise InputError(f"tail probability {text!r} must look like PARAM,>=,VALUE")
    try:
        value = float(parts[2])
    except ValueError:
        raise InputError(f"tail probability threshold {parts[2]!r} is not a number") from None
    return parts[0], parts[1], value


@dataclass
class FitOptions:
    tau: float = 5.0
    model: ModelSpec = field(default_factory=ModelSpec)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    prior_sd: float = math.sqrt(10.0)
    tail_probs: Sequence[tuple[str, str, float]] = ()
    confidence: float = 0.95


def _interpretation(names: Sequence[str]) -> dict:
    out = {}
    for name in names:
        if name == INTERCEPT:
            out[name] = "baseline RMST, all covariates at reference"
        elif name == TREATMENT:
            out[name] = "dRMST between arms (experimental - control)"
        elif name.startswith(f"{TREATMENT}|"):
            out[name] = f"dRMST between arms within stratum {name.split('|', 1)[1]}"
        elif name.startswith(f"{TREATMENT}:"):
            out[name] = "difference in dRMST between covariate levels"
        else:
            out[name] = f"RMST difference per unit of {name}"
    return out


def fit_dataset(data: Dataset, options: FitOptions = FitOptions()) -> dict:
    """Pseudo-observations at the resolved tau, then GEE, Bayesian GMM and the KM difference.

    Returns a JSON-ready report. Non-convergence is reported in ``warnings``
    rather than raised.
    """
    tau = resolve_tau(data, options.tau)
    y = pseudo_obs(data, tau)
    spec = options.model.regression_spec(data)
    X = build_design(data, spec)
    report_warnings = []
    if tau < options.tau:
        report_warnings.append(
            f"tau truncated from {options.tau:g} to {tau:g} (min over arms of the last observed time)")

    gee = gee_fit(X, y, options.confidence)
    state = GmmState.default(X, options.prior_sd)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DivergentChains)
        draws = sample(state, X, y, options.sampler)
    if draws.divergent:
        report_warnings.append("DivergentChains: split R-hat above 1.01 for at least one parameter")
    if draws.ridge_activations:
        report_warnings.append(f"moment covariance needed a ridge in {draws.ridge_activations} evaluation(s)")
    summary = summarize(draws, options.tail_probs)
    km = km_diff_rmst(data, tau, options.confidence)

    gmm_params = []
    for j, name in enumerate(draws.parameter_names):
        gmm_params.append({
            "name": name, "mean": float(summary.mean[j]), "sd": float(summary.sd[j]),
            "q2.5": float(summary.q025[j]), "q50": float(summary.q50[j]),
            "q97.5": float(summary.q975[j]), "rhat": float(draws.rhat[j]), "ess": float(draws.ess[j]),
        })
    return {
        "schema_version": SCHEMA_VERSION,
        "data": {"n": data.n, "events": data.n_events, "censoring_rate": data.censoring_rate},
        "tau_requested": options.tau,
        "tau": tau,
        "model": {"columns": list(X.column_names), "encoding": spec.encoding,
                  "interpretation": _interpretation(X.column_names)},
        "gee": gee.to_dict(),
        "gmm": {
            "prior": {"mean": 0.0, "sd": options.prior_sd},
            "sampler": {"chains": options.sampler.chains, "warmup": options.sampler.warmup,
                        "samples": options.sampler.samples, "thin": options.sampler.thin,
                        "seed": options.sampler.seed},
            "acceptance_rate": draws.acceptance_rate.tolist(),
            "parameters": gmm_params,
            "tail_probabilities": [tp.__dict__ for tp in summary.tail_probabilities],
            "converged": not draws.divergent,
        },
        "km_difference": {"estimate": km.estimate, "se": km.se, "ci_lower": km.ci_lower,
                          "ci_upper": km.ci_upper, "rmst_arm0": km.rmst_arm0, "rmst_arm1": km.rmst_arm1},
        "warnings": report_warnings,
    }


def tau_scan(data: Dataset, se_limits: Sequence[float] = (0.05, 0.075),
             sampler: SamplerConfig = SamplerConfig(), methods: Sequence[str] = ("km", "gee", "gmm"),
             prior_sd: float = math.sqrt(10.0), confidence: float = 0.95) -> list[dict]:
    """Unadjusted dRMST at every data-driven restriction time."""
    rows = []
    for rule, tau in tau_candidates(data, se_limits):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", TauBeyondSupport)
            if "km" in methods:
                km = km_diff_rmst(data, tau, confidence)
                rows.append({"rule": rule, "tau": tau, "method": "km", "estimate": km.estimate,
                             "lower": km.ci_lower, "upper": km.ci_upper})
            if "gee" in methods or "gmm" in methods:
                y = pseudo_obs(data, tau)
                X = build_design(data, RegressionSpec())
                j = X.column(TREATMENT)
            if "gee" in methods:
                g = gee_fit(X, y, confidence)
                rows.append({"rule": rule, "tau": tau, "method": "gee", "estimate": float(g.beta_hat[j]),
                             "lower": float(g.ci_lower[j]), "upper": float(g.ci_upper[j])})
            if "gmm" in methods:
                warnings.simplefilter("ignore", DivergentChains)
                draws = sample(GmmState.default(X, prior_sd), X, y, sampler)
                s = summarize(draws)
                rows.append({"rule": rule, "tau": tau, "method": "gmm", "estimate": float(s.mean[j]),
                             "lower": float(s.q025[j]), "upper": float(s.q975[j])})
    return rows
