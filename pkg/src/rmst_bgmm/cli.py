"""Command-line interface: ``rmst-bgmm {fit,pseudo,simulate,campaign,tau-scan}``."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from pathlib import Path

from .analysis import FitOptions, ModelSpec, fit_dataset, parse_model, parse_tail_prob, tau_scan
from .campaign import CampaignConfig, run_campaign
from .data import read_csv, write_csv
from .errors import ConvergenceError, InputError, NumericalError, RmstError
from .metrics import write_reports
from .sampler import SamplerConfig
from .sim import ScenarioSpec, builtin_scenario, calibrate_censoring, generate
from .survival import pseudo_obs, resolve_tau

EXIT_OK, EXIT_INPUT, EXIT_NUMERICAL, EXIT_CONVERGENCE = 0, 2, 3, 4

log = logging.getLogger("rmst_bgmm")


def _sampler_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--chains", type=int, default=3)
    p.add_argument("--warmup", type=int, default=1000)
    p.add_argument("--samples", type=int, default=1000)
    p.add_argument("--thin", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--prior-sd", type=float, default=math.sqrt(10.0))


def _sampler(ns) -> SamplerConfig:
    return SamplerConfig(chains=ns.chains, warmup=ns.warmup, samples=ns.samples, seed=ns.seed, thin=ns.thin)


def _scenario(text: str) -> ScenarioSpec:
    path = Path(text)
    if path.suffix == ".json" or path.exists():
        try:
            return ScenarioSpec.from_json(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise InputError(f"{text}: invalid JSON ({exc})") from None
    return builtin_scenario(text)


def _load(path: str):
    data, _ = read_csv(path)  # dropped rows are logged by the reader
    return data


def _write_json(obj, path: str | None) -> None:
    text = json.dumps(obj, indent=2, allow_nan=True)
    if path in (None, "-"):
        print(text)
    else:
        Path(path).write_text(text + "\n", encoding="utf-8")


def cmd_fit(ns) -> int:
    data = _load(ns.input)
    options = FitOptions(tau=ns.tau, model=parse_model(ns.model, ns.encode), sampler=_sampler(ns),
                         prior_sd=ns.prior_sd, tail_probs=[parse_tail_prob(t) for t in ns.tail_prob])
    report = fit_dataset(data, options)
    for w in report["warnings"]:
        log.warning(w)
    _write_json(report, ns.output)
    return EXIT_OK


def cmd_pseudo(ns) -> int:
    data = _load(ns.input)
    tau = resolve_tau(data, ns.tau)
    pv = pseudo_obs(data, tau, algorithm=ns.algorithm)
    out = sys.stdout if ns.output in (None, "-") else open(ns.output, "w", newline="", encoding="utf-8")
    try:
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["time", "event", "arm", *data.covariate_names, "pseudo_rmst"])
        for i in range(data.n):
            cov = [repr(float(v)) for v in data.covariates[i]]
            w.writerow([repr(float(data.time[i])), int(data.event[i]), int(data.arm[i]), *cov,
                        repr(float(pv.values[i]))])
    finally:
        if out is not sys.stdout:
            out.close()
    log.info("pseudo-observations at tau=%g", tau)
    return EXIT_OK


def cmd_simulate(ns) -> int:
    spec = _scenario(ns.scenario)
    data = generate(spec, ns.n, ns.seed, censor_upper=calibrate_censoring(spec))
    write_csv(data, ns.output)
    return EXIT_OK


def cmd_campaign(ns) -> int:
    spec = _scenario(ns.scenario)
    models = tuple(parse_model(m, ns.encode) for m in ns.model) if ns.model else (ModelSpec(),)
    cfg = CampaignConfig(spec, ns.n, ns.replications, seed=ns.seed, sampler=_sampler(ns), models=models,
                         methods=tuple(m.strip().lower() for m in ns.methods.split(",")),
                         workers=ns.workers, tau=ns.tau, prior_sd=ns.prior_sd)
    result = run_campaign(cfg)
    write_reports(result.reports, ns.output)
    return EXIT_OK


def cmd_tau_scan(ns) -> int:
    data = _load(ns.input)
    rows = tau_scan(data, sampler=_sampler(ns), prior_sd=ns.prior_sd,
                    methods=tuple(m.strip().lower() for m in ns.methods.split(",")))
    out = sys.stdout if ns.output in (None, "-") else open(ns.output, "w", newline="", encoding="utf-8")
    try:
        w = csv.DictWriter(out, fieldnames=["rule", "tau", "method", "estimate", "lower", "upper"],
                           lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    finally:
        if out is not sys.stdout:
            out.close()
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rmst-bgmm",
                                     description="RMST regression with pseudo-observations and Bayesian GMM")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit GEE, Bayesian GMM and KM difference to one dataset")
    p.add_argument("--input", required=True)
    p.add_argument("--output", default="-")
    p.add_argument("--tau", type=float, default=5.0)
    p.add_argument("--model", default=None, help="comma list of covariates, A*E for an interaction")
    p.add_argument("--encode", choices=("product", "stratified"), default="product")
    p.add_argument("--tail-prob", action="append", default=[], metavar="PARAM,OP,VALUE")
    _sampler_args(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("pseudo", help="write jackknife RMST pseudo-observations")
    p.add_argument("--input", required=True)
    p.add_argument("--output", default="-")
    p.add_argument("--tau", type=float, default=5.0)
    p.add_argument("--algorithm", choices=("fast", "naive"), default="fast")
    p.set_defaults(func=cmd_pseudo)

    p = sub.add_parser("simulate", help="generate one dataset from a scenario")
    p.add_argument("--scenario", required=True, help="builtin id (1, 1alt, 2-6) or JSON path")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("campaign", help="run a replicated simulation and write the metrics table")
    p.add_argument("--scenario", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--replications", type=int, default=200)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--tau", type=float, default=None)
    p.add_argument("--model", action="append", default=[], help="repeatable; each adds a fitted model")
    p.add_argument("--encode", choices=("product", "stratified"), default="product")
    p.add_argument("--methods", default="km,gee,gmm")
    p.add_argument("--output", required=True)
    _sampler_args(p)
    p.set_defaults(func=cmd_campaign)

    p = sub.add_parser("tau-scan", help="unadjusted estimates at data-driven restriction times")
    p.add_argument("--input", required=True)
    p.add_argument("--output", default="-")
    p.add_argument("--methods", default="km,gee,gmm")
    _sampler_args(p)
    p.set_defaults(func=cmd_tau_scan)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if ns.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        return ns.func(ns)
    except ConvergenceError as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        return EXIT_CONVERGENCE
    except NumericalError as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        return EXIT_NUMERICAL
    except (InputError, RmstError, ValueError, KeyError) as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        return EXIT_INPUT
    except OSError as exc:
        log.error("%s", exc)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
