"""Bayesian GMM regression for restricted mean survival time on jackknife pseudo-observations."""
from .analysis import FitOptions, ModelSpec, fit_dataset, parse_model, tau_scan
from .campaign import CampaignConfig, CampaignResult, derive_seed, run_campaign
from .data import Dataset, SurvivalRecord, read_csv, write_csv
from .gee import GeeFit, KmDifference, gee_fit, km_diff_rmst
from .gmm import (BatchedPosterior, DesignMatrix, GmmState, RegressionSpec, build_design,
                  log_posterior, objective, pseudo_log_likelihood)
from .metrics import ReplicationReport, ReplicationResult, aggregate, write_reports
from .sampler import (PosteriorDraws, PosteriorSummary, SamplerConfig, diagnose, ess_bulk, sample,
                      split_rhat, summarize, tail_mcse)
from .sim import ScenarioSpec, TrueValues, builtin_scenario, calibrate_censoring, generate, true_values
from .specfun import WeibullParams, lower_incomplete_gamma, weibull_rmst
from .survival import KmCurve, km_fit, pseudo_obs, resolve_tau, rmst_from_curve, tau_candidates

__version__ = "0.1.0"
