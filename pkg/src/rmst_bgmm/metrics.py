"""Replication-study performance metrics: bias, ASE, ESE, RMSE and coverage."""
from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import InputError, TooFewConverged

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class ReplicationResult:
    estimate: float
    se: float
    ci_lower: float
    ci_upper: float
    converged: bool = True

    def __post_init__(self):
        if self.converged and not self.ci_lower < self.ci_upper:
            raise InputError(f"interval [{self.ci_lower}, {self.ci_upper}] is empty")


@dataclass(frozen=True)
class ReplicationReport:
    method: str
    scenario: str
    n: int
    replications_used: int
    excluded: int
    bias: float
    ase: float
    ese: float
    coverage: float
    parameter: str = "delta"
    adjustment: str = "-"
    truth: float = math.nan

    @property
    def rmse(self) -> float:
        return math.sqrt(self.ese**2 + self.bias**2)

    @property
    def ese_defined(self) -> bool:
        return math.isfinite(self.ese)

    def row(self) -> dict:
        d = asdict(self)
        d["rmse"] = self.rmse
        d["schema_version"] = SCHEMA_VERSION
        d["note"] = "" if self.ese_defined else "ESE undefined (fewer than 2 replications)"
        return d


def aggregate(results: Sequence[ReplicationResult], truth: float, *, method: str = "",
              scenario: str = "", n: int = 0, parameter: str = "delta", adjustment: str = "-",
              allow_single: bool = False) -> ReplicationReport:
    """Summarize converged replications against the true value.

    ESE uses the n-1 denominator; coverage counts closed-interval containment.
    Non-converged results are dropped and counted in ``excluded``. With
    ``allow_single`` a lone converged result yields an undefined (NaN) ESE
    instead of raising.
    """
    used = [r for r in results if r.converged]
    excluded = len(results) - len(used)
    minimum = 1 if allow_single else 2
    if len(used) < minimum:
        raise TooFewConverged(f"{len(used)} converged replication(s); need at least {minimum}")
    est = np.array([r.estimate for r in used])
    se = np.array([r.se for r in used])
    lo = np.array([r.ci_lower for r in used])
    hi = np.array([r.ci_upper for r in used])
    ese = float(est.std(ddof=1)) if est.size > 1 else math.nan
    covered = (lo <= truth) & (truth <= hi)
    return ReplicationReport(
        method=method, scenario=str(scenario), n=int(n), replications_used=len(used),
        excluded=excluded, bias=float(est.mean() - truth), ase=float(se.mean()), ese=ese,
        coverage=100.0 * float(covered.mean()), parameter=parameter, adjustment=adjustment,
        truth=float(truth))


REPORT_COLUMNS = ("schema_version", "scenario", "n", "method", "parameter", "adjustment",
                  "truth", "bias", "ase", "ese", "rmse", "coverage", "replications_used",
                  "excluded", "note")


def write_reports(reports: Iterable[ReplicationReport], path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=REPORT_COLUMNS, extrasaction="ignore", lineterminator="\n")
        w.writeheader()
        for r in reports:
            row = r.row()
            for k in ("truth", "bias", "ase", "ese", "rmse", "coverage"):
                row[k] = f"{row[k]:.6g}"
            w.writerow(row)
