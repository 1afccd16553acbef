"""Survival records, datasets and the CSV dataset format.

CSV layout: a header ``time,event,arm,<covariate names...>``; ``event`` and
``arm`` are 0/1, decimal point ``.``, UTF-8. Rows with a missing cell are
dropped (complete-case analysis) and counted.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import EmptyDataset, InputError

logger = logging.getLogger(__name__)

REQUIRED_COLUMNS = ("time", "event", "arm")
_MISSING = {"", "na", "nan", "null", "none", "."}


@dataclass(frozen=True)
class SurvivalRecord:
    time: float
    event: bool
    arm: int
    covariates: tuple[float, ...] = ()

    def __post_init__(self):
        if not math.isfinite(self.time) or self.time < 0:
            raise InputError(f"time must be finite and >= 0, got {self.time}")
        if self.arm not in (0, 1):
            raise InputError(f"arm must be 0 or 1, got {self.arm}")


def _frozen(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class Dataset:
    """Column-oriented survival data: one row per subject."""

    time: np.ndarray
    event: np.ndarray
    arm: np.ndarray
    covariates: np.ndarray = field(default=None)
    covariate_names: tuple[str, ...] = ()

    def __post_init__(self):
        time = np.array(self.time, dtype=float).reshape(-1)
        n = time.size
        event = np.array(self.event).reshape(-1)
        arm = np.array(self.arm).reshape(-1)
        if event.size != n or arm.size != n:
            raise InputError("time, event and arm must have the same length")
        if not np.all(np.isfinite(time)) or np.any(time < 0):
            raise InputError("times must be finite and non-negative")
        if not np.all(np.isin(event, (0, 1))):
            raise InputError("event indicators must be 0/1")
        if not np.all(np.isin(arm, (0, 1))):
            raise InputError("arm must be 0/1")
        names = tuple(str(c) for c in self.covariate_names)
        if self.covariates is None:
            cov = np.empty((n, len(names)))
        else:
            cov = np.array(self.covariates, dtype=float)
            if cov.ndim == 1:
                cov = cov.reshape(n, -1) if n else cov.reshape(0, len(names))
        if cov.shape != (n, len(names)):
            raise InputError(
                f"covariates have shape {cov.shape}, expected ({n}, {len(names)})")
        if not np.all(np.isfinite(cov)):
            raise InputError("covariates must be finite")
        if len(set(names)) != len(names):
            raise InputError("duplicate covariate names")
        object.__setattr__(self, "time", _frozen(time))
        object.__setattr__(self, "event", _frozen(event.astype(bool)))
        object.__setattr__(self, "arm", _frozen(arm.astype(np.int8)))
        object.__setattr__(self, "covariates", _frozen(cov))
        object.__setattr__(self, "covariate_names", names)

    def __len__(self) -> int:
        return self.time.size

    @property
    def n(self) -> int:
        return self.time.size

    @property
    def n_events(self) -> int:
        return int(self.event.sum())

    @property
    def censoring_rate(self) -> float:
        return 1.0 - self.n_events / self.n if self.n else float("nan")

    @classmethod
    def from_records(cls, records: Iterable[SurvivalRecord],
                     covariate_names: Sequence[str] = ()) -> "Dataset":
        records = list(records)
        p = len(covariate_names)
        for r in records:
            if len(r.covariates) != p:
                raise InputError("covariate vector length differs from covariate_names")
        return cls(
            time=[r.time for r in records],
            event=[r.event for r in records],
            arm=[r.arm for r in records],
            covariates=np.array([r.covariates for r in records], dtype=float).reshape(len(records), p),
            covariate_names=tuple(covariate_names),
        )

    def records(self) -> list[SurvivalRecord]:
        return [
            SurvivalRecord(float(t), bool(e), int(a), tuple(float(v) for v in z))
            for t, e, a, z in zip(self.time, self.event, self.arm, self.covariates)
        ]

    def subset(self, mask) -> "Dataset":
        mask = np.asarray(mask)
        return Dataset(self.time[mask], self.event[mask], self.arm[mask],
                       self.covariates[mask], self.covariate_names)

    def covariate(self, name: str) -> np.ndarray:
        try:
            j = self.covariate_names.index(name)
        except ValueError:
            raise InputError(f"unknown covariate {name!r}; have {list(self.covariate_names)}") from None
        return self.covariates[:, j]

    def require_nonempty(self):
        if self.n == 0:
            raise EmptyDataset("dataset has no records")


def _parse_float(cell: str, what: str, lineno: int) -> float:
    try:
        return float(cell)
    except ValueError:
        raise InputError(f"line {lineno}: cannot parse {what} value {cell!r}") from None


def _parse_flag(cell: str, what: str, lineno: int) -> int:
    v = _parse_float(cell, what, lineno)
    if v not in (0.0, 1.0):
        raise InputError(f"line {lineno}: {what} must be 0 or 1, got {cell!r}")
    return int(v)


def read_csv(path: str | Path) -> tuple[Dataset, int]:
    """Load a dataset; returns ``(dataset, n_dropped)`` where dropped rows had missing cells."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise InputError(f"{path}: empty file, header required") from None
        if tuple(header[:3]) != REQUIRED_COLUMNS:
            raise InputError(f"{path}: header must start with time,event,arm; got {header[:3]}")
        names = header[3:]
        times, events, arms, covs = [], [], [], []
        dropped = 0
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise InputError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            cells = [c.strip() for c in row]
            if any(c.lower() in _MISSING for c in cells):
                dropped += 1
                continue
            times.append(_parse_float(cells[0], "time", lineno))
            events.append(_parse_flag(cells[1], "event", lineno))
            arms.append(_parse_flag(cells[2], "arm", lineno))
            covs.append([_parse_float(c, names[j], lineno) for j, c in enumerate(cells[3:])])
    if dropped:
        logger.warning("%s: dropped %d row(s) with missing cells", path, dropped)
    data = Dataset(times, events, arms,
                   np.array(covs, dtype=float).reshape(len(times), len(names)), tuple(names))
    return data, dropped


def write_csv(data: Dataset, path: str | Path) -> None:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(REQUIRED_COLUMNS) + list(data.covariate_names))
        for t, e, a, z in zip(data.time, data.event, data.arm, data.covariates):
            w.writerow([repr(float(t)), int(e), int(a)] + [repr(float(v)) for v in z])
