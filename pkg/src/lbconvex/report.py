"""Tabular results shared by every verification check."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np


@dataclass
class CheckTable:
    """Per-sample lhs <= rhs comparisons (or bounded ratios) for one check.

    `advisory` tables are reported but never fail a run.
    """

    name: str
    domain: str
    lhs: np.ndarray
    rhs: np.ndarray
    passed: np.ndarray
    skipped: int = 0
    advisory: bool = False
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        self.lhs = np.atleast_1d(np.asarray(self.lhs, dtype=float))
        self.rhs = np.atleast_1d(np.asarray(self.rhs, dtype=float))
        self.passed = np.atleast_1d(np.asarray(self.passed, dtype=bool))

    @property
    def ratio(self):
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(self.rhs != 0, self.lhs / self.rhs, np.where(self.lhs == 0, 0.0, np.inf))

    @property
    def n_samples(self):
        return len(self.lhs)

    @property
    def violations(self):
        return int((~self.passed).sum())

    @property
    def ok(self):
        return self.advisory or (self.n_samples > 0 and self.violations == 0)

    def rows(self):
        r = self.ratio
        for i in range(self.n_samples):
            yield [self.name, self.domain, i, _fmt(self.lhs[i]), _fmt(self.rhs[i]), _fmt(r[i]), int(self.passed[i])]

    def summary(self):
        return {
            "check": self.name,
            "domain": self.domain,
            "samples": self.n_samples,
            "violations": self.violations,
            "skipped": self.skipped,
            "max_ratio": _fmt(float(np.max(self.ratio))) if self.n_samples else None,
            "advisory": self.advisory,
            "pass": bool(self.ok),
        }


CHECK_COLUMNS = ["check", "domain", "sample_id", "lhs", "rhs", "ratio", "pass"]


def _fmt(v):
    return float(f"{float(v):.12g}")


def write_check_csv(path, tables):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CHECK_COLUMNS)
        for t in tables:
            w.writerows(t.rows())


def spread(values):
    """max / min of positive values (inf if any vanish)."""
    v = np.asarray(values, dtype=float)
    return float(v.max() / v.min()) if v.min() > 0 else np.inf
