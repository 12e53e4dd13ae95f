"""Experiment reports: named checks with tolerances, series, and provenance."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np


def config_hash(cfg):
    blob = json.dumps(cfg, sort_keys=True, default=str)
    return hashlib.sha1(blob.encode()).hexdigest()[:12]


def batch_se(values, n_batches=20):
    """Mean and batched standard error (>= 20 batches unless fewer values)."""
    values = np.asarray(values, dtype=float).ravel()
    if values.size == 0:
        raise ValueError("no values to reduce")
    nb = int(min(n_batches, values.size))
    means = np.array([b.mean() for b in np.array_split(values, nb)])
    se = float(means.std(ddof=1) / np.sqrt(nb)) if nb > 1 else 0.0
    return float(values.mean()), se


@dataclass
class Check:
    """One pass/fail comparison: value, its tolerance, and the realized margin.

    ``margin`` is how much slack was left: positive means the check passed
    with room to spare, negative by how much it missed.
    """

    name: str
    value: float
    tolerance: str
    margin: float
    passed: bool
    se: float | None = None

    def row(self):
        return {
            "name": self.name,
            "value": self.value,
            "se": self.se,
            "tolerance": self.tolerance,
            "margin": self.margin,
            "pass": self.passed,
        }


@dataclass
class ExperimentReport:
    """Everything one experiment produced, ready for JSON + CSV emission."""

    experiment: str
    config: dict
    master_seed: int
    checks: list = field(default_factory=list)
    series: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)

    SCHEMA_VERSION = 1

    @property
    def passed(self):
        return all(c.passed for c in self.checks)

    @property
    def hash(self):
        return config_hash(self.config)

    def check_le(self, name, value, bound, se=None, tolerance=None):
        tol = tolerance or f"<= {bound:g}"
        self.checks.append(Check(name, float(value), tol, float(bound - value),
                                 bool(value <= bound), se))
        return self.checks[-1]

    def check_within(self, name, value, target, tol, se=None, tolerance=None):
        err = abs(value - target)
        label = tolerance or f"|value - {target:g}| <= {tol:g}"
        self.checks.append(Check(name, float(value), label, float(tol - err),
                                 bool(err <= tol), se))
        return self.checks[-1]

    def check_true(self, name, flag, value, tolerance):
        self.checks.append(Check(name, float(value), tolerance,
                                 0.0 if flag else -1.0, bool(flag)))
        return self.checks[-1]

    def add_series(self, name, columns, rows):
        self.series[name] = {"columns": list(columns),
                             "rows": [[float(v) for v in r] for r in rows]}

    def note(self, text):
        self.notes.append(text)

    def to_json_dict(self):
        return {
            "schema_version": self.SCHEMA_VERSION,
            "experiment": self.experiment,
            "config": self.config,
            "config_hash": self.hash,
            "master_seed": self.master_seed,
            "pass": self.passed,
            "checks": [c.row() for c in self.checks],
            "series": sorted(self.series),
            "notes": self.notes,
        }

    def summary_lines(self):
        out = [f"experiment {self.experiment}  [{'PASS' if self.passed else 'FAIL'}]"]
        for c in self.checks:
            se = "" if c.se is None else f" +- {c.se:.3g}"
            out.append(f"  [{'pass' if c.passed else 'FAIL'}] {c.name}: "
                       f"{c.value:.6g}{se}  ({c.tolerance}; margin {c.margin:+.3g})")
        for n in self.notes:
            out.append(f"  note: {n}")
        return out
