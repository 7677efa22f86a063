"""Run reports: rule checks, JSON verdicts, CSV series, rendered figures.

A report is the audited residue of one experiment run.  Every asserted
inequality is carried as a RuleCheck whose rule id names the claim being
enforced (stable, grep-able strings like "contraction-step-ceiling"),
with the observed value and the bound it was held against, so a failed
run says exactly which claim broke and by how much.

Serialization is deliberately boring: JSON with sorted keys for the
verdict file, comma-separated UTF-8 with a header row for series data,
and matplotlib figures rendered headlessly to PNG next to them.
"""

from __future__ import annotations

import csv
import json
import numbers
import operator
from dataclasses import asdict, dataclass, field
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .errors import InvalidFieldError

_RELATIONS = {
    "<": operator.lt,
    "<=": operator.le,
    ">": operator.gt,
    ">=": operator.ge,
    "==": operator.eq,
}


@dataclass(frozen=True)
class RuleCheck:
    """One audited inequality: the claim is ``observed relation bound``."""

    rule: str
    relation: str
    observed: float
    bound: float
    passed: bool

    @classmethod
    def compare(cls, rule: str, observed, relation: str, bound) -> "RuleCheck":
        rel = _RELATIONS.get(relation)
        if rel is None:
            raise InvalidFieldError(f"unknown relation {relation!r}")
        observed = float(observed)
        bound = float(bound)
        return cls(rule, relation, observed, bound, bool(rel(observed, bound)))

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        return (
            f"[{tag}] {self.rule}: "
            f"{self.observed:.6g} {self.relation} {self.bound:.6g}"
        )


@dataclass
class RunReport:
    """Everything one run asserts, measures, and writes.

    config echoes the resolved experiment configuration; metrics hold
    the measured quantities (scalars and short series); checks are the
    pass/fail rules; artifacts maps labels to files written alongside
    the report.  Wall time is recorded for the record but is not part
    of the determinism contract, which covers the report values.
    """

    command: str
    config: dict
    metrics: dict
    checks: tuple
    artifacts: dict = field(default_factory=dict)
    wall_time_s: float = 0.0

    @property
    def passed(self) -> bool:
        return all(check.passed for check in self.checks)

    def to_dict(self) -> dict:
        return {
            "command": self.command,
            "config": jsonable(self.config),
            "metrics": jsonable(self.metrics),
            "checks": [asdict(check) for check in self.checks],
            "verdict": "pass" if self.passed else "fail",
            "artifacts": jsonable(self.artifacts),
            "wall_time_s": float(self.wall_time_s),
        }

    def summary_lines(self):
        lines = [check.line() for check in self.checks]
        n = len(self.checks)
        lines.append(
            f"verdict: {'pass' if self.passed else 'fail'} "
            f"({n} check{'s' if n != 1 else ''})"
        )
        return lines


def jsonable(value):
    """Recursively convert report values to JSON-native types."""
    if isinstance(value, dict):
        return {str(k): jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return [jsonable(v) for v in value.tolist()]
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, numbers.Integral):
        return int(value)
    if isinstance(value, numbers.Real):
        return float(value)
    if value is None or isinstance(value, (str, int, float)):
        return value
    return str(value)


def write_json_report(report: RunReport, path) -> Path:
    path = Path(path)
    text = json.dumps(report.to_dict(), sort_keys=True, indent=2)
    path.write_text(text + "\n", encoding="utf-8")
    return path


def _csv_cell(value):
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, numbers.Integral):
        return str(int(value))
    if isinstance(value, numbers.Real):
        return repr(float(value))  # shortest round-trip, '.' decimal mark
    return str(value)


def write_csv_series(path, columns, rows) -> Path:
    """Comma-separated UTF-8 series; the header row is always written."""
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(list(columns))
        for row in rows:
            cells = [_csv_cell(v) for v in row]
            if len(cells) != len(columns):
                raise InvalidFieldError("row width does not match the header")
            writer.writerow(cells)
    return path


def line_figure(path, x, curves: dict, *, title, xlabel, ylabel, logy=False) -> Path:
    """Render named curves over a shared abscissa to a PNG file."""
    path = Path(path)
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    try:
        for label, ys in curves.items():
            ax.plot(np.asarray(x), np.asarray(ys, dtype=float), label=label)
        if logy:
            ax.set_yscale("log")
        ax.set_title(title)
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        if len(curves) > 1:
            ax.legend()
        ax.grid(True, alpha=0.3)
        fig.savefig(path, dpi=110, bbox_inches="tight")
    finally:
        plt.close(fig)
    return path


def heatmap_figure(path, values, *, title, xlabel="y2 cell", ylabel="y1 cell") -> Path:
    """Render a 2d array as an annotated heatmap PNG."""
    path = Path(path)
    values = np.asarray(values, dtype=float)
    if values.ndim != 2:
        raise InvalidFieldError("heatmap needs a 2d array")
    fig, ax = plt.subplots(figsize=(5.0, 4.2))
    try:
        image = ax.imshow(values, origin="lower", aspect="auto")
        fig.colorbar(image, ax=ax, shrink=0.9)
        ax.set_title(title)
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        fig.savefig(path, dpi=110, bbox_inches="tight")
    finally:
        plt.close(fig)
    return path
