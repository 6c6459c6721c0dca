"""Summaries over repeated runs: mean, sample std, Student-t 95% interval."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy import stats

from .errors import StatError

CSV_HEADER = ("label", "n", "mean", "std", "ci95_lo", "ci95_hi")


@dataclass(frozen=True)
class RunSummary:
    label: str
    n_runs: int
    mean: float
    std: float
    ci95_lo: float
    ci95_hi: float

    def row(self) -> list:
        return [self.label, self.n_runs, self.mean, self.std, self.ci95_lo, self.ci95_hi]


def summarize(values: Sequence[float], label: str = "") -> RunSummary:
    x = np.asarray(values, dtype=np.float64)
    if x.size < 2:
        raise StatError(f"{label or 'group'}: need at least 2 values, got {x.size}")
    # sort first so the floating-point sums do not depend on input order
    x = np.sort(x)
    mean = float(x.mean())
    std = float(x.std(ddof=1))
    half = float(stats.t.ppf(0.975, x.size - 1)) * std / math.sqrt(x.size)
    return RunSummary(label, int(x.size), mean, std, mean - half, mean + half)


def compare_table(groups: Mapping[str, Sequence[float]]) -> list[RunSummary]:
    return [summarize(v, label) for label, v in groups.items()]


def to_csv(rows: Sequence[RunSummary]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in rows:
        w.writerow([r.label, r.n_runs] + [repr(v) for v in r.row()[2:]])
    return buf.getvalue()


def to_text(rows: Sequence[RunSummary], percent: bool = False) -> str:
    scale = 100.0 if percent else 1.0
    cells = [list(CSV_HEADER)]
    for r in rows:
        cells.append([r.label, str(r.n_runs)] + [f"{v * scale:.4f}" for v in r.row()[2:]])
    widths = [max(len(row[i]) for row in cells) for i in range(len(CSV_HEADER))]
    lines = []
    for k, row in enumerate(cells):
        lines.append("  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(row, widths))))
        if k == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def lookup(doc: dict, dotted: str):
    for part in dotted.split("."):
        doc = doc[part]
    return doc


def load_run_values(directory, metric: str = "test.accuracy") -> list[float]:
    """Collect ``metric`` from every ``result.json`` below ``directory`` (path order)."""
    paths = sorted(Path(directory).rglob("result.json"))
    return [float(lookup(json.loads(p.read_text()), metric)) for p in paths]
