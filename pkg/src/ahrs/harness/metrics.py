"""CSV metrics sink: one row per epoch, floats at 9 significant digits."""

from __future__ import annotations

import csv
from pathlib import Path

from ..trainer import EpochMetrics

FIXED_HEAD = ["epoch", "total_return_mean", "total_return_std", "rule_id"]
FIXED_TAIL = ["policy_loss", "value_loss", "entropy"]


def fmt_float(x: float) -> str:
    x = float(x)
    if x == 0.0:
        x = 0.0
    return format(x, ".9g")


def header(n_branches: int) -> list[str]:
    cols = list(FIXED_HEAD)
    for k in range(n_branches):
        cols += [f"ret_mean_{k}", f"ret_var_{k}", f"weight_{k}"]
    return cols + FIXED_TAIL


def metrics_row(m: EpochMetrics) -> list[str]:
    row = [str(m.epoch), fmt_float(m.total_return_mean), fmt_float(m.total_return_std),
           "none" if m.rule_id is None else str(m.rule_id)]
    for mean, var, w in zip(m.branch_means, m.branch_vars, m.weights):
        row += [fmt_float(mean), fmt_float(var), fmt_float(w)]
    return row + [fmt_float(m.policy_loss), fmt_float(m.value_loss), fmt_float(m.entropy)]


class MetricsWriter:
    """Appends rows to a CSV file, writing the header once."""

    def __init__(self, path, n_branches: int):
        self.path = Path(path)
        self.n_branches = n_branches
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = open(self.path, "a", newline="", encoding="utf-8")
        self._writer = csv.writer(self._fh, lineterminator="\n")
        if self.path.stat().st_size == 0:
            self._writer.writerow(header(n_branches))
            self._fh.flush()

    def __call__(self, m: EpochMetrics) -> None:
        write_metrics_row(self, m)

    def write(self, m: EpochMetrics) -> None:
        if len(m.weights) != self.n_branches:
            raise ValueError(f"metrics carry {len(m.weights)} branches, sink expects {self.n_branches}")
        self._writer.writerow(metrics_row(m))
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def write_metrics_row(sink: MetricsWriter, m: EpochMetrics) -> None:
    sink.write(m)


def read_metrics(path) -> list[dict]:
    """Rows as dicts; numeric cells converted to float (``rule_id`` stays text)."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = []
        for rec in csv.DictReader(fh):
            out = {}
            for k, v in rec.items():
                if k == "rule_id":
                    out[k] = v
                elif k == "epoch":
                    out[k] = int(v)
                else:
                    out[k] = float(v)
            rows.append(out)
    return rows
