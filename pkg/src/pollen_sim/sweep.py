"""Run every (value, seed) cell of a sweep and write the combined reports."""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from .config import SweepSpec
from .engine import ExperimentResult, run_experiment
from .errors import PollenSimError
from .report import SummaryRow, aggregate_table, emit_run, format_table, write_summary, _write_json
from . import __version__

log = logging.getLogger(__name__)


def value_label(value) -> str:
    if isinstance(value, (tuple, list)):
        return "-".join(str(v) for v in value)
    return str(value)


def cell_name(axis: str, value, seed: int) -> str:
    return f"{axis}={value_label(value)}_seed={seed}"


@dataclass
class CellResult:
    value: object
    seed: int
    result: ExperimentResult | None = None
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None


@dataclass
class SweepReport:
    axis: str
    cells: list[CellResult] = field(default_factory=list)
    table: list[dict] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return all(c.ok for c in self.cells)


def _run_cell(sweep: SweepSpec, value, seed: int) -> CellResult:
    try:
        cfg = sweep.cell_config(value, seed)
        return CellResult(value, seed, run_experiment(cfg))
    except PollenSimError as e:
        return CellResult(value, seed, error=str(e))


def run_sweep(sweep: SweepSpec, out_dir: str | Path | None = None, jobs: int = 1) -> SweepReport:
    grid = [(v, s) for v in sweep.values for s in sweep.seeds]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            cells = list(ex.map(_run_cell, [sweep] * len(grid), *zip(*grid)))
    else:
        cells = [_run_cell(sweep, v, s) for v, s in grid]
    report = SweepReport(sweep.axis, cells)
    report.table = aggregate_table([(value_label(c.value), c.result) for c in cells if c.ok])
    for c in cells:
        if not c.ok:
            log.error("cell %s failed: %s", cell_name(sweep.axis, c.value, c.seed), c.error)
    if out_dir is not None:
        emit_sweep(sweep, report, out_dir)
    return report


def emit_sweep(sweep: SweepSpec, report: SweepReport, out_dir: str | Path) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for c in report.cells:
        name = cell_name(sweep.axis, c.value, c.seed)
        if c.ok:
            emit_run(c.result, out / "cells" / name, sweep.cell_config(c.value, c.seed).to_dict(with_output_dir=False))
            rows.append(SummaryRow.from_result(name, value_label(c.value), c.result))
        else:
            rows.append(SummaryRow.failed(name, value_label(c.value), c.seed, c.error))
    write_summary(rows, out / "summary.csv")
    (out / "table.txt").write_text(format_table(report.table, sweep.axis))
    _write_json({
        "tool": "pollen-sim",
        "version": __version__,
        "axis": sweep.axis,
        "values": [value_label(v) for v in sweep.values],
        "seeds": list(sweep.seeds),
        "base_fingerprint": sweep.base.fingerprint(),
        "cells": {cell_name(sweep.axis, c.value, c.seed):
                  (c.result.fingerprint if c.ok else None) for c in report.cells},
        "failed": [cell_name(sweep.axis, c.value, c.seed) for c in report.cells if not c.ok],
        "table": report.table,
    }, out / "manifest.json")
