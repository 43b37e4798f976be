"""CSV/text reports and run manifests."""

from __future__ import annotations

import csv
import json
import math
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import __version__
from .engine import ExperimentResult

METRICS_HEADER = ["round", "policy", "clients", "duration_s", "throughput_cps", "timedelta_s", "messages"]
SUMMARY_HEADER = ["cell", "value", "seed", "policy", "mode", "rounds", "clients",
                  "throughput_mean", "throughput_std", "timedelta_mean", "timedelta_std", "status"]


def fmt_duration(x: float) -> str:
    return repr(float(x))


def fmt_rate(x: float) -> str:
    """Six significant digits, always with a decimal point (5 -> '5.0')."""
    s = f"{x:.6g}"
    if not any(ch in s for ch in ".enai"):
        s += ".0"
    return s


def write_metrics(result: ExperimentResult, path: str | Path) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(METRICS_HEADER)
        for r in result.rounds:
            w.writerow([r.round_index, result.policy, r.clients_trained, fmt_duration(r.round_duration),
                        fmt_rate(r.throughput), fmt_duration(r.timedelta_workers), r.messages_sent])
    return path


def write_fits(result: ExperimentResult, path: str | Path) -> Path | None:
    if not result.fits:
        return None
    path = Path(path)
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["round", "gpu_type", "a", "b", "c", "d", "mse", "num_points", "fallback"])
        for r, rows in result.fits:
            for row in rows:
                w.writerow([r, row["gpu_type"], repr(row["a"]), repr(row["b"]), repr(row["c"]),
                            repr(row["d"]), repr(row["mse"]), row["num_points"], row["fallback"]])
    return path


def manifest(result: ExperimentResult, config_dict: dict | None = None) -> dict:
    return {
        "tool": "pollen-sim",
        "version": __version__,
        "seed": result.seed,
        "config_fingerprint": result.fingerprint,
        "policy": result.policy,
        "mode": result.mode,
        "rounds": len(result.rounds),
        "clients_trained": result.clients_trained,
        "model_checksum": result.model_checksum,
        "stats": result.stats,
        "config": config_dict,
    }


def _write_json(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def emit_run(result: ExperimentResult, out_dir: str | Path, config_dict: dict | None = None) -> dict:
    """Write metrics.csv, summary.csv, fits.csv (LB only) and manifest.json."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {"metrics": write_metrics(result, out / "metrics.csv")}
    fits = write_fits(result, out / "fits.csv")
    if fits:
        files["fits"] = fits
    files["summary"] = write_summary([SummaryRow.from_result("run", "", result)], out / "summary.csv")
    _write_json(manifest(result, config_dict), out / "manifest.json")
    files["manifest"] = out / "manifest.json"
    return files


@dataclass
class SummaryRow:
    cell: str
    value: str
    seed: int
    policy: str
    mode: str
    rounds: int
    clients: int
    throughput_mean: float
    throughput_std: float
    timedelta_mean: float
    timedelta_std: float
    status: str = "ok"

    @classmethod
    def from_result(cls, cell: str, value, result: ExperimentResult) -> "SummaryRow":
        s = result.stats
        return cls(cell, str(value), result.seed, result.policy, result.mode, len(result.rounds),
                   result.clients_trained, s["throughput_mean"], s["throughput_std"],
                   s["timedelta_mean"], s["timedelta_std"])

    @classmethod
    def failed(cls, cell: str, value, seed: int, error: str) -> "SummaryRow":
        nan = math.nan
        return cls(cell, str(value), seed, "", "", 0, 0, nan, nan, nan, nan, f"error: {error}")


def write_summary(rows: Iterable[SummaryRow], path: str | Path) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(SUMMARY_HEADER)
        for r in rows:
            w.writerow([r.cell, r.value, r.seed, r.policy, r.mode, r.rounds, r.clients,
                        fmt_rate(r.throughput_mean), fmt_rate(r.throughput_std),
                        fmt_duration(r.timedelta_mean), fmt_duration(r.timedelta_std), r.status])
    return path


def aggregate_table(cells: Sequence[tuple[str, ExperimentResult]]) -> list[dict]:
    """Pool per-round metrics over seeds, one row per sweep value (first-seen order)."""
    thr: dict[str, list[float]] = defaultdict(list)
    td: dict[str, list[float]] = defaultdict(list)
    for value, result in cells:
        thr[value].extend(r.throughput for r in result.rounds)
        td[value].extend(r.timedelta_workers for r in result.rounds)
    rows = []
    for value in thr:
        t, d = np.array(thr[value]), np.array(td[value])
        rows.append({"value": value, "throughput_mean": float(t.mean()), "throughput_std": float(t.std()),
                     "timedelta_mean": float(d.mean()), "timedelta_std": float(d.std()), "rounds": len(t)})
    return rows


def format_table(rows: Sequence[dict], axis: str) -> str:
    head = f"{axis:>18}  {'throughput (clients/s)':>24}  {'timedelta (s)':>20}"
    lines = [head, "-" * len(head)]
    for r in rows:
        lines.append(f"{r['value']:>18}  {r['throughput_mean']:>14.3g} ± {r['throughput_std']:<7.2g}"
                     f"  {r['timedelta_mean']:>10.3g} ± {r['timedelta_std']:<7.2g}")
    return "\n".join(lines) + "\n"
