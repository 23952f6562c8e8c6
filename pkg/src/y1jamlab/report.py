"""Result files, comparison tables and figures.

A run directory holds ``report.json``, ``perticks.csv``, ``decisions.csv``
and ``cdf_{bler,snr,bitrate}.csv``, plus matching PNG figures when plotting
is enabled.
"""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path
from typing import Iterable, Sequence

from .jammer import write_decision_log

CDF_METRICS = {
    "bler": "BLER (%)",
    "snr": "SNR (dB)",
    "bitrate": "Bitrate (bps)",
}
RUN_COLUMNS = ("strategy", "mean_bler_pct", "mean_snr_db", "mean_bitrate_bps",
               "bitrate_drop_pct", "active_time_pct")
RUN_HEADERS = ("Strategy", "BLER (%)", "SNR (dB)", "Bitrate (bps)", "Bitrate Drop (%)",
               "Active Time (%)")


def _write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def write_run(report, out_dir: str | Path, plots: bool = True) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(json.dumps(report.summary(), indent=2))
    if report.records:
        header = list(report.records[0])
        _write_csv(out / "perticks.csv", header, ([r[k] for k in header] for r in report.records))
    write_decision_log(out / "decisions.csv", report.decisions)
    for name, table in report.cdf_tables.items():
        _write_csv(out / f"cdf_{name}.csv", ("value", "cdf"), table)
    if plots:
        plot_cdfs({report.strategy: report.cdf_tables}, out)
    return out


def plot_cdfs(tables_by_label: dict[str, dict], out_dir: str | Path,
              prefix: str = "cdf") -> list[Path]:
    """One step-CDF figure per metric, one line per label."""
    plt = _pyplot()
    written = []
    for metric, axis_label in CDF_METRICS.items():
        fig, ax = plt.subplots(figsize=(4.5, 3.2))
        for label, tables in tables_by_label.items():
            table = tables.get(metric) or []
            if not table:
                continue
            xs, ys = zip(*table)
            ax.step(xs, ys, where="post", label=label)
        ax.set_xlabel(axis_label)
        ax.set_ylabel("CDF")
        ax.set_ylim(0, 1.02)
        ax.grid(alpha=0.3)
        ax.legend(fontsize=8)
        fig.tight_layout()
        path = Path(out_dir) / f"{prefix}_{metric}.png"
        fig.savefig(path, dpi=120)
        plt.close(fig)
        written.append(path)
    return written


def read_cdf(path: Path) -> list[tuple[float, float]]:
    with open(path, newline="") as fh:
        return [(float(r["value"]), float(r["cdf"])) for r in csv.DictReader(fh)]


def load_runs(in_dir: str | Path) -> list[tuple[Path, dict]]:
    """Every run under ``in_dir`` (the directory itself or its subdirectories)."""
    root = Path(in_dir)
    found = sorted(root.rglob("report.json"))
    return [(p.parent, json.loads(p.read_text())) for p in found]


def render_runs(runs: list[dict], fmt: str = "md") -> str:
    if fmt == "json":
        return json.dumps(runs, indent=2)
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        keys = list(runs[0]) if runs else list(RUN_COLUMNS)
        writer.writerow(keys)
        for run in runs:
            writer.writerow([run.get(k, "") for k in keys])
        return buf.getvalue()
    if fmt != "md":
        raise ValueError(f"unknown format {fmt!r}")
    lines = ["| " + " | ".join(RUN_HEADERS) + " |",
             "|" + "|".join("---" for _ in RUN_HEADERS) + "|"]
    for run in runs:
        cells = [
            run["strategy"],
            f"{run['mean_bler_pct']:.2f}",
            f"{run['mean_snr_db']:.2f}",
            f"{run['mean_bitrate_bps']:.1f}",
            f"{run['bitrate_drop_pct']:.1f}",
            f"{run['active_time_pct']:.0f}",
        ]
        lines.append("| " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"


def plot_run_overlay(run_dirs: Sequence[tuple[Path, dict]], out_dir: str | Path) -> list[Path]:
    tables = {}
    for path, summary in run_dirs:
        metrics = {}
        for metric in CDF_METRICS:
            f = path / f"cdf_{metric}.csv"
            if f.exists():
                metrics[metric] = read_cdf(f)
        tables[summary["strategy"]] = metrics
    return plot_cdfs(tables, out_dir, prefix="compare")


# -- budget sweep ---------------------------------------------------------------

def sweep_markdown(result) -> str:
    budgets = result.budgets
    if not budgets:
        return "| Strategy |\n|---|\n"
    head = ["Strategy"] + [f"{100 * b:g}% Budget" for b in budgets]
    sub = [""] + ["Bitrate / Drop (%) / BLER" for _ in budgets]
    lines = ["| " + " | ".join(head) + " |", "|" + "|".join("---" for _ in head) + "|",
             "| " + " | ".join(sub) + " |"]
    base = [f"{result.baseline_bps:.0f} / -- / {result.baseline_bler_pct:.2f}" for _ in budgets]
    lines.append("| No Jammer | " + " | ".join(base) + " |")
    for name in result.strategies:
        cells = []
        for b in budgets:
            rep = result.cells[(b, name)]
            cells.append(f"{rep.mean_bitrate_bps:.0f} / {rep.bitrate_drop_pct:.1f} / "
                         f"{rep.mean_bler_pct:.2f}")
        lines.append(f"| {name} | " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"


def write_sweep(result, out_dir: str | Path, plots: bool = True) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = result.rows()
    header = list(rows[0]) if rows else ["budget_pct", "strategy", "bitrate_bps", "drop_pct",
                                         "bler_pct", "active_ticks", "budget_limit"]
    _write_csv(out / "sweep.csv", header, ([r[k] for k in header] for r in rows))
    (out / "sweep.json").write_text(json.dumps(
        {"baseline_bitrate_bps": result.baseline_bps,
         "baseline_bler_pct": result.baseline_bler_pct, "cells": rows}, indent=2))
    (out / "sweep.md").write_text(sweep_markdown(result))
    for (budget, name), rep in result.cells.items():
        write_decision_log(out / f"decisions_{name}_{round(100 * budget)}.csv", rep.decisions)
    if plots and rows:
        plt = _pyplot()
        fig, ax = plt.subplots(figsize=(4.5, 3.2))
        for name in result.strategies:
            xs = [100 * b for b in result.budgets]
            ys = [result.cells[(b, name)].bitrate_drop_pct for b in result.budgets]
            ax.plot(xs, ys, marker="o", label=name)
        ax.set_xlabel("Jamming budget (%)")
        ax.set_ylabel("Bitrate drop (%)")
        ax.grid(alpha=0.3)
        ax.legend(fontsize=8)
        fig.tight_layout()
        fig.savefig(out / "bitrate_drop_vs_budget.png", dpi=120)
        plt.close(fig)
    return out
