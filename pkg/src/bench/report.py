#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Benchmark report rendering.

- aligned text table for the terminal
- bench.csv with the schema `scenario,requests,avg_ms,tps,avg_bytes,errors`,
  merged across runs so one file holds every scenario measured
- requests_<scenario>.csv with one line per request
- three SVG panels (throughput, response time, reply size vs. requests)
"""

import logging
from pathlib import Path
from typing import List, Union

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import pandas as pd  # noqa: E402

from src.bench.load_runner import BenchReport  # noqa: E402
from src.security.soap_security import ScenarioKind  # noqa: E402
from src.utils.file_utils import ensure_dir_exists  # noqa: E402

# Configure logging
logger = logging.getLogger(__name__)

CSV_COLUMNS = ["scenario", "requests", "avg_ms", "tps", "avg_bytes", "errors"]
BENCH_CSV = "bench.csv"
SCENARIO_ORDER = [kind.value for kind in ScenarioKind]

PANELS = [
    ("tps", "Average Throughput (transactions/second)", "throughput.svg"),
    ("avg_ms", "Average Response Time (milliseconds)", "response_time.svg"),
    ("avg_bytes", "Reply Size per Request (bytes)", "reply_size.svg"),
]


def report_frame(report: BenchReport) -> pd.DataFrame:
    rows = [{
        "scenario": row.scenario,
        "requests": row.requests,
        "avg_ms": row.avg_ms,
        "tps": row.tps,
        "avg_bytes": row.avg_bytes,
        "errors": row.errors,
    } for row in report.rows]
    return pd.DataFrame(rows, columns=CSV_COLUMNS)


def records_frame(report: BenchReport) -> pd.DataFrame:
    return pd.DataFrame([r.__dict__ for r in report.records],
                        columns=["scenario", "requests", "index", "worker", "elapsed_ms",
                                 "response_bytes", "ok", "error", "run"])


def format_table(frame: pd.DataFrame) -> str:
    return frame.to_string(index=False, float_format=lambda v: f"{v:.3f}")


def _sorted(frame: pd.DataFrame) -> pd.DataFrame:
    order = {name: i for i, name in enumerate(SCENARIO_ORDER)}
    ranked = frame.assign(_rank=frame["scenario"].map(lambda s: order.get(s, len(order))))
    return ranked.sort_values(["_rank", "scenario", "requests"]).drop(columns="_rank").reset_index(drop=True)


def merge_csv(report: BenchReport, out_dir: Union[str, Path]) -> Path:
    """Write this run's rows into <out_dir>/bench.csv, replacing earlier rows
    for the same scenario and keeping the others."""
    path = ensure_dir_exists(out_dir) / BENCH_CSV
    frame = report_frame(report)
    if path.exists():
        existing = pd.read_csv(path)
        missing = set(CSV_COLUMNS) - set(existing.columns)
        if missing:
            logger.warning(f"Ignoring {path}: missing columns {sorted(missing)}")
        else:
            existing = existing[existing["scenario"] != report.scenario][CSV_COLUMNS]
            frame = pd.concat([existing, frame], ignore_index=True) if not existing.empty else frame
    _sorted(frame).to_csv(path, index=False)
    logger.info(f"Wrote {path}")
    return path


def write_request_log(report: BenchReport, out_dir: Union[str, Path]) -> Path:
    path = ensure_dir_exists(out_dir) / f"requests_{report.scenario}.csv"
    records_frame(report).to_csv(path, index=False)
    return path


def plot_panels(csv_path: Union[str, Path], out_dir: Union[str, Path]) -> List[Path]:
    """One line per scenario in each panel, metric against number of requests."""
    frame = _sorted(pd.read_csv(csv_path))
    out = ensure_dir_exists(out_dir)
    written = []
    for column, title, filename in PANELS:
        fig, ax = plt.subplots(figsize=(8, 5))
        for scenario, group in frame.groupby("scenario", sort=False):
            ax.plot(group["requests"], group[column], marker="o", label=scenario)
        ax.set_title(title)
        ax.set_xlabel("Number of requests")
        ax.set_ylabel(title)
        ax.grid(True, linestyle="--", alpha=0.7)
        ax.legend()
        fig.tight_layout()
        path = out / filename
        fig.savefig(path, format="svg")
        plt.close(fig)
        written.append(path)
    logger.info(f"Plots saved to {out}")
    return written


def write_report(report: BenchReport, out_dir: Union[str, Path], plots: bool = True) -> List[Path]:
    paths = [merge_csv(report, out_dir), write_request_log(report, out_dir)]
    if plots:
        paths.extend(plot_panels(paths[0], out_dir))
    return paths
