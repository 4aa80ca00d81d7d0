"""
CSV output for trial results, summary reports and cluster diagnostics.

All files use a fixed column order, 17 significant digits and "\\n" line
endings so identical runs produce identical bytes.
"""

import logging
from pathlib import Path
from typing import Any, Dict, List, Sequence, Union

import pandas as pd

from app.harness.experiment import TrialResult
from app.simulation.system import CSV_FLOAT_FORMAT

logger = logging.getLogger(__name__)

RESULT_COLUMNS = [
    "trial",
    "method",
    "alpha_target",
    "coverage",
    "avg_width_finite",
    "finite_fraction",
    "q_hat",
    "seed",
    "axis_name",
    "axis_value",
]
DIAGNOSTIC_COLUMNS = [
    "axis_name",
    "axis_value",
    "trial",
    "alpha",
    "f_cluster",
    "g_cluster",
    "f_size",
    "g_size",
    "centroid_distance",
    "q",
    "beta",
    "fallback",
]
GROUP_COLUMNS = ["axis_name", "axis_value", "method", "alpha_target"]
SUMMARY_METRICS = ["coverage", "avg_width_finite", "finite_fraction"]


def _write_frame(frame: pd.DataFrame, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format=CSV_FLOAT_FORMAT, lineterminator="\n")
    return path


def results_frame(results: Sequence[TrialResult]) -> pd.DataFrame:
    return pd.DataFrame([r.dict() for r in results], columns=RESULT_COLUMNS)


def write_results(results: Sequence[TrialResult], path: Union[str, Path]) -> Path:
    """Write result rows in their given order."""
    path = _write_frame(results_frame(results), path)
    logger.info(f"Wrote {len(results)} result rows to {path}")
    return path


def read_results(path: Union[str, Path]) -> pd.DataFrame:
    frame = pd.read_csv(path, float_precision="round_trip", keep_default_na=False, na_values=[""])
    missing = [c for c in RESULT_COLUMNS if c not in frame.columns]
    if missing:
        raise ValueError(f"{path} is missing result columns {missing}")
    return frame[RESULT_COLUMNS]


def summarize(frame: pd.DataFrame) -> pd.DataFrame:
    """
    Mean and standard deviation over trials per (axis value, method, alpha).

    Args:
        frame: Result rows as produced by results_frame or read_results

    Returns:
        One row per group, in first-appearance order, with <metric>_mean and
        <metric>_std columns plus the number of trials
    """
    if frame.empty:
        raise ValueError("no result rows to summarize")
    grouped = frame.groupby(GROUP_COLUMNS, sort=False, dropna=False)
    summary = grouped[SUMMARY_METRICS].agg(["mean", "std"])
    summary.columns = [f"{metric}_{stat}" for metric, stat in summary.columns]
    summary["trials"] = grouped["trial"].nunique()
    return summary.reset_index()


def write_report(frame: pd.DataFrame, path: Union[str, Path]) -> Path:
    summary = summarize(frame)
    path = _write_frame(summary, path)
    logger.info(f"Wrote summary of {len(summary)} groups to {path}")
    return path


def write_diagnostics(rows: List[Dict[str, Any]], path: Union[str, Path]) -> Path:
    """Write cluster diagnostics rows (one per upstream cluster, trial and alpha)."""
    path = _write_frame(pd.DataFrame(rows, columns=DIAGNOSTIC_COLUMNS), path)
    logger.info(f"Wrote {len(rows)} cluster diagnostic rows to {path}")
    return path
