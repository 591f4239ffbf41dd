"""CSV schema checks for the experiment outputs this package consumes."""
from __future__ import annotations

from pathlib import Path

import pandas as pd

REGRET_COLUMNS = [
    "suite", "variant", "policy", "seed", "checkpoint",
    "pseudo_regret", "quality_loss", "latency_cost",
]
SWITCH_COLUMNS = ["suite", "variant", "policy", "seed", "t", "admitted_count"]
DIAG_COLUMNS = [
    "suite", "variant", "policy", "seed", "checkpoint", "jaccard", "cache_quality_loss",
]

SCHEMAS = {
    "regret.csv": REGRET_COLUMNS,
    "switches.csv": SWITCH_COLUMNS,
    "diagnostics.csv": DIAG_COLUMNS,
}


class SchemaError(ValueError):
    """An input CSV is missing from disk or missing required columns."""


def load_table(in_dir: str | Path, name: str) -> pd.DataFrame:
    path = Path(in_dir) / name
    if not path.exists():
        raise SchemaError(f"{name}: file not found in {in_dir}")
    frame = pd.read_csv(path, keep_default_na=False)
    missing = [c for c in SCHEMAS[name] if c not in frame.columns]
    if missing:
        raise SchemaError(f"{name}: missing column(s) {', '.join(repr(c) for c in missing)}")
    return frame


def filter_suite(frame: pd.DataFrame, suite: str) -> pd.DataFrame:
    """Rows for one suite; falls back to all rows for suite-less outputs."""
    sub = frame[frame["suite"] == suite]
    return frame if sub.empty else sub
