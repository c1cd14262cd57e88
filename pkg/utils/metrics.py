"""
CSV writers for per-stage metrics, wall-clock timings and run summaries.

Floats are written with ``repr`` so a re-run with the same config and seed
produces byte-identical files; missing values are empty cells.
"""

from __future__ import annotations

# Core Imports
import csv
import os
from typing import Iterable, List, Mapping, Optional, Sequence, Tuple, Union

# Local Imports
from core.types import StageMetrics, StageTiming

STAGE_COLUMNS = ("stage", "loss", "interior", "penalty", "error", "acceptance", "samples")
TIMING_COLUMNS = ("stage", "wall_seconds")
SUMMARY_COLUMNS = ("metric", "value")

Cell = Union[int, float, str, None]


def cell(value: Cell) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_rows(path: str, columns: Sequence[str], rows: Iterable[Sequence[Cell]]) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([cell(v) for v in row])


def write_stages(path: str, metrics: Sequence[StageMetrics]) -> None:
    write_rows(path, STAGE_COLUMNS, ([m[c] for c in STAGE_COLUMNS] for m in metrics))


def write_timings(path: str, timings: Sequence[StageTiming]) -> None:
    write_rows(path, TIMING_COLUMNS, ([t["stage"], t["wall_seconds"]] for t in timings))


def write_summary(path: str, summary: Mapping[str, Optional[float]]) -> None:
    """One ``metric,value`` row per entry, in insertion order"""
    write_rows(path, SUMMARY_COLUMNS, ([k, v] for k, v in summary.items()))


def read_summary(path: str) -> List[Tuple[str, float, int]]:
    """
    ``(metric, value, line)`` triples from a summary file.

    :raises ValueError: with the offending line number on a malformed row
    """
    rows: List[Tuple[str, float, int]] = []
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None or tuple(header) != SUMMARY_COLUMNS:
            raise ValueError("line 1: expected header 'metric,value'")
        for row in reader:
            line = reader.line_num
            if len(row) != 2:
                raise ValueError(f"line {line}: expected 2 columns, found {len(row)}")
            if row[1] == "":
                continue
            try:
                rows.append((row[0], float(row[1]), line))
            except ValueError:
                raise ValueError(f"line {line}: '{row[1]}' is not a number") from None
    return rows
