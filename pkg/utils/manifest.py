from __future__ import annotations

# Core Imports
import json
import math
import os
import re
import subprocess
import time
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

# Local Imports
from core.checkpoint import write_json_atomic
from core.errors import ReportError
from core.types import ManifestPayload
from .metrics import read_summary

MANIFEST = "manifest.json"
SUMMARY = "summary.csv"


def build_id() -> str:
    """Current git commit, or ``unknown`` outside a checkout"""
    try:
        out = subprocess.run(
            ["git", "rev-parse", "--short=12", "HEAD"],
            capture_output=True,
            text=True,
            check=True,
            timeout=10,
        )
    except (OSError, subprocess.SubprocessError):
        return "unknown"
    return out.stdout.strip() or "unknown"


@dataclass
class RunManifest:
    """Everything needed to locate and re-run one experiment run"""

    experiment: str
    config: Dict[str, Any]
    seed: int
    directory: str
    build_id: str = field(default_factory=build_id)
    metrics: Dict[str, str] = field(default_factory=lambda: {})
    artifacts: List[str] = field(default_factory=lambda: [])
    status: str = "running"
    started: float = field(default_factory=time.perf_counter)
    wall_seconds: float = 0.0

    def path(self, *parts: str) -> str:
        return os.path.join(self.directory, *parts)

    def add_metric(self, name: str, relative: str) -> str:
        self.metrics[name] = relative
        return self.path(relative)

    def add_artifact(self, relative: str) -> str:
        if relative not in self.artifacts:
            self.artifacts.append(relative)
        return self.path(relative)

    def payload(self) -> ManifestPayload:
        return {
            "experiment": self.experiment,
            "config": self.config,
            "build_id": self.build_id,
            "seed": self.seed,
            "metrics": dict(self.metrics),
            "artifacts": list(self.artifacts),
            "wall_seconds": self.wall_seconds,
            "status": self.status,
        }

    def finish(self, status: str) -> None:
        """Stamp the wall clock and write ``manifest.json`` in one atomic step"""
        self.status = status
        self.wall_seconds = time.perf_counter() - self.started
        write_json_atomic(self.path(MANIFEST), self.payload())


def load_manifest(directory: str) -> ManifestPayload:
    path = os.path.join(directory, MANIFEST)
    if not os.path.isfile(path):
        raise ReportError(directory, "missing manifest.json")
    try:
        with open(path) as f:
            return json.load(f)
    except json.JSONDecodeError as e:
        raise ReportError(path, f"corrupt manifest: {e.msg}", e.lineno) from e


def _summary(directory: str, manifest: ManifestPayload) -> List[Tuple[str, float, int]]:
    relative = manifest["metrics"].get("summary", SUMMARY)
    path = os.path.join(directory, relative)
    if not os.path.isfile(path):
        raise ReportError(path, "missing summary file")
    try:
        return read_summary(path)
    except ValueError as e:
        match = re.match(r"line (\d+)", str(e))
        raise ReportError(path, str(e), int(match.group(1)) if match else None) from e


@dataclass
class ReportRow:
    metric: str
    mean: float
    sd: Optional[float]
    runs: int


def report(run_dirs: Sequence[str]) -> List[ReportRow]:
    """
    Mean and standard deviation of every summary metric across runs.

    The SD (sample, ``n - 1``) is left out when a metric comes from one run.
    """
    if not run_dirs:
        raise ReportError("<none>", "no run directories given")
    values: Dict[str, List[float]] = {}
    for directory in run_dirs:
        manifest = load_manifest(directory)
        for metric, value, _ in _summary(directory, manifest):
            values.setdefault(metric, []).append(value)

    rows: List[ReportRow] = []
    for metric, xs in values.items():
        mean = math.fsum(xs) / len(xs)
        sd = None
        if len(xs) > 1:
            sd = math.sqrt(math.fsum((x - mean) ** 2 for x in xs) / (len(xs) - 1))
        rows.append(ReportRow(metric, mean, sd, len(xs)))
    return rows


def format_report(rows: Sequence[ReportRow]) -> str:
    width = max([len("metric")] + [len(r.metric) for r in rows])
    lines = [f"{'metric'.ljust(width)}  value"]
    for r in rows:
        value = f"{r.mean:.6g}" if r.sd is None else f"{r.mean:.6g} ± {r.sd:.2g}"
        lines.append(f"{r.metric.ljust(width)}  {value}  (n={r.runs})")
    return "\n".join(lines)
