"""Flat-file output of a run: trajectory CSV, event CSV and a JSON summary.

Floats are written with ``repr`` (shortest round-trip form), so identical
runs give byte-identical files.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

from ._version import __version__
from .config import SimConfig, config_from_dict
from .errors import HybridCoverError
from .simulation import RunRecord

COLUMNS = ("x", "y", "q", "mode", "speed")


class ExportError(HybridCoverError, OSError):
    """Output could not be written."""


def _f(x) -> str:
    return repr(float(x))


def trajectory_header(n: int) -> list[str]:
    return ["t"] + [f"{c}_{i}" for i in range(n) for c in COLUMNS]


def _open(path: Path):
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        return path.open("w", newline="")
    except OSError as exc:
        raise ExportError(f"cannot write {path}: {exc.strerror or exc}") from None


def write_trajectory(record: RunRecord, path) -> Path:
    path = Path(path)
    n = record.config.n
    with _open(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(trajectory_header(n))
        for t, row in zip(record.times, record.states):
            out = [_f(t)]
            for i in range(n):
                x, y, q, mode, speed = row[i]
                out += [_f(x), _f(y), _f(q), str(int(mode)), _f(speed)]
            w.writerow(out)
    return path


def write_events(record: RunRecord, path) -> Path:
    path = Path(path)
    with _open(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "agent", "kind"])
        for ev in record.events:
            w.writerow([_f(ev.time), "" if ev.agent < 0 else str(ev.agent), ev.kind.value])
    return path


def summary(record: RunRecord) -> dict:
    return {
        "code_version": __version__,
        "J_total": float(record.J_total),
        "J_mean": float(record.J_mean),
        "dJ_dtheta": [float(g) for g in record.dJ_dtheta],
        "dJ_dtheta_total": [float(g) for g in record.dJ_dtheta_total],
        "event_count": len(record.events),
        "sample_count": int(len(record.times)),
        "charging_intervals": [[int(a), float(s), float(e)]
                               for a, s, e in record.charging_intervals],
        "config": record.config.to_dict(),
    }


def write_summary(record: RunRecord, path) -> Path:
    path = Path(path)
    with _open(path) as fh:
        fh.write(json.dumps(summary(record), indent=2, sort_keys=True))
        fh.write("\n")
    return path


def export(record: RunRecord, out_dir, prefix: str = "") -> dict[str, Path]:
    """Write ``trajectory.csv``, ``events.csv`` and ``summary.json`` into out_dir."""
    out = Path(out_dir)
    return {
        "trajectory": write_trajectory(record, out / f"{prefix}trajectory.csv"),
        "events": write_events(record, out / f"{prefix}events.csv"),
        "summary": write_summary(record, out / f"{prefix}summary.json"),
    }


def load_summary(path) -> tuple[dict, SimConfig]:
    """Read a summary file back, rebuilding the echoed configuration."""
    doc = json.loads(Path(path).read_text())
    return doc, config_from_dict(doc["config"])


__all__ = ["ExportError", "export", "write_trajectory", "write_events", "write_summary",
           "summary", "load_summary", "trajectory_header"]
