"""Run artifacts on disk.

Layout of an output directory::

    manifest.toml          key = value run record (times, stop reason, settings)
    checkpoints/00000.dat  one metric snapshot per checkpoint
    fields/<name>.dat      heat / kernel fields (metric columns plus f)
    estimates.csv          one row per EstimateReport
    verdicts.jsonl         classification verdicts and cluster centres
    plotdata/<name>.dat    two-column series for gnuplot

Snapshot files carry a commented header and use 17 significant digits, so
loading a checkpoint gives back the same floats that were written.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from pathlib import Path
from typing import Any, Dict, Iterable, Optional

import numpy as np
import toml

from .errors import CoverageError, SnapshotError
from .flow import Trajectory, critical_radius
from .geometry import Grid, WarpedMetric, curvature, riemann_l2, total_volume
from .heat import HeatField
from .reports import CSV_COLUMNS, EstimateReport

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.toml"
CHECKPOINT_DIR = "checkpoints"
FIELD_DIR = "fields"
PLOT_DIR = "plotdata"
ESTIMATES_NAME = "estimates.csv"
VERDICTS_NAME = "verdicts.jsonl"

NUMBER_FORMAT = "%.17g"


def _header(meta: Dict[str, Any], columns: str) -> str:
    lines = ["rflab snapshot"]
    lines += [f"{key} = {value}" for key, value in meta.items()]
    lines.append(columns)
    return "\n".join(lines)


def _read_header(path: Path) -> Dict[str, str]:
    meta: Dict[str, str] = {}
    with path.open(encoding="utf-8") as fh:
        for line in fh:
            if not line.startswith("#"):
                break
            key, sep, value = line[1:].partition("=")
            if sep:
                meta[key.strip()] = value.strip()
    return meta


def write_metric(path: Path, m: WarpedMetric) -> None:
    meta = {
        "n": m.dim,
        "node_count": m.grid.node_count,
        "time": repr(float(m.time)),
        "poles": f"{int(m.poles[0])} {int(m.poles[1])}",
    }
    data = np.column_stack([m.grid.x, m.phi, m.psi])
    np.savetxt(path, data, fmt=NUMBER_FORMAT, header=_header(meta, "x phi psi"))


def read_metric(path: Path) -> WarpedMetric:
    try:
        meta = _read_header(path)
        data = np.loadtxt(path, ndmin=2)
        n = int(meta["n"])
        count = int(meta["node_count"])
        time = float(meta["time"])
        poles = tuple(bool(int(v)) for v in meta.get("poles", "1 1").split())
    except (OSError, KeyError, ValueError) as exc:
        raise SnapshotError(f"cannot read metric snapshot {path}: {exc}") from exc
    if data.shape[1] < 3 or data.shape[0] != count:
        raise SnapshotError(f"{path}: expected {count} rows of x phi psi")
    return WarpedMetric(
        grid=Grid(data[:, 0]),
        phi=data[:, 1],
        psi=data[:, 2],
        dim=n,
        time=time,
        poles=(poles[0], poles[1]),
    )


def write_field(path: Path, m: WarpedMetric, f: np.ndarray, meta: Optional[Dict[str, Any]] = None) -> None:
    """Metric snapshot columns with the field value appended."""
    header = {
        "n": m.dim,
        "node_count": m.grid.node_count,
        "time": repr(float(m.time)),
        "poles": f"{int(m.poles[0])} {int(m.poles[1])}",
    }
    header.update(meta or {})
    data = np.column_stack([m.grid.x, m.phi, m.psi, f])
    np.savetxt(path, data, fmt=NUMBER_FORMAT, header=_header(header, "x phi psi f"))


def write_heat_field(directory: Path, name: str, field: HeatField, traj: Trajectory) -> Path:
    """Last sample of a heat or kernel field, on the metric of that time.

    Cell fields are written one cell per row as `s alpha volume f`.
    """
    directory.mkdir(parents=True, exist_ok=True)
    t = float(field.times[-1])
    path = directory / f"{name}.dat"
    meta = {"kind": field.kind, "ell": field.ell, "samples": field.times.size}
    m = traj.metric_at(t)
    if not field.on_cells:
        write_field(path, m, field.values[-1], meta)
        return path
    cells = field.cells_at(traj, t)
    S, A = np.meshgrid(cells.s_centers, cells.alpha_centers, indexing="ij")
    header = {"n": m.dim, "time": repr(t), "cells": f"{cells.shape[0]} {cells.shape[1]}", **meta}
    data = np.column_stack([S.ravel(), A.ravel(), cells.volumes.ravel(), field.values[-1].ravel()])
    np.savetxt(path, data, fmt=NUMBER_FORMAT, header=_header(header, "s alpha volume f"))
    return path


def _plain_setting(value: Any) -> Any:
    if isinstance(value, float) and not math.isfinite(value):
        return repr(value)
    return value


def write_checkpoints(directory: Path, traj: Trajectory) -> list[Path]:
    target = directory / CHECKPOINT_DIR
    target.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, m in enumerate(traj.checkpoints):
        path = target / f"{i:05d}.dat"
        write_metric(path, m)
        paths.append(path)
    logger.debug("wrote %d checkpoints to %s", len(paths), target)
    return paths


def write_manifest(
    directory: Path,
    traj: Trajectory,
    *,
    scenario: Optional[Dict[str, Any]] = None,
    complete: bool = True,
    errors: Iterable[str] = (),
) -> Path:
    """Manifest with times, stop reason and controller settings.

    `complete = false` flags a run whose audits did not all finish.
    """
    record: Dict[str, Any] = {
        "rflab": {"complete": complete, "errors": list(errors)},
        "trajectory": {
            "times": [float(t) for t in traj.times],
            "stop_reason": traj.stop_reason,
            "steps": int(traj.steps),
            "checkpoints": len(traj),
        },
        "settings": {k: _plain_setting(v) for k, v in traj.settings.items()},
    }
    if traj.singular_time_estimate is not None:
        record["trajectory"]["singular_time_estimate"] = float(traj.singular_time_estimate)
    if scenario:
        record["scenario"] = {k: _plain_setting(v) for k, v in scenario.items()}
    path = directory / MANIFEST_NAME
    path.write_text(toml.dumps(record), encoding="utf-8")
    return path


def read_manifest(directory: Path) -> Dict[str, Any]:
    path = directory / MANIFEST_NAME
    try:
        return toml.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise SnapshotError(f"no manifest in {directory}") from exc
    except toml.TomlDecodeError as exc:
        raise SnapshotError(f"{path}: line {exc.lineno}: {exc.msg}") from exc


def load_trajectory(directory: Path) -> Trajectory:
    """Rebuild a Trajectory from a run directory written by `rflab run`."""
    manifest = read_manifest(directory)
    info = manifest.get("trajectory", {})
    paths = sorted((directory / CHECKPOINT_DIR).glob("*.dat"))
    if not paths:
        raise CoverageError(f"no checkpoints under {directory / CHECKPOINT_DIR}")
    checkpoints = [read_metric(p) for p in paths]
    times = np.array([m.time for m in checkpoints])
    expected = info.get("times")
    if expected is not None and len(expected) != len(checkpoints):
        raise SnapshotError(
            f"manifest lists {len(expected)} checkpoints, found {len(checkpoints)} files"
        )
    logger.info("loaded %d checkpoints from %s", len(checkpoints), directory)
    return Trajectory(
        checkpoints=checkpoints,
        times=times,
        singular_time_estimate=info.get("singular_time_estimate"),
        stop_reason=info.get("stop_reason", "loaded"),
        steps=int(info.get("steps", 0)),
        settings=dict(manifest.get("settings", {})),
    )


def write_estimates(path: Path, reports: Iterable[EstimateReport]) -> None:
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for report in reports:
            writer.writerow(report.row())


def read_estimates(path: Path) -> list[dict[str, str]]:
    with path.open(encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh))


def write_verdicts(path: Path, records: Iterable[Dict[str, Any]]) -> None:
    with path.open("w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record, sort_keys=True) + "\n")


def write_plot(path: Path, x: np.ndarray, y: np.ndarray, header: str) -> None:
    np.savetxt(path, np.column_stack([x, y]), fmt=NUMBER_FORMAT, header=header)


def trajectory_series(traj: Trajectory) -> Dict[str, tuple[np.ndarray, np.ndarray]]:
    """Per-checkpoint diagnostics for plotting against t."""
    t = traj.times
    return {
        "min_psi": (t, np.array([critical_radius(m) for m in traj.checkpoints])),
        "volume": (t, np.array([total_volume(m) for m in traj.checkpoints])),
        "riemann_l2": (t, np.array([riemann_l2(m) for m in traj.checkpoints])),
        "max_rm": (t, np.array([float(np.max(curvature(m).rm_norm)) for m in traj.checkpoints])),
        "min_scalar": (t, np.array([float(np.min(curvature(m).scalar)) for m in traj.checkpoints])),
    }


def write_plotdata(directory: Path, traj: Trajectory) -> list[Path]:
    target = directory / PLOT_DIR
    target.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, (x, y) in trajectory_series(traj).items():
        path = target / f"{name}.dat"
        write_plot(path, x, y, f"t {name}")
        paths.append(path)
    return paths


__all__ = [
    "SnapshotError",
    "load_trajectory",
    "read_estimates",
    "read_manifest",
    "read_metric",
    "trajectory_series",
    "write_checkpoints",
    "write_estimates",
    "write_field",
    "write_heat_field",
    "write_manifest",
    "write_metric",
    "write_plot",
    "write_plotdata",
    "write_verdicts",
]
