import json
import math
from pathlib import Path

import numpy as np
import pytest

from rflab.errors import CoverageError, SnapshotError
from rflab.flow import Trajectory
from rflab.geometry import QuotientPoint, WarpedMetric
from rflab.heat import solve_heat
from rflab.reports import CSV_COLUMNS, EstimateReport
from rflab.snapshots import (
    load_trajectory,
    read_estimates,
    read_manifest,
    read_metric,
    write_checkpoints,
    write_estimates,
    write_heat_field,
    write_manifest,
    write_metric,
    write_plotdata,
    write_verdicts,
)


def test_metric_snapshot_keeps_exact_floats(tmp_path: Path, flat_cap: WarpedMetric) -> None:
    """17 significant digits give back the written arrays bit for bit."""
    m = flat_cap.with_arrays(flat_cap.phi, flat_cap.psi * (1.0 + 1e-3 * np.sin(flat_cap.grid.x)), 0.1)
    path = tmp_path / "m.dat"
    write_metric(path, m)
    back = read_metric(path)
    assert np.array_equal(back.psi, m.psi)
    assert np.array_equal(back.grid.x, m.grid.x)
    assert back.time == 0.1
    assert back.poles == (True, False)
    assert path.read_text(encoding="utf-8").startswith("# rflab snapshot")


def test_read_metric_rejects_broken_files(tmp_path: Path) -> None:
    """Missing headers and truncated data raise SnapshotError."""
    path = tmp_path / "bad.dat"
    path.write_text("0 1 0\n1 1 1\n", encoding="utf-8")
    with pytest.raises(SnapshotError):
        read_metric(path)


def test_manifest_keeps_non_finite_settings(tmp_path: Path, shrinking: Trajectory) -> None:
    """Infinite settings are written as strings and the run flags survive."""
    shrinking.settings["t_max"] = math.inf
    write_manifest(tmp_path, shrinking, scenario={"preset": "round_sphere"}, complete=False, errors=["moser: boom"])
    manifest = read_manifest(tmp_path)
    assert manifest["rflab"] == {"complete": False, "errors": ["moser: boom"]}
    assert manifest["settings"]["t_max"] == "inf"
    assert manifest["trajectory"]["stop_reason"] == "t-max"
    assert manifest["trajectory"]["singular_time_estimate"] == pytest.approx(1.0 / 6.0)
    assert manifest["scenario"] == {"preset": "round_sphere"}


def test_missing_manifest_is_a_snapshot_error(tmp_path: Path) -> None:
    """An empty directory is not a run."""
    with pytest.raises(SnapshotError):
        read_manifest(tmp_path)


def test_load_trajectory_restores_the_run(tmp_path: Path, shrinking: Trajectory) -> None:
    """Checkpoints plus manifest rebuild the same trajectory."""
    write_checkpoints(tmp_path, shrinking)
    write_manifest(tmp_path, shrinking)
    traj = load_trajectory(tmp_path)
    assert len(traj) == len(shrinking)
    assert np.array_equal(traj.times, shrinking.times)
    assert np.array_equal(traj.checkpoints[-1].psi, shrinking.checkpoints[-1].psi)
    assert traj.singular_time_estimate == pytest.approx(1.0 / 6.0)
    assert traj.stop_reason == "t-max"


def test_load_trajectory_checks_the_checkpoint_count(tmp_path: Path, shrinking: Trajectory) -> None:
    """A manifest that disagrees with the files on disk is refused."""
    write_manifest(tmp_path, shrinking)
    with pytest.raises(CoverageError):
        load_trajectory(tmp_path)
    write_checkpoints(tmp_path, shrinking)
    (tmp_path / "checkpoints" / "00000.dat").unlink()
    with pytest.raises(SnapshotError):
        load_trajectory(tmp_path)


def test_estimates_csv_has_the_documented_columns(tmp_path: Path) -> None:
    """Header and rows follow CSV_COLUMNS."""
    reports = [
        EstimateReport.build("volume-growth", "dV/dt <= 0", "upper", 1.0, 2.0, time=0.5),
        EstimateReport.skipped("noncollapse", "Vol >= c r^4", "lower", "radius above threshold",
                               center=QuotientPoint(0.0), radius=2.0),
    ]
    path = tmp_path / "estimates.csv"
    write_estimates(path, reports)
    rows = read_estimates(path)
    assert list(rows[0]) == list(CSV_COLUMNS)
    assert [r["passed"] for r in rows] == ["true", "false"]
    assert rows[1]["paper_eq"] == "Vol >= c r^4"
    assert rows[1]["margin"] == "nan"
    assert json.loads(rows[1]["params_json"]) == {"skip_reason": "radius above threshold", "status": "skipped"}


def test_verdicts_are_json_lines(tmp_path: Path) -> None:
    """One sorted JSON object per line."""
    path = tmp_path / "verdicts.jsonl"
    write_verdicts(path, [{"verdict": "regular", "s": 0.0}, {"kind": "cluster", "s": 1.5}])
    lines = path.read_text(encoding="utf-8").splitlines()
    assert [json.loads(line) for line in lines] == [{"s": 0.0, "verdict": "regular"}, {"kind": "cluster", "s": 1.5}]


def test_heat_field_and_plot_data(tmp_path: Path, unit_sphere: WarpedMetric, shrinking: Trajectory) -> None:
    """Field files carry the metric columns plus f; plot data one series per file."""
    traj = Trajectory.static(unit_sphere, np.array([0.0, 0.1]))
    h = solve_heat(traj, None, 1.0 + np.cos(unit_sphere.s), 0.0, 0.0, 0.1)
    path = write_heat_field(tmp_path / "fields", "heat", h, traj)
    data = np.loadtxt(path)
    assert data.shape == (201, 4)
    assert np.array_equal(data[:, 3], h.values[-1])
    assert read_metric(path).time == pytest.approx(0.1)

    paths = write_plotdata(tmp_path, shrinking)
    assert {p.stem for p in paths} == {"min_psi", "volume", "riemann_l2", "max_rm", "min_scalar"}
    volume = np.loadtxt(tmp_path / "plotdata" / "volume.dat")
    assert volume.shape == (len(shrinking), 2)
    assert np.all(np.diff(volume[:, 1]) < 0.0)


def test_cell_heat_field_is_written_per_cell(tmp_path: Path, unit_sphere: WarpedMetric) -> None:
    """Cell fields carry s, alpha, the cell volume and f, one cell per row."""
    traj = Trajectory.static(unit_sphere, np.array([0.0, 0.1]))
    h = solve_heat(traj, None, np.ones((16, 8)), 0.0, 0.0, 0.1, cell_shape=(16, 8))
    path = write_heat_field(tmp_path / "fields", "heat", h, traj)
    assert "# s alpha volume f" in path.read_text(encoding="utf-8")
    data = np.loadtxt(path)
    assert data.shape == (128, 4)
    assert data[:, 2].sum() == pytest.approx(8.0 * math.pi**2 / 3.0, rel=1e-6)
    assert np.allclose(data[:, 3], 1.0)
