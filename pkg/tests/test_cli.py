from pathlib import Path

import pytest
from typer.testing import CliRunner

from rflab.cli import EXIT_FAILED_AUDITS, app
from rflab.reports import CSV_COLUMNS
from rflab.snapshots import read_estimates, read_manifest

runner = CliRunner()

STATIC_SPHERE = """
[scenario]
preset = "round_sphere"
static = true
static_times = [0.0, 0.5, 1.0]

[grid]
node_count = 101

[[audits]]
name = "volume-growth"

[[audits]]
name = "riemann-l2"
constancy_tol = 1e-9
"""


def _write(tmp_path: Path, text: str) -> Path:
    path = tmp_path / "run.toml"
    path.write_text(text, encoding="utf-8")
    return path


def test_describe_lists_audits() -> None:
    """Plain output is one name per line after a comment header."""
    result = runner.invoke(app, ["describe", "audits"])
    assert result.exit_code == 0
    lines = result.output.splitlines()
    assert lines[0].startswith("# rflab")
    assert any(line.startswith("noncollapse\t") for line in lines)
    assert any(line.startswith("classify\t") for line in lines)


def test_describe_columns_matches_the_csv_header() -> None:
    result = runner.invoke(app, ["describe", "columns"])
    assert result.exit_code == 0
    assert ",".join(CSV_COLUMNS) in result.output


def test_describe_pretty_renders_a_table() -> None:
    result = runner.invoke(app, ["describe", "presets", "--pretty"])
    assert result.exit_code == 0
    assert "dumbbell" in result.output
    assert "rflab - presets" in result.output


def test_describe_unknown_topic_exits_with_error() -> None:
    """Unknown topics print the available ones and exit 1."""
    result = runner.invoke(app, ["describe", "metrics"])
    assert result.exit_code == 1
    assert "Error: unknown topic 'metrics'" in result.output


def test_run_missing_config_exits_with_error(tmp_path: Path) -> None:
    result = runner.invoke(app, ["run", "--config", str(tmp_path / "missing.toml")])
    assert result.exit_code == 1
    assert "Error:" in result.output


def test_run_writes_artifacts_for_a_static_background(tmp_path: Path) -> None:
    """A passing run exits 0 and leaves the documented files behind."""
    out = tmp_path / "out"
    result = runner.invoke(app, ["run", "--config", str(_write(tmp_path, STATIC_SPHERE)), "--output", str(out)])
    assert result.exit_code == 0, result.output
    for name in ("manifest.toml", "config.toml", "estimates.csv", "verdicts.jsonl"):
        assert (out / name).exists()
    assert len(list((out / "checkpoints").glob("*.dat"))) == 3
    rows = read_estimates(out / "estimates.csv")
    assert {r["name"] for r in rows} == {"volume-growth", "riemann-l2", "riemann-l2-constancy"}
    assert all(r["passed"] == "true" for r in rows)
    manifest = read_manifest(out)
    assert manifest["rflab"]["complete"] is True
    assert manifest["trajectory"]["stop_reason"] == "static"


def test_run_with_a_failing_row_exits_2(tmp_path: Path) -> None:
    """int |Rm|^2 = 64 pi^2 exceeds K0 = 100."""
    text = STATIC_SPHERE + '\n[constants]\nK0 = 100.0\n'
    result = runner.invoke(app, ["run", "-c", str(_write(tmp_path, text)), "-o", str(tmp_path / "out")])
    assert result.exit_code == EXIT_FAILED_AUDITS


def test_run_with_a_broken_audit_marks_the_manifest(tmp_path: Path) -> None:
    """An audit that raises gives exit 1 and complete = false; the others still run."""
    text = STATIC_SPHERE + '\n[[audits]]\nname = "ct-decay"\n'
    out = tmp_path / "out"
    result = runner.invoke(app, ["run", "-c", str(_write(tmp_path, text)), "-o", str(out)])
    assert result.exit_code == 1
    assert "ct-decay" in result.output
    manifest = read_manifest(out)
    assert manifest["rflab"]["complete"] is False
    assert len(manifest["rflab"]["errors"]) == 1
    assert len(read_estimates(out / "estimates.csv")) > 0


@pytest.mark.parametrize("threads", ["1", "3"])
def test_replay_reaudits_a_stored_run(tmp_path: Path, threads: str) -> None:
    """replay reads checkpoints and config back from the run directory."""
    out = tmp_path / "out"
    first = runner.invoke(app, ["run", "-c", str(_write(tmp_path, STATIC_SPHERE)), "-o", str(out)])
    assert first.exit_code == 0, first.output
    before = read_estimates(out / "estimates.csv")

    again = tmp_path / "again"
    result = runner.invoke(app, ["replay", str(out), "-o", str(again), "-j", threads])
    assert result.exit_code == 0, result.output
    after = read_estimates(again / "estimates.csv")
    assert [r["lhs"] for r in after] == [r["lhs"] for r in before]
    assert len(list((again / "checkpoints").glob("*.dat"))) == 3
