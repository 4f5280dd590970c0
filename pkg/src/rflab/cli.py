"""
CLI entrypoint for rflab.

This module wires together:
- the `run` command (evolve or build a background, audit it, write artifacts),
- the `replay` command (re-audit a stored run directory),
- the `describe` command (presets, audits and the estimates.csv columns).

Exit codes: 0 when every non-skipped audit row passes, 2 when some row
fails, 1 on errors (the manifest then records `complete = false`).
"""

from __future__ import annotations

import logging
import shutil
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Optional

import numpy as np
import typer
from rich import box
from rich.console import Console
from rich.table import Table

from . import __version__
from .audits import AUDIT_SUMMARIES, AUDITS, AuditContext, AuditResult, run_audit
from .config import DEFAULT_CONFIG_PATH, AuditSpec, RunConfig, load_run_config
from .errors import RFLabError
from .flow import PRESETS, Trajectory, evolve, make_preset
from .log import setup_logging
from .reports import CSV_COLUMNS, EstimateReport, overall_status
from .snapshots import (
    ESTIMATES_NAME,
    FIELD_DIR,
    VERDICTS_NAME,
    load_trajectory,
    write_checkpoints,
    write_estimates,
    write_heat_field,
    write_manifest,
    write_plotdata,
    write_verdicts,
)

logger = logging.getLogger(__name__)

app = typer.Typer(help="rflab - numerical lab for rotationally symmetric Ricci flow estimates.")

EXIT_FAILED_AUDITS = 2
TOPICS = ("presets", "audits", "columns")

PRESET_SUMMARIES = {
    "round_sphere": "round S^n of the given radius",
    "dumbbell": "bulbs of bulb_radius joined by necks of neck_radius",
    "euclidean_cap": "flat ball with an open outer end",
    "cylinder_capped": "cylinder closed by two hemispherical caps",
    "perturbed_sphere": "round sphere with a localized warping bump",
}


def _load_config_or_exit(path: Optional[Path]) -> RunConfig:
    try:
        return load_run_config(path)
    except RFLabError as exc:
        typer.echo(f"Error: {exc}")
        raise typer.Exit(code=1)


def build_trajectory(cfg: RunConfig) -> Trajectory:
    sc = cfg.scenario
    m0 = make_preset(sc.preset, sc.params, node_count=cfg.grid.node_count, dim=cfg.grid.dim)
    if sc.static:
        return Trajectory.static(m0, np.asarray(sc.static_times, dtype=float), sc.singular_time)
    return evolve(m0, cfg.controller.to_controller())


def _run_audits(cfg: RunConfig, traj: Trajectory, threads: int) -> tuple[list[AuditResult], list[str]]:
    """Results in config order; one error message per audit that raised."""
    ctx = AuditContext(
        traj=traj,
        constants=cfg.constants,
        resolution=cfg.quotient.resolution(),
        seed=cfg.seed,
    )

    def one(spec: AuditSpec) -> tuple[AuditResult, Optional[str]]:
        try:
            return run_audit(ctx, spec.name, spec.params), None
        except KeyError as exc:
            logger.error("audit %s: missing key %s", spec.name, exc)
            return AuditResult(), f"{spec.name}: missing key {exc}"
        except (RFLabError, ValueError, TypeError) as exc:
            logger.error("audit %s failed: %s", spec.name, exc)
            return AuditResult(), f"{spec.name}: {exc}"

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        outcomes = list(pool.map(one, cfg.audits))
    return [r for r, _ in outcomes], [e for _, e in outcomes if e is not None]


def _write_outputs(
    out: Path,
    cfg: RunConfig,
    traj: Trajectory,
    results: list[AuditResult],
    errors: list[str],
    *,
    checkpoints: bool = True,
) -> list[EstimateReport]:
    out.mkdir(parents=True, exist_ok=True)
    if checkpoints:
        write_checkpoints(out, traj)
    reports = [r for res in results for r in res.reports]
    write_estimates(out / ESTIMATES_NAME, reports)
    write_verdicts(out / VERDICTS_NAME, [rec for res in results for rec in res.records])
    for i, res in enumerate(results):
        for name, field in res.fields.items():
            write_heat_field(out / FIELD_DIR, f"{i:02d}-{name}", field, traj)
    write_plotdata(out, traj)
    scenario = {"preset": cfg.scenario.preset, "static": cfg.scenario.static, **cfg.scenario.params}
    write_manifest(out, traj, scenario=scenario, complete=not errors, errors=errors)
    return reports


def _print_summary(reports: list[EstimateReport]) -> None:
    console = Console()
    table = Table(
        title="rflab - estimates",
        box=box.SIMPLE,
        header_style="bold white",
        border_style="orange3",
    )
    table.add_column("name", style="bold cyan")
    table.add_column("pass", justify="right", style="green")
    table.add_column("fail", justify="right", style="red")
    table.add_column("skipped", justify="right", style="dim")
    table.add_column("worst margin", justify="right")

    names: dict[str, list[EstimateReport]] = {}
    for r in reports:
        names.setdefault(r.name, []).append(r)
    if not names:
        table.add_row("(none)", "-", "-", "-", "-")
    for name, rows in names.items():
        margins = [r.margin for r in rows if r.status != "skipped"]
        table.add_row(
            name,
            str(sum(r.passed for r in rows)),
            str(sum(r.failed for r in rows)),
            str(sum(r.status == "skipped" for r in rows)),
            f"{min(margins):.4g}" if margins else "-",
        )
    console.print(table)


def _finish(reports: list[EstimateReport], errors: list[str], out: Path) -> None:
    _print_summary(reports)
    typer.echo(f"Artifacts written to {out}")
    if errors:
        for e in errors:
            typer.echo(f"Error: {e}")
        raise typer.Exit(code=1)
    if overall_status(reports) == "fail":
        raise typer.Exit(code=EXIT_FAILED_AUDITS)


@app.command()
def run(
    config: Optional[Path] = typer.Option(
        None,
        "--config",
        "-c",
        help="Run configuration (TOML). Defaults to ~/.rflab/config.toml.",
    ),
    output: Optional[Path] = typer.Option(
        None,
        "--output",
        "-o",
        help="Output directory (overrides output_dir from the config).",
    ),
    threads: int = typer.Option(
        1,
        "--threads",
        "-j",
        help="Number of audits run concurrently.",
    ),
    resolution_scale: float = typer.Option(
        1.0,
        "--resolution-scale",
        "-k",
        help="Multiply grid node counts and quotient mesh sizes by K.",
    ),
) -> None:
    """Evolve (or build) the scenario, run its audits and write artifacts."""
    cfg = _load_config_or_exit(config)
    try:
        cfg = cfg.scaled(resolution_scale)
        out = output or cfg.output_dir
        traj = build_trajectory(cfg)
        out.mkdir(parents=True, exist_ok=True)
        source = config or DEFAULT_CONFIG_PATH
        if source.resolve() != (out / "config.toml").resolve():
            shutil.copyfile(source, out / "config.toml")
        results, errors = _run_audits(cfg, traj, threads)
        reports = _write_outputs(out, cfg, traj, results, errors)
    except (RFLabError, OSError) as exc:
        typer.echo(f"Error: {exc}")
        raise typer.Exit(code=1)
    _finish(reports, errors, out)


@app.command()
def replay(
    directory: Path = typer.Argument(..., help="Run directory written by `rflab run`."),
    config: Optional[Path] = typer.Option(
        None,
        "--config",
        "-c",
        help="Audit configuration. Defaults to the config.toml stored in DIRECTORY.",
    ),
    output: Optional[Path] = typer.Option(
        None,
        "--output",
        "-o",
        help="Where to write the new estimates (defaults to DIRECTORY).",
    ),
    threads: int = typer.Option(
        1,
        "--threads",
        "-j",
        help="Number of audits run concurrently.",
    ),
    resolution_scale: float = typer.Option(
        1.0,
        "--resolution-scale",
        "-k",
        help="Multiply quotient mesh sizes by K (the stored grid is kept).",
    ),
) -> None:
    """Re-audit the trajectory stored in an existing run directory."""
    cfg = _load_config_or_exit(config or directory / "config.toml")
    try:
        cfg = cfg.scaled(resolution_scale)
        traj = load_trajectory(directory)
        out = output or directory
        results, errors = _run_audits(cfg, traj, threads)
        reports = _write_outputs(out, cfg, traj, results, errors, checkpoints=out != directory)
    except (RFLabError, OSError) as exc:
        typer.echo(f"Error: {exc}")
        raise typer.Exit(code=1)
    _finish(reports, errors, out)


def _listing(topic: str) -> list[tuple[str, str]]:
    if topic == "presets":
        return [(name, PRESET_SUMMARIES.get(name, "")) for name in PRESETS]
    if topic == "audits":
        return [(name, AUDIT_SUMMARIES.get(name, "")) for name in AUDITS]
    return [(name, "") for name in CSV_COLUMNS]


@app.command()
def describe(
    topic: str = typer.Argument(..., help="One of: presets, audits, columns."),
    pretty: bool = typer.Option(False, "--pretty", help="Render as a table."),
) -> None:
    """List presets, audits or the estimates.csv columns."""
    if topic not in TOPICS:
        typer.echo(f"Error: unknown topic '{topic}'. Available: {', '.join(TOPICS)}")
        raise typer.Exit(code=1)
    rows = _listing(topic)
    if not pretty:
        typer.echo(f"# rflab {__version__} {topic}")
        if topic == "columns":
            typer.echo(",".join(name for name, _ in rows))
        else:
            for name, summary in rows:
                typer.echo(f"{name}\t{summary}")
        return

    table = Table(
        title=f"rflab - {topic}",
        box=box.SIMPLE,
        header_style="bold white",
        border_style="orange3",
    )
    table.add_column("name", style="bold cyan")
    table.add_column("description", style="dim")
    for name, summary in rows:
        table.add_row(name, summary or "-")
    Console().print(table)


@app.callback()
def main_callback(
    verbose: bool = typer.Option(False, "--verbose", "-v", help="Debug logging."),
) -> None:
    """Set up logging for every subcommand."""
    setup_logging(verbose)


def main() -> None:
    app()
