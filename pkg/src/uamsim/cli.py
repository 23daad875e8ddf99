"""Command-line entry points: ``simulate`` and ``component-host``."""

from __future__ import annotations

import json
import logging
import sys

import click

from .config import AirspaceMode, default_scenario_path, load_config
from .errors import ConfigError, IngestError, RunAborted, SimulationInvariantViolation

EXIT_CONFIG = 2
EXIT_INVARIANT = 3
EXIT_ABORTED = 4

_SETTINGS = {"auto_envvar_prefix": "UAMSIM", "help_option_names": ["-h", "--help"]}


@click.command(context_settings=_SETTINGS)
@click.argument("scenario_file", required=False, type=click.Path(exists=True, dir_okay=False))
@click.option("--seed", type=int, default=None, help="Override the scenario seed.")
@click.option("--batch-interval", type=click.IntRange(min=0), default=None, help="Grouping interval in seconds.")
@click.option("--airspace", type=click.Choice(["slot", "trajectory"]), default=None)
@click.option("--price-loop", type=click.Choice(["on", "off"]), default=None)
@click.option("--out", "out_dir", type=click.Path(file_okay=False), default=None, help="Output directory.")
@click.option("--resume", is_flag=True, help="Continue from the checkpoint in the output directory.")
@click.option("-v", "--verbose", count=True)
def simulate(scenario_file, seed, batch_interval, airspace, price_loop, out_dir, resume, verbose):
    """Run a scenario and write metrics, ledger, event log and summary."""
    from .orchestrator import run_day, run_id_for

    logging.basicConfig(level=logging.WARNING - 10 * min(verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(scenario_file or default_scenario_path())
        changes = {}
        if seed is not None:
            changes["seed"] = seed
        if batch_interval is not None:
            changes["orchestrator.batch_interval"] = batch_interval
        if airspace is not None:
            changes["airspace.mode"] = AirspaceMode.parse(airspace)
        if price_loop is not None:
            changes["economics.price_loop"] = price_loop == "on"
        cfg = cfg.replace(**changes)
        if out_dir is None:
            out_dir = f"runs/{run_id_for(cfg)}"
        report = run_day(cfg, out_dir=out_dir, resume=resume)
    except (ConfigError, IngestError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    except SimulationInvariantViolation as exc:
        click.echo(f"invariant violated: {exc}", err=True)
        sys.exit(EXIT_INVARIANT)
    except RunAborted as exc:
        click.echo(f"run aborted: {exc} (checkpoint: {exc.checkpoint})", err=True)
        sys.exit(EXIT_ABORTED)
    click.echo(json.dumps(report.summary(), indent=2, sort_keys=True))


@click.command(context_settings=_SETTINGS)
@click.argument("stage", type=click.Choice(["fleet", "vertiport_trajectory", "mode_choice", "economics"]))
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=0, show_default=True, help="0 picks a free port.")
@click.option("--name", default=None, help="Component name reported in the handshake.")
def component_host(stage, host, port, name):
    """Serve one pipeline stage as a remote socket endpoint."""
    from .bus.transport import ComponentServer
    from .stages import HANDLERS

    server = ComponentServer(HANDLERS[stage], name or f"{stage}-host", stage, host, port)
    addr = server.address
    click.echo(f"serving {stage} on {addr[0]}:{addr[1]}", err=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.stop()
