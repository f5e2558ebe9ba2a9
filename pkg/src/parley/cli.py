"""Command line front door.

Exit codes: 0 on success, 2 when the config or arguments are bad, 3 when
a run fails underway.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import sys
from pathlib import Path

import click

from .harness import (
    ConfigError,
    RequiresMultipleSeeds,
    bundled_scenarios,
    repeat_runs,
    resolve_scenario,
    run_scenario,
)
from .metrics import aggregate, write_reports
from .trace import read_trace

EXIT_CONFIG = 2
EXIT_RUNTIME = 3


def _fail(code: int, message: str) -> None:
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


@click.group()
def main() -> None:
    """Run negotiation scenarios and report on their traces."""


@main.command()
@click.argument("config")
@click.option("--seed", type=int, default=None, help="Override the config seed.")
@click.option("--out", "out_dir", type=click.Path(), default=None,
              help="Run directory (default runs/<name>-seed<seed>).")
@click.option("--compress", type=float, default=None,
              help="Override time_compression; divides every duration.")
@click.option("--real-clock", is_flag=True, default=False,
              help="Execute on the wall clock instead of the virtual one.")
def run(config: str, seed: int | None, out_dir: str | None,
        compress: float | None, real_clock: bool) -> None:
    """Execute one scenario; CONFIG is a TOML path or a bundled name."""
    try:
        cfg = resolve_scenario(config)
        overrides = {}
        if seed is not None:
            overrides["seed"] = seed
        if compress is not None:
            if compress <= 0:
                raise ConfigError("time_compression", "must be positive")
            overrides["time_compression"] = compress
        if real_clock:
            overrides["clock"] = "real"
        if overrides:
            cfg = dataclasses.replace(cfg, **overrides)
    except ConfigError as exc:
        _fail(EXIT_CONFIG, str(exc))
    try:
        summary = run_scenario(cfg, out_dir=out_dir)
    except Exception as exc:  # noqa: BLE001 - boundary turns failures into exit 3
        _fail(EXIT_RUNTIME, f"run failed: {exc}")
    click.echo(json.dumps(summary.to_dict(), indent=2, sort_keys=True))


@main.command()
@click.argument("config")
@click.option("--seeds", required=True,
              help="Comma separated seed list, e.g. 1,2,3 (two or more).")
@click.option("--out", "out_dir", type=click.Path(), default=None,
              help="Parent directory for the per-seed runs.")
def repeat(config: str, seeds: str, out_dir: str | None) -> None:
    """Run CONFIG once per seed and report per-metric deviation."""
    try:
        cfg = resolve_scenario(config)
        try:
            seed_list = [int(s) for s in seeds.split(",") if s.strip()]
        except ValueError:
            raise ConfigError("seeds", f"not a comma separated integer list: {seeds!r}")
    except ConfigError as exc:
        _fail(EXIT_CONFIG, str(exc))
    try:
        report = repeat_runs(cfg, seed_list, out_dir=out_dir)
    except RequiresMultipleSeeds as exc:
        _fail(EXIT_CONFIG, str(exc))
    except Exception as exc:  # noqa: BLE001
        _fail(EXIT_RUNTIME, f"repeat failed: {exc}")
    click.echo(json.dumps(report, indent=2, sort_keys=True))


@main.command("aggregate")
@click.argument("trace_path", type=click.Path())
@click.option("--out", "out_dir", type=click.Path(), default=None,
              help="Also write the delimited reports into this directory.")
def aggregate_cmd(trace_path: str, out_dir: str | None) -> None:
    """Summarize an existing trace.jsonl without re-running anything."""
    path = Path(trace_path)
    if not path.exists():
        _fail(EXIT_CONFIG, f"no such trace: {path}")
    try:
        agg = aggregate(read_trace(path))
        if out_dir is not None:
            out = Path(out_dir)
            out.mkdir(parents=True, exist_ok=True)
            write_reports(agg, out)
    except Exception as exc:  # noqa: BLE001
        _fail(EXIT_RUNTIME, f"aggregate failed: {exc}")
    lat = agg.latency
    click.echo(json.dumps({
        "counts": dict(sorted(agg.counts.items())),
        "rounds": {"total": agg.rounds_total, "effective": agg.rounds_effective,
                   "empty": agg.rounds_empty, "complete": agg.rounds_complete,
                   "completeness": agg.completeness_ratio},
        "latency_ms": None if lat is None else
            {"n": lat.n, "mean": lat.mean_ms, "p50": lat.p50_ms, "p95": lat.p95_ms},
        "drift_ms_per_hour": agg.drift_ms_per_hour,
    }, indent=2, sort_keys=True))


def _read_csv(path: Path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def _render_figures(run_dir: Path) -> list[Path]:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    written: list[Path] = []

    minutes = _read_csv(run_dir / "per_minute.csv")
    if minutes:
        xs = [int(r["minute"]) for r in minutes]
        fig, ax = plt.subplots(figsize=(7, 3.5))
        for key in ("cfps", "offers", "confirms"):
            ax.plot(xs, [int(r[key]) for r in minutes], label=key, linewidth=1.2)
        ax.set_xlabel("minute")
        ax.set_ylabel("events")
        ax.legend(loc="upper right", fontsize=8)
        fig.tight_layout()
        target = run_dir / "per_minute.png"
        fig.savefig(target, dpi=110)
        plt.close(fig)
        written.append(target)

    agents = _read_csv(run_dir / "per_agent.csv")
    if agents:
        fig, ax = plt.subplots(figsize=(7, 3.5))
        names = [r["agent"] for r in agents]
        ax.bar(range(len(names)), [float(r["mean_ms"]) for r in agents], color="#4878a8")
        ax.set_xticks(range(len(names)))
        ax.set_xticklabels(names, rotation=45, ha="right", fontsize=7)
        ax.set_ylabel("mean offer latency (ms)")
        fig.tight_layout()
        target = run_dir / "latency_per_agent.png"
        fig.savefig(target, dpi=110)
        plt.close(fig)
        written.append(target)

    rounds = _read_csv(run_dir / "per_round.csv")
    timed = [r for r in rounds if r["mean_ms"]]
    if timed:
        fig, ax = plt.subplots(figsize=(7, 3.5))
        ax.plot(range(len(timed)), [float(r["mean_ms"]) for r in timed],
                linewidth=0.9, color="#a85448")
        ax.set_xlabel("effective round")
        ax.set_ylabel("mean latency (ms)")
        fig.tight_layout()
        target = run_dir / "latency_per_round.png"
        fig.savefig(target, dpi=110)
        plt.close(fig)
        written.append(target)

    return written


@main.command()
@click.argument("run_dir", type=click.Path())
def report(run_dir: str) -> None:
    """Print a table for a finished run and render figures next to its CSVs."""
    path = Path(run_dir)
    if not path.is_dir():
        _fail(EXIT_CONFIG, f"not a run directory: {path}")
    summary_file = path / "summary.json"
    if not summary_file.exists():
        _fail(EXIT_CONFIG, f"no summary.json under {path}; run `parley run` first")
    try:
        summary = json.loads(summary_file.read_text(encoding="utf-8"))
        figures = _render_figures(path)
    except Exception as exc:  # noqa: BLE001
        _fail(EXIT_RUNTIME, f"report failed: {exc}")

    counts = summary.get("counts", {})
    rounds = summary.get("rounds", {})
    lat = summary.get("latency_ms") or {}
    rows = [
        ("cfps sent", counts.get("cfp-sent", 0)),
        ("offers recorded", counts.get("offer-received", 0)),
        ("confirms", counts.get("confirm", 0)),
        ("accepts", counts.get("accept", 0)),
        ("rejects", counts.get("reject", 0)),
        ("rounds total", rounds.get("total", 0)),
        ("rounds effective", rounds.get("effective", 0)),
        ("rounds empty", rounds.get("empty", 0)),
        ("completeness", rounds.get("completeness")),
        ("latency mean ms", lat.get("mean")),
        ("latency p50 ms", lat.get("p50")),
        ("latency p95 ms", lat.get("p95")),
        ("drift ms/hour", summary.get("drift_ms_per_hour")),
    ]
    width = max(len(label) for label, _ in rows)
    for label, value in rows:
        shown = "-" if value is None else value
        click.echo(f"{label:<{width}}  {shown}")
    for fig in figures:
        click.echo(f"wrote {fig}")


@main.command("scenarios")
def scenarios_cmd() -> None:
    """List the bundled scenario names."""
    for name in bundled_scenarios():
        click.echo(name)


if __name__ == "__main__":
    main()
