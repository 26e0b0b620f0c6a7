"""Command-line interface: serve, watch, ingest, and offline analysis."""

from __future__ import annotations

import csv
import io
import json
import logging
import sys
from pathlib import Path

import click

from . import engine
from .analysis import GittConfig, dqdv as dqdv_compute, gitt as gitt_compute, \
    plot_series, PlotSource, find_peaks
from .errors import CyclebenchError
from .model import (
    ProjectRecord,
    ROLLUP_KEYS,
    canonical_json,
    cycle_stats_row,
    read_dataset_dir,
    write_dataset_dir,
)
from .parsers import ProfileRegistry, builtin_registry, detect_format, \
    parse_and_normalize
from .store import Store

log = logging.getLogger("cyclebench")


def _registry(profiles_dir: str | None) -> ProfileRegistry:
    registry = builtin_registry()
    if profiles_dir:
        extended = ProfileRegistry()
        for fmt, profile in registry.snapshot().items():
            extended.register(profile)
        extended.load_directory(profiles_dir)
        return extended
    return registry


data_dir_option = click.option(
    "--data-dir", envvar="CYCLEBENCH_DATA_DIR", required=True,
    type=click.Path(file_okay=False),
    help="store data directory (env CYCLEBENCH_DATA_DIR)")


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="debug logging")
def main(verbose: bool) -> None:
    """Battery cycler data workbench."""
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(asctime)s %(name)s %(levelname)s %(message)s")


@main.command()
@click.argument("file", type=click.Path(exists=True, dir_okay=False))
@click.option("--profile", "profile_id", default=None,
              help="format id; auto-detected when omitted")
@click.option("--profiles-dir", default=None, type=click.Path(file_okay=False),
              help="directory of extra profile JSON documents")
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False),
              help="output directory for the canonical dataset(s)")
def convert(file: str, profile_id: str | None, profiles_dir: str | None,
            out_dir: str) -> None:
    """Convert a vendor export into canonical dataset directories."""
    registry = _registry(profiles_dir)
    path = Path(file)
    data = path.read_bytes()
    if profile_id is None:
        profile_id = detect_format(path.name, data[:4096], registry)
        click.echo(f"detected format: {profile_id}")
    profile = registry.get(profile_id)
    datasets = parse_and_normalize(data, profile, file_name=path.name)
    base = Path(out_dir)
    for dataset in datasets:
        target = base if len(datasets) == 1 else base / f"ch{dataset.channel:02d}"
        write_dataset_dir(dataset, target)
        click.echo(f"channel {dataset.channel}: {len(dataset.points)} points "
                   f"-> {target}")


@main.command()
@click.argument("dataset_dir", type=click.Path(exists=True, file_okay=False))
@click.option("--json", "as_json", is_flag=True, help="JSON output")
@click.option("--csv", "as_csv", is_flag=True, help="CSV output")
def stats(dataset_dir: str, as_json: bool, as_csv: bool) -> None:
    """Per-cycle statistics and the cross-cycle rollup for a dataset."""
    dataset = read_dataset_dir(dataset_dir)
    _, _, cycle_stats, rollup, _ = engine.process_dataset(dataset)
    meta_json = rollup.to_meta_json()
    rows = [cycle_stats_row(cs, "", meta_json) for cs in cycle_stats]
    rollup_columns = {k: rollup.columns.get(k) for k in ROLLUP_KEYS}
    if as_json:
        click.echo(json.dumps(
            {"cycles": rows, "rollup": rollup_columns,
             "n_cycles": rollup.n_cycles, "single_cycle": rollup.single_cycle},
            indent=2))
        return
    if as_csv:
        buf = io.StringIO()
        columns = [c for c in rows[0] if c != "StatisticMetaData"]
        writer = csv.writer(buf)
        writer.writerow(columns)
        for row in rows:
            writer.writerow([row[c] for c in columns])
        writer.writerow([])
        for key, value in rollup_columns.items():
            writer.writerow([key, value])
        click.echo(buf.getvalue().rstrip("\r\n"))
        return
    for cs in cycle_stats:
        ce = f"{cs.coulombic_efficiency:.4f}" if cs.coulombic_efficiency else "-"
        click.echo(
            f"cycle {cs.cycle_index:4d}: charge {cs.charge_capacity:.6f} Ah, "
            f"discharge {cs.discharge_capacity:.6f} Ah, CE {ce}, "
            f"points {cs.point_count}")
    click.echo(f"rollup over {rollup.n_cycles} cycle(s):")
    for key in ("ChargeCapacityAverage", "DischargeCapacityAverage",
                "CoulombicEfficiencyAverage", "DischargeCapacityStdDev"):
        click.echo(f"  {key} = {rollup_columns[key]}")


@main.command("dqdv")
@click.argument("dataset_dir", type=click.Path(exists=True, file_okay=False))
@click.option("--cycle", type=int, required=True)
@click.option("--dv", type=float, default=0.005, show_default=True,
              help="voltage bin width (V)")
@click.option("--direction", type=click.Choice(["charge", "discharge"]),
              default="discharge", show_default=True)
@click.option("--smooth-window", type=int, default=0,
              help="centered moving-average window (bins); 0 = off")
@click.option("--peaks", is_flag=True, help="also list detected peaks")
def dqdv_cmd(dataset_dir: str, cycle: int, dv: float, direction: str,
             smooth_window: int, peaks: bool) -> None:
    """Differential capacity (dQ/dV) for one half-cycle."""
    dataset = read_dataset_dir(dataset_dir)
    derived, _ = engine.derive_fields(dataset)
    curve = dqdv_compute(derived, cycle, direction, dv=dv,
                         smooth_window=smooth_window)
    click.echo("voltage,dqdv")
    for v, y in zip(curve.voltage_bins, curve.dqdv):
        click.echo(f"{v},{y}")
    if peaks:
        for p in find_peaks(curve):
            click.echo(f"# peak at {p.position:.4f} V, intensity "
                       f"{p.intensity:.6f} Ah/V, prominence {p.prominence:.6f}",
                       err=True)


@main.command("gitt")
@click.argument("dataset_dir", type=click.Path(exists=True, file_okay=False))
@click.option("--molar-volume", type=float, required=True,
              help="n_m * V_m geometry numerator (cm^3)")
@click.option("--area", type=float, required=True,
              help="contact area (cm^2)")
@click.option("--rest-threshold", type=float, default=None,
              help="rest-current threshold (A); default automatic")
def gitt_cmd(dataset_dir: str, molar_volume: float, area: float,
             rest_threshold: float | None) -> None:
    """Pulse diffusivity analysis for a titration dataset."""
    dataset = read_dataset_dir(dataset_dir)
    cfg = GittConfig(molar_volume_term=molar_volume, contact_area=area,
                     rest_threshold=rest_threshold)
    steps = gitt_compute(dataset, cfg)
    click.echo("step_start_time,pulse_duration,delta_es,delta_et,diffusivity")
    for s in steps:
        click.echo(f"{s.step_start_time},{s.pulse_duration},{s.delta_es},"
                   f"{s.delta_et},{s.diffusivity}")


@main.command("plot")
@click.argument("project_ids", nargs=-1, required=True)
@data_dir_option
@click.option("--x", "x_var", required=True)
@click.option("--y1", "y1_var", required=True)
@click.option("--y2", "y2_var", default=None)
@click.option("--out", "out_path", required=True, type=click.Path(),
              help="output file (.svg or .csv)")
@click.option("--max-points", type=int, default=2000, show_default=True)
def plot_cmd(project_ids: tuple[str, ...], data_dir: str, x_var: str,
             y1_var: str, y2_var: str | None, out_path: str,
             max_points: int) -> None:
    """Render or export plot series for stored projects."""
    store = Store(data_dir)
    sources = []
    for pid in project_ids:
        rec = store.get_project(pid)
        dataset = None
        cycle_rows: list[dict] = []
        from .analysis import lookup_variable
        if lookup_variable(x_var).domain == "point":
            dataset = store.get_dataset(pid)
        else:
            cycle_rows = store.get_cycles(pid)
        sources.append(PlotSource(label=f"{rec.name} (ch {rec.channel})",
                                  cycle_rows=cycle_rows, dataset=dataset))
    assembled = plot_series(sources, x_var, y1_var, y2_var,
                            max_points=max_points)
    out = Path(out_path)
    if out.suffix.lower() == ".csv":
        buf = io.StringIO()
        writer = csv.writer(buf)
        header = ["x"]
        for s in assembled.series:
            header.append(f"{s.project_label}:{s.variable}")
        writer.writerow(header)
        length = max((len(s.x) for s in assembled.series), default=0)
        for i in range(length):
            row: list = []
            row.append(assembled.series[0].x[i]
                       if i < len(assembled.series[0].x) else "")
            for s in assembled.series:
                row.append(s.y[i] if i < len(s.y) else "")
            writer.writerow(row)
        out.write_text(buf.getvalue(), "utf-8")
    else:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
        fig, ax1 = plt.subplots(figsize=(8, 5))
        ax2 = None
        for s in assembled.series:
            axis = ax1
            if s.axis == 2:
                if ax2 is None:
                    ax2 = ax1.twinx()
                axis = ax2
            style = "-" if s.axis == 1 else "--"
            axis.plot(s.x, [y if y is not None else float("nan") for y in s.y],
                      style, label=f"{s.project_label} {s.variable}")
        ax1.set_xlabel(assembled.x_variable)
        ax1.set_ylabel(y1_var)
        if ax2 is not None:
            ax2.set_ylabel(y2_var)
        handles, labels = ax1.get_legend_handles_labels()
        if ax2 is not None:
            h2, l2 = ax2.get_legend_handles_labels()
            handles += h2
            labels += l2
        ax1.legend(handles, labels, fontsize=8)
        fig.tight_layout()
        fig.savefig(out)
        plt.close(fig)
    click.echo(f"wrote {out}")


@main.command("ingest")
@click.argument("files", nargs=-1, required=True,
                type=click.Path(exists=True, dir_okay=False))
@data_dir_option
@click.option("--name", "project_name", required=True,
              help="project name (required)")
@click.option("--profiles-dir", default=None, type=click.Path(file_okay=False))
@click.option("--user", "user_id", default="local")
def ingest_cmd(files: tuple[str, ...], data_dir: str, project_name: str,
               profiles_dir: str | None, user_id: str) -> None:
    """Ingest files directly into a local store (no HTTP)."""
    from .service.pipeline import ingest_bytes
    registry = _registry(profiles_dir)
    store = Store(data_dir)
    for file in files:
        path = Path(file)
        data = path.read_bytes()
        draft = ProjectRecord(id="", name=project_name)
        draft.file_name = path.name
        draft.file_size = len(data)
        draft.user_id = user_id
        project_id = store.create_project(draft)
        store.store_file_version(project_id, data)
        try:
            written = ingest_bytes(store, project_id, data, path.name,
                                   registry=registry)
        except CyclebenchError as exc:
            from .model import ProjectStatus
            store.update_project(project_id, status=ProjectStatus.FAILED,
                                 error=str(exc))
            click.echo(f"{path.name}: FAILED ({exc})", err=True)
            continue
        for pid in written:
            rec = store.get_project(pid)
            click.echo(f"{path.name}: project {pid} channel {rec.channel} "
                       f"({rec.num_cycles} cycles)")


@main.command("ls")
@data_dir_option
@click.option("--filter", "name_filter", default=None)
def ls_cmd(data_dir: str, name_filter: str | None) -> None:
    """List stored projects, grouped by name."""
    store = Store(data_dir)
    records = store.list_projects(name_filter=name_filter)
    current = None
    for rec in records:
        if rec.name != current:
            click.echo(f"Project: {rec.name}")
            current = rec.name
        click.echo(f"  {rec.file_name or '-':40s} ch {rec.channel:3d}  "
                   f"{rec.num_cycles:5d} cycles  {rec.status.value:10s} "
                   f"{rec.error}")


@main.command("serve")
@data_dir_option
@click.option("--bind", envvar="CYCLEBENCH_BIND_ADDR",
              default="127.0.0.1:8080", show_default=True)
@click.option("--shards", envvar="CYCLEBENCH_SHARDS", type=int, default=None)
@click.option("--workers", envvar="CYCLEBENCH_WORKERS", type=int, default=2,
              show_default=True, help="parse-job worker threads")
def serve_cmd(data_dir: str, bind: str, shards: int | None,
              workers: int) -> None:
    """Run the HTTP service."""
    import uvicorn
    from .service import create_app
    app = create_app(Path(data_dir), shard_count=shards, workers=workers,
                     run_startup_sweep=True)
    host, _, port = bind.partition(":")
    uvicorn.run(app, host=host or "127.0.0.1", port=int(port or 8080))


@main.command("watch")
@click.option("--dir", "directory", required=True,
              type=click.Path(exists=True, file_okay=False))
@click.option("--glob", "globs", multiple=True, default=("*",),
              show_default=True)
@click.option("--schedule", default="0 5 * * *", show_default=True,
              help="cron expression for scan times")
@click.option("--url", envvar="CYCLEBENCH_URL", required=True)
@click.option("--api-key", envvar="CYCLEBENCH_API_KEY", required=True)
@click.option("--ledger", "ledger_path", default=None, type=click.Path())
@click.option("--recursive", is_flag=True)
@click.option("--once", is_flag=True, help="single scan, then exit")
def watch_cmd(directory: str, globs: tuple[str, ...], schedule: str, url: str,
              api_key: str, ledger_path: str | None, recursive: bool,
              once: bool) -> None:
    """Watch a directory and upload new or changed files on schedule."""
    from .watcher import UploadClient, WatchConfig, Watcher
    cfg = WatchConfig(
        directory=Path(directory),
        globs=list(globs),
        schedule=schedule,
        ledger_path=Path(ledger_path) if ledger_path else None,
        recursive=recursive,
    )
    client = UploadClient(url, api_key)
    watcher = Watcher(cfg, client)
    try:
        watcher.run(once=once)
    finally:
        client.close()


@main.command("fsck")
@data_dir_option
def fsck_cmd(data_dir: str) -> None:
    """Check master/shard referential integrity."""
    store = Store(data_dir)
    issues = store.fsck()
    if not issues:
        click.echo("clean")
        return
    for issue in issues:
        click.echo(issue, err=True)
    sys.exit(1)


if __name__ == "__main__":
    main()
