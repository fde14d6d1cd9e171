"""Command-line entry point: ``parkgap <command> [options]``.

Commands
--------
sweep        accuracy against detection interval for several detectors
sensitivity  ordering of mean accuracy across detection intervals
fleet        fleet size <-> revisit interval conversion
plot-data    plot-ready CSV from a results file
synth        write a synthetic trace file
rerun        repeat a sweep from its manifest

Output goes to ``--out``, else ``$PARKGAP_OUT``, else ``./parkgap-out``.
Exit status: 0 when every verdict holds, 1 when a verdict fails or a run
errors, 2 for usage or configuration errors.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__
from .dataio import read_manifest, read_results, synth_world, timelines_to_events, write_events, write_manifest, write_results
from .dgra import CASE1_READINGS
from .errors import ConfigurationError, ParameterError, ParkGapError
from .experiments import (
    SCENARIO_A,
    ScenarioSpec,
    SweepResult,
    emit_plot_data,
    fleet_for_interval,
    fleet_to_interval,
    format_summary,
    load_scenario,
    run_ds_sensitivity,
    run_interval_sweep,
    spec_from_dict,
    write_summary,
)
from .simulation import DAY, MINUTE

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
OUT_ENV = "PARKGAP_OUT"


def _csv_floats(text: str) -> tuple[float, ...]:
    try:
        vals = tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


def _csv_names(text: str) -> tuple[str, ...]:
    return tuple(v.strip() for v in text.split(",") if v.strip())


def _add_scenario_flags(p: argparse.ArgumentParser, ds_default: str) -> None:
    p.add_argument("--scenario", help="scenario file (YAML or JSON); flags override its values")
    p.add_argument("--out", help=f"output directory (default: ${OUT_ENV} or ./parkgap-out)")
    p.add_argument("--seed", type=int, help="base seed; replication r uses seed + r")
    p.add_argument("--replications", type=int)
    p.add_argument("--ds", type=_csv_floats, help=f"detection intervals in minutes (default {ds_default})")
    p.add_argument("--g", type=float, help="confidence margin")
    p.add_argument("--w", type=int, help="dataset inflation weight")
    p.add_argument("--delta", type=float, help="window half-width in seconds")
    p.add_argument("--grid", type=int, help="candidate offsets per gap")
    p.add_argument("--case1-reading", choices=CASE1_READINGS)
    p.add_argument("--days", type=float, help="simulated days per replication")
    p.add_argument("--workers", type=int, default=1, help="parallel worker processes")
    p.add_argument("--quiet", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="parkgap", description="Detection-gap prediction experiments for mobile-sensed parking.")
    ap.add_argument("--version", action="version", version=f"parkgap {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    sw = sub.add_parser("sweep", help="accuracy against detection interval")
    _add_scenario_flags(sw, "15,20,25,30,35")
    sw.add_argument("--detectors", type=_csv_names, help="comma-separated: raw,dgra,oracle,fixed,always-free,always-occupied")
    sw.add_argument("--route-km", type=float, help="route length for the fleet column")
    sw.add_argument("--fleet-speed", type=float, help="sensing-vehicle speed (km/h) for the fleet column")

    se = sub.add_parser("sensitivity", help="ordering of mean accuracy across detection intervals")
    _add_scenario_flags(se, "15,35,50")
    se.add_argument("--detector", default="raw")

    fl = sub.add_parser("fleet", help="fleet size <-> revisit interval")
    fl.add_argument("--route-km", type=float, required=True)
    fl.add_argument("--speed", type=float, required=True, help="vehicle speed in km/h")
    grp = fl.add_mutually_exclusive_group(required=True)
    grp.add_argument("--fleet", type=float, help="number of sensing vehicles")
    grp.add_argument("--interval", type=float, help="target revisit interval in minutes")

    pd = sub.add_parser("plot-data", help="plot-ready CSV from results.jsonl")
    pd.add_argument("results")
    pd.add_argument("--x", default="ds")
    pd.add_argument("--y", default="p_a")
    pd.add_argument("--output", "-o", required=True)

    sy = sub.add_parser("synth", help="write a synthetic trace")
    sy.add_argument("--spots", type=int, default=100)
    sy.add_argument("--mu", type=float, default=60.0, help="mean parked minutes")
    sy.add_argument("--sigma", type=float, default=15.0, help="parked-time std in minutes")
    sy.add_argument("--theta", type=float, default=10.0, help="mean vacancy minutes")
    sy.add_argument("--days", type=float, default=7.0)
    sy.add_argument("--seed", type=int, default=0)
    sy.add_argument("--output", "-o", required=True)

    rr = sub.add_parser("rerun", help="repeat a sweep recorded in a manifest")
    rr.add_argument("manifest")
    rr.add_argument("--out", required=True)
    rr.add_argument("--workers", type=int, default=1)
    rr.add_argument("--quiet", action="store_true")
    return ap


def _spec_from_args(args: argparse.Namespace, base: ScenarioSpec) -> ScenarioSpec:
    spec = load_scenario(args.scenario) if args.scenario else base
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.replications is not None:
        changes["replications"] = args.replications
    if args.ds is not None:
        changes["ds_min"] = args.ds
    if getattr(args, "detectors", None):
        changes["detectors"] = args.detectors
    if args.days is not None:
        changes["world"] = replace(spec.world, days=args.days)
    if getattr(args, "route_km", None) is not None or getattr(args, "fleet_speed", None) is not None:
        changes["route_km"] = args.route_km
        changes["fleet_speed_kmh"] = args.fleet_speed
    dg = {}
    for flag, key in (("g", "g"), ("w", "w"), ("delta", "delta"), ("grid", "grid_size"), ("case1_reading", "case1_reading")):
        if getattr(args, flag) is not None:
            dg[key] = getattr(args, flag)
    if dg:
        changes["dgra"] = replace(spec.dgra, **dg)
    spec = replace(spec, **changes)
    if args.out:
        spec = replace(spec, out=args.out)
    elif not spec.out:
        spec = replace(spec, out=os.environ.get(OUT_ENV) or "parkgap-out")
    spec.validate()
    return spec


def _progress(quiet: bool):
    if quiet:
        return None

    def show(row) -> None:
        print(f"  {row.detector:<10} ds={row.ds:>5g} seed={row.seed:<6} P_a={row.p_a:.4f}", file=sys.stderr)

    return show


def _write_outputs(spec: ScenarioSpec, res: SweepResult, command: str) -> Path:
    out = Path(spec.out)
    out.mkdir(parents=True, exist_ok=True)
    write_results(res.rows, out / "results.jsonl", append=False)
    write_summary(res.summary, out / "summary.csv")
    for y in ("p_a", "da", "ia"):
        emit_plot_data(res.rows, out / f"plot_ds_{y}.csv", x="ds", y=y)
    if spec.route_km is not None:
        emit_plot_data(res.rows, out / "plot_fleet_p_a.csv", x="fleet", y="p_a")
    manifest = {
        "command": command,
        "version": __version__,
        "scenario": spec.to_dict(),
        "config_digests": sorted({r.config_digest for r in res.rows}),
        "seeds": sorted({r.seed for r in res.rows}),
        "rows": len(res.rows),
        "verdict": None
        if res.verdict is None
        else {"holds": res.verdict.holds, "low_confidence": res.verdict.low_confidence, "details": res.verdict.details},
    }
    write_manifest(out / "manifest.json", manifest)
    return out


def _report(res: SweepResult, out: Path, title: str) -> int:
    print(format_summary(res.summary))
    code = EXIT_OK
    if res.verdict is not None:
        status = "PASS" if res.verdict.holds else "FAIL"
        note = " (low confidence)" if res.verdict.low_confidence else ""
        print(f"{title}: {status}{note}")
        for line in res.verdict.details:
            print(f"  {line}")
        if not res.verdict.holds:
            code = EXIT_FAIL
    print(f"results written to {out}")
    return code


def _cmd_sweep(args) -> int:
    spec = _spec_from_args(args, SCENARIO_A)
    res = run_interval_sweep(spec, workers=args.workers, progress=_progress(args.quiet))
    out = _write_outputs(spec, res, "sweep")
    return _report(res, out, "dgra improvement verdict")


def _cmd_sensitivity(args) -> int:
    spec = _spec_from_args(args, replace(SCENARIO_A, ds_min=(15.0, 35.0, 50.0)))
    res = run_ds_sensitivity(spec, args.detector, workers=args.workers, progress=_progress(args.quiet))
    out = _write_outputs(replace(spec, detectors=(args.detector,)), res, "sensitivity")
    return _report(res, out, "ordering verdict")


def _cmd_fleet(args) -> int:
    if args.fleet is not None:
        m = fleet_to_interval(args.route_km, args.speed, args.fleet)
        print(f"route {m.route_km:g} km, {m.speed_kmh:g} km/h, fleet {m.fleet:g} -> interval {m.interval_min:.3f} min")
    else:
        f = fleet_for_interval(args.route_km, args.speed, args.interval)
        print(f"route {args.route_km:g} km, {args.speed:g} km/h, interval {args.interval:g} min -> fleet {f:.3f}")
    return EXIT_OK


def _cmd_plot_data(args) -> int:
    pts = emit_plot_data(read_results(args.results), args.output, x=args.x, y=args.y)
    print(f"{len(pts)} points in {len({p.series for p in pts})} series written to {args.output}")
    return EXIT_OK


def _cmd_synth(args) -> int:
    world = synth_world(args.spots, args.mu * MINUTE, args.sigma * MINUTE, args.theta * MINUTE, args.days * DAY, args.seed)
    records = timelines_to_events(world)
    write_events(records, args.output)
    print(f"{len(records)} records for {args.spots} spots written to {args.output}")
    return EXIT_OK


def _cmd_rerun(args) -> int:
    manifest = read_manifest(args.manifest)
    spec = replace(spec_from_dict(manifest["scenario"]), out=args.out)
    if manifest.get("command") == "sensitivity":
        res = run_ds_sensitivity(spec, spec.detectors[0], workers=args.workers, progress=_progress(args.quiet))
    else:
        res = run_interval_sweep(spec, workers=args.workers, progress=_progress(args.quiet))
    out = _write_outputs(spec, res, manifest.get("command", "sweep"))
    return _report(res, out, "verdict")


COMMANDS = {
    "sweep": _cmd_sweep,
    "sensitivity": _cmd_sensitivity,
    "fleet": _cmd_fleet,
    "plot-data": _cmd_plot_data,
    "synth": _cmd_synth,
    "rerun": _cmd_rerun,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (ConfigurationError, ParameterError, FileNotFoundError) as exc:
        print(f"parkgap: configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ParkGapError, ValueError, OSError) as exc:
        print(f"parkgap: error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
