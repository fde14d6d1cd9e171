"""Experiment sweeps over the detection interval, fleet-size mapping and plot data.

A :class:`ScenarioSpec` fixes the world, the detectors, the detection
intervals and the replication seeds. Replication ``r`` uses seed
``spec.seed + r`` for every detector and interval, so comparisons between
cells are paired.
"""

from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Iterable, Sequence

import numpy as np
from scipy import stats

from .dataio import ResultRow, load_events, synth_world, timelines_to_events
from .detectors import DETECTOR_NAMES, make_detector
from .dgra import DgraConfig
from .errors import ConfigurationError, InputError, ParameterError
from .simulation import DAY, MINUTE, SimConfig, simulate
from .stochastics import ContextModel, estimate_context_model

CONFIDENCE = 0.95


# -- scenario specification ---------------------------------------------------


@dataclass(frozen=True)
class WorldSource:
    """Where the simulated world's parameters come from.

    ``synthetic`` uses the given kernels directly and fits the predictor's
    context model on a separately generated history. ``file`` fits both the
    context model and the world parameters on a trace.
    """

    kind: str = "synthetic"
    spots: int = 100
    mu_min: float = 60.0
    sigma_min: float = 15.0
    theta_min: float = 10.0
    rho: float = 0.8
    days: float = 7.0
    history_days: float = 14.0
    history_seed: int = 12345
    path: str | None = None


@dataclass(frozen=True)
class ScenarioSpec:
    name: str = "scenario"
    world: WorldSource = field(default_factory=WorldSource)
    detectors: tuple[str, ...] = ("raw", "dgra")
    ds_min: tuple[float, ...] = (15.0, 20.0, 25.0, 30.0, 35.0)
    replications: int = 20
    seed: int = 0
    dgra: DgraConfig = field(default_factory=DgraConfig)
    block_size: int = 5
    speed_range: tuple[float, float] = (15.0, 45.0)
    fixed_read_period_s: float = 60.0
    fixed_error_rate: float = 0.02
    route_km: float | None = None
    fleet_speed_kmh: float | None = None
    out: str | None = None

    def validate(self) -> None:
        """Raise :class:`ConfigurationError` listing every problem found."""
        p = []
        w = self.world
        if w.kind not in ("synthetic", "file"):
            p.append(f"world.kind must be 'synthetic' or 'file', got {w.kind!r}")
        if w.kind == "file" and not w.path:
            p.append("world.path is required for a file world")
        if w.kind == "synthetic":
            if not (isinstance(w.spots, int) and w.spots >= 1):
                p.append(f"world.spots must be a positive integer, got {w.spots!r}")
            for name in ("mu_min", "sigma_min", "theta_min", "rho", "history_days"):
                if not getattr(w, name) > 0:
                    p.append(f"world.{name} must be positive, got {getattr(w, name)}")
        if not w.days > 0:
            p.append(f"world.days must be positive, got {w.days}")
        if not self.detectors:
            p.append("at least one detector is required")
        bad = [d for d in self.detectors if d not in DETECTOR_NAMES]
        if bad:
            p.append(f"unknown detector(s) {bad}; choose from {list(DETECTOR_NAMES)}")
        if not self.ds_min:
            p.append("at least one detection interval is required")
        if any(not d > 0 for d in self.ds_min):
            p.append(f"detection intervals must be positive, got {list(self.ds_min)}")
        if not (isinstance(self.replications, int) and self.replications >= 1):
            p.append(f"replications must be a positive integer, got {self.replications!r}")
        if not (isinstance(self.seed, int) and self.seed >= 0):
            p.append(f"seed must be a non-negative integer, got {self.seed!r}")
        if not (isinstance(self.block_size, int) and self.block_size >= 1):
            p.append(f"block_size must be a positive integer, got {self.block_size!r}")
        if len(self.speed_range) != 2 or not 0 < self.speed_range[0] <= self.speed_range[1]:
            p.append(f"speed_range must be (low, high) with 0 < low <= high, got {self.speed_range}")
        if not self.fixed_read_period_s > 0:
            p.append("fixed_read_period_s must be positive")
        if not 0 <= self.fixed_error_rate <= 1:
            p.append("fixed_error_rate must lie in [0, 1]")
        if (self.route_km is None) != (self.fleet_speed_kmh is None):
            p.append("route_km and fleet_speed_kmh must be given together")
        elif self.route_km is not None and not (self.route_km > 0 and self.fleet_speed_kmh > 0):
            p.append("route_km and fleet_speed_kmh must be positive")
        if p:
            raise ConfigurationError(p)

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["detectors"] = list(self.detectors)
        d["ds_min"] = list(self.ds_min)
        d["speed_range"] = list(self.speed_range)
        return d


SCENARIO_A = ScenarioSpec(name="scenario-a")

_DGRA_KEYS = {f for f in DgraConfig.__dataclass_fields__}
_WORLD_KEYS = {f for f in WorldSource.__dataclass_fields__}
_SPEC_KEYS = {f for f in ScenarioSpec.__dataclass_fields__}


def spec_from_dict(data: dict[str, Any]) -> ScenarioSpec:
    """Build and validate a spec; unknown keys and bad values are all reported together."""
    if not isinstance(data, dict):
        raise ConfigurationError("scenario must be a mapping")
    problems = []
    unknown = set(data) - _SPEC_KEYS
    if unknown:
        problems.append(f"unknown scenario key(s) {sorted(unknown)}")
    kw = {k: v for k, v in data.items() if k in _SPEC_KEYS}

    world = kw.get("world", {})
    if isinstance(world, dict):
        bad = set(world) - _WORLD_KEYS
        if bad:
            problems.append(f"unknown world key(s) {sorted(bad)}")
        kw["world"] = WorldSource(**{k: v for k, v in world.items() if k in _WORLD_KEYS})
    elif not isinstance(world, WorldSource):
        problems.append("world must be a mapping")
        kw.pop("world")

    dg = kw.get("dgra", {})
    if isinstance(dg, dict):
        bad = set(dg) - _DGRA_KEYS
        if bad:
            problems.append(f"unknown dgra key(s) {sorted(bad)}")
        try:
            kw["dgra"] = DgraConfig(**{k: v for k, v in dg.items() if k in _DGRA_KEYS})
        except ParameterError as exc:
            problems.append(f"dgra: {exc}")
            kw.pop("dgra")
    elif not isinstance(dg, DgraConfig):
        problems.append("dgra must be a mapping")
        kw.pop("dgra")

    for key in ("detectors", "ds_min", "speed_range"):
        if key in kw:
            val = kw[key]
            if isinstance(val, str):
                val = [v for v in val.split(",") if v.strip()]
            if key != "detectors":
                try:
                    val = [float(v) for v in val]
                except (TypeError, ValueError):
                    problems.append(f"{key} must be a list of numbers")
                    kw.pop(key)
                    continue
            kw[key] = tuple(v.strip() if isinstance(v, str) else v for v in val)

    spec = ScenarioSpec(**kw)
    try:
        spec.validate()
    except ConfigurationError as exc:
        problems.extend(exc.problems)
    if problems:
        raise ConfigurationError(problems)
    return spec


def load_scenario(path: str | os.PathLike) -> ScenarioSpec:
    """Read a scenario from YAML or JSON."""
    import yaml

    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigurationError(f"cannot read scenario {path}: {exc}") from exc
    try:
        data = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    except (ValueError, yaml.YAMLError) as exc:
        raise ConfigurationError(f"cannot parse scenario {path}: {exc}") from exc
    return spec_from_dict(data or {})


# -- world preparation --------------------------------------------------------


@dataclass(frozen=True)
class PreparedWorld:
    base: SimConfig
    model: ContextModel


def prepare_world(spec: ScenarioSpec) -> PreparedWorld:
    """Simulation parameters and the predictor's fitted context model."""
    w = spec.world
    horizon = w.days * DAY
    if w.kind == "file":
        report = load_events(w.path)
        if not report.records:
            raise InputError(f"trace {w.path} has no usable records")
        model = estimate_context_model(report.records)
        spots = len({r.spot_id for r in report.records})
        span = max(r.timestamp for r in report.records) - min(r.timestamp for r in report.records)
        parkings = _count_parkings(report.records)
        if span <= 0 or parkings == 0:
            raise InputError(f"trace {w.path} is too short to estimate an arrival rate")
        lam = parkings / span
        mu, sigma = model.fallback.normal.mu, model.fallback.normal.sigma
    else:
        spots = w.spots
        mu, sigma, theta = w.mu_min * MINUTE, w.sigma_min * MINUTE, w.theta_min * MINUTE
        history = synth_world(spots, mu, sigma, theta, w.history_days * DAY, w.history_seed)
        model = estimate_context_model(timelines_to_events(history))
        lam = w.rho * spots / mu
    base = SimConfig(
        spot_count=spots,
        lam=lam,
        mu=mu,
        sigma=sigma,
        horizon=horizon,
        speed_range=tuple(spec.speed_range),
        block_size=spec.block_size,
    )
    return PreparedWorld(base, model)


def _count_parkings(records) -> int:
    n = 0
    prev: dict[int, int] = {}
    for r in records:
        if r.status == 0 and prev.get(r.spot_id) == 1:
            n += 1
        prev[r.spot_id] = r.status
    return n


# -- sweeps -------------------------------------------------------------------


@dataclass(frozen=True)
class Cell:
    detector: str
    ds_min: float
    replication: int


def _run_cell(args: tuple[ScenarioSpec, PreparedWorld, Cell]) -> ResultRow:
    spec, world, cell = args
    seed = spec.seed + cell.replication
    cfg = replace(world.base, ds=cell.ds_min * MINUTE, seed=seed)
    det = make_detector(
        cell.detector,
        model=world.model,
        dgra=spec.dgra,
        seed=seed,
        read_period=spec.fixed_read_period_s,
        error_rate=spec.fixed_error_rate,
    )
    rep, _ = simulate(cfg, det, record_log=False)
    fleet = None
    if spec.route_km is not None:
        fleet = fleet_for_interval(spec.route_km, spec.fleet_speed_kmh, cell.ds_min)
    return ResultRow(
        scenario=spec.name,
        detector=cell.detector,
        ds=cell.ds_min,
        seed=seed,
        p_a=rep.p_a,
        da=rep.da,
        ia=rep.ia,
        predictions=rep.predictions,
        clamp_events=rep.clamp_events,
        tp=rep.tp,
        tn=rep.tn,
        fp=rep.fp,
        fn=rep.fn,
        vacuous=rep.vacuous,
        stranded=rep.stranded,
        fleet=fleet,
        config_digest=rep.config_digest,
    )


def run_cells(
    spec: ScenarioSpec,
    cells: Sequence[Cell],
    workers: int = 1,
    world: PreparedWorld | None = None,
    progress: Callable[[ResultRow], None] | None = None,
) -> list[ResultRow]:
    world = world or prepare_world(spec)
    jobs = [(spec, world, c) for c in cells]
    rows: list[ResultRow] = []
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for row in pool.map(_run_cell, jobs, chunksize=1):
                rows.append(row)
                if progress:
                    progress(row)
    else:
        for job in jobs:
            row = _run_cell(job)
            rows.append(row)
            if progress:
                progress(row)
    return rows


@dataclass
class SummaryRow:
    detector: str
    ds: float
    n: int
    p_a_mean: float
    p_a_std: float
    da_mean: float
    ia_mean: float
    improvement: float | None = None


def _std(xs: Sequence[float]) -> float:
    return float(np.std(xs, ddof=1)) if len(xs) > 1 else 0.0


def summarize(rows: Sequence[ResultRow], baseline: str = "raw", treated: str = "dgra") -> list[SummaryRow]:
    """Mean and spread per (detector, D_s); ``treated`` rows carry the mean improvement over ``baseline``."""
    cells: dict[tuple[str, float], list[ResultRow]] = {}
    for r in rows:
        cells.setdefault((r.detector, r.ds), []).append(r)
    out = []
    for (det, ds), rs in sorted(cells.items(), key=lambda kv: (kv[0][0], kv[0][1])):
        pa = [r.p_a for r in rs]
        imp = None
        if det == treated and (baseline, ds) in cells:
            imp = float(np.mean(pa) - np.mean([r.p_a for r in cells[(baseline, ds)]]))
        out.append(
            SummaryRow(det, ds, len(rs), float(np.mean(pa)), _std(pa), float(np.mean([r.da for r in rs])), float(np.mean([r.ia for r in rs])), imp)
        )
    return out


def paired_values(rows: Sequence[ResultRow], detector: str, ds: float, metric: str = "p_a") -> dict[int, float]:
    return {r.seed: getattr(r, metric) for r in rows if r.detector == detector and r.ds == ds}


def one_sided_greater(diffs: Sequence[float], confidence: float = CONFIDENCE) -> tuple[bool, float]:
    """Paired one-sided t-test that the mean of ``diffs`` is positive.

    Returns (significant, p_value). With fewer than two values, or zero
    spread, the verdict falls back to the sign of the mean.
    """
    arr = np.asarray(diffs, dtype=float)
    if arr.size == 0:
        return False, 1.0
    if arr.size < 2 or np.all(arr == arr[0]):
        m = float(arr.mean())
        return m > 0, 0.0 if m > 0 else 1.0
    res = stats.ttest_1samp(arr, 0.0, alternative="greater")
    p = float(res.pvalue)
    return p < 1 - confidence, p


def _diffs(rows, det_a, ds_a, det_b, ds_b) -> list[float]:
    a = paired_values(rows, det_a, ds_a)
    b = paired_values(rows, det_b, ds_b)
    return [a[s] - b[s] for s in sorted(set(a) & set(b))]


@dataclass
class Verdict:
    holds: bool
    low_confidence: bool
    details: list[str]


@dataclass
class SweepResult:
    rows: list[ResultRow]
    summary: list[SummaryRow]
    verdict: Verdict | None = None


def improvement_verdict(rows: Sequence[ResultRow], ds_values: Sequence[float]) -> Verdict:
    """DGRA beats raw at every D_s, and the gain grows from the shortest to the longest D_s."""
    details = []
    ok = True
    for ds in ds_values:
        d = _diffs(rows, "dgra", ds, "raw", ds)
        sig, p = one_sided_greater(d)
        details.append(f"ds={ds:g}: improvement {np.mean(d) if d else float('nan'):+.5f} (p={p:.3g})")
        ok &= sig
    if len(ds_values) >= 2:
        lo, hi = min(ds_values), max(ds_values)
        a, b = _diffs(rows, "dgra", hi, "raw", hi), _diffs(rows, "dgra", lo, "raw", lo)
        d = [x - y for x, y in zip(a, b)]
        sig, p = one_sided_greater(d)
        details.append(f"improvement({hi:g}) - improvement({lo:g}) = {np.mean(d) if d else float('nan'):+.5f} (p={p:.3g})")
        ok &= sig
    n = len({r.seed for r in rows})
    return Verdict(bool(ok), n < 2, details)


def monotone_verdict(rows: Sequence[ResultRow], detector: str, ds_values: Sequence[float], require_significance: bool = True) -> Verdict:
    """Mean P_a does not increase as D_s grows.

    With ``require_significance`` every adjacent drop must be significant at
    95% (paired one-sided test); otherwise only the means must be ordered.
    """
    ds_sorted = sorted(ds_values)
    details = []
    ok = True
    all_sig = True
    for a, b in zip(ds_sorted, ds_sorted[1:]):
        d = _diffs(rows, detector, a, detector, b)
        mean = float(np.mean(d)) if d else float("nan")
        sig, p = one_sided_greater(d)
        details.append(f"{detector}: P_a({a:g}) - P_a({b:g}) = {mean:+.5f} (p={p:.3g})")
        all_sig &= sig
        ok &= (sig if require_significance else mean >= 0)
    n = len({r.seed for r in rows if r.detector == detector})
    return Verdict(bool(ok), n < 2 or not all_sig, details)


def run_interval_sweep(
    spec: ScenarioSpec,
    workers: int = 1,
    progress: Callable[[ResultRow], None] | None = None,
    world: PreparedWorld | None = None,
) -> SweepResult:
    """One row per (detector, D_s, replication) plus the per-cell summary."""
    spec.validate()
    cells = [Cell(d, ds, r) for d in spec.detectors for ds in spec.ds_min for r in range(spec.replications)]
    rows = run_cells(spec, cells, workers, world, progress)
    verdict = None
    if "raw" in spec.detectors and "dgra" in spec.detectors:
        verdict = improvement_verdict(rows, spec.ds_min)
    return SweepResult(rows, summarize(rows), verdict)


def run_ds_sensitivity(
    spec: ScenarioSpec,
    detector: str = "raw",
    workers: int = 1,
    progress: Callable[[ResultRow], None] | None = None,
    world: PreparedWorld | None = None,
) -> SweepResult:
    """Mean accuracy per D_s for one detector, with an ordering verdict.

    The verdict only needs the means to be ordered (single replications may
    invert); it is marked low-confidence with a single replication or when
    an adjacent drop is not significant.
    """
    spec = replace(spec, detectors=(detector,))
    spec.validate()
    cells = [Cell(detector, ds, r) for ds in spec.ds_min for r in range(spec.replications)]
    rows = run_cells(spec, cells, workers, world, progress)
    return SweepResult(rows, summarize(rows), monotone_verdict(rows, detector, spec.ds_min, require_significance=False))


# -- fleet mapping ------------------------------------------------------------


@dataclass(frozen=True)
class FleetMapping:
    route_km: float
    speed_kmh: float
    fleet: float
    interval_min: float


def fleet_to_interval(route_km: float, speed_kmh: float, fleet: float) -> FleetMapping:
    """Mean revisit interval when ``fleet`` vehicles share a route evenly."""
    for name, v in (("route_km", route_km), ("speed_kmh", speed_kmh), ("fleet", fleet)):
        if not v > 0:
            raise ParameterError(f"{name} must be positive, got {v}")
    return FleetMapping(route_km, speed_kmh, fleet, route_km / (speed_kmh * fleet) * 60.0)


def fleet_for_interval(route_km: float, speed_kmh: float, interval_min: float) -> float:
    """Fleet size (possibly fractional) giving a mean revisit interval of ``interval_min``."""
    for name, v in (("route_km", route_km), ("speed_kmh", speed_kmh), ("interval_min", interval_min)):
        if not v > 0:
            raise ParameterError(f"{name} must be positive, got {v}")
    return route_km * 60.0 / (speed_kmh * interval_min)


def sensors_needed(route_km: float, speed_kmh: float, interval_min: float) -> int:
    return math.ceil(fleet_for_interval(route_km, speed_kmh, interval_min) - 1e-9)


# -- plot data ----------------------------------------------------------------

X_AXES = ("ds", "fleet")
Y_AXES = ("p_a", "da", "ia")


@dataclass(frozen=True)
class PlotPoint:
    series: str
    x: float
    mean: float
    std: float
    n: int


def plot_points(rows: Iterable[ResultRow], x: str = "ds", y: str = "p_a") -> list[PlotPoint]:
    if x not in X_AXES:
        raise ParameterError(f"unknown x axis {x!r}; choose from {X_AXES}")
    if y not in Y_AXES:
        raise ParameterError(f"unknown y axis {y!r}; choose from {Y_AXES}")
    rows = list(rows)
    if not rows:
        raise InputError("no results to plot")
    groups: dict[tuple[str, float], list[float]] = {}
    for r in rows:
        xv = getattr(r, x)
        if xv is None:
            raise InputError(f"row for {r.detector} at ds={r.ds} has no {x} value")
        groups.setdefault((r.detector, float(xv)), []).append(getattr(r, y))
    return [
        PlotPoint(det, xv, float(np.mean(v)), _std(v), len(v))
        for (det, xv), v in sorted(groups.items())
    ]


def emit_plot_data(rows: Iterable[ResultRow], path: str | os.PathLike, x: str = "ds", y: str = "p_a") -> list[PlotPoint]:
    """Write one CSV series per detector: ``series,x,mean,std,n``."""
    pts = plot_points(rows, x, y)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["series", x, f"{y}_mean", f"{y}_std", "n"])
        for p in pts:
            w.writerow([p.series, f"{p.x:g}", f"{p.mean:.6f}", f"{p.std:.6f}", p.n])
    return pts


def write_summary(summary: Sequence[SummaryRow], path: str | os.PathLike) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["detector", "ds_min", "n", "p_a_mean", "p_a_std", "da_mean", "ia_mean", "improvement"])
        for s in summary:
            imp = "" if s.improvement is None else f"{s.improvement:.6f}"
            w.writerow([s.detector, f"{s.ds:g}", s.n, f"{s.p_a_mean:.6f}", f"{s.p_a_std:.6f}", f"{s.da_mean:.6f}", f"{s.ia_mean:.6f}", imp])


def format_summary(summary: Sequence[SummaryRow]) -> str:
    lines = [f"{'detector':<16}{'D_s':>6}{'n':>5}{'P_a':>10}{'sd':>9}{'DA':>8}{'IA':>8}{'gain':>10}"]
    for s in summary:
        imp = "" if s.improvement is None else f"{s.improvement:+.4f}"
        lines.append(
            f"{s.detector:<16}{s.ds:>6g}{s.n:>5}{s.p_a_mean:>10.4f}{s.p_a_std:>9.4f}{s.da_mean:>8.3f}{s.ia_mean:>8.3f}{imp:>10}"
        )
    return "\n".join(lines)
