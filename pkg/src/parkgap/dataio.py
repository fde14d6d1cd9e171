"""Trace ingestion, synthetic worlds and result persistence.

Trace files are CSV with header ``spot_id,timestamp,status``; timestamps are
integer epoch seconds and any further fields on a row are ``key=value``
context tags. Results are JSON lines, one :class:`ResultRow` per line.
"""

from __future__ import annotations

import csv
import io
import json
import os
from collections import defaultdict
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import InputError, TraceFormatError
from .occupancy import FREE, OCCUPIED, OccupancyTimeline, StatusChange
from .stochastics import ContextKey, sample_truncated_normal

TRACE_COLUMNS = ("spot_id", "timestamp", "status")


@dataclass(frozen=True)
class EventRecord:
    spot_id: int
    timestamp: int
    status: int
    tags: tuple[tuple[str, str], ...] = ()

    @property
    def context(self) -> ContextKey:
        return ContextKey.at(self.timestamp, self.tags)


@dataclass
class LoadReport:
    """Outcome of :func:`load_events`."""

    records: list[EventRecord]
    rejected: list[tuple[int, str]] = field(default_factory=list)
    duplicates: int = 0


def _parse_row(row: list[str]) -> EventRecord:
    if len(row) < 3:
        raise ValueError(f"expected at least 3 fields, got {len(row)}")
    try:
        spot = int(row[0])
    except ValueError:
        raise ValueError(f"bad spot_id {row[0]!r}") from None
    if spot < 0:
        raise ValueError(f"negative spot_id {spot}")
    try:
        ts = int(row[1])
    except ValueError:
        raise ValueError(f"unparseable timestamp {row[1]!r}") from None
    if row[2].strip() not in ("0", "1"):
        raise ValueError(f"status must be 0 or 1, got {row[2]!r}")
    tags = {}
    for extra in row[3:]:
        key, sep, value = extra.partition("=")
        if not sep or not key:
            raise ValueError(f"tag {extra!r} is not key=value")
        if key in tags:
            raise ValueError(f"duplicate tag {key!r}")
        tags[key] = value
    return EventRecord(spot, ts, int(row[2]), tuple(sorted(tags.items())))


def load_events(path: str | os.PathLike, strict: bool = False) -> LoadReport:
    """Read a trace file.

    Malformed rows are collected in ``rejected`` as ``(line_number, reason)``
    (or raise :class:`TraceFormatError` when ``strict``). Rows repeating a
    ``(spot_id, timestamp)`` pair keep the last occurrence and bump
    ``duplicates``. Records come back sorted by spot, then time.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise TraceFormatError(f"cannot read trace {path}: {exc}") from exc
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header is None:
        raise TraceFormatError(f"{path}: empty file, expected header {','.join(TRACE_COLUMNS)}")
    header = [h.strip() for h in header]
    if tuple(header) != TRACE_COLUMNS:
        unknown = [h for h in header if h not in TRACE_COLUMNS]
        detail = f"unknown column(s) {unknown}" if unknown else f"columns {header}"
        raise TraceFormatError(f"{path}: {detail}; expected {','.join(TRACE_COLUMNS)}")

    latest: dict[tuple[int, int], EventRecord] = {}
    rejected: list[tuple[int, str]] = []
    duplicates = 0
    for row in reader:
        line = reader.line_num
        if not row or all(not c.strip() for c in row):
            continue
        try:
            rec = _parse_row(row)
        except ValueError as exc:
            if strict:
                raise TraceFormatError(f"{path}:{line}: {exc}") from None
            rejected.append((line, str(exc)))
            continue
        key = (rec.spot_id, rec.timestamp)
        if key in latest:
            duplicates += 1
        latest[key] = rec
    records = sorted(latest.values(), key=lambda r: (r.spot_id, r.timestamp))
    return LoadReport(records, rejected, duplicates)


def write_events(records: Iterable[EventRecord], path: str | os.PathLike) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        for r in records:
            w.writerow([r.spot_id, r.timestamp, r.status, *(f"{k}={v}" for k, v in r.tags)])


@dataclass
class TimelineBuild:
    timelines: dict[int, OccupancyTimeline]
    merged: int = 0


def events_to_timelines(records: Iterable[EventRecord]) -> TimelineBuild:
    """One timeline per spot; repeated statuses are merged and counted.

    Every timeline starts at 0 with the status of its first record and ends
    at the largest timestamp seen in ``records``.
    """
    by_spot: dict[int, list[EventRecord]] = defaultdict(list)
    horizon = 0
    for r in records:
        by_spot[r.spot_id].append(r)
        horizon = max(horizon, r.timestamp)
    out = {}
    merged = 0
    for spot in sorted(by_spot):
        recs = by_spot[spot]
        cur = recs[0].status
        changes = []
        for r in recs[1:]:
            if r.status == cur:
                merged += 1
                continue
            changes.append(StatusChange(float(r.timestamp), r.status))
            cur = r.status
        out[spot] = OccupancyTimeline(spot, recs[0].status, tuple(changes), float(horizon))
    return TimelineBuild(out, merged)


def timelines_to_events(timelines: dict[int, OccupancyTimeline]) -> list[EventRecord]:
    """Inverse of :func:`events_to_timelines` (one record per run start)."""
    out = []
    for spot in sorted(timelines):
        tl = timelines[spot]
        out.append(EventRecord(spot, 0, tl.initial_status))
        out.extend(EventRecord(spot, int(c.at), c.new_status) for c in tl.changes)
    return out


def synth_world(
    spot_count: int,
    mu: float,
    sigma: float,
    theta: float,
    horizon: float,
    seed: int,
) -> dict[int, OccupancyTimeline]:
    """Alternating renewal world with integer-second run lengths.

    Each spot starts at time 0 at the beginning of a run whose status is
    drawn from the long-run occupied fraction; occupied runs are truncated
    normal, vacant runs exponential. Run lengths are rounded to whole seconds
    (at least one).
    """
    if spot_count < 0 or not (mu > 0 and sigma > 0 and theta > 0) or horizon < 0:
        raise InputError("synth_world needs spot_count >= 0, positive mu, sigma, theta and horizon >= 0")
    rng = np.random.default_rng(seed)
    p_occ = mu / (mu + theta)
    out = {}
    for spot in range(spot_count):
        status = OCCUPIED if rng.random() < p_occ else FREE
        initial = status
        t = 0
        changes = []
        while True:
            if status == OCCUPIED:
                d = float(sample_truncated_normal(rng, mu, sigma, 1)[0])
            else:
                d = float(rng.exponential(theta))
            t += max(1, int(round(d)))
            if t > horizon:
                break
            status = 1 - status
            changes.append(StatusChange(float(t), status))
        out[spot] = OccupancyTimeline(spot, initial, tuple(changes), float(horizon))
    return out


# -- results -----------------------------------------------------------------


@dataclass
class ResultRow:
    scenario: str
    detector: str
    ds: float
    seed: int
    p_a: float
    da: float
    ia: float
    predictions: int = 0
    clamp_events: int = 0
    tp: int = 0
    tn: int = 0
    fp: int = 0
    fn: int = 0
    vacuous: bool = False
    stranded: int = 0
    fleet: float | None = None
    config_digest: str = ""

    def __post_init__(self) -> None:
        for name in ("p_a", "da", "ia"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise InputError(f"{name}={v} outside [0, 1]")


RESULT_COLUMNS = tuple(f.name for f in fields(ResultRow))


def write_results(rows: Iterable[ResultRow], path: str | os.PathLike, append: bool = True) -> int:
    """Write rows as JSON lines; appends by default. Returns the row count written."""
    path = Path(path)
    n = 0
    try:
        with open(path, "a" if append else "w", encoding="utf-8") as fh:
            for r in rows:
                fh.write(json.dumps(asdict(r)) + "\n")
                n += 1
    except OSError as exc:
        raise OSError(f"cannot write results to {path}: {exc}") from exc
    return n


def read_results(path: str | os.PathLike) -> list[ResultRow]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"results file not found: {path}")
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                data = json.loads(line)
                rows.append(ResultRow(**data))
            except (ValueError, TypeError) as exc:
                raise InputError(f"{path}:{lineno}: bad result row ({exc})") from None
    return rows


def write_manifest(path: str | os.PathLike, manifest: dict) -> None:
    Path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def read_manifest(path: str | os.PathLike) -> dict:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"manifest not found: {path}")
    return json.loads(path.read_text(encoding="utf-8"))


def write_sim_log(events: Sequence, path: str | os.PathLike) -> None:
    """Write a simulation event log as JSON lines."""
    with open(path, "w", encoding="utf-8") as fh:
        for ev in events:
            fh.write(json.dumps(ev._asdict()) + "\n")
