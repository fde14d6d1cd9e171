"""Scoring of driver decisions and of detector traces against ground truth."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import InputError
from .occupancy import OCCUPIED, OccupancyTimeline, status_at

DEFAULT_IA_WINDOW = 600.0  # seconds


@dataclass(frozen=True)
class DecisionRecord:
    """One driver's stay/leave decision.

    ``informed`` is the decision the same driver would have taken with the
    true free-space count; ``parked`` is the realised outcome.
    """

    driver: int
    time: float
    decision: int
    informed: int
    parked: bool


@dataclass(frozen=True)
class DecisionCounts:
    tp: int = 0
    tn: int = 0
    fp: int = 0
    fn: int = 0

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn


def decision_counts(log: Iterable[DecisionRecord]) -> DecisionCounts:
    """Confusion counts for a decision log.

    A stay decision is a true positive only if the informed driver would also
    have stayed and the driver did park; a driver who stayed and never parked
    is a false positive. Leave decisions are judged against the informed one.
    """
    tp = tn = fp = fn = 0
    for r in log:
        if r.decision:
            if r.informed and r.parked:
                tp += 1
            else:
                fp += 1
        elif r.informed:
            fn += 1
        else:
            tn += 1
    return DecisionCounts(tp, tn, fp, fn)


def accuracy_from_counts(c: DecisionCounts) -> float:
    """(TP + TN) / total; 1.0 for an empty log."""
    if c.total == 0:
        return 1.0
    return (c.tp + c.tn) / c.total


def prediction_accuracy(log: Iterable[DecisionRecord] | DecisionCounts) -> float:
    counts = log if isinstance(log, DecisionCounts) else decision_counts(log)
    return accuracy_from_counts(counts)


# -- detection accuracy / information accuracy --------------------------------


@dataclass
class DetectorTrace:
    """What a detector reported, as a step function per spot.

    ``passes`` are the sensor-pass instants with the spots they covered; DA is
    evaluated there.
    """

    reported: dict[int, OccupancyTimeline]
    passes: list[tuple[float, tuple[int, ...]]]
    horizon: float


def _occupied_intervals(tl: OccupancyTimeline, horizon: float) -> list[tuple[float, float]]:
    return [(a, min(b, horizon)) for a, b, s in tl.runs(0.0, horizon) if s == OCCUPIED and a < horizon]


def _intersect(xs: list[tuple[float, float]], ys: list[tuple[float, float]]) -> list[tuple[float, float]]:
    out = []
    i = j = 0
    while i < len(xs) and j < len(ys):
        a = max(xs[i][0], ys[j][0])
        b = min(xs[i][1], ys[j][1])
        if b > a:
            out.append((a, b))
        if xs[i][1] < ys[j][1]:
            i += 1
        else:
            j += 1
    return out


def _measure_on_grid(intervals: list[tuple[float, float]], grid: np.ndarray) -> np.ndarray:
    """Cumulative length of disjoint sorted intervals up to each grid point."""
    if not intervals:
        return np.zeros_like(grid)
    pts = np.array(intervals, dtype=float).ravel()
    lengths = np.diff(np.array(intervals, dtype=float), axis=1).ravel()
    cum = np.zeros(pts.size)
    cum[1::2] = np.cumsum(lengths)
    cum[2::2] = cum[1:-1:2]
    return np.interp(grid, pts, cum, left=0.0, right=cum[-1])


def detection_metrics(
    trace: DetectorTrace,
    truth: Mapping[int, OccupancyTimeline],
    window: float = DEFAULT_IA_WINDOW,
) -> tuple[float, float]:
    """Detection accuracy (DA) and information accuracy (IA).

    DA: at each pass, occupied spots reported occupied over spots truly
    occupied; averaged over passes that saw at least one occupied spot.

    IA: for consecutive windows of ``window`` seconds, time reported occupied
    while truly occupied over truly occupied time (summed over spots);
    averaged over windows with any occupied time.

    Both default to 1.0 when nothing was occupied.
    """
    horizon = trace.horizon
    for spot, tl in truth.items():
        if abs(tl.horizon - horizon) > 1e-9:
            raise InputError(f"truth horizon {tl.horizon} for spot {spot} != trace horizon {horizon}")
    missing = set(truth) - set(trace.reported)
    if missing:
        raise InputError(f"trace lacks spots {sorted(missing)[:5]}")
    if not window > 0:
        raise InputError("IA window must be positive")

    ratios = []
    for t, spots in trace.passes:
        if t > horizon:
            continue
        occ = hit = 0
        for s in spots:
            if status_at(truth[s], t) == OCCUPIED:
                occ += 1
                if status_at(trace.reported[s], t) == OCCUPIED:
                    hit += 1
        if occ:
            ratios.append(hit / occ)
    da = float(np.mean(ratios)) if ratios else 1.0

    n_win = int(np.ceil(horizon / window)) if horizon > 0 else 0
    grid = np.minimum(np.arange(n_win + 1) * window, horizon)
    actual = np.zeros(n_win)
    overlap = np.zeros(n_win)
    for spot, tl in truth.items():
        occ_truth = _occupied_intervals(tl, horizon)
        occ_rep = _occupied_intervals(trace.reported[spot], horizon)
        actual += np.diff(_measure_on_grid(occ_truth, grid))
        overlap += np.diff(_measure_on_grid(_intersect(occ_truth, occ_rep), grid))
    valid = actual > 1e-9
    ia = float(np.mean(overlap[valid] / actual[valid])) if valid.any() else 1.0
    return da, min(1.0, ia)


def timeline_from_steps(spot: int, steps: Sequence[tuple[float, int]], initial: int, horizon: float) -> OccupancyTimeline:
    """Build a timeline from (time, status) samples, dropping repeats and samples past ``horizon``."""
    from .occupancy import StatusChange

    changes = []
    cur = initial
    last_t = -1.0
    for t, s in steps:
        if t > horizon:
            break
        if s != cur:
            if t <= last_t:
                continue
            changes.append(StatusChange(t, s))
            cur, last_t = s, t
    return OccupancyTimeline(spot, initial, tuple(changes), horizon)
