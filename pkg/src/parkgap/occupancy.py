"""Ground-truth occupancy timelines for individual parking spots.

Status coding follows the usual crowdsensing convention: ``0`` means the spot
is occupied, ``1`` means it is free. Time is measured in seconds since the
scenario epoch. A status change at instant ``t`` belongs to the new status, so
timelines are right-continuous.
"""

from __future__ import annotations

from bisect import bisect_right
from dataclasses import dataclass, field
from typing import Iterator

from .errors import InvariantViolation, OutOfRangeError

OCCUPIED = 0
FREE = 1

DEFAULT_MIN_FREE_RUN = 600.0  # seconds


def _check_status(status: int) -> None:
    if status not in (OCCUPIED, FREE):
        raise InvariantViolation(f"status must be 0 or 1, got {status!r}")


@dataclass(frozen=True)
class StatusChange:
    at: float
    new_status: int


@dataclass(frozen=True)
class OccupancyTimeline:
    """Alternating occupied/free runs of one spot over ``[0, horizon]``."""

    spot: int
    initial_status: int
    changes: tuple[StatusChange, ...] = ()
    horizon: float = 0.0
    _times: tuple[float, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        _check_status(self.initial_status)
        if self.spot < 0:
            raise InvariantViolation(f"spot id must be non-negative, got {self.spot}")
        changes = tuple(self.changes)
        object.__setattr__(self, "changes", changes)
        prev_t = None
        prev_s = self.initial_status
        for c in changes:
            _check_status(c.new_status)
            if c.at < 0 or c.at > self.horizon:
                raise InvariantViolation(
                    f"change at {c.at} outside [0, {self.horizon}] for spot {self.spot}"
                )
            if prev_t is not None and c.at <= prev_t:
                raise InvariantViolation(f"change times must strictly increase ({prev_t} -> {c.at})")
            if c.new_status == prev_s:
                raise InvariantViolation(f"repeated status {prev_s} at {c.at}; statuses must alternate")
            prev_t, prev_s = c.at, c.new_status
        object.__setattr__(self, "_times", tuple(c.at for c in changes))

    @property
    def final_status(self) -> int:
        return self.changes[-1].new_status if self.changes else self.initial_status

    def runs(self, start: float = 0.0, end: float | None = None) -> Iterator[tuple[float, float, int]]:
        """Yield maximal ``(run_start, run_end, status)`` runs, unclipped.

        Only runs overlapping ``[start, end)`` are yielded. The first run starts
        at 0 and the last one ends at the horizon.
        """
        end = self.horizon if end is None else end
        bounds = (0.0,) + self._times + (self.horizon,)
        status = self.initial_status
        for i in range(len(bounds) - 1):
            a, b = bounds[i], bounds[i + 1]
            if b > start and a < end:
                yield a, b, status
            elif a >= end:
                break
            status = 1 - status


def status_at(timeline: OccupancyTimeline, t: float) -> int:
    if t < 0 or t > timeline.horizon:
        raise OutOfRangeError(f"t={t} outside [0, {timeline.horizon}]")
    k = bisect_right(timeline._times, t)
    if k == 0:
        return timeline.initial_status
    return timeline.changes[k - 1].new_status


def apply_change(timeline: OccupancyTimeline, c: StatusChange) -> OccupancyTimeline:
    """Return a new timeline extended by ``c``; the horizon grows if needed."""
    if timeline.changes and c.at <= timeline.changes[-1].at:
        raise InvariantViolation(
            f"change at {c.at} does not follow last change at {timeline.changes[-1].at}"
        )
    if c.at < 0:
        raise InvariantViolation(f"change time {c.at} is negative")
    if c.new_status == timeline.final_status:
        raise InvariantViolation(f"status {c.new_status} repeats the current status")
    return OccupancyTimeline(
        spot=timeline.spot,
        initial_status=timeline.initial_status,
        changes=timeline.changes + (c,),
        horizon=max(timeline.horizon, c.at),
    )


@dataclass(frozen=True)
class WindowAccount:
    free_time: float
    occupied_time: float
    window: tuple[float, float]
    min_free_run: float


def account_window(
    timeline: OccupancyTimeline,
    start: float,
    end: float,
    min_free_run: float = DEFAULT_MIN_FREE_RUN,
) -> WindowAccount:
    """Free and occupied time inside ``[start, end]``.

    A free run qualifies for FT when its whole (unclipped) length reaches
    ``min_free_run``; only the part inside the window is counted.
    """
    if not (0 <= start < end <= timeline.horizon):
        raise OutOfRangeError(f"window [{start}, {end}] not inside [0, {timeline.horizon}]")
    ft = ot = 0.0
    for a, b, status in timeline.runs(start, end):
        clipped = min(b, end) - max(a, start)
        if status == OCCUPIED:
            ot += clipped
        elif b - a >= min_free_run:
            ft += clipped
    return WindowAccount(free_time=ft, occupied_time=ot, window=(start, end), min_free_run=min_free_run)
