"""Online gap predictor for mobile-sensed parking spots.

Between two sensor passes over a spot the predictor may insert one extra
status estimate. The occupied case (last detection ``0``) uses the normal
parked-duration kernel summed over the current occupied run; the vacant case
(last detection ``1``) uses the exponential refill kernel with the
abnormal-regime inflation from :mod:`parkgap.stochastics`.

Two readings of the occupied-case expression are supported through
``case1_reading``:

``"departure"`` (default)
    The expression is the chance that the car has left, so
    ``P(occupied) = 1 - expr``.
``"formula"``
    The expression is taken as ``P(occupied)`` itself.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from statistics import median
from typing import Callable, Iterable, Union

from .errors import CaseMismatchError, InvariantViolation, ParameterError
from .occupancy import FREE, OCCUPIED
from .stochastics import (
    DEFAULT_DELTA,
    DEFAULT_W,
    ContextKey,
    ContextModel,
    NormalParams,
    modified_refill_prob,
    normal_window_prob,
)

CASE1_READINGS = ("departure", "formula")


@dataclass(frozen=True)
class DetectionEvent:
    spot: int
    at: float
    status: int


@dataclass(frozen=True)
class PredictionEvent:
    spot: int
    at: float
    predicted_status: int
    confidence: float
    margin: float


@dataclass(frozen=True)
class GapState:
    """Per-spot run bookkeeping between detections."""

    spot: int
    last_detection_time: float
    last_status: int
    run_start: float
    run_length: int = 1
    inter_detection_durations: tuple[float, ...] = ()
    nominal_period: float | None = None

    def __post_init__(self) -> None:
        if self.run_length < 1:
            raise InvariantViolation("run length must be at least 1")
        if len(self.inter_detection_durations) != self.run_length - 1:
            raise InvariantViolation("need exactly run_length - 1 inter-detection durations")
        if self.run_start > self.last_detection_time:
            raise InvariantViolation("run start after last detection")


@dataclass(frozen=True)
class DgraConfig:
    g: float = 0.05
    delta: float = DEFAULT_DELTA
    w: int = DEFAULT_W
    grid_size: int = 1
    case1_reading: str = "departure"

    def __post_init__(self) -> None:
        if not 0 <= self.g < 1:
            raise ParameterError(f"g must lie in [0, 1), got {self.g}")
        if not self.delta > 0:
            raise ParameterError(f"delta must be positive, got {self.delta}")
        if not (isinstance(self.w, int) and self.w >= 2):
            raise ParameterError(f"w must be an integer >= 2, got {self.w!r}")
        if not (isinstance(self.grid_size, int) and self.grid_size >= 1):
            raise ParameterError(f"grid size must be a positive integer, got {self.grid_size!r}")
        if self.case1_reading not in CASE1_READINGS:
            raise ParameterError(f"case1_reading must be one of {CASE1_READINGS}")


@dataclass
class Diagnostics:
    clamp_events: int = 0
    predictions: int = 0


def on_detection(state: GapState | None, ev: DetectionEvent, period: float | None = None) -> GapState:
    """Fold a detection into the spot's gap state.

    A status flip (or a missing state) starts a fresh run at ``ev.at``.
    ``period`` sets the nominal detection period; when omitted the previous
    state's value is kept.
    """
    if state is None:
        return GapState(ev.spot, ev.at, ev.status, ev.at, 1, (), period)
    if ev.at <= state.last_detection_time:
        raise InvariantViolation(
            f"detection at {ev.at} does not follow previous detection at {state.last_detection_time}"
        )
    period = state.nominal_period if period is None else period
    if ev.status != state.last_status:
        return GapState(ev.spot, ev.at, ev.status, ev.at, 1, (), period)
    return GapState(
        ev.spot,
        ev.at,
        ev.status,
        state.run_start,
        state.run_length + 1,
        state.inter_detection_durations + (ev.at - state.last_detection_time,),
        period,
    )


def case1_expression(state: GapState, normal: NormalParams, z: float, delta: float) -> float:
    """Unclamped occupied-run expression at offset ``z`` into the gap.

    Window centres that come out negative (the ``k = 0`` summand) are clamped
    to zero.
    """
    m = state.run_length
    first = normal_window_prob(normal, max(0.0, (2 * m - 1) / 2 * z), delta)
    if m < 2:
        return first
    tail = _case1_tail(normal, delta, state.inter_detection_durations[: m - 1])
    return first + (1.0 - normal_window_prob(normal, z, delta)) * tail


@lru_cache(maxsize=4096)
def _case1_tail(normal: NormalParams, delta: float, durations: tuple[float, ...]) -> float:
    # regular schedules repeat the same duration tuples, so this caches well
    return sum(
        normal_window_prob(normal, max(0.0, (2 * k - 1) / 2 * tk), delta) for k, tk in enumerate(durations)
    )


def _clamp(value: float, diagnostics: Diagnostics | None) -> float:
    if 0.0 <= value <= 1.0:
        return value
    if diagnostics is not None:
        diagnostics.clamp_events += 1
    return min(1.0, max(0.0, value))


def prob_occupied_case1(
    state: GapState,
    model: ContextModel,
    ctx: ContextKey | None,
    z: float,
    delta: float = DEFAULT_DELTA,
    reading: str = "departure",
    diagnostics: Diagnostics | None = None,
) -> float:
    if state.last_status != OCCUPIED:
        raise CaseMismatchError("occupied-case probability needs a run of occupied detections")
    if not z > 0:
        raise ParameterError(f"offset must be positive, got {z}")
    expr = _clamp(case1_expression(state, model.lookup(ctx).normal, z, delta), diagnostics)
    if reading == "formula":
        return expr
    if reading == "departure":
        return 1.0 - expr
    raise ParameterError(f"unknown case1 reading {reading!r}")


def prob_free_case2(
    state: GapState,
    model: ContextModel,
    ctx: ContextKey | None,
    z: float,
    w: int = DEFAULT_W,
    period: float | None = None,
) -> float:
    """Probability the spot is still vacant ``z`` seconds after the last detection.

    The vacancy is measured from the first free detection of the run.
    """
    if state.last_status != FREE:
        raise CaseMismatchError("vacant-case probability needs a run of free detections")
    if not z > 0:
        raise ParameterError(f"offset must be positive, got {z}")
    period = state.nominal_period if period is None else period
    if period is None:
        raise ParameterError("nominal detection period unknown")
    entry = model.lookup(ctx)
    y2 = (state.last_detection_time - state.run_start) + z
    return 1.0 - modified_refill_prob(entry.vacancies, entry.exponential, y2, period, w)


def predict(
    state: GapState,
    model: ContextModel,
    ctx: ContextKey | None,
    cfg: DgraConfig,
    diagnostics: Diagnostics | None = None,
) -> PredictionEvent | None:
    """Latest confident status estimate inside the gap after ``state``.

    Candidate offsets are the ``K`` interior points of a uniform grid over one
    nominal period. A candidate is confident when one status beats the other
    by at least ``g``.
    """
    period = state.nominal_period
    if period is None or not period > 0:
        raise ParameterError("nominal detection period unknown")
    k = cfg.grid_size
    for j in range(k, 0, -1):
        z = j * period / (k + 1)
        if state.last_status == OCCUPIED:
            p0 = prob_occupied_case1(state, model, ctx, z, cfg.delta, cfg.case1_reading, diagnostics)
            p1 = 1.0 - p0
        else:
            p1 = prob_free_case2(state, model, ctx, z, cfg.w, period)
            p0 = 1.0 - p1
        if p0 - p1 >= cfg.g:
            status, conf = OCCUPIED, p0
        elif p1 - p0 >= cfg.g:
            status, conf = FREE, p1
        else:
            continue
        if diagnostics is not None:
            diagnostics.predictions += 1
        return PredictionEvent(state.spot, state.last_detection_time + z, status, conf, conf - (1.0 - conf))
    return None


ContextSchedule = Union[ContextKey, Callable[[float], ContextKey], None]


def _ctx_at(schedule: ContextSchedule, t: float) -> ContextKey | None:
    if schedule is None or isinstance(schedule, ContextKey):
        return schedule
    return schedule(t)


def fill_gaps(
    detections: Iterable[DetectionEvent],
    model: ContextModel,
    ctx: ContextSchedule,
    cfg: DgraConfig,
    period: float | None = None,
    diagnostics: Diagnostics | None = None,
) -> list[DetectionEvent | PredictionEvent]:
    """Merge at most one prediction into every gap of a single spot's detection stream.

    ``period`` defaults to the median inter-detection duration. A prediction
    that would land at or after the next detection is dropped.
    """
    dets = list(detections)
    for a, b in zip(dets, dets[1:]):
        if b.at <= a.at:
            raise InvariantViolation(f"detections out of order at {a.at} -> {b.at}")
        if b.spot != a.spot:
            raise InvariantViolation("fill_gaps handles one spot at a time")
    if period is None and len(dets) >= 2:
        period = median(b.at - a.at for a, b in zip(dets, dets[1:]))

    out: list[DetectionEvent | PredictionEvent] = []
    state = None
    for i, det in enumerate(dets):
        state = on_detection(state, det, period)
        out.append(det)
        if i + 1 == len(dets):
            break
        pred = predict(state, model, _ctx_at(ctx, det.at), cfg, diagnostics)
        if pred is not None and pred.at < dets[i + 1].at:
            out.append(pred)
    return out
