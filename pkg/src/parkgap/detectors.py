"""Detectors that tell arriving drivers how many spots are free.

Every detector answers :meth:`Detector.reported_free` for a block of spots at
a given instant, and afterwards produces the step function of what it
reported (:meth:`Detector.trace`) for DA/IA scoring.

``raw``
    Mobile crowdsensing: the status seen at the last sensor pass.
``dgra``
    Crowdsensing plus one gap prediction per pass, effective from its
    predicted instant until the next pass.
``oracle``
    Perfect, continuous knowledge of the world.
``fixed``
    Synthetic fixed-sensor baseline: the truth re-read every ``read_period``
    seconds, each read independently wrong with probability ``error_rate``.
``always-free`` / ``always-occupied``
    Constant answers, useful as metric bounds.
"""

from __future__ import annotations

from typing import TYPE_CHECKING, Sequence

import numpy as np

from .dgra import DetectionEvent, DgraConfig, Diagnostics, GapState, on_detection, predict
from .errors import ParameterError
from .metrics import timeline_from_steps
from .occupancy import FREE, OCCUPIED, OccupancyTimeline
from .stochastics import WEEKDAY, WEEKEND, ContextKey, ContextModel

if TYPE_CHECKING:
    from .simulation import World

_MASK64 = (1 << 64) - 1


def splitmix64(x: int) -> int:
    """One round of the SplitMix64 mixer on a 64-bit integer."""
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


def _read_key(seed: int, spot: int, k: int) -> int:
    return splitmix64(((seed & 0xFFFFFFFF) << 32) ^ (spot << 20) ^ k)


def read_error(seed: int, spot: int, k: int, rate: float) -> bool:
    """Whether read ``k`` of ``spot`` is corrupted; a pure function of its arguments."""
    return (_read_key(seed, spot, k) >> 11) * (1.0 / (1 << 53)) < rate


class Detector:
    """Interface shared by all detectors."""

    name = "detector"

    def reset(self, world: "World") -> None:
        self.world = world

    def observe(self, t: float, spots: range) -> None:
        """A sensor pass over ``spots`` at time ``t``."""

    def reported_free(self, spots: range, t: float) -> int:
        raise NotImplementedError

    def trace(self, horizon: float) -> dict[int, OccupancyTimeline]:
        raise NotImplementedError

    @property
    def diagnostics(self) -> Diagnostics:
        return Diagnostics()


class OracleDetector(Detector):
    name = "oracle"

    def reported_free(self, spots: range, t: float) -> int:
        occ = self.world.occupied
        return sum(1 for s in spots if not occ[s])

    def trace(self, horizon: float) -> dict[int, OccupancyTimeline]:
        return self.world.timelines(horizon)


class ConstantDetector(Detector):
    def __init__(self, status: int = FREE) -> None:
        if status not in (FREE, OCCUPIED):
            raise ParameterError(f"status must be 0 or 1, got {status!r}")
        self.status = status
        self.name = "always-free" if status == FREE else "always-occupied"

    def reported_free(self, spots: range, t: float) -> int:
        return len(spots) if self.status == FREE else 0

    def trace(self, horizon: float) -> dict[int, OccupancyTimeline]:
        return {s: OccupancyTimeline(s, self.status, (), horizon) for s in range(self.world.spot_count)}


class RawDetector(Detector):
    """Last detected status per spot; spots never passed are assumed free."""

    name = "raw"

    def reset(self, world: "World") -> None:
        super().reset(world)
        self.status = [FREE] * world.spot_count
        self.steps: list[list[tuple[float, int]]] = [[] for _ in range(world.spot_count)]

    def observe(self, t: float, spots: range) -> None:
        occ = self.world.occupied
        for s in spots:
            st = OCCUPIED if occ[s] else FREE
            if st != self.status[s]:
                self.status[s] = st
                self.steps[s].append((t, st))

    def reported_free(self, spots: range, t: float) -> int:
        status = self.status
        return sum(status[s] for s in spots)

    def trace(self, horizon: float) -> dict[int, OccupancyTimeline]:
        return {s: timeline_from_steps(s, self.steps[s], FREE, horizon) for s in range(self.world.spot_count)}


class DgraDetector(RawDetector):
    """Raw crowdsensing with one gap prediction inserted after every pass."""

    name = "dgra"

    def __init__(self, model: ContextModel, cfg: DgraConfig | None = None, period: float | None = None) -> None:
        self.model = model
        self.cfg = cfg or DgraConfig()
        self.period = period
        self._ctx_cache: dict[tuple[int, int], ContextKey] = {}

    def reset(self, world: "World") -> None:
        super().reset(world)
        if self.period is None:
            self.period = world.cfg.ds
        self.states: list[GapState | None] = [None] * world.spot_count
        self.pending: list[tuple[float, int] | None] = [None] * world.spot_count
        self._diag = Diagnostics()

    @property
    def diagnostics(self) -> Diagnostics:
        return self._diag

    def _ctx(self, t: float) -> ContextKey:
        key = (int(t // 3600) % 24, (int(t // 86400) + 3) % 7 >= 5)
        ctx = self._ctx_cache.get(key)
        if ctx is None:
            ctx = self._ctx_cache[key] = ContextKey(key[0], WEEKEND if key[1] else WEEKDAY)
        return ctx

    def _apply_pending(self, s: int, upto: float) -> None:
        pend = self.pending[s]
        if pend is None:
            return
        at, st = pend
        if at <= upto:
            if st != self.status[s]:
                self.status[s] = st
                self.steps[s].append((at, st))
            self.pending[s] = None

    def observe(self, t: float, spots: range) -> None:
        occ = self.world.occupied
        for s in spots:
            self._apply_pending(s, t)
            # a prediction not yet due is superseded by the fresh detection
            self.pending[s] = None
            st = OCCUPIED if occ[s] else FREE
            if st != self.status[s]:
                self.status[s] = st
                self.steps[s].append((t, st))
            state = on_detection(self.states[s], DetectionEvent(s, t, st), self.period)
            self.states[s] = state
            pred = predict(state, self.model, self._ctx(t), self.cfg, self._diag)
            if pred is not None:
                self.pending[s] = (pred.at, pred.predicted_status)

    def reported_free(self, spots: range, t: float) -> int:
        n = 0
        for s in spots:
            self._apply_pending(s, t)
            n += self.status[s]
        return n

    def trace(self, horizon: float) -> dict[int, OccupancyTimeline]:
        for s in range(self.world.spot_count):
            self._apply_pending(s, horizon)
        return super().trace(horizon)


class FixedSensorDetector(Detector):
    """Synthetic fixed in-ground sensors with independent per-read errors."""

    name = "fixed"

    def __init__(self, read_period: float = 60.0, error_rate: float = 0.02, seed: int = 0) -> None:
        if not read_period > 0:
            raise ParameterError(f"read period must be positive, got {read_period}")
        if not 0 <= error_rate <= 1:
            raise ParameterError(f"error rate must lie in [0, 1], got {error_rate}")
        self.read_period = float(read_period)
        self.error_rate = float(error_rate)
        self.seed = int(seed)

    def _read(self, s: int, k: int) -> int:
        st = self.world.truth_status(s, k * self.read_period)
        if self.error_rate and read_error(self.seed, s, k, self.error_rate):
            st = 1 - st
        return st

    def reported_free(self, spots: range, t: float) -> int:
        k = int(t // self.read_period)
        return sum(self._read(s, k) for s in spots)

    def trace(self, horizon: float) -> dict[int, OccupancyTimeline]:
        n_reads = int(horizon // self.read_period) + 1
        read_times = np.arange(n_reads) * self.read_period
        out = {}
        for s in range(self.world.spot_count):
            statuses = self.world.truth_statuses(s, read_times)
            if self.error_rate:
                flips = np.fromiter(
                    (read_error(self.seed, s, k, self.error_rate) for k in range(n_reads)), dtype=bool, count=n_reads
                )
                statuses = np.where(flips, 1 - statuses, statuses)
            initial = int(statuses[0])
            idx = np.flatnonzero(np.diff(statuses)) + 1
            steps = [(float(read_times[i]), int(statuses[i])) for i in idx]
            out[s] = timeline_from_steps(s, steps, initial, horizon)
        return out


DETECTOR_NAMES = ("raw", "dgra", "oracle", "fixed", "always-free", "always-occupied")


def make_detector(
    name: str,
    *,
    model: ContextModel | None = None,
    dgra: DgraConfig | None = None,
    seed: int = 0,
    read_period: float = 60.0,
    error_rate: float = 0.02,
) -> Detector:
    if name == "raw":
        return RawDetector()
    if name == "dgra":
        if model is None:
            raise ParameterError("the dgra detector needs a context model")
        return DgraDetector(model, dgra)
    if name == "oracle":
        return OracleDetector()
    if name == "fixed":
        return FixedSensorDetector(read_period, error_rate, seed)
    if name == "always-free":
        return ConstantDetector(FREE)
    if name == "always-occupied":
        return ConstantDetector(OCCUPIED)
    raise ParameterError(f"unknown detector {name!r}; choose from {', '.join(DETECTOR_NAMES)}")


def parse_detector_list(text: str | Sequence[str]) -> list[str]:
    names = [n.strip() for n in (text.split(",") if isinstance(text, str) else text) if n.strip()]
    bad = [n for n in names if n not in DETECTOR_NAMES]
    if bad:
        raise ParameterError(f"unknown detector(s): {', '.join(bad)}")
    return names
