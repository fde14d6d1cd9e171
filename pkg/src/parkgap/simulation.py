"""Discrete-event driver-side simulator used to score parking detectors.

Drivers arrive as a Poisson process and head for one parking block (a few
adjacent spots that a driver can survey at once). On arrival a driver asks
the detector how many spots in the block are free and applies the decision
tree of :func:`decide`:

* stay if the cruising cars fit in the reported free space;
* otherwise stay only if at least as fast as the slowest cruiser.

A staying driver parks in the first free spot of the block, or cruises until
a spot frees up. Freed spots go to the fastest cruiser of the block (ties to
the earlier arrival). Parked durations are normal draws truncated at zero.

Each decision is scored against the decision the same driver would take with
the true free count. After the last arrival the world keeps running for a
settle period so queued cruisers can still park; anyone still cruising after
that is stranded and a stay decision for them counts as wrong.
"""

from __future__ import annotations

import hashlib
import heapq
import json
import math
from bisect import bisect_right, insort
from dataclasses import asdict, dataclass, field
from typing import NamedTuple

import numpy as np

from .detectors import Detector
from .errors import AccountingError, ConfigurationError
from .metrics import DecisionCounts, DecisionRecord, DetectorTrace, accuracy_from_counts, detection_metrics
from .occupancy import FREE, OCCUPIED, OccupancyTimeline, StatusChange
from .stochastics import sample_truncated_normal

MINUTE = 60.0
DAY = 86400.0

STREAMS = ("arrivals", "speeds", "durations", "blocks", "phases")


@dataclass(frozen=True)
class SimConfig:
    """Scenario parameters. Times in seconds, rates per second, speeds in km/h."""

    spot_count: int = 100
    lam: float = 0.8 * 100 / 3600.0
    mu: float = 3600.0
    sigma: float = 900.0
    horizon: float = 7 * DAY
    ds: float = 15 * MINUTE
    speed_range: tuple[float, float] = (15.0, 45.0)
    block_size: int = 5
    seed: int = 0
    settle: float | None = None
    ia_window: float = 10 * MINUTE

    def __post_init__(self) -> None:
        object.__setattr__(self, "speed_range", tuple(float(v) for v in self.speed_range))
        problems = self.problems()
        if problems:
            raise ConfigurationError(problems)

    def problems(self) -> list[str]:
        out = []
        if not (isinstance(self.spot_count, (int, np.integer)) and self.spot_count >= 1):
            out.append(f"spot_count must be a positive integer, got {self.spot_count!r}")
        if not self.lam > 0:
            out.append(f"lam must be positive, got {self.lam}")
        if not (self.mu > 0 and self.sigma > 0):
            out.append(f"mu and sigma must be positive, got {self.mu}, {self.sigma}")
        if not self.horizon > 0:
            out.append(f"horizon must be positive, got {self.horizon}")
        if not self.ds > 0:
            out.append(f"ds must be positive, got {self.ds}")
        if len(self.speed_range) != 2 or not 0 < self.speed_range[0] <= self.speed_range[1]:
            out.append(f"speed_range must be (low, high) with 0 < low <= high, got {self.speed_range}")
        if not (isinstance(self.block_size, (int, np.integer)) and self.block_size >= 1):
            out.append(f"block_size must be a positive integer, got {self.block_size!r}")
        if self.settle is not None and self.settle < 0:
            out.append(f"settle must be non-negative, got {self.settle}")
        if not self.ia_window > 0:
            out.append(f"ia_window must be positive, got {self.ia_window}")
        if not 0 <= self.seed < 2**64:
            out.append(f"seed must fit in 64 bits, got {self.seed}")
        return out

    @property
    def rho(self) -> float:
        """Service intensity lam * mu / c; reported, never used in the dynamics."""
        return self.lam * self.mu / self.spot_count

    @property
    def settle_time(self) -> float:
        return self.mu + 4 * self.sigma if self.settle is None else self.settle

    @property
    def block_count(self) -> int:
        return -(-self.spot_count // self.block_size)

    def block_spots(self, b: int) -> range:
        return range(b * self.block_size, min((b + 1) * self.block_size, self.spot_count))

    @classmethod
    def for_rho(cls, rho: float, **kw) -> SimConfig:
        c = kw.get("spot_count", cls.spot_count)
        mu = kw.get("mu", cls.mu)
        return cls(lam=rho * c / mu, **kw)

    def digest(self) -> str:
        """Hash of every parameter except the seed."""
        d = asdict(self)
        d.pop("seed")
        blob = json.dumps(d, sort_keys=True, default=repr).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class DriverArrival:
    arrival_time: float
    speed: float
    block: int = 0
    decision: int | None = None
    parked: bool = False
    park_start: float | None = None
    park_end: float | None = None
    duration: float | None = None

    def __post_init__(self) -> None:
        if self.duration is not None and self.duration < 0:
            raise AccountingError("parked duration must be non-negative")
        if self.parked and not (self.park_start is not None and self.park_end is not None and self.park_end > self.park_start):
            raise AccountingError("a parked driver needs park_end > park_start")


class SimEvent(NamedTuple):
    """One line of the simulation event log; counters are after the event."""

    t: float
    kind: str  # arrive | park | leave | depart | strand
    driver: int
    spot: int
    block: int
    entered: int
    exited: int
    parked: int
    cruising: int


@dataclass
class MetricsReport:
    detector: str
    seed: int
    config_digest: str
    p_a: float
    da: float
    ia: float
    tp: int
    tn: int
    fp: int
    fn: int
    vacuous: bool = False
    stranded: int = 0
    predictions: int = 0
    clamp_events: int = 0
    rho: float = 0.0

    @property
    def decisions(self) -> int:
        return self.tp + self.tn + self.fp + self.fn


def cruising_count(entered: int, exited: int, parked_now: int) -> int:
    n = entered - exited - parked_now
    if n < 0 or exited < 0 or parked_now < 0:
        raise AccountingError(f"entered={entered} < exited={exited} + parked={parked_now}")
    return n


def decide(n_c: int, d_r: int, v_car: float, v_min: float | None) -> int:
    """Stay (1) or leave (0).

    ``v_min`` is the slowest cruiser's speed, ``None`` when nobody cruises.
    """
    if n_c <= d_r:
        return 1
    if v_min is None:
        return 1
    return 1 if v_car >= v_min else 0


def _streams(seed: int) -> dict[str, np.random.Generator]:
    children = np.random.SeedSequence(seed).spawn(len(STREAMS))
    return {name: np.random.default_rng(ss) for name, ss in zip(STREAMS, children)}


def _arrival_times(rng: np.random.Generator, lam: float, horizon: float) -> np.ndarray:
    if horizon <= 0:
        return np.empty(0)
    chunk = int(lam * horizon * 1.1) + 16
    parts = []
    t = 0.0
    while True:
        gaps = rng.exponential(1.0 / lam, chunk)
        times = t + np.cumsum(gaps)
        parts.append(times)
        t = float(times[-1])
        if t >= horizon:
            break
    out = np.concatenate(parts)
    return out[out < horizon]


def generate_arrivals(
    lam: float, horizon: float, seed: int, speed_range: tuple[float, float] = (15.0, 45.0)
) -> list[DriverArrival]:
    """Poisson arrivals on ``[0, horizon)`` with uniform speeds.

    Uses the same random streams as :func:`simulate`, so the drivers match
    those of a simulation with the same seed.
    """
    if not lam > 0:
        raise ConfigurationError(f"lam must be positive, got {lam}")
    rngs = _streams(seed)
    times = _arrival_times(rngs["arrivals"], lam, horizon)
    speeds = rngs["speeds"].uniform(speed_range[0], speed_range[1], times.size)
    return [DriverArrival(float(t), float(v)) for t, v in zip(times, speeds)]


class World:
    """Ground truth of one simulation: occupancy plus its change history."""

    def __init__(self, cfg: SimConfig) -> None:
        self.cfg = cfg
        self.spot_count = cfg.spot_count
        self.occupied = [False] * cfg.spot_count
        self._hist_t: list[list[float]] = [[] for _ in range(cfg.spot_count)]
        self._hist_s: list[list[int]] = [[] for _ in range(cfg.spot_count)]

    def set_status(self, s: int, t: float, occupied: bool) -> None:
        self.occupied[s] = occupied
        ht, hs = self._hist_t[s], self._hist_s[s]
        if ht and ht[-1] == t:
            # freed and re-taken at the same instant: no visible change
            ht.pop()
            hs.pop()
        else:
            ht.append(t)
            hs.append(OCCUPIED if occupied else FREE)

    def truth_status(self, s: int, t: float) -> int:
        k = bisect_right(self._hist_t[s], t)
        return FREE if k == 0 else self._hist_s[s][k - 1]

    def truth_statuses(self, s: int, times: np.ndarray) -> np.ndarray:
        hs = np.array([FREE] + self._hist_s[s], dtype=np.int64)
        return hs[np.searchsorted(np.asarray(self._hist_t[s]), times, side="right")]

    def timelines(self, horizon: float) -> dict[int, OccupancyTimeline]:
        out = {}
        for s in range(self.spot_count):
            changes = tuple(StatusChange(t, st) for t, st in zip(self._hist_t[s], self._hist_s[s]) if t <= horizon)
            out[s] = OccupancyTimeline(s, FREE, changes, horizon)
        return out


@dataclass
class SimOutcome:
    """Everything a run produced beyond the headline report."""

    drivers: list[DriverArrival] = field(default_factory=list)
    decisions: list[DecisionRecord] = field(default_factory=list)
    truth: dict[int, OccupancyTimeline] = field(default_factory=dict)
    trace: DetectorTrace | None = None


def simulate(
    cfg: SimConfig,
    detector: Detector,
    *,
    record_log: bool = True,
    outcome: SimOutcome | None = None,
) -> tuple[MetricsReport, list[SimEvent]]:
    """Run one replication and score ``detector``.

    Returns the metrics report and, when ``record_log`` is set, the event log.
    Pass an empty :class:`SimOutcome` to also receive per-driver records, the
    decision log, the truth timelines and the detector trace.
    """
    if not isinstance(cfg, SimConfig):
        raise ConfigurationError("simulate needs a SimConfig")
    rngs = _streams(cfg.seed)
    times = _arrival_times(rngs["arrivals"], cfg.lam, cfg.horizon)
    n = times.size
    speeds = rngs["speeds"].uniform(cfg.speed_range[0], cfg.speed_range[1], n)
    durations = sample_truncated_normal(rngs["durations"], cfg.mu, cfg.sigma, n)
    nb = cfg.block_count
    blocks = rngs["blocks"].integers(0, nb, n)
    phases = rngs["phases"].uniform(0.0, cfg.ds, nb)

    world = World(cfg)
    detector.reset(world)
    occ = world.occupied
    block_ranges = [cfg.block_spots(b) for b in range(nb)]

    decision = np.zeros(n, dtype=np.int8)
    informed = np.zeros(n, dtype=np.int8)
    parked_flag = np.zeros(n, dtype=bool)
    park_start = np.full(n, np.nan)
    spot_of = np.full(n, -1, dtype=np.int64)

    # cruisers per block kept sorted ascending by (speed, -arrival index):
    # the slowest is first, the fastest (earliest among equals) is last
    cruisers: list[list[tuple[float, int]]] = [[] for _ in range(nb)]
    free_in_block = [len(r) for r in block_ranges]
    entered = [0] * nb
    exited = [0] * nb
    parked = [0] * nb
    tot = {"entered": 0, "exited": 0, "parked": 0}
    log: list[SimEvent] = []

    def check(t: float, kind: str, driver: int, spot: int, b: int) -> None:
        nc = cruising_count(tot["entered"], tot["exited"], tot["parked"])
        if nc != sum(len(c) for c in cruisers) or tot["parked"] > cfg.spot_count:
            raise AccountingError(f"conservation broken at t={t} ({kind})")
        log.append(SimEvent(t, kind, driver, spot, b, tot["entered"], tot["exited"], tot["parked"], nc))

    departures: list[tuple[float, int, int]] = []  # (time, spot, driver)
    passes = [(float(phases[b]), b) for b in range(nb)]
    heapq.heapify(passes)
    pass_log: list[tuple[float, tuple[int, ...]]] = []

    def park(i: int, s: int, t: float, b: int) -> None:
        world.set_status(s, t, True)
        free_in_block[b] -= 1
        parked[b] += 1
        tot["parked"] += 1
        parked_flag[i] = True
        park_start[i] = t
        spot_of[i] = s
        heapq.heappush(departures, (t + float(durations[i]), s, i))
        if record_log:
            check(t, "park", i, s, b)

    def depart(t: float, s: int, i: int) -> None:
        b = s // cfg.block_size
        world.set_status(s, t, False)
        free_in_block[b] += 1
        parked[b] -= 1
        exited[b] += 1
        tot["parked"] -= 1
        tot["exited"] += 1
        if record_log:
            check(t, "depart", i, s, b)
        if cruisers[b]:
            _, neg_j = cruisers[b].pop()
            park(-neg_j, s, t, b)

    def advance(until: float, with_passes: bool) -> None:
        while True:
            td = departures[0][0] if departures else math.inf
            tp = passes[0][0] if with_passes else math.inf
            if min(td, tp) > until:
                return
            if td <= tp:
                t, s, i = heapq.heappop(departures)
                depart(t, s, i)
            else:
                t, b = heapq.heappop(passes)
                heapq.heappush(passes, (t + cfg.ds, b))
                spots = block_ranges[b]
                detector.observe(t, spots)
                pass_log.append((t, tuple(spots)))

    for i in range(n):
        t = float(times[i])
        advance(t, True)
        b = int(blocks[i])
        spots = block_ranges[b]
        q = cruising_count(entered[b], exited[b], parked[b])
        v = float(speeds[i])
        v_min = cruisers[b][0][0] if cruisers[b] else None
        d_r = detector.reported_free(spots, t)
        dm = decide(q, d_r, v, v_min)
        decision[i] = dm
        informed[i] = decide(q, free_in_block[b], v, v_min)
        entered[b] += 1
        tot["entered"] += 1
        if not dm:
            exited[b] += 1
            tot["exited"] += 1
            if record_log:
                check(t, "leave", i, -1, b)
            continue
        if free_in_block[b]:
            s = next(s for s in spots if not occ[s])
            park(i, s, t, b)
        else:
            insort(cruisers[b], (v, -i))
            if record_log:
                check(t, "arrive", i, -1, b)
    advance(cfg.horizon, True)
    advance(cfg.horizon + cfg.settle_time, False)

    # whoever still cruises now gives up
    stranded = 0
    end = cfg.horizon + cfg.settle_time
    for b in range(nb):
        while cruisers[b]:
            _, neg_i = cruisers[b].pop()
            stranded += 1
            exited[b] += 1
            tot["exited"] += 1
            if record_log:
                check(end, "strand", -neg_i, -1, b)

    tp_ = int(np.sum((decision == 1) & (informed == 1) & parked_flag))
    fp_ = int(np.sum(decision == 1)) - tp_
    fn_ = int(np.sum((decision == 0) & (informed == 1)))
    tn_ = int(np.sum((decision == 0) & (informed == 0)))
    counts = DecisionCounts(tp_, tn_, fp_, fn_)

    truth = world.timelines(cfg.horizon)
    trace = DetectorTrace(detector.trace(cfg.horizon), pass_log, cfg.horizon)
    da, ia = detection_metrics(trace, truth, cfg.ia_window)
    diag = detector.diagnostics
    report = MetricsReport(
        detector=detector.name,
        seed=cfg.seed,
        config_digest=cfg.digest(),
        p_a=accuracy_from_counts(counts),
        da=da,
        ia=ia,
        tp=tp_,
        tn=tn_,
        fp=fp_,
        fn=fn_,
        vacuous=counts.total == 0,
        stranded=stranded,
        predictions=diag.predictions,
        clamp_events=diag.clamp_events,
        rho=cfg.rho,
    )
    if outcome is not None:
        outcome.truth = truth
        outcome.trace = trace
        outcome.drivers = []
        outcome.decisions = []
        for i in range(n):
            ps = float(park_start[i]) if parked_flag[i] else None
            outcome.drivers.append(
                DriverArrival(
                    float(times[i]),
                    float(speeds[i]),
                    int(blocks[i]),
                    int(decision[i]),
                    bool(parked_flag[i]),
                    ps,
                    ps + float(durations[i]) if ps is not None else None,
                    float(durations[i]),
                )
            )
            outcome.decisions.append(
                DecisionRecord(i, float(times[i]), int(decision[i]), int(informed[i]), bool(parked_flag[i]))
            )
    return report, log
