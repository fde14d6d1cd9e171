"""Duration kernels for parked time (normal) and vacancy time (exponential).

Parked duration ``y1 ~ N(mu, sigma^2)`` and vacancy duration ``y2 ~ Exp(theta)``.
Past the 95% vacancy quantile the refill model switches to an inflated mean
``theta'`` obtained by re-inserting the long vacancy into the historical
dataset ``w`` times per elapsed detection period.
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

from .errors import EstimationError, ParameterError

WEEKDAY = "weekday"
WEEKEND = "weekend"

DEFAULT_W = 5
DEFAULT_DELTA = 30.0  # seconds
DEFAULT_MIN_SAMPLES = 30
REGIME_MASS = 0.95

_SQRT2 = math.sqrt(2.0)


@dataclass(frozen=True)
class NormalParams:
    mu: float
    sigma: float

    def __post_init__(self) -> None:
        if not (self.mu > 0 and self.sigma > 0):
            raise ParameterError(f"need mu > 0 and sigma > 0, got mu={self.mu}, sigma={self.sigma}")


@dataclass(frozen=True)
class ExponentialParams:
    theta: float

    def __post_init__(self) -> None:
        if not self.theta > 0:
            raise ParameterError(f"need theta > 0, got {self.theta}")


@dataclass(frozen=True, eq=False)
class VacancyDataset:
    """Multiset of observed vacancy durations (seconds).

    Only the running total and count matter to the estimators, so they are
    cached; ``samples`` keeps the raw values for brute-force checks.
    """

    samples: np.ndarray
    total: float = field(init=False)

    def __post_init__(self) -> None:
        arr = np.asarray(self.samples, dtype=float).ravel()
        if arr.size and (arr.min() < 0 or not np.all(np.isfinite(arr))):
            raise ParameterError("vacancy samples must be finite and non-negative")
        arr.setflags(write=False)
        object.__setattr__(self, "samples", arr)
        object.__setattr__(self, "total", float(math.fsum(arr)))

    @property
    def count(self) -> int:
        return int(self.samples.size)

    def mean(self) -> float:
        if self.count == 0:
            raise EstimationError("empty vacancy dataset has no mean")
        return self.total / self.count

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, VacancyDataset):
            return NotImplemented
        return np.array_equal(self.samples, other.samples)

    __hash__ = None  # type: ignore[assignment]


def norm_cdf(x: float) -> float:
    return 0.5 * math.erfc(-x / _SQRT2)


def normal_window_prob(p: NormalParams, center: float, delta: float) -> float:
    """Mass of N(mu, sigma^2) on ``[center - delta, center + delta]``."""
    if not delta > 0:
        raise ParameterError(f"window half-width must be positive, got {delta}")
    lo = (center - delta - p.mu) / p.sigma
    hi = (center + delta - p.mu) / p.sigma
    # upper tail through the survival function keeps precision there
    if lo > 0:
        mass = norm_cdf(-lo) - norm_cdf(-hi)
    else:
        mass = norm_cdf(hi) - norm_cdf(lo)
    return min(1.0, max(0.0, mass))


def vacancy_occupation_cdf(p: ExponentialParams, y2: float) -> float:
    """Probability that a spot vacant for ``y2`` seconds has been refilled."""
    if y2 < 0:
        raise ParameterError(f"vacancy duration must be non-negative, got {y2}")
    return -math.expm1(-y2 / p.theta)


def alpha_quantile(p: ExponentialParams, mass: float = REGIME_MASS) -> float:
    """Exponential quantile: the ``a`` with ``F2(a) = mass``."""
    if not 0 < mass < 1:
        raise ParameterError(f"mass must lie in (0, 1), got {mass}")
    return -p.theta * math.log1p(-mass)


def inflate_theta(
    d: VacancyDataset, observed_vacancy: float, w: int = DEFAULT_W
) -> tuple[ExponentialParams, VacancyDataset]:
    """Insert ``observed_vacancy`` into ``d`` ``w`` times and re-estimate theta."""
    if not (isinstance(w, (int, np.integer)) and w >= 2):
        raise ParameterError(f"w must be an integer >= 2, got {w!r}")
    if observed_vacancy < 0:
        raise ParameterError(f"observed vacancy must be non-negative, got {observed_vacancy}")
    augmented = VacancyDataset(np.concatenate([d.samples, np.full(int(w), float(observed_vacancy))]))
    return ExponentialParams(augmented.mean()), augmented


def inflation_applications(base: ExponentialParams, y2: float, period: float) -> int:
    """How many inflation rounds apply at vacancy ``y2`` (0 inside the regular regime)."""
    alpha = alpha_quantile(base)
    if y2 <= alpha:
        return 0
    return int((y2 - alpha) // period) + 1


def inflation_path(d: VacancyDataset, observed_vacancy: float, rounds: int, w: int = DEFAULT_W) -> list[float]:
    """``theta'`` after each of ``rounds`` successive inflations.

    Same arithmetic as repeated :func:`inflate_theta` calls, without
    materialising the augmented datasets.
    """
    if not (isinstance(w, (int, np.integer)) and w >= 2):
        raise ParameterError(f"w must be an integer >= 2, got {w!r}")
    if d.count == 0:
        raise EstimationError("cannot inflate an empty vacancy dataset")
    total, count = d.total, d.count
    out = []
    for _ in range(rounds):
        total += w * observed_vacancy
        count += w
        out.append(total / count)
    return out


def modified_refill_prob(
    d: VacancyDataset,
    base: ExponentialParams,
    y2: float,
    period: float,
    w: int = DEFAULT_W,
) -> float:
    """Refill probability after ``y2`` seconds of vacancy, with the abnormal-regime switch.

    Up to the 95% quantile this is the plain exponential CDF with ``base``.
    Beyond it, theta is inflated once per detection period elapsed past the
    quantile, each round inserting the current vacancy ``w`` times.
    """
    if y2 < 0:
        raise ParameterError(f"vacancy duration must be non-negative, got {y2}")
    if not period > 0:
        raise ParameterError(f"detection period must be positive, got {period}")
    rounds = inflation_applications(base, y2, period)
    if rounds == 0:
        return vacancy_occupation_cdf(base, y2)
    theta = inflation_path(d, y2, rounds, w)[-1]
    return min(1.0, max(0.0, -math.expm1(-y2 / theta)))


def sample_truncated_normal(rng: np.random.Generator, mu: float, sigma: float, size: int) -> np.ndarray:
    """Normal draws conditioned on being non-negative (rejection sampling)."""
    out = rng.normal(mu, sigma, size)
    bad = out < 0
    while bad.any():
        out[bad] = rng.normal(mu, sigma, int(bad.sum()))
        bad = out < 0
    return out


def truncated_normal_mean(mu: float, sigma: float) -> float:
    """Mean of N(mu, sigma^2) truncated to ``[0, inf)``."""
    a = -mu / sigma
    pdf = math.exp(-0.5 * a * a) / math.sqrt(2 * math.pi)
    return mu + sigma * pdf / norm_cdf(-a)


# -- context model -----------------------------------------------------------


@dataclass(frozen=True)
class ContextKey:
    hour_bucket: int
    day_class: str = WEEKDAY
    tags: tuple[tuple[str, str], ...] = ()

    def __post_init__(self) -> None:
        if not 0 <= self.hour_bucket <= 23:
            raise ParameterError(f"hour bucket must be 0-23, got {self.hour_bucket}")
        if self.day_class not in (WEEKDAY, WEEKEND):
            raise ParameterError(f"day class must be weekday or weekend, got {self.day_class!r}")
        tags = tuple(sorted((str(k), str(v)) for k, v in dict(self.tags).items()))
        if len(tags) != len(self.tags):
            raise ParameterError("context tag keys must be unique")
        object.__setattr__(self, "tags", tags)

    @classmethod
    def at(cls, t: float, tags: Mapping[str, str] | Iterable[tuple[str, str]] = ()) -> ContextKey:
        """Context of ``t`` in UTC epoch seconds (1970-01-01 was a Thursday)."""
        hour = int(t // 3600) % 24
        day = (int(t // 86400) + 3) % 7  # Monday = 0
        items = tuple(tags.items()) if isinstance(tags, Mapping) else tuple(tags)
        return cls(hour, WEEKEND if day >= 5 else WEEKDAY, items)

    def untagged(self) -> ContextKey:
        return ContextKey(self.hour_bucket, self.day_class)


@dataclass(frozen=True)
class ContextEntry:
    normal: NormalParams
    exponential: ExponentialParams
    vacancies: VacancyDataset


@dataclass
class ContextModel:
    """Per-context duration parameters with a global fallback."""

    fallback: ContextEntry
    entries: dict[ContextKey, ContextEntry] = field(default_factory=dict)

    def lookup(self, ctx: ContextKey | None) -> ContextEntry:
        if ctx is None:
            return self.fallback
        entry = self.entries.get(ctx)
        if entry is None and ctx.tags:
            entry = self.entries.get(ctx.untagged())
        return entry if entry is not None else self.fallback

    @classmethod
    def from_params(
        cls,
        mu: float,
        sigma: float,
        theta: float,
        vacancies: VacancyDataset | Iterable[float] | None = None,
    ) -> ContextModel:
        """Single global entry; ``vacancies`` defaults to one sample at ``theta``."""
        if vacancies is None:
            vacancies = VacancyDataset(np.array([theta]))
        elif not isinstance(vacancies, VacancyDataset):
            vacancies = VacancyDataset(np.asarray(list(vacancies), dtype=float))
        return cls(ContextEntry(NormalParams(mu, sigma), ExponentialParams(theta), vacancies))


def _entry(parked: list[float], vacant: list[float]) -> ContextEntry:
    arr = np.asarray(parked, dtype=float)
    sigma = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
    if not sigma > 0:
        raise EstimationError("parked durations need at least two distinct samples")
    vac = VacancyDataset(np.asarray(vacant, dtype=float))
    return ContextEntry(NormalParams(float(arr.mean()), sigma), ExponentialParams(vac.mean()), vac)


def estimate_context_model(events: Iterable, min_samples: int = DEFAULT_MIN_SAMPLES) -> ContextModel:
    """Fit a :class:`ContextModel` from status records.

    ``events`` are records with ``spot_id``, ``timestamp``, ``status`` and a
    ``context`` :class:`ContextKey` (see :class:`parkgap.dataio.EventRecord`).
    Each complete run between two status changes of a spot contributes one
    duration, attributed to the context at the start of the run. Negative or
    zero parked durations are discarded. Buckets with fewer than
    ``min_samples`` durations of either kind, or with no spread in parked
    durations, resolve to the global entry.
    """
    by_spot: dict[int, list] = defaultdict(list)
    for ev in events:
        by_spot[ev.spot_id].append(ev)

    parked: dict[ContextKey, list[float]] = defaultdict(list)
    vacant: dict[ContextKey, list[float]] = defaultdict(list)
    all_parked: list[float] = []
    all_vacant: list[float] = []
    for recs in by_spot.values():
        recs.sort(key=lambda r: r.timestamp)
        run_start = None
        for r in recs:
            if run_start is not None and r.status == run_start.status:
                continue
            if run_start is not None:
                dur = float(r.timestamp - run_start.timestamp)
                ctx = run_start.context
                if run_start.status == 0:
                    if dur > 0:
                        parked[ctx].append(dur)
                        all_parked.append(dur)
                else:
                    vacant[ctx].append(dur)
                    all_vacant.append(dur)
            run_start = r

    if not all_parked or not all_vacant:
        raise EstimationError("history needs at least one parked and one vacancy duration")
    model = ContextModel(_entry(all_parked, all_vacant))
    for ctx in set(parked) | set(vacant):
        p, v = parked.get(ctx, []), vacant.get(ctx, [])
        if len(p) >= min_samples and len(v) >= min_samples:
            try:
                model.entries[ctx] = _entry(p, v)
            except EstimationError:
                continue  # degenerate bucket (no spread): keep the fallback
    return model
