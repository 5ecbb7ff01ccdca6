"""Aggregate verdict matrices into city-day metrics with uncertainty treatment.

Three metric families: displacement/missing rates with partial-identification
scenario bounds and CV-based operational bounds, origin-destination flows, and
return dynamics. Population scaling converts subscriber counts to
person-equivalents.
"""

from __future__ import annotations

import csv
import datetime as dt
import math
from collections import Counter, defaultdict
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy import stats

from .errors import (
    DisplaceKitError,
    EmptyWindow,
    InsufficientBaseline,
    ParseError,
    ZeroBaseline,
    ZeroDenominator,
)
from .detect import DayStatus, Method, Verdict
from .model import AdminHierarchy, AnalysisCalendar, DayType, Params
from .signals import DailySignal

CV_COUNTS_CSV_HEADER = ["date", "admin_code", "count"]
POPULATION_CSV_HEADER = ["admin_code", "population"]

# Below this many daily counts the CV estimate is flagged as unreliable.
CV_MIN_DAYS = 60
DISPERSION_MIN_DAYS = 10
DEFAULT_BOOTSTRAP_REPLICATES = 1000

_BOOTSTRAP_STREAM = 3


@dataclass(frozen=True)
class CvModel:
    """City-level day-to-day variability of active-subscriber counts.

    cv_disaster scales the baseline CV by the crisis adjustment factor; the
    standardized residuals of the count series feed the bootstrap's day-effect
    resampling.
    """

    city: str
    cv_baseline: float
    cv_disaster: float
    n_days: int
    standardized_residuals: tuple[float, ...] = ()
    warnings: tuple[str, ...] = ()


def build_cv_model(counts: Sequence[int], city: str, params: Params) -> CvModel:
    """CV of a daily active-subscriber count series (sample std over mean)."""
    n = len(counts)
    warnings = []
    if n < CV_MIN_DAYS:
        warnings.append(
            f"{city}: CV estimated from {n} daily counts (< {CV_MIN_DAYS}); may be unreliable"
        )
    if n == 0:
        return CvModel(city, 0.0, 0.0, 0, (), tuple(warnings))
    arr = np.asarray(counts, dtype=float)
    mean = float(arr.mean())
    sd = float(arr.std(ddof=1)) if n > 1 else 0.0
    cv = sd / mean if mean > 0 else 0.0
    residuals = tuple((arr - mean) / sd) if sd > 0 else tuple(0.0 for _ in counts)
    return CvModel(city, cv, cv * params.cv_multiplier, n, residuals, tuple(warnings))


def city_daily_counts(
    signals: Iterable[DailySignal],
    hierarchy: AdminHierarchy,
    days: Iterable[dt.date] | None = None,
) -> dict[str, dict[dt.date, int]]:
    """Distinct active subscribers observed per city per day."""
    wanted = set(days) if days is not None else None
    counts: dict[str, dict[dt.date, int]] = defaultdict(lambda: defaultdict(int))
    for sig in signals:
        if wanted is not None and sig.date not in wanted:
            continue
        if sig.observed is None:
            continue
        counts[hierarchy.city_of(sig.observed)][sig.date] += 1
    return {c: dict(v) for c, v in counts.items()}


def read_cv_counts_csv(path: str | Path) -> dict[str, dict[dt.date, int]]:
    """Load a separately supplied `date,admin_code,count` daily-count series."""
    path = Path(path)
    out: dict[str, dict[dt.date, int]] = defaultdict(dict)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:3]] != CV_COUNTS_CSV_HEADER:
            raise ParseError(f"{path}: expected header date,admin_code,count")
        for lineno, row in enumerate(reader, start=2):
            if not row or not any(c.strip() for c in row):
                continue
            try:
                day = dt.date.fromisoformat(row[0].strip())
                count = int(row[2])
            except (ValueError, IndexError):
                raise ParseError(f"{path}:{lineno}: bad cv-count row") from None
            out[row[1].strip()][day] = count
    return dict(out)


def read_population_csv(path: str | Path) -> dict[str, float]:
    path = Path(path)
    out: dict[str, float] = {}
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:2]] != POPULATION_CSV_HEADER:
            raise ParseError(f"{path}: expected header admin_code,population")
        for lineno, row in enumerate(reader, start=2):
            if not row or not any(c.strip() for c in row):
                continue
            try:
                out[row[0].strip()] = float(row[1])
            except (ValueError, IndexError):
                raise ParseError(f"{path}:{lineno}: bad population row") from None
    return out


@dataclass(frozen=True)
class CityDayMetrics:
    city: str
    date: dt.date
    method: Method
    n_baseline: int
    displaced: int
    missing: int
    rate: float
    missing_rate: float
    cv_lo: float | None
    cv_hi: float | None
    scen_lo: float
    scen_mid: float
    scen_hi: float
    holiday: bool

    @property
    def coverage(self) -> float:
        return 100.0 - self.missing_rate


def cv_bounds(rate: float, cv_model: CvModel, params: Params) -> tuple[float, float]:
    """Operational bounds rate * (1 +/- z * cv_disaster), lower clamped at zero."""
    lo = rate * (1.0 - params.z_factor * cv_model.cv_disaster)
    hi = rate * (1.0 + params.z_factor * cv_model.cv_disaster)
    return max(0.0, lo), hi


def daily_rates(
    statuses: Iterable[DayStatus],
    home_cities: Mapping[str, str],
    calendar: AnalysisCalendar,
    cv_models: Mapping[str, CvModel],
    params: Params,
    mid_fraction: float = 0.5,
    cities: Sequence[str] | None = None,
) -> tuple[list[CityDayMetrics], list[str]]:
    """One CityDayMetrics per (city, day, method), reconciled against the matrix.

    mid_fraction sets the assumed share of missing users that are displaced in
    the scenario midpoint (default half).
    """
    cohort = Counter(home_cities.values())
    tallies: dict[tuple[str, dt.date, Method], Counter] = defaultdict(Counter)
    for st in statuses:
        city = home_cities.get(st.user_id)
        if city is None:
            raise DisplaceKitError(f"status for user {st.user_id!r} outside the cohort")
        tallies[(city, st.date, st.method)][st.verdict] += 1
    wanted = sorted(cohort) if cities is None else list(cities)
    for city in wanted:
        if cohort.get(city, 0) == 0:
            raise ZeroBaseline(f"no baseline users with home city {city!r}")
    warnings: list[str] = []
    warned_cities: set[str] = set()
    out: list[CityDayMetrics] = []
    for (city, day, method) in sorted(tallies, key=lambda k: (k[0], k[1], k[2].value)):
        if city not in wanted:
            continue
        tally = tallies[(city, day, method)]
        n = cohort[city]
        d = tally[Verdict.DISPLACED]
        m = tally[Verdict.MISSING]
        if d + m + tally[Verdict.AT_EXPECTED] != n:
            raise DisplaceKitError(
                f"verdict counts for ({city}, {day}, {method.value}) do not reconcile with N={n}"
            )
        rate = 100.0 * d / n
        missing_rate = 100.0 * m / n
        model = cv_models.get(city)
        if model is None:
            lo = hi = None
            if city not in warned_cities:
                warned_cities.add(city)
                warnings.append(f"{city}: no CV model; cv bounds omitted")
        else:
            lo, hi = cv_bounds(rate, model, params)
        out.append(
            CityDayMetrics(
                city=city,
                date=day,
                method=method,
                n_baseline=n,
                displaced=d,
                missing=m,
                rate=rate,
                missing_rate=missing_rate,
                cv_lo=lo,
                cv_hi=hi,
                scen_lo=rate,
                scen_mid=rate + missing_rate * mid_fraction,
                scen_hi=rate + missing_rate,
                holiday=calendar.is_holiday(day),
            )
        )
    return out, warnings


def day_counts_for_city(
    statuses: Iterable[DayStatus],
    home_cities: Mapping[str, str],
    city: str,
    method: Method = Method.CONTEXT_AWARE,
) -> list[tuple[dt.date, int, int, int]]:
    """Per-day (date, displaced, missing, cohort) tuples for one origin city."""
    n = sum(1 for c in home_cities.values() if c == city)
    if n == 0:
        raise ZeroBaseline(f"no baseline users with home city {city!r}")
    displaced: Counter = Counter()
    missing: Counter = Counter()
    dates = set()
    for st in statuses:
        if st.method is not method or home_cities.get(st.user_id) != city:
            continue
        dates.add(st.date)
        if st.verdict is Verdict.DISPLACED:
            displaced[st.date] += 1
        elif st.verdict is Verdict.MISSING:
            missing[st.date] += 1
    return [(day, displaced[day], missing[day], n) for day in sorted(dates)]


# --- comparison interval methods -----------------------------------------


def _z_to_alpha(z: float) -> float:
    return 2.0 * float(stats.norm.sf(z))


def clopper_pearson(k: int, n: int, z: float) -> tuple[float, float]:
    """Exact binomial interval (as proportions) at the coverage implied by z."""
    alpha = _z_to_alpha(z)
    lo = 0.0 if k == 0 else float(stats.beta.ppf(alpha / 2.0, k, n - k + 1))
    hi = 1.0 if k == n else float(stats.beta.ppf(1.0 - alpha / 2.0, k + 1, n - k))
    return lo, hi


def wilson(k: int, n: int, z: float) -> tuple[float, float]:
    """Wilson score interval (as proportions)."""
    p = k / n
    denom = 1.0 + z * z / n
    center = (p + z * z / (2.0 * n)) / denom
    margin = (z / denom) * math.sqrt(p * (1.0 - p) / n + z * z / (4.0 * n * n))
    return max(0.0, center - margin), min(1.0, center + margin)


def dispersion_factor(baseline_day_counts: Sequence[tuple[int, int]]) -> float:
    """Variance inflation of baseline daily rates over the binomial expectation.

    Floored at 1: the adjustment never deflates below binomial.
    """
    if len(baseline_day_counts) < DISPERSION_MIN_DAYS:
        raise InsufficientBaseline(
            f"{len(baseline_day_counts)} baseline days; need >= {DISPERSION_MIN_DAYS} for dispersion"
        )
    rates = np.array([d / n for d, n in baseline_day_counts], dtype=float)
    binom_var = np.array([p * (1.0 - p) / n for (d, n), p in zip(baseline_day_counts, rates)])
    mean_binom = float(binom_var.mean())
    if mean_binom <= 0.0:
        return 1.0
    observed = float(rates.var(ddof=1))
    return max(1.0, observed / mean_binom)


def bootstrap_width(
    d: int,
    n: int,
    day: dt.date,
    params: Params,
    cv_model: CvModel | None,
    n_replicates: int = DEFAULT_BOOTSTRAP_REPLICATES,
) -> float:
    """Percentile-bootstrap width in percentage points for one day.

    Resampling users with replacement within the day marginalizes to a
    binomial draw on the displaced count. Each replicate is additionally
    scaled by a day-effect factor resampled from the standardized CV-window
    count residuals (scaled by the disaster CV), so the interval reflects the
    between-day variability that the purely within-day resample cannot see.
    Without a CV model the day effect is skipped.
    """
    rng = np.random.default_rng([params.rng_seed, _BOOTSTRAP_STREAM, day.toordinal()])
    d_star = rng.binomial(n, d / n, size=n_replicates)
    rates = d_star / n * 100.0
    if cv_model is not None and cv_model.standardized_residuals:
        eps = rng.choice(np.asarray(cv_model.standardized_residuals), size=n_replicates)
        rates = np.maximum(rates * (1.0 + cv_model.cv_disaster * eps), 0.0)
    lo, hi = np.percentile(rates, [2.5, 97.5])
    return float(hi - lo)


@dataclass(frozen=True)
class IntervalWidths:
    """Per-day interval widths, all in percentage points."""

    date: dt.date
    rate: float
    clopper_pearson: float
    wilson: float
    overdispersion: float
    bootstrap: float
    cv_based: float | None


@dataclass(frozen=True)
class IntervalTable:
    rows: tuple[IntervalWidths, ...]

    def average(self, field: str) -> float:
        values = [getattr(r, field) for r in self.rows if getattr(r, field) is not None]
        return sum(values) / len(values)


def comparison_intervals(
    day_counts: Sequence[tuple[dt.date, int, int, int]],
    baseline_day_counts: Sequence[tuple[int, int]],
    cv_model: CvModel | None,
    params: Params,
    n_replicates: int = DEFAULT_BOOTSTRAP_REPLICATES,
) -> IntervalTable:
    """Widths of the four interval methods per day, plus the CV bounds for reference."""
    phi = dispersion_factor(baseline_day_counts)
    z = params.z_factor
    rows = []
    for day, d, _m, n in day_counts:
        p = d / n
        cp_lo, cp_hi = clopper_pearson(d, n, z)
        wi_lo, wi_hi = wilson(d, n, z)
        over = 2.0 * z * math.sqrt(phi * p * (1.0 - p) / n) * 100.0
        boot = bootstrap_width(d, n, day, params, cv_model, n_replicates)
        if cv_model is not None:
            lo, hi = cv_bounds(100.0 * p, cv_model, params)
            cv_width = hi - lo
        else:
            cv_width = None
        rows.append(
            IntervalWidths(
                date=day,
                rate=100.0 * p,
                clopper_pearson=(cp_hi - cp_lo) * 100.0,
                wilson=(wi_hi - wi_lo) * 100.0,
                overdispersion=over,
                bootstrap=boot,
                cv_based=cv_width,
            )
        )
    return IntervalTable(tuple(rows))


# --- origin-destination flows ---------------------------------------------


@dataclass(frozen=True)
class FlowMatrix:
    """True displaced counts by (origin, destination) for one day.

    Counts are kept unsuppressed here so the origin marginal reconciles with
    the daily displaced count; the k-threshold is applied at emission.
    """

    date: dt.date
    entries: Mapping[tuple[str, str], int]
    suppression_k: int

    @property
    def suppressed_entries(self) -> int:
        return sum(1 for c in self.entries.values() if 0 < c < self.suppression_k)

    def origins(self) -> list[str]:
        return sorted({o for o, _ in self.entries})

    def origin_total(self, origin: str) -> int:
        return sum(c for (o, _), c in self.entries.items() if o == origin)

    def origin_rows(self, origin: str) -> list[tuple[str, int, float, bool]]:
        """(destination, count, share_pct, suppressed) rows, small cells folded into OTHER.

        Shares are computed over the full displaced total, including the
        suppressed cells, and the OTHER aggregate carries the suppressed flag.
        """
        cells = sorted(
            ((d, c) for (o, d), c in self.entries.items() if o == origin and c > 0),
            key=lambda x: (-x[1], x[0]),
        )
        total = sum(c for _, c in cells)
        if total == 0:
            return []
        rows = []
        other = 0
        n_hidden = 0
        for dest, count in cells:
            if count < self.suppression_k:
                other += count
                n_hidden += 1
            else:
                rows.append((dest, count, 100.0 * count / total, False))
        if other > 0:
            rows.append(("OTHER", other, 100.0 * other / total, True))
        return rows


def od_flows(
    statuses: Iterable[DayStatus],
    home_cities: Mapping[str, str],
    day: dt.date,
    params: Params,
) -> FlowMatrix:
    """Context-aware displaced users by (home city, observed city); missing excluded."""
    entries: Counter = Counter()
    for st in statuses:
        if st.method is not Method.CONTEXT_AWARE or st.date != day:
            continue
        if st.verdict is not Verdict.DISPLACED or st.observed_city is None:
            continue
        entries[(home_cities[st.user_id], st.observed_city)] += 1
    return FlowMatrix(day, dict(entries), params.suppression_k)


# --- return dynamics -------------------------------------------------------


class ReturnVariant(str, Enum):
    RETROSPECTIVE = "retrospective"
    RUNNING_MAX = "running_max"


@dataclass(frozen=True)
class ReturnSeries:
    """Confirmed-return dynamics for one origin city.

    Return events require observation at the expected location the day after a
    displaced day; missing never counts as returned, which keeps the rate
    conservative. The retrospective denominator is the peak of concurrent
    displacement plus cumulative returns over the whole window (a person-event
    quantity when users re-displace); the running-max variant uses only
    information available up to each day.
    """

    city: str
    dates: tuple[dt.date, ...]
    displaced: tuple[int, ...]
    returns: tuple[int, ...]
    max_displaced: int
    cumulative_rate: tuple[float, ...]
    variant: ReturnVariant


def return_series(
    statuses: Iterable[DayStatus],
    home_cities: Mapping[str, str],
    city: str,
    variant: ReturnVariant = ReturnVariant.RETROSPECTIVE,
) -> ReturnSeries:
    """Per-day return events and cumulative return rate for one origin city."""
    by_user: dict[str, dict[dt.date, Verdict]] = defaultdict(dict)
    dates: set[dt.date] = set()
    for st in statuses:
        if st.method is not Method.CONTEXT_AWARE or home_cities.get(st.user_id) != city:
            continue
        by_user[st.user_id][st.date] = st.verdict
        dates.add(st.date)
    days = sorted(dates)
    if not days:
        raise EmptyWindow(f"no observation days for city {city!r}")
    displaced = []
    returns = []
    for i, day in enumerate(days):
        d_count = 0
        r_count = 0
        for verdicts in by_user.values():
            today = verdicts.get(day)
            if today is Verdict.DISPLACED:
                d_count += 1
            if i > 0 and today is Verdict.AT_EXPECTED and verdicts.get(days[i - 1]) is Verdict.DISPLACED:
                r_count += 1
        displaced.append(d_count)
        returns.append(r_count)
    cum = 0
    cum_returns = []
    intensity = []  # D_t + cumulative returns through t
    for d_count, r_count in zip(displaced, returns):
        cum += r_count
        cum_returns.append(cum)
        intensity.append(d_count + cum)
    peak = max(intensity)
    rates = []
    if variant is ReturnVariant.RETROSPECTIVE:
        for cum in cum_returns:
            rates.append(100.0 * cum / peak if peak > 0 else 0.0)
    else:
        running = 0
        for val, cum in zip(intensity, cum_returns):
            running = max(running, val)
            rates.append(100.0 * cum / running if running > 0 else 0.0)
    return ReturnSeries(
        city=city,
        dates=tuple(days),
        displaced=tuple(displaced),
        returns=tuple(returns),
        max_displaced=peak,
        cumulative_rate=tuple(rates),
        variant=variant,
    )


# --- population scaling ----------------------------------------------------


@dataclass(frozen=True)
class PopulationScale:
    """Subscriber-to-population conversion for one city.

    The denominator is the average daily count of active baseline subscribers
    (weekday/weekend weighted 5:2), not the unique cohort size.
    """

    city: str
    population: float
    avg_daily_baseline: float
    scaling_factor: float


def population_scale(city: str, population: float, weekday_avg: float, weekend_avg: float) -> PopulationScale:
    avg = (weekday_avg * 5.0 + weekend_avg * 2.0) / 7.0
    if avg <= 0.0:
        raise ZeroDenominator(f"{city}: average daily baseline subscriber count is zero")
    return PopulationScale(city, population, avg, population / avg)


def baseline_daily_averages(
    daily_counts: Mapping[dt.date, int], calendar: AnalysisCalendar
) -> tuple[float, float]:
    """(weekday_avg, weekend_avg) active-subscriber counts over the baseline window.

    Holiday days are left out, consistent with their exclusion from the
    baseline elsewhere. Days without observations count as zero.
    """
    weekday = []
    weekend = []
    for day in calendar.baseline_days(include_holidays=False):
        count = daily_counts.get(day, 0)
        if calendar.day_type(day) is DayType.WEEKEND:
            weekend.append(count)
        else:
            weekday.append(count)
    weekday_avg = sum(weekday) / len(weekday) if weekday else 0.0
    weekend_avg = sum(weekend) / len(weekend) if weekend else 0.0
    return weekday_avg, weekend_avg


def scale_population(
    d_hat: float,
    scale: PopulationScale,
    cv_model: CvModel | None,
    params: Params,
) -> tuple[float, float | None, float | None]:
    """Person-equivalent estimate with CV bounds scaled linearly alongside it."""
    estimate = d_hat * scale.scaling_factor
    if cv_model is None:
        return estimate, None, None
    lo = max(0.0, d_hat * (1.0 - params.z_factor * cv_model.cv_disaster)) * scale.scaling_factor
    hi = d_hat * (1.0 + params.z_factor * cv_model.cv_disaster) * scale.scaling_factor
    return estimate, lo, hi
